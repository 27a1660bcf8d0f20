#include "daac/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "daac/errors.hpp"

namespace daac::eval {

using nlohmann::json;

namespace {

void check_binary(std::span<const int> labels, const char* what) {
  for (int y : labels) {
    if (y != 0 && y != 1) throw ContractError(std::string(what) + ": labels must be 0 or 1");
  }
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

json MetricsReport::to_json() const {
  return json{{"accuracy", accuracy},
              {"precision", precision},
              {"recall", recall},
              {"f1", f1},
              {"auroc", optional_json(auroc)},
              {"auprc", optional_json(auprc)},
              {"n_test", n_test},
              {"confusion", {{"tp", tp}, {"tn", tn}, {"fp", fp}, {"fn", fn}}},
              {"class_counts", {{"0", n_negative}, {"1", n_positive}}}};
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DimensionError("auroc: length mismatch");
  check_binary(labels, "auroc");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        rank_sum += mid;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ContractError("AUROC undefined: labels contain a single class");
  const double p = static_cast<double>(n_pos);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(n_neg));
}

double auprc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DimensionError("auprc: length mismatch");
  check_binary(labels, "auprc");
  const std::size_t n = scores.size();
  const auto total_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (total_pos == 0 || total_pos == n) throw ContractError("AUPRC undefined: labels contain a single class");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double ap = 0.0, prev_recall = 0.0;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      tp += labels[order[j]] == 1 ? 1 : 0;
      ++j;
    }
    seen = j;
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    const double recall = static_cast<double>(tp) / static_cast<double>(total_pos);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

MetricsReport classification_metrics(std::span<const int> labels, std::span<const int> predictions,
                                     std::span<const double> scores) {
  if (labels.size() != predictions.size() || labels.size() != scores.size()) {
    throw DimensionError("classification_metrics: length mismatch");
  }
  if (labels.empty()) throw ContractError("classification_metrics: empty input");
  check_binary(labels, "classification_metrics");
  check_binary(predictions, "classification_metrics");
  MetricsReport r;
  r.n_test = labels.size();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool y = labels[i] == 1, p = predictions[i] == 1;
    r.tp += y && p;
    r.tn += !y && !p;
    r.fp += !y && p;
    r.fn += y && !p;
  }
  r.n_positive = r.tp + r.fn;
  r.n_negative = r.tn + r.fp;
  r.accuracy = static_cast<double>(r.tp + r.tn) / static_cast<double>(r.n_test);

  auto ratio = [](std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); };
  struct PerClass {
    std::size_t tp, fp, fn;
  };
  // Class 1 and class 0 viewed as the positive class in turn.
  const std::array<PerClass, 2> classes{PerClass{r.tn, r.fn, r.fp}, PerClass{r.tp, r.fp, r.fn}};
  double p_sum = 0.0, r_sum = 0.0, f_sum = 0.0;
  int present = 0;
  for (const auto& c : classes) {
    if (c.tp + c.fp + c.fn == 0) continue;  // class absent from labels and predictions
    const double prec = ratio(c.tp, c.tp + c.fp);
    const double rec = ratio(c.tp, c.tp + c.fn);
    p_sum += prec;
    r_sum += rec;
    f_sum += (prec + rec) > 0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    ++present;
  }
  r.precision = p_sum / present;
  r.recall = r_sum / present;
  r.f1 = f_sum / present;
  if (r.n_positive > 0 && r.n_negative > 0) {
    r.auroc = auroc(scores, labels);
    r.auprc = auprc(scores, labels);
  }
  return r;
}

Summary summarize(std::span<const double> values) {
  Summary s;
  s.count = values.size();
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

json aggregate(const std::vector<MetricsReport>& reports) {
  json out = json::object();
  auto add = [&](const std::string& name, auto getter) {
    std::vector<double> vals;
    for (const auto& r : reports) {
      if (auto v = getter(r)) vals.push_back(*v);
    }
    const auto s = summarize(vals);
    out[name] = {{"mean", s.mean}, {"std", s.stddev}, {"n", s.count}};
  };
  add("accuracy", [](const MetricsReport& r) { return std::optional<double>(r.accuracy); });
  add("precision", [](const MetricsReport& r) { return std::optional<double>(r.precision); });
  add("recall", [](const MetricsReport& r) { return std::optional<double>(r.recall); });
  add("f1", [](const MetricsReport& r) { return std::optional<double>(r.f1); });
  add("auroc", [](const MetricsReport& r) { return r.auroc; });
  add("auprc", [](const MetricsReport& r) { return r.auprc; });
  return out;
}

std::vector<std::size_t> equal_frequency_bins(std::span<const double> feature, std::size_t bins) {
  if (bins == 0) throw ConfigError("equal_frequency_bins: bins must be >= 1");
  const std::size_t n = feature.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return feature[a] < feature[b]; });
  std::vector<std::size_t> out(n, 0);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && feature[order[j]] == feature[order[i]]) ++j;
    // A tie run takes the bin of its first rank.
    const std::size_t b = std::min(bins - 1, i * bins / n);
    for (std::size_t k = i; k < j; ++k) out[order[k]] = b;
    i = j;
  }
  return out;
}

double mutual_information(std::span<const double> feature, std::span<const int> labels, std::size_t bins) {
  if (feature.size() != labels.size()) throw DimensionError("mutual_information: length mismatch");
  if (feature.empty()) throw ContractError("mutual_information: empty input");
  const auto b = equal_frequency_bins(feature, bins);
  std::map<std::pair<std::size_t, int>, double> joint;
  std::map<std::size_t, double> pb;
  std::map<int, double> py;
  const double n = static_cast<double>(feature.size());
  for (std::size_t i = 0; i < feature.size(); ++i) {
    joint[{b[i], labels[i]}] += 1.0;
    pb[b[i]] += 1.0;
    py[labels[i]] += 1.0;
  }
  double mi = 0.0;
  for (const auto& [key, count] : joint) {
    const double pxy = count / n;
    mi += pxy * std::log(pxy / ((pb[key.first] / n) * (py[key.second] / n)));
  }
  return std::max(mi, 0.0);
}

std::vector<MiRow> mi_ranking(const data::Corpus& corpus, std::size_t bins) {
  std::size_t base = corpus.channels;
  if (corpus.provenance.contains("augmentation")) {
    base = corpus.provenance["augmentation"].value("base_channels", corpus.channels);
  }
  std::vector<int> labels;
  for (const auto& s : corpus.samples) labels.push_back(s.label);
  const std::size_t T = corpus.length;
  std::vector<MiRow> rows;
  for (std::size_t c = 0; c < corpus.channels; ++c) {
    std::vector<double> feature;
    for (const auto& s : corpus.samples) {
      double acc = 0.0;
      for (std::size_t t = 0; t < T; ++t) acc += s.values[c * T + t];
      feature.push_back(acc / static_cast<double>(T));
    }
    rows.push_back({c, mutual_information(feature, labels, bins), c >= base});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const MiRow& a, const MiRow& b) { return a.mi > b.mi; });
  return rows;
}

std::string mi_table_csv(const std::vector<MiRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "rank,channel,mi,discrepancy\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    os << i + 1 << ',' << rows[i].channel << ',' << rows[i].mi << ',' << (rows[i].discrepancy ? 1 : 0) << '\n';
  }
  return os.str();
}

ErrorHistogram error_histogram(std::span<const double> errors, std::span<const int> labels, std::size_t bins) {
  if (errors.size() != labels.size()) throw DimensionError("error_histogram: length mismatch");
  if (errors.empty() || bins == 0) throw ContractError("error_histogram: empty input");
  ErrorHistogram h;
  h.lo = *std::min_element(errors.begin(), errors.end());
  h.hi = *std::max_element(errors.begin(), errors.end());
  h.normal.assign(bins, 0);
  h.abnormal.assign(bins, 0);
  const double width = (h.hi - h.lo) / static_cast<double>(bins);
  for (std::size_t i = 0; i < errors.size(); ++i) {
    std::size_t b = 0;
    if (width > 0) b = std::min(bins - 1, static_cast<std::size_t>((errors[i] - h.lo) / width));
    (labels[i] == 0 ? h.normal : h.abnormal)[b]++;
  }
  return h;
}

std::string error_histogram_csv(const ErrorHistogram& h) {
  std::ostringstream os;
  os.precision(17);
  os << "bin,lower,upper,normal,abnormal\n";
  const std::size_t bins = h.normal.size();
  const double width = (h.hi - h.lo) / static_cast<double>(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    os << b << ',' << h.lo + width * static_cast<double>(b) << ',' << h.lo + width * static_cast<double>(b + 1)
       << ',' << h.normal[b] << ',' << h.abnormal[b] << '\n';
  }
  return os.str();
}

}  // namespace daac::eval
