#include "daac/pipeline.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "daac/binary_io.hpp"
#include "daac/errors.hpp"

namespace daac::pipe {

using ad::Tensor;

// ---- config ----------------------------------------------------------------

namespace {

std::string finetune_mode_name(FinetuneMode m) { return m == FinetuneMode::kPartial ? "PFT" : "FFT"; }

FinetuneMode parse_finetune_mode(const std::string& s) {
  if (s == "PFT" || s == "pft") return FinetuneMode::kPartial;
  if (s == "FFT" || s == "fft") return FinetuneMode::kFull;
  throw ConfigError("finetune.mode must be PFT or FFT, got '" + s + "'");
}

// Overlays `patch` onto `base`; every key of `patch` must already exist in `base`.
void merge_strict(json& base, const json& patch, const std::string& where) {
  if (!patch.is_object()) throw ConfigError("config section '" + where + "' must be an object");
  for (const auto& [k, v] : patch.items()) {
    const std::string path = where.empty() ? k : where + "." + k;
    if (!base.contains(k)) throw ConfigError("unknown config key '" + path + "'");
    if (base[k].is_object()) {
      merge_strict(base[k], v, path);
    } else {
      base[k] = v;
    }
  }
}

json without(json j, std::initializer_list<const char*> keys) {
  for (const char* k : keys) j.erase(k);
  return j;
}

template <typename T>
T get(const json& j, const char* key, const std::string& section) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config '" + section + "." + key + "': " + e.what());
  }
}

}  // namespace

void RunConfig::validate() const {
  if (seeds.empty()) throw ConfigError("seeds must be non-empty");
  if (!(finetune.label_fraction > 0.0 && finetune.label_fraction <= 1.0)) {
    throw ConfigError("finetune.label_fraction must be in (0, 1]");
  }
  if (!(tau > 0.0)) throw ConfigError("loss.tau must be positive");
  if (!(mask_min_frac > 0.0 && mask_min_frac <= mask_max_frac && mask_max_frac < 1.0)) {
    throw ConfigError("mask fractions must satisfy 0 < min_frac <= max_frac < 1");
  }
  if (pretrain.batch < 2 || finetune.batch < 1) throw ConfigError("batch sizes too small");
  if (!(pretrain.lr > 0.0 && finetune.lr > 0.0)) throw ConfigError("learning rates must be positive");
  if (pretrain.subjects_per_batch < 2) throw ConfigError("pretrain.subjects_per_batch must be >= 2");
  const double sum = split_ratios[0] + split_ratios[1] + split_ratios[2];
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split.ratios must sum to 1");
  for (double w : {weights.subject, weights.trial, weights.epoch, weights.temporal, weights.view}) {
    if (!(w >= 0.0)) throw ConfigError("loss weights must be non-negative");
  }
  enc::EncoderConfig e = encoder;
  e.validate();
  if (!(de.external_ratio > 0.0 && de.external_ratio <= 1.0)) throw ConfigError("de.external_ratio must be in (0, 1]");
}

json RunConfig::to_json() const {
  json de_json = without(de.to_json(), {"channels", "length", "seed"});
  de_json["enabled"] = de_enabled;
  de_json["mode"] = de::mode_name(de_mode);
  json lw = loss::to_json(weights);
  lw["tau"] = tau;
  lw["include_positive_in_denominator"] = loss_options.include_positive_in_denominator;
  return {{"version", kConfigVersion},
          {"seeds", seeds},
          {"data",
           {{"target", target_path},
            {"external", external_path},
            {"standardize", standardize},
            {"target_synth", data::to_json(target_synth)},
            {"external_synth", data::to_json(external_synth)}}},
          {"split", {{"mode", data::split_mode_name(split_mode)}, {"ratios", split_ratios}}},
          {"de", de_json},
          {"encoder", without(encoder.to_json(), {"input_dims"})},
          {"loss", lw},
          {"mask", {{"min_frac", mask_min_frac}, {"max_frac", mask_max_frac}}},
          {"pretrain",
           {{"epochs", pretrain.epochs},
            {"lr", pretrain.lr},
            {"batch", pretrain.batch},
            {"patience", pretrain.patience},
            {"subjects_per_batch", pretrain.subjects_per_batch}}},
          {"finetune",
           {{"mode", finetune_mode_name(finetune.mode)},
            {"label_fraction", finetune.label_fraction},
            {"epochs", finetune.epochs},
            {"lr", finetune.lr},
            {"batch", finetune.batch},
            {"patience", finetune.patience}}}};
}

json default_config_json() {
  RunConfig c;
  c.external_synth.normal_only = true;
  c.external_synth.seed = 1000;
  return c.to_json();
}

RunConfig RunConfig::from_json(const json& j) {
  json full = default_config_json();
  merge_strict(full, j, "");
  if (full.at("version") != kConfigVersion) {
    throw ConfigError("unsupported config version " + full.at("version").dump());
  }
  RunConfig c;
  c.seeds = get<std::vector<std::uint64_t>>(full, "seeds", "");
  const json& d = full.at("data");
  c.target_path = get<std::string>(d, "target", "data");
  c.external_path = get<std::string>(d, "external", "data");
  c.standardize = get<bool>(d, "standardize", "data");
  c.target_synth = data::synth_config_from_json(d.at("target_synth"));
  c.external_synth = data::synth_config_from_json(d.at("external_synth"));
  const json& s = full.at("split");
  c.split_mode = data::parse_split_mode(get<std::string>(s, "mode", "split"));
  c.split_ratios = get<std::array<double, 3>>(s, "ratios", "split");
  const json& dej = full.at("de");
  c.de_enabled = get<bool>(dej, "enabled", "de");
  c.de_mode = de::parse_mode(get<std::string>(dej, "mode", "de"));
  c.de = de::DeConfig::from_json(without(dej, {"enabled", "mode"}));
  c.encoder = enc::EncoderConfig::from_json(full.at("encoder"));
  const json& l = full.at("loss");
  c.weights = {get<double>(l, "lambda_s", "loss"), get<double>(l, "lambda_r", "loss"),
               get<double>(l, "lambda_e", "loss"), get<double>(l, "lambda_t", "loss"),
               get<double>(l, "lambda_v", "loss")};
  c.tau = get<double>(l, "tau", "loss");
  c.loss_options.include_positive_in_denominator = get<bool>(l, "include_positive_in_denominator", "loss");
  c.mask_min_frac = get<double>(full.at("mask"), "min_frac", "mask");
  c.mask_max_frac = get<double>(full.at("mask"), "max_frac", "mask");
  const json& p = full.at("pretrain");
  c.pretrain = {get<std::size_t>(p, "epochs", "pretrain"), get<double>(p, "lr", "pretrain"),
                get<std::size_t>(p, "batch", "pretrain"), get<std::size_t>(p, "patience", "pretrain"),
                get<std::size_t>(p, "subjects_per_batch", "pretrain")};
  const json& f = full.at("finetune");
  c.finetune = {parse_finetune_mode(get<std::string>(f, "mode", "finetune")),
                get<double>(f, "label_fraction", "finetune"),
                get<std::size_t>(f, "epochs", "finetune"),
                get<double>(f, "lr", "finetune"),
                get<std::size_t>(f, "batch", "finetune"),
                get<std::size_t>(f, "patience", "finetune")};
  c.validate();
  return c;
}

namespace {

void set_dotted(json& config, const std::string& key, const json& value) {
  json* node = &config;
  std::string path;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    path += (path.empty() ? "" : ".") + part;
    if (part.empty() || !node->is_object() || !node->contains(part)) {
      throw ConfigError("unknown config key '" + path + "'");
    }
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object()) throw ConfigError("override '" + key + "' names a section, not a value");
  *node = value;
}

}  // namespace

json apply_overrides(json config, const std::vector<std::string>& overrides) {
  // Fill in defaults first so that every valid key is addressable.
  json full = default_config_json();
  merge_strict(full, config, "");
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "' must look like key=value");
    const std::string key = o.substr(0, eq), text = o.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    set_dotted(full, key, value);
  }
  return full;
}

std::string config_hash(const json& config) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : config.dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

// ---- data ------------------------------------------------------------------

PreparedData prepare_data(const RunConfig& config, std::uint64_t seed) {
  PreparedData out;
  out.target = config.target_path.empty() ? data::generate_synthetic(config.target_synth)
                                          : data::load_corpus(config.target_path);
  const bool tagged = std::any_of(out.target.splits.begin(), out.target.splits.end(),
                                  [](data::Split s) { return s != data::Split::kNone; });
  if (!tagged) out.target = data::split_corpus(std::move(out.target), config.split_mode, config.split_ratios, seed);
  data::SynthConfig ext = config.external_synth;
  ext.normal_only = true;
  out.external = config.external_path.empty() ? data::generate_synthetic(ext) : data::load_corpus(config.external_path);
  if (out.external.channels != out.target.channels || out.external.length != out.target.length) {
    throw DimensionError("external corpus is [" + std::to_string(out.external.channels) + " x " +
                         std::to_string(out.external.length) + "] but target is [" +
                         std::to_string(out.target.channels) + " x " + std::to_string(out.target.length) + "]");
  }
  if (config.standardize) {
    out.target = data::standardize(std::move(out.target));
    out.external = data::standardize(std::move(out.external));
  }
  return out;
}

// ---- stage 1 ---------------------------------------------------------------

de::DeConfig de_config_for(const RunConfig& config, const data::Corpus& external, std::uint64_t seed) {
  de::DeConfig c = config.de;
  c.channels = external.channels;
  c.length = external.length;
  c.seed = seed;
  return c;
}

de::DeModel train_stage1(const RunConfig& config, const data::Corpus& external, std::uint64_t seed) {
  return de::train_de(external, de_config_for(config, external, seed));
}

data::Corpus augment_target(const RunConfig& config, const de::DeModel& model, const data::Corpus& target) {
  return de::augment_corpus(model.generator, target, config.de_mode, &model.clusters);
}

// ---- stage 2 ---------------------------------------------------------------

namespace {

Tensor batch_values(const data::Corpus& corpus, const std::vector<std::size_t>& idx) {
  const std::size_t per = corpus.channels * corpus.length;
  std::vector<double> v;
  v.reserve(idx.size() * per);
  for (std::size_t i : idx) v.insert(v.end(), corpus.samples[i].values.begin(), corpus.samples[i].values.end());
  return Tensor::from_data({idx.size(), corpus.channels, corpus.length}, std::move(v));
}

loss::BatchMeta batch_meta(const data::Corpus& corpus, const std::vector<std::size_t>& idx, double tau) {
  loss::BatchMeta meta;
  meta.tau = tau;
  for (std::size_t i : idx) {
    meta.subject_ids.push_back(corpus.samples[i].subject_id);
    meta.trial_ids.push_back(corpus.samples[i].trial_id);
  }
  return meta;
}

std::string describe_batch(const loss::BatchMeta& meta) {
  std::map<std::int32_t, std::set<std::int32_t>> by_subject;
  std::map<std::int32_t, std::size_t> counts;
  for (std::size_t i = 0; i < meta.subject_ids.size(); ++i) {
    by_subject[meta.subject_ids[i]].insert(meta.trial_ids[i]);
    counts[meta.subject_ids[i]]++;
  }
  std::ostringstream os;
  os << "batch of " << meta.subject_ids.size() << ":";
  for (const auto& [s, trials] : by_subject) {
    os << " subject " << s << " x" << counts[s] << " (trials";
    for (auto t : trials) os << ' ' << t;
    os << ")";
  }
  return os.str();
}

struct StepTensors {
  Tensor total;
  loss::LossBreakdown breakdown;
};

StepTensors contrastive_step(const RunConfig& config, const enc::Encoder& encoder, const data::Corpus& corpus,
                             const std::vector<std::size_t>& idx, nn::Rng& rng) {
  const std::size_t F = corpus.channels, T = corpus.length, m = idx.size();
  std::vector<double> a1, a2;
  a1.reserve(m * F * T);
  a2.reserve(m * F * T);
  for (std::size_t i : idx) {
    auto pair = data::mask_pair(corpus.samples[i], F, T, config.mask_min_frac, config.mask_max_frac, rng);
    a1.insert(a1.end(), pair.aug1.begin(), pair.aug1.end());
    a2.insert(a2.end(), pair.aug2.begin(), pair.aug2.end());
  }
  const auto meta = batch_meta(corpus, idx, config.tau);
  Tensor x = batch_values(corpus, idx);
  Tensor x1 = Tensor::from_data({m, F, T}, std::move(a1));
  Tensor x2 = Tensor::from_data({m, F, T}, std::move(a2));
  try {
    Tensor h = encoder.encode_series(x);
    Tensor h1 = encoder.encode_series(x1);
    Tensor h2 = encoder.encode_series(x2);
    Tensor g1 = encoder.encode_views(h1);
    Tensor g2 = encoder.encode_views(h2);
    auto terms = loss::compute_terms(h, h1, h2, g1, g2, meta, config.loss_options);
    StepTensors out;
    out.total = loss::weighted_total(terms, config.weights, &out.breakdown);
    return out;
  } catch (const DegenerateBatchError& e) {
    throw DegenerateBatchError(std::string(e.what()) + "; " + describe_batch(meta));
  }
}

std::vector<std::vector<double>> snapshot(const nn::ParamStore& params) {
  std::vector<std::vector<double>> out;
  for (const auto& [name, t] : params.items()) out.emplace_back(t.data().begin(), t.data().end());
  return out;
}

void restore(nn::ParamStore& params, const std::vector<std::vector<double>>& values) {
  std::size_t k = 0;
  for (const auto& [name, t] : params.items()) {
    auto dst = Tensor(t).mutable_data();
    std::copy(values[k].begin(), values[k].end(), dst.begin());
    ++k;
  }
}

std::size_t count_subjects(const data::Corpus& corpus, const std::vector<std::size_t>& pool) {
  std::set<std::int32_t> s;
  for (std::size_t i : pool) s.insert(corpus.samples[i].subject_id);
  return s.size();
}

}  // namespace

namespace {

bool has_trial_pair(const data::Corpus& corpus, const std::vector<std::size_t>& idx) {
  std::set<std::int32_t> seen;
  for (std::size_t i : idx)
    if (!seen.insert(corpus.samples[i].trial_id).second) return true;
  return false;
}

}  // namespace

std::vector<std::vector<std::size_t>> hierarchical_batches(const data::Corpus& corpus,
                                                           const std::vector<std::size_t>& pool,
                                                           std::size_t batch, std::size_t subjects_per_batch,
                                                           nn::Rng& rng) {
  std::map<std::int32_t, std::map<std::int32_t, std::vector<std::size_t>>> tree;
  for (std::size_t i : pool) tree[corpus.samples[i].subject_id][corpus.samples[i].trial_id].push_back(i);
  if (tree.size() < 2) throw DegenerateBatchError("contrastive batches need samples from at least 2 subjects");

  // Per subject: chunks of two same-trial samples, interleaved across trials,
  // so even a share of two carries a within-trial positive.
  std::vector<std::vector<std::vector<std::size_t>>> per_subject;
  for (auto& [subject, trials] : tree) {
    std::vector<std::vector<std::size_t>> lists;
    for (auto& [trial, idx] : trials) {
      std::shuffle(idx.begin(), idx.end(), rng);
      lists.push_back(idx);
    }
    std::shuffle(lists.begin(), lists.end(), rng);
    std::vector<std::vector<std::size_t>> chunks;
    for (std::size_t k = 0;; k += 2) {
      bool any = false;
      for (const auto& l : lists) {
        if (k >= l.size()) continue;
        std::vector<std::size_t> c{l[k]};
        if (k + 1 < l.size()) c.push_back(l[k + 1]);
        chunks.push_back(std::move(c));
        any = true;
      }
      if (!any) break;
    }
    per_subject.push_back(std::move(chunks));
  }

  // Same-trial pairs, used to patch a batch that ended up without one.
  std::vector<const std::vector<std::size_t>*> pairs;
  for (const auto& chunks : per_subject)
    for (const auto& c : chunks)
      if (c.size() == 2) pairs.push_back(&c);
  std::size_t pair_cursor = 0;

  const std::size_t n_sub = per_subject.size();
  const std::size_t s = std::clamp<std::size_t>(subjects_per_batch, 2, n_sub);
  const std::size_t n_batches = (pool.size() + batch - 1) / batch;
  std::vector<std::size_t> order(n_sub);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> cursor(n_sub, 0);
  std::size_t next = 0;

  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t b = 0; b < n_batches; ++b) {
    std::vector<std::size_t> chosen;
    while (chosen.size() < s) {
      if (next == n_sub) {
        std::shuffle(order.begin(), order.end(), rng);
        next = 0;
      }
      const std::size_t cand = order[next++];
      if (std::find(chosen.begin(), chosen.end(), cand) == chosen.end()) chosen.push_back(cand);
    }
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < s; ++k) {
      const auto& chunks = per_subject[chosen[k]];
      std::size_t total = 0;
      for (const auto& c : chunks) total += c.size();
      const std::size_t share = std::min(total, batch / s + (k < batch % s ? 1 : 0));
      std::size_t taken = 0;
      while (taken < share) {
        const auto& c = chunks[cursor[chosen[k]] % chunks.size()];
        ++cursor[chosen[k]];
        for (std::size_t q = 0; q < c.size() && taken < share; ++q, ++taken) out.push_back(c[q]);
      }
    }
    if (!pairs.empty() && !has_trial_pair(corpus, out) && out.size() >= 4) {
      for (std::size_t tries = 0; tries < pairs.size(); ++tries) {
        const auto& p = *pairs[pair_cursor++ % pairs.size()];
        if (std::find(out.begin(), out.end(), p[0]) != out.end() ||
            std::find(out.begin(), out.end(), p[1]) != out.end())
          continue;
        out[out.size() - 2] = p[0];
        out[out.size() - 1] = p[1];
        break;
      }
    }
    batches.push_back(std::move(out));
  }
  return batches;
}

PretrainResult run_stage2(const RunConfig& config, const data::Corpus& corpus, std::uint64_t seed) {
  corpus.validate();
  enc::EncoderConfig ecfg = config.encoder;
  ecfg.input_dims = corpus.channels;
  nn::Rng rng(seed);
  PretrainResult result{enc::Encoder(ecfg, rng), {}, {}, {}, 0};
  enc::Encoder& encoder = result.encoder;

  const auto train = corpus.indices(data::Split::kTrain);
  const auto val = corpus.indices(data::Split::kVal);
  if (train.empty()) throw ConfigError("pretraining needs a non-empty train split");
  const bool use_val = count_subjects(corpus, val) >= 2;

  nn::Adam opt(encoder.params().tensors(), {config.pretrain.lr});
  auto best = snapshot(encoder.params());
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= config.pretrain.epochs; ++epoch) {
    double epoch_total = 0.0;
    const auto batches = hierarchical_batches(corpus, train, config.pretrain.batch, config.pretrain.subjects_per_batch, rng);
    for (const auto& idx : batches) {
      opt.zero_grad();
      auto step = contrastive_step(config, encoder, corpus, idx, rng);
      try {
        ad::backward(step.total);
      } catch (const DomainError& e) {
        throw TrainingError(std::string("pretraining diverged: ") + e.what(), static_cast<int>(epoch));
      }
      opt.step();
      epoch_total += step.breakdown.total;
      result.steps.push_back(step.breakdown);
    }
    result.train_epoch_loss.push_back(epoch_total / static_cast<double>(batches.size()));

    if (!use_val) {
      best = snapshot(encoder.params());
      result.best_epoch = epoch;
      continue;
    }
    // Fixed masks and batches for validation so epochs are comparable.
    ad::NoGradGuard guard;
    nn::Rng vrng(seed ^ 0x9e3779b97f4a7c15ULL);
    // The whole val split in one batch, so any same-trial pair in it counts.
    const auto vb = hierarchical_batches(corpus, val, val.size(), config.pretrain.subjects_per_batch, vrng);
    double vtotal = 0.0;
    for (const auto& idx : vb) vtotal += contrastive_step(config, encoder, corpus, idx, vrng).breakdown.total;
    const double vloss = vtotal / static_cast<double>(vb.size());
    result.val_epoch_loss.push_back(vloss);
    if (vloss < best_val) {
      best_val = vloss;
      best = snapshot(encoder.params());
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.pretrain.patience) {
      break;
    }
  }
  restore(encoder.params(), best);
  encoder.params().zero_grad();
  return result;
}

std::string pretrain_log_csv(const std::vector<loss::LossBreakdown>& steps) {
  std::ostringstream os;
  os.precision(17);
  os << "step,L_S,L_R,L_E,L_T,L_IRV,L_IAV,total,skipped_anchors\n";
  std::size_t k = 0;
  for (const auto& s : steps) {
    os << ++k << ',' << s.subject << ',' << s.trial << ',' << s.epoch << ',' << s.temporal << ',' << s.inter_view
       << ',' << s.intra_view << ',' << s.total << ',' << s.skipped_anchors << '\n';
  }
  return os.str();
}

std::string pretrain_epochs_csv(const PretrainResult& r) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,train_total,val_total\n";
  for (std::size_t e = 0; e < r.train_epoch_loss.size(); ++e) {
    os << e + 1 << ',' << r.train_epoch_loss[e] << ',';
    if (e < r.val_epoch_loss.size()) os << r.val_epoch_loss[e];
    os << '\n';
  }
  return os.str();
}

void save_encoder(const enc::Encoder& encoder, const fs::path& dir) {
  nn::save_checkpoint(encoder.params(), {{"kind", "encoder"}, {"config", encoder.config().to_json()}}, dir);
}

enc::Encoder load_encoder(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) throw ConfigError("missing stage-2 encoder checkpoint: " + dir.string());
  json meta;
  auto params = nn::load_checkpoint(dir, &meta);
  if (meta.value("kind", "") != "encoder") throw FormatError(dir.string() + " is not an encoder checkpoint");
  return enc::Encoder(enc::EncoderConfig::from_json(meta.at("config")), params);
}

// ---- stage 3 ---------------------------------------------------------------

std::vector<std::size_t> label_subset(const data::Corpus& corpus, const std::vector<std::size_t>& train,
                                      double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("label_fraction must be in (0, 1]");
  const auto n_keep = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(train.size()) + 1e-9));
  std::map<std::int32_t, std::map<std::int32_t, std::vector<std::size_t>>> by_class;
  for (std::size_t i : train) by_class[corpus.samples[i].label][corpus.samples[i].subject_id].push_back(i);

  // Largest-remainder allocation across classes, at least one per class when possible.
  std::vector<std::int32_t> classes;
  std::vector<std::size_t> sizes, quota;
  for (const auto& [c, subjects] : by_class) {
    classes.push_back(c);
    std::size_t n = 0;
    for (const auto& [s, idx] : subjects) n += idx.size();
    sizes.push_back(n);
  }
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t given = 0;
  for (std::size_t k = 0; k < classes.size(); ++k) {
    const double exact = static_cast<double>(n_keep) * static_cast<double>(sizes[k]) / static_cast<double>(train.size());
    quota.push_back(static_cast<std::size_t>(std::floor(exact)));
    given += quota.back();
    remainders.emplace_back(exact - std::floor(exact), k);
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](auto a, auto b) { return a.first > b.first; });
  for (std::size_t r = 0; given < n_keep && r < remainders.size(); ++r, ++given) quota[remainders[r].second]++;
  for (std::size_t k = 0; k < classes.size(); ++k) {
    if (quota[k] == 0 && n_keep >= classes.size()) {
      auto donor = std::max_element(quota.begin(), quota.end()) - quota.begin();
      quota[donor]--;
      quota[k]++;
    }
  }

  nn::Rng rng(seed);
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < classes.size(); ++k) {
    std::vector<std::vector<std::size_t>> lists;
    for (auto& [s, idx] : by_class[classes[k]]) {
      std::shuffle(idx.begin(), idx.end(), rng);
      lists.push_back(idx);
    }
    std::shuffle(lists.begin(), lists.end(), rng);
    std::size_t taken = 0;
    for (std::size_t round = 0; taken < quota[k]; ++round) {
      for (const auto& l : lists) {
        if (round < l.size() && taken < quota[k]) {
          out.push_back(l[round]);
          ++taken;
        }
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

Tensor one_hot(const data::Corpus& corpus, const std::vector<std::size_t>& idx) {
  std::vector<double> v(idx.size() * 2, 0.0);
  for (std::size_t k = 0; k < idx.size(); ++k) v[k * 2 + (corpus.samples[idx[k]].label == 1 ? 1 : 0)] = 1.0;
  return Tensor::from_data({idx.size(), 2}, std::move(v));
}

Tensor pooled_features(const enc::Encoder& encoder, const data::Corpus& corpus, const std::vector<std::size_t>& idx) {
  Tensor h = encoder.encode_series(batch_values(corpus, idx));
  return enc::pool_features(h, encoder.encode_views(h));
}

double positive_probability(double l0, double l1) { return 1.0 / (1.0 + std::exp(l0 - l1)); }

std::vector<double> scores_from_logits(const Tensor& logits) {
  std::vector<double> out;
  for (std::size_t i = 0; i < logits.dim(0); ++i) out.push_back(positive_probability(logits.at({i, 0}), logits.at({i, 1})));
  return out;
}

eval::MetricsReport metrics_for(const data::Corpus& corpus, const std::vector<std::size_t>& idx,
                                const std::vector<double>& scores) {
  std::vector<int> labels, preds;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    labels.push_back(corpus.samples[idx[k]].label);
    preds.push_back(scores[k] > 0.5 ? 1 : 0);
  }
  return eval::classification_metrics(labels, preds, scores);
}

}  // namespace

std::vector<double> predict_scores(const enc::Encoder& encoder, const enc::ClassifierHead& head,
                                   const data::Corpus& corpus, const std::vector<std::size_t>& indices) {
  ad::NoGradGuard guard;
  std::vector<double> out;
  const std::size_t chunk = 64;
  for (std::size_t b = 0; b < indices.size(); b += chunk) {
    std::vector<std::size_t> idx(indices.begin() + b, indices.begin() + std::min(indices.size(), b + chunk));
    auto s = scores_from_logits(head.logits_from_pooled(pooled_features(encoder, corpus, idx)));
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

eval::MetricsReport evaluate_split(const enc::Encoder& encoder, const enc::ClassifierHead& head,
                                   const data::Corpus& corpus, data::Split split) {
  const auto idx = corpus.indices(split);
  if (idx.empty()) throw ConfigError(std::string("split '") + data::split_name(split) + "' is empty");
  return metrics_for(corpus, idx, predict_scores(encoder, head, corpus, idx));
}

FinetuneResult run_stage3(const RunConfig& config, const enc::Encoder& encoder, const data::Corpus& corpus,
                          std::uint64_t seed) {
  if (encoder.config().input_dims != corpus.channels) {
    throw DimensionError("encoder expects " + std::to_string(encoder.config().input_dims) +
                         " input channels but the corpus has " + std::to_string(corpus.channels));
  }
  const auto train = corpus.indices(data::Split::kTrain);
  auto val = corpus.indices(data::Split::kVal);
  const auto test = corpus.indices(data::Split::kTest);
  if (test.empty()) throw ConfigError("fine-tuning needs a non-empty test split");
  const auto labeled = label_subset(corpus, train, config.finetune.label_fraction, seed);
  std::set<std::int32_t> classes;
  for (std::size_t i : labeled) classes.insert(corpus.samples[i].label);
  if (classes.size() < 2) {
    throw ConfigError("labeled training subset (" + std::to_string(labeled.size()) + " samples) holds a single class");
  }
  if (val.empty()) val = labeled;

  const bool full = config.finetune.mode == FinetuneMode::kFull;
  const auto& ec = encoder.config();
  nn::Rng rng(seed + 1);
  FinetuneResult result{enc::Encoder(ec, encoder.params()),
                        enc::ClassifierHead(ec.output_dims + ec.n_heads * ec.head_dim, 2, rng),
                        {},
                        labeled.size(),
                        0,
                        0,
                        {}};
  enc::Encoder& tuned = result.encoder;
  enc::ClassifierHead& head = result.head;

  std::vector<Tensor> trainable = head.params().tensors();
  if (full) {
    auto e = tuned.params().tensors();
    trainable.insert(trainable.end(), e.begin(), e.end());
  }
  for (const auto& t : trainable) result.trainable_parameters += t.numel();
  nn::Adam opt(trainable, {config.finetune.lr});

  // Frozen encoder: pooled features are fixed, compute them once.
  Tensor frozen_features;
  if (!full) {
    ad::NoGradGuard guard;
    std::vector<Tensor> parts;
    for (std::size_t b = 0; b < labeled.size(); b += 64) {
      std::vector<std::size_t> idx(labeled.begin() + b, labeled.begin() + std::min(labeled.size(), b + 64));
      parts.push_back(pooled_features(tuned, corpus, idx));
    }
    frozen_features = parts.size() == 1 ? parts[0] : ad::concat(parts, 0);
  }

  std::ostringstream log;
  log.precision(17);
  log << "epoch,train_loss,val_f1,val_accuracy\n";
  auto best_head = snapshot(head.params());
  auto best_enc = full ? snapshot(tuned.params()) : std::vector<std::vector<double>>{};
  double best_f1 = -1.0, best_loss = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::vector<std::size_t> order(labeled.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= config.finetune.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += config.finetune.batch) {
      std::vector<std::size_t> pos(order.begin() + b, order.begin() + std::min(order.size(), b + config.finetune.batch));
      std::vector<std::size_t> idx;
      for (std::size_t p : pos) idx.push_back(labeled[p]);
      opt.zero_grad();
      Tensor feats = full ? pooled_features(tuned, corpus, idx) : ad::index_select(frozen_features, 0, pos);
      Tensor l = ad::bce_with_logits(head.logits_from_pooled(feats), one_hot(corpus, idx));
      try {
        ad::backward(l);
      } catch (const DomainError& e) {
        throw TrainingError(std::string("fine-tuning diverged: ") + e.what(), static_cast<int>(epoch));
      }
      opt.step();
      total += l.item();
      ++batches;
    }
    const double train_loss = total / static_cast<double>(batches);
    const auto vm = metrics_for(corpus, val, predict_scores(tuned, head, corpus, val));
    log << epoch << ',' << train_loss << ',' << vm.f1 << ',' << vm.accuracy << '\n';
    if (vm.f1 > best_f1 || (vm.f1 == best_f1 && train_loss < best_loss)) {
      best_f1 = vm.f1;
      best_loss = train_loss;
      best_head = snapshot(head.params());
      if (full) best_enc = snapshot(tuned.params());
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.finetune.patience) {
      break;
    }
  }
  restore(head.params(), best_head);
  if (full) restore(tuned.params(), best_enc);
  head.params().zero_grad();
  tuned.params().zero_grad();
  result.test = metrics_for(corpus, test, predict_scores(tuned, head, corpus, test));
  result.log_csv = log.str();
  return result;
}

void save_classifier(const FinetuneResult& result, const fs::path& dir) {
  nn::ParamStore all;
  for (const auto& [n, t] : result.encoder.params().items()) all.add(n, t);
  for (const auto& [n, t] : result.head.params().items()) all.add(n, t);
  json meta{{"kind", "classifier"},
            {"config", result.encoder.config().to_json()},
            {"in_features", result.head.in_features()},
            {"n_classes", result.head.n_classes()},
            {"n_labeled", result.n_labeled},
            {"trainable_parameters", result.trainable_parameters},
            {"best_epoch", result.best_epoch}};
  nn::save_checkpoint(all, meta, dir);
}

LoadedClassifier load_classifier(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) throw ConfigError("missing stage-3 classifier checkpoint: " + dir.string());
  json meta;
  auto params = nn::load_checkpoint(dir, &meta);
  if (meta.value("kind", "") != "classifier") throw FormatError(dir.string() + " is not a classifier checkpoint");
  auto cfg = enc::EncoderConfig::from_json(meta.at("config"));
  return {enc::Encoder(cfg, params),
          enc::ClassifierHead(meta.at("in_features").get<std::size_t>(), meta.at("n_classes").get<std::size_t>(), params)};
}

// ---- full runs -------------------------------------------------------------

SeedRun run_seed(const RunConfig& config, std::uint64_t seed, const std::optional<fs::path>& out,
                 const de::DeModel* stage1) {
  SeedRun run;
  run.seed = seed;
  auto prepared = prepare_data(config, seed);
  data::Corpus corpus = prepared.target;
  std::optional<de::DeModel> trained;
  if (config.de_enabled) {
    if (!stage1) {
      trained.emplace(train_stage1(config, prepared.external, seed));
      stage1 = &*trained;
    }
    corpus = augment_target(config, *stage1, prepared.target);
    std::set<int> present;
    for (const auto& s : prepared.target.samples) present.insert(s.label);
    if (present.size() == 2) run.anomaly_auroc = de::anomaly_report(stage1->generator, prepared.target).auroc;
    run.mi = eval::mi_ranking(corpus);
  }
  auto pre = run_stage2(config, corpus, seed);
  auto ft = run_stage3(config, pre.encoder, corpus, seed);
  run.metrics = ft.test;

  if (out) {
    const fs::path dir = *out;
    fs::create_directories(dir);
    if (stage1) {
      de::save_de(*stage1, dir / "de");
      auto rep = de::anomaly_report(stage1->generator, prepared.target);
      io::write_text(dir / "error_histogram.csv", eval::error_histogram_csv(rep.histogram));
      io::write_text(dir / "mi_table.csv", eval::mi_table_csv(run.mi));
    }
    data::save_corpus(corpus, dir / "corpus");
    save_encoder(pre.encoder, dir / "encoder");
    io::write_text(dir / "pretrain_log.csv", pretrain_log_csv(pre.steps));
    io::write_text(dir / "pretrain_epochs.csv", pretrain_epochs_csv(pre));
    save_classifier(ft, dir / "classifier");
    io::write_text(dir / "finetune_log.csv", ft.log_csv);
    json m = ft.test.to_json();
    m["seed"] = seed;
    m["n_labeled"] = ft.n_labeled;
    m["trainable_parameters"] = ft.trainable_parameters;
    if (run.anomaly_auroc) m["anomaly_auroc"] = *run.anomaly_auroc;
    io::write_text(dir / "metrics.json", m.dump(2) + "\n");
  }
  return run;
}

json run_metrics_json(const RunConfig& config, const std::vector<SeedRun>& runs) {
  json per_seed = json::array();
  std::vector<eval::MetricsReport> reports;
  for (const auto& r : runs) {
    json m = r.metrics.to_json();
    m["seed"] = r.seed;
    if (r.anomaly_auroc) m["anomaly_auroc"] = *r.anomaly_auroc;
    if (!r.mi.empty()) m["mi_top_channel_is_discrepancy"] = r.mi.front().discrepancy;
    per_seed.push_back(m);
    reports.push_back(r.metrics);
  }
  return {{"version", kConfigVersion},
          {"config_hash", config_hash(config.to_json())},
          {"seeds", per_seed},
          {"aggregate", eval::aggregate(reports)}};
}

// ---- ablations -------------------------------------------------------------

Sweep parse_sweep(const std::string& name) {
  if (name == "blocks") return Sweep::kBlocks;
  if (name == "weights") return Sweep::kWeights;
  if (name == "external_ratio") return Sweep::kExternalRatio;
  if (name == "discrepancy_mode") return Sweep::kDiscrepancyMode;
  throw ConfigError("unknown sweep '" + name + "' (blocks, weights, external_ratio, discrepancy_mode)");
}

std::string sweep_name(Sweep sweep) {
  switch (sweep) {
    case Sweep::kBlocks: return "blocks";
    case Sweep::kWeights: return "weights";
    case Sweep::kExternalRatio: return "external_ratio";
    case Sweep::kDiscrepancyMode: return "discrepancy_mode";
  }
  return "blocks";
}

namespace {

json lambdas(double s, double r, double e, double t, double v) {
  return {{"loss.lambda_s", s}, {"loss.lambda_r", r}, {"loss.lambda_e", e}, {"loss.lambda_t", t}, {"loss.lambda_v", v}};
}

std::string weight_label(double s, double r, double e, double t, double v) {
  std::ostringstream os;
  os << s << ',' << r << ',' << e << ',' << t << ',' << v;
  return os.str();
}

}  // namespace

std::vector<AblationCell> sweep_cells(Sweep sweep) {
  std::vector<AblationCell> cells;
  switch (sweep) {
    case Sweep::kBlocks: {
      // Block letters: S subject, R temporal, P epoch, O the remaining trial
      // loss, V views. Columns below are lambda_s, lambda_r (trial), lambda_e,
      // lambda_t, lambda_v.
      struct Row {
        const char* name;
        double s, r, e, t, v;
      };
      const Row rows[] = {{"O", 0, 1, 0, 0, 0},         {"S", 1, 0, 0, 0, 0},
                          {"R", 0, 0, 0, 1, 0},         {"P", 0, 0, 1, 0, 0},
                          {"S+O", 1, 1, 0, 0, 0},       {"R+S+O", 1, 1, 0, 1, 0},
                          {"P+R+S+O", 1, 1, 1, 1, 0},   {"P+R+S+O+V", 1, 1, 1, 1, 2}};
      for (const auto& r : rows) cells.push_back({r.name, lambdas(r.s, r.r, r.e, r.t, r.v), {}});
      break;
    }
    case Sweep::kWeights: {
      for (int v = 0; v <= 3; ++v) cells.push_back({weight_label(1, 1, 1, 1, v), lambdas(1, 1, 1, 1, v), {}});
      const double perturb[4][5] = {{1, 1, 1, 2, 1}, {1, 1, 2, 1, 1}, {1, 2, 1, 1, 1}, {2, 1, 1, 1, 1}};
      for (const auto& w : perturb) {
        cells.push_back({weight_label(w[0], w[1], w[2], w[3], w[4]), lambdas(w[0], w[1], w[2], w[3], w[4]), {}});
      }
      break;
    }
    case Sweep::kExternalRatio:
      for (double r : {0.05, 0.25, 0.5, 1.0}) {
        std::ostringstream os;
        os << r * 100 << '%';
        cells.push_back({os.str(), {{"de.external_ratio", r}}, {}});
      }
      break;
    case Sweep::kDiscrepancyMode:
      for (const char* m : {"sequence_scalar", "channel_vector", "pointwise_sequence", "cluster_distance"}) {
        cells.push_back({m, {{"de.mode", m}}, {}});
      }
      break;
  }
  return cells;
}

namespace {

// Runs fn(0..n-1) on up to `jobs` threads; rethrows the first failure.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  auto worker = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < n;) {
      try {
        fn(k);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

RunConfig with_overrides(const RunConfig& base, const json& overrides) {
  std::vector<std::string> list;
  for (const auto& [k, v] : overrides.items()) list.push_back(k + "=" + v.dump());
  return RunConfig::from_json(apply_overrides(base.to_json(), list));
}

}  // namespace

std::vector<AblationCell> run_ablation(const RunConfig& config, Sweep sweep, std::size_t jobs) {
  auto cells = sweep_cells(sweep);
  std::vector<RunConfig> configs;
  for (const auto& c : cells) configs.push_back(with_overrides(config, c.overrides));

  // Stage 1 depends only on the estimator settings and the seed; train each
  // distinct estimator once and share it across cells.
  std::map<std::string, std::size_t> key_of;
  std::vector<std::pair<std::size_t, std::uint64_t>> jobs1;  // (config index, seed)
  std::vector<std::vector<std::size_t>> model_for(cells.size());
  for (std::size_t c = 0; c < cells.size(); ++c) {
    for (auto seed : configs[c].seeds) {
      if (!configs[c].de_enabled) {
        model_for[c].push_back(SIZE_MAX);
        continue;
      }
      const std::string key = without(configs[c].to_json().at("de"), {"mode"}).dump() + "#" + std::to_string(seed);
      auto [it, fresh] = key_of.emplace(key, jobs1.size());
      if (fresh) jobs1.emplace_back(c, seed);
      model_for[c].push_back(it->second);
    }
  }
  std::vector<std::optional<de::DeModel>> models(jobs1.size());
  parallel_for(jobs1.size(), jobs, [&](std::size_t k) {
    const auto& [c, seed] = jobs1[k];
    models[k].emplace(train_stage1(configs[c], prepare_data(configs[c], seed).external, seed));
  });

  std::vector<std::pair<std::size_t, std::size_t>> tasks;  // (cell, seed position)
  for (std::size_t c = 0; c < cells.size(); ++c) {
    cells[c].reports.resize(configs[c].seeds.size());
    for (std::size_t s = 0; s < configs[c].seeds.size(); ++s) tasks.emplace_back(c, s);
  }
  parallel_for(tasks.size(), jobs, [&](std::size_t k) {
    const auto [c, s] = tasks[k];
    const std::size_t m = model_for[c][s];
    const de::DeModel* stage1 = m == SIZE_MAX ? nullptr : &*models[m];
    cells[c].reports[s] = run_seed(configs[c], configs[c].seeds[s], std::nullopt, stage1).metrics;
  });
  return cells;
}

std::string ablation_csv(Sweep sweep, const std::vector<AblationCell>& cells) {
  static const char* kMetrics[] = {"accuracy", "precision", "recall", "f1", "auroc", "auprc"};
  std::ostringstream os;
  os.precision(10);
  os << "sweep,cell,n_seeds";
  for (const char* m : kMetrics) os << ',' << m << "_mean," << m << "_std";
  os << '\n';
  for (const auto& cell : cells) {
    const json agg = eval::aggregate(cell.reports);
    os << sweep_name(sweep) << ",\"" << cell.name << "\"," << cell.reports.size();
    for (const char* m : kMetrics) os << ',' << agg[m]["mean"].get<double>() << ',' << agg[m]["std"].get<double>();
    os << '\n';
  }
  return os.str();
}

// ---- embeddings ------------------------------------------------------------

EmbeddingTable compute_embeddings(const enc::Encoder& encoder, const data::Corpus& corpus) {
  const auto& c = encoder.config();
  if (c.input_dims != corpus.channels) {
    throw DimensionError("encoder expects " + std::to_string(c.input_dims) + " channels, corpus has " +
                         std::to_string(corpus.channels));
  }
  EmbeddingTable t;
  t.series_dims = c.output_dims;
  t.views = c.n_heads;
  t.view_dims = c.head_dim;
  ad::NoGradGuard guard;
  const std::size_t vd = t.views * t.view_dims;
  for (std::size_t b = 0; b < corpus.size(); b += 64) {
    std::vector<std::size_t> idx(std::min<std::size_t>(64, corpus.size() - b));
    std::iota(idx.begin(), idx.end(), b);
    Tensor h = encoder.encode_series(batch_values(corpus, idx));
    Tensor hp = ad::mean(h, 1);
    Tensor gp = ad::mean(encoder.encode_views(h), 1);  // [M, V, d]
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto& s = corpus.samples[idx[k]];
      t.sample_ids.push_back(s.sample_id);
      t.subject_ids.push_back(s.subject_id);
      t.labels.push_back(s.label);
      t.series.emplace_back(hp.data().begin() + k * t.series_dims, hp.data().begin() + (k + 1) * t.series_dims);
      t.views_pooled.emplace_back(gp.data().begin() + k * vd, gp.data().begin() + (k + 1) * vd);
    }
  }

  const std::size_t n = t.series.size(), dim = t.series_dims + vd;
  Eigen::MatrixXd x(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t q = 0; q < t.series_dims; ++q) x(i, q) = t.series[i][q];
    for (std::size_t q = 0; q < vd; ++q) x(i, t.series_dims + q) = t.views_pooled[i][q];
  }
  Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(centered.transpose() * centered);
  t.projection.assign(n, {0.0, 0.0});
  for (int axis = 0; axis < 2 && axis < static_cast<int>(dim); ++axis) {
    Eigen::VectorXd v = solver.eigenvectors().col(static_cast<Eigen::Index>(dim) - 1 - axis);
    // Sign convention: the largest-magnitude loading is positive.
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    Eigen::VectorXd proj = centered * v;
    for (std::size_t i = 0; i < n; ++i) t.projection[i][axis] = proj(static_cast<Eigen::Index>(i));
  }
  return t;
}

std::string embeddings_csv(const EmbeddingTable& t) {
  std::ostringstream os;
  os.precision(17);
  os << "sample_id,subject_id,label";
  for (std::size_t q = 0; q < t.series_dims; ++q) os << ",h_" << q;
  for (std::size_t v = 0; v < t.views; ++v)
    for (std::size_t q = 0; q < t.view_dims; ++q) os << ",g" << v << '_' << q;
  os << ",pc1,pc2\n";
  for (std::size_t i = 0; i < t.series.size(); ++i) {
    os << t.sample_ids[i] << ',' << t.subject_ids[i] << ',' << t.labels[i];
    for (double x : t.series[i]) os << ',' << x;
    for (double x : t.views_pooled[i]) os << ',' << x;
    os << ',' << t.projection[i][0] << ',' << t.projection[i][1] << '\n';
  }
  return os.str();
}

ViewSeparation view_separation(const EmbeddingTable& t) {
  const std::size_t n = t.views_pooled.size(), v = t.views, d = t.view_dims;
  ViewSeparation out;
  if (n == 0 || v < 2) return out;
  std::vector<std::vector<double>> centroid(v, std::vector<double>(d, 0.0));
  for (const auto& row : t.views_pooled)
    for (std::size_t a = 0; a < v; ++a)
      for (std::size_t q = 0; q < d; ++q) centroid[a][q] += row[a * d + q] / static_cast<double>(n);
  auto dist = [d](const double* a, const double* b) {
    double s = 0.0;
    for (std::size_t q = 0; q < d; ++q) s += (a[q] - b[q]) * (a[q] - b[q]);
    return std::sqrt(s);
  };
  double inter = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < v; ++a)
    for (std::size_t b = a + 1; b < v; ++b, ++pairs) inter += dist(centroid[a].data(), centroid[b].data());
  double intra = 0.0;
  for (const auto& row : t.views_pooled)
    for (std::size_t a = 0; a < v; ++a) intra += dist(row.data() + a * d, centroid[a].data());
  out.inter_view_centroid_distance = inter / static_cast<double>(pairs);
  out.intra_view_dispersion = intra / static_cast<double>(n * v);
  return out;
}

}  // namespace daac::pipe
