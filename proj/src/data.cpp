#include "daac/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <set>
#include <unordered_map>

#include "daac/binary_io.hpp"
#include "daac/errors.hpp"

namespace daac::data {

namespace fs = std::filesystem;
using nlohmann::json;

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
    case Split::kNone: break;
  }
  return "none";
}

SplitMode parse_split_mode(const std::string& name) {
  if (name == "subject_dependent") return SplitMode::kSubjectDependent;
  if (name == "subject_independent") return SplitMode::kSubjectIndependent;
  throw ConfigError("unknown split mode '" + name + "'");
}

std::string split_mode_name(SplitMode mode) {
  return mode == SplitMode::kSubjectDependent ? "subject_dependent" : "subject_independent";
}

std::vector<std::size_t> Corpus::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    if (splits[i] == s) out.push_back(i);
  }
  return out;
}

void Corpus::validate() const {
  if (channels < 1 || length < 2) throw FormatError("corpus dims must satisfy F >= 1, T >= 2");
  if (splits.size() != samples.size()) throw FormatError("split tags do not match sample count");
  std::unordered_map<std::int32_t, std::int32_t> trial_subject;
  for (const auto& s : samples) {
    if (s.values.size() != channels * length) throw FormatError("sample value count mismatch");
    for (float v : s.values) {
      if (!std::isfinite(v)) throw FormatError("non-finite sample value");
    }
    auto [it, inserted] = trial_subject.emplace(s.trial_id, s.subject_id);
    if (!inserted && it->second != s.subject_id) {
      throw FormatError("trial " + std::to_string(s.trial_id) + " appears under two subjects");
    }
  }
}

json to_json(const SynthConfig& c) {
  return json{{"n_subjects", c.n_subjects},
              {"trials_per_subject", c.trials_per_subject},
              {"epochs_per_trial", c.epochs_per_trial},
              {"channels", c.channels},
              {"length", c.length},
              {"class_gap", c.class_gap},
              {"subject_effect", c.subject_effect},
              {"trial_effect", c.trial_effect},
              {"noise", c.noise},
              {"base_frequency", c.base_frequency},
              {"normal_only", c.normal_only},
              {"seed", c.seed}};
}

SynthConfig synth_config_from_json(const json& j) {
  SynthConfig c;
  const json defaults = to_json(c);
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("unknown synthetic config key '" + key + "'");
  }
  try {
    c.n_subjects = j.value("n_subjects", c.n_subjects);
    c.trials_per_subject = j.value("trials_per_subject", c.trials_per_subject);
    c.epochs_per_trial = j.value("epochs_per_trial", c.epochs_per_trial);
    c.channels = j.value("channels", c.channels);
    c.length = j.value("length", c.length);
    c.class_gap = j.value("class_gap", c.class_gap);
    c.subject_effect = j.value("subject_effect", c.subject_effect);
    c.trial_effect = j.value("trial_effect", c.trial_effect);
    c.noise = j.value("noise", c.noise);
    c.base_frequency = j.value("base_frequency", c.base_frequency);
    c.normal_only = j.value("normal_only", c.normal_only);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synthetic config: ") + e.what());
  }
  return c;
}

Corpus generate_synthetic(const SynthConfig& cfg) {
  if (cfg.n_subjects < 1 || cfg.trials_per_subject < 1 || cfg.epochs_per_trial < 1 || cfg.channels < 1) {
    throw ConfigError("synthetic config counts must be >= 1");
  }
  if (cfg.length < 16) throw ConfigError("synthetic length must be >= 16 for the templates");
  if (cfg.class_gap < 0 || cfg.subject_effect < 0 || cfg.trial_effect < 0 || cfg.noise < 0) {
    throw ConfigError("synthetic config effects must be non-negative");
  }
  const std::size_t F = cfg.channels, T = cfg.length;
  // Class templates: two sinusoid banks; class 1 shifts frequency by the gap
  // and scales amplitude by 1 + gap/4.
  std::array<std::vector<double>, 2> templates;
  for (int y = 0; y < 2; ++y) {
    const double freq = cfg.base_frequency + y * cfg.class_gap;
    const double amp = 1.0 + 0.25 * y * cfg.class_gap;
    auto& tpl = templates[y];
    tpl.resize(F * T);
    for (std::size_t c = 0; c < F; ++c) {
      const double phase = std::numbers::pi * static_cast<double>(c) / static_cast<double>(F);
      for (std::size_t t = 0; t < T; ++t) {
        const double u = 2.0 * std::numbers::pi * static_cast<double>(t) / static_cast<double>(T);
        tpl[c * T + t] = amp * std::sin(freq * u + phase) + 0.5 * amp * std::sin(2.0 * freq * u + 2.0 * phase);
      }
    }
  }

  Rng rng(cfg.seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  Corpus corpus;
  corpus.channels = F;
  corpus.length = T;
  const std::size_t n_normal = (cfg.n_subjects + 1) / 2;
  std::int64_t next_id = 0;
  for (std::size_t s = 0; s < cfg.n_subjects; ++s) {
    const int label = (cfg.normal_only || s < n_normal) ? 0 : 1;
    std::vector<double> subject_offset(F);
    for (double& v : subject_offset) v = cfg.subject_effect * unit(rng);
    for (std::size_t r = 0; r < cfg.trials_per_subject; ++r) {
      std::vector<double> trial_offset(F);
      for (double& v : trial_offset) v = cfg.trial_effect * unit(rng);
      for (std::size_t e = 0; e < cfg.epochs_per_trial; ++e) {
        HierSample sample;
        sample.subject_id = static_cast<std::int32_t>(s);
        sample.trial_id = static_cast<std::int32_t>(s * cfg.trials_per_subject + r);
        sample.label = label;
        sample.sample_id = next_id++;
        sample.values.resize(F * T);
        for (std::size_t c = 0; c < F; ++c) {
          for (std::size_t t = 0; t < T; ++t) {
            const double v = templates[label][c * T + t] + subject_offset[c] + trial_offset[c] +
                             cfg.noise * unit(rng);
            sample.values[c * T + t] = static_cast<float>(v);
          }
        }
        corpus.samples.push_back(std::move(sample));
      }
    }
  }
  corpus.splits.assign(corpus.samples.size(), Split::kNone);
  corpus.provenance = json{{"source", "synthetic"}, {"generator", to_json(cfg)}};
  return corpus;
}

// ---- on-disk format ----------------------------------------------------

namespace {

json splits_to_json(const Corpus& c) {
  json j = c.split_info;
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) j[split_name(s)] = c.indices(s);
  return j;
}

std::vector<std::int32_t> read_i32_blob(const fs::path& p, std::size_t n) {
  const auto bytes = io::read_file(p);
  if (bytes.size() != n * 4) {
    throw FormatError(p.filename().string() + " holds " + std::to_string(bytes.size()) +
                      " bytes, expected " + std::to_string(n * 4));
  }
  std::vector<std::int32_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = io::read_le<std::int32_t>(bytes.data() + 4 * i);
  return out;
}

}  // namespace

void save_corpus(const Corpus& corpus, const fs::path& dir) {
  corpus.validate();
  fs::create_directories(dir);
  const std::size_t n = corpus.size();
  json manifest{{"magic", "DAAC"},
                {"version", 1},
                {"n", n},
                {"channels", corpus.channels},
                {"length", corpus.length},
                {"dtype", "f32le"},
                {"splits", splits_to_json(corpus)},
                {"provenance", corpus.provenance}};
  std::vector<char> data, labels, subjects, trials;
  data.reserve(n * corpus.channels * corpus.length * 4);
  for (const auto& s : corpus.samples) {
    for (float v : s.values) io::append_le(data, v);
    io::append_le(labels, s.label);
    io::append_le(subjects, s.subject_id);
    io::append_le(trials, s.trial_id);
  }
  io::write_file(dir / "data.bin", data);
  io::write_file(dir / "labels.bin", labels);
  io::write_file(dir / "subjects.bin", subjects);
  io::write_file(dir / "trials.bin", trials);
  io::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

Corpus load_corpus(const fs::path& dir) {
  json manifest;
  try {
    manifest = json::parse(io::read_text(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw FormatError("corpus manifest unreadable: " + std::string(e.what()));
  }
  if (manifest.value("magic", "") != "DAAC") throw FormatError("corpus magic mismatch");
  if (manifest.value("version", 0) != 1) throw FormatError("unsupported corpus version");
  if (manifest.value("dtype", "") != "f32le") throw FormatError("unsupported corpus dtype");
  Corpus c;
  std::size_t n = 0;
  try {
    n = manifest.at("n").get<std::size_t>();
    c.channels = manifest.at("channels").get<std::size_t>();
    c.length = manifest.at("length").get<std::size_t>();
  } catch (const json::exception& e) {
    throw FormatError("corpus manifest: " + std::string(e.what()));
  }
  if (c.channels < 1 || c.length < 2) throw FormatError("corpus dims must satisfy F >= 1, T >= 2");
  const std::size_t per = c.channels * c.length;
  const auto data = io::read_file(dir / "data.bin");
  if (data.size() != n * per * 4) {
    throw FormatError("data.bin holds " + std::to_string(data.size()) + " bytes, expected " +
                      std::to_string(n * per * 4));
  }
  const auto labels = read_i32_blob(dir / "labels.bin", n);
  const auto subjects = read_i32_blob(dir / "subjects.bin", n);
  const auto trials = read_i32_blob(dir / "trials.bin", n);

  c.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& s = c.samples[i];
    s.values.resize(per);
    for (std::size_t k = 0; k < per; ++k) s.values[k] = io::read_le<float>(data.data() + 4 * (i * per + k));
    s.label = labels[i];
    s.subject_id = subjects[i];
    s.trial_id = trials[i];
    s.sample_id = static_cast<std::int64_t>(i);
  }
  c.splits.assign(n, Split::kNone);
  const json splits = manifest.value("splits", json::object());
  for (Split tag : {Split::kTrain, Split::kVal, Split::kTest}) {
    if (!splits.contains(split_name(tag))) continue;
    for (const auto& v : splits.at(split_name(tag))) {
      const auto idx = v.get<std::size_t>();
      if (idx >= n) throw FormatError("split index out of range");
      if (c.splits[idx] != Split::kNone) throw FormatError("sample assigned to two splits");
      c.splits[idx] = tag;
    }
  }
  c.split_info = json::object();
  for (const auto& [k, v] : splits.items()) {
    if (k != "train" && k != "val" && k != "test") c.split_info[k] = v;
  }
  c.provenance = manifest.value("provenance", json::object());
  c.validate();
  return c;
}

// ---- masking -----------------------------------------------------------

void zero_span(std::span<double> values, std::size_t channels, std::size_t length, std::size_t start,
               std::size_t span_length) {
  if (start + span_length > length) throw ConfigError("mask span exceeds series length");
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t t = start; t < start + span_length; ++t) values[c * length + t] = 0.0;
  }
}

std::pair<std::size_t, std::size_t> mask_length_range(std::size_t length, double min_frac,
                                                      double max_frac) {
  if (!(min_frac > 0.0 && min_frac <= max_frac && max_frac < 1.0)) {
    throw ConfigError("mask fractions must satisfy 0 < min_frac <= max_frac < 1");
  }
  const double T = static_cast<double>(length);
  const auto lo = static_cast<std::size_t>(std::ceil(min_frac * T - 1e-9));
  const auto hi = static_cast<std::size_t>(std::floor(max_frac * T + 1e-9));
  if (lo < 1 || lo > hi || hi >= length) {
    throw ConfigError("mask fractions admit no span length for T=" + std::to_string(length));
  }
  return {lo, hi};
}

MaskedPair mask_pair(std::span<const double> values, std::size_t channels, std::size_t length,
                     double min_frac, double max_frac, Rng& rng) {
  if (values.size() != channels * length) throw DimensionError("mask_pair: value count mismatch");
  const auto [lo, hi] = mask_length_range(length, min_frac, max_frac);
  MaskedPair out;
  auto draw = [&](std::vector<double>& aug, std::vector<std::uint8_t>& mask) {
    std::uniform_int_distribution<std::size_t> len_dist(lo, hi);
    const std::size_t len = len_dist(rng);
    std::uniform_int_distribution<std::size_t> start_dist(0, length - len);
    const std::size_t start = start_dist(rng);
    aug.assign(values.begin(), values.end());
    zero_span(aug, channels, length, start, len);
    mask.assign(length, 0);
    std::fill(mask.begin() + static_cast<long>(start), mask.begin() + static_cast<long>(start + len), 1);
  };
  draw(out.aug1, out.mask1);
  draw(out.aug2, out.mask2);
  return out;
}

MaskedPair mask_pair(const HierSample& sample, std::size_t channels, std::size_t length,
                     double min_frac, double max_frac, Rng& rng) {
  const auto v = to_double(sample);
  return mask_pair(v, channels, length, min_frac, max_frac, rng);
}

// ---- splits ------------------------------------------------------------

namespace {

// Sizes for (train, val, test) given n units.
std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& r) {
  const auto val = static_cast<std::size_t>(std::llround(r[1] * static_cast<double>(n)));
  const auto test = static_cast<std::size_t>(std::llround(r[2] * static_cast<double>(n)));
  if (val + test > n) return {0, val, n - std::min(val, n)};
  return {n - val - test, val, test};
}

}  // namespace

Corpus split_corpus(Corpus corpus, SplitMode mode, std::array<double, 3> ratios, std::uint64_t seed,
                    bool stratify) {
  for (double r : ratios) {
    if (r < 0) throw ConfigError("split ratios must be non-negative");
  }
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) {
    throw ConfigError("split ratios must sum to 1");
  }
  Rng rng(seed);
  corpus.splits.assign(corpus.size(), Split::kNone);

  // Units are subjects (independent) or samples (dependent); each carries a class key.
  std::map<std::int32_t, std::vector<std::int64_t>> groups;  // class key -> units
  std::map<std::int32_t, int> subject_label;
  if (mode == SplitMode::kSubjectIndependent) {
    std::map<std::int32_t, std::map<std::int32_t, int>> votes;
    for (const auto& s : corpus.samples) votes[s.subject_id][s.label]++;
    for (const auto& [subj, counts] : votes) {
      int best = counts.begin()->first, best_n = -1;
      for (const auto& [lab, k] : counts) {
        if (k > best_n) best = lab, best_n = k;
      }
      groups[stratify ? best : 0].push_back(subj);
    }
  } else {
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      groups[stratify ? corpus.samples[i].label : 0].push_back(static_cast<std::int64_t>(i));
    }
  }

  std::map<std::int64_t, Split> assignment;
  std::array<std::size_t, 3> totals{0, 0, 0};
  for (auto& [key, units] : groups) {
    std::shuffle(units.begin(), units.end(), rng);
    const auto sizes = split_sizes(units.size(), ratios);
    std::size_t k = 0;
    const std::array<Split, 3> tags{Split::kTrain, Split::kVal, Split::kTest};
    for (std::size_t part = 0; part < 3; ++part) {
      for (std::size_t q = 0; q < sizes[part]; ++q) assignment[units[k++]] = tags[part];
      totals[part] += sizes[part];
    }
  }
  for (std::size_t part = 0; part < 3; ++part) {
    if (ratios[part] > 0 && totals[part] == 0) {
      throw ConfigError(std::string("split '") + split_name(static_cast<Split>(part + 1)) +
                        "' would be empty; not enough " +
                        (mode == SplitMode::kSubjectIndependent ? "subjects" : "samples"));
    }
  }
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const std::int64_t unit = mode == SplitMode::kSubjectIndependent ? corpus.samples[i].subject_id
                                                                     : static_cast<std::int64_t>(i);
    corpus.splits[i] = assignment.at(unit);
  }
  corpus.split_info = json{{"mode", split_mode_name(mode)},
                           {"ratios", ratios},
                           {"seed", seed},
                           {"stratified", stratify}};
  return corpus;
}

ChannelStats fit_channel_stats(const Corpus& corpus, const std::vector<std::size_t>& subset) {
  ChannelStats st;
  st.mean.assign(corpus.channels, 0.0);
  st.stddev.assign(corpus.channels, 1.0);
  if (subset.empty()) return st;
  const std::size_t T = corpus.length;
  for (std::size_t c = 0; c < corpus.channels; ++c) {
    double sum = 0.0;
    for (std::size_t i : subset)
      for (std::size_t t = 0; t < T; ++t) sum += corpus.samples[i].values[c * T + t];
    const double n = static_cast<double>(subset.size() * T);
    const double mu = sum / n;
    double ss = 0.0;
    for (std::size_t i : subset)
      for (std::size_t t = 0; t < T; ++t) {
        const double d = corpus.samples[i].values[c * T + t] - mu;
        ss += d * d;
      }
    const double sd = std::sqrt(ss / n);
    st.mean[c] = mu;
    st.stddev[c] = sd > 1e-12 ? sd : 1.0;
  }
  return st;
}

Corpus standardize(Corpus corpus) {
  auto fit_on = corpus.indices(Split::kTrain);
  if (fit_on.empty()) {
    fit_on.resize(corpus.size());
    for (std::size_t i = 0; i < fit_on.size(); ++i) fit_on[i] = i;
  }
  const auto st = fit_channel_stats(corpus, fit_on);
  const std::size_t T = corpus.length;
  for (auto& s : corpus.samples) {
    for (std::size_t c = 0; c < corpus.channels; ++c)
      for (std::size_t t = 0; t < T; ++t) {
        auto& v = s.values[c * T + t];
        v = static_cast<float>((v - st.mean[c]) / st.stddev[c]);
      }
  }
  corpus.provenance["standardization"] = json{{"mean", st.mean}, {"std", st.stddev}};
  return corpus;
}

Corpus subset(const Corpus& corpus, const std::vector<std::size_t>& indices) {
  Corpus out;
  out.channels = corpus.channels;
  out.length = corpus.length;
  out.provenance = corpus.provenance;
  out.split_info = corpus.split_info;
  for (std::size_t i : indices) {
    if (i >= corpus.size()) throw DimensionError("subset: index out of range");
    HierSample s = corpus.samples[i];
    s.sample_id = static_cast<std::int64_t>(out.samples.size());
    out.samples.push_back(std::move(s));
    out.splits.push_back(corpus.splits[i]);
  }
  return out;
}

std::vector<double> to_double(const HierSample& s) { return {s.values.begin(), s.values.end()}; }

}  // namespace daac::data
