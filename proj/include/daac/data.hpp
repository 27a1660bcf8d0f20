#pragma once

// Hierarchical sample model (subject > trial > epoch > timestamp), the on-disk
// corpus format, masking augmentation, splits and the synthetic generator.

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace daac::data {

using Rng = std::mt19937_64;

// One epoch-level segment. `values` is channel-major: values[c * T + t].
// Stored at float32 precision so the on-disk format round-trips exactly.
struct HierSample {
  std::vector<float> values;
  std::int32_t subject_id = 0;
  std::int32_t trial_id = 0;
  std::int32_t label = 0;
  std::int64_t sample_id = 0;
};

enum class Split : std::uint8_t { kNone, kTrain, kVal, kTest };
const char* split_name(Split s);

enum class SplitMode { kSubjectDependent, kSubjectIndependent };
SplitMode parse_split_mode(const std::string& name);
std::string split_mode_name(SplitMode mode);

struct Corpus {
  std::size_t channels = 0;
  std::size_t length = 0;
  std::vector<HierSample> samples;
  std::vector<Split> splits;  // one tag per sample
  nlohmann::json split_info = nlohmann::json::object();
  nlohmann::json provenance = nlohmann::json::object();

  std::size_t size() const { return samples.size(); }
  std::vector<std::size_t> indices(Split s) const;
  // Checks dims, finiteness and the trial -> single subject hierarchy.
  void validate() const;
};

struct SynthConfig {
  std::size_t n_subjects = 20;
  std::size_t trials_per_subject = 2;
  std::size_t epochs_per_trial = 6;
  std::size_t channels = 3;
  std::size_t length = 64;
  double class_gap = 2.0;       // frequency/amplitude separation between classes
  double subject_effect = 0.5;  // std of per-subject channel offsets
  double trial_effect = 0.25;   // std of per-trial channel offsets
  double noise = 0.1;           // white noise std
  double base_frequency = 3.0;  // cycles per window of the class-0 template
  bool normal_only = false;     // every subject labelled 0 (external cohort)
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const SynthConfig& c);
SynthConfig synth_config_from_json(const nlohmann::json& j);

Corpus generate_synthetic(const SynthConfig& config);

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

struct MaskedPair {
  std::vector<double> aug1, aug2;  // channel-major like the source
  std::vector<std::uint8_t> mask1, mask2;  // length T, 1 = zeroed timestamp
};

// Zeroes timestamps [start, start+len) across every channel.
void zero_span(std::span<double> values, std::size_t channels, std::size_t length, std::size_t start,
               std::size_t span_length);

// Inclusive span-length range [ceil(min_frac*T), floor(max_frac*T)].
std::pair<std::size_t, std::size_t> mask_length_range(std::size_t length, double min_frac,
                                                      double max_frac);

MaskedPair mask_pair(std::span<const double> values, std::size_t channels, std::size_t length,
                     double min_frac, double max_frac, Rng& rng);
MaskedPair mask_pair(const HierSample& sample, std::size_t channels, std::size_t length,
                     double min_frac, double max_frac, Rng& rng);

// Assigns split tags. Subject-independent mode partitions subject ids,
// subject-dependent mode partitions samples. With `stratify`, the partition
// is done per class so every split sees both classes when possible.
Corpus split_corpus(Corpus corpus, SplitMode mode, std::array<double, 3> ratios, std::uint64_t seed,
                    bool stratify = true);

// Per-channel mean/std over a subset of samples.
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};
ChannelStats fit_channel_stats(const Corpus& corpus, const std::vector<std::size_t>& subset);
// Standardizes with statistics fitted on the training split (all samples
// when no split is assigned) and records them in the provenance.
Corpus standardize(Corpus corpus);

// Copy with only the listed samples (ids re-numbered, split tags kept).
Corpus subset(const Corpus& corpus, const std::vector<std::size_t>& indices);

// Copy of the sample values as double.
std::vector<double> to_double(const HierSample& s);

}  // namespace daac::data
