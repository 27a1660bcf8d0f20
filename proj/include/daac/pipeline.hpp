#pragma once

// Three-stage orchestration: discrepancy estimator -> contrastive pretraining
// -> supervised fine-tuning, plus ablation sweeps and embedding export.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "daac/data.hpp"
#include "daac/discrepancy.hpp"
#include "daac/encoders.hpp"
#include "daac/evaluation.hpp"
#include "daac/losses.hpp"
#include "json.hpp"

namespace daac::pipe {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kConfigVersion = 1;

enum class FinetuneMode { kPartial, kFull };  // PFT, FFT

struct PretrainOptions {
  std::size_t epochs = 20;
  double lr = 1e-3;
  std::size_t batch = 32;
  std::size_t patience = 10;
  std::size_t subjects_per_batch = 4;
};

struct FinetuneOptions {
  FinetuneMode mode = FinetuneMode::kFull;
  double label_fraction = 1.0;
  std::size_t epochs = 30;
  double lr = 1e-4;
  std::size_t batch = 32;
  std::size_t patience = 10;
};

struct RunConfig {
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  // Corpus directories; empty means "synthesize from the matching SynthConfig".
  std::string target_path, external_path;
  data::SynthConfig target_synth;
  data::SynthConfig external_synth;
  bool standardize = false;
  data::SplitMode split_mode = data::SplitMode::kSubjectIndependent;
  std::array<double, 3> split_ratios{0.6, 0.2, 0.2};
  bool de_enabled = true;
  de::DiscrepancyMode de_mode = de::DiscrepancyMode::kSequenceScalar;
  de::DeConfig de;
  enc::EncoderConfig encoder;  // input_dims is derived from the corpus
  loss::LossWeights weights;
  double tau = 0.5;
  loss::LossOptions loss_options;
  double mask_min_frac = 0.1, mask_max_frac = 0.5;
  PretrainOptions pretrain;
  FinetuneOptions finetune;

  void validate() const;
  json to_json() const;
  static RunConfig from_json(const json& j);  // rejects unknown keys
};

json default_config_json();
// Applies "a.b.c=value" overrides. The key must exist in the resolved config;
// the value is parsed as JSON, falling back to a plain string.
json apply_overrides(json config, const std::vector<std::string>& overrides);
// FNV-1a of the canonical config dump, hex encoded.
std::string config_hash(const json& config);

// ---- data preparation ----------------------------------------------------

struct PreparedData {
  data::Corpus target;    // split tags assigned
  data::Corpus external;  // all-normal cohort
};
// Loads or synthesizes both corpora. A target without split tags is split
// with `seed` (stratified by class), so later stages never need labels.
PreparedData prepare_data(const RunConfig& config, std::uint64_t seed);

// ---- stage 1 -------------------------------------------------------------

de::DeConfig de_config_for(const RunConfig& config, const data::Corpus& external, std::uint64_t seed);
de::DeModel train_stage1(const RunConfig& config, const data::Corpus& external, std::uint64_t seed);
data::Corpus augment_target(const RunConfig& config, const de::DeModel& model, const data::Corpus& target);

// ---- stage 2 -------------------------------------------------------------

struct PretrainResult {
  enc::Encoder encoder;
  std::vector<loss::LossBreakdown> steps;
  std::vector<double> train_epoch_loss, val_epoch_loss;
  std::size_t best_epoch = 0;
};

// Batches of `batch` train-split indices drawn from >= 2 subjects, with the
// per-subject share spread over that subject's trials.
std::vector<std::vector<std::size_t>> hierarchical_batches(const data::Corpus& corpus,
                                                           const std::vector<std::size_t>& pool,
                                                           std::size_t batch, std::size_t subjects_per_batch,
                                                           nn::Rng& rng);

// Contrastive pretraining. Reads values, subject/trial ids and split tags;
// never reads labels.
PretrainResult run_stage2(const RunConfig& config, const data::Corpus& corpus, std::uint64_t seed);
std::string pretrain_log_csv(const std::vector<loss::LossBreakdown>& steps);
std::string pretrain_epochs_csv(const PretrainResult& result);

void save_encoder(const enc::Encoder& encoder, const fs::path& dir);
enc::Encoder load_encoder(const fs::path& dir);

// ---- stage 3 -------------------------------------------------------------

// floor(fraction * n) train indices, allocated across classes in proportion
// and round-robin over subjects within a class.
std::vector<std::size_t> label_subset(const data::Corpus& corpus, const std::vector<std::size_t>& train,
                                      double fraction, std::uint64_t seed);

struct FinetuneResult {
  enc::Encoder encoder;  // equals the input encoder under PFT
  enc::ClassifierHead head;
  eval::MetricsReport test;
  std::size_t n_labeled = 0;
  std::size_t trainable_parameters = 0;
  std::size_t best_epoch = 0;
  std::string log_csv;
};

FinetuneResult run_stage3(const RunConfig& config, const enc::Encoder& encoder, const data::Corpus& corpus,
                          std::uint64_t seed);

// Positive-class probabilities for the given samples.
std::vector<double> predict_scores(const enc::Encoder& encoder, const enc::ClassifierHead& head,
                                   const data::Corpus& corpus, const std::vector<std::size_t>& indices);
eval::MetricsReport evaluate_split(const enc::Encoder& encoder, const enc::ClassifierHead& head,
                                   const data::Corpus& corpus, data::Split split);

void save_classifier(const FinetuneResult& result, const fs::path& dir);
struct LoadedClassifier {
  enc::Encoder encoder;
  enc::ClassifierHead head;
};
LoadedClassifier load_classifier(const fs::path& dir);

// ---- full runs -----------------------------------------------------------

struct SeedRun {
  std::uint64_t seed = 0;
  std::optional<double> anomaly_auroc;
  std::vector<eval::MiRow> mi;
  eval::MetricsReport metrics;
};

// Runs all stages for one seed. With `out`, writes checkpoints, logs and
// metrics under it. `stage1` reuses an already trained estimator.
SeedRun run_seed(const RunConfig& config, std::uint64_t seed, const std::optional<fs::path>& out = std::nullopt,
                 const de::DeModel* stage1 = nullptr);

json run_metrics_json(const RunConfig& config, const std::vector<SeedRun>& runs);

// ---- ablations -----------------------------------------------------------

enum class Sweep { kBlocks, kWeights, kExternalRatio, kDiscrepancyMode };
Sweep parse_sweep(const std::string& name);
std::string sweep_name(Sweep sweep);

struct AblationCell {
  std::string name;
  json overrides;  // dotted key -> value applied on top of the base config
  std::vector<eval::MetricsReport> reports;  // one per seed, in seed order
};

// Cell definitions without running anything.
std::vector<AblationCell> sweep_cells(Sweep sweep);
// Runs every (cell, seed) pair on up to `jobs` threads.
std::vector<AblationCell> run_ablation(const RunConfig& config, Sweep sweep, std::size_t jobs = 1);
std::string ablation_csv(Sweep sweep, const std::vector<AblationCell>& cells);

// ---- embedding export ----------------------------------------------------

struct EmbeddingTable {
  std::size_t series_dims = 0, views = 0, view_dims = 0;
  std::vector<std::int64_t> sample_ids;
  std::vector<std::int32_t> subject_ids, labels;
  std::vector<std::vector<double>> series;  // [N][C]
  std::vector<std::vector<double>> views_pooled;  // [N][V*d]
  std::vector<std::array<double, 2>> projection;  // first two principal axes of [series | views]
};

EmbeddingTable compute_embeddings(const enc::Encoder& encoder, const data::Corpus& corpus);
std::string embeddings_csv(const EmbeddingTable& table);

struct ViewSeparation {
  double inter_view_centroid_distance = 0.0;  // mean pairwise distance of per-view centroids
  double intra_view_dispersion = 0.0;  // mean distance of samples to their view centroid
};
ViewSeparation view_separation(const EmbeddingTable& table);

}  // namespace daac::pipe
