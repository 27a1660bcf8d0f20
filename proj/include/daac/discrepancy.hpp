#pragma once

// Stage-1 discrepancy estimator: an encoder-decoder generator trained
// adversarially on external normal data, whose reconstruction error on a
// target sample becomes an extra input feature.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "daac/data.hpp"
#include "daac/evaluation.hpp"
#include "daac/nn.hpp"
#include "json.hpp"

namespace daac::de {

using ad::Tensor;
using nn::ParamStore;
using nn::Rng;

struct DeConfig {
  std::size_t channels = 1;
  std::size_t length = 64;
  std::size_t hidden = 32;       // conv width of generator and discriminator
  std::size_t latent_dim = 64;
  std::size_t n_down = 4;        // stride-2 conv layers; length must divide by 2^n_down
  std::size_t epochs = 30;
  double lr = 1e-3;
  std::size_t batch = 32;
  double external_ratio = 1.0;
  bool adversarial = true;
  std::size_t clusters = 8;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static DeConfig from_json(const nlohmann::json& j);
};

class GeneratorNet {
 public:
  GeneratorNet(const DeConfig& config, Rng& rng);
  GeneratorNet(const DeConfig& config, const ParamStore& loaded);

  Tensor encode(const Tensor& x) const;  // [M, F, T] -> [M, latent]
  Tensor decode(const Tensor& z) const;  // [M, latent] -> [M, F, T]
  Tensor reconstruct(const Tensor& x) const { return decode(encode(x)); }

  const DeConfig& config() const { return config_; }
  const ParamStore& params() const { return params_; }
  ParamStore& params() { return params_; }

 private:
  void build(Rng& rng);
  DeConfig config_;
  ParamStore params_;
};

class DiscriminatorNet {
 public:
  DiscriminatorNet(const DeConfig& config, Rng& rng);
  DiscriminatorNet(const DeConfig& config, const ParamStore& loaded);

  Tensor logits(const Tensor& x) const;  // [M, F, T] -> [M]
  Tensor probability(const Tensor& x) const { return ad::sigmoid(logits(x)); }

  const ParamStore& params() const { return params_; }
  ParamStore& params() { return params_; }

 private:
  void build(Rng& rng);
  DeConfig config_;
  ParamStore params_;
};

// L_D = (BCE(D(real), 1) + BCE(D(fake), 0)) / 2
Tensor discriminator_loss(const DiscriminatorNet& dis, const Tensor& real, const Tensor& fake);
// L_G = BCE(D(fake), 1) + MSE(fake, real); adversarial term dropped when disabled.
Tensor generator_loss(const DiscriminatorNet& dis, const Tensor& real, const Tensor& fake, bool adversarial = true);

struct ClusterModel {
  std::vector<std::vector<double>> centroids;
  bool fitted() const { return !centroids.empty(); }
  double nearest_distance(std::span<const double> point) const;
};
// k-means++ seeding followed by Lloyd iterations; k is capped at the number of points.
ClusterModel fit_kmeans(const std::vector<std::vector<double>>& points, std::size_t k, std::uint64_t seed,
                        std::size_t max_iter = 100);

struct EpochLog {
  std::size_t epoch = 0;
  double discriminator_loss = 0.0;
  double generator_loss = 0.0;
  double reconstruction = 0.0;
};

struct DeModel {
  DeConfig config;
  GeneratorNet generator;
  DiscriminatorNet discriminator;
  ClusterModel clusters;
  std::vector<std::int32_t> subjects_used;
  std::vector<EpochLog> log;
};

// Subjects kept for an external ratio r: ceil(r * n) ids chosen by seed.
std::vector<std::int32_t> select_subjects(const data::Corpus& corpus, double ratio, std::uint64_t seed);

// Trains on the external corpus (every label must be 0). Batches alternate a
// discriminator step then a generator step.
DeModel train_de(const data::Corpus& external, DeConfig config);

std::string de_log_csv(const std::vector<EpochLog>& log);
void save_de(const DeModel& model, const std::filesystem::path& dir);
DeModel load_de(const std::filesystem::path& dir);

// Mean over F*T positions of (G(x) - x)^2.
double reconstruction_error(const GeneratorNet& gen, std::span<const double> sample);

enum class DiscrepancyMode { kSequenceScalar, kChannelVector, kPointwiseSequence, kClusterDistance };
DiscrepancyMode parse_mode(const std::string& name);
std::string mode_name(DiscrepancyMode mode);

struct DiscrepancyFeature {
  DiscrepancyMode mode = DiscrepancyMode::kSequenceScalar;
  std::vector<double> values;  // 1, F, T or 1 entries by mode
};

DiscrepancyFeature compute_discrepancy(const GeneratorNet& gen, std::span<const double> sample,
                                       DiscrepancyMode mode, const ClusterModel* clusters = nullptr);

// Batched discrepancy for every sample of a corpus.
std::vector<DiscrepancyFeature> compute_discrepancies(const GeneratorNet& gen, const data::Corpus& corpus,
                                                      DiscrepancyMode mode, const ClusterModel* clusters = nullptr);

// Appends z-normalised discrepancy channels (statistics from the training
// split, or all samples when no split is assigned).
data::Corpus augment_corpus(const GeneratorNet& gen, data::Corpus target, DiscrepancyMode mode,
                            const ClusterModel* clusters = nullptr);

struct AnomalyReport {
  std::vector<double> errors;
  std::vector<int> labels;
  double auroc = 0.0;
  eval::ErrorHistogram histogram;
  nlohmann::json to_json() const;
};
AnomalyReport anomaly_report(const GeneratorNet& gen, const data::Corpus& target);

}  // namespace daac::de
