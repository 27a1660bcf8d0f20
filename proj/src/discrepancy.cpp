#include "daac/discrepancy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "daac/binary_io.hpp"
#include "daac/errors.hpp"

namespace daac::de {

namespace fs = std::filesystem;
using ad::Shape;
using nlohmann::json;

// ---- config ------------------------------------------------------------

void DeConfig::validate() const {
  if (channels < 1) throw ConfigError("DE channels must be >= 1");
  if (n_down < 2) throw ConfigError("DE n_down must be >= 2");
  const std::size_t factor = std::size_t{1} << n_down;
  if (length % factor != 0) {
    throw ConfigError("DE length " + std::to_string(length) + " must be divisible by " + std::to_string(factor));
  }
  if (hidden < 1 || latent_dim < 1 || batch < 1) throw ConfigError("DE widths and batch must be >= 1");
  if (!(external_ratio > 0.0 && external_ratio <= 1.0)) throw ConfigError("external_ratio must be in (0, 1]");
  if (!(lr > 0.0)) throw ConfigError("DE lr must be positive");
}

json DeConfig::to_json() const {
  return {{"channels", channels}, {"length", length},   {"hidden", hidden},
          {"latent_dim", latent_dim}, {"n_down", n_down}, {"epochs", epochs},
          {"lr", lr},             {"batch", batch},     {"external_ratio", external_ratio},
          {"adversarial", adversarial}, {"clusters", clusters}, {"seed", seed}};
}

DeConfig DeConfig::from_json(const json& j) {
  DeConfig c;
  const json known = c.to_json();
  for (const auto& [k, v] : j.items()) {
    if (!known.contains(k)) throw ConfigError("unknown DE config key '" + k + "'");
  }
  try {
    c.channels = j.value("channels", c.channels);
    c.length = j.value("length", c.length);
    c.hidden = j.value("hidden", c.hidden);
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.n_down = j.value("n_down", c.n_down);
    c.epochs = j.value("epochs", c.epochs);
    c.lr = j.value("lr", c.lr);
    c.batch = j.value("batch", c.batch);
    c.external_ratio = j.value("external_ratio", c.external_ratio);
    c.adversarial = j.value("adversarial", c.adversarial);
    c.clusters = j.value("clusters", c.clusters);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("DE config: ") + e.what());
  }
  return c;
}

// ---- networks ----------------------------------------------------------

namespace {

constexpr ad::Conv1dOptions kDown{2, 1, 1};            // kernel 4: halves the length
constexpr ad::ConvTranspose1dOptions kUp{2, 1, 0};     // kernel 4: doubles the length

std::size_t bottleneck_length(const DeConfig& c) { return c.length >> c.n_down; }

}  // namespace

GeneratorNet::GeneratorNet(const DeConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  build(rng);
}

GeneratorNet::GeneratorNet(const DeConfig& config, const ParamStore& loaded) : config_(config) {
  config_.validate();
  Rng rng(0);
  build(rng);
  params_.assign_from(loaded);
}

void GeneratorNet::build(Rng& rng) {
  const auto& c = config_;
  const std::size_t h = c.hidden, flat = h * bottleneck_length(c);
  for (std::size_t l = 0; l < c.n_down; ++l) {
    const std::size_t in = l == 0 ? c.channels : h;
    const std::string p = "gen.enc" + std::to_string(l);
    params_.add(p + ".weight", nn::uniform_init({h, in, 4}, in * 4, rng));
    params_.add(p + ".bias", Tensor::zeros({h}, true));
  }
  params_.add("gen.to_latent.weight", nn::uniform_init({flat, c.latent_dim}, flat, rng));
  params_.add("gen.to_latent.bias", Tensor::zeros({c.latent_dim}, true));
  params_.add("gen.from_latent.weight", nn::uniform_init({c.latent_dim, flat}, c.latent_dim, rng));
  params_.add("gen.from_latent.bias", Tensor::zeros({flat}, true));
  for (std::size_t l = 0; l < c.n_down; ++l) {
    const std::size_t out = l + 1 == c.n_down ? c.channels : h;
    const std::string p = "gen.dec" + std::to_string(l);
    params_.add(p + ".weight", nn::uniform_init({h, out, 4}, h * 4, rng));
    params_.add(p + ".bias", Tensor::zeros({out}, true));
  }
}

Tensor GeneratorNet::encode(const Tensor& x) const {
  const auto& c = config_;
  if (x.rank() != 3 || x.dim(1) != c.channels || x.dim(2) != c.length) {
    throw DimensionError("generator: expected [M, " + std::to_string(c.channels) + ", " + std::to_string(c.length) +
                         "], got " + ad::to_string(x.shape()));
  }
  Tensor z = x;
  for (std::size_t l = 0; l < c.n_down; ++l) {
    const std::string p = "gen.enc" + std::to_string(l);
    z = ad::relu(ad::conv1d(z, params_.get(p + ".weight"), params_.get(p + ".bias"), kDown));
  }
  const std::size_t m = x.dim(0);
  Tensor flat = ad::reshape(z, {m, c.hidden * bottleneck_length(c)});
  return ad::add_bias(ad::matmul(flat, params_.get("gen.to_latent.weight")), params_.get("gen.to_latent.bias"));
}

Tensor GeneratorNet::decode(const Tensor& latent) const {
  const auto& c = config_;
  if (latent.rank() != 2 || latent.dim(1) != c.latent_dim) throw DimensionError("generator: bad latent shape");
  const std::size_t m = latent.dim(0);
  Tensor flat = ad::relu(
      ad::add_bias(ad::matmul(latent, params_.get("gen.from_latent.weight")), params_.get("gen.from_latent.bias")));
  Tensor z = ad::reshape(flat, {m, c.hidden, bottleneck_length(c)});
  for (std::size_t l = 0; l < c.n_down; ++l) {
    const std::string p = "gen.dec" + std::to_string(l);
    z = ad::conv_transpose1d(z, params_.get(p + ".weight"), params_.get(p + ".bias"), kUp);
    if (l + 1 < c.n_down) z = ad::relu(z);
  }
  return z;
}

DiscriminatorNet::DiscriminatorNet(const DeConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  build(rng);
}

DiscriminatorNet::DiscriminatorNet(const DeConfig& config, const ParamStore& loaded) : config_(config) {
  config_.validate();
  Rng rng(0);
  build(rng);
  params_.assign_from(loaded);
}

void DiscriminatorNet::build(Rng& rng) {
  const auto& c = config_;
  const std::size_t h = c.hidden;
  params_.add("dis.conv0.weight", nn::uniform_init({h, c.channels, 4}, c.channels * 4, rng));
  params_.add("dis.conv0.bias", Tensor::zeros({h}, true));
  params_.add("dis.conv1.weight", nn::uniform_init({h, h, 4}, h * 4, rng));
  params_.add("dis.conv1.bias", Tensor::zeros({h}, true));
  params_.add("dis.conv2.weight", nn::uniform_init({1, h, 3}, h * 3, rng));
  params_.add("dis.conv2.bias", Tensor::zeros({1}, true));
}

Tensor DiscriminatorNet::logits(const Tensor& x) const {
  const auto& c = config_;
  if (x.rank() != 3 || x.dim(1) != c.channels || x.dim(2) != c.length) {
    throw DimensionError("discriminator: unexpected input shape " + ad::to_string(x.shape()));
  }
  Tensor z = ad::relu(ad::conv1d(x, params_.get("dis.conv0.weight"), params_.get("dis.conv0.bias"), kDown));
  z = ad::relu(ad::conv1d(z, params_.get("dis.conv1.weight"), params_.get("dis.conv1.bias"), kDown));
  z = ad::conv1d(z, params_.get("dis.conv2.weight"), params_.get("dis.conv2.bias"), {1, 1, 1});
  // Global average pooling over time.
  return ad::reshape(ad::mean(z, 2), {x.dim(0)});
}

Tensor discriminator_loss(const DiscriminatorNet& dis, const Tensor& real, const Tensor& fake) {
  const std::size_t m = real.dim(0);
  Tensor ones = Tensor::full({m}, 1.0), zeros = Tensor::zeros({m});
  return ad::scale(ad::add(ad::bce_with_logits(dis.logits(real), ones), ad::bce_with_logits(dis.logits(fake), zeros)),
                   0.5);
}

Tensor generator_loss(const DiscriminatorNet& dis, const Tensor& real, const Tensor& fake, bool adversarial) {
  Tensor recon = ad::mse(fake, real);
  if (!adversarial) return recon;
  Tensor ones = Tensor::full({real.dim(0)}, 1.0);
  return ad::add(ad::bce_with_logits(dis.logits(fake), ones), recon);
}

// ---- clustering --------------------------------------------------------

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace

double ClusterModel::nearest_distance(std::span<const double> point) const {
  if (!fitted()) throw ConfigError("cluster_distance requires a fitted cluster model");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& c : centroids) {
    if (c.size() != point.size()) throw DimensionError("cluster model dimension mismatch");
    best = std::min(best, sq_dist(c, point));
  }
  return std::sqrt(best);
}

ClusterModel fit_kmeans(const std::vector<std::vector<double>>& points, std::size_t k, std::uint64_t seed,
                        std::size_t max_iter) {
  if (points.empty()) throw ConfigError("k-means needs at least one point");
  k = std::max<std::size_t>(1, std::min(k, points.size()));
  Rng rng(seed);
  ClusterModel model;
  std::uniform_int_distribution<std::size_t> pick(0, points.size() - 1);
  model.centroids.push_back(points[pick(rng)]);
  std::vector<double> d2(points.size());
  while (model.centroids.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : model.centroids) best = std::min(best, sq_dist(points[i], c));
      d2[i] = best;
      total += best;
    }
    if (total <= 0.0) break;  // fewer distinct points than k
    std::uniform_real_distribution<double> u(0.0, total);
    double target = u(rng), acc = 0.0;
    std::size_t chosen = points.size() - 1;
    for (std::size_t i = 0; i < points.size(); ++i) {
      acc += d2[i];
      if (acc >= target) {
        chosen = i;
        break;
      }
    }
    model.centroids.push_back(points[chosen]);
  }
  const std::size_t dim = points[0].size();
  std::vector<std::size_t> assign(points.size(), 0);
  for (std::size_t it = 0; it < max_iter; ++it) {
    bool changed = it == 0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      std::size_t best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < model.centroids.size(); ++c) {
        const double d = sq_dist(points[i], model.centroids[c]);
        if (d < bd) bd = d, best = c;
      }
      if (assign[i] != best) changed = true;
      assign[i] = best;
    }
    if (!changed) break;
    std::vector<std::vector<double>> sums(model.centroids.size(), std::vector<double>(dim, 0.0));
    std::vector<std::size_t> counts(model.centroids.size(), 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
      for (std::size_t q = 0; q < dim; ++q) sums[assign[i]][q] += points[i][q];
      counts[assign[i]]++;
    }
    for (std::size_t c = 0; c < model.centroids.size(); ++c) {
      if (counts[c] == 0) continue;  // empty cluster keeps its centroid
      for (std::size_t q = 0; q < dim; ++q) model.centroids[c][q] = sums[c][q] / static_cast<double>(counts[c]);
    }
  }
  return model;
}

// ---- training ----------------------------------------------------------

namespace {

Tensor batch_tensor(const data::Corpus& corpus, std::span<const std::size_t> idx) {
  const std::size_t per = corpus.channels * corpus.length;
  std::vector<double> v;
  v.reserve(idx.size() * per);
  for (std::size_t i : idx) v.insert(v.end(), corpus.samples[i].values.begin(), corpus.samples[i].values.end());
  return Tensor::from_data({idx.size(), corpus.channels, corpus.length}, std::move(v));
}

std::vector<std::vector<double>> latents_of(const GeneratorNet& gen, const data::Corpus& corpus,
                                            const std::vector<std::size_t>& idx) {
  ad::NoGradGuard guard;
  std::vector<std::vector<double>> out;
  const std::size_t chunk = 64;
  for (std::size_t b = 0; b < idx.size(); b += chunk) {
    const std::size_t n = std::min(chunk, idx.size() - b);
    Tensor z = gen.encode(batch_tensor(corpus, std::span(idx).subspan(b, n)));
    const std::size_t dim = z.dim(1);
    for (std::size_t i = 0; i < n; ++i) out.emplace_back(z.data().begin() + i * dim, z.data().begin() + (i + 1) * dim);
  }
  return out;
}

}  // namespace

std::vector<std::int32_t> select_subjects(const data::Corpus& corpus, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("external ratio must be in (0, 1]");
  std::set<std::int32_t> ids;
  for (const auto& s : corpus.samples) ids.insert(s.subject_id);
  std::vector<std::int32_t> subjects(ids.begin(), ids.end());
  const auto keep = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(subjects.size()) - 1e-9));
  Rng rng(seed);
  std::shuffle(subjects.begin(), subjects.end(), rng);
  subjects.resize(std::max<std::size_t>(1, keep));
  std::sort(subjects.begin(), subjects.end());
  return subjects;
}

DeModel train_de(const data::Corpus& external, DeConfig config) {
  for (const auto& s : external.samples) {
    if (s.label != 0) throw ContractError("external corpus for the discrepancy estimator must contain only normal samples");
  }
  if (external.size() == 0) throw ContractError("external corpus is empty");
  config.channels = external.channels;
  config.length = external.length;
  config.validate();

  Rng rng(config.seed);
  GeneratorNet gen(config, rng);
  DiscriminatorNet dis(config, rng);
  DeModel model{config, gen, dis, {}, select_subjects(external, config.external_ratio, config.seed), {}};

  const std::set<std::int32_t> keep(model.subjects_used.begin(), model.subjects_used.end());
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < external.size(); ++i) {
    if (keep.count(external.samples[i].subject_id)) pool.push_back(i);
  }

  nn::Adam opt_g(model.generator.params().tensors(), {config.lr});
  nn::Adam opt_d(model.discriminator.params().tensors(), {config.lr});
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(pool.begin(), pool.end(), rng);
    EpochLog row{epoch + 1, 0.0, 0.0, 0.0};
    std::size_t batches = 0;
    try {
      for (std::size_t b = 0; b < pool.size(); b += config.batch) {
        const std::size_t n = std::min(config.batch, pool.size() - b);
        Tensor real = batch_tensor(external, std::span(pool).subspan(b, n));
        if (config.adversarial) {
          Tensor fake;
          {
            ad::NoGradGuard guard;
            fake = model.generator.reconstruct(real);
          }
          opt_d.zero_grad();
          Tensor ld = discriminator_loss(model.discriminator, real, fake);
          ad::backward(ld);
          opt_d.step();
          row.discriminator_loss += ld.item();
        }
        opt_g.zero_grad();
        Tensor fake = model.generator.reconstruct(real);
        Tensor lg = generator_loss(model.discriminator, real, fake, config.adversarial);
        ad::backward(lg);
        opt_g.step();
        row.generator_loss += lg.item();
        row.reconstruction += ad::mse(fake.detach(), real).item();
        ++batches;
      }
    } catch (const DomainError& e) {
      throw TrainingError(std::string("discrepancy estimator diverged: ") + e.what(), static_cast<int>(epoch + 1));
    }
    row.discriminator_loss /= static_cast<double>(batches);
    row.generator_loss /= static_cast<double>(batches);
    row.reconstruction /= static_cast<double>(batches);
    if (!std::isfinite(row.generator_loss) || !std::isfinite(row.discriminator_loss)) {
      throw TrainingError("discrepancy estimator loss is not finite", static_cast<int>(epoch + 1));
    }
    model.log.push_back(row);
  }
  model.discriminator.params().zero_grad();
  model.clusters = fit_kmeans(latents_of(model.generator, external, pool), config.clusters, config.seed);
  return model;
}

std::string de_log_csv(const std::vector<EpochLog>& log) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,discriminator_loss,generator_loss,reconstruction_mse\n";
  for (const auto& r : log) os << r.epoch << ',' << r.discriminator_loss << ',' << r.generator_loss << ',' << r.reconstruction << '\n';
  return os.str();
}

void save_de(const DeModel& model, const fs::path& dir) {
  ParamStore all;
  for (const auto& [n, t] : model.generator.params().items()) all.add(n, t);
  for (const auto& [n, t] : model.discriminator.params().items()) all.add(n, t);
  json meta{{"kind", "discrepancy_estimator"},
            {"config", model.config.to_json()},
            {"centroids", model.clusters.centroids},
            {"subjects_used", model.subjects_used}};
  nn::save_checkpoint(all, meta, dir);
  io::write_text(dir / "de_log.csv", de_log_csv(model.log));
}

DeModel load_de(const fs::path& dir) {
  json meta;
  ParamStore all = nn::load_checkpoint(dir, &meta);
  if (meta.value("kind", "") != "discrepancy_estimator") throw FormatError(dir.string() + " is not a DE checkpoint");
  const DeConfig cfg = DeConfig::from_json(meta.at("config"));
  DeModel model{cfg, GeneratorNet(cfg, all), DiscriminatorNet(cfg, all), {}, {}, {}};
  model.clusters.centroids = meta.value("centroids", std::vector<std::vector<double>>{});
  model.subjects_used = meta.value("subjects_used", std::vector<std::int32_t>{});
  return model;
}

// ---- inference ---------------------------------------------------------

DiscrepancyMode parse_mode(const std::string& name) {
  if (name == "sequence_scalar") return DiscrepancyMode::kSequenceScalar;
  if (name == "channel_vector") return DiscrepancyMode::kChannelVector;
  if (name == "pointwise_sequence") return DiscrepancyMode::kPointwiseSequence;
  if (name == "cluster_distance") return DiscrepancyMode::kClusterDistance;
  throw ConfigError("unknown discrepancy mode '" + name + "'");
}

std::string mode_name(DiscrepancyMode mode) {
  switch (mode) {
    case DiscrepancyMode::kSequenceScalar: return "sequence_scalar";
    case DiscrepancyMode::kChannelVector: return "channel_vector";
    case DiscrepancyMode::kPointwiseSequence: return "pointwise_sequence";
    case DiscrepancyMode::kClusterDistance: return "cluster_distance";
  }
  return "sequence_scalar";
}

namespace {

DiscrepancyFeature feature_from(std::span<const double> x, std::span<const double> recon,
                                std::span<const double> latent, std::size_t f, std::size_t t,
                                DiscrepancyMode mode, const ClusterModel* clusters) {
  DiscrepancyFeature out{mode, {}};
  switch (mode) {
    case DiscrepancyMode::kSequenceScalar: {
      double s = 0.0;
      for (std::size_t i = 0; i < f * t; ++i) s += (recon[i] - x[i]) * (recon[i] - x[i]);
      out.values = {s / static_cast<double>(f * t)};
      break;
    }
    case DiscrepancyMode::kChannelVector: {
      out.values.assign(f, 0.0);
      for (std::size_t c = 0; c < f; ++c) {
        for (std::size_t k = 0; k < t; ++k) {
          const double d = recon[c * t + k] - x[c * t + k];
          out.values[c] += d * d;
        }
        out.values[c] /= static_cast<double>(t);
      }
      break;
    }
    case DiscrepancyMode::kPointwiseSequence: {
      out.values.assign(t, 0.0);
      for (std::size_t k = 0; k < t; ++k) {
        for (std::size_t c = 0; c < f; ++c) {
          const double d = recon[c * t + k] - x[c * t + k];
          out.values[k] += d * d;
        }
        out.values[k] /= static_cast<double>(f);
      }
      break;
    }
    case DiscrepancyMode::kClusterDistance:
      if (!clusters || !clusters->fitted()) throw ConfigError("cluster_distance mode requires a fitted cluster model");
      out.values = {clusters->nearest_distance(latent)};
      break;
  }
  return out;
}

}  // namespace

double reconstruction_error(const GeneratorNet& gen, std::span<const double> sample) {
  const auto& c = gen.config();
  if (sample.size() != c.channels * c.length) {
    throw DimensionError("reconstruction_error: expected " + std::to_string(c.channels * c.length) + " values");
  }
  return compute_discrepancy(gen, sample, DiscrepancyMode::kSequenceScalar).values[0];
}

DiscrepancyFeature compute_discrepancy(const GeneratorNet& gen, std::span<const double> sample, DiscrepancyMode mode,
                                       const ClusterModel* clusters) {
  const auto& c = gen.config();
  if (sample.size() != c.channels * c.length) throw DimensionError("compute_discrepancy: sample shape mismatch");
  if (mode == DiscrepancyMode::kClusterDistance && (!clusters || !clusters->fitted())) {
    throw ConfigError("cluster_distance mode requires a fitted cluster model");
  }
  ad::NoGradGuard guard;
  Tensor x = Tensor::from_data({1, c.channels, c.length}, {sample.begin(), sample.end()});
  Tensor z = gen.encode(x);
  Tensor r = gen.decode(z);
  return feature_from(sample, r.data(), z.data(), c.channels, c.length, mode, clusters);
}

std::vector<DiscrepancyFeature> compute_discrepancies(const GeneratorNet& gen, const data::Corpus& corpus,
                                                      DiscrepancyMode mode, const ClusterModel* clusters) {
  const auto& c = gen.config();
  if (corpus.channels != c.channels || corpus.length != c.length) {
    throw DimensionError("corpus dims do not match the discrepancy estimator");
  }
  if (mode == DiscrepancyMode::kClusterDistance && (!clusters || !clusters->fitted())) {
    throw ConfigError("cluster_distance mode requires a fitted cluster model");
  }
  ad::NoGradGuard guard;
  std::vector<DiscrepancyFeature> out;
  out.reserve(corpus.size());
  const std::size_t chunk = 64, per = c.channels * c.length;
  std::vector<std::size_t> idx(corpus.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t b = 0; b < idx.size(); b += chunk) {
    const std::size_t n = std::min(chunk, idx.size() - b);
    Tensor x = batch_tensor(corpus, std::span(idx).subspan(b, n));
    Tensor z = gen.encode(x);
    Tensor r = gen.decode(z);
    const std::size_t ld = z.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
      out.push_back(feature_from(x.data().subspan(i * per, per), r.data().subspan(i * per, per),
                                 z.data().subspan(i * ld, ld), c.channels, c.length, mode, clusters));
    }
  }
  return out;
}

data::Corpus augment_corpus(const GeneratorNet& gen, data::Corpus target, DiscrepancyMode mode,
                            const ClusterModel* clusters) {
  if (target.provenance.contains("augmentation")) {
    throw ContractError("corpus is already augmented (mode " +
                        target.provenance["augmentation"].value("mode", std::string("?")) + ")");
  }
  const auto features = compute_discrepancies(gen, target, mode, clusters);
  auto fit_on = target.indices(data::Split::kTrain);
  if (fit_on.empty()) {
    fit_on.resize(target.size());
    std::iota(fit_on.begin(), fit_on.end(), 0);
  }
  const std::size_t width = features.empty() ? 0 : features[0].values.size();
  const bool pooled = mode == DiscrepancyMode::kPointwiseSequence;
  const std::size_t n_stats = pooled ? 1 : width;
  std::vector<double> mean(n_stats, 0.0), stdev(n_stats, 1.0);
  for (std::size_t k = 0; k < n_stats; ++k) {
    std::vector<double> vals;
    for (std::size_t i : fit_on) {
      if (pooled) {
        vals.insert(vals.end(), features[i].values.begin(), features[i].values.end());
      } else {
        vals.push_back(features[i].values[k]);
      }
    }
    const double mu = std::accumulate(vals.begin(), vals.end(), 0.0) / static_cast<double>(vals.size());
    double ss = 0.0;
    for (double v : vals) ss += (v - mu) * (v - mu);
    const double sd = std::sqrt(ss / static_cast<double>(vals.size()));
    mean[k] = mu;
    stdev[k] = sd > 1e-12 ? sd : 1.0;
  }

  const std::size_t F = target.channels, T = target.length;
  const std::size_t extra = pooled ? 1 : width;
  for (std::size_t i = 0; i < target.size(); ++i) {
    auto& values = target.samples[i].values;
    values.resize((F + extra) * T);
    const auto& f = features[i].values;
    for (std::size_t e = 0; e < extra; ++e) {
      for (std::size_t t = 0; t < T; ++t) {
        const double raw = pooled ? f[t] : f[e];
        const std::size_t k = pooled ? 0 : e;
        values[(F + e) * T + t] = static_cast<float>((raw - mean[k]) / stdev[k]);
      }
    }
  }
  target.channels = F + extra;
  target.provenance["augmentation"] = json{{"mode", mode_name(mode)},
                                           {"base_channels", F},
                                           {"extra_channels", extra},
                                           {"mean", mean},
                                           {"std", stdev}};
  target.validate();
  return target;
}

json AnomalyReport::to_json() const {
  return {{"auroc", auroc}, {"n", errors.size()}, {"histogram_bins", histogram.normal.size()}};
}

AnomalyReport anomaly_report(const GeneratorNet& gen, const data::Corpus& target) {
  AnomalyReport rep;
  for (const auto& s : target.samples) rep.labels.push_back(s.label);
  for (const auto& f : compute_discrepancies(gen, target, DiscrepancyMode::kSequenceScalar)) {
    rep.errors.push_back(f.values[0]);
  }
  rep.auroc = eval::auroc(rep.errors, rep.labels);
  rep.histogram = eval::error_histogram(rep.errors, rep.labels, 50);
  return rep;
}

}  // namespace daac::de
