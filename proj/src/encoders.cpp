#include "daac/encoders.hpp"

#include <cmath>
#include <string>

#include "daac/errors.hpp"

namespace daac::enc {

using ad::Shape;
using nlohmann::json;

void EncoderConfig::validate() const {
  if (input_dims < 1) throw ConfigError("encoder input_dims must be >= 1");
  if (depth < 1) throw ConfigError("encoder depth must be >= 1");
  if (hidden_dims < 1 || output_dims < 1 || n_heads < 1 || head_dim < 1) {
    throw ConfigError("encoder widths must be >= 1");
  }
  if (n_heads * head_dim != output_dims) {
    throw ConfigError("encoder n_heads * head_dim (" + std::to_string(n_heads * head_dim) +
                      ") must equal output_dims (" + std::to_string(output_dims) + ")");
  }
  if (kernel_size % 2 == 0) throw ConfigError("encoder kernel_size must be odd");
}

json EncoderConfig::to_json() const {
  return {{"input_dims", input_dims}, {"output_dims", output_dims}, {"hidden_dims", hidden_dims},
          {"depth", depth},           {"n_heads", n_heads},         {"head_dim", head_dim},
          {"kernel_size", kernel_size}};
}

EncoderConfig EncoderConfig::from_json(const json& j) {
  EncoderConfig c;
  const json known = c.to_json();
  for (const auto& [k, v] : j.items()) {
    if (!known.contains(k)) throw ConfigError("unknown encoder config key '" + k + "'");
  }
  try {
    c.input_dims = j.value("input_dims", c.input_dims);
    c.output_dims = j.value("output_dims", c.output_dims);
    c.hidden_dims = j.value("hidden_dims", c.hidden_dims);
    c.depth = j.value("depth", c.depth);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.head_dim = j.value("head_dim", c.head_dim);
    c.kernel_size = j.value("kernel_size", c.kernel_size);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("encoder config: ") + e.what());
  }
  return c;
}

Encoder::Encoder(const EncoderConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  build(rng);
}

Encoder::Encoder(const EncoderConfig& config, const ParamStore& loaded) : config_(config) {
  config_.validate();
  Rng rng(0);
  build(rng);
  params_.assign_from(loaded);
}

void Encoder::build(Rng& rng) {
  const auto& c = config_;
  const std::size_t h = c.hidden_dims, k = c.kernel_size;
  params_.add("series.input.weight", nn::uniform_init({h, c.input_dims, 1}, c.input_dims, rng));
  params_.add("series.input.bias", Tensor::zeros({h}, true));
  for (std::size_t l = 0; l < c.depth; ++l) {
    const std::string p = "series.block" + std::to_string(l);
    params_.add(p + ".weight", nn::uniform_init({h, h, k}, h * k, rng));
    params_.add(p + ".bias", Tensor::zeros({h}, true));
  }
  params_.add("series.output.weight", nn::uniform_init({c.output_dims, h, 1}, h, rng));
  params_.add("series.output.bias", Tensor::zeros({c.output_dims}, true));

  const std::size_t vd = c.n_heads * c.head_dim;
  for (const char* which : {"query", "key", "value"}) {
    params_.add(std::string("views.") + which + ".weight", nn::uniform_init({c.output_dims, vd}, c.output_dims, rng));
    params_.add(std::string("views.") + which + ".bias", Tensor::zeros({vd}, true));
  }
  params_.add("views.output.weight", nn::uniform_init({c.n_heads, c.head_dim, c.head_dim}, c.head_dim, rng));
  params_.add("views.output.bias", Tensor::zeros({c.n_heads, c.head_dim}, true));
}

Tensor Encoder::encode_series(const Tensor& x) const {
  const auto& c = config_;
  if (x.rank() != 3 || x.dim(1) != c.input_dims) {
    throw DimensionError("encode_series: expected [M, " + std::to_string(c.input_dims) + ", T], got " +
                         ad::to_string(x.shape()));
  }
  Tensor z = ad::conv1d(x, params_.get("series.input.weight"), params_.get("series.input.bias"));
  std::size_t dilation = 1;
  for (std::size_t l = 0; l < c.depth; ++l) {
    const std::string p = "series.block" + std::to_string(l);
    ad::Conv1dOptions opt{1, dilation, ad::same_padding(c.kernel_size, dilation)};
    z = ad::add(z, ad::relu(ad::conv1d(z, params_.get(p + ".weight"), params_.get(p + ".bias"), opt)));
    dilation *= 2;
  }
  Tensor out = ad::conv1d(z, params_.get("series.output.weight"), params_.get("series.output.bias"));
  return ad::permute(out, {0, 2, 1});
}

// Linear map of the series to per-head rows [M*V, T, d].
Tensor Encoder::project_heads(const Tensor& series, const char* which) const {
  const auto& c = config_;
  const std::size_t m = series.dim(0), t = series.dim(1);
  const std::string p = std::string("views.") + which;
  Tensor flat = ad::reshape(series, {m * t, c.output_dims});
  Tensor proj = ad::add_bias(ad::matmul(flat, params_.get(p + ".weight")), params_.get(p + ".bias"));
  Tensor heads = ad::permute(ad::reshape(proj, {m, t, c.n_heads, c.head_dim}), {0, 2, 1, 3});
  return ad::reshape(heads, {m * c.n_heads, t, c.head_dim});
}

Tensor Encoder::attention_weights(const Tensor& series) const {
  const auto& c = config_;
  if (series.rank() != 3 || series.dim(2) != c.output_dims) {
    throw DimensionError("encode_views: expected [M, T, " + std::to_string(c.output_dims) + "], got " +
                         ad::to_string(series.shape()));
  }
  Tensor q = project_heads(series, "query");
  Tensor k = project_heads(series, "key");
  Tensor scores = ad::scale(ad::matmul(q, ad::transpose(k, 1, 2)), 1.0 / std::sqrt(static_cast<double>(c.head_dim)));
  Tensor att = ad::softmax(scores, 2);
  const std::size_t m = series.dim(0), t = series.dim(1);
  return ad::reshape(att, {m, c.n_heads, t, t});
}

Tensor Encoder::encode_views(const Tensor& series) const {
  const auto& c = config_;
  Tensor att = attention_weights(series);
  const std::size_t m = series.dim(0), t = series.dim(1), v = c.n_heads, d = c.head_dim;
  Tensor vals = project_heads(series, "value");
  Tensor heads = ad::matmul(ad::reshape(att, {m * v, t, t}), vals);  // [M*V, T, d]
  // Per-view output projection: [V, M*T, d] x [V, d, d].
  Tensor by_view = ad::reshape(ad::permute(ad::reshape(heads, {m, v, t, d}), {1, 0, 2, 3}), {v, m * t, d});
  Tensor projected = ad::matmul(by_view, params_.get("views.output.weight"));
  Tensor rows = ad::permute(projected, {1, 0, 2});  // [M*T, V, d]
  Tensor biased = ad::add_bias(rows, params_.get("views.output.bias"));
  return ad::reshape(biased, {m, t, v, d});
}

Tensor pool_features(const Tensor& series, const Tensor& views) {
  if (series.rank() != 3 || views.rank() != 4 || series.dim(0) != views.dim(0)) {
    throw DimensionError("pool_features: expected h [M,T,C] and g [M,T,V,d] from one batch");
  }
  const std::size_t m = series.dim(0);
  Tensor h = ad::mean(series, 1);
  Tensor g = ad::reshape(ad::mean(views, 1), {m, views.dim(2) * views.dim(3)});
  return ad::concat({h, g}, 1);
}

ClassifierHead::ClassifierHead(std::size_t in_features, std::size_t n_classes, Rng& rng)
    : in_(in_features), classes_(n_classes) {
  params_.add("classifier.weight", nn::uniform_init({in_features, n_classes}, in_features, rng));
  params_.add("classifier.bias", Tensor::zeros({n_classes}, true));
}

ClassifierHead::ClassifierHead(std::size_t in_features, std::size_t n_classes, const ParamStore& loaded)
    : in_(in_features), classes_(n_classes) {
  params_.add("classifier.weight", Tensor::zeros({in_features, n_classes}, true));
  params_.add("classifier.bias", Tensor::zeros({n_classes}, true));
  params_.assign_from(loaded);
}

Tensor ClassifierHead::logits(const Tensor& series, const Tensor& views) const {
  return logits_from_pooled(pool_features(series, views));
}

Tensor ClassifierHead::logits_from_pooled(const Tensor& pooled) const {
  if (pooled.rank() != 2 || pooled.dim(1) != in_) {
    throw DimensionError("classifier: expected [M, " + std::to_string(in_) + "] features");
  }
  return ad::add_bias(ad::matmul(pooled, params_.get("classifier.weight")), params_.get("classifier.bias"));
}

}  // namespace daac::enc
