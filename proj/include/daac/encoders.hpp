#pragma once

// Series encoder h(x): residual stack of same-padded dilated convolutions.
// View encoder g(x): multi-head self-attention over time where each head is
// kept as a separate view with its own output projection.
// Classifier head C(h, g): linear layer on time-pooled [h | flattened g].

#include <cstddef>

#include "daac/nn.hpp"
#include "daac/tensor.hpp"
#include "json.hpp"

namespace daac::enc {

using ad::Tensor;
using nn::ParamStore;
using nn::Rng;

struct EncoderConfig {
  std::size_t input_dims = 1;     // F' (raw channels plus discrepancy channels)
  std::size_t output_dims = 320;  // C
  std::size_t hidden_dims = 64;
  std::size_t depth = 10;
  std::size_t n_heads = 2;  // V
  std::size_t head_dim = 160;  // d
  std::size_t kernel_size = 3;

  void validate() const;
  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
};

class Encoder {
 public:
  Encoder(const EncoderConfig& config, Rng& rng);
  // Wraps loaded parameters; names and shapes must match a fresh encoder.
  Encoder(const EncoderConfig& config, const ParamStore& loaded);

  // [M, F', T] -> [M, T, C]
  Tensor encode_series(const Tensor& x) const;
  // [M, T, C] -> [M, T, V, d]
  Tensor encode_views(const Tensor& series) const;
  // Per-view attention weights [M, V, T, T] (rows sum to one).
  Tensor attention_weights(const Tensor& series) const;

  const EncoderConfig& config() const { return config_; }
  const ParamStore& params() const { return params_; }
  ParamStore& params() { return params_; }

 private:
  void build(Rng& rng);
  Tensor project_heads(const Tensor& series, const char* which) const;

  EncoderConfig config_;
  ParamStore params_;
};

// Time-mean of h [M,T,C] and g [M,T,V,d], concatenated to [M, C + V*d].
Tensor pool_features(const Tensor& series, const Tensor& views);

class ClassifierHead {
 public:
  ClassifierHead(std::size_t in_features, std::size_t n_classes, Rng& rng);
  ClassifierHead(std::size_t in_features, std::size_t n_classes, const ParamStore& loaded);

  Tensor logits(const Tensor& series, const Tensor& views) const;
  Tensor logits_from_pooled(const Tensor& pooled) const;

  std::size_t in_features() const { return in_; }
  std::size_t n_classes() const { return classes_; }
  const ParamStore& params() const { return params_; }
  ParamStore& params() { return params_; }

 private:
  std::size_t in_, classes_;
  ParamStore params_;
};

}  // namespace daac::enc
