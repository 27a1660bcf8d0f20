#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "daac/tensor.hpp"
#include "json.hpp"

namespace daac::nn {

using ad::Shape;
using ad::Tensor;
using Rng = std::mt19937_64;

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init, the usual conv/linear default.
Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng);

// Named, insertion-ordered trainable tensors.
class ParamStore {
 public:
  Tensor add(const std::string& name, Tensor value);
  Tensor get(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::vector<Tensor> tensors() const;
  std::size_t parameter_count() const;
  void zero_grad();

  // Copies values from `other`, matching by name and shape.
  void assign_from(const ParamStore& other);

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

// Checkpoint directory: manifest.json ({name, shape, offset} per tensor,
// offset in bytes into params.bin) plus params.bin of float64 LE values.
// `meta` is stored verbatim under "meta".
void save_checkpoint(const ParamStore& params, const nlohmann::json& meta,
                     const std::filesystem::path& dir);
ParamStore load_checkpoint(const std::filesystem::path& dir, nlohmann::json* meta = nullptr);

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options = {});
  void step();
  void zero_grad();
  std::int64_t steps() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamOptions opt_;
  std::int64_t t_ = 0;
};

}  // namespace daac::nn
