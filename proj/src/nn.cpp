#include "daac/nn.hpp"

#include <cmath>

#include "daac/binary_io.hpp"
#include "daac/errors.hpp"

namespace daac::nn {

Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(ad::numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor::from_data(std::move(shape), std::move(v), true);
}

Tensor ParamStore::add(const std::string& name, Tensor value) {
  if (contains(name)) throw ContractError("duplicate parameter name " + name);
  items_.emplace_back(name, value);
  return value;
}

Tensor ParamStore::get(const std::string& name) const {
  for (const auto& [n, t] : items_) {
    if (n == name) return t;
  }
  throw ContractError("unknown parameter " + name);
}

bool ParamStore::contains(const std::string& name) const {
  for (const auto& [n, t] : items_) {
    if (n == name) return true;
  }
  return false;
}

std::vector<Tensor> ParamStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(items_.size());
  for (const auto& [n, t] : items_) out.push_back(t);
  return out;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : items_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [n, t] : items_) {
    if (t.has_grad()) t.zero_grad();
  }
}

void ParamStore::assign_from(const ParamStore& other) {
  for (auto& [name, t] : items_) {
    Tensor src = other.get(name);
    if (src.shape() != t.shape()) {
      throw FormatError("parameter " + name + " shape " + ad::to_string(src.shape()) +
                        " does not match expected " + ad::to_string(t.shape()));
    }
    auto dst = t.mutable_data();
    std::copy(src.data().begin(), src.data().end(), dst.begin());
  }
}

void save_checkpoint(const ParamStore& params, const nlohmann::json& meta,
                     const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "daac-params";
  manifest["version"] = 1;
  manifest["dtype"] = "f64le";
  manifest["meta"] = meta;
  std::vector<char> blob;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [name, t] : params.items()) {
    entries.push_back({{"name", name}, {"shape", t.shape()}, {"offset", blob.size()}});
    for (double v : t.data()) io::append_le(blob, v);
  }
  manifest["params"] = entries;
  io::write_file(dir / "params.bin", blob);
  io::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

ParamStore load_checkpoint(const std::filesystem::path& dir, nlohmann::json* meta) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(io::read_text(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint manifest unreadable: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "daac-params" || manifest.value("version", 0) != 1) {
    throw FormatError("checkpoint " + dir.string() + ": unsupported format/version");
  }
  const auto blob = io::read_file(dir / "params.bin");
  ParamStore store;
  std::size_t expected_end = 0;
  for (const auto& e : manifest.at("params")) {
    Shape shape = e.at("shape").get<Shape>();
    const std::size_t offset = e.at("offset").get<std::size_t>();
    const std::size_t n = ad::numel(shape);
    if (offset + n * 8 > blob.size()) throw FormatError("checkpoint params.bin truncated");
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = io::read_le<double>(blob.data() + offset + i * 8);
    store.add(e.at("name").get<std::string>(), Tensor::from_data(std::move(shape), std::move(v), true));
    expected_end = std::max(expected_end, offset + n * 8);
  }
  if (expected_end != blob.size()) throw FormatError("checkpoint params.bin has trailing bytes");
  if (meta) *meta = manifest.value("meta", nlohmann::json::object());
  return store;
}

Adam::Adam(std::vector<Tensor> params, AdamOptions options)
    : params_(std::move(params)), opt_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto w = p.mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g[i];
      v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g[i] * g[i];
      w[i] -= opt_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + opt_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) {
    if (p.has_grad()) p.zero_grad();
  }
}

}  // namespace daac::nn
