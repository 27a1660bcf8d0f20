#include "daac/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "daac/errors.hpp"

namespace daac::ad {

namespace {

thread_local bool g_grad_enabled = true;

using NodePtr = std::shared_ptr<Node>;

void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw DomainError(std::string("non-finite value produced by ") + op);
    }
  }
}

// Builds the output node. The backward closure and parents are only kept
// when recording is enabled and some input requires grad.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<NodePtr> parents,
                   const char* op, std::function<void(Node&)> backward_fn) {
  check_finite(value, op);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) needs = needs || p->requires_grad;
  }
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(node);
}

const NodePtr& req(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
  return t.node_ptr();
}

// Splits `shape` around `axis` into outer * n * inner.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + to_string(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out.push_back(shape[i]);
  }
  return out;
}

enum class Broadcast { kSame, kLeftScalar, kRightScalar };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (b.numel() == 1) return Broadcast::kRightScalar;
  if (a.numel() == 1) return Broadcast::kLeftScalar;
  throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                       to_string(b.shape()));
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

// C[m,n] += A[m,k] * B[k,n]
void mm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
           std::size_t n) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k), N = static_cast<Eigen::Index>(n);
  MMap(c, M, N).noalias() += CMap(a, M, K) * CMap(b, K, N);
}

// dA[m,k] += G[m,n] * B[k,n]^T
void mm_nt(const double* g, const double* b, double* da, std::size_t m, std::size_t n,
           std::size_t k) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k), N = static_cast<Eigen::Index>(n);
  MMap(da, M, K).noalias() += CMap(g, M, N) * CMap(b, K, N).transpose();
}

// dB[k,n] += A[m,k]^T * G[m,n]
void mm_tn(const double* a, const double* g, double* db, std::size_t m, std::size_t k,
           std::size_t n) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k), N = static_cast<Eigen::Index>(n);
  MMap(db, K, N).noalias() += CMap(a, M, K).transpose() * CMap(g, M, N);
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

}  // namespace

// ---- basics ------------------------------------------------------------

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

std::vector<double>& Node::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = daac::ad::numel(shape);
  return from_data(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  if (daac::ad::numel(shape) != data.size()) {
    throw DimensionError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + to_string(shape));
  }
  check_finite(data, "tensor construction");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(node);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return req(*this, "shape")->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw DimensionError("dim: axis out of range for " + to_string(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return req(*this, "numel")->value.size(); }
std::span<const double> Tensor::data() const { return req(*this, "data")->value; }
std::span<double> Tensor::mutable_data() { return req(*this, "mutable_data")->value; }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item: tensor has " + std::to_string(numel()) + " elements");
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw DimensionError("at: index rank mismatch");
  const auto st = strides_of(s);
  std::size_t off = 0, i = 0;
  for (std::size_t v : index) {
    if (v >= s[i]) throw DimensionError("at: index out of range");
    off += v * st[i++];
  }
  return node_->value[off];
}

bool Tensor::requires_grad() const { return req(*this, "requires_grad")->requires_grad; }
bool Tensor::has_grad() const { return defined() && !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return req(*this, "grad")->grad; }
std::span<double> Tensor::mutable_grad() { return req(*this, "grad")->ensure_grad(); }

void Tensor::zero_grad() {
  auto& g = req(*this, "zero_grad")->grad;
  std::fill(g.begin(), g.end(), 0.0);
}

Tensor Tensor::detach() const {
  auto node = std::make_shared<Node>();
  node->shape = shape();
  node->value = node_->value;
  return Tensor(node);
}

void backward(const Tensor& loss) {
  const auto& root = req(loss, "backward");
  if (root->value.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + to_string(root->shape));
  }
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order with each node once.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    node->ensure_grad();
    if (node->backward_fn) node->backward_fn(*node);
  }
}

// ---- elementwise -------------------------------------------------------

namespace {

template <typename Fwd, typename GradA, typename GradB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, GradA ga, GradB gb) {
  const auto kind = broadcast_kind(a, b, op);
  const Shape out_shape = kind == Broadcast::kLeftScalar ? b.shape() : a.shape();
  const std::size_t n = numel(out_shape);
  auto av = a.data();
  auto bv = b.data();
  auto ia = [&](std::size_t i) { return kind == Broadcast::kLeftScalar ? 0 : i; };
  auto ib = [&](std::size_t i) { return kind == Broadcast::kRightScalar ? 0 : i; };
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[ia(i)], bv[ib(i)]);
  return make_result(out_shape, std::move(out), {a.node_ptr(), b.node_ptr()}, op,
                     [kind, n, ga, gb](Node& self) {
                       Node& pa = *self.parents[0];
                       Node& pb = *self.parents[1];
                       auto ia = [&](std::size_t i) { return kind == Broadcast::kLeftScalar ? 0 : i; };
                       auto ib = [&](std::size_t i) { return kind == Broadcast::kRightScalar ? 0 : i; };
                       if (pa.requires_grad) {
                         auto& g = pa.ensure_grad();
                         for (std::size_t i = 0; i < n; ++i)
                           g[ia(i)] += self.grad[i] * ga(pa.value[ia(i)], pb.value[ib(i)]);
                       }
                       if (pb.requires_grad) {
                         auto& g = pb.ensure_grad();
                         for (std::size_t i = 0; i < n; ++i)
                           g[ib(i)] += self.grad[i] * gb(pa.value[ia(i)], pb.value[ib(i)]);
                       }
                     });
}

// Unary op whose derivative is expressed through input x and output y.
template <typename Fwd, typename Deriv>
Tensor unary_op(const Tensor& a, const char* op, Fwd fwd, Deriv deriv) {
  auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  return make_result(a.shape(), std::move(out), {a.node_ptr()}, op, [deriv](Node& self) {
    Node& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * deriv(p.value[i], self.value[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double factor) {
  return unary_op(
      a, "scale", [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

Tensor shift(const Tensor& a, double offset) {
  return unary_op(
      a, "shift", [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor exp(const Tensor& a) {
  return unary_op(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  for (double v : a.data()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive input " + std::to_string(v));
  }
  return unary_op(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a, "sigmoid",
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor apply_mask(const Tensor& x, const Tensor& mask) {
  if (x.shape() != mask.shape()) {
    throw DimensionError("apply_mask: shape mismatch " + to_string(x.shape()) + " vs " +
                         to_string(mask.shape()));
  }
  for (double m : mask.data()) {
    if (m != 0.0 && m != 1.0) throw DomainError("apply_mask: mask entries must be 0 or 1");
  }
  return mul(x, mask.detach());
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const auto& xs = x.shape();
  const auto& bs = bias.shape();
  if (bs.size() > xs.size() || !std::equal(bs.begin(), bs.end(), xs.end() - bs.size())) {
    throw DimensionError("add_bias: bias shape " + to_string(bs) +
                         " is not a trailing suffix of " + to_string(xs));
  }
  const std::size_t inner = bias.numel();
  auto xv = x.data();
  auto bv = bias.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] + bv[i % inner];
  return make_result(xs, std::move(out), {x.node_ptr(), bias.node_ptr()}, "add_bias",
                     [inner](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pb = *self.parents[1];
                       if (px.requires_grad) {
                         auto& g = px.ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                       }
                       if (pb.requires_grad) {
                         auto& g = pb.ensure_grad();
                         for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % inner] += self.grad[i];
                       }
                     });
}

// ---- linear algebra ----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  std::size_t batch = 1, m = 0, k = 0, n = 0;
  bool shared_b = false;
  if (as.size() == 2 && bs.size() == 2) {
    m = as[0], k = as[1], n = bs[1];
    if (bs[0] != k) throw DimensionError("matmul: inner dims differ " + to_string(as) + " x " + to_string(bs));
    shared_b = true;
  } else if (as.size() == 3 && bs.size() == 3) {
    batch = as[0], m = as[1], k = as[2], n = bs[2];
    if (bs[0] != batch || bs[1] != k)
      throw DimensionError("matmul: incompatible " + to_string(as) + " x " + to_string(bs));
  } else if (as.size() == 3 && bs.size() == 2) {
    batch = as[0], m = as[1], k = as[2], n = bs[1];
    if (bs[0] != k) throw DimensionError("matmul: incompatible " + to_string(as) + " x " + to_string(bs));
    shared_b = true;
  } else {
    throw DimensionError("matmul: unsupported ranks " + to_string(as) + " x " + to_string(bs));
  }
  Shape out_shape = as.size() == 2 ? Shape{m, n} : Shape{batch, m, n};
  std::vector<double> out(batch * m * n, 0.0);
  const double* ap = a.data().data();
  const double* bp = b.data().data();
  const std::size_t b_stride = shared_b ? 0 : k * n;
  for (std::size_t q = 0; q < batch; ++q) {
    mm_nn(ap + q * m * k, bp + q * b_stride, out.data() + q * m * n, m, k, n);
  }
  return make_result(std::move(out_shape), std::move(out), {a.node_ptr(), b.node_ptr()}, "matmul",
                     [batch, m, k, n, b_stride](Node& self) {
                       Node& pa = *self.parents[0];
                       Node& pb = *self.parents[1];
                       for (std::size_t q = 0; q < batch; ++q) {
                         const double* g = self.grad.data() + q * m * n;
                         if (pa.requires_grad) {
                           mm_nt(g, pb.value.data() + q * b_stride, pa.ensure_grad().data() + q * m * k,
                                 m, n, k);
                         }
                         if (pb.requires_grad) {
                           mm_tn(pa.value.data() + q * m * k, g, pb.ensure_grad().data() + q * b_stride,
                                 m, k, n);
                         }
                       }
                     });
}

std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, const Conv1dOptions& opt) {
  const long span = static_cast<long>(opt.dilation * (kernel - 1) + 1);
  const long padded = static_cast<long>(length + 2 * opt.padding);
  if (opt.stride == 0 || opt.dilation == 0) throw ConfigError("conv1d: stride and dilation must be >= 1");
  if (padded < span) {
    throw DimensionError("conv1d: input length " + std::to_string(length) +
                         " shorter than receptive span " + std::to_string(span));
  }
  return static_cast<std::size_t>((padded - span) / static_cast<long>(opt.stride) + 1);
}

std::size_t same_padding(std::size_t kernel, std::size_t dilation) {
  if (kernel % 2 == 0) throw ConfigError("same padding requires an odd kernel");
  return dilation * (kernel - 1) / 2;
}

namespace {

// Valid output index range [lo, hi) for which t*stride + offset lands in [0, length).
std::pair<long, long> valid_range(long offset, long stride, long length, long out_len) {
  long lo = 0;
  if (offset < 0) lo = (-offset + stride - 1) / stride;
  long hi = 0;
  if (length - 1 - offset >= 0) hi = (length - 1 - offset) / stride + 1;
  hi = std::min(hi, out_len);
  return {lo, std::max(lo, hi)};
}

}  // namespace

// Convolutions run as GEMMs over an unfolded input. The column matrix has
// rows (c, k) and columns (batch, t).
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv1dOptions opt) {
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  if (xs.size() != 3 || ws.size() != 3 || ws[1] != xs[1]) {
    throw DimensionError("conv1d: input " + to_string(xs) + " incompatible with weight " + to_string(ws));
  }
  const std::size_t batch = xs[0], cin = xs[1], len = xs[2], cout = ws[0], kernel = ws[2];
  if (bias.defined() && bias.shape() != Shape{cout}) throw DimensionError("conv1d: bias shape mismatch");
  const std::size_t out_len = conv1d_output_length(len, kernel, opt);
  const long stride = static_cast<long>(opt.stride);
  const std::size_t rows = cin * kernel, cols = batch * out_len;

  auto unfold = [=](const double* xp) {
    std::vector<double> col(rows * cols, 0.0);
    for (std::size_t c = 0; c < cin; ++c) {
      for (std::size_t kk = 0; kk < kernel; ++kk) {
        const long offset = static_cast<long>(kk * opt.dilation) - static_cast<long>(opt.padding);
        auto [lo, hi] = valid_range(offset, stride, static_cast<long>(len), static_cast<long>(out_len));
        double* row = col.data() + (c * kernel + kk) * cols;
        for (std::size_t nb = 0; nb < batch; ++nb) {
          const double* xr = xp + (nb * cin + c) * len;
          double* dst = row + nb * out_len;
          for (long t = lo; t < hi; ++t) dst[t] = xr[t * stride + offset];
        }
      }
    }
    return col;
  };

  std::vector<double> col = unfold(x.data().data());
  std::vector<double> y(cout * cols, 0.0);  // [cout, batch * out_len]
  mm_nn(weight.data().data(), col.data(), y.data(), cout, rows, cols);
  std::vector<double> out(batch * cout * out_len);
  for (std::size_t o = 0; o < cout; ++o) {
    const double b = bias.defined() ? bias.data()[o] : 0.0;
    for (std::size_t nb = 0; nb < batch; ++nb) {
      const double* src = y.data() + o * cols + nb * out_len;
      double* dst = out.data() + (nb * cout + o) * out_len;
      for (std::size_t t = 0; t < out_len; ++t) dst[t] = src[t] + b;
    }
  }
  std::vector<NodePtr> parents{x.node_ptr(), weight.node_ptr()};
  if (bias.defined()) parents.push_back(bias.node_ptr());
  return make_result(
      {batch, cout, out_len}, std::move(out), std::move(parents), "conv1d",
      [=](Node& self) {
        Node& px = *self.parents[0];
        Node& pw = *self.parents[1];
        std::vector<double> gy(cout * cols);
        for (std::size_t o = 0; o < cout; ++o)
          for (std::size_t nb = 0; nb < batch; ++nb)
            std::copy_n(self.grad.data() + (nb * cout + o) * out_len, out_len, gy.data() + o * cols + nb * out_len);
        if (pw.requires_grad) {
          const auto col = unfold(px.value.data());
          mm_nt(gy.data(), col.data(), pw.ensure_grad().data(), cout, cols, rows);
        }
        if (px.requires_grad) {
          std::vector<double> gcol(rows * cols, 0.0);
          mm_tn(pw.value.data(), gy.data(), gcol.data(), cout, rows, cols);
          auto& gx = px.ensure_grad();
          for (std::size_t c = 0; c < cin; ++c) {
            for (std::size_t kk = 0; kk < kernel; ++kk) {
              const long offset = static_cast<long>(kk * opt.dilation) - static_cast<long>(opt.padding);
              auto [lo, hi] = valid_range(offset, stride, static_cast<long>(len), static_cast<long>(out_len));
              const double* row = gcol.data() + (c * kernel + kk) * cols;
              for (std::size_t nb = 0; nb < batch; ++nb) {
                double* gr = gx.data() + (nb * cin + c) * len;
                const double* src = row + nb * out_len;
                for (long t = lo; t < hi; ++t) gr[t * stride + offset] += src[t];
              }
            }
          }
        }
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
          auto& gb = self.parents[2]->ensure_grad();
          for (std::size_t o = 0; o < cout; ++o) {
            double acc = 0.0;
            for (std::size_t q = 0; q < cols; ++q) acc += gy[o * cols + q];
            gb[o] += acc;
          }
        }
      });
}

// Weight [cin, cout, K] viewed as [cin, cout*K]: Z = W^T X gives per-(o, k)
// rows that are scattered to output positions t*stride + k - padding.
Tensor conv_transpose1d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                        ConvTranspose1dOptions opt) {
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  if (xs.size() != 3 || ws.size() != 3 || ws[0] != xs[1]) {
    throw DimensionError("conv_transpose1d: input " + to_string(xs) + " incompatible with weight " +
                         to_string(ws));
  }
  if (opt.stride == 0) throw ConfigError("conv_transpose1d: stride must be >= 1");
  const std::size_t batch = xs[0], cin = xs[1], len = xs[2], cout = ws[1], kernel = ws[2];
  if (bias.defined() && bias.shape() != Shape{cout}) {
    throw DimensionError("conv_transpose1d: bias shape mismatch");
  }
  const long full = static_cast<long>((len - 1) * opt.stride + kernel + opt.output_padding);
  const long out_len_l = full - 2 * static_cast<long>(opt.padding);
  if (out_len_l <= 0) throw DimensionError("conv_transpose1d: non-positive output length");
  const std::size_t out_len = static_cast<std::size_t>(out_len_l);
  const long stride = static_cast<long>(opt.stride);
  const long pad = static_cast<long>(opt.padding);
  const std::size_t rows = cout * kernel, cols = batch * len;

  // Input as [cin, batch * len].
  auto flatten = [=](const double* xp) {
    std::vector<double> xm(cin * cols);
    for (std::size_t c = 0; c < cin; ++c)
      for (std::size_t nb = 0; nb < batch; ++nb) std::copy_n(xp + (nb * cin + c) * len, len, xm.data() + c * cols + nb * len);
    return xm;
  };
  // Visits every (row, column, output offset) triple of the scatter.
  auto scatter = [=](auto&& fn) {
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t kk = 0; kk < kernel; ++kk)
        for (std::size_t nb = 0; nb < batch; ++nb)
          for (std::size_t t = 0; t < len; ++t) {
            const long pos = static_cast<long>(t) * stride + static_cast<long>(kk) - pad;
            if (pos < 0 || pos >= out_len_l) continue;
            fn((o * kernel + kk) * cols + nb * len + t, (nb * cout + o) * out_len + static_cast<std::size_t>(pos));
          }
  };

  const auto xm = flatten(x.data().data());
  std::vector<double> z(rows * cols, 0.0);
  mm_tn(weight.data().data(), xm.data(), z.data(), cin, rows, cols);
  std::vector<double> out(batch * cout * out_len, 0.0);
  if (bias.defined()) {
    for (std::size_t nb = 0; nb < batch; ++nb)
      for (std::size_t o = 0; o < cout; ++o)
        std::fill_n(out.data() + (nb * cout + o) * out_len, out_len, bias.data()[o]);
  }
  scatter([&](std::size_t zi, std::size_t yi) { out[yi] += z[zi]; });

  std::vector<NodePtr> parents{x.node_ptr(), weight.node_ptr()};
  if (bias.defined()) parents.push_back(bias.node_ptr());
  return make_result(
      {batch, cout, out_len}, std::move(out), std::move(parents), "conv_transpose1d",
      [=](Node& self) {
        Node& px = *self.parents[0];
        Node& pw = *self.parents[1];
        std::vector<double> gz(rows * cols, 0.0);
        scatter([&](std::size_t zi, std::size_t yi) { gz[zi] = self.grad[yi]; });
        if (pw.requires_grad) {
          const auto xv = flatten(px.value.data());
          mm_nt(xv.data(), gz.data(), pw.ensure_grad().data(), cin, cols, rows);
        }
        if (px.requires_grad) {
          std::vector<double> gxm(cin * cols, 0.0);
          mm_nn(pw.value.data(), gz.data(), gxm.data(), cin, rows, cols);
          auto& gx = px.ensure_grad();
          for (std::size_t c = 0; c < cin; ++c)
            for (std::size_t nb = 0; nb < batch; ++nb)
              for (std::size_t t = 0; t < len; ++t) gx[(nb * cin + c) * len + t] += gxm[c * cols + nb * len + t];
        }
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
          auto& gb = self.parents[2]->ensure_grad();
          for (std::size_t nb = 0; nb < batch; ++nb)
            for (std::size_t o = 0; o < cout; ++o)
              for (std::size_t t = 0; t < out_len; ++t) gb[o] += self.grad[(nb * cout + o) * out_len + t];
        }
      });
}

// ---- shape manipulation ------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x.node_ptr()}, "reshape", [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const auto& xs = x.shape();
  const std::size_t r = xs.size();
  if (order.size() != r) throw DimensionError("permute: order rank mismatch");
  std::vector<bool> used(r, false);
  for (std::size_t a : order) {
    if (a >= r || used[a]) throw DimensionError("permute: invalid axis order");
    used[a] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = xs[order[i]];
  const auto in_strides = strides_of(xs);
  // Source offset for each output position.
  const std::size_t n = x.numel();
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_strides[order[i]];
    src[flat] = off;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  auto xv = x.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = xv[src[i]];
  return make_result(std::move(out_shape), std::move(out), {x.node_ptr()}, "permute",
                     [src = std::move(src)](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t i = 0; i < src.size(); ++i) g[src[i]] += self.grad[i];
                     });
}

Tensor transpose(const Tensor& x, std::size_t axis_a, std::size_t axis_b) {
  std::vector<std::size_t> order(x.rank());
  std::iota(order.begin(), order.end(), 0);
  if (axis_a >= order.size() || axis_b >= order.size()) throw DimensionError("transpose: axis out of range");
  std::swap(order[axis_a], order[axis_b]);
  return permute(x, order);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  const auto sp = split_axis(x.shape(), axis, "slice");
  if (start + length > sp.n || length == 0) throw DimensionError("slice: range out of bounds");
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  auto xv = x.data();
  std::vector<double> out(sp.outer * length * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < length; ++j)
      for (std::size_t q = 0; q < sp.inner; ++q)
        out[(o * length + j) * sp.inner + q] = xv[(o * sp.n + start + j) * sp.inner + q];
  return make_result(std::move(out_shape), std::move(out), {x.node_ptr()}, "slice",
                     [sp, start, length](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t o = 0; o < sp.outer; ++o)
                         for (std::size_t j = 0; j < length; ++j)
                           for (std::size_t q = 0; q < sp.inner; ++q)
                             g[(o * sp.n + start + j) * sp.inner + q] += self.grad[(o * length + j) * sp.inner + q];
                     });
}

Tensor index_select(const Tensor& x, std::size_t axis, const std::vector<std::size_t>& indices) {
  const auto sp = split_axis(x.shape(), axis, "index_select");
  for (std::size_t i : indices) {
    if (i >= sp.n) throw DimensionError("index_select: index out of range");
  }
  if (indices.empty()) throw DimensionError("index_select: empty index list");
  Shape out_shape = x.shape();
  const std::size_t m = indices.size();
  out_shape[axis] = m;
  auto xv = x.data();
  std::vector<double> out(sp.outer * m * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t q = 0; q < sp.inner; ++q)
        out[(o * m + j) * sp.inner + q] = xv[(o * sp.n + indices[j]) * sp.inner + q];
  return make_result(std::move(out_shape), std::move(out), {x.node_ptr()}, "index_select",
                     [sp, indices](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       const std::size_t m = indices.size();
                       for (std::size_t o = 0; o < sp.outer; ++o)
                         for (std::size_t j = 0; j < m; ++j)
                           for (std::size_t q = 0; q < sp.inner; ++q)
                             g[(o * sp.n + indices[j]) * sp.inner + q] += self.grad[(o * m + j) * sp.inner + q];
                     });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range");
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (s.size() != first.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) {
        throw DimensionError("concat: shape mismatch " + to_string(first) + " vs " + to_string(s));
      }
    }
    widths.push_back(s[axis]);
    total += s[axis];
  }
  const auto sp = split_axis(first, axis, "concat");
  Shape out_shape = first;
  out_shape[axis] = total;
  std::vector<double> out(sp.outer * total * sp.inner);
  std::vector<NodePtr> parents;
  std::size_t base = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto pv = parts[k].data();
    const std::size_t w = widths[k];
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t j = 0; j < w; ++j)
        for (std::size_t q = 0; q < sp.inner; ++q)
          out[(o * total + base + j) * sp.inner + q] = pv[(o * w + j) * sp.inner + q];
    base += w;
    parents.push_back(parts[k].node_ptr());
  }
  return make_result(std::move(out_shape), std::move(out), std::move(parents), "concat",
                     [sp, widths, total](Node& self) {
                       std::size_t base = 0;
                       for (std::size_t k = 0; k < self.parents.size(); ++k) {
                         const std::size_t w = widths[k];
                         Node& p = *self.parents[k];
                         if (p.requires_grad) {
                           auto& g = p.ensure_grad();
                           for (std::size_t o = 0; o < sp.outer; ++o)
                             for (std::size_t j = 0; j < w; ++j)
                               for (std::size_t q = 0; q < sp.inner; ++q)
                                 g[(o * w + j) * sp.inner + q] += self.grad[(o * total + base + j) * sp.inner + q];
                         }
                         base += w;
                       }
                     });
}

// ---- reductions --------------------------------------------------------

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return make_result({}, {acc}, {x.node_ptr()}, "sum", [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  if (n == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(x), 1.0 / n);
}

Tensor sum(const Tensor& x, std::size_t axis) {
  const auto sp = split_axis(x.shape(), axis, "sum");
  auto xv = x.data();
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < sp.n; ++j)
      for (std::size_t q = 0; q < sp.inner; ++q) out[o * sp.inner + q] += xv[(o * sp.n + j) * sp.inner + q];
  return make_result(drop_axis(x.shape(), axis), std::move(out), {x.node_ptr()}, "sum_axis",
                     [sp](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t o = 0; o < sp.outer; ++o)
                         for (std::size_t j = 0; j < sp.n; ++j)
                           for (std::size_t q = 0; q < sp.inner; ++q)
                             g[(o * sp.n + j) * sp.inner + q] += self.grad[o * sp.inner + q];
                     });
}

Tensor mean(const Tensor& x, std::size_t axis) {
  const std::size_t n = x.dim(axis);
  if (n == 0) throw DimensionError("mean: empty axis");
  return scale(sum(x, axis), 1.0 / static_cast<double>(n));
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto sp = split_axis(x.shape(), axis, "softmax");
  auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t q = 0; q < sp.inner; ++q) {
      auto at = [&](std::size_t j) { return (o * sp.n + j) * sp.inner + q; };
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < sp.n; ++j) mx = std::max(mx, xv[at(j)]);
      double z = 0.0;
      for (std::size_t j = 0; j < sp.n; ++j) z += (out[at(j)] = std::exp(xv[at(j)] - mx));
      for (std::size_t j = 0; j < sp.n; ++j) out[at(j)] /= z;
    }
  }
  return make_result(x.shape(), std::move(out), {x.node_ptr()}, "softmax", [sp](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t q = 0; q < sp.inner; ++q) {
        auto at = [&](std::size_t j) { return (o * sp.n + j) * sp.inner + q; };
        double dot = 0.0;
        for (std::size_t j = 0; j < sp.n; ++j) dot += self.grad[at(j)] * self.value[at(j)];
        for (std::size_t j = 0; j < sp.n; ++j) g[at(j)] += self.value[at(j)] * (self.grad[at(j)] - dot);
      }
    }
  });
}

Tensor logsumexp(const Tensor& x, std::size_t axis, const Tensor& mask) {
  const auto sp = split_axis(x.shape(), axis, "logsumexp");
  std::vector<double> m;
  if (mask.defined()) {
    if (mask.shape() != x.shape()) throw DimensionError("logsumexp: mask shape mismatch");
    m.assign(mask.data().begin(), mask.data().end());
  } else {
    m.assign(x.numel(), 1.0);
  }
  auto xv = x.data();
  std::vector<double> out(sp.outer * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t q = 0; q < sp.inner; ++q) {
      auto at = [&](std::size_t j) { return (o * sp.n + j) * sp.inner + q; };
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < sp.n; ++j)
        if (m[at(j)] != 0.0) mx = std::max(mx, xv[at(j)]);
      if (!std::isfinite(mx)) throw DomainError("logsumexp: a reduced slice has no unmasked entries");
      double z = 0.0;
      for (std::size_t j = 0; j < sp.n; ++j)
        if (m[at(j)] != 0.0) z += std::exp(xv[at(j)] - mx);
      out[o * sp.inner + q] = mx + std::log(z);
    }
  }
  return make_result(drop_axis(x.shape(), axis), std::move(out), {x.node_ptr()}, "logsumexp",
                     [sp, m = std::move(m)](Node& self) {
                       Node& p = *self.parents[0];
                       auto& g = p.ensure_grad();
                       for (std::size_t o = 0; o < sp.outer; ++o) {
                         for (std::size_t q = 0; q < sp.inner; ++q) {
                           const double lse = self.value[o * sp.inner + q];
                           const double gy = self.grad[o * sp.inner + q];
                           for (std::size_t j = 0; j < sp.n; ++j) {
                             const std::size_t i = (o * sp.n + j) * sp.inner + q;
                             if (m[i] != 0.0) g[i] += gy * std::exp(p.value[i] - lse);
                           }
                         }
                       }
                     });
}

Tensor l2_normalize(const Tensor& x, std::size_t axis) {
  constexpr double kEps = 1e-12;
  const auto sp = split_axis(x.shape(), axis, "l2_normalize");
  auto xv = x.data();
  std::vector<double> out(xv.size());
  std::vector<double> norms(sp.outer * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t q = 0; q < sp.inner; ++q) {
      auto at = [&](std::size_t j) { return (o * sp.n + j) * sp.inner + q; };
      double ss = 0.0;
      for (std::size_t j = 0; j < sp.n; ++j) ss += xv[at(j)] * xv[at(j)];
      const double nrm = std::max(std::sqrt(ss), kEps);
      norms[o * sp.inner + q] = nrm;
      for (std::size_t j = 0; j < sp.n; ++j) out[at(j)] = xv[at(j)] / nrm;
    }
  }
  return make_result(x.shape(), std::move(out), {x.node_ptr()}, "l2_normalize",
                     [sp, norms = std::move(norms)](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t o = 0; o < sp.outer; ++o) {
                         for (std::size_t q = 0; q < sp.inner; ++q) {
                           auto at = [&](std::size_t j) { return (o * sp.n + j) * sp.inner + q; };
                           const double nrm = norms[o * sp.inner + q];
                           if (nrm <= kEps) {
                             for (std::size_t j = 0; j < sp.n; ++j) g[at(j)] += self.grad[at(j)] / kEps;
                             continue;
                           }
                           double dot = 0.0;
                           for (std::size_t j = 0; j < sp.n; ++j) dot += self.grad[at(j)] * self.value[at(j)];
                           for (std::size_t j = 0; j < sp.n; ++j)
                             g[at(j)] += (self.grad[at(j)] - self.value[at(j)] * dot) / nrm;
                         }
                       }
                     });
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.rank() == 0) {
    throw DimensionError("cosine_similarity: shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
  const std::size_t last = a.rank() - 1;
  return sum(mul(l2_normalize(a, last), l2_normalize(b, last)), last);
}

Tensor mse(const Tensor& prediction, const Tensor& target) {
  if (prediction.shape() != target.shape()) {
    throw DimensionError("mse: shape mismatch " + to_string(prediction.shape()) + " vs " +
                         to_string(target.shape()));
  }
  auto pv = prediction.data();
  auto tv = target.data();
  const double n = static_cast<double>(pv.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) acc += (pv[i] - tv[i]) * (pv[i] - tv[i]);
  return make_result({}, {acc / n}, {prediction.node_ptr(), target.node_ptr()}, "mse", [n](Node& self) {
    Node& p = *self.parents[0];
    Node& t = *self.parents[1];
    const double c = 2.0 * self.grad[0] / n;
    if (p.requires_grad) {
      auto& g = p.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * (p.value[i] - t.value[i]);
    }
    if (t.requires_grad) {
      auto& g = t.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= c * (p.value[i] - t.value[i]);
    }
  });
}

Tensor bce(const Tensor& probability, const Tensor& target) {
  if (probability.shape() != target.shape()) throw DimensionError("bce: shape mismatch");
  auto pv = probability.data();
  auto tv = target.data();
  const double n = static_cast<double>(pv.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (!(pv[i] > 0.0 && pv[i] < 1.0)) throw DomainError("bce: probability outside (0, 1)");
    acc -= tv[i] * std::log(pv[i]) + (1.0 - tv[i]) * std::log(1.0 - pv[i]);
  }
  std::vector<double> t(tv.begin(), tv.end());
  return make_result({}, {acc / n}, {probability.node_ptr()}, "bce", [n, t = std::move(t)](Node& self) {
    Node& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double q = p.value[i];
      g[i] += self.grad[0] * (-t[i] / q + (1.0 - t[i]) / (1.0 - q)) / n;
    }
  });
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& target) {
  if (logits.shape() != target.shape()) throw DimensionError("bce_with_logits: shape mismatch");
  auto zv = logits.data();
  auto tv = target.data();
  const double n = static_cast<double>(zv.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < zv.size(); ++i) {
    const double z = zv[i];
    acc += std::max(z, 0.0) - z * tv[i] + std::log1p(std::exp(-std::abs(z)));
  }
  std::vector<double> t(tv.begin(), tv.end());
  return make_result({}, {acc / n}, {logits.node_ptr()}, "bce_with_logits",
                     [n, t = std::move(t)](Node& self) {
                       Node& p = *self.parents[0];
                       auto& g = p.ensure_grad();
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const double z = p.value[i];
                         const double s = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
                         g[i] += self.grad[0] * (s - t[i]) / n;
                       }
                     });
}

// ---- verification ------------------------------------------------------

double gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& point, double step) {
  Tensor x = Tensor::from_data(point.shape(), {point.data().begin(), point.data().end()}, true);
  return gradcheck_leaves([&] { return f(x); }, {x}, step);
}

double gradcheck_leaves(const std::function<Tensor()>& f, const std::vector<Tensor>& leaves,
                        double step) {
  std::vector<Tensor> ls = leaves;
  for (auto& l : ls) {
    if (!l.requires_grad()) throw ContractError("gradcheck: leaf does not require grad");
    if (l.has_grad()) l.zero_grad();
  }
  Tensor y = f();
  backward(y);
  double worst = 0.0;
  for (auto& l : ls) {
    std::vector<double> analytic(l.numel(), 0.0);
    if (l.has_grad()) analytic.assign(l.grad().begin(), l.grad().end());
    auto values = l.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      double fp = 0.0, fm = 0.0;
      {
        NoGradGuard guard;
        values[i] = orig + step;
        fp = f().item();
        values[i] = orig - step;
        fm = f().item();
      }
      values[i] = orig;
      const double numeric = (fp - fm) / (2.0 * step);
      const double err = std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + std::abs(numeric) + 1e-12);
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace daac::ad
