#pragma once

// Minimal reverse-mode differentiable tensor.
//
// A Tensor is a handle to a graph node holding row-major float64 data. Ops
// record their inputs and a backward closure when any input requires grad;
// backward() walks the graph in reverse topological order and accumulates
// gradients into every node that requires them. No broadcasting beyond
// scalar operands and explicit trailing-suffix biases.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace daac::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

struct Node;

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Writable view of the values. Only meaningful on leaves (parameters,
  // inputs); mutating an interior node does not re-run its consumers.
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Same values, no history, no grad requirement.
  Tensor detach() const;

  Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const noexcept { return node_; }
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node> node_;
};

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Pushes this->grad into the parents' grads.
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";

  std::vector<double>& ensure_grad();
};

// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Populates grads of every requires-grad node reachable from `loss`.
// `loss` must hold exactly one element.
void backward(const Tensor& loss);

// ---- elementwise -------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor shift(const Tensor& a, double offset);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
// Multiplies by a constant 0/1 mask of identical shape. No grad flows to the mask.
Tensor apply_mask(const Tensor& x, const Tensor& mask);
// `bias` shape must equal the trailing dims of `x`.
Tensor add_bias(const Tensor& x, const Tensor& bias);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return shift(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// ---- linear algebra ----------------------------------------------------

// [m,k]x[k,n], [B,m,k]x[B,k,n] or [B,m,k]x[k,n].
Tensor matmul(const Tensor& a, const Tensor& b);

struct Conv1dOptions {
  std::size_t stride = 1;
  std::size_t dilation = 1;
  std::size_t padding = 0;
};
// x [N, Cin, T], weight [Cout, Cin, K], bias [Cout] or undefined.
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv1dOptions opt = {});
std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, const Conv1dOptions& opt);
// Zero padding that keeps the length for stride 1 and odd kernels.
std::size_t same_padding(std::size_t kernel, std::size_t dilation);

struct ConvTranspose1dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t output_padding = 0;
};
// x [N, Cin, T], weight [Cin, Cout, K], bias [Cout] or undefined.
Tensor conv_transpose1d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                        ConvTranspose1dOptions opt = {});

// ---- shape manipulation ------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
Tensor transpose(const Tensor& x, std::size_t axis_a, std::size_t axis_b);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
Tensor index_select(const Tensor& x, std::size_t axis, const std::vector<std::size_t>& indices);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

// ---- reductions --------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, std::size_t axis);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, std::size_t axis);
Tensor softmax(const Tensor& x, std::size_t axis);
// log Σ exp over `axis`. With a defined `mask` (same shape, 0/1), only
// entries where mask==1 participate; every reduced slice needs at least one.
Tensor logsumexp(const Tensor& x, std::size_t axis, const Tensor& mask = Tensor());

// x / max(||x||, 1e-12) along `axis`.
Tensor l2_normalize(const Tensor& x, std::size_t axis);
// Cosine similarity along the last axis; result drops that axis.
Tensor cosine_similarity(const Tensor& a, const Tensor& b);

Tensor mse(const Tensor& prediction, const Tensor& target);
// Mean binary cross-entropy of probabilities in (0,1) against constant targets.
Tensor bce(const Tensor& probability, const Tensor& target);
// Same quantity evaluated from logits, numerically stable.
Tensor bce_with_logits(const Tensor& logits, const Tensor& target);

// ---- verification ------------------------------------------------------

// max_i |analytic_i - numeric_i| / (|analytic_i| + |numeric_i| + 1e-12) with
// central differences of half-width `step` around `point`.
double gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                 double step = 1e-5);

// Same check, perturbing the given leaves in place (restored afterwards).
double gradcheck_leaves(const std::function<Tensor()>& f, const std::vector<Tensor>& leaves,
                        double step = 1e-5);

}  // namespace daac::ad
