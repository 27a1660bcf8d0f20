#include "doctest.h"

#include <cmath>
#include <random>

#include "daac/errors.hpp"
#include "daac/tensor.hpp"

using namespace daac;
using namespace daac::ad;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool grad = true, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from_data(std::move(shape), std::move(v), grad);
}

// Reference 1-D convolution straight from the definition.
std::vector<double> naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, Conv1dOptions o) {
  const std::size_t n = x.dim(0), cin = x.dim(1), len = x.dim(2), cout = w.dim(0), k = w.dim(2);
  const std::size_t out_len = conv1d_output_length(len, k, o);
  std::vector<double> y(n * cout * out_len, 0.0);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t oc = 0; oc < cout; ++oc)
      for (std::size_t t = 0; t < out_len; ++t) {
        double s = b.at({oc});
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t q = 0; q < k; ++q) {
            const long pos = static_cast<long>(t * o.stride + q * o.dilation) - static_cast<long>(o.padding);
            if (pos >= 0 && pos < static_cast<long>(len)) s += w.at({oc, c, q}) * x.at({a, c, static_cast<std::size_t>(pos)});
          }
        y[(a * cout + oc) * out_len + t] = s;
      }
  return y;
}

std::vector<double> naive_conv_transpose(const Tensor& x, const Tensor& w, const Tensor& b, ConvTranspose1dOptions o) {
  const std::size_t n = x.dim(0), cin = x.dim(1), len = x.dim(2), cout = w.dim(1), k = w.dim(2);
  const long out_len = static_cast<long>((len - 1) * o.stride + k + o.output_padding) - 2 * static_cast<long>(o.padding);
  std::vector<double> y(n * cout * out_len, 0.0);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t oc = 0; oc < cout; ++oc) {
      for (long t = 0; t < out_len; ++t) y[(a * cout + oc) * out_len + t] = b.at({oc});
      for (std::size_t c = 0; c < cin; ++c)
        for (std::size_t i = 0; i < len; ++i)
          for (std::size_t q = 0; q < k; ++q) {
            const long pos = static_cast<long>(i * o.stride + q) - static_cast<long>(o.padding);
            if (pos >= 0 && pos < out_len) y[(a * cout + oc) * out_len + pos] += w.at({c, oc, q}) * x.at({a, c, i});
          }
    }
  return y;
}

}  // namespace

TEST_CASE("elementwise ops and broadcasting") {
  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from_data({2, 2}, {10, 20, 30, 40});
  CHECK((a + b).at({1, 1}) == 44);
  CHECK((b - a).at({0, 1}) == 18);
  CHECK((a * Tensor::scalar(2.0)).at({1, 0}) == 6);
  CHECK(relu(Tensor::from_data({3}, {-1, 0, 2})).at({2}) == 2);
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == doctest::Approx(0.5));
  CHECK_THROWS_AS(add(a, Tensor::zeros({3})), DimensionError);
  CHECK_THROWS_AS(log(Tensor::scalar(0.0)), DomainError);
}

TEST_CASE("backward accumulates through shared subexpressions") {
  Tensor x = Tensor::from_data({3}, {1, 2, 3}, true);
  Tensor y = sum(mul(x, x) + x);
  backward(y);
  CHECK(x.grad()[0] == doctest::Approx(3));
  CHECK(x.grad()[2] == doctest::Approx(7));
  CHECK_THROWS_AS(backward(x), ContractError);
}

TEST_CASE("no-grad guard stops recording") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  Tensor y;
  {
    NoGradGuard g;
    y = sum(mul(x, x));
  }
  CHECK_FALSE(y.requires_grad());
  CHECK(grad_enabled());
}

TEST_CASE("matmul matches hand computation") {
  Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b = Tensor::from_data({3, 2}, {7, 8, 9, 10, 11, 12});
  Tensor c = matmul(a, b);
  CHECK(c.at({0, 0}) == 58);
  CHECK(c.at({0, 1}) == 64);
  CHECK(c.at({1, 0}) == 139);
  CHECK(c.at({1, 1}) == 154);
}

TEST_CASE("conv1d equals the direct definition") {
  std::mt19937_64 rng(3);
  for (auto [stride, dilation, padding] : {std::tuple{1u, 1u, 1u}, {2u, 1u, 1u}, {1u, 2u, 2u}, {1u, 4u, 4u}, {2u, 1u, 0u}}) {
    Conv1dOptions o{stride, dilation, padding};
    Tensor x = random_tensor({2, 3, 11}, rng, false);
    Tensor w = random_tensor({4, 3, 3}, rng, false);
    Tensor b = random_tensor({4}, rng, false);
    Tensor y = conv1d(x, w, b, o);
    auto ref = naive_conv(x, w, b, o);
    REQUIRE(y.numel() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv_transpose1d equals the direct definition") {
  std::mt19937_64 rng(4);
  for (auto [stride, padding, outpad] : {std::tuple{2u, 1u, 0u}, {1u, 0u, 0u}, {3u, 1u, 1u}}) {
    ConvTranspose1dOptions o{stride, padding, outpad};
    Tensor x = random_tensor({2, 3, 5}, rng, false);
    Tensor w = random_tensor({3, 2, 4}, rng, false);
    Tensor b = random_tensor({2}, rng, false);
    Tensor y = conv_transpose1d(x, w, b, o);
    auto ref = naive_conv_transpose(x, w, b, o);
    REQUIRE(y.numel() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("same padding keeps the length") {
  CHECK(same_padding(3, 4) == 4);
  CHECK(conv1d_output_length(17, 3, {1, 4, same_padding(3, 4)}) == 17);
  CHECK_THROWS_AS(same_padding(4, 1), ConfigError);
  CHECK(conv1d_output_length(64, 4, {2, 1, 1}) == 32);
}

TEST_CASE("gradcheck of every differentiable op") {
  std::mt19937_64 rng(11);
  const double tol = 1e-4;
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({3, 4}, rng);
  Tensor pos = random_tensor({3, 4}, rng, true, 0.5, 2.0);
  Tensor prob = random_tensor({3, 4}, rng, true, 0.1, 0.9);
  Tensor target = random_tensor({3, 4}, rng, false, 0.0, 1.0);
  Tensor mask = Tensor::from_data({3, 4}, {1, 0, 1, 1, 0, 1, 1, 1, 1, 1, 0, 1});

  CHECK(gradcheck([&](const Tensor& x) { return sum(mul(x, b)); }, a) < tol);
  CHECK(gradcheck([&](const Tensor& x) { return sum(sub(exp(x), x)); }, a) < tol);
  CHECK(gradcheck([&](const Tensor& x) { return sum(log(x)); }, pos) < tol);
  CHECK(gradcheck([&](const Tensor& x) { return sum(sigmoid(scale(x, 3.0))); }, a) < tol);
  CHECK(gradcheck([&](const Tensor& x) { return sum(mul(relu(shift(x, 0.05)), b)); }, a) < tol);
  CHECK(gradcheck([&](const Tensor& x) { return sum(mul(softmax(x, 1), b)); }, a) < tol);
  CHECK(gradcheck([&](const Tensor& x) { return sum(mul(softmax(x, 0), b)); }, a) < tol);
  CHECK(gradcheck([&](const Tensor& x) { return sum(logsumexp(x, 1, mask)); }, a) < tol);
  CHECK(gradcheck([&](const Tensor& x) { return sum(mul(l2_normalize(x, 1), b)); }, a) < tol);
  CHECK(gradcheck([&](const Tensor& x) { return sum(cosine_similarity(x, b)); }, a) < tol);
  CHECK(gradcheck([&](const Tensor& x) { return mse(x, b); }, a) < tol);
  CHECK(gradcheck([&](const Tensor& x) { return bce(x, target); }, prob) < tol);
  CHECK(gradcheck([&](const Tensor& x) { return bce_with_logits(x, target); }, a) < tol);
  CHECK(gradcheck([&](const Tensor& x) { return sum(mul(mean(x, 0), Tensor::from_data({4}, {1, -2, 3, 0.5}))); }, a) < tol);
  CHECK(gradcheck([&](const Tensor& x) { return mean(mul(x, x)); }, a) < tol);
  CHECK(gradcheck([&](const Tensor& x) { return sum(mul(transpose(x, 0, 1), transpose(b, 0, 1))); }, a) < tol);
  CHECK(gradcheck([&](const Tensor& x) { return sum(mul(slice(x, 1, 1, 2), slice(b, 1, 0, 2))); }, a) < tol);
  CHECK(gradcheck([&](const Tensor& x) { return sum(mul(index_select(x, 0, {2, 0, 2}), index_select(b, 0, {0, 1, 2}))); }, a) < tol);
  CHECK(gradcheck([&](const Tensor& x) { return sum(mul(concat({x, b}, 1), concat({b, x}, 1))); }, a) < tol);
  CHECK(gradcheck([&](const Tensor& x) { return sum(mul(apply_mask(x, mask), b)); }, a) < tol);

  Tensor bias = random_tensor({4}, rng);
  CHECK(gradcheck_leaves([&] { return sum(mul(add_bias(a, bias), b)); }, {a, bias}) < tol);

  Tensor t3 = random_tensor({2, 3, 4}, rng);
  Tensor w3 = random_tensor({2, 4, 3}, rng);
  Tensor w2 = random_tensor({4, 5}, rng);
  CHECK(gradcheck_leaves([&] { return sum(mul(matmul(t3, w3), matmul(t3, w3))); }, {t3, w3}) < tol);
  CHECK(gradcheck_leaves([&] { return sum(exp(scale(matmul(t3, w2), 0.3))); }, {t3, w2}) < tol);
  CHECK(gradcheck_leaves([&] { return sum(mul(matmul(a, w2), matmul(b, w2))); }, {a, w2}) < tol);
  CHECK(gradcheck([&](const Tensor& x) { return sum(mul(permute(x, {2, 0, 1}), permute(x, {2, 0, 1}))); }, t3) < tol);
  CHECK(gradcheck([&](const Tensor& x) { return sum(mul(reshape(x, {6, 4}), reshape(x, {6, 4}))); }, t3) < tol);
}

TEST_CASE("gradcheck of convolutions") {
  std::mt19937_64 rng(12);
  Tensor x = random_tensor({2, 3, 9}, rng);
  Tensor w = random_tensor({4, 3, 3}, rng);
  Tensor b = random_tensor({4}, rng);
  Tensor probe = random_tensor({2, 4, 9}, rng, false);
  CHECK(gradcheck_leaves([&] { return sum(mul(conv1d(x, w, b, {1, 2, 2}), probe)); }, {x, w, b}) < 1e-4);
  Tensor probe2 = random_tensor({2, 4, 4}, rng, false);
  CHECK(gradcheck_leaves([&] { return sum(mul(conv1d(x, w, b, {2, 1, 0}), probe2)); }, {x, w, b}) < 1e-4);

  Tensor xt = random_tensor({2, 3, 4}, rng);
  Tensor wt = random_tensor({3, 2, 4}, rng);
  Tensor bt = random_tensor({2}, rng);
  Tensor probe3 = random_tensor({2, 2, 8}, rng, false);
  CHECK(gradcheck_leaves([&] { return sum(mul(conv_transpose1d(xt, wt, bt, {2, 1, 0}), probe3)); }, {xt, wt, bt}) < 1e-4);
}

TEST_CASE("non-finite values are rejected") {
  CHECK_THROWS_AS(exp(Tensor::scalar(1000.0)), DomainError);
  CHECK_THROWS_AS(bce(Tensor::scalar(1.0), Tensor::scalar(1.0)), DomainError);
}

TEST_CASE("detach cuts the graph") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  Tensor y = sum(mul(x.detach(), x));
  backward(y);
  CHECK(x.grad()[0] == doctest::Approx(1));
  CHECK(x.grad()[1] == doctest::Approx(2));
}
