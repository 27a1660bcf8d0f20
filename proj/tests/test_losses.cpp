#include "doctest.h"

#include <cmath>
#include <numeric>
#include <random>

#include "daac/errors.hpp"
#include "daac/losses.hpp"
#include "oracles.hpp"

using namespace daac;
using namespace daac::loss;
using ad::Tensor;

namespace {

BatchMeta meta_of(const oracle::RandomBatch& b, double tau = 0.5) { return {b.subjects, b.trials, tau}; }

// Permutes axis 0 of a tensor.
Tensor permute_rows(const Tensor& t, const std::vector<std::size_t>& order) { return ad::index_select(t, 0, order); }

}  // namespace

TEST_CASE("keyed losses match the brute-force oracle") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    auto b = oracle::random_batch(rng);
    Tensor h = oracle::random_tensor({b.m, 5}, rng);
    const auto rows = oracle::rows(h);
    for (bool with_pos : {false, true}) {
      LossOptions opt{with_pos};
      auto s = subject_loss(h, meta_of(b), opt);
      auto r = trial_loss(h, meta_of(b), opt);
      auto os = oracle::keyed_loss(rows, b.subjects, 0.5, with_pos);
      auto orr = oracle::keyed_loss(rows, b.trials, 0.5, with_pos);
      CHECK(std::abs(s.value.item() - os.value) < 1e-10);
      CHECK(std::abs(r.value.item() - orr.value) < 1e-10);
      CHECK(s.contributing == os.anchors);
      CHECK(s.contributing + s.skipped == b.m);
    }
  }
}

TEST_CASE("subject loss closed forms") {
  SUBCASE("equal similarities give zero per anchor") {
    // Four identical vectors, one positive and two negatives per anchor.
    Tensor h = Tensor::from_data({4, 2}, {1, 0, 1, 0, 1, 0, 1, 0});
    BatchMeta meta{{0, 0, 1, 1}, {0, 0, 1, 1}, 0.5};
    CHECK(subject_loss(h, meta).value.item() == doctest::Approx(std::log(2.0)));
    BatchMeta three{{0, 0, 1}, {0, 0, 1}, 0.5};
    Tensor h3 = Tensor::from_data({3, 2}, {1, 0, 1, 0, 1, 0});
    // Anchors 0 and 1 have one positive and one negative; anchor 2 is skipped.
    auto v = subject_loss(h3, three);
    CHECK(v.value.item() == doctest::Approx(0.0));
    CHECK(v.skipped == 1);
  }
  SUBCASE("opposite negative can push the loss below zero") {
    // Positive at cosine 1, negative at cosine -1, tau 1.
    Tensor h = Tensor::from_data({3, 1}, {1, 1, -1});
    BatchMeta meta{{0, 0, 1}, {0, 0, 1}, 1.0};
    auto v = subject_loss(h, meta);
    // Anchors 0 and 1 each contribute log(e^1/e^-1) = 2; mean over 2 anchors.
    CHECK(v.value.item() == doctest::Approx(-2.0));
  }
  SUBCASE("no valid anchor") {
    Tensor h = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    CHECK_THROWS_AS(trial_loss(h, BatchMeta{{0, 0}, {3, 3}, 0.5}), DegenerateBatchError);
  }
}

TEST_CASE("trial loss equals subject loss when the partitions coincide") {
  std::mt19937_64 rng(5);
  Tensor h = oracle::random_tensor({6, 4}, rng);
  BatchMeta meta{{0, 0, 1, 1, 2, 2}, {7, 7, 3, 3, 9, 9}, 0.5};
  CHECK(subject_loss(h, meta).value.item() == trial_loss(h, meta).value.item());
}

TEST_CASE("epoch loss") {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 30; ++k) {
    const std::size_t m = 2 + k % 6;
    Tensor a = oracle::random_tensor({m, 3}, rng), b = oracle::random_tensor({m, 3}, rng);
    CHECK(std::abs(epoch_loss(a, b).item() - oracle::epoch_loss(oracle::rows(a), oracle::rows(b))) < 1e-10);
  }
  Tensor unit = Tensor::from_data({2, 2}, {1, 0, 1, 0});
  CHECK(epoch_loss(unit, unit).item() == doctest::Approx(std::log(2.0)));
  const std::size_t m = 5;
  Tensor z = Tensor::zeros({m, 3});
  CHECK(epoch_loss(z, z).item() == doctest::Approx(std::log(2.0 * (m - 1))));
  CHECK_THROWS_AS(epoch_loss(Tensor::zeros({1, 3}), Tensor::zeros({1, 3})), DegenerateBatchError);
}

TEST_CASE("temporal loss") {
  std::mt19937_64 rng(4);
  for (int k = 0; k < 30; ++k) {
    const std::size_t m = 1 + k % 3, t = 2 + k % 3;
    Tensor a = oracle::random_tensor({m, t, 3}, rng), b = oracle::random_tensor({m, t, 3}, rng);
    CHECK(std::abs(temporal_loss(a, b).item() - oracle::temporal_loss(oracle::series(a), oracle::series(b))) < 1e-10);
  }
  Tensor same = Tensor::from_data({1, 2, 2}, {1, 0, 1, 0});
  CHECK(temporal_loss(same, same).item() == doctest::Approx(std::log(2.0)));
  SUBCASE("boosted positive closed form") {
    // Orthogonal steps, so only the same-step cross pair has a nonzero dot.
    const std::size_t t = 3;
    std::vector<double> a(t * t, 0.0), b(t * t, 0.0);
    for (std::size_t s = 0; s < t; ++s) {
      a[s * t + s] = 1.0;
      b[s * t + s] = 2.0;
    }
    Tensor ta = Tensor::from_data({1, t, t}, a), tb = Tensor::from_data({1, t, t}, b);
    // Positive dot 2, the 2(T-1) negatives have dot 0.
    CHECK(temporal_loss(ta, tb).item() == doctest::Approx(-std::log(std::exp(2.0) / (2.0 * (t - 1)))));
  }
  CHECK_THROWS_AS(temporal_loss(Tensor::zeros({2, 1, 3}), Tensor::zeros({2, 1, 3})), DegenerateBatchError);
}

TEST_CASE("inter-view loss") {
  std::mt19937_64 rng(8);
  for (int k = 0; k < 30; ++k) {
    const std::size_t v = 2 + k % 2;
    Tensor a = oracle::random_tensor({3, 2, v, 4}, rng), b = oracle::random_tensor({3, 2, v, 4}, rng);
    CHECK(std::abs(inter_view_loss(a, b).item() - oracle::inter_view_loss(a, b)) < 1e-10);
  }
  // Orthogonal views identical across branches.
  Tensor g = Tensor::from_data({1, 1, 2, 2}, {1, 0, 0, 1});
  CHECK(inter_view_loss(g, g).item() == doctest::Approx(-1.0));
  Tensor flat = Tensor::from_data({1, 1, 3, 2}, {1, 1, 1, 1, 1, 1});
  CHECK(inter_view_loss(flat, flat).item() == doctest::Approx(std::log(2.0)));
  CHECK_THROWS_AS(inter_view_loss(Tensor::zeros({2, 2, 1, 2}), Tensor::zeros({2, 2, 1, 2})), DegenerateBatchError);
}

TEST_CASE("intra-view loss") {
  std::mt19937_64 rng(9);
  for (int k = 0; k < 30; ++k) {
    auto b = oracle::random_batch(rng);
    Tensor g1 = oracle::random_tensor({b.m, b.t, b.v, b.d}, rng), g2 = oracle::random_tensor({b.m, b.t, b.v, b.d}, rng);
    for (bool with_pos : {false, true}) {
      auto got = intra_view_loss(g1, g2, meta_of(b), {with_pos});
      auto want = oracle::intra_view_loss(g1, g2, b.subjects, 0.5, with_pos);
      CHECK(std::abs(got.value.item() - want.value) < 1e-10);
      CHECK(got.contributing == want.anchors);
    }
  }
  // Two samples, two subjects, identical vectors: 1 positive, 1 negative, equal sims.
  Tensor g = Tensor::from_data({2, 1, 1, 2}, {1, 0, 1, 0});
  CHECK(intra_view_loss(g, g, BatchMeta{{0, 1}, {0, 1}, 0.5}).value.item() == doctest::Approx(0.0));
  CHECK_THROWS_AS(intra_view_loss(g, g, BatchMeta{{4, 4}, {0, 1}, 0.5}), DegenerateBatchError);
}

TEST_CASE("losses are invariant to batch order") {
  std::mt19937_64 rng(21);
  auto b = oracle::random_batch(rng);
  Tensor h = oracle::random_tensor({b.m, b.t, 4}, rng), h1 = oracle::random_tensor({b.m, b.t, 4}, rng),
         h2 = oracle::random_tensor({b.m, b.t, 4}, rng);
  Tensor g1 = oracle::random_tensor({b.m, b.t, b.v, b.d}, rng), g2 = oracle::random_tensor({b.m, b.t, b.v, b.d}, rng);
  std::vector<std::size_t> order(b.m);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  BatchMeta shuffled{{}, {}, 0.5};
  for (auto i : order) {
    shuffled.subject_ids.push_back(b.subjects[i]);
    shuffled.trial_ids.push_back(b.trials[i]);
  }
  auto base = compute_terms(h, h1, h2, g1, g2, meta_of(b));
  auto perm = compute_terms(permute_rows(h, order), permute_rows(h1, order), permute_rows(h2, order),
                            permute_rows(g1, order), permute_rows(g2, order), shuffled);
  CHECK(std::abs(base.subject.item() - perm.subject.item()) < 1e-12);
  CHECK(std::abs(base.trial.item() - perm.trial.item()) < 1e-12);
  CHECK(std::abs(base.epoch.item() - perm.epoch.item()) < 1e-12);
  CHECK(std::abs(base.temporal.item() - perm.temporal.item()) < 1e-12);
  CHECK(std::abs(base.inter_view.item() - perm.inter_view.item()) < 1e-12);
  CHECK(std::abs(base.intra_view.item() - perm.intra_view.item()) < 1e-12);
}

TEST_CASE("weighted total") {
  LossBreakdown ones;
  ones.subject = ones.trial = ones.epoch = ones.temporal = ones.inter_view = ones.intra_view = 0.5;
  auto t = total_loss(ones, LossWeights{});
  CHECK(t.view == 1.0);
  CHECK(t.total == doctest::Approx(4 * 0.5 + 2 * 1.0));

  LossBreakdown c{1.5, -0.3, 2.0, 0.7, 0.1, 0.4, 0, 0, 0};
  LossWeights w;
  LossWeights w2 = w;
  w2.subject *= 2;
  CHECK(total_loss(c, w2).total - total_loss(c, w).total == doctest::Approx(w.subject * c.subject));
  LossWeights no_view = w;
  no_view.view = 0;
  CHECK(total_loss(c, no_view).total == doctest::Approx(c.subject + c.trial + c.epoch + c.temporal));

  // The differentiable path agrees with the numeric breakdown.
  std::mt19937_64 rng(2);
  auto b = oracle::random_batch(rng);
  Tensor h = oracle::random_tensor({b.m, b.t, 4}, rng), h1 = oracle::random_tensor({b.m, b.t, 4}, rng),
         h2 = oracle::random_tensor({b.m, b.t, 4}, rng);
  Tensor g1 = oracle::random_tensor({b.m, b.t, b.v, b.d}, rng), g2 = oracle::random_tensor({b.m, b.t, b.v, b.d}, rng);
  LossBreakdown bd;
  Tensor total = weighted_total(compute_terms(h, h1, h2, g1, g2, meta_of(b)), w, &bd);
  CHECK(total.item() == doctest::Approx(bd.total).epsilon(1e-12));
  CHECK(bd.view == bd.inter_view + bd.intra_view);
}

TEST_CASE("loss gradients match finite differences") {
  std::mt19937_64 rng(17);
  auto b = oracle::random_batch(rng, 6, 2, 3);
  const auto meta = meta_of(b);
  Tensor h = oracle::random_tensor({b.m, 4}, rng, true);
  CHECK(ad::gradcheck([&](const Tensor& x) { return subject_loss(x, meta).value; }, h) < 1e-4);
  CHECK(ad::gradcheck([&](const Tensor& x) { return trial_loss(x, meta).value; }, h) < 1e-4);
  CHECK(ad::gradcheck([&](const Tensor& x) { return subject_loss(x, meta, {true}).value; }, h) < 1e-4);

  Tensor other = oracle::random_tensor({b.m, 4}, rng);
  CHECK(ad::gradcheck([&](const Tensor& x) { return epoch_loss(x, other); }, h) < 1e-4);
  CHECK(ad::gradcheck([&](const Tensor& x) { return epoch_loss(other, x); }, h) < 1e-4);

  Tensor s1 = oracle::random_tensor({b.m, b.t, 3}, rng, true), s2 = oracle::random_tensor({b.m, b.t, 3}, rng);
  CHECK(ad::gradcheck([&](const Tensor& x) { return temporal_loss(x, s2); }, s1) < 1e-4);
  CHECK(ad::gradcheck([&](const Tensor& x) { return temporal_loss(s2, x); }, s1) < 1e-4);

  Tensor g1 = oracle::random_tensor({b.m, b.t, b.v, b.d}, rng, true), g2 = oracle::random_tensor({b.m, b.t, b.v, b.d}, rng);
  CHECK(ad::gradcheck([&](const Tensor& x) { return inter_view_loss(x, g2); }, g1) < 1e-4);
  CHECK(ad::gradcheck([&](const Tensor& x) { return intra_view_loss(x, g2, meta).value; }, g1) < 1e-4);
  CHECK(ad::gradcheck([&](const Tensor& x) { return intra_view_loss(g2, x, meta).value; }, g1) < 1e-4);

  // Four-sample batch, as in the documented example.
  Tensor h4 = oracle::random_tensor({4, 3}, rng, true);
  BatchMeta m4{{0, 0, 1, 1}, {0, 1, 2, 3}, 0.5};
  CHECK(ad::gradcheck([&](const Tensor& x) { return subject_loss(x, m4).value; }, h4) < 1e-4);
}
