#include "doctest.h"

#include <cmath>
#include <numeric>
#include <random>

#include "daac/errors.hpp"
#include "daac/evaluation.hpp"
#include "oracles.hpp"

using namespace daac;
using namespace daac::eval;

TEST_CASE("auroc worked example and tie convention") {
  std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  std::vector<int> y{0, 0, 1, 1};
  CHECK(auroc(s, y) == 0.75);
  std::vector<double> flat(6, 0.3);
  std::vector<int> bal{0, 1, 0, 1, 0, 1};
  CHECK(auroc(flat, bal) == 0.5);
  CHECK_THROWS_AS(auroc(flat, std::vector<int>(6, 1)), ContractError);
}

TEST_CASE("auroc and auprc equal the brute-force oracles exactly") {
  std::mt19937_64 rng(31);
  for (int k = 0; k < 300; ++k) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 200)(rng);
    // Coarse scores so ties are common.
    const int levels = std::uniform_int_distribution<int>(2, 30)(rng);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = std::uniform_int_distribution<int>(0, levels)(rng) / static_cast<double>(levels);
      y[i] = std::uniform_int_distribution<int>(0, 1)(rng);
    }
    y[0] = 0;
    y[1] = 1;
    CHECK(auroc(s, y) == oracle::auroc(s, y));
    CHECK(auprc(s, y) == oracle::auprc(s, y));
  }
}

TEST_CASE("shuffled labels give chance AUROC") {
  std::mt19937_64 rng(4);
  std::vector<double> s(1000);
  std::vector<int> y(1000);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = static_cast<double>(i);
    y[i] = i % 2;
  }
  std::shuffle(y.begin(), y.end(), rng);
  CHECK(std::abs(auroc(s, y) - 0.5) < 0.05);
}

TEST_CASE("classification metrics") {
  SUBCASE("perfect predictions") {
    std::vector<int> y{0, 1, 1, 0, 1};
    std::vector<double> s{0.1, 0.9, 0.8, 0.2, 0.7};
    auto r = classification_metrics(y, y, s);
    CHECK(r.accuracy == 1.0);
    CHECK(r.precision == 1.0);
    CHECK(r.recall == 1.0);
    CHECK(r.f1 == 1.0);
    CHECK(*r.auroc == 1.0);
    CHECK(*r.auprc == 1.0);
  }
  SUBCASE("macro averages from the confusion matrix") {
    std::vector<int> y{1, 1, 1, 0, 0, 0, 0, 1};
    std::vector<int> p{1, 0, 1, 0, 1, 0, 0, 1};
    std::vector<double> s{.9, .4, .8, .1, .6, .2, .3, .7};
    auto r = classification_metrics(y, p, s);
    CHECK(r.tp == 3);
    CHECK(r.fn == 1);
    CHECK(r.fp == 1);
    CHECK(r.tn == 3);
    CHECK(r.accuracy == doctest::Approx((r.tp + r.tn) / 8.0));
    // Both classes have precision = recall = 0.75.
    CHECK(r.precision == doctest::Approx(0.75));
    CHECK(r.recall == doctest::Approx(0.75));
    CHECK(r.f1 == doctest::Approx(0.75));
  }
  SUBCASE("single-class labels leave rank metrics undefined") {
    std::vector<int> y{1, 1, 1};
    std::vector<int> p{1, 0, 1};
    std::vector<double> s{.9, .2, .8};
    auto r = classification_metrics(y, p, s);
    CHECK_FALSE(r.auroc.has_value());
    CHECK_FALSE(r.auprc.has_value());
    CHECK(r.to_json()["auroc"].is_null());
  }
  SUBCASE("permutation invariance") {
    std::mt19937_64 rng(2);
    std::vector<int> y(40), p(40);
    std::vector<double> s(40);
    for (std::size_t i = 0; i < y.size(); ++i) {
      y[i] = i % 2;
      s[i] = std::uniform_real_distribution<double>(0, 1)(rng);
      p[i] = s[i] > 0.5;
    }
    auto a = classification_metrics(y, p, s);
    std::vector<std::size_t> order(40);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<int> y2, p2;
    std::vector<double> s2;
    for (auto i : order) {
      y2.push_back(y[i]);
      p2.push_back(p[i]);
      s2.push_back(s[i]);
    }
    auto b = classification_metrics(y2, p2, s2);
    CHECK(a.to_json() == b.to_json());
  }
}

TEST_CASE("summaries") {
  std::vector<double> v{1, 2, 3, 4};
  auto s = summarize(v);
  CHECK(s.mean == 2.5);
  CHECK(s.stddev == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(summarize(std::vector<double>{7}).stddev == 0.0);
}

TEST_CASE("mutual information") {
  SUBCASE("constant feature") {
    std::vector<double> f(10, 3.0);
    std::vector<int> y{0, 1, 0, 1, 0, 1, 0, 1, 0, 1};
    CHECK(mutual_information(f, y) == 0.0);
  }
  SUBCASE("feature equal to balanced label") {
    std::vector<int> y{0, 1, 0, 1, 0, 1, 0, 1};
    std::vector<double> f(y.begin(), y.end());
    CHECK(mutual_information(f, y) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("tied values share a bin") {
    std::vector<double> f{1, 1, 1, 1, 2, 3};
    auto b = equal_frequency_bins(f, 3);
    CHECK(b[0] == b[3]);
    CHECK(b[4] != b[0]);
  }
  SUBCASE("matches the joint-count oracle") {
    std::mt19937_64 rng(12);
    for (int k = 0; k < 100; ++k) {
      const std::size_t bins = std::uniform_int_distribution<std::size_t>(1, 8)(rng);
      std::vector<std::vector<double>> table(bins, std::vector<double>(2));
      std::vector<double> f;
      std::vector<int> y;
      for (std::size_t b = 0; b < bins; ++b)
        for (int c = 0; c < 2; ++c) {
          const int count = std::uniform_int_distribution<int>(0, 9)(rng);
          table[b][c] = count;
          for (int q = 0; q < count; ++q) {
            f.push_back(static_cast<double>(b));
            y.push_back(c);
          }
        }
      if (f.empty()) continue;
      // With as many bins as samples every distinct value keeps its own bin.
      CHECK(std::abs(mutual_information(f, y, f.size()) - oracle::mi_from_counts(table)) < 1e-12);
    }
  }
  SUBCASE("bounded by log B and label entropy") {
    std::mt19937_64 rng(13);
    std::vector<double> f(300);
    std::vector<int> y(300);
    double p1 = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
      f[i] = std::normal_distribution<double>()(rng);
      y[i] = f[i] + 0.5 * std::normal_distribution<double>()(rng) > 0.8;
      p1 += y[i] / 300.0;
    }
    const double h = -(p1 * std::log(p1) + (1 - p1) * std::log(1 - p1));
    const double mi = mutual_information(f, y, 4);
    CHECK(mi >= 0.0);
    CHECK(mi <= std::min(std::log(4.0), h) + 1e-12);
  }
}

TEST_CASE("mi ranking flags discrepancy channels") {
  data::Corpus c;
  c.channels = 3;
  c.length = 2;
  for (int i = 0; i < 20; ++i) {
    data::HierSample s;
    s.label = i % 2;
    s.subject_id = i;
    s.trial_id = i;
    s.sample_id = i;
    const float noise = static_cast<float>((i * 7) % 5);
    s.values = {noise, noise, 1.0f, 1.0f, static_cast<float>(s.label), static_cast<float>(s.label)};
    c.samples.push_back(s);
  }
  c.splits.assign(20, data::Split::kNone);
  c.provenance["augmentation"] = {{"base_channels", 2}};
  auto rows = mi_ranking(c);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].channel == 2);
  CHECK(rows[0].discrepancy);
  CHECK_FALSE(rows[1].discrepancy);
  CHECK(rows.back().mi == 0.0);
}

TEST_CASE("error histogram") {
  std::vector<double> e{0.0, 0.5, 1.0, 0.25};
  std::vector<int> y{0, 1, 1, 0};
  auto h = error_histogram(e, y, 4);
  CHECK(h.lo == 0.0);
  CHECK(h.hi == 1.0);
  CHECK(h.normal == std::vector<std::size_t>{1, 1, 0, 0});
  CHECK(h.abnormal == std::vector<std::size_t>{0, 0, 1, 1});
}
