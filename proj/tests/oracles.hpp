#pragma once

// Brute-force reference implementations used by the unit tests and the
// acceptance runner. Everything here is written as plain loops over nested
// vectors so it shares no code with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "daac/tensor.hpp"

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

inline double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

inline double cosine(const Vec& a, const Vec& b) { return dot(a, b) / std::sqrt(dot(a, a) * dot(b, b)); }

// Rows of a rank-2 tensor.
inline Mat rows(const daac::ad::Tensor& t) {
  const std::size_t m = t.dim(0), c = t.dim(1);
  Mat out(m, Vec(c));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < c; ++k) out[i][k] = t.data()[i * c + k];
  return out;
}

// [M,T,C] tensor as out[i][t] = vector of C.
inline std::vector<Mat> series(const daac::ad::Tensor& t) {
  const std::size_t m = t.dim(0), len = t.dim(1), c = t.dim(2);
  std::vector<Mat> out(m, Mat(len, Vec(c)));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t s = 0; s < len; ++s)
      for (std::size_t k = 0; k < c; ++k) out[i][s][k] = t.data()[(i * len + s) * c + k];
  return out;
}

// [M,T,V,d] tensor mean-pooled over time: out[i][v] = vector of d.
inline std::vector<Mat> time_pooled_views(const daac::ad::Tensor& g) {
  const std::size_t m = g.dim(0), len = g.dim(1), nv = g.dim(2), d = g.dim(3);
  std::vector<Mat> out(m, Mat(nv, Vec(d, 0.0)));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t s = 0; s < len; ++s)
      for (std::size_t v = 0; v < nv; ++v)
        for (std::size_t k = 0; k < d; ++k) out[i][v][k] += g.data()[((i * len + s) * nv + v) * d + k] / len;
  return out;
}

struct Keyed {
  double value = 0.0;
  std::size_t anchors = 0;
};

// Subject or trial loss: every (anchor, positive) term with a negatives-only
// denominator (optionally plus the positive), averaged over anchors that
// have at least one positive and one negative.
inline Keyed keyed_loss(const Mat& h, const std::vector<std::int32_t>& key, double tau, bool with_positive = false) {
  const std::size_t m = h.size();
  double total = 0.0;
  Keyed out;
  for (std::size_t i = 0; i < m; ++i) {
    bool has_pos = false, has_neg = false;
    for (std::size_t j = 0; j < m; ++j) {
      if (j != i && key[j] == key[i]) has_pos = true;
      if (key[j] != key[i]) has_neg = true;
    }
    if (!has_pos || !has_neg) continue;
    ++out.anchors;
    for (std::size_t j = 0; j < m; ++j) {
      if (j == i || key[j] != key[i]) continue;
      double den = with_positive ? std::exp(cosine(h[i], h[j]) / tau) : 0.0;
      for (std::size_t k = 0; k < m; ++k)
        if (key[k] != key[i]) den += std::exp(cosine(h[i], h[k]) / tau);
      total += std::log(std::exp(cosine(h[i], h[j]) / tau) / den);
    }
  }
  out.value = out.anchors ? -total / static_cast<double>(out.anchors) : 0.0;
  return out;
}

inline double epoch_loss(const Mat& a, const Mat& b) {
  const std::size_t m = a.size();
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double den = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (j == i) continue;
      den += std::exp(dot(a[i], a[j])) + std::exp(dot(a[i], b[j]));
    }
    total += std::log(std::exp(dot(a[i], b[i])) / den);
  }
  return -total / static_cast<double>(m);
}

inline double temporal_loss(const std::vector<Mat>& a, const std::vector<Mat>& b) {
  const std::size_t m = a.size(), len = a[0].size();
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t t = 0; t < len; ++t) {
      double den = 0.0;
      for (std::size_t u = 0; u < len; ++u) {
        if (u == t) continue;
        den += std::exp(dot(a[i][t], a[i][u])) + std::exp(dot(a[i][t], b[i][u]));
      }
      total += std::log(std::exp(dot(a[i][t], b[i][t])) / den);
    }
  return -total / static_cast<double>(m * len);
}

// Views pooled over batch and time, then cosine across branches.
inline double inter_view_loss(const daac::ad::Tensor& g1, const daac::ad::Tensor& g2) {
  const std::size_t m = g1.dim(0), len = g1.dim(1), nv = g1.dim(2), d = g1.dim(3);
  Mat p1(nv, Vec(d, 0.0)), p2(nv, Vec(d, 0.0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t s = 0; s < len; ++s)
      for (std::size_t v = 0; v < nv; ++v)
        for (std::size_t k = 0; k < d; ++k) {
          const std::size_t at = ((i * len + s) * nv + v) * d + k;
          p1[v][k] += g1.data()[at] / (m * len);
          p2[v][k] += g2.data()[at] / (m * len);
        }
  double total = 0.0;
  for (std::size_t v = 0; v < nv; ++v) {
    double den = 0.0;
    for (std::size_t u = 0; u < nv; ++u)
      if (u != v) den += std::exp(cosine(p1[v], p2[u]));
    total += std::log(std::exp(cosine(p1[v], p2[v])) / den);
  }
  return -total / static_cast<double>(nv);
}

// Same-view terms across branches; positives share the subject (j may be i).
inline Keyed intra_view_loss(const daac::ad::Tensor& g1, const daac::ad::Tensor& g2,
                             const std::vector<std::int32_t>& subject, double tau, bool with_positive = false) {
  const auto a = time_pooled_views(g1), b = time_pooled_views(g2);
  const std::size_t m = a.size(), nv = a[0].size();
  double total = 0.0;
  Keyed out;
  for (std::size_t v = 0; v < nv; ++v)
    for (std::size_t i = 0; i < m; ++i) {
      bool has_neg = false;
      for (std::size_t j = 0; j < m; ++j) has_neg = has_neg || subject[j] != subject[i];
      if (!has_neg) continue;
      ++out.anchors;
      for (std::size_t j = 0; j < m; ++j) {
        if (subject[j] != subject[i]) continue;
        const double pos = std::exp(cosine(a[i][v], b[j][v]) / tau);
        double den = with_positive ? pos : 0.0;
        for (std::size_t k = 0; k < m; ++k)
          if (subject[k] != subject[i]) den += std::exp(cosine(a[i][v], b[k][v]) / tau);
        total += std::log(pos / den);
      }
    }
  out.value = out.anchors ? -total / static_cast<double>(out.anchors) : 0.0;
  return out;
}

// Fraction of (positive, negative) pairs ordered correctly, ties one half.
inline double auroc(const Vec& scores, const std::vector<int>& labels) {
  double good = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) good += 1.0;
      else if (scores[i] == scores[j]) good += 0.5;
    }
  }
  return good / pairs;
}

// Sum over distinct thresholds (descending) of (R_k - R_{k-1}) * P_k, where
// everything scoring >= the threshold is predicted positive.
inline double auprc(const Vec& scores, const std::vector<int>& labels) {
  Vec thresholds = scores;
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  double n_pos = 0.0;
  for (int y : labels) n_pos += y == 1;
  double prev_recall = 0.0, area = 0.0;
  for (double th : thresholds) {
    double tp = 0.0, predicted = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= th) {
        predicted += 1.0;
        tp += labels[i] == 1;
      }
    }
    const double recall = tp / n_pos;
    area += (recall - prev_recall) * (tp / predicted);
    prev_recall = recall;
  }
  return area;
}

// Plug-in MI from explicit joint counts table[b][y].
inline double mi_from_counts(const std::vector<std::vector<double>>& table) {
  double n = 0.0;
  for (const auto& row : table)
    for (double c : row) n += c;
  std::vector<double> py(table[0].size(), 0.0);
  for (const auto& row : table)
    for (std::size_t y = 0; y < row.size(); ++y) py[y] += row[y] / n;
  double mi = 0.0;
  for (const auto& row : table) {
    double pb = 0.0;
    for (double c : row) pb += c / n;
    for (std::size_t y = 0; y < row.size(); ++y) {
      const double pby = row[y] / n;
      if (pby > 0.0) mi += pby * std::log(pby / (pb * py[y]));
    }
  }
  return mi;
}

// Random contrastive batch with at least two subjects and two trials.
struct RandomBatch {
  std::size_t m, t, v, d;
  std::vector<std::int32_t> subjects, trials;
};

inline RandomBatch random_batch(std::mt19937_64& rng, std::size_t max_m = 8, std::size_t max_v = 3,
                                std::size_t max_t = 4) {
  RandomBatch b;
  b.m = std::uniform_int_distribution<std::size_t>(4, max_m)(rng);
  b.t = std::uniform_int_distribution<std::size_t>(2, max_t)(rng);
  b.v = std::uniform_int_distribution<std::size_t>(2, max_v)(rng);
  b.d = std::uniform_int_distribution<std::size_t>(2, 4)(rng);
  const int n_subj = std::uniform_int_distribution<int>(2, 3)(rng);
  for (std::size_t i = 0; i < b.m; ++i) {
    // Samples 0 and 1 pin two subjects, sample 2 shares sample 0's trial.
    if (i == 2) {
      b.subjects.push_back(b.subjects[0]);
      b.trials.push_back(b.trials[0]);
      continue;
    }
    const int s = i < 2 ? static_cast<int>(i) : std::uniform_int_distribution<int>(0, n_subj - 1)(rng);
    const int r = std::uniform_int_distribution<int>(0, 1)(rng);
    b.subjects.push_back(s);
    b.trials.push_back(s * 2 + r);
  }
  return b;
}

inline daac::ad::Tensor random_tensor(daac::ad::Shape shape, std::mt19937_64& rng, bool grad = false,
                                      double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(daac::ad::numel(shape));
  for (auto& x : v) x = n(rng);
  return daac::ad::Tensor::from_data(std::move(shape), std::move(v), grad);
}

}  // namespace oracle
