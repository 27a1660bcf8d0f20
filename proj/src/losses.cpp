#include "daac/losses.hpp"

#include <cmath>

#include "daac/errors.hpp"

namespace daac::loss {

using ad::Shape;

namespace {

void check_meta(const BatchMeta& meta, std::size_t m) {
  if (m < 2) throw DegenerateBatchError("contrastive loss needs a batch of at least 2");
  if (!(meta.tau > 0.0)) throw ConfigError("temperature must be positive");
  if (meta.subject_ids.size() != m || meta.trial_ids.size() != m) {
    throw DimensionError("batch meta does not match batch size");
  }
}

Tensor constant(Shape shape, std::vector<double> v) { return Tensor::from_data(std::move(shape), std::move(v)); }

// Grouped InfoNCE over a similarity matrix `sim` [M, N]. For each anchor row
// i with at least one positive and one negative column, every positive j
// contributes log exp(sim_ij) / sum_{k in neg(i)} exp(sim_ik), optionally
// with j added to the denominator. Returns the (unnormalised) sum of log
// terms and anchor bookkeeping.
struct GroupedSum {
  Tensor log_sum;  // undefined when no anchor qualified
  std::size_t anchors = 0;
  std::size_t skipped = 0;
};

GroupedSum grouped_infonce(const Tensor& sim, const std::vector<std::vector<bool>>& positive,
                           const std::vector<std::vector<bool>>& negative, bool include_positive) {
  const std::size_t m = sim.dim(0), n = sim.dim(1);
  std::vector<std::size_t> rows;
  std::vector<double> pick, den;
  GroupedSum out;
  for (std::size_t i = 0; i < m; ++i) {
    bool has_pos = false, has_neg = false;
    for (std::size_t j = 0; j < n; ++j) {
      has_pos = has_pos || positive[i][j];
      has_neg = has_neg || negative[i][j];
    }
    if (!has_pos || !has_neg) {
      ++out.skipped;
      continue;
    }
    ++out.anchors;
    for (std::size_t j = 0; j < n; ++j) {
      if (!positive[i][j]) continue;
      rows.push_back(i);
      for (std::size_t k = 0; k < n; ++k) {
        pick.push_back(k == j ? 1.0 : 0.0);
        den.push_back(negative[i][k] || (include_positive && k == j) ? 1.0 : 0.0);
      }
    }
  }
  if (rows.empty()) return out;
  const std::size_t q = rows.size();
  Tensor gathered = ad::index_select(sim, 0, rows);
  Tensor numer = ad::sum(ad::apply_mask(gathered, constant({q, n}, std::move(pick))), 1);
  Tensor lse = ad::logsumexp(gathered, 1, constant({q, n}, std::move(den)));
  out.log_sum = ad::sum(ad::sub(numer, lse));
  return out;
}

// Cosine similarity matrix between rows of a [M,C] and b [N,C], scaled.
Tensor cosine_matrix(const Tensor& a, const Tensor& b, double scale) {
  Tensor an = ad::l2_normalize(a, 1);
  Tensor bn = ad::l2_normalize(b, 1);
  return ad::scale(ad::matmul(an, ad::transpose(bn, 0, 1)), scale);
}

LossValue keyed_loss(const Tensor& h, const std::vector<std::int32_t>& keys, const BatchMeta& meta,
                     LossOptions options, const char* name) {
  if (h.rank() != 2) throw DimensionError(std::string(name) + ": expected [M, C] embeddings");
  const std::size_t m = h.dim(0);
  check_meta(meta, m);
  std::vector<std::vector<bool>> pos(m, std::vector<bool>(m)), neg(m, std::vector<bool>(m));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      pos[i][j] = i != j && keys[i] == keys[j];
      neg[i][j] = keys[i] != keys[j];
    }
  Tensor sim = cosine_matrix(h, h, 1.0 / meta.tau);
  auto g = grouped_infonce(sim, pos, neg, options.include_positive_in_denominator);
  if (g.anchors == 0) {
    throw DegenerateBatchError(std::string(name) + ": no anchor has both a positive and a negative");
  }
  return {ad::scale(g.log_sum, -1.0 / static_cast<double>(g.anchors)), g.anchors, g.skipped};
}

std::vector<double> eye(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return v;
}

}  // namespace

LossValue subject_loss(const Tensor& h, const BatchMeta& meta, LossOptions options) {
  return keyed_loss(h, meta.subject_ids, meta, options, "subject_loss");
}

LossValue trial_loss(const Tensor& h, const BatchMeta& meta, LossOptions options) {
  return keyed_loss(h, meta.trial_ids, meta, options, "trial_loss");
}

Tensor epoch_loss(const Tensor& h1, const Tensor& h2) {
  if (h1.rank() != 2 || h1.shape() != h2.shape()) throw DimensionError("epoch_loss: expected matching [M, C]");
  const std::size_t m = h1.dim(0);
  if (m < 2) throw DegenerateBatchError("epoch_loss: batch of at least 2 required");
  Tensor same = ad::matmul(h1, ad::transpose(h1, 0, 1));   // h1_i . h1_j
  Tensor cross = ad::matmul(h1, ad::transpose(h2, 0, 1));  // h1_i . h2_j
  Tensor numer = ad::sum(ad::apply_mask(cross, constant({m, m}, eye(m))), 1);
  std::vector<double> den(m * 2 * m, 1.0);
  for (std::size_t i = 0; i < m; ++i) {
    den[i * 2 * m + i] = 0.0;
    den[i * 2 * m + m + i] = 0.0;
  }
  Tensor lse = ad::logsumexp(ad::concat({same, cross}, 1), 1, constant({m, 2 * m}, std::move(den)));
  return ad::neg(ad::mean(ad::sub(numer, lse)));
}

Tensor temporal_loss(const Tensor& h1, const Tensor& h2) {
  if (h1.rank() != 3 || h1.shape() != h2.shape()) throw DimensionError("temporal_loss: expected matching [M, T, C]");
  const std::size_t m = h1.dim(0), t = h1.dim(1);
  if (t < 2) throw DegenerateBatchError("temporal_loss: at least 2 timestamps required");
  Tensor same = ad::matmul(h1, ad::transpose(h1, 1, 2));   // [M,T,T]
  Tensor cross = ad::matmul(h1, ad::transpose(h2, 1, 2));  // [M,T,T]
  std::vector<double> diag(m * t * t, 0.0), den(m * t * 2 * t, 1.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t a = 0; a < t; ++a) {
      diag[(i * t + a) * t + a] = 1.0;
      den[(i * t + a) * 2 * t + a] = 0.0;
      den[(i * t + a) * 2 * t + t + a] = 0.0;
    }
  Tensor numer = ad::sum(ad::apply_mask(cross, constant({m, t, t}, std::move(diag))), 2);
  Tensor lse = ad::logsumexp(ad::concat({same, cross}, 2), 2, constant({m, t, 2 * t}, std::move(den)));
  return ad::neg(ad::mean(ad::sub(numer, lse)));
}

Tensor inter_view_loss(const Tensor& g1, const Tensor& g2) {
  if (g1.rank() != 4 || g1.shape() != g2.shape()) throw DimensionError("inter_view_loss: expected matching [M, T, V, d]");
  const std::size_t v = g1.dim(2);
  if (v < 2) throw DegenerateBatchError("inter_view_loss: at least 2 views required");
  // Batch- and time-pooled view vectors [V, d].
  Tensor p1 = ad::mean(ad::mean(g1, 0), 0);
  Tensor p2 = ad::mean(ad::mean(g2, 0), 0);
  Tensor sim = cosine_matrix(p1, p2, 1.0);
  Tensor numer = ad::sum(ad::apply_mask(sim, constant({v, v}, eye(v))), 1);
  std::vector<double> den(v * v, 1.0);
  for (std::size_t i = 0; i < v; ++i) den[i * v + i] = 0.0;
  Tensor lse = ad::logsumexp(sim, 1, constant({v, v}, std::move(den)));
  return ad::neg(ad::mean(ad::sub(numer, lse)));
}

LossValue intra_view_loss(const Tensor& g1, const Tensor& g2, const BatchMeta& meta, LossOptions options) {
  if (g1.rank() != 4 || g1.shape() != g2.shape()) throw DimensionError("intra_view_loss: expected matching [M, T, V, d]");
  const std::size_t m = g1.dim(0), v = g1.dim(2), d = g1.dim(3);
  check_meta(meta, m);
  const auto& subj = meta.subject_ids;
  std::vector<std::vector<bool>> pos(m, std::vector<bool>(m)), neg(m, std::vector<bool>(m));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      pos[i][j] = subj[i] == subj[j];
      neg[i][j] = subj[i] != subj[j];
    }
  Tensor p1 = ad::mean(g1, 1);  // [M, V, d]
  Tensor p2 = ad::mean(g2, 1);
  Tensor total;
  LossValue out;
  for (std::size_t view = 0; view < v; ++view) {
    Tensor a = ad::reshape(ad::slice(p1, 1, view, 1), {m, d});
    Tensor b = ad::reshape(ad::slice(p2, 1, view, 1), {m, d});
    auto g = grouped_infonce(cosine_matrix(a, b, 1.0 / meta.tau), pos, neg, options.include_positive_in_denominator);
    out.skipped += g.skipped;
    out.contributing += g.anchors;
    if (g.anchors == 0) continue;
    total = total.defined() ? ad::add(total, g.log_sum) : g.log_sum;
  }
  if (out.contributing == 0) throw DegenerateBatchError("intra_view_loss: no (anchor, view) has a negative");
  out.value = ad::scale(total, -1.0 / static_cast<double>(out.contributing));
  return out;
}

nlohmann::json to_json(const LossWeights& w) {
  return {{"lambda_s", w.subject}, {"lambda_r", w.trial}, {"lambda_e", w.epoch}, {"lambda_t", w.temporal}, {"lambda_v", w.view}};
}

LossBreakdown total_loss(const LossBreakdown& c, const LossWeights& w) {
  LossBreakdown out = c;
  out.view = c.inter_view + c.intra_view;
  out.total = w.subject * c.subject + w.trial * c.trial + w.epoch * c.epoch + w.temporal * c.temporal +
              w.view * out.view;
  return out;
}

Tensor weighted_total(const LossTerms& terms, const LossWeights& w, LossBreakdown* breakdown) {
  Tensor view = ad::add(terms.inter_view, terms.intra_view);
  Tensor total = ad::add(
      ad::add(ad::add(ad::scale(terms.subject, w.subject), ad::scale(terms.trial, w.trial)),
              ad::add(ad::scale(terms.epoch, w.epoch), ad::scale(terms.temporal, w.temporal))),
      ad::scale(view, w.view));
  if (breakdown) {
    LossBreakdown c;
    c.subject = terms.subject.item();
    c.trial = terms.trial.item();
    c.epoch = terms.epoch.item();
    c.temporal = terms.temporal.item();
    c.inter_view = terms.inter_view.item();
    c.intra_view = terms.intra_view.item();
    c.skipped_anchors = terms.skipped_anchors;
    *breakdown = total_loss(c, w);
  }
  return total;
}

LossTerms compute_terms(const Tensor& h, const Tensor& h1, const Tensor& h2, const Tensor& g1, const Tensor& g2,
                        const BatchMeta& meta, LossOptions options) {
  LossTerms t;
  Tensor pooled = ad::mean(h, 1);
  auto s = subject_loss(pooled, meta, options);
  auto r = trial_loss(pooled, meta, options);
  t.subject = s.value;
  t.trial = r.value;
  t.epoch = epoch_loss(ad::mean(h1, 1), ad::mean(h2, 1));
  t.temporal = temporal_loss(h1, h2);
  t.inter_view = inter_view_loss(g1, g2);
  auto iav = intra_view_loss(g1, g2, meta, options);
  t.intra_view = iav.value;
  t.skipped_anchors = s.skipped + r.skipped + iav.skipped;
  return t;
}

}  // namespace daac::loss
