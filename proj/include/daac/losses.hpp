#pragma once

// Hierarchical and multi-view contrastive objectives.
//
// Subject, trial and intra-view losses use cosine similarity scaled by 1/tau
// and, by default, a denominator over negatives only. Epoch and temporal
// losses use raw dot products; the inter-view loss uses cosine without tau.
// Each function returns a differentiable scalar.

#include <cstdint>
#include <vector>

#include "daac/tensor.hpp"
#include "json.hpp"

namespace daac::loss {

using ad::Tensor;

struct BatchMeta {
  std::vector<std::int32_t> subject_ids;
  std::vector<std::int32_t> trial_ids;
  double tau = 0.5;
};

struct LossOptions {
  // Standard InfoNCE (positive term also in the denominator) instead of the
  // negatives-only denominator.
  bool include_positive_in_denominator = false;
};

struct LossValue {
  Tensor value;
  std::size_t contributing = 0;  // anchors (or anchor/view pairs) that entered the mean
  std::size_t skipped = 0;       // anchors lacking a positive or a negative
};

// h: pooled series embeddings [M, C].
LossValue subject_loss(const Tensor& h, const BatchMeta& meta, LossOptions options = {});
LossValue trial_loss(const Tensor& h, const BatchMeta& meta, LossOptions options = {});
// h1, h2: pooled embeddings of the two masked branches [M, C].
Tensor epoch_loss(const Tensor& h1, const Tensor& h2);
// h1, h2: per-timestep embeddings [M, T, C].
Tensor temporal_loss(const Tensor& h1, const Tensor& h2);
// g1, g2: view embeddings [M, T, V, d].
Tensor inter_view_loss(const Tensor& g1, const Tensor& g2);
LossValue intra_view_loss(const Tensor& g1, const Tensor& g2, const BatchMeta& meta,
                          LossOptions options = {});

struct LossWeights {
  double subject = 1.0;
  double trial = 1.0;
  double epoch = 1.0;
  double temporal = 1.0;
  double view = 2.0;
};
nlohmann::json to_json(const LossWeights& w);

struct LossBreakdown {
  double subject = 0, trial = 0, epoch = 0, temporal = 0;
  double inter_view = 0, intra_view = 0, view = 0;
  double total = 0;
  std::size_t skipped_anchors = 0;
};

// L_V = L_IRV + L_IAV; total = sum of weighted components.
LossBreakdown total_loss(const LossBreakdown& components, const LossWeights& weights);

struct LossTerms {
  Tensor subject, trial, epoch, temporal, inter_view, intra_view;
  std::size_t skipped_anchors = 0;
};
// Differentiable weighted total of already evaluated components, plus the
// numeric breakdown.
Tensor weighted_total(const LossTerms& terms, const LossWeights& weights, LossBreakdown* breakdown);

// Evaluates all six components for one batch.
// h: [M,T,C] raw-branch series embeddings; h1/h2 masked branches;
// g1/g2 views of the masked branches [M,T,V,d].
LossTerms compute_terms(const Tensor& h, const Tensor& h1, const Tensor& h2, const Tensor& g1,
                        const Tensor& g2, const BatchMeta& meta, LossOptions options = {});

}  // namespace daac::loss
