#pragma once

// The four pre-training objectives and their weighted combination: image-text
// matching, symmetric contrastive image-text alignment over matched pairs,
// object-entity alignment against soft entity labels, and image-relation
// alignment against soft relation labels.

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "promalign/autograd.hpp"
#include "promalign/encoders.hpp"
#include "promalign/errors.hpp"
#include "promalign/tensor.hpp"

namespace promalign {

// A detector hit: normalized bbox plus the 1-based grid patches it covers.
struct ObjectProposal {
  std::array<double, 4> bbox{0.0, 0.0, 0.0, 0.0};  // x0, y0, x1, y1 in [0,1]
  std::vector<std::size_t> patch_indices;          // subset of {1..K}

  void validate(std::size_t num_patches) const {
    if (patch_indices.empty()) throw InputError("object proposal covers no patches");
    for (std::size_t k : patch_indices)
      if (k < 1 || k > num_patches)
        throw InputError("object proposal patch index " + std::to_string(k) +
                         " outside 1.." + std::to_string(num_patches));
  }
};

// A full distribution over M entity candidates or L relation tags.
struct SoftLabelDistribution {
  std::vector<double> probs;

  void validate() const {
    if (probs.empty()) throw InputError("soft label distribution is empty");
    double sum = 0.0;
    for (double p : probs) {
      if (!(p >= 0.0)) throw InputError("soft label distribution has a negative entry");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6)
      throw InputError("soft label distribution sums to " + std::to_string(sum) +
                       ", expected 1");
  }
};

struct LossWeights {
  double itm = 1.0;
  double cit = 1.0;
  double coe = 1.0;
  double cir = 1.0;

  void validate() const {
    if (itm < 0.0 || cit < 0.0 || coe < 0.0 || cir < 0.0)
      throw ConfigError("loss weights must be nonnegative");
  }
};

struct PretrainSample {
  std::string id;
  TokenSequence tokens;
  PatchGrid patches;
  int match = 1;  // y: 1 = caption describes the image
  std::optional<ObjectProposal> proposal;
  std::optional<SoftLabelDistribution> entity_label;
  std::optional<SoftLabelDistribution> relation_label;
};

struct PretrainBatch {
  std::vector<PretrainSample> samples;

  void validate(std::size_t num_patches) const {
    if (samples.empty()) throw InputError("pretrain batch is empty");
    for (const auto& s : samples) {
      if (s.match != 0 && s.match != 1)
        throw InputError("sample " + s.id + ": match label must be 0 or 1");
      if (s.entity_label && !s.proposal)
        throw InputError("sample " + s.id + ": entity soft label without an object proposal");
      if (s.proposal) s.proposal->validate(num_patches);
      if (s.entity_label) s.entity_label->validate();
      if (s.relation_label) s.relation_label->validate();
    }
  }

  std::size_t matched_count() const {
    std::size_t n = 0;
    for (const auto& s : samples) n += (s.match == 1);
    return n;
  }
};

// ---------------------------------------------------------------------------
// Image-text matching: mean binary cross-entropy of match probabilities.
// ---------------------------------------------------------------------------

inline Var itm_loss(const Var& match_probs, const std::vector<int>& labels) {
  return binary_cross_entropy(match_probs, labels);
}

inline double itm_loss(const std::vector<double>& match_probs, const std::vector<int>& labels) {
  return itm_loss(Var::constant(Tensor::row_vector(match_probs)), labels).scalar();
}

// ---------------------------------------------------------------------------
// Contrastive image-text loss over the matched subset. sim[i][j] = S(V_i, X_j)
// with the diagonal as positives; both softmax directions averaged.
// ---------------------------------------------------------------------------

inline Var cit_loss(const Var& sim_matrix, double tau) {
  if (tau <= 0.0) throw ConfigError("cit_loss: temperature must be > 0");
  std::size_t n = sim_matrix.rows();
  if (n == 0) {
    warn("cit_loss: no matched pairs in batch, contrastive term is 0");
    return Var::constant(Tensor(1, 1, 0.0));
  }
  if (sim_matrix.cols() != n) throw InputError("cit_loss: similarity matrix must be square");
  Var scaled = scale(sim_matrix, 1.0 / tau);
  std::vector<std::size_t> diag(n);
  for (std::size_t i = 0; i < n; ++i) diag[i] = i;
  Var image_to_text = cross_entropy(scaled, diag);
  Var text_to_image = cross_entropy(transpose(scaled), diag);
  return scale(add(image_to_text, text_to_image), 0.5);
}

inline double cit_loss(const Tensor& sim_matrix, double tau) {
  if (sim_matrix.rows() == 0) {
    warn("cit_loss: no matched pairs in batch, contrastive term is 0");
    return 0.0;
  }
  return cit_loss(Var::constant(sim_matrix), tau).scalar();
}

// ---------------------------------------------------------------------------
// Object-region pooling: mean of fused embeddings at the proposal's patches.
// ---------------------------------------------------------------------------

inline Var pool_object_region(const FusedSequence& fused, const ObjectProposal& proposal) {
  proposal.validate(fused.n_patches);
  std::vector<std::size_t> positions;
  positions.reserve(proposal.patch_indices.size());
  for (std::size_t k : proposal.patch_indices) positions.push_back(fused.patch_position(k));
  return mean_rows_subset(fused.seq, positions);
}

// ---------------------------------------------------------------------------
// Soft-label cross-entropies. Callers assemble logits/targets from exactly
// the samples that carry labels; B is the number of rows handed in.
// ---------------------------------------------------------------------------

namespace detail {
inline Tensor stack_distributions(const std::vector<SoftLabelDistribution>& dists,
                                  std::size_t want_cols, const char* what) {
  if (dists.empty()) throw InputError(std::string(what) + ": no soft labels given");
  Tensor t(dists.size(), dists[0].probs.size());
  for (std::size_t i = 0; i < dists.size(); ++i) {
    dists[i].validate();
    if (dists[i].probs.size() != want_cols)
      throw InputError(std::string(what) + ": distribution width " +
                       std::to_string(dists[i].probs.size()) + " does not match logits width " +
                       std::to_string(want_cols));
    for (std::size_t j = 0; j < want_cols; ++j) t.at(i, j) = dists[i].probs[j];
  }
  return t;
}
}  // namespace detail

inline Var coe_loss(const Var& entity_logits, const std::vector<SoftLabelDistribution>& pseudo) {
  if (entity_logits.rows() != pseudo.size())
    throw InputError("coe_loss: logit rows do not match label count");
  Tensor targets = detail::stack_distributions(pseudo, entity_logits.cols(), "coe_loss");
  return soft_cross_entropy(entity_logits, targets);
}

inline double coe_loss(const Tensor& entity_logits, const std::vector<SoftLabelDistribution>& pseudo) {
  return coe_loss(Var::constant(entity_logits), pseudo).scalar();
}

inline Var cir_loss(const Var& relation_logits, const std::vector<SoftLabelDistribution>& pseudo) {
  if (relation_logits.rows() != pseudo.size())
    throw InputError("cir_loss: logit rows do not match label count");
  Tensor targets = detail::stack_distributions(pseudo, relation_logits.cols(), "cir_loss");
  return soft_cross_entropy(relation_logits, targets);
}

inline double cir_loss(const Tensor& relation_logits, const std::vector<SoftLabelDistribution>& pseudo) {
  return cir_loss(Var::constant(relation_logits), pseudo).scalar();
}

// ---------------------------------------------------------------------------
// Weighted total.
// ---------------------------------------------------------------------------

inline double total_loss(double itm, double cit, double coe, double cir, const LossWeights& w) {
  w.validate();
  return w.itm * itm + w.cit * cit + w.coe * coe + w.cir * cir;
}

inline Var total_loss(const Var& itm, const Var& cit, const Var& coe, const Var& cir,
                      const LossWeights& w) {
  w.validate();
  return vsum({scale(itm, w.itm), scale(cit, w.cit), scale(coe, w.coe), scale(cir, w.cir)});
}

}  // namespace promalign
