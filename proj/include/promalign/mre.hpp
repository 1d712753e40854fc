#pragma once

// Relation-classification head: entity-marker injection, relation
// representation from marker positions, cross-entropy loss, and micro/
// per-label metrics.

#include <algorithm>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "promalign/autograd.hpp"
#include "promalign/encoders.hpp"
#include "promalign/errors.hpp"
#include "promalign/metrics.hpp"

namespace promalign {

// The four reserved marker ids occupy vocab_size..vocab_size+3 and are
// embedded from their own table so pre-training never touches them.
enum class MarkerToken : std::size_t { kE1Start = 0, kE1End = 1, kE2Start = 2, kE2End = 3 };

inline std::size_t marker_token_id(const EncoderConfig& cfg, MarkerToken m) {
  return cfg.vocab_size + static_cast<std::size_t>(m);
}

// Token span [first, second) — end-exclusive.
using TokenSpan = std::pair<std::size_t, std::size_t>;

struct RelationInstance {
  TokenSequence tokens;
  TokenSpan head_span;  // entity 1
  TokenSpan tail_span;  // entity 2
  PatchGrid image;
  std::size_t relation = 0;

  void validate(std::size_t num_relations) const {
    auto check_span = [&](const TokenSpan& s, const char* name) {
      if (s.second <= s.first || s.second > tokens.ids.size())
        throw InputError(std::string(name) + " span out of bounds or empty");
    };
    check_span(head_span, "head");
    check_span(tail_span, "tail");
    if (head_span.second > tail_span.first && tail_span.second > head_span.first)
      throw InputError("head and tail spans overlap");
    if (relation >= num_relations)
      throw InputError("relation index " + std::to_string(relation) + " out of range");
  }
};

struct MarkedSequence {
  TokenSequence tokens;  // original tokens plus the four markers
  std::pair<std::size_t, std::size_t> marker_positions;  // [E1_start], [E2_start]
};

// Wraps each entity span in its start/end markers. Insertions run right to
// left so earlier indices stay valid; where a close and an open fall on the
// same index the close lands first, keeping markers properly nested.
inline MarkedSequence inject_entity_markers(const RelationInstance& inst,
                                            const EncoderConfig& cfg) {
  validate_tokens(inst.tokens, cfg, /*allow_markers=*/false);
  inst.validate(std::numeric_limits<std::size_t>::max());
  if (inst.tokens.ids.size() + kMarkerTokenCount > cfg.max_text_len)
    throw InputError("marked sequence would exceed max_text_len " +
                     std::to_string(cfg.max_text_len) + "; truncate the instance upstream");

  struct Insertion {
    std::size_t pos;
    bool opening;
    std::size_t id;
  };
  std::vector<Insertion> plan = {
      {inst.head_span.first, true, marker_token_id(cfg, MarkerToken::kE1Start)},
      {inst.head_span.second, false, marker_token_id(cfg, MarkerToken::kE1End)},
      {inst.tail_span.first, true, marker_token_id(cfg, MarkerToken::kE2Start)},
      {inst.tail_span.second, false, marker_token_id(cfg, MarkerToken::kE2End)},
  };
  // right-to-left; at a shared index insert the opening marker first so the
  // closing marker of the earlier span ends up before it
  std::sort(plan.begin(), plan.end(), [](const Insertion& a, const Insertion& b) {
    if (a.pos != b.pos) return a.pos > b.pos;
    return a.opening > b.opening;
  });

  MarkedSequence out;
  out.tokens.ids = inst.tokens.ids;
  for (const auto& ins : plan)
    out.tokens.ids.insert(out.tokens.ids.begin() + static_cast<std::ptrdiff_t>(ins.pos), ins.id);

  auto locate = [&](MarkerToken m) {
    auto it = std::find(out.tokens.ids.begin(), out.tokens.ids.end(), marker_token_id(cfg, m));
    if (it == out.tokens.ids.end()) throw InternalError("marker lost during injection");
    return static_cast<std::size_t>(it - out.tokens.ids.begin());
  };
  out.marker_positions = {locate(MarkerToken::kE1Start), locate(MarkerToken::kE2Start)};
  return out;
}

// Removes the four reserved marker ids, recovering the original sequence.
inline TokenSequence strip_entity_markers(const MarkedSequence& marked,
                                          const EncoderConfig& cfg) {
  TokenSequence out;
  for (std::size_t id : marked.tokens.ids)
    if (id < cfg.vocab_size) out.ids.push_back(id);
  if (out.ids.size() + kMarkerTokenCount != marked.tokens.ids.size())
    throw InputError("marked sequence does not contain exactly four markers");
  return out;
}

// e_rel = concat of the fused rows at the two start-marker positions (2d wide).
inline Var relation_representation(const FusedSequence& fused,
                                   const std::pair<std::size_t, std::size_t>& marker_positions) {
  Var e1 = row(fused.seq, fused.token_position(marker_positions.first));
  Var e2 = row(fused.seq, fused.token_position(marker_positions.second));
  return concat_cols({e1, e2});
}

// Mean categorical cross-entropy over the batch.
inline Var mre_loss(const Var& logits, const std::vector<std::size_t>& gold) {
  return cross_entropy(logits, gold);
}

inline double mre_loss(const Tensor& logits, const std::vector<std::size_t>& gold) {
  return mre_loss(Var::constant(logits), gold).scalar();
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct LabelCounts {
  std::size_t matches = 0;
  std::size_t predicted = 0;
  std::size_t gold = 0;
};

struct RelationMetrics {
  PrfMetrics micro;
  std::vector<PrfMetrics> per_label;  // indexed by relation id
  std::vector<LabelCounts> counts;    // same indexing; micro aggregates these
};

// Micro-averaged P/R/F1. When a negative label is designated it is excluded
// from the counts (standard RE convention); otherwise micro-F1 reduces to
// accuracy. Per-label scores are always over all labels.
inline RelationMetrics relation_metrics(const std::vector<std::size_t>& pred,
                                        const std::vector<std::size_t>& gold,
                                        std::size_t num_labels,
                                        std::optional<std::size_t> negative_label = std::nullopt) {
  if (pred.size() != gold.size())
    throw InputError("prediction/gold length mismatch");
  if (negative_label && *negative_label >= num_labels)
    throw InputError("negative label index out of range");

  RelationMetrics out;
  out.counts.resize(num_labels);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] >= num_labels || gold[i] >= num_labels)
      throw InputError("relation index out of range at position " + std::to_string(i));
    ++out.counts[pred[i]].predicted;
    ++out.counts[gold[i]].gold;
    if (pred[i] == gold[i]) ++out.counts[gold[i]].matches;
  }

  out.per_label.resize(num_labels);
  for (std::size_t l = 0; l < num_labels; ++l)
    out.per_label[l] =
        prf_from_counts(out.counts[l].matches, out.counts[l].predicted, out.counts[l].gold);

  std::size_t matches = 0, predicted = 0, gold_count = 0;
  for (std::size_t l = 0; l < num_labels; ++l) {
    if (negative_label && l == *negative_label) continue;
    matches += out.counts[l].matches;
    predicted += out.counts[l].predicted;
    gold_count += out.counts[l].gold;
  }
  out.micro = prf_from_counts(matches, predicted, gold_count);
  return out;
}

}  // namespace promalign
