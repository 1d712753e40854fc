#pragma once

// Sequence-labeling head: linear-chain CRF over fused token embeddings,
// log-space forward algorithm for training, Viterbi decoding, BIO span
// extraction, and span-level metrics.

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "promalign/autograd.hpp"
#include "promalign/errors.hpp"
#include "promalign/metrics.hpp"
#include "promalign/params.hpp"
#include "promalign/tensor.hpp"

namespace promalign {

// Added to structurally forbidden transitions. Large enough that exp()
// underflows to exactly zero (so masked pairs carry no probability and no
// gradient) while sums over a sequence stay finite.
inline constexpr double kMaskedTransition = -1e30;

// ---------------------------------------------------------------------------
// Label schema
// ---------------------------------------------------------------------------

// BIO label set over an ordered list of entity types: for type index t,
// B-type sits at 2t and I-type at 2t+1; O is always the last index.
struct LabelSchema {
  std::vector<std::string> entity_types;

  void validate() const {
    if (entity_types.empty()) throw ConfigError("label schema needs at least one entity type");
    for (std::size_t i = 0; i < entity_types.size(); ++i) {
      if (entity_types[i].empty()) throw ConfigError("empty entity type name");
      for (std::size_t j = i + 1; j < entity_types.size(); ++j)
        if (entity_types[i] == entity_types[j])
          throw ConfigError("duplicate entity type: " + entity_types[i]);
    }
  }

  std::size_t num_labels() const { return 2 * entity_types.size() + 1; }
  std::size_t o_index() const { return 2 * entity_types.size(); }
  std::size_t b_index(std::size_t type) const { return 2 * type; }
  std::size_t i_index(std::size_t type) const { return 2 * type + 1; }

  bool is_b(std::size_t label) const { return label < o_index() && label % 2 == 0; }
  bool is_i(std::size_t label) const { return label < o_index() && label % 2 == 1; }

  std::size_t type_of(std::size_t label) const {
    if (label >= o_index()) throw InternalError("type_of: label has no entity type");
    return label / 2;
  }

  std::string label_name(std::size_t label) const {
    if (label == o_index()) return "O";
    if (label > o_index()) throw InternalError("label_name: index out of range");
    return (is_b(label) ? "B-" : "I-") + entity_types[type_of(label)];
  }

  std::size_t label_index(const std::string& name) const {
    if (name == "O") return o_index();
    if (name.size() > 2 && (name[0] == 'B' || name[0] == 'I') && name[1] == '-') {
      std::string type = name.substr(2);
      for (std::size_t t = 0; t < entity_types.size(); ++t)
        if (entity_types[t] == type) return name[0] == 'B' ? b_index(t) : i_index(t);
    }
    throw InputError("unknown label name: " + name);
  }
};

struct BIOLabelSequence {
  std::vector<std::size_t> labels;

  // Pairwise structural validity: I-c may only follow B-c or I-c of the same
  // type. A leading I is allowed; span extraction treats it as a span start.
  void validate(const LabelSchema& schema) const {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] >= schema.num_labels())
        throw InputError("label index out of range at position " + std::to_string(i));
      if (i > 0 && schema.is_i(labels[i])) {
        std::size_t t = schema.type_of(labels[i]);
        if (labels[i - 1] != schema.b_index(t) && labels[i - 1] != schema.i_index(t))
          throw InputError("I-" + schema.entity_types[t] + " at position " + std::to_string(i) +
                           " does not continue a span");
      }
    }
  }
};

// 0 where a transition is allowed, kMaskedTransition where it would break the
// BIO invariant (into I-c from anything but B-c/I-c). Start scores are not
// masked: a leading I is representable and handled by the span repair rule.
inline Tensor bio_transition_mask(const LabelSchema& schema) {
  std::size_t n = schema.num_labels();
  Tensor mask(n, n, 0.0);
  for (std::size_t to = 0; to < n; ++to) {
    if (!schema.is_i(to)) continue;
    std::size_t t = schema.type_of(to);
    for (std::size_t from = 0; from < n; ++from)
      if (from != schema.b_index(t) && from != schema.i_index(t))
        mask.at(from, to) = kMaskedTransition;
  }
  return mask;
}

// ---------------------------------------------------------------------------
// CRF
// ---------------------------------------------------------------------------

// Potentials factor as emission(i, y_i) + transition(y_{i-1}, y_i), plus
// explicit start/end scores. The structural mask is fixed at construction
// and added to the transition table wherever it is consumed.
struct CRFParams {
  Linear emission;       // d -> |Y| scores, applied upstream of the chain ops
  Var transition;        // |Y| x |Y|, entry (a, b) scores the move a -> b
  Var start;             // 1 x |Y|
  Var end;               // 1 x |Y|
  Tensor transition_mask;

  static CRFParams make(std::size_t input_dim, const LabelSchema& schema, ParamStore& ps,
                        const std::string& prefix) {
    schema.validate();
    std::size_t n = schema.num_labels();
    CRFParams p;
    p.emission = Linear(ps.create(prefix + ".emission_w", input_dim, n, Init::kFanIn),
                        ps.create(prefix + ".emission_b", 1, n, Init::kZeros));
    p.transition = ps.create(prefix + ".transition", n, n, Init::kZeros);
    p.start = ps.create(prefix + ".start", 1, n, Init::kZeros);
    p.end = ps.create(prefix + ".end", 1, n, Init::kZeros);
    p.transition_mask = bio_transition_mask(schema);
    return p;
  }

  // Free-standing parameters for chains that are not tied to a ParamStore
  // (tests, oracle comparisons). No structural mask unless one is supplied.
  static CRFParams from_tensors(const Tensor& transition, const Tensor& start,
                                const Tensor& end,
                                const std::optional<Tensor>& mask = std::nullopt) {
    if (transition.rows() != transition.cols())
      throw InternalError("transition table must be square");
    if (start.rows() != 1 || end.rows() != 1 || start.cols() != transition.rows() ||
        end.cols() != transition.rows())
      throw InternalError("start/end scores must be 1 x |Y|");
    CRFParams p;
    p.transition = Var::leaf(transition);
    p.start = Var::leaf(start);
    p.end = Var::leaf(end);
    p.transition_mask = mask ? *mask : Tensor(transition.rows(), transition.cols(), 0.0);
    if (!p.transition_mask.same_shape(transition))
      throw InternalError("transition mask shape mismatch");
    return p;
  }

  std::size_t num_labels() const { return start.value().cols(); }
  Var masked_transition() const { return add(transition, Var::constant(transition_mask)); }
};

namespace detail {
inline void check_chain_inputs(std::size_t n, std::size_t cols, const CRFParams& params,
                               const std::vector<std::size_t>* gold) {
  if (n == 0) throw InputError("chain scoring needs at least one position");
  if (cols != params.num_labels())
    throw InternalError("emission width does not match label count");
  if (gold) {
    if (gold->size() != n) throw InputError("gold label count does not match sequence length");
    for (std::size_t i = 0; i < n; ++i)
      if ((*gold)[i] >= cols)
        throw InputError("label index out of range at position " + std::to_string(i));
  }
}
}  // namespace detail

// log p(gold | emissions) = score(gold) - logZ, with logZ from the log-space
// forward recursion. Always <= 0.
inline Var crf_log_prob(const Var& emissions, const CRFParams& params,
                        const BIOLabelSequence& gold) {
  std::size_t n = emissions.rows();
  detail::check_chain_inputs(n, emissions.cols(), params, &gold.labels);

  Var t = params.masked_transition();

  std::vector<Var> gold_terms;
  gold_terms.push_back(pick(params.start, 0, gold.labels[0]));
  for (std::size_t i = 0; i < n; ++i) {
    gold_terms.push_back(pick(emissions, i, gold.labels[i]));
    if (i > 0) gold_terms.push_back(pick(t, gold.labels[i - 1], gold.labels[i]));
  }
  gold_terms.push_back(pick(params.end, 0, gold.labels[n - 1]));
  Var gold_score = vsum(gold_terms);

  Var alpha = add(params.start, row(emissions, 0));
  for (std::size_t i = 1; i < n; ++i) {
    Var scores = add_colvec(t, transpose(alpha));  // (from, to): alpha[from] + t[from][to]
    alpha = add(logsumexp_cols(scores), row(emissions, i));
  }
  Var log_z = logsumexp_rows(add(alpha, params.end));

  return sub(gold_score, log_z);
}

// Plain score of one labeling under the same potentials (mask included).
inline double crf_sequence_score(const Tensor& emissions, const CRFParams& params,
                                 const std::vector<std::size_t>& labels) {
  std::size_t n = emissions.rows();
  detail::check_chain_inputs(n, emissions.cols(), params, &labels);
  const Tensor& t = params.transition.value();
  double score = params.start.value().at(0, labels[0]) + params.end.value().at(0, labels[n - 1]);
  for (std::size_t i = 0; i < n; ++i) {
    score += emissions.at(i, labels[i]);
    if (i > 0)
      score += t.at(labels[i - 1], labels[i]) +
               params.transition_mask.at(labels[i - 1], labels[i]);
  }
  return score;
}

// Maximum-score labeling; ties broken toward the lower label index.
inline BIOLabelSequence viterbi_decode(const Tensor& emissions, const CRFParams& params) {
  std::size_t n = emissions.rows();
  std::size_t y = params.num_labels();
  detail::check_chain_inputs(n, emissions.cols(), params, nullptr);
  const Tensor& t = params.transition.value();
  const Tensor& s = params.start.value();
  const Tensor& e = params.end.value();

  std::vector<double> delta(y);
  for (std::size_t j = 0; j < y; ++j) delta[j] = s.at(0, j) + emissions.at(0, j);

  std::vector<std::vector<std::size_t>> back(n, std::vector<std::size_t>(y, 0));
  for (std::size_t i = 1; i < n; ++i) {
    std::vector<double> next(y);
    for (std::size_t to = 0; to < y; ++to) {
      double best = -HUGE_VAL;
      std::size_t arg = 0;
      for (std::size_t from = 0; from < y; ++from) {
        double cand = delta[from] + t.at(from, to) + params.transition_mask.at(from, to);
        if (cand > best) {  // strict: first (lowest) index wins ties
          best = cand;
          arg = from;
        }
      }
      next[to] = best + emissions.at(i, to);
      back[i][to] = arg;
    }
    delta = std::move(next);
  }

  double best = -HUGE_VAL;
  std::size_t arg = 0;
  for (std::size_t j = 0; j < y; ++j) {
    double cand = delta[j] + e.at(0, j);
    if (cand > best) {
      best = cand;
      arg = j;
    }
  }

  BIOLabelSequence out;
  out.labels.resize(n);
  out.labels[n - 1] = arg;
  for (std::size_t i = n - 1; i > 0; --i) out.labels[i - 1] = back[i][out.labels[i]];
  return out;
}

// Mean negative log-likelihood over a batch of (emissions, gold) pairs.
inline Var mner_loss(const std::vector<Var>& emissions, const std::vector<BIOLabelSequence>& gold,
                     const CRFParams& params) {
  if (emissions.empty()) throw InputError("sequence labeling loss needs a nonempty batch");
  if (emissions.size() != gold.size())
    throw InputError("emissions/gold batch size mismatch");
  std::vector<Var> terms;
  terms.reserve(emissions.size());
  for (std::size_t i = 0; i < emissions.size(); ++i)
    terms.push_back(neg(crf_log_prob(emissions[i], params, gold[i])));
  return scale(vsum(terms), 1.0 / static_cast<double>(emissions.size()));
}

// ---------------------------------------------------------------------------
// Spans and metrics
// ---------------------------------------------------------------------------

// Token span [start, end) of one entity type.
struct EntitySpan {
  std::size_t start = 0;
  std::size_t end = 0;
  std::size_t type = 0;

  auto operator<=>(const EntitySpan&) const = default;
};

// Maximal B-I runs become spans. An I that does not continue a compatible
// span starts a new one of its type (repair rule for ill-formed input).
inline std::vector<EntitySpan> extract_spans(const BIOLabelSequence& seq,
                                             const LabelSchema& schema) {
  std::vector<EntitySpan> spans;
  std::optional<EntitySpan> open;
  auto close = [&]() {
    if (open) {
      spans.push_back(*open);
      open.reset();
    }
  };
  for (std::size_t i = 0; i < seq.labels.size(); ++i) {
    std::size_t label = seq.labels[i];
    if (label >= schema.num_labels())
      throw InputError("label index out of range at position " + std::to_string(i));
    if (label == schema.o_index()) {
      close();
    } else if (schema.is_b(label)) {
      close();
      open = EntitySpan{i, i + 1, schema.type_of(label)};
    } else {  // I-type
      std::size_t t = schema.type_of(label);
      if (open && open->type == t) {
        open->end = i + 1;
      } else {
        close();
        open = EntitySpan{i, i + 1, t};
      }
    }
  }
  close();
  return spans;
}

// Exact-match span precision/recall/F1 over (start, end, type).
inline PrfMetrics span_f1(const std::vector<EntitySpan>& pred,
                          const std::vector<EntitySpan>& gold) {
  std::set<EntitySpan> gold_set(gold.begin(), gold.end());
  std::set<EntitySpan> pred_set(pred.begin(), pred.end());
  std::size_t matches = 0;
  for (const auto& s : pred_set) matches += gold_set.count(s);
  return prf_from_counts(matches, pred_set.size(), gold_set.size());
}

}  // namespace promalign
