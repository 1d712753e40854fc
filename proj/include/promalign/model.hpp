#pragma once

// Stage models: the shared text/visual/fusion stack plus per-stage heads,
// all registered in one ParamStore. The shared stack registers first and in
// the same order in every stage model, so a given seed yields the same
// shared-encoder initialization whether a run starts from scratch or warm
// starts from another stage's checkpoint.

#include <optional>
#include <string>
#include <vector>

#include "promalign/alignment.hpp"
#include "promalign/autograd.hpp"
#include "promalign/encoders.hpp"
#include "promalign/errors.hpp"
#include "promalign/mner.hpp"
#include "promalign/mre.hpp"
#include "promalign/params.hpp"
#include "promalign/pseudo_labels.hpp"
#include "promalign/tokenizer.hpp"

namespace promalign {

struct SharedStack {
  TextEncoder text;
  VisualEncoder visual;
  FusionEncoder fusion;

  SharedStack(const EncoderConfig& cfg, ParamStore& ps)
      : text(cfg, ps, "text"), visual(cfg, ps, "visual"), fusion(cfg, ps, "fusion") {}
};

// One image-caption pair pushed through the stack.
struct EncodedPair {
  Var text_seq;    // (N+1) x d
  Var visual_seq;  // (K+1) x d_v
  FusedSequence fused;

  Var text_summary() const { return row(text_seq, 0); }
  Var visual_summary() const { return row(visual_seq, 0); }
};

// Alignment pre-training: shared stack, joint projections, the match head,
// and soft-label heads over the mined entity set and the relation tag set.
class PretrainModel {
 public:
  PretrainModel(const EncoderConfig& cfg, std::size_t num_entities, std::size_t num_relations,
                bool share_prompt_encoders, ParamStore& ps)
      : shared(cfg, ps) {
    if (num_entities == 0) throw ConfigError("pretrain model needs at least one entity candidate");
    if (num_relations == 0) throw ConfigError("pretrain model needs at least one relation tag");
    if (!share_prompt_encoders) {
      prompt_text_.emplace(cfg, ps, "prompt_text");
      prompt_visual_.emplace(cfg, ps, "prompt_visual");
    }
    joint = JointProjectionPair::make(cfg, ps, "joint");
    itm_head_ = Linear(ps.create("itm.w", cfg.hidden_dim, 1, Init::kFanIn),
                       ps.create("itm.b", 1, 1, Init::kZeros));
    entity_head_ = Linear(ps.create("entity_head.w", cfg.hidden_dim, num_entities, Init::kFanIn),
                          ps.create("entity_head.b", 1, num_entities, Init::kZeros));
    relation_head_ =
        Linear(ps.create("relation_head.w", cfg.hidden_dim, num_relations, Init::kFanIn),
               ps.create("relation_head.b", 1, num_relations, Init::kZeros));
  }

  EncodedPair encode_pair(const TokenSequence& tokens, const PatchGrid& patches) const {
    EncodedPair p;
    p.text_seq = shared.text.encode(tokens);
    p.visual_seq = shared.visual.encode(patches);
    p.fused = shared.fusion.fuse(p.text_seq, p.visual_seq);
    return p;
  }

  // P(match) in (0, 1), shape 1x1.
  Var match_prob(const FusedSequence& fused) const {
    return sigmoid(itm_head_(fused.summary()));
  }

  // 1 x M logits over the candidate entities for one object region.
  Var entity_logits(const FusedSequence& fused, const ObjectProposal& proposal) const {
    return entity_head_(pool_object_region(fused, proposal));
  }

  // 1 x L logits over the relation tags for the whole pair.
  Var relation_logits(const FusedSequence& fused) const {
    return relation_head_(fused.summary());
  }

  // Embedding callbacks for pseudo-label generation. Prompts go through the
  // dedicated prompt encoders when configured, otherwise the shared ones.
  // The returned closures borrow this model and the tokenizer.
  PromptEmbedder prompt_embedder(Tokenizer& tok) const {
    const TextEncoder* pt = prompt_text_ ? &*prompt_text_ : &shared.text;
    const VisualEncoder* pv = prompt_visual_ ? &*prompt_visual_ : &shared.visual;
    Tokenizer* tok_p = &tok;
    PromptEmbedder pe;
    pe.prompt_summary = [pt, tok_p](const std::string& prompt) {
      return row(pt->encode(tok_p->tokenize(prompt)), 0);
    };
    pe.image_summary = [pv](const PatchGrid& grid) { return row(pv->encode(grid), 0); };
    pe.crop_summary = [pv](const PatchGrid& grid, const std::vector<std::size_t>& patches) {
      return row(pv->encode_subset(grid, patches), 0);
    };
    return pe;
  }

  std::size_t num_entities() const { return entity_head_.out_dim(); }
  std::size_t num_relations() const { return relation_head_.out_dim(); }

  SharedStack shared;
  JointProjectionPair joint;

 private:
  std::optional<TextEncoder> prompt_text_;
  std::optional<VisualEncoder> prompt_visual_;
  Linear itm_head_, entity_head_, relation_head_;
};

// Sequence labeling: shared stack plus a CRF over the fused token rows.
class NerModel {
 public:
  NerModel(const EncoderConfig& cfg, const LabelSchema& schema, ParamStore& ps)
      : shared(cfg, ps), schema(schema),
        crf(CRFParams::make(cfg.hidden_dim, schema, ps, "ner")) {
    schema.validate();
  }

  FusedSequence encode(const TokenSequence& tokens, const PatchGrid& patches) const {
    return shared.fusion.fuse(shared.text.encode(tokens), shared.visual.encode(patches));
  }

  // N x num_labels emission scores, one row per text token.
  Var emissions(const FusedSequence& fused) const {
    return crf.emission(rows(fused.seq, 1, 1 + fused.n_text));
  }

  BIOLabelSequence decode(const Tensor& emission_scores) const {
    return viterbi_decode(emission_scores, crf);
  }

  SharedStack shared;
  LabelSchema schema;
  CRFParams crf;
};

// Relation classification: shared stack, learned marker embeddings, and a
// softmax head over the concatenated start-marker representations.
class ReModel {
 public:
  ReModel(const EncoderConfig& cfg, std::size_t num_relations, ParamStore& ps)
      : shared(cfg, ps),
        markers_(ps.create("re.markers", kMarkerTokenCount, cfg.hidden_dim, Init::kFanOut)),
        head_(Linear(ps.create("re.head.w", 2 * cfg.hidden_dim, num_relations, Init::kFanIn),
                     ps.create("re.head.b", 1, num_relations, Init::kZeros))) {
    if (num_relations == 0) throw ConfigError("relation model needs at least one relation label");
  }

  FusedSequence encode(const MarkedSequence& marked, const PatchGrid& patches) const {
    return shared.fusion.fuse(shared.text.encode(marked.tokens, &markers_),
                              shared.visual.encode(patches));
  }

  // 1 x num_relations logits for one marked instance.
  Var logits(const FusedSequence& fused, const MarkedSequence& marked) const {
    return head_(relation_representation(fused, marked.marker_positions));
  }

  std::size_t num_relations() const { return head_.out_dim(); }

  SharedStack shared;

 private:
  Var markers_;
  Linear head_;
};

}  // namespace promalign
