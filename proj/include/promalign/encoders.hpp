#pragma once

// Small from-scratch transformer encoders: text, image patches, multimodal
// fusion, plus the joint-space projection heads behind every similarity score.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "promalign/autograd.hpp"
#include "promalign/errors.hpp"
#include "promalign/params.hpp"
#include "promalign/tensor.hpp"

namespace promalign {

// Reserved ids vocab_size .. vocab_size+3 are the relation entity markers;
// their embeddings live in a separate table owned by the RE head.
constexpr std::size_t kMarkerTokenCount = 4;

struct EncoderConfig {
  std::size_t vocab_size = 1000;
  std::size_t max_text_len = 80;
  std::size_t num_patches = 16;       // K
  std::size_t patch_feature_dim = 16;
  std::size_t hidden_dim = 32;        // d
  std::size_t visual_hidden_dim = 32; // d_v
  std::size_t patch_proj_dim = 16;    // d_m
  std::size_t joint_dim = 16;
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  double temperature = 0.07;
  std::uint64_t seed = 0;

  void validate() const {
    auto positive = [](std::size_t v, const char* field) {
      if (v == 0) throw ConfigError(std::string("encoder config: ") + field + " must be positive");
    };
    positive(vocab_size, "vocab_size");
    positive(max_text_len, "max_text_len");
    positive(num_patches, "num_patches");
    positive(patch_feature_dim, "patch_feature_dim");
    positive(hidden_dim, "hidden_dim");
    positive(visual_hidden_dim, "visual_hidden_dim");
    positive(patch_proj_dim, "patch_proj_dim");
    positive(joint_dim, "joint_dim");
    positive(num_layers, "num_layers");
    positive(num_heads, "num_heads");
    if (hidden_dim % num_heads != 0)
      throw ConfigError("encoder config: hidden_dim must be divisible by num_heads");
    if (visual_hidden_dim % num_heads != 0)
      throw ConfigError("encoder config: visual_hidden_dim must be divisible by num_heads");
    if (!(temperature > 0.0))
      throw ConfigError("encoder config: temperature must be > 0");
  }
};

struct TokenSequence {
  std::vector<std::size_t> ids;
};

inline void validate_tokens(const TokenSequence& tokens, const EncoderConfig& cfg,
                            bool allow_markers = false) {
  if (tokens.ids.empty()) throw InputError("token sequence must contain at least one token");
  if (tokens.ids.size() > cfg.max_text_len)
    throw InputError("token sequence length " + std::to_string(tokens.ids.size()) +
                     " exceeds max_text_len " + std::to_string(cfg.max_text_len));
  std::size_t limit = cfg.vocab_size + (allow_markers ? kMarkerTokenCount : 0);
  for (std::size_t i = 0; i < tokens.ids.size(); ++i)
    if (tokens.ids[i] >= limit)
      throw InputError("token id " + std::to_string(tokens.ids[i]) +
                       " out of vocabulary range at position " + std::to_string(i));
}

struct PatchGrid {
  Tensor patches;  // K x patch_feature_dim, row-major over the image grid
};

inline void validate_patches(const PatchGrid& grid, const EncoderConfig& cfg) {
  if (grid.patches.rows() != cfg.num_patches)
    throw InputError("patch grid has " + std::to_string(grid.patches.rows()) +
                     " patches, config expects " + std::to_string(cfg.num_patches));
  if (grid.patches.cols() != cfg.patch_feature_dim)
    throw InputError("patch feature dim " + std::to_string(grid.patches.cols()) +
                     " does not match config " + std::to_string(cfg.patch_feature_dim));
  if (!grid.patches.all_finite())
    throw InputError("patch grid contains non-finite features");
}

// One pre-activation residual unit: post-layer-norm self-attention + FFN,
// x = LN1(x + MHSA(x)); x = LN2(x + FFN(x)).
struct TransformerBlock {
  Var wq, bq, wk, bk, wv, bv, wo, bo;
  Var ln1_g, ln1_b;
  Var w1, b1, w2, b2;
  Var ln2_g, ln2_b;
  std::size_t num_heads = 1;

  static TransformerBlock make(ParamStore& ps, const std::string& prefix,
                               std::size_t width, std::size_t heads) {
    TransformerBlock b;
    b.num_heads = heads;
    b.wq = ps.create(prefix + ".wq", width, width, Init::kFanIn);
    b.bq = ps.create(prefix + ".bq", 1, width, Init::kZeros);
    b.wk = ps.create(prefix + ".wk", width, width, Init::kFanIn);
    b.bk = ps.create(prefix + ".bk", 1, width, Init::kZeros);
    b.wv = ps.create(prefix + ".wv", width, width, Init::kFanIn);
    b.bv = ps.create(prefix + ".bv", 1, width, Init::kZeros);
    b.wo = ps.create(prefix + ".wo", width, width, Init::kFanIn);
    b.bo = ps.create(prefix + ".bo", 1, width, Init::kZeros);
    b.ln1_g = ps.create(prefix + ".ln1_g", 1, width, Init::kOnes);
    b.ln1_b = ps.create(prefix + ".ln1_b", 1, width, Init::kZeros);
    b.w1 = ps.create(prefix + ".w1", width, 4 * width, Init::kFanIn);
    b.b1 = ps.create(prefix + ".b1", 1, 4 * width, Init::kZeros);
    b.w2 = ps.create(prefix + ".w2", 4 * width, width, Init::kFanIn);
    b.b2 = ps.create(prefix + ".b2", 1, width, Init::kZeros);
    b.ln2_g = ps.create(prefix + ".ln2_g", 1, width, Init::kOnes);
    b.ln2_b = ps.create(prefix + ".ln2_b", 1, width, Init::kZeros);
    return b;
  }

  Var forward(Var x) const {
    std::size_t width = x.cols();
    std::size_t dh = width / num_heads;
    Var q = add_rowvec(matmul(x, wq), bq);
    Var k = add_rowvec(matmul(x, wk), bk);
    Var v = add_rowvec(matmul(x, wv), bv);
    std::vector<Var> heads;
    heads.reserve(num_heads);
    double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    for (std::size_t h = 0; h < num_heads; ++h) {
      Var qh = cols(q, h * dh, (h + 1) * dh);
      Var kh = cols(k, h * dh, (h + 1) * dh);
      Var vh = cols(v, h * dh, (h + 1) * dh);
      Var attn = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt_dh));
      heads.push_back(matmul(attn, vh));
    }
    Var mhsa = add_rowvec(matmul(concat_cols(heads), wo), bo);
    x = layer_norm_rows(add(x, mhsa), ln1_g, ln1_b);
    Var ffn = add_rowvec(matmul(gelu(add_rowvec(matmul(x, w1), b1)), w2), b2);
    return layer_norm_rows(add(x, ffn), ln2_g, ln2_b);
  }
};

inline std::vector<TransformerBlock> make_blocks(ParamStore& ps, const std::string& prefix,
                                                 std::size_t width, std::size_t layers,
                                                 std::size_t heads) {
  std::vector<TransformerBlock> blocks;
  blocks.reserve(layers);
  for (std::size_t l = 0; l < layers; ++l)
    blocks.push_back(TransformerBlock::make(ps, prefix + ".l" + std::to_string(l), width, heads));
  return blocks;
}

// Text side. Output row 0 is the text summary position; rows 1..N the tokens.
class TextEncoder {
 public:
  TextEncoder(const EncoderConfig& cfg, ParamStore& ps, const std::string& prefix)
      : cfg_(cfg) {
    tok_table_ = ps.create(prefix + ".tok", cfg.vocab_size, cfg.hidden_dim, Init::kFanOut);
    pos_table_ = ps.create(prefix + ".pos", cfg.max_text_len + 1, cfg.hidden_dim, Init::kFanOut);
    cls_ = ps.create(prefix + ".cls", 1, cfg.hidden_dim, Init::kFanOut);
    blocks_ = make_blocks(ps, prefix, cfg.hidden_dim, cfg.num_layers, cfg.num_heads);
  }

  // (N+1) x d. `marker_table` (4 x d), when given, serves the reserved marker
  // ids vocab_size..vocab_size+3.
  Var encode(const TokenSequence& tokens, const Var* marker_table = nullptr) const {
    validate_tokens(tokens, cfg_, marker_table != nullptr);
    std::size_t n = tokens.ids.size();
    Var emb = marker_table ? gather_rows_two(tok_table_, *marker_table, tokens.ids)
                           : gather_rows(tok_table_, tokens.ids);
    Var seq = concat_rows({cls_, emb});
    seq = add(seq, rows(pos_table_, 0, n + 1));
    for (const auto& b : blocks_) seq = b.forward(seq);
    return seq;
  }

 private:
  EncoderConfig cfg_;
  Var tok_table_, pos_table_, cls_;
  std::vector<TransformerBlock> blocks_;
};

// Visual side. Patches are projected to d_m, lifted to d_v, then encoded with
// a learned summary vector at row 0.
class VisualEncoder {
 public:
  VisualEncoder(const EncoderConfig& cfg, ParamStore& ps, const std::string& prefix)
      : cfg_(cfg) {
    patch_w_ = ps.create(prefix + ".patch_w", cfg.patch_feature_dim, cfg.patch_proj_dim, Init::kFanIn);
    patch_b_ = ps.create(prefix + ".patch_b", 1, cfg.patch_proj_dim, Init::kZeros);
    in_w_ = ps.create(prefix + ".in_w", cfg.patch_proj_dim, cfg.visual_hidden_dim, Init::kFanIn);
    in_b_ = ps.create(prefix + ".in_b", 1, cfg.visual_hidden_dim, Init::kZeros);
    pos_table_ = ps.create(prefix + ".pos", cfg.num_patches + 1, cfg.visual_hidden_dim, Init::kFanOut);
    cls_ = ps.create(prefix + ".cls", 1, cfg.visual_hidden_dim, Init::kFanOut);
    blocks_ = make_blocks(ps, prefix, cfg.visual_hidden_dim, cfg.num_layers, cfg.num_heads);
  }

  // (K+1) x d_v over the whole grid.
  Var encode(const PatchGrid& grid) const {
    validate_patches(grid, cfg_);
    std::vector<std::size_t> all(cfg_.num_patches);
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return encode_rows(grid, all);
  }

  // (|subset|+1) x d_v over an object crop. `patch_indices` are 1-based grid
  // positions; positional embeddings follow the rank within the crop, since
  // the crop is treated as a small standalone image.
  Var encode_subset(const PatchGrid& grid, const std::vector<std::size_t>& patch_indices) const {
    validate_patches(grid, cfg_);
    if (patch_indices.empty()) throw InputError("object crop has no patches");
    std::vector<std::size_t> rows0;
    rows0.reserve(patch_indices.size());
    for (std::size_t k : patch_indices) {
      if (k < 1 || k > cfg_.num_patches)
        throw InputError("patch index " + std::to_string(k) + " outside 1.." +
                         std::to_string(cfg_.num_patches));
      rows0.push_back(k - 1);
    }
    return encode_rows(grid, rows0);
  }

 private:
  Var encode_rows(const PatchGrid& grid, const std::vector<std::size_t>& rows0) const {
    Var feats = gather_rows(Var::constant(grid.patches), rows0);
    Var m = add_rowvec(matmul(feats, patch_w_), patch_b_);
    Var z = add_rowvec(matmul(m, in_w_), in_b_);
    Var seq = concat_rows({cls_, z});
    seq = add(seq, rows(pos_table_, 0, rows0.size() + 1));
    for (const auto& b : blocks_) seq = b.forward(seq);
    return seq;
  }

  EncoderConfig cfg_;
  Var patch_w_, patch_b_, in_w_, in_b_, pos_table_, cls_;
  std::vector<TransformerBlock> blocks_;
};

// Fused multimodal sequence: row 0 is the fused summary, rows 1..N the text
// tokens, rows N+1..N+K the patches (patch k at row N+k).
struct FusedSequence {
  Var seq;
  std::size_t n_text = 0;     // N
  std::size_t n_patches = 0;  // K

  std::size_t length() const { return n_text + n_patches + 1; }

  Var summary() const { return row(seq, 0); }

  std::size_t token_position(std::size_t i) const {  // i in [0, N)
    if (i >= n_text) throw InternalError("fused token position out of range");
    return 1 + i;
  }

  std::size_t patch_position(std::size_t k) const {  // k in [1, K]
    if (k < 1 || k > n_patches) throw InternalError("fused patch position out of range");
    return n_text + k;
  }
};

// Concatenates text output with adapted visual output (visual summary row
// dropped so the overall length is N+K+1) and runs the fusion transformer.
class FusionEncoder {
 public:
  FusionEncoder(const EncoderConfig& cfg, ParamStore& ps, const std::string& prefix)
      : cfg_(cfg) {
    adapter_w_ = ps.create(prefix + ".adapter_w", cfg.visual_hidden_dim, cfg.hidden_dim, Init::kFanIn);
    adapter_b_ = ps.create(prefix + ".adapter_b", 1, cfg.hidden_dim, Init::kZeros);
    seg_text_ = ps.create(prefix + ".seg_text", 1, cfg.hidden_dim, Init::kFanOut);
    seg_visual_ = ps.create(prefix + ".seg_visual", 1, cfg.hidden_dim, Init::kFanOut);
    blocks_ = make_blocks(ps, prefix, cfg.hidden_dim, cfg.num_layers, cfg.num_heads);
  }

  FusedSequence fuse(const Var& text_seq, const Var& visual_seq) const {
    if (text_seq.cols() != cfg_.hidden_dim)
      throw InternalError("fusion: text width mismatch");
    if (visual_seq.cols() != cfg_.visual_hidden_dim)
      throw InternalError("fusion: visual width mismatch");
    if (visual_seq.rows() < 2)
      throw InternalError("fusion: visual sequence missing patch rows");
    std::size_t n = text_seq.rows() - 1;
    std::size_t k = visual_seq.rows() - 1;
    Var adapted = add_rowvec(matmul(rows(visual_seq, 1, k + 1), adapter_w_), adapter_b_);
    Var seq = concat_rows({add_rowvec(text_seq, seg_text_), add_rowvec(adapted, seg_visual_)});
    for (const auto& b : blocks_) seq = b.forward(seq);
    return FusedSequence{seq, n, k};
  }

 private:
  EncoderConfig cfg_;
  Var adapter_w_, adapter_b_, seg_text_, seg_visual_;
  std::vector<TransformerBlock> blocks_;
};

// The two learned maps into the shared joint space.
struct JointProjectionPair {
  Linear text_proj;    // d -> joint_dim
  Linear visual_proj;  // d_v -> joint_dim

  static JointProjectionPair make(const EncoderConfig& cfg, ParamStore& ps,
                                  const std::string& prefix) {
    JointProjectionPair jp;
    jp.text_proj = Linear(ps.create(prefix + ".text_w", cfg.hidden_dim, cfg.joint_dim, Init::kFanIn),
                          ps.create(prefix + ".text_b", 1, cfg.joint_dim, Init::kZeros));
    jp.visual_proj = Linear(ps.create(prefix + ".visual_w", cfg.visual_hidden_dim, cfg.joint_dim, Init::kFanIn),
                            ps.create(prefix + ".visual_b", 1, cfg.joint_dim, Init::kZeros));
    return jp;
  }

  static JointProjectionPair identity(std::size_t dim) {
    Tensor eye(dim, dim);
    for (std::size_t i = 0; i < dim; ++i) eye.at(i, i) = 1.0;
    JointProjectionPair jp;
    jp.text_proj = Linear(Var::constant(eye), Var::constant(Tensor(1, dim, 0.0)));
    jp.visual_proj = Linear(Var::constant(eye), Var::constant(Tensor(1, dim, 0.0)));
    return jp;
  }
};

// S(V, X): dot product of the projected visual and text summaries.
inline Var joint_similarity(const Var& visual_summary, const Var& text_summary,
                            const JointProjectionPair& proj) {
  if (!visual_summary.value().all_finite() || !text_summary.value().all_finite())
    throw InputError("joint_similarity: non-finite input");
  return dot(proj.visual_proj(visual_summary), proj.text_proj(text_summary));
}

// All-pairs scores: entry (i, j) = S(V_i, X_j).
inline Var similarity_matrix(const Var& visual_summaries, const Var& text_summaries,
                             const JointProjectionPair& proj) {
  return matmul(proj.visual_proj(visual_summaries), transpose(proj.text_proj(text_summaries)));
}

}  // namespace promalign
