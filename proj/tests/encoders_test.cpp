#include <cmath>
#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <json.hpp>

#include "gradcheck.hpp"
#include "promalign/encoders.hpp"
#include "promalign/errors.hpp"

namespace promalign {
namespace {

using nlohmann::json;
using testing::rand_tensor;

EncoderConfig small_config() {
  EncoderConfig cfg;
  cfg.vocab_size = 50;
  cfg.max_text_len = 10;
  cfg.num_patches = 4;
  cfg.patch_feature_dim = 3;
  cfg.hidden_dim = 8;
  cfg.visual_hidden_dim = 8;
  cfg.patch_proj_dim = 4;
  cfg.joint_dim = 4;
  cfg.num_layers = 1;
  cfg.num_heads = 2;
  cfg.seed = 12345;
  return cfg;
}

PatchGrid fixture_grid(const EncoderConfig& cfg) {
  PatchGrid g{Tensor(cfg.num_patches, cfg.patch_feature_dim)};
  for (std::size_t i = 0; i < g.patches.rows(); ++i)
    for (std::size_t j = 0; j < g.patches.cols(); ++j)
      g.patches.at(i, j) = std::sin(static_cast<double>(i * 3 + j) + 0.5);
  return g;
}

TEST(EncoderConfig, ValidateCatchesBadFields) {
  EncoderConfig cfg = small_config();
  EXPECT_NO_THROW(cfg.validate());
  cfg.hidden_dim = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.hidden_dim = 9;  // not divisible by 2 heads... 9 % 2 = 1
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.temperature = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.temperature = -1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(TextEncoder, ShapeContract) {
  EncoderConfig cfg = small_config();
  ParamStore ps(cfg.seed);
  TextEncoder enc(cfg, ps, "text");
  Var out = enc.encode({{1, 2, 3, 4, 5}});
  EXPECT_EQ(out.rows(), 6u);
  EXPECT_EQ(out.cols(), cfg.hidden_dim);
  EXPECT_TRUE(out.value().all_finite());
}

TEST(TextEncoder, MaxLengthAccepted) {
  EncoderConfig cfg = small_config();
  cfg.max_text_len = 80;
  ParamStore ps(cfg.seed);
  TextEncoder enc(cfg, ps, "text");
  TokenSequence t;
  for (std::size_t i = 0; i < 80; ++i) t.ids.push_back(i % cfg.vocab_size);
  Var out = enc.encode(t);
  EXPECT_EQ(out.rows(), 81u);
  TokenSequence too_long = t;
  too_long.ids.push_back(0);
  EXPECT_THROW(enc.encode(too_long), InputError);
}

TEST(TextEncoder, RejectsBadTokens) {
  EncoderConfig cfg = small_config();
  ParamStore ps(cfg.seed);
  TextEncoder enc(cfg, ps, "text");
  EXPECT_THROW(enc.encode({{}}), InputError);
  try {
    enc.encode({{3, 99, 1}});  // 99 >= vocab 50
    FAIL() << "expected InputError";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("position 1"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("99"), std::string::npos);
  }
}

TEST(TextEncoder, DeterministicAcrossConstructions) {
  EncoderConfig cfg = small_config();
  TokenSequence t{{7, 3, 3, 40}};
  ParamStore ps1(cfg.seed), ps2(cfg.seed);
  TextEncoder a(cfg, ps1, "text"), b(cfg, ps2, "text");
  Tensor oa = a.encode(t).value();
  Tensor ob = b.encode(t).value();
  ASSERT_TRUE(oa.same_shape(ob));
  for (std::size_t i = 0; i < oa.size(); ++i) EXPECT_EQ(oa.data()[i], ob.data()[i]);
}

TEST(TextEncoder, MarkerTableServesReservedIds) {
  EncoderConfig cfg = small_config();
  ParamStore ps(cfg.seed);
  TextEncoder enc(cfg, ps, "text");
  Var markers = Var::leaf(Tensor(kMarkerTokenCount, cfg.hidden_dim, 0.25));
  TokenSequence t{{cfg.vocab_size, 1, cfg.vocab_size + 3}};
  Var out = enc.encode(t, &markers);
  EXPECT_EQ(out.rows(), 4u);
  // without the marker table the same ids must be rejected
  EXPECT_THROW(enc.encode(t), InputError);
  // id past the marker range is rejected even with the table
  TokenSequence bad{{cfg.vocab_size + kMarkerTokenCount}};
  EXPECT_THROW(enc.encode(bad, &markers), InputError);
}

TEST(VisualEncoder, ShapeContractAndZeroInput) {
  EncoderConfig cfg = small_config();
  ParamStore ps(cfg.seed);
  VisualEncoder enc(cfg, ps, "visual");
  Var out = enc.encode(fixture_grid(cfg));
  EXPECT_EQ(out.rows(), cfg.num_patches + 1);
  EXPECT_EQ(out.cols(), cfg.visual_hidden_dim);

  PatchGrid zeros{Tensor(cfg.num_patches, cfg.patch_feature_dim, 0.0)};
  Var zout = enc.encode(zeros);
  EXPECT_EQ(zout.rows(), 5u);
  EXPECT_TRUE(zout.value().all_finite());
}

TEST(VisualEncoder, RejectsMalformedGrids) {
  EncoderConfig cfg = small_config();
  ParamStore ps(cfg.seed);
  VisualEncoder enc(cfg, ps, "visual");
  EXPECT_THROW(enc.encode({Tensor(3, cfg.patch_feature_dim)}), InputError);
  EXPECT_THROW(enc.encode({Tensor(cfg.num_patches, 2)}), InputError);
  PatchGrid bad{Tensor(cfg.num_patches, cfg.patch_feature_dim, 0.0)};
  bad.patches.at(1, 1) = HUGE_VAL;
  EXPECT_THROW(enc.encode(bad), InputError);
}

TEST(VisualEncoder, SubsetEncodesCrop) {
  EncoderConfig cfg = small_config();
  ParamStore ps(cfg.seed);
  VisualEncoder enc(cfg, ps, "visual");
  PatchGrid g = fixture_grid(cfg);
  Var out = enc.encode_subset(g, {2, 3});
  EXPECT_EQ(out.rows(), 3u);
  EXPECT_THROW(enc.encode_subset(g, {}), InputError);
  EXPECT_THROW(enc.encode_subset(g, {0}), InputError);
  EXPECT_THROW(enc.encode_subset(g, {5}), InputError);
}

TEST(VisualEncoder, GoldenOutputFrozen) {
  EncoderConfig cfg = small_config();
  ParamStore ps(cfg.seed);
  VisualEncoder enc(cfg, ps, "visual");
  Tensor out = enc.encode(fixture_grid(cfg)).value();

  std::string path = std::string(PROMALIGN_SOURCE_DIR) + "/tests/golden/encode_image.json";
  if (std::getenv("PROMALIGN_REGEN_GOLDEN")) {
    json j;
    j["rows"] = out.rows();
    j["cols"] = out.cols();
    j["values"] = json::array();
    for (std::size_t i = 0; i < out.rows(); ++i) {
      json row = json::array();
      for (std::size_t c = 0; c < out.cols(); ++c) row.push_back(out.at(i, c));
      j["values"].push_back(row);
    }
    std::ofstream f(path);
    f << j.dump(1) << "\n";
    GTEST_SKIP() << "regenerated " << path;
  }

  std::ifstream f(path);
  ASSERT_TRUE(f.good()) << "missing golden file " << path
                        << " (set PROMALIGN_REGEN_GOLDEN=1 to create)";
  json j = json::parse(f);
  ASSERT_EQ(j["rows"].get<std::size_t>(), out.rows());
  ASSERT_EQ(j["cols"].get<std::size_t>(), out.cols());
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t c = 0; c < out.cols(); ++c)
      EXPECT_EQ(j["values"][i][c].get<double>(), out.at(i, c))
          << "mismatch at (" << i << "," << c << ")";
}

TEST(FusionEncoder, ShapeAndIndexMap) {
  EncoderConfig cfg = small_config();
  ParamStore ps(cfg.seed);
  TextEncoder te(cfg, ps, "text");
  VisualEncoder ve(cfg, ps, "visual");
  FusionEncoder fe(cfg, ps, "fusion");
  FusedSequence fused = fe.fuse(te.encode({{1, 2, 3, 4, 5}}), ve.encode(fixture_grid(cfg)));
  EXPECT_EQ(fused.length(), 10u);  // 5 + 4 + 1
  EXPECT_EQ(fused.seq.rows(), 10u);
  EXPECT_EQ(fused.n_text, 5u);
  EXPECT_EQ(fused.n_patches, 4u);
  EXPECT_EQ(fused.patch_position(2), 7u);
  EXPECT_EQ(fused.token_position(0), 1u);
  EXPECT_THROW(fused.patch_position(0), InternalError);
  EXPECT_THROW(fused.patch_position(5), InternalError);
  EXPECT_THROW(fused.token_position(5), InternalError);
}

TEST(FusionEncoder, ZeroInputsStayFinite) {
  EncoderConfig cfg = small_config();
  ParamStore ps(cfg.seed);
  FusionEncoder fe(cfg, ps, "fusion");
  Var text = Var::constant(Tensor(6, cfg.hidden_dim, 0.0));
  Var vis = Var::constant(Tensor(5, cfg.visual_hidden_dim, 0.0));
  FusedSequence fused = fe.fuse(text, vis);
  EXPECT_EQ(fused.length(), 10u);
  EXPECT_TRUE(fused.seq.value().all_finite());
}

TEST(ShapeAlgebra, HoldsAcrossLengths) {
  EncoderConfig cfg = small_config();
  ParamStore ps(cfg.seed);
  TextEncoder te(cfg, ps, "text");
  VisualEncoder ve(cfg, ps, "visual");
  FusionEncoder fe(cfg, ps, "fusion");
  PatchGrid g = fixture_grid(cfg);
  Var vis = ve.encode(g);
  for (std::size_t n = 1; n <= cfg.max_text_len; ++n) {
    TokenSequence t;
    for (std::size_t i = 0; i < n; ++i) t.ids.push_back((i * 7) % cfg.vocab_size);
    Var text = te.encode(t);
    EXPECT_EQ(text.rows(), n + 1);
    FusedSequence fused = fe.fuse(text, vis);
    EXPECT_EQ(fused.length(), n + cfg.num_patches + 1);
    EXPECT_TRUE(fused.seq.value().all_finite());
  }
}

TEST(Finiteness, RandomInputsStayFinite) {
  EncoderConfig cfg = small_config();
  ParamStore ps(cfg.seed);
  TextEncoder te(cfg, ps, "text");
  VisualEncoder ve(cfg, ps, "visual");
  FusionEncoder fe(cfg, ps, "fusion");
  Rng rng(777);
  for (int trial = 0; trial < 20; ++trial) {
    std::size_t n = 1 + rng.below(cfg.max_text_len);
    TokenSequence t;
    for (std::size_t i = 0; i < n; ++i) t.ids.push_back(rng.below(cfg.vocab_size));
    PatchGrid g{rand_tensor(rng, cfg.num_patches, cfg.patch_feature_dim, -5.0, 5.0)};
    FusedSequence fused = fe.fuse(te.encode(t), ve.encode(g));
    EXPECT_TRUE(fused.seq.value().all_finite());
  }
}

TEST(JointSimilarity, HandValues) {
  JointProjectionPair eye = JointProjectionPair::identity(2);
  Var a = Var::constant(Tensor::from_rows({{1.0, 0.0}}));
  Var b = Var::constant(Tensor::from_rows({{0.0, 1.0}}));
  EXPECT_DOUBLE_EQ(joint_similarity(a, b, eye).scalar(), 0.0);

  Var u = Var::constant(Tensor::from_rows({{1.0, 0.0}}));
  EXPECT_DOUBLE_EQ(joint_similarity(u, u, eye).scalar(), 1.0);

  Var v = Var::constant(Tensor::from_rows({{1.0, 2.0}}));
  Var t = Var::constant(Tensor::from_rows({{3.0, 4.0}}));
  EXPECT_DOUBLE_EQ(joint_similarity(v, t, eye).scalar(), 11.0);
}

TEST(JointSimilarity, BilinearInScaledArgument) {
  JointProjectionPair eye = JointProjectionPair::identity(3);
  Var v = Var::constant(Tensor::from_rows({{0.5, -1.0, 2.0}}));
  Var t = Var::constant(Tensor::from_rows({{1.5, 0.25, -0.75}}));
  double base = joint_similarity(v, t, eye).scalar();
  for (double alpha : {-2.0, 0.0, 0.5, 3.0}) {
    Var av = Var::constant(Tensor::from_rows({{0.5 * alpha, -1.0 * alpha, 2.0 * alpha}}));
    EXPECT_NEAR(joint_similarity(av, t, eye).scalar(), alpha * base, 1e-12);
  }
}

TEST(JointSimilarity, MatrixMatchesPairwiseCalls) {
  EncoderConfig cfg = small_config();
  ParamStore ps(cfg.seed);
  JointProjectionPair jp = JointProjectionPair::make(cfg, ps, "joint");
  Rng rng(31);
  Tensor vs = rand_tensor(rng, 3, cfg.visual_hidden_dim);
  Tensor ts = rand_tensor(rng, 3, cfg.hidden_dim);
  Tensor m = similarity_matrix(Var::constant(vs), Var::constant(ts), jp).value();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      Tensor vrow(1, cfg.visual_hidden_dim), trow(1, cfg.hidden_dim);
      for (std::size_t c = 0; c < cfg.visual_hidden_dim; ++c) vrow.at(0, c) = vs.at(i, c);
      for (std::size_t c = 0; c < cfg.hidden_dim; ++c) trow.at(0, c) = ts.at(j, c);
      double s = joint_similarity(Var::constant(vrow), Var::constant(trow), jp).scalar();
      EXPECT_NEAR(m.at(i, j), s, 1e-12);
    }
}

TEST(Encoders, GradientsReachParameters) {
  EncoderConfig cfg = small_config();
  ParamStore ps(cfg.seed);
  TextEncoder te(cfg, ps, "text");
  VisualEncoder ve(cfg, ps, "visual");
  FusionEncoder fe(cfg, ps, "fusion");
  FusedSequence fused = fe.fuse(te.encode({{1, 2, 3}}), ve.encode(fixture_grid(cfg)));
  ps.zero_grads();
  backward(mean_all(fused.seq));
  std::size_t touched = 0;
  for (const auto& [name, v] : ps.entries())
    if (!v.grad().all_zero()) ++touched;
  // every block of all three encoders participates; only unused tail rows of
  // the embedding tables stay zero, and those live inside touched tensors
  EXPECT_GT(touched, ps.entries().size() / 2);
}

}  // namespace
}  // namespace promalign
