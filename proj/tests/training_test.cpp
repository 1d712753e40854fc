// End-to-end exercises of the stage models, the synthetic corpus generator,
// and the training/evaluation drivers on top of it.

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "promalign/checkpoint.hpp"
#include "promalign/model.hpp"
#include "promalign/toy_corpus.hpp"
#include "promalign/trainer.hpp"

namespace promalign {
namespace {

namespace fs = std::filesystem;

std::string fresh_dir(const std::string& tag) {
  static int counter = 0;
  fs::path p = fs::temp_directory_path() /
               ("promalign_training_" + tag + "_" + std::to_string(++counter) + "_" +
                std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::string read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  EXPECT_TRUE(f.good()) << path;
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::size_t line_count(const std::string& path) {
  std::ifstream f(path);
  std::size_t n = 0;
  std::string line;
  while (std::getline(f, line)) ++n;
  return n;
}

TEST(ToyCorpusTest, GeneratesLoadableFiles) {
  ToyCorpus tc = generate_toy_corpus(fresh_dir("gen"));
  Vocabulary vocab = Vocabulary::load(tc.vocab_file);
  EXPECT_EQ(vocab.words.size(), tc.vocab_size);

  auto records = read_pretrain_corpus(tc.pretrain_corpus);
  ASSERT_EQ(records.size(), 64u);
  EXPECT_EQ(records[0].match, 1);
  EXPECT_EQ(records[63].match, 0);

  EncoderConfig enc = tc.encoder_config();
  PatchGrid g{read_patch_file(tc.dir + "/patches/s00.patch", enc.num_patches,
                              enc.patch_feature_dim)};
  validate_patches(g, enc);

  EXPECT_EQ(read_mner_corpus(tc.mner_train).size(), 20u);
  EXPECT_EQ(read_mner_corpus(tc.mner_dev).size(), 6u);
  EXPECT_EQ(read_mre_corpus(tc.mre_train).size(), 30u);
  EXPECT_EQ(read_mre_corpus(tc.mre_dev).size(), 10u);
  EXPECT_EQ(load_relation_tags(tc.relation_tags).tags.size(), 4u);

  RunConfig from_disk = RunConfig::from_file(tc.dir + "/config_pretrain.json", Stage::kPretrain);
  EXPECT_EQ(from_disk.encoder.vocab_size, tc.vocab_size);
  RunConfig::from_file(tc.dir + "/config_ner.json", Stage::kFinetuneNer);
  RunConfig::from_file(tc.dir + "/config_re.json", Stage::kFinetuneRe);
  RunConfig::from_file(tc.dir + "/config_eval_ner.json", Stage::kEval);
  RunConfig::from_file(tc.dir + "/config_eval_re.json", Stage::kEval);
  RunConfig::from_file(tc.dir + "/config_gen_pseudo_labels.json", Stage::kGenPseudoLabels);
}

TEST(ToyCorpusTest, MismatchedCaptionsNameADifferentNoun) {
  ToyCorpus tc = generate_toy_corpus(fresh_dir("derange"));
  auto records = read_pretrain_corpus(tc.pretrain_corpus);
  for (std::size_t i = 32; i < 64; ++i) {
    // image noun for record i is nouns[i % 8]; the caption must not name it
    EXPECT_EQ(records[i].caption.find(tc.nouns[i % 8]), std::string::npos) << records[i].id;
  }
}

TEST(ToyCorpusTest, RebuildIsByteIdentical) {
  std::string a = fresh_dir("bytes_a"), b = fresh_dir("bytes_b");
  generate_toy_corpus(a, 11);
  generate_toy_corpus(b, 11);
  for (const char* rel : {"/pretrain.jsonl", "/vocab.txt", "/proposals.jsonl", "/mner_train.txt",
                          "/mre_train.jsonl", "/patches/s17.patch", "/pos_lexicon.tsv"})
    EXPECT_EQ(read_bytes(a + rel), read_bytes(b + rel)) << rel;
}

TEST(StageModelTest, SharedStackInitIsStageIndependent) {
  ToyCorpus tc = generate_toy_corpus(fresh_dir("stack"));
  EncoderConfig enc = tc.encoder_config();
  enc.seed = 7;
  ParamStore pre_ps(7);
  PretrainModel pre(enc, 8, 4, true, pre_ps);
  ParamStore ner_ps(7);
  LabelSchema schema{tc.entity_types};
  NerModel ner(enc, schema, ner_ps);
  ParamStore re_ps(7);
  ReModel re(enc, 4, re_ps);

  std::size_t shared_seen = 0;
  for (const auto& [name, var] : pre_ps.entries()) {
    bool shared = name.rfind("text.", 0) == 0 || name.rfind("visual.", 0) == 0 ||
                  name.rfind("fusion.", 0) == 0;
    if (!shared) continue;
    ++shared_seen;
    ASSERT_TRUE(ner_ps.has(name)) << name;
    ASSERT_TRUE(re_ps.has(name)) << name;
    const Tensor& a = var.value();
    const Tensor& b = ner_ps.find(name).value();
    const Tensor& c = re_ps.find(name).value();
    ASSERT_EQ(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.data().size(); ++i) {
      ASSERT_EQ(a.data()[i], b.data()[i]) << name;
      ASSERT_EQ(a.data()[i], c.data()[i]) << name;
    }
  }
  EXPECT_GT(shared_seen, 30u);  // three encoders, two blocks each
}

TEST(PseudoLabelStageTest, WritesDeterministicCache) {
  ToyCorpus tc = generate_toy_corpus(fresh_dir("plcache"));
  RunConfig cfg = tc.base_config();
  cfg.stage = Stage::kGenPseudoLabels;

  GenPseudoLabelsResult r1 = run_gen_pseudo_labels(cfg);
  EXPECT_EQ(r1.mined_entities, 8u);
  EXPECT_EQ(r1.build.skipped_samples, 0u);
  EXPECT_EQ(r1.build.samples_without_proposals, 0u);
  std::string first = read_bytes(r1.cache_file);

  auto entries = read_cache_file(r1.cache_file);
  ASSERT_EQ(entries.size(), 128u);  // one proposal and one relation entry per pair
  std::size_t n_entity = 0, n_relation = 0;
  for (const auto& e : entries) {
    if (e.kind == "entity") {
      ++n_entity;
      EXPECT_EQ(e.distribution.probs.size(), 8u);
      EXPECT_TRUE(e.proposal.has_value());
    } else {
      ++n_relation;
      EXPECT_EQ(e.distribution.probs.size(), 4u);
    }
  }
  EXPECT_EQ(n_entity, 64u);
  EXPECT_EQ(n_relation, 64u);

  GenPseudoLabelsResult r2 = run_gen_pseudo_labels(cfg);
  EXPECT_EQ(read_bytes(r2.cache_file), first);
}

TEST(PretrainTest, ZeroLossWeightsLeaveParametersAtInit) {
  ToyCorpus tc = generate_toy_corpus(fresh_dir("zerow"));
  RunConfig cfg = tc.pretrain_config();
  cfg.max_steps = 5;
  cfg.loss_weights = {0.0, 0.0, 0.0, 0.0};
  PretrainResult r = run_pretrain(cfg);
  ASSERT_EQ(r.steps.size(), 5u);
  for (const auto& s : r.steps) EXPECT_EQ(s.total, 0.0);

  CheckpointData ckpt = load_checkpoint(r.final_checkpoint);
  ParamStore ps(cfg.seed);
  PretrainModel model(cfg.encoder, r.mined_entities, r.relation_tag_count,
                      cfg.share_prompt_encoders, ps);
  ASSERT_EQ(ckpt.tensors.size(), ps.entries().size());
  for (const auto& [name, tensor] : ckpt.tensors) {
    const Tensor& init = ps.find(name).value();
    ASSERT_EQ(tensor.data().size(), init.data().size()) << name;
    for (std::size_t i = 0; i < init.data().size(); ++i)
      ASSERT_EQ(tensor.data()[i], init.data()[i]) << name;
  }
}

TEST(PretrainTest, TotalMatchesWeightedComponentSum) {
  ToyCorpus tc = generate_toy_corpus(fresh_dir("wsum"));
  RunConfig cfg = tc.pretrain_config();
  cfg.max_steps = 6;
  cfg.loss_weights = {0.7, 1.3, 0.5, 2.0};
  PretrainResult r = run_pretrain(cfg);
  ASSERT_EQ(r.steps.size(), 6u);
  for (const auto& s : r.steps) {
    double expect = 0.7 * s.itm + 1.3 * s.cit + 0.5 * s.coe + 2.0 * s.cir;
    EXPECT_NEAR(s.total, expect, 1e-6);
    EXPECT_GT(s.matched_pairs, 0u);
    EXPECT_GT(s.entity_rows, 0u);
    EXPECT_EQ(s.relation_rows, s.batch);
    EXPECT_EQ(s.samples_without_entities, 0u);
    EXPECT_GE(s.itm_accuracy, 0.0);
    EXPECT_LE(s.itm_accuracy, 1.0);
  }
  EXPECT_EQ(line_count(r.log_path), 6u);
}

TEST(PretrainTest, IdenticalSeedsGiveIdenticalRunsAndCheckpoints) {
  ToyCorpus tc = generate_toy_corpus(fresh_dir("det"));
  RunConfig cfg = tc.pretrain_config();
  cfg.max_steps = 10;
  cfg.seed = 5;
  cfg.encoder.seed = 5;
  PretrainResult a = run_pretrain(cfg);
  std::string ckpt_bytes = read_bytes(a.final_checkpoint);
  std::string log_bytes = read_bytes(a.log_path);
  PretrainResult b = run_pretrain(cfg);  // identical config, overwrites in place

  ASSERT_EQ(a.steps.size(), b.steps.size());
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    EXPECT_EQ(a.steps[i].total, b.steps[i].total);
    EXPECT_EQ(a.steps[i].itm, b.steps[i].itm);
    EXPECT_EQ(a.steps[i].cit, b.steps[i].cit);
  }
  EXPECT_TRUE(read_bytes(b.final_checkpoint) == ckpt_bytes);
  EXPECT_TRUE(read_bytes(b.log_path) == log_bytes);
}

TEST(PretrainTest, MissingCacheWithoutOnTheFlyIsConfigError) {
  ToyCorpus tc = generate_toy_corpus(fresh_dir("nocache"));
  RunConfig cfg = tc.pretrain_config();
  cfg.max_steps = 2;
  cfg.pseudo_labels.on_the_fly = false;
  EXPECT_THROW(run_pretrain(cfg), ConfigError);

  RunConfig gen = tc.base_config();
  gen.stage = Stage::kGenPseudoLabels;
  run_gen_pseudo_labels(gen);
  PretrainResult r = run_pretrain(cfg);  // now the cache exists
  EXPECT_EQ(r.steps.size(), 2u);
}

TEST(PretrainTest, FrozenLabelsStillTrainDeterministically) {
  ToyCorpus tc = generate_toy_corpus(fresh_dir("freeze"));
  RunConfig cfg = tc.pretrain_config();
  cfg.max_steps = 10;  // 4 steps per epoch, so boundaries fall at steps 5 and 9
  cfg.pseudo_labels.freeze = true;
  PretrainResult r = run_pretrain(cfg);
  EXPECT_EQ(r.steps.size(), 10u);
  EXPECT_EQ(r.epochs_completed, 3u);
}

TEST(FinetuneTest, NerSmokeRunImprovesAndSelectsOnDev) {
  ToyCorpus tc = generate_toy_corpus(fresh_dir("nersmoke"));
  RunConfig cfg = tc.ner_config();
  cfg.max_steps = 30;
  cfg.paths.init_checkpoint.clear();  // scratch run
  FinetuneResult r = run_finetune_ner(cfg);
  ASSERT_EQ(r.step_losses.size(), 30u);
  EXPECT_LT(r.step_losses.back(), r.step_losses.front());
  EXPECT_FALSE(r.dev_scores.empty());
  EXPECT_GE(r.best_dev, 0.0);
  EXPECT_LE(r.best_dev, 1.0);
  EXPECT_TRUE(fs::exists(r.best_checkpoint));
  EXPECT_TRUE(fs::exists(r.final_checkpoint));
  EXPECT_GT(r.final_train_metric, 0.0);
}

TEST(FinetuneTest, ReSmokeRunImproves) {
  ToyCorpus tc = generate_toy_corpus(fresh_dir("resmoke"));
  RunConfig cfg = tc.re_config();
  cfg.max_steps = 30;
  cfg.paths.init_checkpoint.clear();
  FinetuneResult r = run_finetune_re(cfg);
  ASSERT_EQ(r.step_losses.size(), 30u);
  EXPECT_LT(r.step_losses.back(), r.step_losses.front());
  EXPECT_FALSE(r.dev_scores.empty());
  EXPECT_TRUE(fs::exists(r.best_checkpoint));
}

TEST(FinetuneTest, WarmStartAdoptsSharedStackFromPretrainCheckpoint) {
  ToyCorpus tc = generate_toy_corpus(fresh_dir("warm"));
  RunConfig pre_cfg = tc.pretrain_config();
  pre_cfg.max_steps = 3;
  PretrainResult pre = run_pretrain(pre_cfg);

  CheckpointData ckpt = load_checkpoint(pre.final_checkpoint);
  ParamStore ner_ps(pre_cfg.seed);
  LabelSchema schema{tc.entity_types};
  NerModel model(pre_cfg.encoder, schema, ner_ps);
  CheckpointApplyReport report = apply_checkpoint(ckpt, ner_ps, /*strict=*/false);
  EXPECT_GT(report.loaded, 0u);
  EXPECT_GT(report.ignored_in_checkpoint, 0u);  // alignment heads have no NER slot
  EXPECT_GT(report.left_initialized, 0u);       // the CRF stays at init

  // every loaded tensor matches the checkpoint bit for bit
  for (const auto& [name, tensor] : ckpt.tensors) {
    if (!ner_ps.has(name)) continue;
    const Tensor& got = ner_ps.find(name).value();
    for (std::size_t i = 0; i < got.data().size(); ++i)
      ASSERT_EQ(got.data()[i], tensor.data()[i]) << name;
  }
}

TEST(FinetuneTest, DeterministicNerRuns) {
  ToyCorpus tc = generate_toy_corpus(fresh_dir("nerdet"));
  RunConfig cfg = tc.ner_config();
  cfg.max_steps = 8;
  cfg.paths.init_checkpoint.clear();
  FinetuneResult a = run_finetune_ner(cfg);
  std::string ckpt_bytes = read_bytes(a.final_checkpoint);
  FinetuneResult b = run_finetune_ner(cfg);  // identical config, overwrites in place
  ASSERT_EQ(a.step_losses.size(), b.step_losses.size());
  for (std::size_t i = 0; i < a.step_losses.size(); ++i)
    EXPECT_EQ(a.step_losses[i], b.step_losses[i]);
  EXPECT_TRUE(read_bytes(b.final_checkpoint) == ckpt_bytes);
}

TEST(EvalTest, NerEvalWritesMetricsAndPredictions) {
  ToyCorpus tc = generate_toy_corpus(fresh_dir("evalner"));
  RunConfig ner_cfg = tc.ner_config();
  ner_cfg.max_steps = 20;
  ner_cfg.paths.init_checkpoint.clear();
  FinetuneResult ft = run_finetune_ner(ner_cfg);

  RunConfig cfg = tc.base_config();
  cfg.stage = Stage::kEval;
  cfg.eval_task = "ner";
  cfg.eval_split = "dev";
  cfg.paths.eval_checkpoint = ft.best_checkpoint;
  cfg.paths.output_dir = tc.dir + "/out/eval_ner";
  EvalResult r = run_eval(cfg);

  ASSERT_GE(r.metrics.size(), 3u);
  EXPECT_EQ(r.metrics[2].first, "span_f1");
  EXPECT_GE(r.metrics[2].second, 0.0);
  EXPECT_LE(r.metrics[2].second, 1.0);
  EXPECT_EQ(line_count(r.metrics_path), r.metrics.size());
  EXPECT_EQ(line_count(r.predictions_path), 6u);  // one line per dev sentence
  EXPECT_NE(r.table.find("span_f1"), std::string::npos);

  // the metrics file carries {metric, split, value} records
  std::ifstream mf(r.metrics_path);
  std::string first_line;
  std::getline(mf, first_line);
  nlohmann::json j = nlohmann::json::parse(first_line);
  EXPECT_EQ(j.at("split").get<std::string>(), "dev");
  EXPECT_EQ(j.at("metric").get<std::string>(), "span_precision");
}

TEST(EvalTest, ReEvalReportsPerInstancePredictions) {
  ToyCorpus tc = generate_toy_corpus(fresh_dir("evalre"));
  RunConfig re_cfg = tc.re_config();
  re_cfg.max_steps = 20;
  re_cfg.paths.init_checkpoint.clear();
  FinetuneResult ft = run_finetune_re(re_cfg);

  RunConfig cfg = tc.base_config();
  cfg.stage = Stage::kEval;
  cfg.eval_task = "re";
  cfg.eval_split = "dev";
  cfg.paths.eval_checkpoint = ft.best_checkpoint;
  cfg.paths.output_dir = tc.dir + "/out/eval_re";
  EvalResult r = run_eval(cfg);

  EXPECT_EQ(line_count(r.predictions_path), 10u);
  std::ifstream pf(r.predictions_path);
  std::string line;
  std::getline(pf, line);
  nlohmann::json j = nlohmann::json::parse(line);
  EXPECT_TRUE(j.contains("instance_id"));
  EXPECT_TRUE(j.contains("predicted_relation"));
  EXPECT_TRUE(j.contains("gold_relation"));
  EXPECT_TRUE(j.contains("logit_margin"));
}

TEST(EvalTest, MissingSplitIsAnInputError) {
  ToyCorpus tc = generate_toy_corpus(fresh_dir("evalmiss"));
  RunConfig cfg = tc.base_config();
  cfg.stage = Stage::kEval;
  cfg.eval_task = "ner";
  cfg.eval_split = "test";  // the toy corpus has no test split
  cfg.paths.eval_checkpoint = tc.dir + "/out/none.ckpt";
  EXPECT_THROW(run_eval(cfg), InputError);
}

}  // namespace
}  // namespace promalign
