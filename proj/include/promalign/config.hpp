#pragma once

// Run configuration: JSON file -> RunConfig with defaults, validation, and
// strict unknown-key rejection at every nesting level.

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "promalign/alignment.hpp"
#include "promalign/encoders.hpp"
#include "promalign/errors.hpp"
#include "promalign/pseudo_labels.hpp"

namespace promalign {

enum class Stage { kPretrain, kFinetuneNer, kFinetuneRe, kEval, kGenPseudoLabels };

inline std::string stage_name(Stage s) {
  switch (s) {
    case Stage::kPretrain: return "pretrain";
    case Stage::kFinetuneNer: return "finetune_ner";
    case Stage::kFinetuneRe: return "finetune_re";
    case Stage::kEval: return "eval";
    case Stage::kGenPseudoLabels: return "gen_pseudo_labels";
  }
  throw InternalError("unreachable stage");
}

inline Stage stage_from_name(const std::string& name) {
  if (name == "pretrain") return Stage::kPretrain;
  if (name == "finetune_ner") return Stage::kFinetuneNer;
  if (name == "finetune_re") return Stage::kFinetuneRe;
  if (name == "eval") return Stage::kEval;
  if (name == "gen_pseudo_labels") return Stage::kGenPseudoLabels;
  throw ConfigError("unknown stage: " + name);
}

struct OptimizerConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("optimizer: learning_rate must be > 0");
    if (weight_decay < 0.0) throw ConfigError("optimizer: weight_decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ConfigError("optimizer: betas must lie in [0, 1)");
    if (!(epsilon > 0.0)) throw ConfigError("optimizer: epsilon must be > 0");
  }
};

struct BatchSizes {
  std::size_t pretrain = 8;
  std::size_t finetune = 16;

  void validate() const {
    if (pretrain == 0 || finetune == 0) throw ConfigError("batch sizes must be >= 1");
  }
};

struct PseudoLabelConfig {
  std::size_t num_entities = 50;         // M candidate entities to mine
  std::string entity_template = "E1";    // E1 | E2
  std::string relation_template = "RA";  // RA | RB | RC
  std::string detector = "fixture";      // fixture | random_crop
  bool freeze = false;                   // keep epoch-0 labels for the whole run
  bool on_the_fly = true;                // false -> cache file must already exist

  void validate() const {
    if (num_entities == 0) throw ConfigError("pseudo_labels: num_entities must be >= 1");
    if (detector != "fixture" && detector != "random_crop")
      throw ConfigError("pseudo_labels: detector must be fixture or random_crop");
    PromptTemplate::builtin(entity_template);
    PromptTemplate::builtin(relation_template);
  }
};

struct PathsConfig {
  std::string pretrain_corpus;
  std::string mner_train, mner_dev, mner_test;
  std::string mre_train, mre_dev, mre_test;
  std::string images_dir;      // holds <image_id>.patch files
  std::string vocab_file;
  std::string pos_lexicon;
  std::string relation_tags;
  std::string proposals;       // fixture-detector sidecar
  std::string cache_file;      // pseudo-label cache
  std::string init_checkpoint; // optional warm start for fine-tuning
  std::string eval_checkpoint; // model under evaluation
  std::string output_dir = "out";
};

struct RunConfig {
  Stage stage = Stage::kPretrain;
  std::uint64_t seed = 1;
  std::size_t max_steps = 500;
  std::size_t checkpoint_every = 0;  // 0 -> final checkpoint only
  EncoderConfig encoder;
  LossWeights loss_weights;
  OptimizerConfig optimizer;
  BatchSizes batch_size;
  PseudoLabelConfig pseudo_labels;
  PathsConfig paths;
  std::vector<std::string> entity_types;  // BIO schema for the NER head
  std::string negative_relation;          // "" -> no negative label declared
  std::string eval_task = "ner";          // ner | re
  std::string eval_split = "dev";         // train | dev | test
  bool share_prompt_encoders = true;

  void validate() const {
    encoder.validate();
    loss_weights.validate();
    optimizer.validate();
    batch_size.validate();
    pseudo_labels.validate();
    if (max_steps == 0) throw ConfigError("max_steps must be >= 1");
    if (eval_task != "ner" && eval_task != "re")
      throw ConfigError("eval_task must be ner or re");
    if (eval_split != "train" && eval_split != "dev" && eval_split != "test")
      throw ConfigError("eval_split must be train, dev, or test");
  }

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j,
                             std::optional<Stage> forced_stage = std::nullopt);
  static RunConfig from_file(const std::string& path,
                             std::optional<Stage> forced_stage = std::nullopt);
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                                const std::string& scope) {
  for (const auto& item : j.items())
    if (!allowed.count(item.key()))
      throw ConfigError("unknown config key: " + (scope.empty() ? "" : scope + ".") +
                        item.key());
}

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& into, const std::string& scope) {
  if (!j.contains(key)) return;
  try {
    into = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key " + (scope.empty() ? std::string(key) : scope + "." + key) +
                      " has the wrong type");
  }
}

}  // namespace detail

inline nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["stage"] = stage_name(stage);
  j["seed"] = seed;
  j["max_steps"] = max_steps;
  j["checkpoint_every"] = checkpoint_every;
  j["encoder"] = {{"vocab_size", encoder.vocab_size},
                  {"max_text_len", encoder.max_text_len},
                  {"num_patches", encoder.num_patches},
                  {"patch_feature_dim", encoder.patch_feature_dim},
                  {"hidden_dim", encoder.hidden_dim},
                  {"visual_hidden_dim", encoder.visual_hidden_dim},
                  {"patch_proj_dim", encoder.patch_proj_dim},
                  {"joint_dim", encoder.joint_dim},
                  {"num_layers", encoder.num_layers},
                  {"num_heads", encoder.num_heads},
                  {"temperature", encoder.temperature}};
  j["loss_weights"] = {{"itm", loss_weights.itm},
                       {"cit", loss_weights.cit},
                       {"coe", loss_weights.coe},
                       {"cir", loss_weights.cir}};
  j["optimizer"] = {{"learning_rate", optimizer.learning_rate},
                    {"weight_decay", optimizer.weight_decay},
                    {"beta1", optimizer.beta1},
                    {"beta2", optimizer.beta2},
                    {"epsilon", optimizer.epsilon}};
  j["batch_size"] = {{"pretrain", batch_size.pretrain}, {"finetune", batch_size.finetune}};
  j["pseudo_labels"] = {{"num_entities", pseudo_labels.num_entities},
                        {"entity_template", pseudo_labels.entity_template},
                        {"relation_template", pseudo_labels.relation_template},
                        {"detector", pseudo_labels.detector},
                        {"freeze", pseudo_labels.freeze},
                        {"on_the_fly", pseudo_labels.on_the_fly}};
  j["paths"] = {{"pretrain_corpus", paths.pretrain_corpus},
                {"mner_train", paths.mner_train},
                {"mner_dev", paths.mner_dev},
                {"mner_test", paths.mner_test},
                {"mre_train", paths.mre_train},
                {"mre_dev", paths.mre_dev},
                {"mre_test", paths.mre_test},
                {"images_dir", paths.images_dir},
                {"vocab_file", paths.vocab_file},
                {"pos_lexicon", paths.pos_lexicon},
                {"relation_tags", paths.relation_tags},
                {"proposals", paths.proposals},
                {"cache_file", paths.cache_file},
                {"init_checkpoint", paths.init_checkpoint},
                {"eval_checkpoint", paths.eval_checkpoint},
                {"output_dir", paths.output_dir}};
  j["entity_types"] = entity_types;
  j["negative_relation"] = negative_relation;
  j["eval_task"] = eval_task;
  j["eval_split"] = eval_split;
  j["share_prompt_encoders"] = share_prompt_encoders;
  return j;
}

inline RunConfig RunConfig::from_json(const nlohmann::json& j,
                                      std::optional<Stage> forced_stage) {
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");
  detail::reject_unknown_keys(
      j,
      {"stage", "seed", "max_steps", "checkpoint_every", "encoder", "loss_weights", "optimizer",
       "batch_size", "pseudo_labels", "paths", "entity_types", "negative_relation", "eval_task",
       "eval_split", "share_prompt_encoders"},
      "");

  RunConfig c;
  if (j.contains("stage")) {
    std::string name;
    detail::read_field(j, "stage", name, "");
    c.stage = stage_from_name(name);
    if (forced_stage && *forced_stage != c.stage)
      throw ConfigError("config stage '" + name + "' conflicts with the requested command '" +
                        stage_name(*forced_stage) + "'");
  } else if (forced_stage) {
    c.stage = *forced_stage;
  } else {
    throw ConfigError("config must name a stage (or one must come from the command line)");
  }
  detail::read_field(j, "seed", c.seed, "");
  detail::read_field(j, "max_steps", c.max_steps, "");
  detail::read_field(j, "checkpoint_every", c.checkpoint_every, "");

  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    detail::reject_unknown_keys(e,
                                {"vocab_size", "max_text_len", "num_patches",
                                 "patch_feature_dim", "hidden_dim", "visual_hidden_dim",
                                 "patch_proj_dim", "joint_dim", "num_layers", "num_heads",
                                 "temperature"},
                                "encoder");
    detail::read_field(e, "vocab_size", c.encoder.vocab_size, "encoder");
    detail::read_field(e, "max_text_len", c.encoder.max_text_len, "encoder");
    detail::read_field(e, "num_patches", c.encoder.num_patches, "encoder");
    detail::read_field(e, "patch_feature_dim", c.encoder.patch_feature_dim, "encoder");
    detail::read_field(e, "hidden_dim", c.encoder.hidden_dim, "encoder");
    detail::read_field(e, "visual_hidden_dim", c.encoder.visual_hidden_dim, "encoder");
    detail::read_field(e, "patch_proj_dim", c.encoder.patch_proj_dim, "encoder");
    detail::read_field(e, "joint_dim", c.encoder.joint_dim, "encoder");
    detail::read_field(e, "num_layers", c.encoder.num_layers, "encoder");
    detail::read_field(e, "num_heads", c.encoder.num_heads, "encoder");
    detail::read_field(e, "temperature", c.encoder.temperature, "encoder");
  }

  if (j.contains("loss_weights")) {
    const auto& w = j.at("loss_weights");
    detail::reject_unknown_keys(w, {"itm", "cit", "coe", "cir"}, "loss_weights");
    detail::read_field(w, "itm", c.loss_weights.itm, "loss_weights");
    detail::read_field(w, "cit", c.loss_weights.cit, "loss_weights");
    detail::read_field(w, "coe", c.loss_weights.coe, "loss_weights");
    detail::read_field(w, "cir", c.loss_weights.cir, "loss_weights");
  }

  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    detail::reject_unknown_keys(
        o, {"learning_rate", "weight_decay", "beta1", "beta2", "epsilon"}, "optimizer");
    detail::read_field(o, "learning_rate", c.optimizer.learning_rate, "optimizer");
    detail::read_field(o, "weight_decay", c.optimizer.weight_decay, "optimizer");
    detail::read_field(o, "beta1", c.optimizer.beta1, "optimizer");
    detail::read_field(o, "beta2", c.optimizer.beta2, "optimizer");
    detail::read_field(o, "epsilon", c.optimizer.epsilon, "optimizer");
  }

  if (j.contains("batch_size")) {
    const auto& b = j.at("batch_size");
    detail::reject_unknown_keys(b, {"pretrain", "finetune"}, "batch_size");
    detail::read_field(b, "pretrain", c.batch_size.pretrain, "batch_size");
    detail::read_field(b, "finetune", c.batch_size.finetune, "batch_size");
  }

  if (j.contains("pseudo_labels")) {
    const auto& p = j.at("pseudo_labels");
    detail::reject_unknown_keys(p,
                                {"num_entities", "entity_template", "relation_template",
                                 "detector", "freeze", "on_the_fly"},
                                "pseudo_labels");
    detail::read_field(p, "num_entities", c.pseudo_labels.num_entities, "pseudo_labels");
    detail::read_field(p, "entity_template", c.pseudo_labels.entity_template, "pseudo_labels");
    detail::read_field(p, "relation_template", c.pseudo_labels.relation_template,
                       "pseudo_labels");
    detail::read_field(p, "detector", c.pseudo_labels.detector, "pseudo_labels");
    detail::read_field(p, "freeze", c.pseudo_labels.freeze, "pseudo_labels");
    detail::read_field(p, "on_the_fly", c.pseudo_labels.on_the_fly, "pseudo_labels");
  }

  if (j.contains("paths")) {
    const auto& p = j.at("paths");
    detail::reject_unknown_keys(
        p, {"pretrain_corpus", "mner_train", "mner_dev", "mner_test", "mre_train", "mre_dev",
            "mre_test", "images_dir", "vocab_file", "pos_lexicon", "relation_tags", "proposals",
            "cache_file", "init_checkpoint", "eval_checkpoint", "output_dir"},
        "paths");
    detail::read_field(p, "pretrain_corpus", c.paths.pretrain_corpus, "paths");
    detail::read_field(p, "mner_train", c.paths.mner_train, "paths");
    detail::read_field(p, "mner_dev", c.paths.mner_dev, "paths");
    detail::read_field(p, "mner_test", c.paths.mner_test, "paths");
    detail::read_field(p, "mre_train", c.paths.mre_train, "paths");
    detail::read_field(p, "mre_dev", c.paths.mre_dev, "paths");
    detail::read_field(p, "mre_test", c.paths.mre_test, "paths");
    detail::read_field(p, "images_dir", c.paths.images_dir, "paths");
    detail::read_field(p, "vocab_file", c.paths.vocab_file, "paths");
    detail::read_field(p, "pos_lexicon", c.paths.pos_lexicon, "paths");
    detail::read_field(p, "relation_tags", c.paths.relation_tags, "paths");
    detail::read_field(p, "proposals", c.paths.proposals, "paths");
    detail::read_field(p, "cache_file", c.paths.cache_file, "paths");
    detail::read_field(p, "init_checkpoint", c.paths.init_checkpoint, "paths");
    detail::read_field(p, "eval_checkpoint", c.paths.eval_checkpoint, "paths");
    detail::read_field(p, "output_dir", c.paths.output_dir, "paths");
  }

  detail::read_field(j, "entity_types", c.entity_types, "");
  detail::read_field(j, "negative_relation", c.negative_relation, "");
  detail::read_field(j, "eval_task", c.eval_task, "");
  detail::read_field(j, "eval_split", c.eval_split, "");
  detail::read_field(j, "share_prompt_encoders", c.share_prompt_encoders, "");

  c.encoder.seed = c.seed;
  c.validate();
  return c;
}

inline RunConfig RunConfig::from_file(const std::string& path,
                                      std::optional<Stage> forced_stage) {
  std::ifstream f(path);
  if (!f.good()) throw IoError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return from_json(j, forced_stage);
}

}  // namespace promalign
