// Batch driver: one subcommand per pipeline stage, configured by a JSON file
// with a few command-line overrides.
#include <cstdio>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "promalign/trainer.hpp"

namespace {

struct CliArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool freeze_pseudo_labels = false;
};

// Every subcommand takes the same options; only the forced stage differs.
CliArgs* add_stage_command(CLI::App& app, const std::string& name, const std::string& help) {
  CLI::App* cmd = app.add_subcommand(name, help);
  auto* args = new CliArgs();  // lives until exit; CLI11 keeps raw pointers
  cmd->add_option("--config", args->config, "JSON run configuration")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", args->seed, "override the run seed (parameters, shuffles)");
  cmd->add_option("--out", args->out, "override the output directory");
  cmd->add_flag("--freeze-pseudo-labels", args->freeze_pseudo_labels,
                "keep the first epoch's pseudo-labels for the whole run");
  return args;
}

promalign::RunConfig load_config(const CliArgs& args, promalign::Stage stage) {
  promalign::RunConfig cfg = promalign::RunConfig::from_file(args.config, stage);
  if (args.seed) {
    cfg.seed = *args.seed;
    cfg.encoder.seed = *args.seed;
  }
  if (args.out) cfg.paths.output_dir = *args.out;
  if (args.freeze_pseudo_labels) cfg.pseudo_labels.freeze = true;
  cfg.validate();
  return cfg;
}

int run_gen(const CliArgs& args) {
  promalign::GenPseudoLabelsResult r =
      promalign::run_gen_pseudo_labels(load_config(args, promalign::Stage::kGenPseudoLabels));
  std::printf("mined %zu candidate entities\n", r.mined_entities);
  std::printf("wrote %zu pseudo-label entries to %s\n", r.build.entries.size(),
              r.cache_file.c_str());
  if (r.build.skipped_samples || r.build.dropped_boxes || r.build.samples_without_proposals)
    std::printf("skipped %zu samples, dropped %zu proposals, %zu samples had no proposals\n",
                r.build.skipped_samples, r.build.dropped_boxes,
                r.build.samples_without_proposals);
  return 0;
}

int run_pretrain_cmd(const CliArgs& args) {
  promalign::PretrainResult r =
      promalign::run_pretrain(load_config(args, promalign::Stage::kPretrain));
  const auto& first = r.steps.front();
  const auto& last = r.steps.back();
  std::printf("pretrained %zu steps over %zu epochs (%zu mined entities, %zu relation tags)\n",
              r.steps.size(), r.epochs_completed, r.mined_entities, r.relation_tag_count);
  std::printf("total loss %.6f -> %.6f, final batch match accuracy %.3f\n", first.total,
              last.total, last.itm_accuracy);
  std::printf("step log: %s\n", r.log_path.c_str());
  std::printf("final checkpoint: %s\n", r.final_checkpoint.c_str());
  return 0;
}

int run_finetune(const CliArgs& args, promalign::Stage stage) {
  promalign::RunConfig cfg = load_config(args, stage);
  promalign::FinetuneResult r = stage == promalign::Stage::kFinetuneNer
                                    ? promalign::run_finetune_ner(cfg)
                                    : promalign::run_finetune_re(cfg);
  const char* metric = stage == promalign::Stage::kFinetuneNer ? "span-F1" : "micro-F1";
  std::printf("fine-tuned %zu steps over %zu epochs\n", r.step_losses.size(),
              r.epochs_completed);
  std::printf("loss %.6f -> %.6f, train %s %.4f\n", r.step_losses.front(),
              r.step_losses.back(), metric, r.final_train_metric);
  if (!r.dev_scores.empty())
    std::printf("best dev %s %.4f at step %zu\n", metric, r.best_dev, r.best_step);
  std::printf("step log: %s\n", r.log_path.c_str());
  std::printf("best checkpoint: %s\n", r.best_checkpoint.c_str());
  std::printf("final checkpoint: %s\n", r.final_checkpoint.c_str());
  return 0;
}

int run_eval_cmd(const CliArgs& args) {
  promalign::EvalResult r = promalign::run_eval(load_config(args, promalign::Stage::kEval));
  std::fputs(r.table.c_str(), stdout);
  std::printf("metrics: %s\n", r.metrics_path.c_str());
  std::printf("predictions: %s\n", r.predictions_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prompt-guided multimodal alignment: pre-training and fine-tuning driver"};
  app.require_subcommand(1);

  CliArgs* gen = add_stage_command(app, "gen-pseudo-labels",
                                   "mine candidates and write the pseudo-label cache");
  CliArgs* pre = add_stage_command(app, "pretrain", "run alignment pre-training");
  CliArgs* ner = add_stage_command(app, "finetune-ner", "fine-tune the sequence-labeling head");
  CliArgs* re = add_stage_command(app, "finetune-re", "fine-tune the relation classifier");
  CliArgs* ev = add_stage_command(app, "eval", "evaluate a checkpoint on a configured split");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("gen-pseudo-labels")) return run_gen(*gen);
    if (app.got_subcommand("pretrain")) return run_pretrain_cmd(*pre);
    if (app.got_subcommand("finetune-ner")) return run_finetune(*ner, promalign::Stage::kFinetuneNer);
    if (app.got_subcommand("finetune-re")) return run_finetune(*re, promalign::Stage::kFinetuneRe);
    if (app.got_subcommand("eval")) return run_eval_cmd(*ev);
  } catch (const promalign::InternalError& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
