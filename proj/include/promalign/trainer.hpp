#pragma once

// Training and evaluation drivers over file-based corpora: alignment
// pre-training with per-epoch pseudo-label refresh, CRF sequence-labeling and
// relation-classification fine-tuning with dev-based model selection, and
// checkpoint evaluation with metric and prediction reports.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "promalign/alignment.hpp"
#include "promalign/autograd.hpp"
#include "promalign/checkpoint.hpp"
#include "promalign/config.hpp"
#include "promalign/corpus.hpp"
#include "promalign/errors.hpp"
#include "promalign/metrics.hpp"
#include "promalign/mner.hpp"
#include "promalign/model.hpp"
#include "promalign/mre.hpp"
#include "promalign/optimizer.hpp"
#include "promalign/pseudo_labels.hpp"
#include "promalign/rng.hpp"
#include "promalign/tokenizer.hpp"

namespace promalign {

// ---------------------------------------------------------------------------
// Data loading
// ---------------------------------------------------------------------------

namespace detail {

// Relative paths inside a corpus file resolve against that file's directory.
inline std::string sibling_path(const std::string& anchor_file, const std::string& maybe_rel) {
  std::filesystem::path p(maybe_rel);
  if (p.is_absolute()) return maybe_rel;
  return (std::filesystem::path(anchor_file).parent_path() / p).string();
}

inline PatchGrid load_patches(const std::string& path, const EncoderConfig& cfg) {
  PatchGrid g{read_patch_file(path, cfg.num_patches, cfg.patch_feature_dim)};
  validate_patches(g, cfg);
  return g;
}

inline std::string image_file(const RunConfig& cfg, const std::string& image_id) {
  if (cfg.paths.images_dir.empty())
    throw ConfigError("paths.images_dir is required to resolve image " + image_id);
  return cfg.paths.images_dir + "/" + image_id + ".patch";
}

// Patch grids keyed by image id; corpora may reuse images across records.
class ImageCache {
 public:
  explicit ImageCache(const RunConfig& cfg) : cfg_(cfg) {}

  const PatchGrid& get(const std::string& image_id) {
    auto it = grids_.find(image_id);
    if (it == grids_.end())
      it = grids_.emplace(image_id, load_patches(image_file(cfg_, image_id), cfg_.encoder)).first;
    return it->second;
  }

 private:
  const RunConfig& cfg_;
  std::unordered_map<std::string, PatchGrid> grids_;
};

}  // namespace detail

struct LoadedPair {
  PretrainRecord rec;
  TokenSequence tokens;
  PatchGrid patches;
};

struct PretrainData {
  std::vector<LoadedPair> pairs;
  CandidateEntitySet entities;
  RelationTagSet relations;
};

inline PretrainData load_pretrain_data(const RunConfig& cfg, Tokenizer& tok) {
  if (cfg.paths.pretrain_corpus.empty())
    throw ConfigError("paths.pretrain_corpus is required for this stage");
  if (cfg.paths.pos_lexicon.empty())
    throw ConfigError("paths.pos_lexicon is required to mine candidate entities");
  if (cfg.paths.relation_tags.empty())
    throw ConfigError("paths.relation_tags is required for this stage");

  PretrainData d;
  LexiconPosTagger tagger(cfg.paths.pos_lexicon);
  std::vector<std::vector<TaggedToken>> tagged;
  for (auto& rec : read_pretrain_corpus(cfg.paths.pretrain_corpus)) {
    LoadedPair p;
    p.tokens = tok.tokenize(rec.caption);
    p.patches = detail::load_patches(
        detail::sibling_path(cfg.paths.pretrain_corpus, rec.patch_file), cfg.encoder);
    tagged.push_back(tagger.tag_tokens(segment_words(rec.caption)));
    p.rec = std::move(rec);
    d.pairs.push_back(std::move(p));
  }
  d.entities = extract_candidate_entities(tagged, cfg.pseudo_labels.num_entities);
  d.relations = load_relation_tags(cfg.paths.relation_tags);
  return d;
}

struct NerExample {
  std::string image_id;
  TokenSequence tokens;
  BIOLabelSequence gold;
  PatchGrid patches;
};

inline std::vector<NerExample> load_ner_split(const std::string& path, const RunConfig& cfg,
                                              Tokenizer& tok, const LabelSchema& schema) {
  detail::ImageCache images(cfg);
  std::vector<NerExample> out;
  for (auto& s : read_mner_corpus(path)) {
    NerExample e;
    e.image_id = s.image_id;
    e.tokens = tok.map_tokens(s.tokens);
    for (const auto& tag : s.tags) e.gold.labels.push_back(schema.label_index(tag));
    // map_tokens may truncate long sentences; keep labels aligned with tokens.
    e.gold.labels.resize(e.tokens.ids.size());
    e.patches = images.get(s.image_id);
    out.push_back(std::move(e));
  }
  return out;
}

struct ReExample {
  std::string id;
  RelationInstance inst;
  MarkedSequence marked;
};

inline std::vector<ReExample> load_re_split(const std::string& path, const RunConfig& cfg,
                                            Tokenizer& tok, const RelationTagSet& tags) {
  std::unordered_map<std::string, std::size_t> rel_index;
  for (std::size_t i = 0; i < tags.tags.size(); ++i) rel_index[tags.tags[i]] = i;
  detail::ImageCache images(cfg);
  std::vector<ReExample> out;
  for (auto& rec : read_mre_corpus(path)) {
    auto rel = rel_index.find(rec.relation);
    if (rel == rel_index.end())
      throw InputError("instance " + rec.id + " uses relation '" + rec.relation +
                       "' which is not in the relation tag set");
    ReExample e;
    e.id = rec.id;
    e.inst.tokens = tok.map_tokens(rec.tokens);
    e.inst.head_span = {rec.head_span[0], rec.head_span[1]};
    e.inst.tail_span = {rec.tail_span[0], rec.tail_span[1]};
    e.inst.image = images.get(rec.image_id);
    e.inst.relation = rel->second;
    e.inst.validate(tags.tags.size());
    e.marked = inject_entity_markers(e.inst, cfg.encoder);
    out.push_back(std::move(e));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pseudo-label generation
// ---------------------------------------------------------------------------

inline std::unique_ptr<ObjectDetector> make_detector(const RunConfig& cfg) {
  if (cfg.pseudo_labels.detector == "fixture") {
    if (cfg.paths.proposals.empty())
      throw ConfigError("the fixture detector needs paths.proposals");
    return std::make_unique<FixtureObjectDetector>(cfg.paths.proposals);
  }
  return std::make_unique<RandomCropDetector>(cfg.seed);
}

inline CacheBuildResult build_pseudo_labels(const PretrainData& data, const PretrainModel& model,
                                            Tokenizer& tok, const RunConfig& cfg,
                                            ObjectDetector& detector) {
  std::vector<CacheSample> samples;
  samples.reserve(data.pairs.size());
  for (const auto& p : data.pairs) samples.push_back({p.rec.id, p.patches});
  return build_cache_entries(samples, data.entities, data.relations,
                             PromptTemplate::builtin(cfg.pseudo_labels.entity_template),
                             PromptTemplate::builtin(cfg.pseudo_labels.relation_template),
                             model.joint, cfg.encoder.temperature, model.prompt_embedder(tok),
                             detector, cfg.encoder.num_patches);
}

struct GenPseudoLabelsResult {
  CacheBuildResult build;
  std::string cache_file;
  std::size_t mined_entities = 0;
};

inline GenPseudoLabelsResult run_gen_pseudo_labels(const RunConfig& cfg) {
  if (cfg.paths.cache_file.empty())
    throw ConfigError("gen_pseudo_labels needs paths.cache_file");
  Vocabulary vocab = Vocabulary::load(cfg.paths.vocab_file);
  Tokenizer tok(vocab, cfg.encoder.max_text_len);
  PretrainData data = load_pretrain_data(cfg, tok);

  ParamStore ps(cfg.seed);
  PretrainModel model(cfg.encoder, data.entities.entities.size(), data.relations.tags.size(),
                      cfg.share_prompt_encoders, ps);
  if (!cfg.paths.init_checkpoint.empty())
    apply_checkpoint(load_checkpoint(cfg.paths.init_checkpoint), ps, /*strict=*/false);

  auto detector = make_detector(cfg);
  GenPseudoLabelsResult r;
  r.build = build_pseudo_labels(data, model, tok, cfg, *detector);
  r.mined_entities = data.entities.entities.size();
  std::filesystem::path parent = std::filesystem::path(cfg.paths.cache_file).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  write_cache_file(cfg.paths.cache_file, r.build.entries);
  r.cache_file = cfg.paths.cache_file;
  return r;
}

// ---------------------------------------------------------------------------
// Pre-training
// ---------------------------------------------------------------------------

namespace detail {

// Cache entries grouped by sample for batch assembly.
struct PseudoLabelIndex {
  std::vector<PseudoLabelCacheEntry> entries;
  std::unordered_map<std::string, std::vector<std::size_t>> entities_of;
  std::unordered_map<std::string, std::size_t> relation_of;

  void rebuild(std::vector<PseudoLabelCacheEntry> in, std::size_t num_entities,
               std::size_t num_relations, std::size_t num_patches) {
    entries = std::move(in);
    entities_of.clear();
    relation_of.clear();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& e = entries[i];
      std::size_t expected = e.kind == "entity" ? num_entities : num_relations;
      if (e.distribution.probs.size() != expected)
        throw InputError("pseudo-label entry for sample " + e.sample_id + " has " +
                         std::to_string(e.distribution.probs.size()) +
                         " probabilities, the model head expects " + std::to_string(expected));
      if (e.kind == "entity") {
        e.proposal->validate(num_patches);
        entities_of[e.sample_id].push_back(i);
      } else {
        relation_of[e.sample_id] = i;
      }
    }
  }
};

inline std::ofstream open_log(const std::string& dir, const std::string& name) {
  std::filesystem::create_directories(dir);
  std::string path = dir + "/" + name;
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f.good()) throw IoError("cannot open " + path + " for writing");
  return f;
}

}  // namespace detail

struct PretrainStepLog {
  std::size_t step = 0;
  double itm = 0.0, cit = 0.0, coe = 0.0, cir = 0.0, total = 0.0;
  double itm_accuracy = 0.0;
  std::size_t batch = 0;
  std::size_t matched_pairs = 0;              // pairs entering the contrastive term
  std::size_t entity_rows = 0;                // object regions entering the entity term
  std::size_t relation_rows = 0;              // samples entering the relation term
  std::size_t samples_without_entities = 0;   // excluded from the entity term
};

struct PretrainResult {
  std::vector<PretrainStepLog> steps;
  std::string final_checkpoint;
  std::string log_path;
  std::size_t mined_entities = 0;
  std::size_t relation_tag_count = 0;
  std::size_t epochs_completed = 0;
};

inline PretrainResult run_pretrain(const RunConfig& cfg) {
  Vocabulary vocab = Vocabulary::load(cfg.paths.vocab_file);
  Tokenizer tok(vocab, cfg.encoder.max_text_len);
  PretrainData data = load_pretrain_data(cfg, tok);
  if (tok.truncation_count() > 0)
    warn(std::to_string(tok.truncation_count()) + " captions were truncated to max_text_len");

  ParamStore ps(cfg.seed);
  PretrainModel model(cfg.encoder, data.entities.entities.size(), data.relations.tags.size(),
                      cfg.share_prompt_encoders, ps);
  if (!cfg.paths.init_checkpoint.empty())
    apply_checkpoint(load_checkpoint(cfg.paths.init_checkpoint), ps, /*strict=*/false);
  AdamW opt(ps, cfg.optimizer);

  std::unique_ptr<ObjectDetector> detector;
  detail::PseudoLabelIndex labels;
  if (cfg.pseudo_labels.on_the_fly) {
    detector = make_detector(cfg);
  } else {
    if (cfg.paths.cache_file.empty() || !std::filesystem::exists(cfg.paths.cache_file))
      throw ConfigError("pseudo_labels.on_the_fly is false but no cache exists at '" +
                        cfg.paths.cache_file + "'; run gen_pseudo_labels first");
    labels.rebuild(read_cache_file(cfg.paths.cache_file), model.num_entities(),
                   model.num_relations(), cfg.encoder.num_patches);
  }

  std::ofstream log = detail::open_log(cfg.paths.output_dir, "train_log.jsonl");
  PretrainResult result;
  result.log_path = cfg.paths.output_dir + "/train_log.jsonl";
  result.mined_entities = data.entities.entities.size();
  result.relation_tag_count = data.relations.tags.size();

  Rng run_rng(mix_seed(cfg.seed, fnv1a("pretrain-run")));
  std::vector<std::size_t> order(data.pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();  // forces epoch setup on the first step
  std::size_t epoch = 0;
  const std::string cfg_json = cfg.to_json().dump();

  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    if (cursor >= order.size()) {
      if (cfg.pseudo_labels.on_the_fly && (epoch == 0 || !cfg.pseudo_labels.freeze)) {
        CacheBuildResult built = build_pseudo_labels(data, model, tok, cfg, *detector);
        labels.rebuild(std::move(built.entries), model.num_entities(), model.num_relations(),
                       cfg.encoder.num_patches);
      }
      Rng(mix_seed(cfg.seed, epoch)).shuffle(order);
      cursor = 0;
      ++epoch;
    }

    std::size_t take = std::min(cfg.batch_size.pretrain, order.size() - cursor);
    std::vector<Var> match_probs, text_sums, visual_sums, entity_rows, relation_rows;
    std::vector<int> match_gold;
    std::vector<SoftLabelDistribution> entity_targets, relation_targets;
    PretrainStepLog sl;
    sl.step = step;
    sl.batch = take;
    std::size_t itm_correct = 0;
    for (std::size_t i = cursor; i < cursor + take; ++i) {
      const LoadedPair& p = data.pairs[order[i]];
      EncodedPair enc = model.encode_pair(p.tokens, p.patches);
      Var prob = model.match_prob(enc.fused);
      itm_correct += (prob.scalar() > 0.5) == (p.rec.match == 1);
      match_probs.push_back(prob);
      match_gold.push_back(p.rec.match);
      if (p.rec.match == 1) {
        text_sums.push_back(enc.text_summary());
        visual_sums.push_back(enc.visual_summary());
      }
      auto ents = labels.entities_of.find(p.rec.id);
      if (ents == labels.entities_of.end() || ents->second.empty()) {
        ++sl.samples_without_entities;
      } else {
        for (std::size_t idx : ents->second) {
          entity_rows.push_back(model.entity_logits(enc.fused, *labels.entries[idx].proposal));
          entity_targets.push_back(labels.entries[idx].distribution);
        }
      }
      auto rel = labels.relation_of.find(p.rec.id);
      if (rel != labels.relation_of.end()) {
        relation_rows.push_back(model.relation_logits(enc.fused));
        relation_targets.push_back(labels.entries[rel->second].distribution);
      }
    }
    cursor += take;

    Var itm = itm_loss(concat_cols(match_probs), match_gold);
    Var cit = text_sums.empty()
                  ? cit_loss(Var::constant(Tensor()), cfg.encoder.temperature)
                  : cit_loss(similarity_matrix(concat_rows(visual_sums), concat_rows(text_sums),
                                               model.joint),
                             cfg.encoder.temperature);
    Var coe = entity_rows.empty() ? Var::constant(Tensor(1, 1, 0.0))
                                  : coe_loss(concat_rows(entity_rows), entity_targets);
    Var cir = relation_rows.empty() ? Var::constant(Tensor(1, 1, 0.0))
                                    : cir_loss(concat_rows(relation_rows), relation_targets);
    Var total = total_loss(itm, cit, coe, cir, cfg.loss_weights);

    ps.zero_grads();
    backward(total);
    opt.step();

    sl.itm = itm.scalar();
    sl.cit = cit.scalar();
    sl.coe = coe.scalar();
    sl.cir = cir.scalar();
    sl.total = total.scalar();
    sl.itm_accuracy = static_cast<double>(itm_correct) / static_cast<double>(take);
    sl.matched_pairs = text_sums.size();
    sl.entity_rows = entity_rows.size();
    sl.relation_rows = relation_rows.size();
    nlohmann::json line = {{"step", sl.step},
                           {"itm", sl.itm},
                           {"cit", sl.cit},
                           {"coe", sl.coe},
                           {"cir", sl.cir},
                           {"total", sl.total},
                           {"itm_accuracy", sl.itm_accuracy},
                           {"matched_pairs", sl.matched_pairs},
                           {"entity_rows", sl.entity_rows},
                           {"relation_rows", sl.relation_rows},
                           {"samples_without_entities", sl.samples_without_entities}};
    log << line.dump() << "\n";
    result.steps.push_back(sl);

    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0)
      save_checkpoint(cfg.paths.output_dir + "/step_" + std::to_string(step) + ".ckpt", ps,
                      cfg_json, step, run_rng.state());
  }

  result.epochs_completed = epoch;
  result.final_checkpoint = cfg.paths.output_dir + "/final.ckpt";
  save_checkpoint(result.final_checkpoint, ps, cfg_json, cfg.max_steps, run_rng.state());
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation cores (shared between fine-tuning and the eval stage)
// ---------------------------------------------------------------------------

struct NerEvaluation {
  PrfMetrics micro;
  std::vector<PrfMetrics> per_type;             // by entity type index
  std::vector<BIOLabelSequence> predictions;    // one per sentence
};

inline NerEvaluation evaluate_ner(const NerModel& model, const std::vector<NerExample>& split) {
  std::size_t n_types = model.schema.entity_types.size();
  std::vector<std::size_t> matches(n_types, 0), predicted(n_types, 0), gold(n_types, 0);
  NerEvaluation out;
  for (const auto& e : split) {
    BIOLabelSequence pred = model.decode(model.emissions(model.encode(e.tokens, e.patches)).value());
    auto pred_spans = extract_spans(pred, model.schema);
    auto gold_spans = extract_spans(e.gold, model.schema);
    std::set<EntitySpan> pred_set(pred_spans.begin(), pred_spans.end());
    std::set<EntitySpan> gold_set(gold_spans.begin(), gold_spans.end());
    for (const auto& s : pred_set) {
      ++predicted[s.type];
      matches[s.type] += gold_set.count(s);
    }
    for (const auto& s : gold_set) ++gold[s.type];
    out.predictions.push_back(std::move(pred));
  }
  std::size_t m = 0, p = 0, g = 0;
  out.per_type.resize(n_types);
  for (std::size_t t = 0; t < n_types; ++t) {
    out.per_type[t] = prf_from_counts(matches[t], predicted[t], gold[t]);
    m += matches[t];
    p += predicted[t];
    g += gold[t];
  }
  out.micro = prf_from_counts(m, p, g);
  return out;
}

struct ReEvaluation {
  RelationMetrics metrics;
  double accuracy = 0.0;
  std::vector<std::size_t> predictions;  // one per instance
  std::vector<double> margins;           // top-1 minus top-2 logit
};

inline ReEvaluation evaluate_re(const ReModel& model, const std::vector<ReExample>& split,
                                std::optional<std::size_t> negative_label) {
  ReEvaluation out;
  std::vector<std::size_t> gold;
  for (const auto& e : split) {
    Tensor lg = model.logits(model.encode(e.marked, e.inst.image), e.marked).value();
    std::size_t best = 0;
    for (std::size_t c = 1; c < lg.cols(); ++c)
      if (lg.at(0, c) > lg.at(0, best)) best = c;
    double runner_up = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < lg.cols(); ++c)
      if (c != best) runner_up = std::max(runner_up, lg.at(0, c));
    out.predictions.push_back(best);
    out.margins.push_back(lg.cols() > 1 ? lg.at(0, best) - runner_up : 0.0);
    gold.push_back(e.inst.relation);
  }
  out.metrics = relation_metrics(out.predictions, gold, model.num_relations(), negative_label);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) correct += out.predictions[i] == gold[i];
  out.accuracy = split.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(gold.size());
  return out;
}

inline std::optional<std::size_t> negative_label_index(const RunConfig& cfg,
                                                       const RelationTagSet& tags) {
  if (cfg.negative_relation.empty()) return std::nullopt;
  for (std::size_t i = 0; i < tags.tags.size(); ++i)
    if (tags.tags[i] == cfg.negative_relation) return i;
  throw ConfigError("negative_relation '" + cfg.negative_relation +
                    "' is not in the relation tag set");
}

// ---------------------------------------------------------------------------
// Fine-tuning
// ---------------------------------------------------------------------------

struct FinetuneResult {
  std::vector<double> step_losses;
  std::vector<double> dev_scores;     // primary dev metric, one per evaluation
  double best_dev = 0.0;
  std::size_t best_step = 0;
  double final_train_metric = 0.0;    // primary metric on the train split, final weights
  std::string best_checkpoint, final_checkpoint, log_path;
  std::size_t epochs_completed = 0;
};

namespace detail {

// Shared step/epoch/selection engine. `batch_loss` builds the loss for a set
// of train indices; `dev_score` runs the primary dev metric on current weights.
inline FinetuneResult run_finetune_loop(const RunConfig& cfg, ParamStore& ps,
                                        std::size_t train_size,
                                        const std::function<Var(const std::vector<std::size_t>&)>& batch_loss,
                                        const std::function<double()>& dev_score, bool has_dev) {
  AdamW opt(ps, cfg.optimizer);
  std::ofstream log = open_log(cfg.paths.output_dir, "train_log.jsonl");
  FinetuneResult r;
  r.log_path = cfg.paths.output_dir + "/train_log.jsonl";

  Rng run_rng(mix_seed(cfg.seed, fnv1a("finetune-run")));
  const std::string cfg_json = cfg.to_json().dump();
  auto save = [&](const std::string& name, std::size_t step) {
    std::string path = cfg.paths.output_dir + "/" + name;
    save_checkpoint(path, ps, cfg_json, step, run_rng.state());
    return path;
  };
  auto eval_dev = [&](std::size_t step) {
    if (!has_dev) return;
    double score = dev_score();
    r.dev_scores.push_back(score);
    if (r.best_checkpoint.empty() || score > r.best_dev) {
      r.best_dev = score;
      r.best_step = step;
      r.best_checkpoint = save("best.ckpt", step);
    }
  };

  std::vector<std::size_t> order(train_size);
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::size_t epoch = 0;
  bool ended_on_epoch = false;
  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    if (cursor >= order.size()) {
      Rng(mix_seed(cfg.seed, epoch)).shuffle(order);
      cursor = 0;
      ++epoch;
    }
    std::size_t take = std::min(cfg.batch_size.finetune, order.size() - cursor);
    std::vector<std::size_t> batch(order.begin() + cursor, order.begin() + cursor + take);
    cursor += take;

    Var loss = batch_loss(batch);
    ps.zero_grads();
    backward(loss);
    opt.step();

    r.step_losses.push_back(loss.scalar());
    nlohmann::json line = {{"step", step}, {"epoch", epoch}, {"loss", loss.scalar()}};
    log << line.dump() << "\n";

    ended_on_epoch = cursor >= order.size();
    if (ended_on_epoch) eval_dev(step);
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0)
      save("step_" + std::to_string(step) + ".ckpt", step);
  }
  if (!ended_on_epoch) eval_dev(cfg.max_steps);

  r.epochs_completed = epoch;
  r.final_checkpoint = save("final.ckpt", cfg.max_steps);
  if (r.best_checkpoint.empty()) {
    // no dev split: the final model doubles as the selected one
    r.best_checkpoint = r.final_checkpoint;
    r.best_step = cfg.max_steps;
  }
  return r;
}

}  // namespace detail

inline FinetuneResult run_finetune_ner(const RunConfig& cfg) {
  Vocabulary vocab = Vocabulary::load(cfg.paths.vocab_file);
  Tokenizer tok(vocab, cfg.encoder.max_text_len);
  LabelSchema schema{cfg.entity_types};
  schema.validate();
  if (cfg.paths.mner_train.empty()) throw ConfigError("finetune_ner needs paths.mner_train");
  std::vector<NerExample> train = load_ner_split(cfg.paths.mner_train, cfg, tok, schema);
  bool has_dev = !cfg.paths.mner_dev.empty();
  std::vector<NerExample> dev;
  if (has_dev)
    dev = load_ner_split(cfg.paths.mner_dev, cfg, tok, schema);
  else
    warn("no dev split configured; the final checkpoint doubles as best");

  ParamStore ps(cfg.seed);
  NerModel model(cfg.encoder, schema, ps);
  if (!cfg.paths.init_checkpoint.empty())
    apply_checkpoint(load_checkpoint(cfg.paths.init_checkpoint), ps, /*strict=*/false);

  auto batch_loss = [&](const std::vector<std::size_t>& batch) {
    std::vector<Var> emissions;
    std::vector<BIOLabelSequence> gold;
    for (std::size_t i : batch) {
      emissions.push_back(model.emissions(model.encode(train[i].tokens, train[i].patches)));
      gold.push_back(train[i].gold);
    }
    return mner_loss(emissions, gold, model.crf);
  };
  auto dev_score = [&]() { return evaluate_ner(model, dev).micro.f1; };

  FinetuneResult r =
      detail::run_finetune_loop(cfg, ps, train.size(), batch_loss, dev_score, has_dev);
  r.final_train_metric = evaluate_ner(model, train).micro.f1;
  return r;
}

inline FinetuneResult run_finetune_re(const RunConfig& cfg) {
  Vocabulary vocab = Vocabulary::load(cfg.paths.vocab_file);
  Tokenizer tok(vocab, cfg.encoder.max_text_len);
  if (cfg.paths.relation_tags.empty()) throw ConfigError("finetune_re needs paths.relation_tags");
  if (cfg.paths.mre_train.empty()) throw ConfigError("finetune_re needs paths.mre_train");
  RelationTagSet tags = load_relation_tags(cfg.paths.relation_tags);
  std::optional<std::size_t> negative = negative_label_index(cfg, tags);
  std::vector<ReExample> train = load_re_split(cfg.paths.mre_train, cfg, tok, tags);
  bool has_dev = !cfg.paths.mre_dev.empty();
  std::vector<ReExample> dev;
  if (has_dev)
    dev = load_re_split(cfg.paths.mre_dev, cfg, tok, tags);
  else
    warn("no dev split configured; the final checkpoint doubles as best");

  ParamStore ps(cfg.seed);
  ReModel model(cfg.encoder, tags.tags.size(), ps);
  if (!cfg.paths.init_checkpoint.empty())
    apply_checkpoint(load_checkpoint(cfg.paths.init_checkpoint), ps, /*strict=*/false);

  auto batch_loss = [&](const std::vector<std::size_t>& batch) {
    std::vector<Var> logit_rows;
    std::vector<std::size_t> gold;
    for (std::size_t i : batch) {
      logit_rows.push_back(
          model.logits(model.encode(train[i].marked, train[i].inst.image), train[i].marked));
      gold.push_back(train[i].inst.relation);
    }
    return mre_loss(concat_rows(logit_rows), gold);
  };
  auto dev_score = [&]() { return evaluate_re(model, dev, negative).metrics.micro.f1; };

  FinetuneResult r =
      detail::run_finetune_loop(cfg, ps, train.size(), batch_loss, dev_score, has_dev);
  r.final_train_metric = evaluate_re(model, train, negative).metrics.micro.f1;
  return r;
}

// ---------------------------------------------------------------------------
// Evaluation stage
// ---------------------------------------------------------------------------

struct EvalResult {
  std::vector<std::pair<std::string, double>> metrics;  // ordered (name, value)
  std::string metrics_path, predictions_path;
  std::string table;  // human-readable rendering of `metrics`
};

namespace detail {

inline std::string eval_split_path(const RunConfig& cfg) {
  const PathsConfig& p = cfg.paths;
  std::string path;
  if (cfg.eval_task == "ner")
    path = cfg.eval_split == "train" ? p.mner_train
                                     : cfg.eval_split == "dev" ? p.mner_dev : p.mner_test;
  else
    path = cfg.eval_split == "train" ? p.mre_train
                                     : cfg.eval_split == "dev" ? p.mre_dev : p.mre_test;
  if (path.empty())
    throw InputError("no " + cfg.eval_split + " split is configured for task " + cfg.eval_task);
  return path;
}

inline std::string render_metric_table(const std::vector<std::pair<std::string, double>>& ms,
                                       const std::string& split) {
  std::size_t width = 6;
  for (const auto& [name, _] : ms) width = std::max(width, name.size());
  std::string out = "metrics on the " + split + " split\n";
  for (const auto& [name, value] : ms) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", value);
    out += name + std::string(width - name.size() + 2, ' ') + buf + "\n";
  }
  return out;
}

inline void write_metrics_file(const std::string& path,
                               const std::vector<std::pair<std::string, double>>& ms,
                               const std::string& split) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f.good()) throw IoError("cannot open " + path + " for writing");
  for (const auto& [name, value] : ms) {
    nlohmann::json line = {{"metric", name}, {"split", split}, {"value", value}};
    f << line.dump() << "\n";
  }
}

}  // namespace detail

inline EvalResult run_eval(const RunConfig& cfg) {
  if (cfg.paths.eval_checkpoint.empty()) throw ConfigError("eval needs paths.eval_checkpoint");
  Vocabulary vocab = Vocabulary::load(cfg.paths.vocab_file);
  Tokenizer tok(vocab, cfg.encoder.max_text_len);
  std::string split_path = detail::eval_split_path(cfg);
  CheckpointData ckpt = load_checkpoint(cfg.paths.eval_checkpoint);

  std::filesystem::create_directories(cfg.paths.output_dir);
  EvalResult r;
  r.metrics_path = cfg.paths.output_dir + "/metrics.jsonl";

  if (cfg.eval_task == "ner") {
    LabelSchema schema{cfg.entity_types};
    schema.validate();
    std::vector<NerExample> split = load_ner_split(split_path, cfg, tok, schema);
    ParamStore ps(cfg.seed);
    NerModel model(cfg.encoder, schema, ps);
    apply_checkpoint(ckpt, ps, /*strict=*/true);
    NerEvaluation ev = evaluate_ner(model, split);
    r.metrics.emplace_back("span_precision", ev.micro.precision);
    r.metrics.emplace_back("span_recall", ev.micro.recall);
    r.metrics.emplace_back("span_f1", ev.micro.f1);
    for (std::size_t t = 0; t < schema.entity_types.size(); ++t)
      r.metrics.emplace_back("span_f1/" + schema.entity_types[t], ev.per_type[t].f1);

    r.predictions_path = cfg.paths.output_dir + "/predictions.txt";
    std::ofstream pf(r.predictions_path, std::ios::binary | std::ios::trunc);
    if (!pf.good()) throw IoError("cannot open " + r.predictions_path + " for writing");
    for (const auto& pred : ev.predictions) {
      for (std::size_t i = 0; i < pred.labels.size(); ++i)
        pf << (i ? " " : "") << schema.label_name(pred.labels[i]);
      pf << "\n";
    }
  } else {
    RelationTagSet tags = load_relation_tags(cfg.paths.relation_tags);
    std::optional<std::size_t> negative = negative_label_index(cfg, tags);
    std::vector<ReExample> split = load_re_split(split_path, cfg, tok, tags);
    ParamStore ps(cfg.seed);
    ReModel model(cfg.encoder, tags.tags.size(), ps);
    apply_checkpoint(ckpt, ps, /*strict=*/true);
    ReEvaluation ev = evaluate_re(model, split, negative);
    r.metrics.emplace_back("micro_precision", ev.metrics.micro.precision);
    r.metrics.emplace_back("micro_recall", ev.metrics.micro.recall);
    r.metrics.emplace_back("micro_f1", ev.metrics.micro.f1);
    r.metrics.emplace_back("accuracy", ev.accuracy);
    for (std::size_t l = 0; l < tags.tags.size(); ++l)
      r.metrics.emplace_back("f1/" + tags.tags[l], ev.metrics.per_label[l].f1);

    r.predictions_path = cfg.paths.output_dir + "/predictions.jsonl";
    std::ofstream pf(r.predictions_path, std::ios::binary | std::ios::trunc);
    if (!pf.good()) throw IoError("cannot open " + r.predictions_path + " for writing");
    for (std::size_t i = 0; i < split.size(); ++i) {
      nlohmann::json line = {{"instance_id", split[i].id},
                             {"predicted_relation", tags.tags[ev.predictions[i]]},
                             {"gold_relation", tags.tags[split[i].inst.relation]},
                             {"logit_margin", ev.margins[i]}};
      pf << line.dump() << "\n";
    }
  }

  detail::write_metrics_file(r.metrics_path, r.metrics, cfg.eval_split);
  r.table = detail::render_metric_table(r.metrics, cfg.eval_split);
  return r;
}

}  // namespace promalign
