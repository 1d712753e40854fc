#pragma once

// Deterministic synthetic corpus for end-to-end runs and acceptance checks.
// Each of eight object nouns owns a two-dimensional signature in patch
// feature space; an image "contains" a noun when that signature is planted
// on a 2x2 block of the 4x4 patch grid. Captions name the noun, so matching
// is learnable; the mismatched half of the pre-training corpus pairs every
// image with a caption from a different noun class (a derangement, keeping
// the match labels balanced). Sequence-labeling and relation corpora reuse
// the same vocabulary and image mechanics so encoders transfer.

#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "promalign/config.hpp"
#include "promalign/corpus.hpp"
#include "promalign/errors.hpp"
#include "promalign/pseudo_labels.hpp"
#include "promalign/rng.hpp"
#include "promalign/tensor.hpp"
#include "promalign/tokenizer.hpp"

namespace promalign {

struct ToyCorpus {
  std::string dir;
  std::size_t vocab_size = 0;
  std::vector<std::string> nouns;
  std::vector<std::string> relations;
  std::vector<std::string> entity_types;

  std::string pretrain_corpus, vocab_file, pos_lexicon, relation_tags, proposals, images_dir;
  std::string mner_train, mner_dev, mre_train, mre_dev;

  EncoderConfig encoder_config() const {
    EncoderConfig e;
    e.vocab_size = vocab_size;
    e.max_text_len = 16;
    e.num_patches = 16;
    e.patch_feature_dim = 16;
    e.hidden_dim = 32;
    e.visual_hidden_dim = 32;
    e.patch_proj_dim = 16;
    e.joint_dim = 16;
    e.num_layers = 2;
    e.num_heads = 4;
    e.temperature = 0.07;
    return e;
  }

  RunConfig base_config() const {
    RunConfig c;
    c.encoder = encoder_config();
    c.optimizer.learning_rate = 3e-3;  // toy scale overfits fast at a high rate
    c.pseudo_labels.num_entities = nouns.size();
    c.paths.pretrain_corpus = pretrain_corpus;
    c.paths.mner_train = mner_train;
    c.paths.mner_dev = mner_dev;
    c.paths.mre_train = mre_train;
    c.paths.mre_dev = mre_dev;
    c.paths.images_dir = images_dir;
    c.paths.vocab_file = vocab_file;
    c.paths.pos_lexicon = pos_lexicon;
    c.paths.relation_tags = relation_tags;
    c.paths.proposals = proposals;
    c.paths.cache_file = dir + "/out/pseudo_labels.jsonl";
    c.entity_types = entity_types;
    c.encoder.seed = c.seed;
    return c;
  }

  RunConfig pretrain_config() const {
    RunConfig c = base_config();
    c.stage = Stage::kPretrain;
    c.max_steps = 500;
    c.batch_size.pretrain = 16;  // larger batches stabilize the contrastive term
    c.paths.output_dir = dir + "/out/pretrain";
    return c;
  }

  RunConfig ner_config() const {
    RunConfig c = base_config();
    c.stage = Stage::kFinetuneNer;
    c.max_steps = 200;
    c.paths.init_checkpoint = dir + "/out/pretrain/final.ckpt";
    c.paths.output_dir = dir + "/out/ner";
    return c;
  }

  RunConfig re_config() const {
    RunConfig c = base_config();
    c.stage = Stage::kFinetuneRe;
    c.max_steps = 200;
    c.paths.init_checkpoint = dir + "/out/pretrain/final.ckpt";
    c.paths.output_dir = dir + "/out/re";
    return c;
  }
};

namespace detail {

// 2x2 block b of the 4x4 grid: b/2 picks the row half, b%2 the column half.
inline std::vector<std::size_t> block_patches(std::size_t b) {
  std::size_t r0 = (b / 2) * 2, c0 = (b % 2) * 2;
  return {r0 * 4 + c0 + 1, r0 * 4 + c0 + 2, (r0 + 1) * 4 + c0 + 1, (r0 + 1) * 4 + c0 + 2};
}

inline std::array<double, 4> block_bbox(std::size_t b) {
  double x0 = (b % 2) * 0.5, y0 = (b / 2) * 0.5;
  return {x0, y0, x0 + 0.5, y0 + 0.5};
}

// Background noise plus the noun's signature on one block. Dims (2n, 2n+1)
// carry +/-2 for noun n, well above the +/-0.1 noise floor.
inline Tensor toy_image(std::uint64_t seed, const std::string& id,
                        const std::vector<std::pair<std::size_t, std::size_t>>& plants) {
  Rng rng(mix_seed(seed, fnv1a(id)));
  Tensor t(16, 16);
  for (double& v : t.data()) v = rng.uniform(-0.1, 0.1);
  for (const auto& [noun, block] : plants) {
    for (std::size_t p : detail::block_patches(block)) {
      t.at(p - 1, 2 * noun) += 2.0;
      t.at(p - 1, 2 * noun + 1) -= 2.0;
    }
  }
  return t;
}

inline std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ' ') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace detail

// Writes the whole corpus (pre-training pairs, patch files, sidecars, NER and
// RE splits, and ready-to-run config files) under `dir`. Rebuilds with the
// same (dir, seed) are byte-identical.
inline ToyCorpus generate_toy_corpus(const std::string& dir, std::uint64_t seed = 1) {
  namespace fs = std::filesystem;
  fs::create_directories(dir + "/patches");
  fs::create_directories(dir + "/images");
  fs::create_directories(dir + "/out");

  ToyCorpus tc;
  tc.dir = dir;
  tc.nouns = {"girl", "dog", "car", "tree", "house", "bird", "boat", "horse"};
  tc.relations = {"holds", "rides", "near", "inside"};
  tc.entity_types = {"PER", "LOC", "ORG"};
  tc.pretrain_corpus = dir + "/pretrain.jsonl";
  tc.vocab_file = dir + "/vocab.txt";
  tc.pos_lexicon = dir + "/pos_lexicon.tsv";
  tc.relation_tags = dir + "/relations.txt";
  tc.proposals = dir + "/proposals.jsonl";
  tc.images_dir = dir + "/images";
  tc.mner_train = dir + "/mner_train.txt";
  tc.mner_dev = dir + "/mner_dev.txt";
  tc.mre_train = dir + "/mre_train.jsonl";
  tc.mre_dev = dir + "/mre_dev.jsonl";

  auto open = [](const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f.good()) throw IoError("cannot open " + path + " for writing");
    return f;
  };

  // --- pre-training pairs: 32 matched, then 32 with rotated captions -------
  {
    std::ofstream corpus = open(tc.pretrain_corpus);
    std::ofstream props = open(tc.proposals);
    for (std::size_t i = 0; i < 64; ++i) {
      std::size_t image_noun = i % 8;
      std::size_t caption_noun = i < 32 ? image_noun : (image_noun + 1) % 8;
      std::size_t block = (i / 8) % 4;
      std::string id = "s" + std::string(i < 10 ? "0" : "") + std::to_string(i);
      write_patch_file(dir + "/patches/" + id + ".patch",
                       detail::toy_image(seed, id, {{image_noun, block}}));
      nlohmann::json rec = {{"id", id},
                            {"caption", "this is a " + tc.nouns[caption_noun]},
                            {"patch_file", "patches/" + id + ".patch"},
                            {"match", i < 32 ? 1 : 0}};
      corpus << rec.dump() << "\n";
      auto bb = detail::block_bbox(block);
      nlohmann::json prop = {{"sample_id", id},
                             {"bboxes", {{bb[0], bb[1], bb[2], bb[3]}}}};
      props << prop.dump() << "\n";
    }
  }

  // --- sequence-labeling splits --------------------------------------------
  // Most sentences are resolvable from text alone and pair with pure-noise
  // images. The "X expanded last year" sentences repeat the same text with
  // conflicting labels; only the image resolves them (girl signature = PER,
  // car signature = ORG). The cue blocks alternate PER/ORG across training
  // images, so a position rule fits training but misfires on dev, where the
  // cues sit on blocks never used for that noun in training and the entity
  // words (zenix, quix) are unseen. Recognizing the noun regardless of
  // position is what cracks dev.
  const std::vector<std::string> ner_train = {
      "anna/B-PER visited/O paris/B-LOC",
      "ben/B-PER works/O at/O acme/B-ORG",
      "clara/B-PER met/O david/B-PER in/O london/B-LOC",
      "anna/B-PER smith/I-PER lives/O in/O berlin/B-LOC",
      "globex/B-ORG opened/O the/O office/O in/O rome/B-LOC",
      "david/B-PER went/O to/O new/B-LOC york/I-LOC",
      "initech/B-ORG works/O with/O acme/B-ORG corp/I-ORG",
      "anna/B-PER visited/O initech/B-ORG",
      "clara/B-PER works/O at/O globex/B-ORG in/O london/B-LOC",
      "anna/B-PER met/O ben/B-PER at/O acme/B-ORG",
      "david/B-PER works/O at/O acme/B-ORG in/O berlin/B-LOC",
      "vandelay/B-ORG opened/O an/O office/O in/O paris/B-LOC",
      "clara/B-PER smith/I-PER went/O to/O london/B-LOC",
      "david/B-PER smith/I-PER met/O clara/B-PER in/O new/B-LOC york/I-LOC",
      "ben/B-PER works/O at/O vandelay/B-ORG",
      "anna/B-PER went/O from/O paris/B-LOC to/O berlin/B-LOC",
      "rex/B-PER expanded/O last/O year/O",
      "rex/B-ORG expanded/O last/O year/O",
      "nova/B-PER expanded/O last/O year/O",
      "nova/B-ORG expanded/O last/O year/O",
  };
  const std::vector<std::string> ner_dev = {
      "ben/B-PER went/O to/O rome/B-LOC",
      "clara/B-PER visited/O acme/B-ORG in/O berlin/B-LOC",
      "david/B-PER works/O at/O vandelay/B-ORG",
      "zenix/B-PER expanded/O last/O year/O",
      "quix/B-ORG expanded/O last/O year/O",
      "ben/B-PER smith/I-PER lives/O in/O paris/B-LOC",
  };

  // (noun index, block) plants per sentence index; girl = 0, car = 2
  using Plants = std::map<std::size_t, std::vector<std::pair<std::size_t, std::size_t>>>;
  const Plants train_plants = {
      {16, {{0, 0}}}, {17, {{2, 1}}}, {18, {{0, 2}}}, {19, {{2, 3}}}};
  const Plants dev_plants = {{3, {{0, 3}}}, {4, {{2, 0}}}};

  auto write_ner = [&](const std::string& path, const std::vector<std::string>& sentences,
                       const std::string& img_prefix, const Plants& plants) {
    std::ofstream f = open(path);
    for (std::size_t i = 0; i < sentences.size(); ++i) {
      std::string image_id = img_prefix + (i < 10 ? "0" : "") + std::to_string(i);
      auto it = plants.find(i);
      write_patch_file(tc.images_dir + "/" + image_id + ".patch",
                       detail::toy_image(seed, image_id,
                                         it == plants.end() ? std::vector<std::pair<
                                                                  std::size_t, std::size_t>>{}
                                                            : it->second));
      f << "#image " << image_id << "\n";
      for (const auto& word : detail::split_words(sentences[i])) {
        std::size_t slash = word.rfind('/');
        f << word.substr(0, slash) << "\t" << word.substr(slash + 1) << "\n";
      }
      f << "\n";
    }
  };
  write_ner(tc.mner_train, ner_train, "nimg", train_plants);
  write_ner(tc.mner_dev, ner_dev, "nimgd", dev_plants);

  // --- relation splits ------------------------------------------------------
  {
    std::ofstream rels = open(tc.relation_tags);
    for (const auto& r : tc.relations) rels << r << "\n";
  }
  auto write_re = [&](const std::string& path, std::size_t count, std::size_t noun_off,
                      std::size_t pair_off, std::size_t rel_off, const std::string& prefix) {
    std::ofstream f = open(path);
    for (std::size_t i = 0; i < count; ++i) {
      std::size_t a = (i + noun_off) % 8;
      std::size_t b = (i + noun_off + pair_off) % 8;
      std::size_t r = (i + rel_off) % 4;
      std::string id = prefix + (i < 10 ? "0" : "") + std::to_string(i);
      std::string image_id = id + "img";
      write_patch_file(tc.images_dir + "/" + image_id + ".patch",
                       detail::toy_image(seed, image_id, {{a, 0}, {b, 3}}));
      nlohmann::json rec = {{"id", id},
                            {"tokens", {"the", tc.nouns[a], tc.relations[r], "the", tc.nouns[b]}},
                            {"h", {{"span", {1, 2}}}},
                            {"t", {{"span", {4, 5}}}},
                            {"relation", tc.relations[r]},
                            {"image_id", image_id}};
      f << rec.dump() << "\n";
    }
  };
  write_re(tc.mre_train, 30, 0, 3, 0, "re");
  write_re(tc.mre_dev, 10, 2, 5, 1, "red");

  // --- vocabulary and POS lexicon -------------------------------------------
  std::set<std::string> words;
  auto absorb = [&](const std::string& text) {
    for (const auto& w : segment_words(text)) words.insert(w);
  };
  for (const auto& n : tc.nouns) absorb("this is a " + n);
  for (const char* tmpl : {"E1", "E2"})
    for (const auto& p : render_prompts(tc.nouns, PromptTemplate::builtin(tmpl))) absorb(p);
  for (const char* tmpl : {"RA", "RB", "RC"})
    for (const auto& p : render_prompts(tc.relations, PromptTemplate::builtin(tmpl))) absorb(p);
  for (const auto& bank : {ner_train, ner_dev})
    for (const auto& sent : bank)
      for (const auto& word : detail::split_words(sent)) absorb(word.substr(0, word.rfind('/')));
  for (const auto& r : tc.relations) absorb("the " + r);
  {
    std::ofstream v = open(tc.vocab_file);
    v << kUnknownToken << "\n";
    for (const auto& w : words) v << w << "\n";
  }
  tc.vocab_size = words.size() + 1;

  {
    std::ofstream lex = open(tc.pos_lexicon);
    for (const auto& n : tc.nouns) lex << n << "\tNOUN\t" << n << "\n";
    lex << "this\tDET\nis\tVERB\na\tDET\n";
  }

  // --- runnable config files -------------------------------------------------
  auto write_config = [&](const std::string& name, const RunConfig& c) {
    std::ofstream f = open(dir + "/" + name);
    f << c.to_json().dump(2) << "\n";
  };
  write_config("config_pretrain.json", tc.pretrain_config());
  write_config("config_ner.json", tc.ner_config());
  write_config("config_re.json", tc.re_config());
  {
    RunConfig c = tc.base_config();
    c.stage = Stage::kGenPseudoLabels;
    c.paths.output_dir = dir + "/out/gen";
    write_config("config_gen_pseudo_labels.json", c);
  }
  {
    RunConfig c = tc.base_config();
    c.stage = Stage::kEval;
    c.eval_task = "ner";
    c.eval_split = "dev";
    c.paths.eval_checkpoint = dir + "/out/ner/best.ckpt";
    c.paths.output_dir = dir + "/out/eval_ner";
    write_config("config_eval_ner.json", c);
    c.eval_task = "re";
    c.paths.eval_checkpoint = dir + "/out/re/best.ckpt";
    c.paths.output_dir = dir + "/out/eval_re";
    write_config("config_eval_re.json", c);
  }

  return tc;
}

}  // namespace promalign
