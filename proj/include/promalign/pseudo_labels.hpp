#pragma once

// Self-supervision signals: candidate-entity mining, prompt rendering,
// prompt/crop scoring, temperature-scaled soft label distributions, and the
// persistent pseudo-label cache.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "promalign/alignment.hpp"
#include "promalign/autograd.hpp"
#include "promalign/encoders.hpp"
#include "promalign/errors.hpp"
#include "promalign/rng.hpp"

namespace promalign {

// ---------------------------------------------------------------------------
// Candidate entities and relation tags
// ---------------------------------------------------------------------------

struct TaggedToken {
  std::string lemma;
  std::string pos;  // universal tag; "NOUN" is what entity mining looks for
};

// Pluggable part-of-speech backend. Real taggers are out of scope; the
// lexicon implementation below keeps tests hermetic.
class PosTagger {
 public:
  virtual ~PosTagger() = default;
  virtual std::vector<TaggedToken> tag_tokens(const std::vector<std::string>& words) = 0;
};

// Word -> (pos, lemma) lookup from a TSV file: `word<TAB>pos[<TAB>lemma]`.
// Unknown words tag as "X" with themselves as lemma.
class LexiconPosTagger : public PosTagger {
 public:
  explicit LexiconPosTagger(const std::string& path) {
    std::ifstream f(path);
    if (!f.good()) throw IoError("cannot open POS lexicon " + path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
      ++line_no;
      if (line.empty()) continue;
      std::size_t t1 = line.find('\t');
      if (t1 == std::string::npos)
        throw InputError("POS lexicon " + path + " line " + std::to_string(line_no) +
                         ": expected word<TAB>pos");
      std::size_t t2 = line.find('\t', t1 + 1);
      std::string word = line.substr(0, t1);
      std::string pos = t2 == std::string::npos ? line.substr(t1 + 1)
                                                : line.substr(t1 + 1, t2 - t1 - 1);
      std::string lemma = t2 == std::string::npos ? word : line.substr(t2 + 1);
      lexicon_[word] = {lemma, pos};
    }
  }

  explicit LexiconPosTagger(std::unordered_map<std::string, TaggedToken> entries)
      : lexicon_(std::move(entries)) {}

  std::vector<TaggedToken> tag_tokens(const std::vector<std::string>& words) override {
    std::vector<TaggedToken> out;
    out.reserve(words.size());
    for (const auto& w : words) {
      auto it = lexicon_.find(w);
      out.push_back(it != lexicon_.end() ? it->second : TaggedToken{w, "X"});
    }
    return out;
  }

 private:
  std::unordered_map<std::string, TaggedToken> lexicon_;
};

struct CandidateEntitySet {
  std::vector<std::string> entities;       // length M, descending frequency
  std::vector<std::size_t> source_counts;  // aligned with entities
};

// Top-M noun lemmas by corpus frequency, ties broken lexicographically.
inline CandidateEntitySet extract_candidate_entities(
    const std::vector<std::vector<TaggedToken>>& tagged_captions, std::size_t m) {
  if (m == 0) throw ConfigError("extract_candidate_entities: M must be at least 1");
  if (tagged_captions.empty())
    throw InputError("extract_candidate_entities: empty caption corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& caption : tagged_captions)
    for (const auto& tok : caption)
      if (tok.pos == "NOUN") ++counts[tok.lemma];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (ranked.size() < m)
    warn("candidate entity mining found only " + std::to_string(ranked.size()) +
         " distinct nouns, requested M=" + std::to_string(m));
  CandidateEntitySet out;
  for (std::size_t i = 0; i < std::min(m, ranked.size()); ++i) {
    out.entities.push_back(ranked[i].first);
    out.source_counts.push_back(ranked[i].second);
  }
  return out;
}

struct RelationTagSet {
  std::vector<std::string> tags;  // order defines label indices

  void validate() const {
    if (tags.empty()) throw InputError("relation tag set is empty");
    for (std::size_t i = 0; i < tags.size(); ++i)
      for (std::size_t j = i + 1; j < tags.size(); ++j)
        if (tags[i] == tags[j])
          throw InputError("duplicate relation tag: " + tags[i]);
  }
};

// Plain text, one tag per line; blank lines ignored.
inline RelationTagSet load_relation_tags(const std::string& path) {
  std::ifstream f(path);
  if (!f.good()) throw IoError("cannot open relation tag file " + path);
  RelationTagSet set;
  std::string line;
  while (std::getline(f, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) set.tags.push_back(line);
  }
  set.validate();
  return set;
}

// ---------------------------------------------------------------------------
// Prompt templates
// ---------------------------------------------------------------------------

struct PromptTemplate {
  std::string id;       // E1/E2 for entities, RA/RB/RC for relations
  std::string pattern;  // contains exactly one "{}" placeholder

  void validate() const {
    std::size_t first = pattern.find("{}");
    if (first == std::string::npos)
      throw ConfigError("prompt template " + id + " has no {} placeholder");
    if (pattern.find("{}", first + 2) != std::string::npos)
      throw ConfigError("prompt template " + id + " has more than one {} placeholder");
  }

  static PromptTemplate builtin(const std::string& id) {
    if (id == "E1") return {"E1", "This is an image of {}"};
    if (id == "E2") return {"E2", "An image of {} is shown here"};
    if (id == "RA") return {"RA", "The image shows the relation of {}"};
    if (id == "RB") return {"RB", "The relation of {} is shown in this image"};
    if (id == "RC") return {"RC", "The relation between the objects in the image is {}"};
    throw ConfigError("unknown prompt template id: " + id);
  }
};

inline std::vector<std::string> render_prompts(const std::vector<std::string>& items,
                                               const PromptTemplate& tmpl) {
  tmpl.validate();
  std::vector<std::string> out;
  out.reserve(items.size());
  std::size_t at = tmpl.pattern.find("{}");
  for (const auto& item : items) {
    std::string s = tmpl.pattern;
    s.replace(at, 2, item);
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Soft labels
// ---------------------------------------------------------------------------

inline SoftLabelDistribution soft_label_from_similarities(const std::vector<double>& sims,
                                                          double tau) {
  if (sims.empty()) throw InputError("soft_label: empty similarity list");
  if (tau <= 0.0) throw ConfigError("soft_label: temperature must be > 0");
  double m = -HUGE_VAL;
  for (double s : sims) m = std::max(m, s / tau);
  double z = 0.0;
  SoftLabelDistribution out;
  out.probs.resize(sims.size());
  for (std::size_t i = 0; i < sims.size(); ++i) {
    out.probs[i] = std::exp(sims[i] / tau - m);
    z += out.probs[i];
  }
  for (double& p : out.probs) p /= z;
  return out;
}

// Target is a visual summary (object crop for entities, whole image for
// relations); prompts are text summaries of the rendered template strings.
// Pseudo-labels are training targets, so no gradient flows through them.
inline SoftLabelDistribution soft_label(const Var& target_embedding,
                                        const std::vector<Var>& prompt_embeddings,
                                        const JointProjectionPair& proj, double tau) {
  if (prompt_embeddings.empty()) throw InputError("soft_label: empty prompt list");
  if (tau <= 0.0) throw ConfigError("soft_label: temperature must be > 0");
  std::vector<double> sims;
  sims.reserve(prompt_embeddings.size());
  for (const auto& p : prompt_embeddings)
    sims.push_back(joint_similarity(target_embedding, p, proj).scalar());
  return soft_label_from_similarities(sims, tau);
}

// ---------------------------------------------------------------------------
// Object proposals
// ---------------------------------------------------------------------------

// Pluggable detector backend. Throws ExternalError on backend failure, which
// callers treat as retriable (skip the sample, keep going).
class ObjectDetector {
 public:
  virtual ~ObjectDetector() = default;
  // Normalized [x0,y0,x1,y1] boxes; may be empty.
  virtual std::vector<std::array<double, 4>> detect(const std::string& sample_id,
                                                    const PatchGrid& image) = 0;
};

// Reads proposals from a sidecar file: one JSON record per line,
// {"sample_id": ..., "bboxes": [[x0,y0,x1,y1], ...]}. Samples not listed get
// no proposals.
class FixtureObjectDetector : public ObjectDetector {
 public:
  explicit FixtureObjectDetector(const std::string& path) {
    std::ifstream f(path);
    if (!f.good()) throw IoError("cannot open proposal fixture " + path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
      ++line_no;
      if (line.empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw InputError("proposal fixture " + path + " line " + std::to_string(line_no) +
                         ": " + e.what());
      }
      if (!j.contains("sample_id") || !j.contains("bboxes"))
        throw InputError("proposal fixture " + path + " line " + std::to_string(line_no) +
                         ": missing sample_id or bboxes");
      std::vector<std::array<double, 4>> boxes;
      for (const auto& b : j["bboxes"]) {
        if (!b.is_array() || b.size() != 4)
          throw InputError("proposal fixture " + path + " line " + std::to_string(line_no) +
                           ": bbox must be [x0,y0,x1,y1]");
        boxes.push_back({b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                         b[3].get<double>()});
      }
      fixtures_[j["sample_id"].get<std::string>()] = std::move(boxes);
    }
  }

  std::vector<std::array<double, 4>> detect(const std::string& sample_id,
                                            const PatchGrid&) override {
    auto it = fixtures_.find(sample_id);
    return it == fixtures_.end() ? std::vector<std::array<double, 4>>{} : it->second;
  }

 private:
  std::unordered_map<std::string, std::vector<std::array<double, 4>>> fixtures_;
};

// Seeded random single crop per sample; the parity backend for the random-
// cropping variant of object acquisition. Deterministic in (seed, sample_id).
class RandomCropDetector : public ObjectDetector {
 public:
  explicit RandomCropDetector(std::uint64_t seed) : seed_(seed) {}

  std::vector<std::array<double, 4>> detect(const std::string& sample_id,
                                            const PatchGrid&) override {
    Rng rng(mix_seed(seed_, fnv1a(sample_id)));
    double w = rng.uniform(0.3, 0.8);
    double h = rng.uniform(0.3, 0.8);
    double x0 = rng.uniform(0.0, 1.0 - w);
    double y0 = rng.uniform(0.0, 1.0 - h);
    return {{x0, y0, x0 + w, y0 + h}};
  }

 private:
  std::uint64_t seed_;
};

// Maps a normalized bbox to the 1-based indices of the grid patches whose
// area it covers by at least half. The grid is sqrt(K) x sqrt(K), row-major.
inline std::vector<std::size_t> bbox_patch_indices(const std::array<double, 4>& bbox,
                                                   std::size_t num_patches) {
  std::size_t g = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(num_patches))));
  if (g * g != num_patches)
    throw ConfigError("bbox mapping requires num_patches to be a perfect square, got " +
                      std::to_string(num_patches));
  auto [x0, y0, x1, y1] = bbox;
  if (!(x0 >= 0.0 && y0 >= 0.0 && x1 <= 1.0 && y1 <= 1.0 && x1 > x0 && y1 > y0))
    throw InputError("bbox outside [0,1] or degenerate");
  double cell = 1.0 / static_cast<double>(g);
  double half_cell_area = 0.5 * cell * cell;
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < g; ++r) {
    for (std::size_t c = 0; c < g; ++c) {
      double px0 = c * cell, px1 = (c + 1) * cell;
      double py0 = r * cell, py1 = (r + 1) * cell;
      double ow = std::max(0.0, std::min(x1, px1) - std::max(x0, px0));
      double oh = std::max(0.0, std::min(y1, py1) - std::max(y0, py0));
      if (ow * oh >= half_cell_area - 1e-12) out.push_back(r * g + c + 1);
    }
  }
  return out;
}

struct ProposalResult {
  std::vector<ObjectProposal> proposals;
  std::size_t dropped_boxes = 0;  // boxes that covered no patch by >= 50%
};

inline ProposalResult propose_objects(const std::string& sample_id, const PatchGrid& image,
                                      ObjectDetector& detector, std::size_t num_patches) {
  ProposalResult result;
  for (const auto& bbox : detector.detect(sample_id, image)) {
    std::vector<std::size_t> idx = bbox_patch_indices(bbox, num_patches);
    if (idx.empty()) {
      ++result.dropped_boxes;
      warn("sample " + sample_id + ": proposal covers no patch by >= 50%, dropped");
      continue;
    }
    result.proposals.push_back(ObjectProposal{bbox, std::move(idx)});
  }
  return result;
}

// ---------------------------------------------------------------------------
// Cache
// ---------------------------------------------------------------------------

struct PseudoLabelCacheEntry {
  std::string sample_id;
  std::string kind;  // "entity" | "relation"
  std::string template_id;
  double tau = 0.0;
  SoftLabelDistribution distribution;
  std::optional<ObjectProposal> proposal;  // present on entity entries

  void validate() const {
    if (kind != "entity" && kind != "relation")
      throw InputError("cache entry kind must be entity or relation, got " + kind);
    if (kind == "entity" && !proposal)
      throw InputError("entity cache entry for " + sample_id + " lacks a proposal");
    distribution.validate();
  }
};

namespace detail {
inline std::string fmt_g9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}
}  // namespace detail

// One line per record, fixed key order, probabilities at 9 significant
// digits — serialization is hand-rolled so rebuilds are byte-identical.
inline std::string serialize_cache_entry(const PseudoLabelCacheEntry& e) {
  e.validate();
  std::string s = "{\"schema_version\":1";
  s += ",\"sample_id\":" + nlohmann::json(e.sample_id).dump();
  s += ",\"kind\":\"" + e.kind + "\"";
  s += ",\"template_id\":" + nlohmann::json(e.template_id).dump();
  s += ",\"tau\":" + detail::fmt_g9(e.tau);
  s += ",\"probs\":[";
  for (std::size_t i = 0; i < e.distribution.probs.size(); ++i) {
    if (i) s += ",";
    s += detail::fmt_g9(e.distribution.probs[i]);
  }
  s += "]";
  if (e.proposal) {
    s += ",\"bbox\":[";
    for (std::size_t i = 0; i < 4; ++i) {
      if (i) s += ",";
      s += detail::fmt_g9(e.proposal->bbox[i]);
    }
    s += "],\"patch_indices\":[";
    for (std::size_t i = 0; i < e.proposal->patch_indices.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(e.proposal->patch_indices[i]);
    }
    s += "]";
  }
  s += "}";
  return s;
}

inline PseudoLabelCacheEntry parse_cache_entry(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& ex) {
    throw InputError(std::string("malformed cache line: ") + ex.what());
  }
  if (!j.contains("schema_version") || j["schema_version"].get<int>() != 1)
    throw InputError("cache line has missing or unsupported schema_version");
  PseudoLabelCacheEntry e;
  e.sample_id = j.at("sample_id").get<std::string>();
  e.kind = j.at("kind").get<std::string>();
  e.template_id = j.at("template_id").get<std::string>();
  e.tau = j.at("tau").get<double>();
  e.distribution.probs = j.at("probs").get<std::vector<double>>();
  if (j.contains("bbox")) {
    ObjectProposal p;
    auto bb = j["bbox"].get<std::vector<double>>();
    if (bb.size() != 4) throw InputError("cache bbox must have 4 coordinates");
    std::copy(bb.begin(), bb.end(), p.bbox.begin());
    p.patch_indices = j.at("patch_indices").get<std::vector<std::size_t>>();
    e.proposal = std::move(p);
  }
  e.validate();
  return e;
}

// Write-then-rename so readers never observe a partial cache.
inline void write_cache_file(const std::string& path,
                             const std::vector<PseudoLabelCacheEntry>& entries) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f.good()) throw IoError("cannot open " + tmp + " for writing");
    for (const auto& e : entries) {
      f << serialize_cache_entry(e) << "\n";
      if (!f.good())
        throw IoError("write failure in cache " + tmp + " at sample " + e.sample_id);
    }
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw IoError("cannot rename " + tmp + " to " + path);
}

inline std::vector<PseudoLabelCacheEntry> read_cache_file(const std::string& path) {
  std::ifstream f(path);
  if (!f.good()) throw IoError("cannot open pseudo-label cache " + path);
  std::vector<PseudoLabelCacheEntry> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(parse_cache_entry(line));
    } catch (const InputError& e) {
      throw InputError("cache " + path + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cache building
// ---------------------------------------------------------------------------

// Embedding callbacks supplied by the harness; the generator stays decoupled
// from the concrete model wiring.
struct PromptEmbedder {
  std::function<Var(const std::string&)> prompt_summary;  // 1 x d text summary
  std::function<Var(const PatchGrid&)> image_summary;     // 1 x d_v visual summary
  std::function<Var(const PatchGrid&, const std::vector<std::size_t>&)> crop_summary;
};

struct CacheSample {
  std::string id;
  PatchGrid patches;
};

struct CacheBuildResult {
  std::vector<PseudoLabelCacheEntry> entries;
  std::size_t skipped_samples = 0;    // detector backend failures
  std::size_t dropped_boxes = 0;      // proposals covering no patch
  std::size_t samples_without_proposals = 0;
};

// One entity entry per (sample, proposal), one relation entry per sample,
// in corpus order — rebuilds on identical inputs are byte-identical.
inline CacheBuildResult build_cache_entries(
    const std::vector<CacheSample>& corpus, const CandidateEntitySet& entities,
    const RelationTagSet& relations, const PromptTemplate& entity_template,
    const PromptTemplate& relation_template, const JointProjectionPair& proj, double tau,
    const PromptEmbedder& embedder, ObjectDetector& detector, std::size_t num_patches) {
  if (entities.entities.empty()) throw InputError("candidate entity set is empty");
  relations.validate();
  if (tau <= 0.0) throw ConfigError("cache build: temperature must be > 0");

  std::vector<Var> entity_prompts, relation_prompts;
  for (const auto& prompt : render_prompts(entities.entities, entity_template))
    entity_prompts.push_back(embedder.prompt_summary(prompt));
  for (const auto& prompt : render_prompts(relations.tags, relation_template))
    relation_prompts.push_back(embedder.prompt_summary(prompt));

  CacheBuildResult result;
  for (const auto& sample : corpus) {
    ProposalResult props;
    try {
      props = propose_objects(sample.id, sample.patches, detector, num_patches);
    } catch (const ExternalError& e) {
      ++result.skipped_samples;
      warn("sample " + sample.id + ": detector failed (" + e.what() + "), skipped");
      continue;
    }
    result.dropped_boxes += props.dropped_boxes;
    if (props.proposals.empty()) ++result.samples_without_proposals;

    for (const auto& prop : props.proposals) {
      Var crop = embedder.crop_summary(sample.patches, prop.patch_indices);
      PseudoLabelCacheEntry e;
      e.sample_id = sample.id;
      e.kind = "entity";
      e.template_id = entity_template.id;
      e.tau = tau;
      e.distribution = soft_label(crop, entity_prompts, proj, tau);
      e.proposal = prop;
      result.entries.push_back(std::move(e));
    }

    PseudoLabelCacheEntry r;
    r.sample_id = sample.id;
    r.kind = "relation";
    r.template_id = relation_template.id;
    r.tau = tau;
    r.distribution = soft_label(embedder.image_summary(sample.patches), relation_prompts,
                                proj, tau);
    result.entries.push_back(std::move(r));
  }
  return result;
}

}  // namespace promalign
