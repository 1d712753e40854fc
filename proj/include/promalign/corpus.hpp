#pragma once

// File-based corpora: patch-feature binaries, pretraining pairs (jsonl),
// sequence-labeling sentences (token TAB tag blocks), and relation records
// (jsonl). Readers skip malformed records with line-numbered warnings and
// abort when nothing valid remains.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "promalign/alignment.hpp"
#include "promalign/errors.hpp"
#include "promalign/tensor.hpp"

namespace promalign {

static_assert(std::endian::native == std::endian::little,
              "patch and checkpoint binary formats assume a little-endian host");

// ---------------------------------------------------------------------------
// Patch-feature files: 4-byte magic, 4-byte version, rows*cols float32 LE.
// ---------------------------------------------------------------------------

inline constexpr std::array<char, 4> kPatchMagic = {'P', 'M', 'P', 'F'};
inline constexpr std::uint32_t kPatchVersion = 1;

inline void write_patch_file(const std::string& path, const Tensor& features) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f.good()) throw IoError("cannot open " + path + " for writing");
  f.write(kPatchMagic.data(), 4);
  std::uint32_t version = kPatchVersion;
  f.write(reinterpret_cast<const char*>(&version), 4);
  for (double v : features.data()) {
    float x = static_cast<float>(v);
    f.write(reinterpret_cast<const char*>(&x), 4);
  }
  if (!f.good()) throw IoError("write failure in patch file " + path);
}

inline Tensor read_patch_file(const std::string& path, std::size_t rows, std::size_t cols) {
  std::ifstream f(path, std::ios::binary);
  if (!f.good()) throw IoError("cannot open patch file " + path);
  std::array<char, 4> magic{};
  std::uint32_t version = 0;
  f.read(magic.data(), 4);
  f.read(reinterpret_cast<char*>(&version), 4);
  if (!f.good() || magic != kPatchMagic)
    throw InputError("patch file " + path + " has a bad header");
  if (version != kPatchVersion)
    throw InputError("patch file " + path + " has unsupported version " +
                     std::to_string(version));
  Tensor out(rows, cols);
  for (double& v : out.data()) {
    float x = 0.0f;
    f.read(reinterpret_cast<char*>(&x), 4);
    if (!f.good())
      throw InputError("patch file " + path + " is truncated: expected " +
                       std::to_string(rows * cols) + " values");
    v = static_cast<double>(x);
  }
  if (f.get() != std::ifstream::traits_type::eof())
    throw InputError("patch file " + path + " has trailing bytes: expected " +
                     std::to_string(rows * cols) + " values");
  if (!out.all_finite()) throw InputError("patch file " + path + " contains non-finite values");
  return out;
}

// ---------------------------------------------------------------------------
// Pretraining pairs
// ---------------------------------------------------------------------------

struct PretrainRecord {
  std::string id;
  std::string caption;
  std::string patch_file;  // resolved relative to the corpus file by callers
  int match = 0;
};

namespace detail {
inline void skip_record(const std::string& path, std::size_t line_no, const std::string& why) {
  warn("corpus " + path + " line " + std::to_string(line_no) + ": " + why + ", record skipped");
}
}  // namespace detail

inline std::vector<PretrainRecord> read_pretrain_corpus(const std::string& path) {
  std::ifstream f(path);
  if (!f.good()) throw IoError("cannot open pretrain corpus " + path);
  std::vector<PretrainRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded() || !j.is_object()) {
      detail::skip_record(path, line_no, "not a JSON object");
      continue;
    }
    if (!j.contains("id") || !j["id"].is_string() || !j.contains("caption") ||
        !j["caption"].is_string() || !j.contains("patch_file") || !j["patch_file"].is_string() ||
        !j.contains("match") || !j["match"].is_number_integer()) {
      detail::skip_record(path, line_no, "missing or mistyped id/caption/patch_file/match");
      continue;
    }
    int match = j["match"].get<int>();
    if (match != 0 && match != 1) {
      detail::skip_record(path, line_no, "match must be 0 or 1");
      continue;
    }
    out.push_back({j["id"].get<std::string>(), j["caption"].get<std::string>(),
                   j["patch_file"].get<std::string>(), match});
  }
  if (out.empty()) throw InputError("pretrain corpus " + path + " has no valid records");
  return out;
}

// ---------------------------------------------------------------------------
// Sequence-labeling sentences
// ---------------------------------------------------------------------------

// Blocks of `#image <id>` followed by token<TAB>tag lines; blank line ends a
// sentence. Tags stay strings here; schema mapping happens at dataset build.
struct MnerSentence {
  std::string image_id;
  std::vector<std::string> tokens;
  std::vector<std::string> tags;
};

inline std::vector<MnerSentence> read_mner_corpus(const std::string& path) {
  std::ifstream f(path);
  if (!f.good()) throw IoError("cannot open sequence-labeling corpus " + path);
  std::vector<MnerSentence> out;
  MnerSentence cur;
  bool bad_sentence = false;
  std::size_t line_no = 0, sentence_start = 0;
  std::string line;

  auto flush = [&]() {
    if (!cur.tokens.empty() || !cur.image_id.empty()) {
      if (bad_sentence) {
        // already warned at the offending line
      } else if (cur.image_id.empty()) {
        detail::skip_record(path, sentence_start, "sentence lacks an #image line");
      } else if (cur.tokens.empty()) {
        detail::skip_record(path, sentence_start, "sentence has no tokens");
      } else {
        out.push_back(cur);
      }
    }
    cur = MnerSentence{};
    bad_sentence = false;
  };

  while (std::getline(f, line)) {
    ++line_no;
    while (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      flush();
      continue;
    }
    if (cur.tokens.empty() && cur.image_id.empty()) sentence_start = line_no;
    if (line.rfind("#image ", 0) == 0) {
      std::string id = line.substr(7);
      if (id.empty() || !cur.image_id.empty() || !cur.tokens.empty()) {
        if (!bad_sentence)
          detail::skip_record(path, line_no, "misplaced or empty #image line");
        bad_sentence = true;
        continue;
      }
      cur.image_id = id;
      continue;
    }
    std::size_t tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size()) {
      if (!bad_sentence) detail::skip_record(path, line_no, "expected token<TAB>tag");
      bad_sentence = true;
      continue;
    }
    cur.tokens.push_back(line.substr(0, tab));
    cur.tags.push_back(line.substr(tab + 1));
  }
  flush();
  if (out.empty())
    throw InputError("sequence-labeling corpus " + path + " has no valid sentences");
  return out;
}

// ---------------------------------------------------------------------------
// Relation records
// ---------------------------------------------------------------------------

struct MreRecord {
  std::string id;
  std::vector<std::string> tokens;
  std::array<std::size_t, 2> head_span{};  // [start, end)
  std::array<std::size_t, 2> tail_span{};
  std::string relation;
  std::string image_id;
};

inline std::vector<MreRecord> read_mre_corpus(const std::string& path) {
  std::ifstream f(path);
  if (!f.good()) throw IoError("cannot open relation corpus " + path);
  std::vector<MreRecord> out;
  std::string line;
  std::size_t line_no = 0;

  auto span_of = [](const nlohmann::json& j, std::array<std::size_t, 2>& span) {
    if (!j.is_object() || !j.contains("span") || !j["span"].is_array() ||
        j["span"].size() != 2 || !j["span"][0].is_number_unsigned() ||
        !j["span"][1].is_number_unsigned())
      return false;
    span = {j["span"][0].get<std::size_t>(), j["span"][1].get<std::size_t>()};
    return true;
  };

  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded() || !j.is_object()) {
      detail::skip_record(path, line_no, "not a JSON object");
      continue;
    }
    if (!j.contains("id") || !j["id"].is_string() || !j.contains("tokens") ||
        !j["tokens"].is_array() || !j.contains("h") || !j.contains("t") ||
        !j.contains("relation") || !j["relation"].is_string() || !j.contains("image_id") ||
        !j["image_id"].is_string()) {
      detail::skip_record(path, line_no, "missing or mistyped fields");
      continue;
    }
    MreRecord rec;
    rec.id = j["id"].get<std::string>();
    bool tokens_ok = true;
    for (const auto& t : j["tokens"]) {
      if (!t.is_string()) {
        tokens_ok = false;
        break;
      }
      rec.tokens.push_back(t.get<std::string>());
    }
    if (!tokens_ok || rec.tokens.empty()) {
      detail::skip_record(path, line_no, "tokens must be a nonempty string array");
      continue;
    }
    if (!span_of(j["h"], rec.head_span) || !span_of(j["t"], rec.tail_span)) {
      detail::skip_record(path, line_no, "h/t must hold span:[start,end]");
      continue;
    }
    rec.relation = j["relation"].get<std::string>();
    rec.image_id = j["image_id"].get<std::string>();
    out.push_back(std::move(rec));
  }
  if (out.empty()) throw InputError("relation corpus " + path + " has no valid records");
  return out;
}

}  // namespace promalign
