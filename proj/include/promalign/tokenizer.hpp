#pragma once

// Fixed-vocabulary tokenizer: lowercased whitespace-plus-punctuation
// segmentation with an unknown-token fallback and truncation accounting.

#include <cctype>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "promalign/encoders.hpp"
#include "promalign/errors.hpp"

namespace promalign {

inline constexpr const char* kUnknownToken = "<unk>";

struct Vocabulary {
  std::vector<std::string> words;  // id -> word
  std::unordered_map<std::string, std::size_t> ids;
  std::size_t unk_id = 0;

  static Vocabulary from_words(const std::vector<std::string>& words) {
    Vocabulary v;
    v.words = words;
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (words[i].empty()) throw InputError("vocabulary has an empty token");
      if (!v.ids.emplace(words[i], i).second)
        throw InputError("duplicate vocabulary token: " + words[i]);
    }
    auto it = v.ids.find(kUnknownToken);
    if (it == v.ids.end())
      throw InputError(std::string("vocabulary lacks the ") + kUnknownToken + " token");
    v.unk_id = it->second;
    return v;
  }

  // One token per line; line number defines the id.
  static Vocabulary load(const std::string& path) {
    std::ifstream f(path);
    if (!f.good()) throw IoError("cannot open vocabulary " + path);
    std::vector<std::string> words;
    std::string line;
    while (std::getline(f, line)) {
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
      words.push_back(line);
    }
    while (!words.empty() && words.back().empty()) words.pop_back();
    for (std::size_t i = 0; i < words.size(); ++i)
      if (words[i].empty())
        throw InputError("vocabulary " + path + " line " + std::to_string(i + 1) + " is empty");
    return from_words(words);
  }

  std::size_t size() const { return words.size(); }

  std::size_t id_of(const std::string& word) const {
    auto it = ids.find(word);
    return it == ids.end() ? unk_id : it->second;
  }
};

// Lowercases, then splits into runs of [a-z0-9_'] with every other printable
// character becoming its own single-character token.
inline std::vector<std::string> segment_words(const std::string& text) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&]() {
    if (!word.empty()) {
      out.push_back(word);
      word.clear();
    }
  };
  for (char raw : text) {
    unsigned char u = static_cast<unsigned char>(raw);
    char c = static_cast<char>(std::tolower(u));
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '\'') {
      word.push_back(c);
    } else if (std::isspace(u)) {
      flush();
    } else {
      flush();
      out.emplace_back(1, c);
    }
  }
  flush();
  return out;
}

class Tokenizer {
 public:
  Tokenizer(Vocabulary vocab, std::size_t max_len)
      : vocab_(std::move(vocab)), max_len_(max_len) {
    if (max_len_ == 0) throw ConfigError("tokenizer max length must be >= 1");
  }

  TokenSequence tokenize(const std::string& text) {
    std::vector<std::string> words = segment_words(text);
    if (words.empty()) throw InputError("tokenize: empty token sequence");
    TokenSequence seq;
    if (words.size() > max_len_) {
      words.resize(max_len_);
      ++truncations_;
    }
    seq.ids.reserve(words.size());
    for (const auto& w : words) seq.ids.push_back(vocab_.id_of(w));
    return seq;
  }

  // Pre-split corpora (token-per-line formats) skip segmentation.
  TokenSequence map_tokens(const std::vector<std::string>& words) {
    if (words.empty()) throw InputError("tokenize: empty token sequence");
    TokenSequence seq;
    std::size_t n = words.size();
    if (n > max_len_) {
      n = max_len_;
      ++truncations_;
    }
    seq.ids.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::string lowered;
      for (char c : words[i])
        lowered.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
      seq.ids.push_back(vocab_.id_of(lowered));
    }
    return seq;
  }

  const Vocabulary& vocab() const { return vocab_; }
  std::size_t max_len() const { return max_len_; }
  std::size_t truncation_count() const { return truncations_; }
  void reset_truncation_count() { truncations_ = 0; }

 private:
  Vocabulary vocab_;
  std::size_t max_len_;
  std::size_t truncations_ = 0;
};

}  // namespace promalign
