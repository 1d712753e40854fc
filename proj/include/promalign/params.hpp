#pragma once

// Named trainable parameters. All tensors are created here, in a fixed order,
// from one seeded stream — this is what makes weight initialization (and thus
// golden outputs and checkpoints) reproducible.

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "promalign/autograd.hpp"
#include "promalign/errors.hpp"
#include "promalign/rng.hpp"
#include "promalign/tensor.hpp"

namespace promalign {

enum class Init {
  kFanIn,   // U(-1/sqrt(rows), 1/sqrt(rows)) — weight matrices applied as x*W
  kFanOut,  // U(-1/sqrt(cols), 1/sqrt(cols)) — embedding-style lookup tables
  kZeros,
  kOnes,
};

class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed) : rng_(mix_seed(seed, 0x70726d73ull)) {}

  Var create(const std::string& name, std::size_t rows, std::size_t cols, Init init) {
    if (index_.count(name)) throw InternalError("ParamStore: duplicate parameter " + name);
    Tensor t(rows, cols);
    switch (init) {
      case Init::kFanIn: {
        double s = 1.0 / std::sqrt(static_cast<double>(rows));
        for (double& v : t.data()) v = rng_.uniform(-s, s);
        break;
      }
      case Init::kFanOut: {
        double s = 1.0 / std::sqrt(static_cast<double>(cols));
        for (double& v : t.data()) v = rng_.uniform(-s, s);
        break;
      }
      case Init::kZeros:
        break;
      case Init::kOnes:
        t.fill(1.0);
        break;
    }
    Var v = Var::leaf(std::move(t));
    index_[name] = entries_.size();
    entries_.push_back({name, v});
    return v;
  }

  const std::vector<std::pair<std::string, Var>>& entries() const { return entries_; }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Var find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InternalError("ParamStore: unknown parameter " + name);
    return entries_[it->second].second;
  }

  std::size_t total_values() const {
    std::size_t n = 0;
    for (const auto& [name, v] : entries_) n += v.value().size();
    return n;
  }

  void zero_grads() {
    for (auto& [name, v] : entries_) v.zero_grad();
  }

 private:
  Rng rng_;
  std::vector<std::pair<std::string, Var>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace promalign
