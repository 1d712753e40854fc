#pragma once

// Decoupled-weight-decay adaptive optimizer over a ParamStore. Updates are
// lazy per tensor: a parameter whose gradient is all zero this step is left
// completely untouched (no moment update, no decay, no step count), so
// unused heads and disabled losses cannot drift.

#include <cmath>
#include <cstdint>
#include <vector>

#include "promalign/config.hpp"
#include "promalign/errors.hpp"
#include "promalign/params.hpp"
#include "promalign/tensor.hpp"

namespace promalign {

class AdamW {
 public:
  AdamW(ParamStore& params, OptimizerConfig cfg) : params_(params), cfg_(cfg) {
    cfg_.validate();
    states_.reserve(params.entries().size());
    for (const auto& [name, v] : params.entries())
      states_.push_back({Tensor(v.rows(), v.cols(), 0.0), Tensor(v.rows(), v.cols(), 0.0), 0});
  }

  void step() {
    const auto& entries = params_.entries();
    if (states_.size() != entries.size())
      throw InternalError("optimizer state out of sync with parameter store");
    for (std::size_t p = 0; p < entries.size(); ++p) {
      Var var = entries[p].second;
      const Tensor& g = var.grad();
      if (g.all_zero()) continue;
      State& s = states_[p];
      ++s.t;
      double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.t));
      double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.t));
      Tensor& w = var.mutable_value();
      for (std::size_t i = 0; i < w.size(); ++i) {
        double grad = g.data()[i];
        double& m = s.m.data()[i];
        double& v = s.v.data()[i];
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * grad;
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * grad * grad;
        double m_hat = m / bc1;
        double v_hat = v / bc2;
        w.data()[i] -= cfg_.learning_rate *
                       (m_hat / (std::sqrt(v_hat) + cfg_.epsilon) + cfg_.weight_decay * w.data()[i]);
      }
    }
  }

  std::uint64_t updates_of(const std::string& name) const {
    const auto& entries = params_.entries();
    for (std::size_t p = 0; p < entries.size(); ++p)
      if (entries[p].first == name) return states_[p].t;
    throw InternalError("optimizer: unknown parameter " + name);
  }

 private:
  struct State {
    Tensor m, v;
    std::uint64_t t = 0;
  };

  ParamStore& params_;
  OptimizerConfig cfg_;
  std::vector<State> states_;
};

}  // namespace promalign
