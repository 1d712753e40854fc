#pragma once

// Central-difference gradient checking shared by the test suites.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "promalign/autograd.hpp"
#include "promalign/rng.hpp"
#include "promalign/tensor.hpp"

namespace promalign::testing {

inline double rel_err(double a, double b) {
  double denom = std::max({1.0, std::abs(a), std::abs(b)});
  return std::abs(a - b) / denom;
}

struct GradCheckReport {
  double max_rel_err = 0.0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::string where;
};

// `build` must construct a fresh 1x1 loss graph from the current leaf values.
// Analytic grads come from one backward pass; numeric grads from central
// differences on every leaf entry.
inline GradCheckReport grad_check(std::vector<Var> leaves,
                                  const std::function<Var()>& build,
                                  double h = 1e-3) {
  for (auto& l : leaves) l.zero_grad();
  backward(build());
  std::vector<Tensor> analytic;
  analytic.reserve(leaves.size());
  for (auto& l : leaves) analytic.push_back(l.grad());

  GradCheckReport rep;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor& v = leaves[li].mutable_value();
    for (std::size_t i = 0; i < v.size(); ++i) {
      double orig = v.data()[i];
      v.data()[i] = orig + h;
      double fp = build().scalar();
      v.data()[i] = orig - h;
      double fm = build().scalar();
      v.data()[i] = orig;
      double numeric = (fp - fm) / (2.0 * h);
      double e = rel_err(analytic[li].data()[i], numeric);
      if (e > rep.max_rel_err) {
        rep.max_rel_err = e;
        rep.worst_analytic = analytic[li].data()[i];
        rep.worst_numeric = numeric;
        rep.where = "leaf " + std::to_string(li) + " entry " + std::to_string(i);
      }
    }
  }
  return rep;
}

inline Tensor rand_tensor(Rng& rng, std::size_t r, std::size_t c,
                          double lo = -1.0, double hi = 1.0) {
  Tensor t(r, c);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace promalign::testing
