#pragma once

// Precision/recall/F1 bookkeeping shared by the sequence-labeling and
// relation-classification heads.

#include <cstddef>

namespace promalign {

struct PrfMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Zero denominators yield 0 by convention.
inline PrfMetrics prf_from_counts(std::size_t matches, std::size_t predicted,
                                  std::size_t gold) {
  PrfMetrics m;
  m.precision = predicted == 0 ? 0.0 : static_cast<double>(matches) / static_cast<double>(predicted);
  m.recall = gold == 0 ? 0.0 : static_cast<double>(matches) / static_cast<double>(gold);
  m.f1 = m.precision + m.recall == 0.0
             ? 0.0
             : 2.0 * m.precision * m.recall / (m.precision + m.recall);
  return m;
}

}  // namespace promalign
