#pragma once

#include <cmath>
#include <vector>

namespace hetcomm {

// Flat array of 64-bit floats: the unit of every collective and every
// gradient exchange.
using Tensor = std::vector<double>;

inline bool all_finite(const Tensor& t) {
  for (double v : t) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace hetcomm
