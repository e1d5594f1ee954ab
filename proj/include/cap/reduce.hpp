#pragma once

#include <cstddef>
#include <span>

namespace cap {

// Pairwise summation over a fixed ordering.  Every caller reduces full
// vectors with this routine, so results do not depend on how work was
// partitioned across threads.
inline double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double acc = 0.0;
    for (double x : v) acc += x;
    return acc;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.subspan(0, half)) + pairwise_sum(v.subspan(half));
}

inline double pairwise_mean(std::span<const double> v) {
  return v.empty() ? 0.0 : pairwise_sum(v) / static_cast<double>(v.size());
}

}  // namespace cap
