#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "cbx/core_types.hpp"
#include "cbx/rng.hpp"

namespace cbx::testing {

// Two real features on [0, 1], outcome range [-10, 10].
inline ContextSchema two_feature_schema() {
  return ContextSchema({{"x1", FeatureKind::Real, 0.0, 1.0}, {"x2", FeatureKind::Real, 0.0, 1.0}}, -10.0, 10.0);
}

inline ArmSet arms_named(int k) {
  std::vector<std::string> a;
  for (int i = 0; i < k; ++i) a.push_back("arm" + std::to_string(i));
  return ArmSet(a);
}

// Uniform random vector on the simplex.
inline std::vector<double> random_simplex(Rng& rng, int k) {
  std::vector<double> v(static_cast<std::size_t>(k));
  double s = 0.0;
  for (auto& x : v) {
    x = -std::log(1.0 - uniform01(rng));
    s += x;
  }
  for (auto& x : v) x /= s;
  return v;
}

// Uniformly assigned rows on two_feature_schema(): arm w has mean
// mean(x, w), plus uniform noise on [-noise, noise], clipped to the range.
template <class Mean>
ObservationLog uniform_history(int rows, int num_arms, std::uint64_t seed, Mean mean, double noise = 1.0,
                               int batch_size = 150) {
  ObservationLog log(two_feature_schema(), arms_named(num_arms));
  Rng rng(seed);
  const std::vector<double> e(static_cast<std::size_t>(num_arms), 1.0 / num_arms);
  for (int t = 0; t < rows; ++t) {
    std::vector<double> x{uniform01(rng), uniform01(rng)};
    const auto w = static_cast<ArmIndex>(uniform_index(rng, static_cast<std::size_t>(num_arms)));
    double y = mean(x, w) + noise * (2.0 * uniform01(rng) - 1.0);
    y = std::clamp(y, -10.0, 10.0);
    log.append({t + 1, x, w, y, e, t / batch_size});
  }
  return log;
}

}  // namespace cbx::testing
