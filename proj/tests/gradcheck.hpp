#pragma once

// Central finite-difference oracle shared by the unit and acceptance suites.
// Independent of the tape: it only evaluates a scalar function of a flat
// parameter vector.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace ifsl::testing {

inline double fd_step(double theta) { return 1e-4 * (1.0 + std::abs(theta)); }

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
}

// d f / d x[i] by central differences; `x` is restored afterwards.
inline double central_difference(const std::function<double(const std::vector<double>&)>& f,
                                  std::vector<double>& x, std::size_t i) {
  const double orig = x[i];
  const double h = fd_step(orig);
  x[i] = orig + h;
  const double up = f(x);
  x[i] = orig - h;
  const double down = f(x);
  x[i] = orig;
  return (up - down) / (2.0 * h);
}

}  // namespace ifsl::testing
