#pragma once

#include <cmath>
#include <cstdint>
#include <functional>

#include "chamferlab/matrix.hpp"
#include "chamferlab/rng.hpp"

namespace testsupport {

using chamferlab::Matrix;

inline Matrix random_matrix(std::uint64_t seed, std::size_t rows, std::size_t cols, double scale = 1.0) {
  chamferlab::RngStream rng(seed, 77);
  return scale * chamferlab::gauss(rng, rows, cols);
}

// Central differences of a scalar function, one coordinate at a time.
inline Matrix numeric_grad(const std::function<double(const Matrix&)>& f, const Matrix& x, double h = 1e-5) {
  Matrix g(x.rows(), x.cols());
  Matrix probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + h;
    const double up = f(probe);
    probe.data()[i] = orig - h;
    const double down = f(probe);
    probe.data()[i] = orig;
    g.data()[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// Largest elementwise error relative to max(|a|, |b|), floored at `floor`.
inline double rel_error(const Matrix& a, const Matrix& b, double floor = 1e-7) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = std::abs(a.data()[i] - b.data()[i]);
    if (diff <= floor) continue;
    const double denom = std::max(std::abs(a.data()[i]), std::abs(b.data()[i]));
    worst = std::max(worst, diff / denom);
  }
  return worst;
}

}  // namespace testsupport
