#include "chamferlab/eig.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "chamferlab/errors.hpp"

namespace chamferlab {

SymEig sym_eig(const Matrix& a) {
  const std::size_t n = a.rows();
  if (a.cols() != n) throw DimensionError("sym_eig: matrix is not square (" + a.shape_string() + ")");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(a(i, j) - a(j, i)) > 1e-10) throw DimensionError("sym_eig: matrix is not symmetric");

  Matrix m = a;
  Matrix v = Matrix::identity(n);
  double scale = 0.0;
  for (double x : m.data()) scale = std::max(scale, std::abs(x));

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += m(i, j) * m(i, j);
    if (off <= 1e-30 * std::max(scale * scale, 1e-300)) break;

    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = m(p, q);
        if (apq == 0.0) continue;
        const double theta = (m(q, q) - m(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double mkp = m(k, p);
          const double mkq = m(k, q);
          m(k, p) = c * mkp - s * mkq;
          m(k, q) = s * mkp + c * mkq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double mpk = m(p, k);
          const double mqk = m(q, k);
          m(p, k) = c * mpk - s * mqk;
          m(q, k) = s * mpk + c * mqk;
        }
        m(p, q) = 0.0;
        m(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return m(i, i) > m(j, j); });

  SymEig out{Matrix(1, n), Matrix(n, n)};
  for (std::size_t c = 0; c < n; ++c) {
    out.eigenvalues(0, c) = m(order[c], order[c]);
    for (std::size_t r = 0; r < n; ++r) out.eigenvectors(r, c) = v(r, order[c]);
  }
  return out;
}

Matrix sqrtm_psd(const Matrix& a) {
  const SymEig e = sym_eig(a);
  const std::size_t n = a.rows();
  Matrix scaled = e.eigenvectors;
  for (std::size_t c = 0; c < n; ++c) {
    const double root = std::sqrt(std::max(e.eigenvalues(0, c), 0.0));
    for (std::size_t r = 0; r < n; ++r) scaled(r, c) *= root;
  }
  Matrix out = matmul_nt(scaled, e.eigenvectors);
  // Symmetrise away the round-off asymmetry.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double avg = 0.5 * (out(i, j) + out(j, i));
      out(i, j) = avg;
      out(j, i) = avg;
    }
  return out;
}

}  // namespace chamferlab
