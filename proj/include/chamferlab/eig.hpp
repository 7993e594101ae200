#pragma once

#include "chamferlab/matrix.hpp"

namespace chamferlab {

struct SymEig {
  Matrix eigenvalues;   // 1×n, sorted descending
  Matrix eigenvectors;  // n×n, column i pairs with eigenvalue i
};

// Cyclic Jacobi rotations. Input must be square and symmetric within 1e-10.
SymEig sym_eig(const Matrix& a);

// Principal square root of a symmetric positive semi-definite matrix.
// Negative eigenvalues from round-off are clamped to zero.
Matrix sqrtm_psd(const Matrix& a);

}  // namespace chamferlab
