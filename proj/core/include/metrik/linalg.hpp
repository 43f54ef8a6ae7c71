#pragma once

#include "metrik/array.hpp"

namespace metrik {

/// C = A * B (C += when accumulate). Shapes: [m,k] * [k,n] -> [m,n].
void matmul_nn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);

/// C = A * B^T. Shapes: [m,k] * [n,k] -> [m,n].
void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);

/// C = A^T * B. Shapes: [k,m] * [k,n] -> [m,n].
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);

/// X(i, :) += bias(0, :) for every row i.
void add_row_bias(Matrix& x, const Matrix& bias);

/// bias(0, :) += sum of rows of X.
void accumulate_bias_grad(const Matrix& x, Matrix& bias);

}  // namespace metrik
