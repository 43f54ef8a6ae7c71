#include "metrik/linalg.hpp"

#include <cassert>

namespace metrik {

void matmul_nn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
    assert(a.cols() == b.rows());
    const int m = a.rows(), k = a.cols(), n = b.cols();
    if (!accumulate) {
        c = Matrix(m, n);
    } else {
        assert(c.rows() == m && c.cols() == n);
    }
    for (int i = 0; i < m; ++i) {
        double* crow = c.row(i);
        const double* arow = a.row(i);
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b.row(p);
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
    assert(a.cols() == b.cols());
    const int m = a.rows(), k = a.cols(), n = b.rows();
    if (!accumulate) {
        c = Matrix(m, n);
    } else {
        assert(c.rows() == m && c.cols() == n);
    }
    for (int i = 0; i < m; ++i) {
        const double* arow = a.row(i);
        double* crow = c.row(i);
        for (int j = 0; j < n; ++j) {
            const double* brow = b.row(j);
            double sum = 0.0;
            for (int p = 0; p < k; ++p) sum += arow[p] * brow[p];
            crow[j] += sum;
        }
    }
}

void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
    assert(a.rows() == b.rows());
    const int k = a.rows(), m = a.cols(), n = b.cols();
    if (!accumulate) {
        c = Matrix(m, n);
    } else {
        assert(c.rows() == m && c.cols() == n);
    }
    for (int p = 0; p < k; ++p) {
        const double* arow = a.row(p);
        const double* brow = b.row(p);
        for (int i = 0; i < m; ++i) {
            const double av = arow[i];
            double* crow = c.row(i);
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void add_row_bias(Matrix& x, const Matrix& bias) {
    assert(bias.rows() == 1 && bias.cols() == x.cols());
    const double* b = bias.row(0);
    for (int i = 0; i < x.rows(); ++i) {
        double* row = x.row(i);
        for (int j = 0; j < x.cols(); ++j) row[j] += b[j];
    }
}

void accumulate_bias_grad(const Matrix& x, Matrix& bias) {
    assert(bias.rows() == 1 && bias.cols() == x.cols());
    double* b = bias.row(0);
    for (int i = 0; i < x.rows(); ++i) {
        const double* row = x.row(i);
        for (int j = 0; j < x.cols(); ++j) b[j] += row[j];
    }
}

}  // namespace metrik
