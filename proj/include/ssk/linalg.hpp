#pragma once

#include <vector>

#include "ssk/common.hpp"

// Dense symmetric eigensolver and small covariance helpers. These back the
// PCA projector and the Fréchet metric; matrices stay tiny (feature dims),
// so a cyclic Jacobi sweep is fast enough and has no dependencies.
namespace ssk::linalg {

struct SymmetricEigen {
    int n = 0;
    std::vector<double> values;   // ascending
    std::vector<double> vectors;  // n×n row-major; column j = eigenvector of values[j]
};

// Eigendecomposition of a symmetric matrix (row-major n×n). Cyclic Jacobi
// rotations until the off-diagonal norm is negligible.
SymmetricEigen eigh(const std::vector<double>& a, int n);

// Unbiased covariance of row-sample matrix x (n×d): (Xc^T Xc) / (n-1).
// Also writes the column means. Requires n >= 2.
std::vector<double> covariance(const std::vector<double>& x, int n, int d,
                               std::vector<double>* means_out = nullptr);

// Symmetric PSD square root via eigh; eigenvalues below min_eig are clipped
// to zero before the square root.
std::vector<double> sqrt_psd(const std::vector<double>& a, int n, double min_eig = -1e-8);

// Plain row-major product helpers for small matrices.
std::vector<double> matmul(const std::vector<double>& a, int m, int k,
                           const std::vector<double>& b, int n);

double trace(const std::vector<double>& a, int n);

}  // namespace ssk::linalg
