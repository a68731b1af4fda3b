#include "ssk/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ssk::linalg {

namespace {

double offdiag_norm2(const std::vector<double>& a, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) s += a[static_cast<std::size_t>(i) * n + j] * a[static_cast<std::size_t>(i) * n + j];
    return 2.0 * s;
}

}  // namespace

SymmetricEigen eigh(const std::vector<double>& a_in, int n) {
    if (n < 1 || static_cast<int>(a_in.size()) != n * n) {
        throw DimensionMismatch("eigh: matrix size mismatch");
    }
    std::vector<double> a = a_in;
    std::vector<double> v(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i) * n + i] = 1.0;

    auto A = [&](int r, int c) -> double& { return a[static_cast<std::size_t>(r) * n + c]; };
    auto V = [&](int r, int c) -> double& { return v[static_cast<std::size_t>(r) * n + c]; };

    double frob = 0.0;
    for (double x : a) frob += x * x;
    const double tol = std::max(frob, 1.0) * 1e-30;  // squared-norm convergence target

    const int max_sweeps = 100;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        if (offdiag_norm2(a, n) <= tol) break;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = A(p, q);
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (A(q, q) - A(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                const double app = A(p, p), aqq = A(q, q);
                A(p, p) = app - t * apq;
                A(q, q) = aqq + t * apq;
                A(p, q) = 0.0;
                A(q, p) = 0.0;
                for (int k = 0; k < n; ++k) {
                    if (k == p || k == q) continue;
                    const double akp = A(k, p), akq = A(k, q);
                    A(k, p) = c * akp - s * akq;
                    A(p, k) = A(k, p);
                    A(k, q) = s * akp + c * akq;
                    A(q, k) = A(k, q);
                }
                for (int k = 0; k < n; ++k) {
                    const double vkp = V(k, p), vkq = V(k, q);
                    V(k, p) = c * vkp - s * vkq;
                    V(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    SymmetricEigen out;
    out.n = n;
    out.values.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out.values[static_cast<std::size_t>(i)] = A(i, i);

    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
        return out.values[static_cast<std::size_t>(x)] < out.values[static_cast<std::size_t>(y)];
    });
    std::vector<double> sorted_vals(static_cast<std::size_t>(n));
    std::vector<double> sorted_vecs(static_cast<std::size_t>(n) * n);
    for (int j = 0; j < n; ++j) {
        const int src = order[static_cast<std::size_t>(j)];
        sorted_vals[static_cast<std::size_t>(j)] = out.values[static_cast<std::size_t>(src)];
        for (int r = 0; r < n; ++r) {
            sorted_vecs[static_cast<std::size_t>(r) * n + j] = V(r, src);
        }
    }
    out.values = std::move(sorted_vals);
    out.vectors = std::move(sorted_vecs);
    return out;
}

std::vector<double> covariance(const std::vector<double>& x, int n, int d,
                               std::vector<double>* means_out) {
    if (n < 2) throw TooFewSamples("covariance needs at least 2 samples");
    if (static_cast<int>(x.size()) != n * d) throw DimensionMismatch("covariance: data size mismatch");
    std::vector<double> mu(static_cast<std::size_t>(d), 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) mu[static_cast<std::size_t>(j)] += x[static_cast<std::size_t>(i) * d + j];
    for (auto& m : mu) m /= n;
    std::vector<double> cov(static_cast<std::size_t>(d) * d, 0.0);
    for (int i = 0; i < n; ++i) {
        for (int r = 0; r < d; ++r) {
            const double xr = x[static_cast<std::size_t>(i) * d + r] - mu[static_cast<std::size_t>(r)];
            if (xr == 0.0) continue;
            for (int c = 0; c < d; ++c) {
                cov[static_cast<std::size_t>(r) * d + c] +=
                    xr * (x[static_cast<std::size_t>(i) * d + c] - mu[static_cast<std::size_t>(c)]);
            }
        }
    }
    for (auto& cv : cov) cv /= (n - 1);
    if (means_out) *means_out = std::move(mu);
    return cov;
}

std::vector<double> sqrt_psd(const std::vector<double>& a, int n, double min_eig) {
    SymmetricEigen e = eigh(a, n);
    std::vector<double> root(static_cast<std::size_t>(n) * n, 0.0);
    for (int k = 0; k < n; ++k) {
        double lam = e.values[static_cast<std::size_t>(k)];
        if (lam < min_eig) lam = 0.0;
        if (lam < 0.0) lam = 0.0;
        const double s = std::sqrt(lam);
        if (s == 0.0) continue;
        for (int r = 0; r < n; ++r) {
            const double vr = e.vectors[static_cast<std::size_t>(r) * n + k] * s;
            if (vr == 0.0) continue;
            for (int c = 0; c < n; ++c) {
                root[static_cast<std::size_t>(r) * n + c] += vr * e.vectors[static_cast<std::size_t>(c) * n + k];
            }
        }
    }
    return root;
}

std::vector<double> matmul(const std::vector<double>& a, int m, int k,
                           const std::vector<double>& b, int n) {
    if (static_cast<int>(a.size()) != m * k || static_cast<int>(b.size()) != k * n) {
        throw DimensionMismatch("matmul: operand size mismatch");
    }
    std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            const double av = a[static_cast<std::size_t>(i) * k + p];
            if (av == 0.0) continue;
            for (int j = 0; j < n; ++j) {
                c[static_cast<std::size_t>(i) * n + j] += av * b[static_cast<std::size_t>(p) * n + j];
            }
        }
    }
    return c;
}

double trace(const std::vector<double>& a, int n) {
    double t = 0.0;
    for (int i = 0; i < n; ++i) t += a[static_cast<std::size_t>(i) * n + i];
    return t;
}

}  // namespace ssk::linalg
