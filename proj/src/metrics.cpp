#include "ssk/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "ssk/common.hpp"
#include "ssk/linalg.hpp"

namespace ssk {

double frechet_distance(const nn::Tensor& features_a, const nn::Tensor& features_b) {
    if (features_a.shape.size() != 2 || features_b.shape.size() != 2) {
        throw DimensionMismatch("feature matrices must be 2-D {n,d}");
    }
    const int d = features_a.shape[1];
    if (features_b.shape[1] != d) {
        throw DimensionMismatch("feature sets have different dimensions");
    }
    const int na = features_a.shape[0];
    const int nb = features_b.shape[0];
    if (na < 2 || nb < 2) {
        throw TooFewSamples("need at least 2 samples per side to fit a Gaussian");
    }

    std::vector<double> mean_a, mean_b;
    const std::vector<double> cov_a = linalg::covariance(features_a.data, na, d, &mean_a);
    const std::vector<double> cov_b = linalg::covariance(features_b.data, nb, d, &mean_b);

    double mean_gap = 0.0;
    for (int j = 0; j < d; ++j) {
        const double diff = mean_a[j] - mean_b[j];
        mean_gap += diff * diff;
    }

    // Tr((Σa Σb)^{1/2}) through the symmetric similar matrix S Σb S with
    // S = Σa^{1/2}: same nonzero spectrum, but symmetric, so Jacobi applies.
    const std::vector<double> root_a = linalg::sqrt_psd(cov_a, d);
    const std::vector<double> inner =
        linalg::matmul(linalg::matmul(root_a, d, d, cov_b, d), d, d, root_a, d);
    const linalg::SymmetricEigen eig = linalg::eigh(inner, d);
    double trace_root = 0.0;
    for (double v : eig.values) {
        if (v > 0.0) trace_root += std::sqrt(v);
    }

    const double fid =
        mean_gap + linalg::trace(cov_a, d) + linalg::trace(cov_b, d) - 2.0 * trace_root;
    return fid > 0.0 ? fid : 0.0;
}

InceptionScoreResult inception_score(const nn::Tensor& probs, int splits) {
    if (probs.shape.size() != 2) {
        throw DimensionMismatch("probability matrix must be 2-D {n,C}");
    }
    const int n = probs.shape[0];
    const int c = probs.shape[1];
    if (c < 1) throw DimensionMismatch("probability rows must have at least one class");
    if (splits < 1) throw InvalidArgument("splits must be >= 1");
    if (n < splits) throw TooFewSamples("need at least one sample per split");

    for (int i = 0; i < n; ++i) {
        double sum = 0.0;
        for (int j = 0; j < c; ++j) {
            const double p = probs.at(i, j);
            if (p < 0.0) throw InvalidDistribution("negative probability entry");
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-6) {
            throw InvalidDistribution("probability row does not sum to 1");
        }
    }

    std::vector<double> scores(static_cast<std::size_t>(splits), 0.0);
    for (int s = 0; s < splits; ++s) {
        const int row0 = static_cast<int>(static_cast<long long>(s) * n / splits);
        const int row1 = static_cast<int>(static_cast<long long>(s + 1) * n / splits);
        const int rows = row1 - row0;

        std::vector<double> marginal(static_cast<std::size_t>(c), 0.0);
        for (int i = row0; i < row1; ++i) {
            for (int j = 0; j < c; ++j) marginal[static_cast<std::size_t>(j)] += probs.at(i, j);
        }
        for (double& m : marginal) m /= static_cast<double>(rows);

        double mean_kl = 0.0;
        for (int i = row0; i < row1; ++i) {
            double kl = 0.0;
            for (int j = 0; j < c; ++j) {
                const double p = probs.at(i, j);
                if (p > 0.0) kl += p * (std::log(p) - std::log(marginal[static_cast<std::size_t>(j)]));
            }
            mean_kl += kl;
        }
        scores[static_cast<std::size_t>(s)] = std::exp(mean_kl / static_cast<double>(rows));
    }

    InceptionScoreResult out;
    for (double v : scores) out.mean += v;
    out.mean /= static_cast<double>(splits);
    double var = 0.0;
    for (double v : scores) var += (v - out.mean) * (v - out.mean);
    out.stddev = std::sqrt(var / static_cast<double>(splits));
    return out;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw MissingFile("cannot open metrics file for writing: " + path);
    out << "metric,value\n";
    char line[128];
    for (const auto& row : rows) {
        std::snprintf(line, sizeof(line), "%.10g\n", row.value);
        out << row.name << ',' << line;
    }
}

}  // namespace ssk
