#pragma once

#include <string>
#include <vector>

#include "ssk/nn.hpp"

// Distribution-level evaluation: Fréchet distance between Gaussians fitted
// to two embedding sets, and the exponentiated-KL diversity score over
// classifier probabilities.
namespace ssk {

// features are {n, d} row-sample matrices, n >= 2 on both sides (needed for
// an unbiased covariance), equal d. Result is clamped at zero to absorb
// eigensolver round-off on near-identical inputs.
double frechet_distance(const nn::Tensor& features_a, const nn::Tensor& features_b);

struct InceptionScoreResult {
    double mean = 0.0;
    double stddev = 0.0;  // population std over splits
};

// probs is {n, C}; every row must be a probability vector (entries in
// [0, 1], summing to 1 within 1e-6). The rows are cut into `splits`
// contiguous blocks, each scored as exp(mean_i KL(p_i || p_mean)).
InceptionScoreResult inception_score(const nn::Tensor& probs, int splits = 10);

struct MetricRow {
    std::string name;
    double value = 0.0;
};

void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows);

}  // namespace ssk
