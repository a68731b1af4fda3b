#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <vector>

#include "ssk/common.hpp"
#include "ssk/raster.hpp"

// Reverse-mode autodiff over dense double tensors, sized for desk-scale
// training runs. Graphs are built per sample and freed after backward();
// parameter nodes persist and accumulate gradients until zero_grad().
namespace ssk::nn {

struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s, double fill = 0.0);
    static Tensor from(std::vector<int> s, std::vector<double> d);
    static Tensor randn(std::vector<int> s, std::mt19937_64& rng, double stddev);

    int numel() const { return static_cast<int>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    double& operator[](int i) { return data[static_cast<std::size_t>(i)]; }
    double operator[](int i) const { return data[static_cast<std::size_t>(i)]; }
    // 2-D accessor, row-major.
    double& at(int r, int c) { return data[static_cast<std::size_t>(r) * dim(1) + c]; }
    double at(int r, int c) const { return data[static_cast<std::size_t>(r) * dim(1) + c]; }
};

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;  // allocated on demand, same shape as value
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward_fn;

    void ensure_grad();
    double scalar() const { return value.data.at(0); }
};

NodePtr constant(Tensor v);
NodePtr parameter(Tensor v);

// Elementwise.
NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr sub(const NodePtr& a, const NodePtr& b);
NodePtr mul(const NodePtr& a, const NodePtr& b);
NodePtr scale(const NodePtr& a, double s);
NodePtr abs_of(const NodePtr& a);
NodePtr relu(const NodePtr& a);
NodePtr sigmoid(const NodePtr& a);
NodePtr clamp01(const NodePtr& a);

// Reductions.
NodePtr reshape(const NodePtr& a, std::vector<int> shape);  // same element count
NodePtr sum_all(const NodePtr& a);
NodePtr mean_all(const NodePtr& a);
NodePtr mean_abs_diff(const NodePtr& a, const NodePtr& b);

// 2-D matrix ops.
NodePtr matmul(const NodePtr& a, const NodePtr& b, bool trans_a = false, bool trans_b = false);
NodePtr add_bias_rows(const NodePtr& x, const NodePtr& bias);
NodePtr softmax_rows(const NodePtr& x);
NodePtr causal_softmax_rows(const NodePtr& x);  // square scores, row i sees cols 0..i
NodePtr l2_normalize_all(const NodePtr& x);     // whole tensor as one vector
NodePtr colwise_affine(const NodePtr& x, const Tensor& scl, const Tensor& shift);
NodePtr concat_rows(const NodePtr& a, const NodePtr& b);
NodePtr slice_rows(const NodePtr& x, int row0, int count);
NodePtr embed_rows(const NodePtr& table, const std::vector<int>& ids);
// Mean cross-entropy over rows where mask is true; targets are class ids.
NodePtr cross_entropy_rows(const NodePtr& logits, const std::vector<int>& targets,
                           const std::vector<bool>& mask);

// Image ops on {C,H,W} tensors.
NodePtr conv2d(const NodePtr& x, const NodePtr& w, const NodePtr& bias, int stride, int pad);
NodePtr upsample_nearest2(const NodePtr& x);
NodePtr channel_mean(const NodePtr& x);
// Block means over a g x g grid of a {1,H,W} tensor -> {g*g} vector.
NodePtr pool_grid(const NodePtr& x, int g);
// Per-patch (mean, variance, |gradient| sum / n) rows -> {g*g, 3}.
NodePtr patch_stats(const NodePtr& x, int g);
// Crop pixel rect [x0,x1) x [y0,y1) of a {1,H,W} tensor, nearest-neighbor
// resize to {1,out_res,out_res}.
NodePtr crop_resize_nearest(const NodePtr& x, int x0, int y0, int x1, int y1, int out_res);

void backward(const NodePtr& root);

// C (+)= A * B, all row-major; m x k times k x n.
void gemm(int m, int n, int k, const double* a, const double* b, double* c, bool accumulate);

struct AdamConfig {
    double lr = 1.0e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1.0e-8;
};

class Adam {
public:
    Adam(std::vector<NodePtr> params, AdamConfig cfg);
    void zero_grad();
    // One update from the gradients currently accumulated on the parameters;
    // grad_scale folds in any deferred 1/batch factor.
    void step(double grad_scale = 1.0);

private:
    std::vector<NodePtr> params_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    AdamConfig cfg_;
    std::int64_t t_ = 0;
};

// Image <-> tensor bridges ({C,H,W} planar).
Tensor to_tensor(const RasterImage& img);
RasterImage to_raster(const Tensor& t);

}  // namespace ssk::nn
