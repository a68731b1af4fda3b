#include "ssk/nn.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace ssk::nn {

Tensor::Tensor(std::vector<int> s, double fill) : shape(std::move(s)) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    data.assign(n, fill);
}

Tensor Tensor::from(std::vector<int> s, std::vector<double> d) {
    Tensor t;
    t.shape = std::move(s);
    t.data = std::move(d);
    std::size_t n = 1;
    for (int dd : t.shape) n *= static_cast<std::size_t>(dd);
    if (n != t.data.size()) throw DimensionMismatch("Tensor::from: shape/data size mismatch");
    return t;
}

Tensor Tensor::randn(std::vector<int> s, std::mt19937_64& rng, double stddev) {
    Tensor t(std::move(s));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.data) v = dist(rng);
    return t;
}

void Node::ensure_grad() {
    if (grad.data.size() != value.data.size()) {
        grad = Tensor(value.shape, 0.0);
    }
}

NodePtr constant(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    return n;
}

NodePtr parameter(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = true;
    return n;
}

namespace {

NodePtr make_node(Tensor value, std::vector<NodePtr> parents,
                  std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    bool needs = false;
    for (const auto& p : parents) needs = needs || p->requires_grad;
    n->requires_grad = needs;
    if (needs) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward_fn);
    }
    return n;
}

void accum(const NodePtr& p, int idx, double v) {
    if (!p->requires_grad) return;
    p->ensure_grad();
    p->grad.data[static_cast<std::size_t>(idx)] += v;
}

void check_same_shape(const NodePtr& a, const NodePtr& b, const char* what) {
    if (!a->value.same_shape(b->value)) {
        throw DimensionMismatch(std::string(what) + ": shape mismatch");
    }
}

}  // namespace

NodePtr add(const NodePtr& a, const NodePtr& b) {
    check_same_shape(a, b, "add");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b->value.data[i];
    return make_node(std::move(out), {a, b}, [a, b](Node& self) {
        const int n = self.value.numel();
        for (int i = 0; i < n; ++i) {
            const double g = self.grad[i];
            accum(a, i, g);
            accum(b, i, g);
        }
    });
}

NodePtr sub(const NodePtr& a, const NodePtr& b) {
    check_same_shape(a, b, "sub");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b->value.data[i];
    return make_node(std::move(out), {a, b}, [a, b](Node& self) {
        const int n = self.value.numel();
        for (int i = 0; i < n; ++i) {
            const double g = self.grad[i];
            accum(a, i, g);
            accum(b, i, -g);
        }
    });
}

NodePtr mul(const NodePtr& a, const NodePtr& b) {
    check_same_shape(a, b, "mul");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b->value.data[i];
    return make_node(std::move(out), {a, b}, [a, b](Node& self) {
        const int n = self.value.numel();
        for (int i = 0; i < n; ++i) {
            const double g = self.grad[i];
            accum(a, i, g * b->value[i]);
            accum(b, i, g * a->value[i]);
        }
    });
}

NodePtr scale(const NodePtr& a, double s) {
    Tensor out = a->value;
    for (auto& v : out.data) v *= s;
    return make_node(std::move(out), {a}, [a, s](Node& self) {
        const int n = self.value.numel();
        for (int i = 0; i < n; ++i) accum(a, i, self.grad[i] * s);
    });
}

NodePtr abs_of(const NodePtr& a) {
    Tensor out = a->value;
    for (auto& v : out.data) v = std::abs(v);
    return make_node(std::move(out), {a}, [a](Node& self) {
        const int n = self.value.numel();
        for (int i = 0; i < n; ++i) {
            const double x = a->value[i];
            const double s = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
            accum(a, i, self.grad[i] * s);
        }
    });
}

NodePtr relu(const NodePtr& a) {
    Tensor out = a->value;
    for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
    return make_node(std::move(out), {a}, [a](Node& self) {
        const int n = self.value.numel();
        for (int i = 0; i < n; ++i) {
            if (a->value[i] > 0.0) accum(a, i, self.grad[i]);
        }
    });
}

NodePtr sigmoid(const NodePtr& a) {
    Tensor out = a->value;
    for (auto& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
    auto n = make_node(std::move(out), {a}, nullptr);
    if (n->requires_grad) {
        // capture self value via weak reference through the closure arg
        n->backward_fn = [a](Node& self) {
            const int count = self.value.numel();
            for (int i = 0; i < count; ++i) {
                const double y = self.value[i];
                accum(a, i, self.grad[i] * y * (1.0 - y));
            }
        };
    }
    return n;
}

NodePtr clamp01(const NodePtr& a) {
    Tensor out = a->value;
    for (auto& v : out.data) v = std::clamp(v, 0.0, 1.0);
    return make_node(std::move(out), {a}, [a](Node& self) {
        const int n = self.value.numel();
        for (int i = 0; i < n; ++i) {
            const double x = a->value[i];
            if (x > 0.0 && x < 1.0) accum(a, i, self.grad[i]);
        }
    });
}

NodePtr reshape(const NodePtr& a, std::vector<int> shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    if (n != a->value.data.size()) throw DimensionMismatch("reshape: element count differs");
    Tensor out;
    out.shape = std::move(shape);
    out.data = a->value.data;
    return make_node(std::move(out), {a}, [a](Node& self) {
        const int count = self.value.numel();
        for (int i = 0; i < count; ++i) accum(a, i, self.grad[i]);
    });
}

NodePtr sum_all(const NodePtr& a) {
    double s = 0.0;
    for (double v : a->value.data) s += v;
    return make_node(Tensor::from({1}, {s}), {a}, [a](Node& self) {
        const double g = self.grad[0];
        const int n = a->value.numel();
        for (int i = 0; i < n; ++i) accum(a, i, g);
    });
}

NodePtr mean_all(const NodePtr& a) {
    const int n = a->value.numel();
    if (n == 0) throw DimensionMismatch("mean_all on empty tensor");
    return scale(sum_all(a), 1.0 / n);
}

NodePtr mean_abs_diff(const NodePtr& a, const NodePtr& b) {
    return mean_all(abs_of(sub(a, b)));
}

// ---------------------------------------------------------------------------
// Matrix ops

void gemm(int m, int n, int k, const double* a, const double* b, double* c, bool accumulate) {
    if (!accumulate) std::fill(c, c + static_cast<std::size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        double* crow = c + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

namespace {

Tensor transposed(const Tensor& t) {
    const int r = t.dim(0), c = t.dim(1);
    Tensor out({c, r});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.at(j, i) = t.at(i, j);
    return out;
}

}  // namespace

NodePtr matmul(const NodePtr& a, const NodePtr& b, bool trans_a, bool trans_b) {
    if (a->value.ndim() != 2 || b->value.ndim() != 2) {
        throw DimensionMismatch("matmul expects 2-D tensors");
    }
    const Tensor av = trans_a ? transposed(a->value) : a->value;
    const Tensor bv = trans_b ? transposed(b->value) : b->value;
    const int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    if (bv.dim(0) != k) throw DimensionMismatch("matmul inner dimensions differ");
    Tensor out({m, n});
    gemm(m, n, k, av.data.data(), bv.data.data(), out.data.data(), false);
    return make_node(std::move(out), {a, b},
                     [a, b, trans_a, trans_b, m, n, k](Node& self) {
                         const Tensor av2 = trans_a ? transposed(a->value) : a->value;
                         const Tensor bv2 = trans_b ? transposed(b->value) : b->value;
                         // dA' = dC * B'^T ; dB' = A'^T * dC  (primes = effective operands)
                         if (a->requires_grad) {
                             Tensor da({m, k});
                             Tensor bt = transposed(bv2);
                             gemm(m, k, n, self.grad.data.data(), bt.data.data(), da.data.data(), false);
                             a->ensure_grad();
                             if (trans_a) {
                                 for (int i = 0; i < m; ++i)
                                     for (int p = 0; p < k; ++p) a->grad.at(p, i) += da.at(i, p);
                             } else {
                                 for (std::size_t i = 0; i < da.data.size(); ++i)
                                     a->grad.data[i] += da.data[i];
                             }
                         }
                         if (b->requires_grad) {
                             Tensor db({k, n});
                             Tensor at = transposed(av2);
                             gemm(k, n, m, at.data.data(), self.grad.data.data(), db.data.data(), false);
                             b->ensure_grad();
                             if (trans_b) {
                                 for (int p = 0; p < k; ++p)
                                     for (int j = 0; j < n; ++j) b->grad.at(j, p) += db.at(p, j);
                             } else {
                                 for (std::size_t i = 0; i < db.data.size(); ++i)
                                     b->grad.data[i] += db.data[i];
                             }
                         }
                     });
}

NodePtr add_bias_rows(const NodePtr& x, const NodePtr& bias) {
    if (x->value.ndim() != 2 || bias->value.ndim() != 1 || bias->value.dim(0) != x->value.dim(1)) {
        throw DimensionMismatch("add_bias_rows: bias must match row width");
    }
    Tensor out = x->value;
    const int r = out.dim(0), c = out.dim(1);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.at(i, j) += bias->value[j];
    return make_node(std::move(out), {x, bias}, [x, bias, r, c](Node& self) {
        for (int i = 0; i < r; ++i) {
            for (int j = 0; j < c; ++j) {
                const double g = self.grad.at(i, j);
                accum(x, i * c + j, g);
                accum(bias, j, g);
            }
        }
    });
}

namespace {

// Shared softmax backward: dx = y * (dy - sum(dy * y)) per row segment.
void softmax_row_backward(const double* y, const double* dy, double* dx, int n) {
    double dot = 0.0;
    for (int j = 0; j < n; ++j) dot += dy[j] * y[j];
    for (int j = 0; j < n; ++j) dx[j] += y[j] * (dy[j] - dot);
}

}  // namespace

NodePtr softmax_rows(const NodePtr& x) {
    if (x->value.ndim() != 2) throw DimensionMismatch("softmax_rows expects 2-D");
    const int r = x->value.dim(0), c = x->value.dim(1);
    Tensor out({r, c});
    for (int i = 0; i < r; ++i) {
        double mx = x->value.at(i, 0);
        for (int j = 1; j < c; ++j) mx = std::max(mx, x->value.at(i, j));
        double denom = 0.0;
        for (int j = 0; j < c; ++j) {
            const double e = std::exp(x->value.at(i, j) - mx);
            out.at(i, j) = e;
            denom += e;
        }
        for (int j = 0; j < c; ++j) out.at(i, j) /= denom;
    }
    auto node = make_node(std::move(out), {x}, nullptr);
    if (node->requires_grad) {
        node->backward_fn = [x, r, c](Node& self) {
            x->ensure_grad();
            for (int i = 0; i < r; ++i) {
                softmax_row_backward(&self.value.at(i, 0), &self.grad.at(i, 0),
                                     &x->grad.at(i, 0), c);
            }
        };
    }
    return node;
}

NodePtr causal_softmax_rows(const NodePtr& x) {
    if (x->value.ndim() != 2 || x->value.dim(0) != x->value.dim(1)) {
        throw DimensionMismatch("causal_softmax_rows expects square scores");
    }
    const int s = x->value.dim(0);
    Tensor out({s, s}, 0.0);
    for (int i = 0; i < s; ++i) {
        const int n = i + 1;
        double mx = x->value.at(i, 0);
        for (int j = 1; j < n; ++j) mx = std::max(mx, x->value.at(i, j));
        double denom = 0.0;
        for (int j = 0; j < n; ++j) {
            const double e = std::exp(x->value.at(i, j) - mx);
            out.at(i, j) = e;
            denom += e;
        }
        for (int j = 0; j < n; ++j) out.at(i, j) /= denom;
    }
    auto node = make_node(std::move(out), {x}, nullptr);
    if (node->requires_grad) {
        node->backward_fn = [x, s](Node& self) {
            x->ensure_grad();
            for (int i = 0; i < s; ++i) {
                softmax_row_backward(&self.value.at(i, 0), &self.grad.at(i, 0),
                                     &x->grad.at(i, 0), i + 1);
            }
        };
    }
    return node;
}

NodePtr l2_normalize_all(const NodePtr& x) {
    double sq = 0.0;
    for (double v : x->value.data) sq += v * v;
    const double norm = std::sqrt(sq);
    if (norm < 1e-12) throw InvalidArgument("l2_normalize_all: zero vector");
    Tensor out = x->value;
    for (auto& v : out.data) v /= norm;
    auto node = make_node(std::move(out), {x}, nullptr);
    if (node->requires_grad) {
        node->backward_fn = [x, norm](Node& self) {
            const int n = self.value.numel();
            double dot = 0.0;
            for (int i = 0; i < n; ++i) dot += self.grad[i] * self.value[i];
            for (int i = 0; i < n; ++i) {
                accum(x, i, (self.grad[i] - self.value[i] * dot) / norm);
            }
        };
    }
    return node;
}

NodePtr colwise_affine(const NodePtr& x, const Tensor& scl, const Tensor& shift) {
    if (x->value.ndim() != 2 || scl.numel() != x->value.dim(1) || shift.numel() != x->value.dim(1)) {
        throw DimensionMismatch("colwise_affine: scale/shift must match column count");
    }
    const int r = x->value.dim(0), c = x->value.dim(1);
    Tensor out({r, c});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.at(i, j) = x->value.at(i, j) * scl[j] + shift[j];
    Tensor scl_copy = scl;
    return make_node(std::move(out), {x}, [x, scl_copy, r, c](Node& self) {
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) accum(x, i * c + j, self.grad.at(i, j) * scl_copy[j]);
    });
}

NodePtr concat_rows(const NodePtr& a, const NodePtr& b) {
    if (a->value.ndim() != 2 || b->value.ndim() != 2 || a->value.dim(1) != b->value.dim(1)) {
        throw DimensionMismatch("concat_rows: column widths differ");
    }
    const int ra = a->value.dim(0), rb = b->value.dim(0), c = a->value.dim(1);
    Tensor out({ra + rb, c});
    std::copy(a->value.data.begin(), a->value.data.end(), out.data.begin());
    std::copy(b->value.data.begin(), b->value.data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(ra) * c);
    return make_node(std::move(out), {a, b}, [a, b, ra, rb, c](Node& self) {
        for (int i = 0; i < ra * c; ++i) accum(a, i, self.grad[i]);
        for (int i = 0; i < rb * c; ++i) accum(b, i, self.grad[ra * c + i]);
    });
}

NodePtr slice_rows(const NodePtr& x, int row0, int count) {
    if (x->value.ndim() != 2 || row0 < 0 || count < 1 || row0 + count > x->value.dim(0)) {
        throw DimensionMismatch("slice_rows: range out of bounds");
    }
    const int c = x->value.dim(1);
    Tensor out({count, c});
    std::copy(x->value.data.begin() + static_cast<std::ptrdiff_t>(row0) * c,
              x->value.data.begin() + static_cast<std::ptrdiff_t>(row0 + count) * c,
              out.data.begin());
    return make_node(std::move(out), {x}, [x, row0, count, c](Node& self) {
        for (int i = 0; i < count * c; ++i) accum(x, row0 * c + i, self.grad[i]);
    });
}

NodePtr embed_rows(const NodePtr& table, const std::vector<int>& ids) {
    if (table->value.ndim() != 2) throw DimensionMismatch("embed_rows expects 2-D table");
    const int v = table->value.dim(0), d = table->value.dim(1);
    Tensor out({static_cast<int>(ids.size()), d});
    for (std::size_t t = 0; t < ids.size(); ++t) {
        const int id = ids[t];
        if (id < 0 || id >= v) throw UnknownToken("token id " + std::to_string(id) + " out of range");
        std::copy(table->value.data.begin() + static_cast<std::ptrdiff_t>(id) * d,
                  table->value.data.begin() + static_cast<std::ptrdiff_t>(id + 1) * d,
                  out.data.begin() + static_cast<std::ptrdiff_t>(t) * d);
    }
    auto ids_copy = ids;
    return make_node(std::move(out), {table}, [table, ids_copy, d](Node& self) {
        for (std::size_t t = 0; t < ids_copy.size(); ++t) {
            for (int j = 0; j < d; ++j) {
                accum(table, ids_copy[t] * d + j, self.grad[static_cast<int>(t) * d + j]);
            }
        }
    });
}

NodePtr cross_entropy_rows(const NodePtr& logits, const std::vector<int>& targets,
                           const std::vector<bool>& mask) {
    if (logits->value.ndim() != 2) throw DimensionMismatch("cross_entropy_rows expects 2-D");
    const int r = logits->value.dim(0), c = logits->value.dim(1);
    if (static_cast<int>(targets.size()) != r || static_cast<int>(mask.size()) != r) {
        throw DimensionMismatch("cross_entropy_rows: targets/mask length mismatch");
    }
    int active = 0;
    double total = 0.0;
    // keep row softmaxes for the backward pass
    auto probs = std::make_shared<Tensor>(Tensor({r, c}));
    for (int i = 0; i < r; ++i) {
        if (!mask[static_cast<std::size_t>(i)]) continue;
        const int tgt = targets[static_cast<std::size_t>(i)];
        if (tgt < 0 || tgt >= c) throw UnknownToken("target id " + std::to_string(tgt) + " out of range");
        double mx = logits->value.at(i, 0);
        for (int j = 1; j < c; ++j) mx = std::max(mx, logits->value.at(i, j));
        double denom = 0.0;
        for (int j = 0; j < c; ++j) denom += std::exp(logits->value.at(i, j) - mx);
        const double lse = std::log(denom) + mx;
        total += lse - logits->value.at(i, tgt);
        for (int j = 0; j < c; ++j) probs->at(i, j) = std::exp(logits->value.at(i, j) - lse);
        ++active;
    }
    if (active == 0) throw EmptyDataset("cross_entropy_rows: all rows masked out");
    const double loss = total / active;
    auto targets_copy = targets;
    auto mask_copy = mask;
    return make_node(Tensor::from({1}, {loss}), {logits},
                     [logits, probs, targets_copy, mask_copy, r, c, active](Node& self) {
                         const double g = self.grad[0] / active;
                         logits->ensure_grad();
                         for (int i = 0; i < r; ++i) {
                             if (!mask_copy[static_cast<std::size_t>(i)]) continue;
                             for (int j = 0; j < c; ++j) {
                                 double p = probs->at(i, j);
                                 if (j == targets_copy[static_cast<std::size_t>(i)]) p -= 1.0;
                                 logits->grad.at(i, j) += g * p;
                             }
                         }
                     });
}

// ---------------------------------------------------------------------------
// Image ops

NodePtr conv2d(const NodePtr& x, const NodePtr& w, const NodePtr& bias, int stride, int pad) {
    if (x->value.ndim() != 3 || w->value.ndim() != 4) {
        throw DimensionMismatch("conv2d expects {C,H,W} input and {Co,Ci,K,K} weights");
    }
    const int ci = x->value.dim(0), h = x->value.dim(1), wd = x->value.dim(2);
    const int co = w->value.dim(0), k = w->value.dim(2);
    if (w->value.dim(1) != ci || w->value.dim(3) != k) {
        throw DimensionMismatch("conv2d: weight shape inconsistent with input channels");
    }
    if (bias->value.numel() != co) throw DimensionMismatch("conv2d: bias size != out channels");
    const int ho = (h + 2 * pad - k) / stride + 1;
    const int wo = (wd + 2 * pad - k) / stride + 1;
    if (ho < 1 || wo < 1) throw DimensionMismatch("conv2d: output would be empty");

    const int patch = ci * k * k;
    const int cols_n = ho * wo;
    auto cols = std::make_shared<Tensor>(Tensor({patch, cols_n}));
    for (int c = 0; c < ci; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const int prow = (c * k + ky) * k + kx;
                double* dst = &cols->data[static_cast<std::size_t>(prow) * cols_n];
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        double v = 0.0;
                        if (iy >= 0 && iy < h && ix >= 0 && ix < wd) {
                            v = x->value.data[(static_cast<std::size_t>(c) * h + iy) * wd + ix];
                        }
                        dst[oy * wo + ox] = v;
                    }
                }
            }
        }
    }
    Tensor out({co, ho, wo});
    gemm(co, cols_n, patch, w->value.data.data(), cols->data.data(), out.data.data(), false);
    for (int oc = 0; oc < co; ++oc) {
        double* plane = &out.data[static_cast<std::size_t>(oc) * cols_n];
        const double b = bias->value[oc];
        for (int i = 0; i < cols_n; ++i) plane[i] += b;
    }
    return make_node(
        std::move(out), {x, w, bias},
        [x, w, bias, cols, ci, h, wd, co, k, ho, wo, stride, pad, patch, cols_n](Node& self) {
            // dW = dY * cols^T, dB = row sums, dX = col2im(W^T * dY)
            if (w->requires_grad) {
                w->ensure_grad();
                Tensor colst = transposed(*cols);
                gemm(co, patch, cols_n, self.grad.data.data(), colst.data.data(),
                     w->grad.data.data(), true);
            }
            if (bias->requires_grad) {
                bias->ensure_grad();
                for (int oc = 0; oc < co; ++oc) {
                    double s = 0.0;
                    const double* plane = &self.grad.data[static_cast<std::size_t>(oc) * cols_n];
                    for (int i = 0; i < cols_n; ++i) s += plane[i];
                    bias->grad[oc] += s;
                }
            }
            if (x->requires_grad) {
                x->ensure_grad();
                Tensor wt = transposed(Tensor::from({co, patch}, w->value.data));
                Tensor dcols({patch, cols_n});
                gemm(patch, cols_n, co, wt.data.data(), self.grad.data.data(),
                     dcols.data.data(), false);
                for (int c = 0; c < ci; ++c) {
                    for (int ky = 0; ky < k; ++ky) {
                        for (int kx = 0; kx < k; ++kx) {
                            const int prow = (c * k + ky) * k + kx;
                            const double* src = &dcols.data[static_cast<std::size_t>(prow) * cols_n];
                            for (int oy = 0; oy < ho; ++oy) {
                                const int iy = oy * stride + ky - pad;
                                if (iy < 0 || iy >= h) continue;
                                for (int ox = 0; ox < wo; ++ox) {
                                    const int ix = ox * stride + kx - pad;
                                    if (ix < 0 || ix >= wd) continue;
                                    x->grad.data[(static_cast<std::size_t>(c) * h + iy) * wd + ix] +=
                                        src[oy * wo + ox];
                                }
                            }
                        }
                    }
                }
            }
        });
}

NodePtr upsample_nearest2(const NodePtr& x) {
    if (x->value.ndim() != 3) throw DimensionMismatch("upsample_nearest2 expects {C,H,W}");
    const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
    Tensor out({c, h * 2, w * 2});
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < h * 2; ++y) {
            for (int xx = 0; xx < w * 2; ++xx) {
                out.data[(static_cast<std::size_t>(ch) * h * 2 + y) * w * 2 + xx] =
                    x->value.data[(static_cast<std::size_t>(ch) * h + y / 2) * w + xx / 2];
            }
        }
    }
    return make_node(std::move(out), {x}, [x, c, h, w](Node& self) {
        x->ensure_grad();
        for (int ch = 0; ch < c; ++ch) {
            for (int y = 0; y < h * 2; ++y) {
                for (int xx = 0; xx < w * 2; ++xx) {
                    x->grad.data[(static_cast<std::size_t>(ch) * h + y / 2) * w + xx / 2] +=
                        self.grad.data[(static_cast<std::size_t>(ch) * h * 2 + y) * w * 2 + xx];
                }
            }
        }
    });
}

NodePtr channel_mean(const NodePtr& x) {
    if (x->value.ndim() != 3) throw DimensionMismatch("channel_mean expects {C,H,W}");
    const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
    Tensor out({1, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (std::size_t i = 0; i < plane; ++i) {
        double s = 0.0;
        for (int ch = 0; ch < c; ++ch) s += x->value.data[ch * plane + i];
        out.data[i] = s / c;
    }
    return make_node(std::move(out), {x}, [x, c, plane](Node& self) {
        x->ensure_grad();
        for (std::size_t i = 0; i < plane; ++i) {
            const double g = self.grad.data[i] / c;
            for (int ch = 0; ch < c; ++ch) x->grad.data[ch * plane + i] += g;
        }
    });
}

namespace {

// Block boundary b(i) = floor(i * extent / g); handles extents not divisible
// by the grid.
inline int block_lo(int i, int extent, int g) {
    return static_cast<int>(static_cast<std::int64_t>(i) * extent / g);
}

}  // namespace

NodePtr pool_grid(const NodePtr& x, int g) {
    if (x->value.ndim() != 3 || x->value.dim(0) != 1) {
        throw DimensionMismatch("pool_grid expects {1,H,W}");
    }
    const int h = x->value.dim(1), w = x->value.dim(2);
    if (g < 1 || g > h || g > w) throw ResolutionMismatch("pool_grid: grid exceeds image size");
    Tensor out({g * g});
    std::vector<double> inv_count(static_cast<std::size_t>(g) * g, 0.0);
    for (int gy = 0; gy < g; ++gy) {
        const int y0 = block_lo(gy, h, g), y1 = block_lo(gy + 1, h, g);
        for (int gx = 0; gx < g; ++gx) {
            const int x0 = block_lo(gx, w, g), x1 = block_lo(gx + 1, w, g);
            double s = 0.0;
            for (int y = y0; y < y1; ++y)
                for (int xx = x0; xx < x1; ++xx) s += x->value.data[static_cast<std::size_t>(y) * w + xx];
            const int n = (y1 - y0) * (x1 - x0);
            out[gy * g + gx] = s / n;
            inv_count[static_cast<std::size_t>(gy) * g + gx] = 1.0 / n;
        }
    }
    return make_node(std::move(out), {x}, [x, g, h, w, inv_count](Node& self) {
        x->ensure_grad();
        for (int gy = 0; gy < g; ++gy) {
            const int y0 = block_lo(gy, h, g), y1 = block_lo(gy + 1, h, g);
            for (int gx = 0; gx < g; ++gx) {
                const int x0 = block_lo(gx, w, g), x1 = block_lo(gx + 1, w, g);
                const double g2 = self.grad[gy * g + gx] * inv_count[static_cast<std::size_t>(gy) * g + gx];
                for (int y = y0; y < y1; ++y)
                    for (int xx = x0; xx < x1; ++xx)
                        x->grad.data[static_cast<std::size_t>(y) * w + xx] += g2;
            }
        }
    });
}

NodePtr patch_stats(const NodePtr& x, int g) {
    if (x->value.ndim() != 3 || x->value.dim(0) != 1) {
        throw DimensionMismatch("patch_stats expects {1,H,W}");
    }
    const int h = x->value.dim(1), w = x->value.dim(2);
    if (h % g != 0 || w % g != 0) {
        throw ResolutionMismatch("patch_stats: grid must divide image size");
    }
    const int ph = h / g, pw = w / g;
    const int n = ph * pw;
    Tensor out({g * g, 3});
    for (int gy = 0; gy < g; ++gy) {
        for (int gx = 0; gx < g; ++gx) {
            double sum = 0.0, sq = 0.0, ag = 0.0;
            for (int y = 0; y < ph; ++y) {
                for (int xx = 0; xx < pw; ++xx) {
                    const double v = x->value.data[static_cast<std::size_t>(gy * ph + y) * w + gx * pw + xx];
                    sum += v;
                    sq += v * v;
                    if (xx + 1 < pw) {
                        ag += std::abs(x->value.data[static_cast<std::size_t>(gy * ph + y) * w + gx * pw + xx + 1] - v);
                    }
                    if (y + 1 < ph) {
                        ag += std::abs(x->value.data[static_cast<std::size_t>(gy * ph + y + 1) * w + gx * pw + xx] - v);
                    }
                }
            }
            const double mean = sum / n;
            out.at(gy * g + gx, 0) = mean;
            out.at(gy * g + gx, 1) = sq / n - mean * mean;
            out.at(gy * g + gx, 2) = ag / n;
        }
    }
    return make_node(std::move(out), {x}, [x, g, h, w, ph, pw, n](Node& self) {
        x->ensure_grad();
        auto px = [&](int gy, int gx, int y, int xx) -> double {
            return x->value.data[static_cast<std::size_t>(gy * ph + y) * w + gx * pw + xx];
        };
        auto gref = [&](int gy, int gx, int y, int xx) -> double& {
            return x->grad.data[static_cast<std::size_t>(gy * ph + y) * w + gx * pw + xx];
        };
        for (int gy = 0; gy < g; ++gy) {
            for (int gx = 0; gx < g; ++gx) {
                const int row = gy * g + gx;
                const double gm = self.grad.at(row, 0);
                const double gv = self.grad.at(row, 1);
                const double ga = self.grad.at(row, 2) / n;
                double mean = 0.0;
                for (int y = 0; y < ph; ++y)
                    for (int xx = 0; xx < pw; ++xx) mean += px(gy, gx, y, xx);
                mean /= n;
                for (int y = 0; y < ph; ++y) {
                    for (int xx = 0; xx < pw; ++xx) {
                        const double v = px(gy, gx, y, xx);
                        double d = gm / n + gv * 2.0 * (v - mean) / n;
                        if (xx + 1 < pw) {
                            const double diff = px(gy, gx, y, xx + 1) - v;
                            const double s = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
                            d -= ga * s;
                            gref(gy, gx, y, xx + 1) += ga * s;
                        }
                        if (y + 1 < ph) {
                            const double diff = px(gy, gx, y + 1, xx) - v;
                            const double s = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
                            d -= ga * s;
                            gref(gy, gx, y + 1, xx) += ga * s;
                        }
                        gref(gy, gx, y, xx) += d;
                    }
                }
            }
        }
    });
}

NodePtr crop_resize_nearest(const NodePtr& x, int x0, int y0, int x1, int y1, int out_res) {
    if (x->value.ndim() != 3 || x->value.dim(0) != 1) {
        throw DimensionMismatch("crop_resize_nearest expects {1,H,W}");
    }
    const int h = x->value.dim(1), w = x->value.dim(2);
    if (x0 < 0 || y0 < 0 || x1 > w || y1 > h || x1 - x0 < 1 || y1 - y0 < 1) {
        throw DegenerateCrop("crop rect outside image or smaller than one pixel");
    }
    const int cw = x1 - x0, ch = y1 - y0;
    Tensor out({1, out_res, out_res});
    auto src_index = [](int u, int out_n, int in_n, int lo) {
        int s = static_cast<int>((static_cast<std::int64_t>(u) * 2 + 1) * in_n / (2 * out_n));
        return lo + std::min(s, in_n - 1);
    };
    for (int v = 0; v < out_res; ++v) {
        const int sy = src_index(v, out_res, ch, y0);
        for (int u = 0; u < out_res; ++u) {
            const int sx = src_index(u, out_res, cw, x0);
            out.data[static_cast<std::size_t>(v) * out_res + u] =
                x->value.data[static_cast<std::size_t>(sy) * w + sx];
        }
    }
    return make_node(std::move(out), {x}, [x, x0, y0, cw, ch, out_res, w](Node& self) {
        x->ensure_grad();
        auto src_index = [](int u, int out_n, int in_n, int lo) {
            int s = static_cast<int>((static_cast<std::int64_t>(u) * 2 + 1) * in_n / (2 * out_n));
            return lo + std::min(s, in_n - 1);
        };
        for (int v = 0; v < out_res; ++v) {
            const int sy = src_index(v, out_res, ch, y0);
            for (int u = 0; u < out_res; ++u) {
                const int sx = src_index(u, out_res, cw, x0);
                x->grad.data[static_cast<std::size_t>(sy) * w + sx] +=
                    self.grad.data[static_cast<std::size_t>(v) * out_res + u];
            }
        }
    });
}

// ---------------------------------------------------------------------------

void backward(const NodePtr& root) {
    if (root->value.numel() != 1) throw DimensionMismatch("backward expects a scalar root");
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    struct Frame {
        Node* n;
        std::size_t next;
    };
    std::vector<Frame> stack{{root.get(), 0}};
    visited.insert(root.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->parents.size()) {
            Node* p = f.n->parents[f.next++].get();
            if (p->requires_grad && visited.insert(p).second) {
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad.data[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) {
            n->ensure_grad();
            n->backward_fn(*n);
        }
    }
}

Adam::Adam(std::vector<NodePtr> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(p->value.shape, 0.0);
        v_.emplace_back(p->value.shape, 0.0);
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) {
        p->ensure_grad();
        std::fill(p->grad.data.begin(), p->grad.data.end(), 0.0);
    }
}

void Adam::step(double grad_scale) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = *params_[i];
        p.ensure_grad();
        auto& m = m_[i].data;
        auto& v = v_[i].data;
        for (std::size_t j = 0; j < p.value.data.size(); ++j) {
            const double g = p.grad.data[j] * grad_scale;
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p.value.data[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

Tensor to_tensor(const RasterImage& img) {
    Tensor t({img.channels, img.height, img.width});
    const std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < img.channels; ++c) {
                t.data[c * plane + static_cast<std::size_t>(y) * img.width + x] =
                    static_cast<double>(img.at(x, y, c));
            }
        }
    }
    return t;
}

RasterImage to_raster(const Tensor& t) {
    if (t.ndim() != 3) throw DimensionMismatch("to_raster expects {C,H,W}");
    const int c = t.dim(0), h = t.dim(1), w = t.dim(2);
    if (c != 1 && c != 3) throw DimensionMismatch("to_raster supports 1 or 3 channels");
    RasterImage img(w, h, c);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int ch = 0; ch < c; ++ch) {
                img.at(x, y, ch) = static_cast<float>(
                    std::clamp(t.data[ch * plane + static_cast<std::size_t>(y) * w + x], 0.0, 1.0));
            }
        }
    }
    return img;
}

}  // namespace ssk::nn
