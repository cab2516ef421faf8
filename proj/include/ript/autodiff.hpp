#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ript/common.hpp"

// Reverse-mode automatic differentiation over dense 2-D tensors. The op set
// is exactly what the encoder and trainer need; shapes are known statically
// so there is no broadcasting engine beyond row-vector bias addition.
namespace ript::ad {

template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> values;
    bool requires_grad = false;
    std::vector<T> grad;  // same length as values once populated

    Tensor() = default;
    Tensor(std::vector<int> s, std::vector<T> v) : shape(std::move(s)), values(std::move(v)) {}

    int64_t numel() const {
        int64_t n = 1;
        for (int d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }

    int rows() const { return shape.empty() ? 0 : shape[0]; }
    int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    T& at(int r, int c) { return values[static_cast<size_t>(r) * cols() + c]; }
    const T& at(int r, int c) const { return values[static_cast<size_t>(r) * cols() + c]; }

    void zero_grad() {
        if (requires_grad) grad.assign(values.size(), T(0));
    }
    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), T(0));
    }

    static Tensor zeros(std::vector<int> shape) {
        int64_t n = 1;
        for (int d : shape) n *= d;
        return Tensor(std::move(shape), std::vector<T>(static_cast<size_t>(n), T(0)));
    }
    static Tensor full(std::vector<int> shape, T v) {
        Tensor t = zeros(std::move(shape));
        std::fill(t.values.begin(), t.values.end(), v);
        return t;
    }
    static Tensor uniform(std::vector<int> shape, T lo, T hi, std::mt19937_64& rng) {
        Tensor t = zeros(std::move(shape));
        std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
        for (T& v : t.values) v = static_cast<T>(dist(rng));
        return t;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.requires_grad = false;
        out.values.resize(values.size());
        for (size_t i = 0; i < values.size(); ++i) out.values[i] = static_cast<U>(values[i]);
        return out;
    }
};

namespace detail {
template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename T>
inline T gauss_cdf(T x) {
    return T(0.5) * static_cast<T>(std::erfc(-static_cast<double>(x) / std::numbers::sqrt2));
}
template <typename T>
inline T gauss_pdf(T x) {
    constexpr double inv_sqrt_2pi = 0.3989422804014326779;
    return static_cast<T>(inv_sqrt_2pi * std::exp(-0.5 * static_cast<double>(x) * static_cast<double>(x)));
}
}  // namespace detail

// Records one forward pass; creation order is topological order. backward()
// walks the tape in reverse exactly once and accumulates into the grad of
// every Tensor registered via param() with requires_grad set. A graph serves
// a single training step and is then discarded.
template <typename T>
class Graph {
  public:
    struct Value {
        int id = -1;
        bool valid() const { return id >= 0; }
    };

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // ---- leaves -----------------------------------------------------------

    Value param(Tensor<T>& t) {
        check_2d(t.shape, "param");
        int id = new_node(t.shape[0], t.shape.size() < 2 ? 1 : t.shape[1]);
        nodes_[id].val = t.values;
        if (t.requires_grad) nodes_[id].param = &t;
        return Value{id};
    }

    Value constant(int rows, int cols, std::vector<T> data) {
        if (static_cast<int64_t>(data.size()) != int64_t(rows) * cols) {
            throw ArgumentError("constant: data size does not match shape");
        }
        int id = new_node(rows, cols);
        nodes_[id].val = std::move(data);
        return Value{id};
    }

    Value constant(const Tensor<T>& t) {
        check_2d(t.shape, "constant");
        return constant(t.rows(), t.cols(), t.values);
    }

    // ---- primitives -------------------------------------------------------

    Value matmul(Value a, Value b) {
        const Node& na = node(a);
        const Node& nb = node(b);
        if (na.cols != nb.rows) {
            throw ArgumentError("matmul: inner dims differ: " + shape_str(a) + " x " + shape_str(b));
        }
        int id = new_node(na.rows, nb.cols);
        {
            detail::ConstMatMap<T> A(na.val.data(), na.rows, na.cols);
            detail::ConstMatMap<T> B(nb.val.data(), nb.rows, nb.cols);
            detail::MatMap<T> C(nodes_[id].val.data(), na.rows, nb.cols);
            C.noalias() = A * B;
        }
        nodes_[id].back = [this, a, b, id]() {
            Node& out = nodes_[id];
            Node& pa = nodes_[a.id];
            Node& pb = nodes_[b.id];
            detail::ConstMatMap<T> dC(out.grad.data(), out.rows, out.cols);
            detail::ConstMatMap<T> A(pa.val.data(), pa.rows, pa.cols);
            detail::ConstMatMap<T> B(pb.val.data(), pb.rows, pb.cols);
            detail::MatMap<T>(pa.grad.data(), pa.rows, pa.cols).noalias() += dC * B.transpose();
            detail::MatMap<T>(pb.grad.data(), pb.rows, pb.cols).noalias() += A.transpose() * dC;
        };
        return Value{id};
    }

    // b must either match a's shape or be a [1, C] row broadcast over a's rows.
    Value add(Value a, Value b) { return add_sub(a, b, T(1)); }
    Value sub(Value a, Value b) { return add_sub(a, b, T(-1)); }

    Value mul(Value a, Value b) {
        const Node& na = node(a);
        const Node& nb = node(b);
        if (na.rows != nb.rows || na.cols != nb.cols) {
            throw ArgumentError("mul: shape mismatch: " + shape_str(a) + " vs " + shape_str(b));
        }
        int id = new_node(na.rows, na.cols);
        for (size_t i = 0; i < na.val.size(); ++i) nodes_[id].val[i] = na.val[i] * nb.val[i];
        nodes_[id].back = [this, a, b, id]() {
            Node& out = nodes_[id];
            Node& pa = nodes_[a.id];
            Node& pb = nodes_[b.id];
            for (size_t i = 0; i < out.grad.size(); ++i) {
                pa.grad[i] += out.grad[i] * pb.val[i];
                pb.grad[i] += out.grad[i] * pa.val[i];
            }
        };
        return Value{id};
    }

    Value scale(Value a, T s) {
        const Node& na = node(a);
        int id = new_node(na.rows, na.cols);
        for (size_t i = 0; i < na.val.size(); ++i) nodes_[id].val[i] = na.val[i] * s;
        nodes_[id].back = [this, a, id, s]() {
            Node& out = nodes_[id];
            Node& pa = nodes_[a.id];
            for (size_t i = 0; i < out.grad.size(); ++i) pa.grad[i] += out.grad[i] * s;
        };
        return Value{id};
    }

    Value relu(Value a) {
        const Node& na = node(a);
        int id = new_node(na.rows, na.cols);
        for (size_t i = 0; i < na.val.size(); ++i) nodes_[id].val[i] = std::max(na.val[i], T(0));
        nodes_[id].back = [this, a, id]() {
            Node& out = nodes_[id];
            Node& pa = nodes_[a.id];
            for (size_t i = 0; i < out.grad.size(); ++i) {
                if (pa.val[i] > T(0)) pa.grad[i] += out.grad[i];
            }
        };
        return Value{id};
    }

    // Exact Gaussian-CDF form x * Phi(x).
    Value gelu(Value a) {
        const Node& na = node(a);
        int id = new_node(na.rows, na.cols);
        for (size_t i = 0; i < na.val.size(); ++i) {
            nodes_[id].val[i] = na.val[i] * detail::gauss_cdf(na.val[i]);
        }
        nodes_[id].back = [this, a, id]() {
            Node& out = nodes_[id];
            Node& pa = nodes_[a.id];
            for (size_t i = 0; i < out.grad.size(); ++i) {
                T x = pa.val[i];
                pa.grad[i] += out.grad[i] * (detail::gauss_cdf(x) + x * detail::gauss_pdf(x));
            }
        };
        return Value{id};
    }

    Value exp(Value a) {
        const Node& na = node(a);
        int id = new_node(na.rows, na.cols);
        for (size_t i = 0; i < na.val.size(); ++i) {
            nodes_[id].val[i] = static_cast<T>(std::exp(static_cast<double>(na.val[i])));
        }
        nodes_[id].back = [this, a, id]() {
            Node& out = nodes_[id];
            Node& pa = nodes_[a.id];
            for (size_t i = 0; i < out.grad.size(); ++i) pa.grad[i] += out.grad[i] * out.val[i];
        };
        return Value{id};
    }

    // Natural log with the output clamped from below; clamped entries get
    // zero gradient. min_out = -inf yields the plain log.
    Value log(Value a, T min_out = -std::numeric_limits<T>::infinity()) {
        const Node& na = node(a);
        int id = new_node(na.rows, na.cols);
        std::vector<uint8_t> open(na.val.size());
        for (size_t i = 0; i < na.val.size(); ++i) {
            T y = static_cast<T>(std::log(static_cast<double>(na.val[i])));
            if (!(y > min_out)) {  // also catches NaN from negative input
                nodes_[id].val[i] = min_out;
                open[i] = 0;
            } else {
                nodes_[id].val[i] = y;
                open[i] = 1;
            }
        }
        nodes_[id].back = [this, a, id, open = std::move(open)]() {
            Node& out = nodes_[id];
            Node& pa = nodes_[a.id];
            for (size_t i = 0; i < out.grad.size(); ++i) {
                if (open[i]) pa.grad[i] += out.grad[i] / pa.val[i];
            }
        };
        return Value{id};
    }

    // Softmax across rows within consecutive groups of `group` rows,
    // independently per column. group == rows gives softmax over axis 0.
    Value softmax_groups(Value a, int group) {
        const Node& na = node(a);
        if (group < 1 || na.rows % group != 0) {
            throw ArgumentError("softmax_groups: rows " + std::to_string(na.rows) +
                                " not divisible by group " + std::to_string(group));
        }
        int id = new_node(na.rows, na.cols);
        Node& out = nodes_[id];
        const int cols = na.cols;
        for (int g0 = 0; g0 < na.rows; g0 += group) {
            for (int c = 0; c < cols; ++c) {
                T mx = na.val[idx(g0, c, cols)];
                for (int r = 1; r < group; ++r) mx = std::max(mx, na.val[idx(g0 + r, c, cols)]);
                T sum = T(0);
                for (int r = 0; r < group; ++r) {
                    T e = static_cast<T>(std::exp(static_cast<double>(na.val[idx(g0 + r, c, cols)] - mx)));
                    out.val[idx(g0 + r, c, cols)] = e;
                    sum += e;
                }
                for (int r = 0; r < group; ++r) out.val[idx(g0 + r, c, cols)] /= sum;
            }
        }
        out.back = [this, a, id, group]() {
            Node& o = nodes_[id];
            Node& pa = nodes_[a.id];
            const int cols = o.cols;
            for (int g0 = 0; g0 < o.rows; g0 += group) {
                for (int c = 0; c < cols; ++c) {
                    T dot = T(0);
                    for (int r = 0; r < group; ++r) {
                        size_t i = idx(g0 + r, c, cols);
                        dot += o.grad[i] * o.val[i];
                    }
                    for (int r = 0; r < group; ++r) {
                        size_t i = idx(g0 + r, c, cols);
                        pa.grad[i] += o.val[i] * (o.grad[i] - dot);
                    }
                }
            }
        };
        return Value{id};
    }

    // axis 0: across rows per column; axis 1: across columns per row.
    Value softmax(Value a, int axis) {
        const Node& na = node(a);
        if (axis == 0) return softmax_groups(a, na.rows);
        if (axis != 1) throw ArgumentError("softmax: axis must be 0 or 1");
        int id = new_node(na.rows, na.cols);
        Node& out = nodes_[id];
        const int cols = na.cols;
        for (int r = 0; r < na.rows; ++r) {
            T mx = na.val[idx(r, 0, cols)];
            for (int c = 1; c < cols; ++c) mx = std::max(mx, na.val[idx(r, c, cols)]);
            T sum = T(0);
            for (int c = 0; c < cols; ++c) {
                T e = static_cast<T>(std::exp(static_cast<double>(na.val[idx(r, c, cols)] - mx)));
                out.val[idx(r, c, cols)] = e;
                sum += e;
            }
            for (int c = 0; c < cols; ++c) out.val[idx(r, c, cols)] /= sum;
        }
        out.back = [this, a, id]() {
            Node& o = nodes_[id];
            Node& pa = nodes_[a.id];
            const int cols = o.cols;
            for (int r = 0; r < o.rows; ++r) {
                T dot = T(0);
                for (int c = 0; c < cols; ++c) {
                    size_t i = idx(r, c, cols);
                    dot += o.grad[i] * o.val[i];
                }
                for (int c = 0; c < cols; ++c) {
                    size_t i = idx(r, c, cols);
                    pa.grad[i] += o.val[i] * (o.grad[i] - dot);
                }
            }
        };
        return Value{id};
    }

    // Row-sum over consecutive groups of `group` rows: [R,C] -> [R/group, C].
    Value sum_groups(Value a, int group) { return reduce_groups(a, group, false); }
    Value mean_groups(Value a, int group) { return reduce_groups(a, group, true); }

    // axis 0: [R,C] -> [1,C]; axis 1: [R,C] -> [R,1].
    Value sum(Value a, int axis) { return reduce_axis(a, axis, false); }
    Value mean(Value a, int axis) { return reduce_axis(a, axis, true); }

    Value sum_all(Value a) {
        const Node& na = node(a);
        int id = new_node(1, 1);
        T s = T(0);
        for (T v : na.val) s += v;
        nodes_[id].val[0] = s;
        nodes_[id].back = [this, a, id]() {
            Node& out = nodes_[id];
            Node& pa = nodes_[a.id];
            for (size_t i = 0; i < pa.grad.size(); ++i) pa.grad[i] += out.grad[0];
        };
        return Value{id};
    }

    // Per-row L2 normalization (axis must be 1). An exactly-zero row maps to
    // a zero row, is flagged, and passes no gradient.
    Value l2_normalize(Value a, int axis) {
        if (axis != 1) throw ArgumentError("l2_normalize: only axis=1 is supported");
        const Node& na = node(a);
        int id = new_node(na.rows, na.cols);
        Node& out = nodes_[id];
        const int cols = na.cols;
        std::vector<T> norms(na.rows);
        for (int r = 0; r < na.rows; ++r) {
            T s = T(0);
            for (int c = 0; c < cols; ++c) {
                T v = na.val[idx(r, c, cols)];
                s += v * v;
            }
            T n = static_cast<T>(std::sqrt(static_cast<double>(s)));
            norms[r] = n;
            if (n == T(0)) {
                zero_l2_row_ = true;
                for (int c = 0; c < cols; ++c) out.val[idx(r, c, cols)] = T(0);
            } else {
                for (int c = 0; c < cols; ++c) out.val[idx(r, c, cols)] = na.val[idx(r, c, cols)] / n;
            }
        }
        out.back = [this, a, id, norms = std::move(norms)]() {
            Node& o = nodes_[id];
            Node& pa = nodes_[a.id];
            const int cols = o.cols;
            for (int r = 0; r < o.rows; ++r) {
                if (norms[r] == T(0)) continue;
                T dot = T(0);
                for (int c = 0; c < cols; ++c) {
                    size_t i = idx(r, c, cols);
                    dot += o.grad[i] * o.val[i];
                }
                for (int c = 0; c < cols; ++c) {
                    size_t i = idx(r, c, cols);
                    pa.grad[i] += (o.grad[i] - o.val[i] * dot) / norms[r];
                }
            }
        };
        return Value{id};
    }

    Value concat_rows(std::span<const Value> parts) {
        if (parts.empty()) throw ArgumentError("concat_rows: no inputs");
        int cols = node(parts[0]).cols;
        int rows = 0;
        for (Value v : parts) {
            if (node(v).cols != cols) throw ArgumentError("concat_rows: column mismatch");
            rows += node(v).rows;
        }
        int id = new_node(rows, cols);
        int off = 0;
        for (Value v : parts) {
            const Node& nv = node(v);
            std::copy(nv.val.begin(), nv.val.end(),
                      nodes_[id].val.begin() + static_cast<size_t>(off) * cols);
            off += nv.rows;
        }
        std::vector<Value> saved(parts.begin(), parts.end());
        nodes_[id].back = [this, id, saved = std::move(saved)]() {
            Node& out = nodes_[id];
            int off2 = 0;
            for (Value v : saved) {
                Node& pv = nodes_[v.id];
                const size_t base = static_cast<size_t>(off2) * out.cols;
                for (size_t i = 0; i < pv.grad.size(); ++i) pv.grad[i] += out.grad[base + i];
                off2 += pv.rows;
            }
        };
        return Value{id};
    }

    // Row gather; duplicate indices are allowed and accumulate in backward.
    Value gather_rows(Value a, std::vector<int> indices) {
        const Node& na = node(a);
        for (int i : indices) {
            if (i < 0 || i >= na.rows) throw ArgumentError("gather_rows: index out of range");
        }
        int id = new_node(static_cast<int>(indices.size()), na.cols);
        const int cols = na.cols;
        for (size_t r = 0; r < indices.size(); ++r) {
            std::copy_n(na.val.begin() + static_cast<size_t>(indices[r]) * cols, cols,
                        nodes_[id].val.begin() + r * cols);
        }
        nodes_[id].back = [this, a, id, indices = std::move(indices)]() {
            Node& out = nodes_[id];
            Node& pa = nodes_[a.id];
            const int cols2 = out.cols;
            for (size_t r = 0; r < indices.size(); ++r) {
                const size_t src = r * cols2;
                const size_t dst = static_cast<size_t>(indices[r]) * cols2;
                for (int c = 0; c < cols2; ++c) pa.grad[dst + c] += out.grad[src + c];
            }
        };
        return Value{id};
    }

    // Batch normalization over all rows per channel. gamma/beta are [1,C]
    // graph values; running stats are plain buffers updated only in train
    // mode (momentum 0.1, unbiased variance) and read in eval mode.
    Value batchnorm(Value x, Value gamma, Value beta, Tensor<T>& running_mean,
                    Tensor<T>& running_var, bool train, T momentum = T(0.1), T eps = T(1e-5)) {
        const Node& nx = node(x);
        const int R = nx.rows, C = nx.cols;
        if (node(gamma).cols != C || node(gamma).rows != 1 || node(beta).cols != C ||
            node(beta).rows != 1) {
            throw ArgumentError("batchnorm: gamma/beta must be [1,C]");
        }
        if (static_cast<int>(running_mean.values.size()) != C ||
            static_cast<int>(running_var.values.size()) != C) {
            throw ArgumentError("batchnorm: running stats must have C entries");
        }
        int id = new_node(R, C);
        Node& out = nodes_[id];
        const Node& ng = node(gamma);
        const Node& nb = node(beta);

        if (train) {
            std::vector<T> mean(C, T(0)), var(C, T(0)), inv_std(C);
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < C; ++c) mean[c] += nx.val[idx(r, c, C)];
            for (int c = 0; c < C; ++c) mean[c] /= static_cast<T>(R);
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < C; ++c) {
                    T d = nx.val[idx(r, c, C)] - mean[c];
                    var[c] += d * d;
                }
            for (int c = 0; c < C; ++c) var[c] /= static_cast<T>(R);
            for (int c = 0; c < C; ++c) {
                inv_std[c] = T(1) / static_cast<T>(std::sqrt(static_cast<double>(var[c] + eps)));
            }
            std::vector<T> xhat(static_cast<size_t>(R) * C);
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < C; ++c) {
                    size_t i = idx(r, c, C);
                    xhat[i] = (nx.val[i] - mean[c]) * inv_std[c];
                    out.val[i] = ng.val[c] * xhat[i] + nb.val[c];
                }
            const T unbias = R > 1 ? static_cast<T>(R) / static_cast<T>(R - 1) : T(1);
            for (int c = 0; c < C; ++c) {
                running_mean.values[c] = (T(1) - momentum) * running_mean.values[c] + momentum * mean[c];
                running_var.values[c] =
                    (T(1) - momentum) * running_var.values[c] + momentum * var[c] * unbias;
            }
            out.back = [this, x, gamma, beta, id, inv_std = std::move(inv_std),
                        xhat = std::move(xhat)]() {
                Node& o = nodes_[id];
                Node& px = nodes_[x.id];
                Node& pg = nodes_[gamma.id];
                Node& pb = nodes_[beta.id];
                const int R2 = o.rows, C2 = o.cols;
                for (int c = 0; c < C2; ++c) {
                    T sum_dy = T(0), sum_dy_xhat = T(0);
                    for (int r = 0; r < R2; ++r) {
                        size_t i = idx(r, c, C2);
                        sum_dy += o.grad[i];
                        sum_dy_xhat += o.grad[i] * xhat[i];
                    }
                    pg.grad[c] += sum_dy_xhat;
                    pb.grad[c] += sum_dy;
                    const T g = pg.val[c];
                    const T mean_dy = sum_dy / static_cast<T>(R2);
                    const T mean_dy_xhat = sum_dy_xhat / static_cast<T>(R2);
                    for (int r = 0; r < R2; ++r) {
                        size_t i = idx(r, c, C2);
                        px.grad[i] += g * inv_std[c] * (o.grad[i] - mean_dy - xhat[i] * mean_dy_xhat);
                    }
                }
            };
        } else {
            std::vector<T> inv_std(C);
            for (int c = 0; c < C; ++c) {
                inv_std[c] =
                    T(1) / static_cast<T>(std::sqrt(static_cast<double>(running_var.values[c] + eps)));
            }
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < C; ++c) {
                    size_t i = idx(r, c, C);
                    out.val[i] = ng.val[c] * (nx.val[i] - running_mean.values[c]) * inv_std[c] +
                                 nb.val[c];
                }
            std::vector<T> rm = running_mean.values;
            out.back = [this, x, gamma, beta, id, inv_std = std::move(inv_std),
                        rm = std::move(rm)]() {
                Node& o = nodes_[id];
                Node& px = nodes_[x.id];
                Node& pg = nodes_[gamma.id];
                Node& pb = nodes_[beta.id];
                const int R2 = o.rows, C2 = o.cols;
                for (int c = 0; c < C2; ++c) {
                    for (int r = 0; r < R2; ++r) {
                        size_t i = idx(r, c, C2);
                        px.grad[i] += o.grad[i] * pg.val[c] * inv_std[c];
                        pg.grad[c] += o.grad[i] * (px.val[i] - rm[c]) * inv_std[c];
                        pb.grad[c] += o.grad[i];
                    }
                }
            };
        }
        return Value{id};
    }

    // ---- access & backward -------------------------------------------------

    const std::vector<T>& values(Value v) const { return node(v).val; }
    std::pair<int, int> shape(Value v) const { return {node(v).rows, node(v).cols}; }
    bool saw_zero_l2_row() const { return zero_l2_row_; }

    // Exact reverse-mode gradients for a scalar loss. Populates the grad of
    // every requires_grad parameter encountered; the graph is consumed.
    void backward(Value loss) {
        const Node& nl = node(loss);
        if (nl.rows != 1 || nl.cols != 1) {
            throw ArgumentError("backward: loss must be scalar, got " + shape_str(loss));
        }
        if (consumed_) throw ArgumentError("backward: graph already consumed");
        consumed_ = true;
        for (Node& n : nodes_) n.grad.assign(n.val.size(), T(0));
        nodes_[loss.id].grad[0] = T(1);
        for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
            if (nodes_[i].back) nodes_[i].back();
        }
        for (Node& n : nodes_) {
            if (n.param != nullptr) {
                n.param->ensure_grad();
                for (size_t i = 0; i < n.grad.size(); ++i) n.param->grad[i] += n.grad[i];
            }
        }
    }

  private:
    struct Node {
        int rows = 0, cols = 0;
        std::vector<T> val;
        std::vector<T> grad;
        std::function<void()> back;   // empty for leaves
        Tensor<T>* param = nullptr;
    };

    static size_t idx(int r, int c, int cols) { return static_cast<size_t>(r) * cols + c; }

    static void check_2d(const std::vector<int>& shape, const char* op) {
        if (shape.empty() || shape.size() > 2) {
            throw ArgumentError(std::string(op) + ": graph values must be 1-D or 2-D");
        }
    }

    int new_node(int rows, int cols) {
        Node n;
        n.rows = rows;
        n.cols = cols;
        n.val.assign(static_cast<size_t>(rows) * cols, T(0));
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    const Node& node(Value v) const {
        if (!v.valid() || v.id >= static_cast<int>(nodes_.size())) {
            throw ArgumentError("invalid graph value");
        }
        return nodes_[v.id];
    }

    std::string shape_str(Value v) const {
        const Node& n = node(v);
        return "[" + std::to_string(n.rows) + "," + std::to_string(n.cols) + "]";
    }

    Value add_sub(Value a, Value b, T sign) {
        const Node& na = node(a);
        const Node& nb = node(b);
        const bool broadcast = nb.rows == 1 && na.rows != 1 && nb.cols == na.cols;
        if (!broadcast && (na.rows != nb.rows || na.cols != nb.cols)) {
            throw ArgumentError("add/sub: shape mismatch: " + shape_str(a) + " vs " + shape_str(b));
        }
        int id = new_node(na.rows, na.cols);
        const int cols = na.cols;
        for (int r = 0; r < na.rows; ++r)
            for (int c = 0; c < cols; ++c) {
                size_t i = idx(r, c, cols);
                nodes_[id].val[i] = na.val[i] + sign * nb.val[broadcast ? idx(0, c, cols) : i];
            }
        nodes_[id].back = [this, a, b, id, sign, broadcast]() {
            Node& out = nodes_[id];
            Node& pa = nodes_[a.id];
            Node& pb = nodes_[b.id];
            const int cols2 = out.cols;
            for (size_t i = 0; i < out.grad.size(); ++i) pa.grad[i] += out.grad[i];
            if (broadcast) {
                for (int r = 0; r < out.rows; ++r)
                    for (int c = 0; c < cols2; ++c) pb.grad[c] += sign * out.grad[idx(r, c, cols2)];
            } else {
                for (size_t i = 0; i < out.grad.size(); ++i) pb.grad[i] += sign * out.grad[i];
            }
        };
        return Value{id};
    }

    Value reduce_groups(Value a, int group, bool mean) {
        const Node& na = node(a);
        if (group < 1 || na.rows % group != 0) {
            throw ArgumentError("sum/mean_groups: rows " + std::to_string(na.rows) +
                                " not divisible by group " + std::to_string(group));
        }
        const int out_rows = na.rows / group;
        const int cols = na.cols;
        int id = new_node(out_rows, cols);
        const T w = mean ? T(1) / static_cast<T>(group) : T(1);
        for (int q = 0; q < out_rows; ++q)
            for (int r = 0; r < group; ++r)
                for (int c = 0; c < cols; ++c) {
                    nodes_[id].val[idx(q, c, cols)] += w * na.val[idx(q * group + r, c, cols)];
                }
        nodes_[id].back = [this, a, id, group, w]() {
            Node& out = nodes_[id];
            Node& pa = nodes_[a.id];
            const int cols2 = out.cols;
            for (int q = 0; q < out.rows; ++q)
                for (int r = 0; r < group; ++r)
                    for (int c = 0; c < cols2; ++c) {
                        pa.grad[idx(q * group + r, c, cols2)] += w * out.grad[idx(q, c, cols2)];
                    }
        };
        return Value{id};
    }

    Value reduce_axis(Value a, int axis, bool mean) {
        const Node& na = node(a);
        if (axis == 0) {
            Value grouped = reduce_groups(a, na.rows, mean);
            return grouped;
        }
        if (axis != 1) throw ArgumentError("sum/mean: axis must be 0 or 1");
        const int cols = na.cols;
        int id = new_node(na.rows, 1);
        const T w = mean ? T(1) / static_cast<T>(cols) : T(1);
        for (int r = 0; r < na.rows; ++r) {
            T s = T(0);
            for (int c = 0; c < cols; ++c) s += na.val[idx(r, c, cols)];
            nodes_[id].val[r] = w * s;
        }
        nodes_[id].back = [this, a, id, w]() {
            Node& out = nodes_[id];
            Node& pa = nodes_[a.id];
            const int cols2 = nodes_[a.id].cols;
            for (int r = 0; r < out.rows; ++r)
                for (int c = 0; c < cols2; ++c) pa.grad[idx(r, c, cols2)] += w * out.grad[r];
        };
        return Value{id};
    }

    std::deque<Node> nodes_;
    bool zero_l2_row_ = false;
    bool consumed_ = false;
};

// ---- optimizer --------------------------------------------------------------

template <typename T>
struct AdamState {
    std::vector<T> m, v;
    int64_t t = 0;
};

// Standard Adam with bias correction. Reads param.grad; an empty grad is
// treated as all zeros.
template <typename T>
void adam_step(Tensor<T>& param, AdamState<T>& state, T lr, T beta1 = T(0.9),
               T beta2 = T(0.999), T eps = T(1e-8)) {
    const size_t n = param.values.size();
    if (!param.grad.empty() && param.grad.size() != n) {
        throw ArgumentError("adam_step: grad size mismatch");
    }
    if (state.m.size() != n) state.m.assign(n, T(0));
    if (state.v.size() != n) state.v.assign(n, T(0));
    state.t += 1;
    const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta1), static_cast<double>(state.t)));
    const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta2), static_cast<double>(state.t)));
    for (size_t i = 0; i < n; ++i) {
        const T g = param.grad.empty() ? T(0) : param.grad[i];
        state.m[i] = beta1 * state.m[i] + (T(1) - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (T(1) - beta2) * g * g;
        const T mhat = state.m[i] / bc1;
        const T vhat = state.v[i] / bc2;
        param.values[i] -= lr * mhat / (static_cast<T>(std::sqrt(static_cast<double>(vhat))) + eps);
    }
}

}  // namespace ript::ad
