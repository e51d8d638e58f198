#pragma once

// Dense row-major matrices and a tape-based reverse-mode differentiator
// with the handful of operations an encoder-decoder Transformer needs.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mwp/random.hpp"

namespace mwp {

template <typename T>
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, T fill = T{0}) : rows(r), cols(c), data(r * c, fill) {}

    T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    T operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::span<T> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const T> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
    std::size_t size() const { return data.size(); }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    bool operator==(const Matrix&) const = default;
};

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

namespace kernels {

// C (n x m) += A (n x k) * B (k x m)
template <typename T>
void gemm_nn(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c) {
    for (std::size_t i = 0; i < a.rows; ++i) {
        T* ci = c.data.data() + i * c.cols;
        for (std::size_t p = 0; p < a.cols; ++p) {
            const T aip = a.data[i * a.cols + p];
            if (aip == T{0}) continue;
            const T* bp = b.data.data() + p * b.cols;
            for (std::size_t j = 0; j < b.cols; ++j) ci[j] += aip * bp[j];
        }
    }
}

// C (n x m) += A (n x k) * B^T, B is (m x k)
template <typename T>
void gemm_nt(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c) {
    for (std::size_t i = 0; i < a.rows; ++i) {
        const T* ai = a.data.data() + i * a.cols;
        for (std::size_t j = 0; j < b.rows; ++j) {
            const T* bj = b.data.data() + j * b.cols;
            T acc{0};
            for (std::size_t p = 0; p < a.cols; ++p) acc += ai[p] * bj[p];
            c.data[i * c.cols + j] += acc;
        }
    }
}

// C (k x m) += A^T * B, A is (n x k), B is (n x m)
template <typename T>
void gemm_tn(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c) {
    for (std::size_t i = 0; i < a.rows; ++i) {
        const T* ai = a.data.data() + i * a.cols;
        const T* bi = b.data.data() + i * b.cols;
        for (std::size_t p = 0; p < a.cols; ++p) {
            const T aip = ai[p];
            if (aip == T{0}) continue;
            T* cp = c.data.data() + p * c.cols;
            for (std::size_t j = 0; j < b.cols; ++j) cp[j] += aip * bi[j];
        }
    }
}

}  // namespace kernels

/// Handle to a node on a Graph tape.
struct Var {
    std::size_t id = 0;
};

/// Records operations as they execute; backward() replays them in reverse.
/// Parameter nodes alias caller-owned storage and accumulate into a
/// caller-owned gradient, so one set of gradients can collect several
/// graphs (one per example).
template <typename T>
class Graph {
public:
    explicit Graph(bool record = true) : record_(record) {}

    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Matrix<T> m) {
        Node n;
        n.own = std::move(m);
        return push(std::move(n));
    }

    Var parameter(const Matrix<T>& value, Matrix<T>* grad = nullptr) {
        Node n;
        n.external = &value;
        n.external_grad = grad;
        return push(std::move(n));
    }

    const Matrix<T>& value(Var v) const { return nodes_[v.id].val(); }
    const Matrix<T>& grad(Var v) const { return nodes_[v.id].grad_ref(); }
    std::size_t size() const { return nodes_.size(); }

    Var matmul(Var a, Var b) {
        const auto& A = value(a);
        const auto& B = value(b);
        if (A.cols != B.rows) throw ShapeError("matmul: inner dimensions differ");
        Matrix<T> c(A.rows, B.cols);
        kernels::gemm_nn(A, B, c);
        return record(std::move(c), [this, a, b](std::size_t self) {
            const auto& g = grad_of(self);
            if (wants(a)) kernels::gemm_nt(g, value(b), grad_of(a.id));
            if (wants(b)) kernels::gemm_tn(value(a), g, grad_of(b.id));
        }, {a, b});
    }

    /// a * b^T
    Var matmul_nt(Var a, Var b) {
        const auto& A = value(a);
        const auto& B = value(b);
        if (A.cols != B.cols) throw ShapeError("matmul_nt: inner dimensions differ");
        Matrix<T> c(A.rows, B.rows);
        kernels::gemm_nt(A, B, c);
        return record(std::move(c), [this, a, b](std::size_t self) {
            const auto& g = grad_of(self);
            if (wants(a)) kernels::gemm_nn(g, value(b), grad_of(a.id));
            if (wants(b)) kernels::gemm_tn(g, value(a), grad_of(b.id));
        }, {a, b});
    }

    Var add(Var a, Var b) {
        const auto& A = value(a);
        const auto& B = value(b);
        if (!A.same_shape(B)) throw ShapeError("add: shapes differ");
        Matrix<T> c = A;
        for (std::size_t i = 0; i < c.size(); ++i) c.data[i] += B.data[i];
        return record(std::move(c), [this, a, b](std::size_t self) {
            const auto& g = grad_of(self);
            for (Var v : {a, b})
                if (wants(v)) {
                    auto& gv = grad_of(v.id);
                    for (std::size_t i = 0; i < g.size(); ++i) gv.data[i] += g.data[i];
                }
        }, {a, b});
    }

    /// Adds a 1 x cols row vector to every row.
    Var add_row(Var a, Var bias) {
        const auto& A = value(a);
        const auto& b = value(bias);
        if (b.rows != 1 || b.cols != A.cols) throw ShapeError("add_row: bias must be 1 x cols");
        Matrix<T> c = A;
        for (std::size_t r = 0; r < c.rows; ++r)
            for (std::size_t j = 0; j < c.cols; ++j) c(r, j) += b.data[j];
        return record(std::move(c), [this, a, bias](std::size_t self) {
            const auto& g = grad_of(self);
            if (wants(a)) {
                auto& ga = grad_of(a.id);
                for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
            }
            if (wants(bias)) {
                auto& gb = grad_of(bias.id);
                for (std::size_t r = 0; r < g.rows; ++r)
                    for (std::size_t j = 0; j < g.cols; ++j) gb.data[j] += g(r, j);
            }
        }, {a, bias});
    }

    Var scale(Var a, T s) {
        Matrix<T> c = value(a);
        for (auto& x : c.data) x *= s;
        return record(std::move(c), [this, a, s](std::size_t self) {
            if (!wants(a)) return;
            const auto& g = grad_of(self);
            auto& ga = grad_of(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += s * g.data[i];
        }, {a});
    }

    Var relu(Var a) {
        Matrix<T> c = value(a);
        for (auto& x : c.data) x = x > T{0} ? x : T{0};
        return record(std::move(c), [this, a](std::size_t self) {
            if (!wants(a)) return;
            const auto& g = grad_of(self);
            const auto& x = value(a);
            auto& ga = grad_of(a.id);
            for (std::size_t i = 0; i < g.size(); ++i)
                if (x.data[i] > T{0}) ga.data[i] += g.data[i];
        }, {a});
    }

    /// Inverted dropout: kept units are scaled by 1/(1-rate).
    Var dropout(Var a, double rate, Rng& rng) {
        if (rate <= 0.0) return a;
        const auto& A = value(a);
        Matrix<T> mask(A.rows, A.cols);
        const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
        for (auto& m : mask.data) m = uniform01(rng) >= rate ? keep_scale : T{0};
        Matrix<T> c = A;
        for (std::size_t i = 0; i < c.size(); ++i) c.data[i] *= mask.data[i];
        return record(std::move(c), [this, a, mask = std::move(mask)](std::size_t self) {
            if (!wants(a)) return;
            const auto& g = grad_of(self);
            auto& ga = grad_of(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += mask.data[i] * g.data[i];
        }, {a});
    }

    /// Row-wise normalisation followed by elementwise gain and offset (1 x cols).
    Var layer_norm(Var a, Var gain, Var offset, T eps = T(1e-6)) {
        const auto& X = value(a);
        const auto& gm = value(gain);
        const auto& bt = value(offset);
        if (gm.cols != X.cols || bt.cols != X.cols) throw ShapeError("layer_norm: gain/offset width");
        const std::size_t n = X.cols;
        Matrix<T> xhat(X.rows, n);
        std::vector<T> inv_std(X.rows);
        Matrix<T> y(X.rows, n);
        for (std::size_t r = 0; r < X.rows; ++r) {
            T mean{0};
            for (std::size_t j = 0; j < n; ++j) mean += X(r, j);
            mean /= static_cast<T>(n);
            T var{0};
            for (std::size_t j = 0; j < n; ++j) var += (X(r, j) - mean) * (X(r, j) - mean);
            var /= static_cast<T>(n);
            inv_std[r] = T{1} / std::sqrt(var + eps);
            for (std::size_t j = 0; j < n; ++j) {
                xhat(r, j) = (X(r, j) - mean) * inv_std[r];
                y(r, j) = xhat(r, j) * gm.data[j] + bt.data[j];
            }
        }
        return record(std::move(y), [this, a, gain, offset, xhat = std::move(xhat), inv_std = std::move(inv_std)](std::size_t self) {
            const auto& g = grad_of(self);
            const auto& gm = value(gain);
            const std::size_t n = g.cols;
            if (wants(gain) || wants(offset)) {
                for (std::size_t r = 0; r < g.rows; ++r)
                    for (std::size_t j = 0; j < n; ++j) {
                        if (wants(gain)) grad_of(gain.id).data[j] += g(r, j) * xhat(r, j);
                        if (wants(offset)) grad_of(offset.id).data[j] += g(r, j);
                    }
            }
            if (!wants(a)) return;
            auto& ga = grad_of(a.id);
            std::vector<T> dxhat(n);
            for (std::size_t r = 0; r < g.rows; ++r) {
                T sum_d{0}, sum_dx{0};
                for (std::size_t j = 0; j < n; ++j) {
                    dxhat[j] = g(r, j) * gm.data[j];
                    sum_d += dxhat[j];
                    sum_dx += dxhat[j] * xhat(r, j);
                }
                const T inv_n = T{1} / static_cast<T>(n);
                for (std::size_t j = 0; j < n; ++j)
                    ga(r, j) += inv_std[r] * (dxhat[j] - inv_n * sum_d - xhat(r, j) * inv_n * sum_dx);
            }
        }, {a, gain, offset});
    }

    /// Softmax over each row restricted to entries where allowed(r, c) != 0;
    /// disallowed entries are exactly zero. A row with nothing allowed is all zero.
    Var masked_softmax(Var a, const std::vector<unsigned char>& allowed) {
        const auto& X = value(a);
        if (allowed.size() != X.size()) throw ShapeError("masked_softmax: mask size");
        Matrix<T> p(X.rows, X.cols);
        for (std::size_t r = 0; r < X.rows; ++r) {
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t j = 0; j < X.cols; ++j)
                if (allowed[r * X.cols + j]) mx = std::max(mx, X(r, j));
            if (mx == -std::numeric_limits<T>::infinity()) continue;
            T sum{0};
            for (std::size_t j = 0; j < X.cols; ++j)
                if (allowed[r * X.cols + j]) {
                    p(r, j) = std::exp(X(r, j) - mx);
                    sum += p(r, j);
                }
            for (std::size_t j = 0; j < X.cols; ++j) p(r, j) /= sum;
        }
        return record(std::move(p), [this, a](std::size_t self) {
            if (!wants(a)) return;
            const auto& g = grad_of(self);
            const auto& P = value(Var{self});
            auto& ga = grad_of(a.id);
            for (std::size_t r = 0; r < g.rows; ++r) {
                T dot{0};
                for (std::size_t j = 0; j < g.cols; ++j) dot += g(r, j) * P(r, j);
                for (std::size_t j = 0; j < g.cols; ++j) ga(r, j) += P(r, j) * (g(r, j) - dot);
            }
        }, {a});
    }

    Var slice_cols(Var a, std::size_t start, std::size_t count) {
        const auto& A = value(a);
        if (start + count > A.cols) throw ShapeError("slice_cols: out of range");
        Matrix<T> c(A.rows, count);
        for (std::size_t r = 0; r < A.rows; ++r)
            for (std::size_t j = 0; j < count; ++j) c(r, j) = A(r, start + j);
        return record(std::move(c), [this, a, start](std::size_t self) {
            if (!wants(a)) return;
            const auto& g = grad_of(self);
            auto& ga = grad_of(a.id);
            for (std::size_t r = 0; r < g.rows; ++r)
                for (std::size_t j = 0; j < g.cols; ++j) ga(r, start + j) += g(r, j);
        }, {a});
    }

    Var concat_cols(const std::vector<Var>& parts) {
        std::size_t rows = value(parts.front()).rows, cols = 0;
        for (Var p : parts) {
            if (value(p).rows != rows) throw ShapeError("concat_cols: row counts differ");
            cols += value(p).cols;
        }
        Matrix<T> c(rows, cols);
        std::size_t off = 0;
        for (Var p : parts) {
            const auto& P = value(p);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < P.cols; ++j) c(r, off + j) = P(r, j);
            off += P.cols;
        }
        return record(std::move(c), [this, parts](std::size_t self) {
            const auto& g = grad_of(self);
            std::size_t off = 0;
            for (Var p : parts) {
                const std::size_t w = value(p).cols;
                if (wants(p)) {
                    auto& gp = grad_of(p.id);
                    for (std::size_t r = 0; r < g.rows; ++r)
                        for (std::size_t j = 0; j < w; ++j) gp(r, j) += g(r, off + j);
                }
                off += w;
            }
        }, parts);
    }

    /// Row gather: out[i] = table[ids[i]].
    Var embedding(Var table, std::span<const std::int32_t> ids) {
        const auto& E = value(table);
        Matrix<T> c(ids.size(), E.cols);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= E.rows) throw ShapeError("embedding: id out of range");
            for (std::size_t j = 0; j < E.cols; ++j) c(i, j) = E(static_cast<std::size_t>(ids[i]), j);
        }
        std::vector<std::int32_t> idx(ids.begin(), ids.end());
        return record(std::move(c), [this, table, idx = std::move(idx)](std::size_t self) {
            if (!wants(table)) return;
            const auto& g = grad_of(self);
            auto& gt = grad_of(table.id);
            for (std::size_t i = 0; i < idx.size(); ++i)
                for (std::size_t j = 0; j < g.cols; ++j) gt(static_cast<std::size_t>(idx[i]), j) += g(i, j);
        }, {table});
    }

    /// Scalar sum over rows of weight[r] * -log softmax(logits[r])[target[r]].
    /// Rows with weight 0 contribute nothing.
    Var cross_entropy(Var logits, std::span<const std::int32_t> targets, std::span<const T> weights) {
        const auto& L = value(logits);
        if (targets.size() != L.rows || weights.size() != L.rows) throw ShapeError("cross_entropy: row count");
        Matrix<T> probs(L.rows, L.cols);
        T total{0};
        for (std::size_t r = 0; r < L.rows; ++r) {
            if (weights[r] == T{0}) continue;
            if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= L.cols)
                throw ShapeError("cross_entropy: target out of range");
            T mx = L(r, 0);
            for (std::size_t j = 1; j < L.cols; ++j) mx = std::max(mx, L(r, j));
            T sum{0};
            for (std::size_t j = 0; j < L.cols; ++j) {
                probs(r, j) = std::exp(L(r, j) - mx);
                sum += probs(r, j);
            }
            for (std::size_t j = 0; j < L.cols; ++j) probs(r, j) /= sum;
            const T log_p = L(r, static_cast<std::size_t>(targets[r])) - mx - std::log(sum);
            total += -weights[r] * log_p;
        }
        Matrix<T> out(1, 1, total);
        std::vector<std::int32_t> tgt(targets.begin(), targets.end());
        std::vector<T> w(weights.begin(), weights.end());
        return record(std::move(out), [this, logits, probs = std::move(probs), tgt = std::move(tgt), w = std::move(w)](std::size_t self) {
            if (!wants(logits)) return;
            const T g = grad_of(self).data[0];
            auto& gl = grad_of(logits.id);
            for (std::size_t r = 0; r < probs.rows; ++r) {
                if (w[r] == T{0}) continue;
                for (std::size_t j = 0; j < probs.cols; ++j) {
                    const T onehot = static_cast<std::int32_t>(j) == tgt[r] ? T{1} : T{0};
                    gl(r, j) += g * w[r] * (probs(r, j) - onehot);
                }
            }
        }, {logits});
    }

    /// Seeds d(root)/d(root) = 1 and propagates to every recorded node.
    void backward(Var root) {
        if (!record_) throw std::logic_error("backward on a non-recording graph");
        if (value(root).size() != 1) throw ShapeError("backward: root must be a scalar");
        for (auto& n : nodes_)
            if (!n.external_grad) n.own_grad = Matrix<T>(n.val().rows, n.val().cols);
        grad_of(root.id).data[0] += T{1};
        for (std::size_t i = nodes_.size(); i-- > 0;)
            if (nodes_[i].backward) nodes_[i].backward(i);
    }

private:
    struct Node {
        Matrix<T> own;
        const Matrix<T>* external = nullptr;
        Matrix<T> own_grad;
        Matrix<T>* external_grad = nullptr;
        std::function<void(std::size_t)> backward;
        bool needs_grad = false;

        const Matrix<T>& val() const { return external ? *external : own; }
        const Matrix<T>& grad_ref() const { return external_grad ? *external_grad : own_grad; }
    };

    Var push(Node n) {
        n.needs_grad = n.external != nullptr ? n.external_grad != nullptr : false;
        nodes_.push_back(std::move(n));
        return Var{nodes_.size() - 1};
    }

    bool wants(Var v) const { return nodes_[v.id].needs_grad; }

    Matrix<T>& grad_of(std::size_t id) {
        auto& n = nodes_[id];
        return n.external_grad ? *n.external_grad : n.own_grad;
    }

    template <typename Fn>
    Var record(Matrix<T> value, Fn&& fn, std::initializer_list<Var> inputs) {
        return record(std::move(value), std::forward<Fn>(fn), std::vector<Var>(inputs));
    }

    template <typename Fn>
    Var record(Matrix<T> value, Fn&& fn, const std::vector<Var>& inputs) {
        Node n;
        n.own = std::move(value);
        if (record_) {
            for (Var v : inputs) n.needs_grad = n.needs_grad || wants(v);
            if (n.needs_grad) n.backward = std::forward<Fn>(fn);
        }
        nodes_.push_back(std::move(n));
        return Var{nodes_.size() - 1};
    }

    bool record_;
    std::vector<Node> nodes_;
};

}  // namespace mwp
