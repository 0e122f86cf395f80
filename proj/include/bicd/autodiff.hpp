#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "bicd/linalg.hpp"
#include "bicd/tensor.hpp"

namespace bicd {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;
};

/// Reverse-mode gradient tape. Nodes are appended in evaluation order, so the
/// node vector is already a topological order. Single-threaded; run one tape
/// per worker.
class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t)>;

    /// Trainable leaf; receives a gradient.
    Var param(Tensor v) { return push(std::move(v), true, {}); }

    /// Constant leaf; never receives a gradient.
    Var constant(Tensor v) { return push(std::move(v), false, {}); }

    /// Records an op output. requires_grad is inherited from the inputs.
    Var record(Tensor v, std::initializer_list<Var> inputs, Backward bw) {
        bool rg = false;
        for (const auto& in : inputs) rg = rg || nodes_[in.id].requires_grad;
        return push(std::move(v), rg, rg ? std::move(bw) : Backward{});
    }

    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

    /// Gradient of the last backward() target. Zeros for constants, for
    /// unreachable nodes, and before any backward pass.
    Tensor grad(const Var& v) const {
        const auto& n = nodes_[v.id];
        if (n.grad.size() == 0) return Tensor(n.value.shape(), 0.0);
        return n.grad;
    }

    /// Mutable gradient buffer for use inside op adjoints.
    Tensor& grad_buffer(std::size_t id) {
        auto& n = nodes_[id];
        if (n.grad.size() == 0) n.grad = Tensor(n.value.shape(), 0.0);
        return n.grad;
    }

    /// Accumulates d loss / d node for every node reachable from loss.
    void backward(const Var& loss) {
        if (loss.tape != this) throw ContractError("backward: loss is not recorded on this tape");
        if (nodes_[loss.id].value.size() != 1)
            throw ContractError("backward: loss must be scalar, got shape " +
                                shape_str(nodes_[loss.id].value.shape()));
        for (auto& n : nodes_) n.grad = Tensor();
        grad_buffer(loss.id)[0] = 1.0;
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            auto& n = nodes_[i];
            if (!n.requires_grad || !n.backward || n.grad.size() == 0) continue;
            n.backward(*this, i);
        }
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        Backward backward;
    };

    Var push(Tensor v, bool rg, Backward bw) {
        nodes_.push_back(Node{std::move(v), Tensor(), rg, std::move(bw)});
        return Var{this, nodes_.size() - 1};
    }

    std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(id); }
inline bool Var::requires_grad() const { return tape->requires_grad(id); }

namespace detail {

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + " shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
}

inline void require_matrix(const Var& a, const char* op) {
    if (a.value().rank() != 2)
        throw DimensionError(std::string(op) + " needs a matrix, got " + shape_str(a.shape()));
}

// grad(dst) += scale * src, only if dst tracks gradients.
inline void accumulate(Tape& t, const Var& dst, const Tensor& src, double scale = 1.0) {
    if (!t.requires_grad(dst.id)) return;
    auto& g = t.grad_buffer(dst.id);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += scale * src[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(const Var& a, const Var& b) {
    detail::require_matrix(a, "matmul");
    detail::require_matrix(b, "matmul");
    Tensor out = matmul_plain(a.value(), b.value());
    return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_buffer(self);
        const Tensor& av = a.value();
        const Tensor& bv = b.value();
        const std::size_t m = av.rows(), k = av.cols(), p = bv.cols();
        if (t.requires_grad(a.id)) {
            auto& ga = t.grad_buffer(a.id);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < p; ++j) {
                    const double gij = g(i, j);
                    if (gij == 0.0) continue;
                    for (std::size_t r = 0; r < k; ++r) ga(i, r) += gij * bv(r, j);
                }
        }
        if (t.requires_grad(b.id)) {
            auto& gb = t.grad_buffer(b.id);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t r = 0; r < k; ++r) {
                    const double air = av(i, r);
                    if (air == 0.0) continue;
                    for (std::size_t j = 0; j < p; ++j) gb(r, j) += air * g(i, j);
                }
        }
    });
}

/// Solves w * y = rhs with w unit lower triangular, by forward substitution.
/// Only the strictly-lower part of w receives gradient.
inline Var unit_lt_solve(const Var& w, const Var& rhs) {
    Tensor y = forward_substitute(w.value(), rhs.value());
    return w.tape->record(std::move(y), {w, rhs}, [w, rhs](Tape& t, std::size_t self) {
        // y = w^{-1} r  =>  dr = w^{-T} g,  dw = -dr y^T (strictly lower part)
        const Tensor dr = backward_substitute_transposed(w.value(), t.grad_buffer(self));
        detail::accumulate(t, rhs, dr);
        if (t.requires_grad(w.id)) {
            const Tensor& y = t.value(self);
            auto& gw = t.grad_buffer(w.id);
            const std::size_t n = y.rows(), d = y.cols();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < i; ++j) {
                    double s = 0.0;
                    for (std::size_t c = 0; c < d; ++c) s += dr(i, c) * y(j, c);
                    gw(i, j) -= s;
                }
        }
    });
}

/// out(i, j) = scale / n * sum_s <q_s,i , k_s,j> where q and k stack n blocks
/// of N rows each. With n = 1 this is scale * q k^T.
inline Var pooled_gram(const Var& q, const Var& k, std::size_t blocks, double scale) {
    detail::require_matrix(q, "pooled_gram");
    detail::require_same_shape(q, k, "pooled_gram");
    const Tensor& qv = q.value();
    const Tensor& kv = k.value();
    if (blocks == 0 || qv.rows() % blocks != 0)
        throw DimensionError("pooled_gram: " + std::to_string(qv.rows()) + " rows not divisible into " +
                             std::to_string(blocks) + " blocks");
    const std::size_t n = qv.rows() / blocks, h = qv.cols();
    const double c = scale / static_cast<double>(blocks);
    Tensor out = Tensor::matrix(n, n);
    for (std::size_t s = 0; s < blocks; ++s)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t x = 0; x < h; ++x) acc += qv(s * n + i, x) * kv(s * n + j, x);
                out(i, j) += c * acc;
            }
    return q.tape->record(std::move(out), {q, k}, [q, k, blocks, n, h, c](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_buffer(self);
        const Tensor& qv = q.value();
        const Tensor& kv = k.value();
        const bool gq = t.requires_grad(q.id), gk = t.requires_grad(k.id);
        for (std::size_t s = 0; s < blocks; ++s)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const double gij = c * g(i, j);
                    if (gij == 0.0) continue;
                    for (std::size_t x = 0; x < h; ++x) {
                        if (gq) t.grad_buffer(q.id)(s * n + i, x) += gij * kv(s * n + j, x);
                        if (gk) t.grad_buffer(k.id)(s * n + j, x) += gij * qv(s * n + i, x);
                    }
                }
    });
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Var add(const Var& a, const Var& b) {
    detail::require_same_shape(a, b, "add");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
        detail::accumulate(t, a, t.grad_buffer(self));
        detail::accumulate(t, b, t.grad_buffer(self));
    });
}

inline Var sub(const Var& a, const Var& b) {
    detail::require_same_shape(a, b, "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
        detail::accumulate(t, a, t.grad_buffer(self));
        detail::accumulate(t, b, t.grad_buffer(self), -1.0);
    });
}

/// Hadamard product.
inline Var mul(const Var& a, const Var& b) {
    detail::require_same_shape(a, b, "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_buffer(self);
        if (t.requires_grad(a.id)) {
            auto& ga = t.grad_buffer(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.value()[i];
        }
        if (t.requires_grad(b.id)) {
            auto& gb = t.grad_buffer(b.id);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.value()[i];
        }
    });
}

inline Var scale(const Var& a, double s) {
    Tensor out = a.value();
    for (auto& v : out.storage()) v *= s;
    return a.tape->record(std::move(out), {a}, [a, s](Tape& t, std::size_t self) {
        detail::accumulate(t, a, t.grad_buffer(self), s);
    });
}

inline Var add_scalar(const Var& a, double s) {
    Tensor out = a.value();
    for (auto& v : out.storage()) v += s;
    return a.tape->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
        detail::accumulate(t, a, t.grad_buffer(self));
    });
}

/// Adds the single entry of s to every entry of a.
inline Var add_scalar(const Var& a, const Var& s) {
    if (s.value().size() != 1) throw DimensionError("add_scalar: expected a scalar, got " + shape_str(s.shape()));
    Tensor out = a.value();
    for (auto& v : out.storage()) v += s.value()[0];
    return a.tape->record(std::move(out), {a, s}, [a, s](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_buffer(self);
        detail::accumulate(t, a, g);
        if (t.requires_grad(s.id)) t.grad_buffer(s.id)[0] += g.sum();
    });
}

/// Adds a 1 x C row vector to every row of an R x C matrix.
inline Var add_row(const Var& a, const Var& row) {
    detail::require_matrix(a, "add_row");
    const Tensor& rv = row.value();
    if (rv.size() != a.value().cols())
        throw DimensionError("add_row shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(rv.shape()));
    Tensor out = a.value();
    const std::size_t r = out.rows(), c = out.cols();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out(i, j) += rv[j];
    return a.tape->record(std::move(out), {a, row}, [a, row, r, c](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_buffer(self);
        detail::accumulate(t, a, g);
        if (t.requires_grad(row.id)) {
            auto& gr = t.grad_buffer(row.id);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gr[j] += g(i, j);
        }
    });
}

/// Scales row i of x (R x C) by w[i] (w has R entries).
inline Var row_scale(const Var& w, const Var& x) {
    detail::require_matrix(x, "row_scale");
    if (w.value().size() != x.value().rows())
        throw DimensionError("row_scale shape mismatch " + shape_str(w.shape()) + " vs " + shape_str(x.shape()));
    Tensor out = x.value();
    const std::size_t r = out.rows(), c = out.cols();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out(i, j) *= w.value()[i];
    return x.tape->record(std::move(out), {w, x}, [w, x, r, c](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_buffer(self);
        if (t.requires_grad(w.id)) {
            auto& gw = t.grad_buffer(w.id);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gw[i] += g(i, j) * x.value()(i, j);
        }
        if (t.requires_grad(x.id)) {
            auto& gx = t.grad_buffer(x.id);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gx(i, j) += g(i, j) * w.value()[i];
        }
    });
}

/// Divides every entry of a by the single entry of s.
inline Var div_by_scalar(const Var& a, const Var& s) {
    if (s.value().size() != 1) throw DimensionError("div_by_scalar: divisor must be scalar");
    const double sv = s.value()[0];
    Tensor out = a.value();
    for (auto& v : out.storage()) v /= sv;
    return a.tape->record(std::move(out), {a, s}, [a, s, sv](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_buffer(self);
        detail::accumulate(t, a, g, 1.0 / sv);
        if (t.requires_grad(s.id)) {
            double acc = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * a.value()[i];
            t.grad_buffer(s.id)[0] -= acc / (sv * sv);
        }
    });
}

/// Column concatenation of two matrices with equal row counts.
inline Var concat_cols(const Var& a, const Var& b) {
    detail::require_matrix(a, "concat_cols");
    detail::require_matrix(b, "concat_cols");
    if (a.value().rows() != b.value().rows())
        throw DimensionError("concat_cols row mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const std::size_t r = a.value().rows(), ca = a.value().cols(), cb = b.value().cols();
    Tensor out = Tensor::matrix(r, ca + cb);
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < ca; ++j) out(i, j) = a.value()(i, j);
        for (std::size_t j = 0; j < cb; ++j) out(i, ca + j) = b.value()(i, j);
    }
    return a.tape->record(std::move(out), {a, b}, [a, b, r, ca, cb](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_buffer(self);
        if (t.requires_grad(a.id)) {
            auto& ga = t.grad_buffer(a.id);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < ca; ++j) ga(i, j) += g(i, j);
        }
        if (t.requires_grad(b.id)) {
            auto& gb = t.grad_buffer(b.id);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < cb; ++j) gb(i, j) += g(i, ca + j);
        }
    });
}

// ---------------------------------------------------------------------------
// Unary functions

enum class Unary { elu, sigmoid, tanh, exp, log, relu };

inline const char* unary_name(Unary op) {
    switch (op) {
        case Unary::elu: return "elu";
        case Unary::sigmoid: return "sigmoid";
        case Unary::tanh: return "tanh";
        case Unary::exp: return "exp";
        case Unary::log: return "log";
        case Unary::relu: return "relu";
    }
    return "?";
}

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

/// Entrywise function. eLU uses alpha = 1.
inline Var elementwise(Unary op, const Var& x) {
    Tensor out = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = out[i];
        switch (op) {
            case Unary::elu: out[i] = v > 0.0 ? v : std::expm1(v); break;
            case Unary::sigmoid: out[i] = sigmoid(v); break;
            case Unary::tanh: out[i] = std::tanh(v); break;
            case Unary::exp: out[i] = std::exp(v); break;
            case Unary::log:
                if (!(v > 0.0)) throw DomainError("log of non-positive entry at flat index " + std::to_string(i));
                out[i] = std::log(v);
                break;
            case Unary::relu: out[i] = v > 0.0 ? v : 0.0; break;
        }
    }
    return x.tape->record(std::move(out), {x}, [op, x](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_buffer(self);
        const Tensor& in = x.value();
        const Tensor& y = t.value(self);
        auto& gx = t.grad_buffer(x.id);
        for (std::size_t i = 0; i < g.size(); ++i) {
            double d = 0.0;
            switch (op) {
                case Unary::elu: d = in[i] > 0.0 ? 1.0 : y[i] + 1.0; break;
                case Unary::sigmoid: d = y[i] * (1.0 - y[i]); break;
                case Unary::tanh: d = 1.0 - y[i] * y[i]; break;
                case Unary::exp: d = y[i]; break;
                case Unary::log: d = 1.0 / in[i]; break;
                case Unary::relu: d = in[i] > 0.0 ? 1.0 : 0.0; break;
            }
            gx[i] += g[i] * d;
        }
    });
}

inline Var elu(const Var& x) { return elementwise(Unary::elu, x); }
inline Var sigmoid(const Var& x) { return elementwise(Unary::sigmoid, x); }

// ---------------------------------------------------------------------------
// Reductions and losses

inline Var sum(const Var& a) {
    Tensor out({1}, a.value().sum());
    return a.tape->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
        const double g = t.grad_buffer(self)[0];
        if (!t.requires_grad(a.id)) return;
        for (auto& v : t.grad_buffer(a.id).storage()) v += g;
    });
}

inline Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

/// Mean squared error between equally shaped tensors.
inline Var mse(const Var& a, const Var& b) {
    detail::require_same_shape(a, b, "mse");
    const std::size_t n = a.value().size();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a.value()[i] - b.value()[i];
        acc += d * d;
    }
    Tensor out({1}, acc / static_cast<double>(n));
    return a.tape->record(std::move(out), {a, b}, [a, b, n](Tape& t, std::size_t self) {
        const double g = t.grad_buffer(self)[0] * 2.0 / static_cast<double>(n);
        Tensor d = a.value();
        for (std::size_t i = 0; i < n; ++i) d[i] = g * (d[i] - b.value()[i]);
        detail::accumulate(t, a, d);
        detail::accumulate(t, b, d, -1.0);
    });
}

/// Row softmax restricted to mask entries. Masked entries are exactly 0 and
/// rows without any unmasked entry are all zero.
inline Var masked_row_softmax(const Var& logits, const Tensor& mask) {
    detail::require_matrix(logits, "masked_row_softmax");
    if (mask.shape() != logits.shape())
        throw DimensionError("masked_row_softmax mask shape " + shape_str(mask.shape()) + " vs logits " +
                             shape_str(logits.shape()));
    const Tensor& lv = logits.value();
    const std::size_t r = lv.rows(), c = lv.cols();
    Tensor out = Tensor::matrix(r, c);
    for (std::size_t i = 0; i < r; ++i) {
        double mx = -INFINITY;
        for (std::size_t j = 0; j < c; ++j)
            if (mask(i, j) != 0.0) mx = std::max(mx, lv(i, j));
        if (mx == -INFINITY) continue;
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j)
            if (mask(i, j) != 0.0) z += (out(i, j) = std::exp(lv(i, j) - mx));
        for (std::size_t j = 0; j < c; ++j) out(i, j) /= z;
    }
    return logits.tape->record(std::move(out), {logits}, [logits, r, c](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_buffer(self);
        const Tensor& y = t.value(self);
        auto& gl = t.grad_buffer(logits.id);
        for (std::size_t i = 0; i < r; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += g(i, j) * y(i, j);
            for (std::size_t j = 0; j < c; ++j) gl(i, j) += y(i, j) * (g(i, j) - dot);
        }
    });
}

/// Sum over mask entries of KL(Bernoulli(sigmoid(l)) || Bernoulli(p0)).
inline Var bernoulli_kl_from_logits(const Var& logits, const Tensor& mask, double p0) {
    if (!(p0 > 0.0 && p0 < 1.0)) throw DomainError("gate prior must lie in (0,1)");
    const Tensor& lv = logits.value();
    const double l0 = std::log(p0 / (1.0 - p0));
    double acc = 0.0;
    for (std::size_t i = 0; i < lv.size(); ++i) {
        if (mask[i] == 0.0) continue;
        const double l = lv[i];
        const double p = sigmoid(l);
        // p log p + (1-p) log(1-p) - p log p0 - (1-p) log(1-p0), in logit form
        const double log_p = -softplus(-l), log_q = -softplus(l);
        acc += p * (log_p - std::log(p0)) + (1.0 - p) * (log_q - std::log1p(-p0));
    }
    return logits.tape->record(Tensor({1}, acc), {logits}, [logits, mask, l0](Tape& t, std::size_t self) {
        const double g = t.grad_buffer(self)[0];
        const Tensor& lv = logits.value();
        auto& gl = t.grad_buffer(logits.id);
        for (std::size_t i = 0; i < lv.size(); ++i) {
            if (mask[i] == 0.0) continue;
            const double p = sigmoid(lv[i]);
            gl[i] += g * p * (1.0 - p) * (lv[i] - l0);
        }
    });
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

}  // namespace bicd
