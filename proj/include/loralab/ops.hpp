// SPDX-License-Identifier: Apache-2.0
//
// Differentiable ops over Tensor<T>. Matmul and same-shape elementwise ops
// run on the dispatched kernels; everything else is scalar.
//
// Broadcasting rule: for add/sub/mul the second operand may omit leading
// batch dimensions (its shape must be a suffix of the first operand's).

#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <vector>

#include "loralab/kernels.hpp"
#include "loralab/rng.hpp"
#include "loralab/tensor.hpp"

namespace loralab {

namespace detail {

template <typename T>
void check_2d(const Tensor<T>& t, const char* op) {
    if (t.ndim() != 2)
        throw std::invalid_argument(std::string(op) + ": expected a 2-d tensor, got " + shape_str(t.shape()));
}

template <typename T>
inline void acc(std::span<T> dst, std::span<const T> src) {
    kern::vec_add(dst.data(), src.data(), dst.data(), static_cast<std::int64_t>(dst.size()));
}

// True when `small` can broadcast over the leading dims of `big`.
inline bool suffix_broadcastable(const Shape& big, const Shape& small) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul / transpose

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_2d(a, "matmul");
    detail::check_2d(b, "matmul");
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw std::invalid_argument("matmul: inner dimensions mismatch: " + shape_str(a.shape()) + " * " +
                                    shape_str(b.shape()));
    std::vector<T> out(static_cast<std::size_t>(m * n));
    kern::matmul_ab(a.data().data(), b.data().data(), out.data(), m, k, n);

    return detail::make_op_node<T>(
        {m, n}, std::move(out), {a, b},
        [a, b, m, k, n](TensorNode<T>& self) {
            if (a.requires_grad()) {
                std::vector<T> da(static_cast<std::size_t>(m * k));
                kern::matmul_abt(self.grad.data(), b.data().data(), da.data(), m, n, k);
                detail::acc(std::span<T>(a.node()->grad), std::span<const T>(da));
            }
            if (b.requires_grad()) {
                std::vector<T> db(static_cast<std::size_t>(k * n));
                kern::matmul_atb(a.data().data(), self.grad.data(), db.data(), m, k, n);
                detail::acc(std::span<T>(b.node()->grad), std::span<const T>(db));
            }
        });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
    detail::check_2d(x, "transpose");
    const std::int64_t m = x.dim(0), n = x.dim(1);
    std::vector<T> out(static_cast<std::size_t>(m * n));
    auto xd = x.data();
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) out[j * m + i] = xd[i * n + j];

    return detail::make_op_node<T>(
        {n, m}, std::move(out), {x},
        [x, m, n](TensorNode<T>& self) {
            if (!x.requires_grad()) return;
            auto g = self.grad.data();
            auto dx = x.node()->grad.data();
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t j = 0; j < n; ++j) dx[i * n + j] += g[j * m + i];
        });
}

// ---------------------------------------------------------------------------
// elementwise add / sub / mul with suffix broadcast of the second operand

enum class EwOp { Add, Sub, Mul };

template <typename T>
Tensor<T> elementwise(const Tensor<T>& x, const Tensor<T>& y, EwOp op) {
    const bool same = x.shape() == y.shape();
    if (!same && !detail::suffix_broadcastable(x.shape(), y.shape()))
        throw std::invalid_argument("elementwise: shapes not broadcast-compatible: " + shape_str(x.shape()) +
                                    " vs " + shape_str(y.shape()));
    const std::int64_t total = x.numel();
    const std::int64_t inner = y.numel();
    std::vector<T> out(static_cast<std::size_t>(total));
    auto xd = x.data();
    auto yd = y.data();
    if (same) {
        switch (op) {
            case EwOp::Add: kern::vec_add(xd.data(), yd.data(), out.data(), total); break;
            case EwOp::Sub: kern::vec_sub(xd.data(), yd.data(), out.data(), total); break;
            case EwOp::Mul: kern::vec_mul(xd.data(), yd.data(), out.data(), total); break;
        }
    } else {
        for (std::int64_t i = 0; i < total; ++i) {
            const T yv = yd[i % inner];
            out[i] = op == EwOp::Add ? xd[i] + yv : op == EwOp::Sub ? xd[i] - yv : xd[i] * yv;
        }
    }

    return detail::make_op_node<T>(
        x.shape(), std::move(out), {x, y},
        [x, y, op, total, inner](TensorNode<T>& self) {
            auto g = self.grad.data();
            if (x.requires_grad()) {
                auto dx = x.node()->grad.data();
                if (op == EwOp::Mul) {
                    auto yd = y.data();
                    for (std::int64_t i = 0; i < total; ++i) dx[i] += g[i] * yd[i % inner];
                } else {
                    kern::vec_axpy(T(1), g, dx, total);
                }
            }
            if (y.requires_grad()) {
                auto dy = y.node()->grad.data();
                auto xd = x.data();
                const T sign = op == EwOp::Sub ? T(-1) : T(1);
                for (std::int64_t i = 0; i < total; ++i) {
                    const T contrib = op == EwOp::Mul ? g[i] * xd[i] : sign * g[i];
                    dy[i % inner] += contrib;
                }
            }
        });
}

template <typename T>
Tensor<T> add(const Tensor<T>& x, const Tensor<T>& y) { return elementwise(x, y, EwOp::Add); }
template <typename T>
Tensor<T> sub(const Tensor<T>& x, const Tensor<T>& y) { return elementwise(x, y, EwOp::Sub); }
template <typename T>
Tensor<T> mul(const Tensor<T>& x, const Tensor<T>& y) { return elementwise(x, y, EwOp::Mul); }

/// y = c * x for a plain constant c.
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
    std::vector<T> out(static_cast<std::size_t>(x.numel()));
    kern::vec_scale(x.data().data(), c, out.data(), x.numel());
    return detail::make_op_node<T>(
        x.shape(), std::move(out), {x},
        [x, c](TensorNode<T>& self) {
            if (x.requires_grad())
                kern::vec_axpy(c, self.grad.data(), x.node()->grad.data(), x.numel());
        });
}

/// y[i, :] = x[i, :] * w[i], per-row scaling of a 2-d tensor.
template <typename T>
Tensor<T> scale_rows(const Tensor<T>& x, const Tensor<T>& w) {
    detail::check_2d(x, "scale_rows");
    const std::int64_t rows = x.dim(0), cols = x.dim(1);
    if (w.numel() != rows)
        throw std::invalid_argument("scale_rows: weight length " + shape_str(w.shape()) +
                                    " does not match rows of " + shape_str(x.shape()));
    std::vector<T> out(static_cast<std::size_t>(rows * cols));
    auto xd = x.data();
    auto wd = w.data();
    for (std::int64_t i = 0; i < rows; ++i)
        for (std::int64_t j = 0; j < cols; ++j) out[i * cols + j] = xd[i * cols + j] * wd[i];

    return detail::make_op_node<T>(
        x.shape(), std::move(out), {x, w},
        [x, w, rows, cols](TensorNode<T>& self) {
            auto g = self.grad.data();
            if (x.requires_grad()) {
                auto dx = x.node()->grad.data();
                auto wd = w.data();
                for (std::int64_t i = 0; i < rows; ++i)
                    for (std::int64_t j = 0; j < cols; ++j) dx[i * cols + j] += g[i * cols + j] * wd[i];
            }
            if (w.requires_grad()) {
                auto dw = w.node()->grad.data();
                auto xd = x.data();
                for (std::int64_t i = 0; i < rows; ++i) {
                    T s = T(0);
                    for (std::int64_t j = 0; j < cols; ++j) s += g[i * cols + j] * xd[i * cols + j];
                    dw[i] += s;
                }
            }
        });
}

// ---------------------------------------------------------------------------
// activations

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
    const std::int64_t n = x.numel();
    std::vector<T> out(static_cast<std::size_t>(n));
    auto sig = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n));
    auto xd = x.data();
    for (std::int64_t i = 0; i < n; ++i) {
        const T s = T(1) / (T(1) + std::exp(-xd[i]));
        (*sig)[i] = s;
        out[i] = xd[i] * s;
    }
    return detail::make_op_node<T>(
        x.shape(), std::move(out), {x},
        [x, sig, n](TensorNode<T>& self) {
            if (!x.requires_grad()) return;
            auto g = self.grad.data();
            auto dx = x.node()->grad.data();
            auto xd = x.data();
            for (std::int64_t i = 0; i < n; ++i) {
                const T s = (*sig)[i];
                dx[i] += g[i] * s * (T(1) + xd[i] * (T(1) - s));
            }
        });
}

// ---------------------------------------------------------------------------
// softmax

/// Numerically stabilized softmax along `axis` (negative counts from the
/// back). Output is positive and sums to 1 along the axis.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis = -1) {
    const std::int64_t nd = x.ndim();
    std::int64_t ax = axis < 0 ? nd + axis : axis;
    if (ax < 0 || ax >= nd)
        throw std::invalid_argument("softmax: axis " + std::to_string(axis) + " out of range for " +
                                    shape_str(x.shape()));
    const std::int64_t n = x.dim(static_cast<std::size_t>(ax));
    std::int64_t outer = 1, inner = 1;
    for (std::int64_t i = 0; i < ax; ++i) outer *= x.dim(static_cast<std::size_t>(i));
    for (std::int64_t i = ax + 1; i < nd; ++i) inner *= x.dim(static_cast<std::size_t>(i));

    std::vector<T> out(static_cast<std::size_t>(x.numel()));
    auto xd = x.data();
    for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t in = 0; in < inner; ++in) {
            const auto at = [&](std::int64_t t) { return (o * n + t) * inner + in; };
            T mx = xd[at(0)];
            for (std::int64_t t = 1; t < n; ++t) mx = std::max(mx, xd[at(t)]);
            T denom = T(0);
            for (std::int64_t t = 0; t < n; ++t) {
                const T e = std::exp(xd[at(t)] - mx);
                out[at(t)] = e;
                denom += e;
            }
            for (std::int64_t t = 0; t < n; ++t) out[at(t)] /= denom;
        }
    }

    return detail::make_op_node<T>(
        x.shape(), std::move(out), {x},
        [x, outer, n, inner](TensorNode<T>& self) {
            if (!x.requires_grad()) return;
            auto g = self.grad.data();
            auto y = self.value.data();
            auto dx = x.node()->grad.data();
            for (std::int64_t o = 0; o < outer; ++o) {
                for (std::int64_t in = 0; in < inner; ++in) {
                    const auto at = [&](std::int64_t t) { return (o * n + t) * inner + in; };
                    T dot = T(0);
                    for (std::int64_t t = 0; t < n; ++t) dot += g[at(t)] * y[at(t)];
                    for (std::int64_t t = 0; t < n; ++t) dx[at(t)] += y[at(t)] * (g[at(t)] - dot);
                }
            }
        });
}

/// Row-wise softmax over the entries where keep[i] != 0; dropped entries
/// output exactly 0 and receive no gradient. Every row must keep at least
/// one entry.
template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& x, std::shared_ptr<const Mask> keep) {
    detail::check_2d(x, "masked_softmax");
    const std::int64_t rows = x.dim(0), n = x.dim(1);
    if (static_cast<std::int64_t>(keep->size()) != rows * n)
        throw std::invalid_argument("masked_softmax: mask size does not match tensor");
    std::vector<T> out(static_cast<std::size_t>(rows * n), T(0));
    auto xd = x.data();
    for (std::int64_t i = 0; i < rows; ++i) {
        T mx = T(0);
        bool any = false;
        for (std::int64_t j = 0; j < n; ++j) {
            if (!(*keep)[i * n + j]) continue;
            mx = any ? std::max(mx, xd[i * n + j]) : xd[i * n + j];
            any = true;
        }
        if (!any) throw std::invalid_argument("masked_softmax: row " + std::to_string(i) + " keeps no entries");
        T denom = T(0);
        for (std::int64_t j = 0; j < n; ++j) {
            if (!(*keep)[i * n + j]) continue;
            const T e = std::exp(xd[i * n + j] - mx);
            out[i * n + j] = e;
            denom += e;
        }
        for (std::int64_t j = 0; j < n; ++j)
            if ((*keep)[i * n + j]) out[i * n + j] /= denom;
    }

    return detail::make_op_node<T>(
        x.shape(), std::move(out), {x},
        [x, keep, rows, n](TensorNode<T>& self) {
            if (!x.requires_grad()) return;
            auto g = self.grad.data();
            auto y = self.value.data();
            auto dx = x.node()->grad.data();
            for (std::int64_t i = 0; i < rows; ++i) {
                T dot = T(0);
                for (std::int64_t j = 0; j < n; ++j)
                    if ((*keep)[i * n + j]) dot += g[i * n + j] * y[i * n + j];
                for (std::int64_t j = 0; j < n; ++j)
                    if ((*keep)[i * n + j]) dx[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
            }
        });
}

// ---------------------------------------------------------------------------
// dropout

template <typename T>
struct Dropped {
    Tensor<T> value;
    std::shared_ptr<const Mask> mask;  // 1 = kept; all-ones outside training
};

/// Inverted dropout: in training each element is kept with probability
/// 1 - p and scaled by 1/(1 - p); in eval it is the identity with an
/// all-ones mask.
template <typename T>
Dropped<T> dropout(const Tensor<T>& x, double p, Rng* rng, bool training) {
    if (!(p >= 0.0) || p >= 1.0)
        throw std::invalid_argument("dropout: probability must satisfy 0 <= p < 1, got " + std::to_string(p));
    const std::int64_t n = x.numel();

    if (!training || p == 0.0) {
        auto mask = std::make_shared<Mask>(static_cast<std::size_t>(n), std::uint8_t(1));
        std::vector<T> out(x.data().begin(), x.data().end());
        auto value = detail::make_op_node<T>(
            x.shape(), std::move(out), {x},
            [x, n](TensorNode<T>& self) {
                if (x.requires_grad()) kern::vec_axpy(T(1), self.grad.data(), x.node()->grad.data(), n);
            });
        return {std::move(value), std::move(mask)};
    }

    if (rng == nullptr) throw std::invalid_argument("dropout: rng required in training mode with p > 0");
    auto mask = std::make_shared<Mask>(static_cast<std::size_t>(n));
    const double keep = 1.0 - p;
    for (auto& m : *mask) m = rng->bernoulli(keep) ? 1 : 0;
    const T inv_keep = static_cast<T>(1.0 / keep);

    std::vector<T> out(static_cast<std::size_t>(n));
    auto xd = x.data();
    for (std::int64_t i = 0; i < n; ++i) out[i] = (*mask)[i] ? xd[i] * inv_keep : T(0);

    std::shared_ptr<const Mask> cmask = mask;
    auto value = detail::make_op_node<T>(
        x.shape(), std::move(out), {x},
        [x, cmask, inv_keep, n](TensorNode<T>& self) {
            if (!x.requires_grad()) return;
            auto g = self.grad.data();
            auto dx = x.node()->grad.data();
            for (std::int64_t i = 0; i < n; ++i)
                if ((*cmask)[i]) dx[i] += g[i] * inv_keep;
        });
    return {std::move(value), std::move(cmask)};
}

// ---------------------------------------------------------------------------
// losses and reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T s = T(0);
    for (T v : x.data()) s += v;
    return detail::make_op_node<T>(
        {1}, {s}, {x},
        [x](TensorNode<T>& self) {
            if (!x.requires_grad()) return;
            const T g = self.grad[0];
            auto dx = x.node()->grad.data();
            for (std::int64_t i = 0; i < x.numel(); ++i) dx[i] += g;
        });
}

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    if (pred.shape() != target.shape())
        throw std::invalid_argument("mse_loss: shape mismatch: " + shape_str(pred.shape()) + " vs " +
                                    shape_str(target.shape()));
    const std::int64_t n = pred.numel();
    auto pd = pred.data();
    auto td = target.data();
    T s = T(0);
    for (std::int64_t i = 0; i < n; ++i) {
        const T d = pd[i] - td[i];
        s += d * d;
    }
    s /= static_cast<T>(n);
    return detail::make_op_node<T>(
        {1}, {s}, {pred, target},
        [pred, target, n](TensorNode<T>& self) {
            const T g = self.grad[0] * T(2) / static_cast<T>(n);
            auto pd = pred.data();
            auto td = target.data();
            if (pred.requires_grad()) {
                auto dp = pred.node()->grad.data();
                for (std::int64_t i = 0; i < n; ++i) dp[i] += g * (pd[i] - td[i]);
            }
            if (target.requires_grad()) {
                auto dt = target.node()->grad.data();
                for (std::int64_t i = 0; i < n; ++i) dt[i] -= g * (pd[i] - td[i]);
            }
        });
}

/// Mean cross-entropy of row-wise logits against integer labels.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::int64_t>& labels) {
    detail::check_2d(logits, "cross_entropy");
    const std::int64_t b = logits.dim(0), v = logits.dim(1);
    if (static_cast<std::int64_t>(labels.size()) != b)
        throw std::invalid_argument("cross_entropy: expected " + std::to_string(b) + " labels, got " +
                                    std::to_string(labels.size()));
    for (auto y : labels)
        if (y < 0 || y >= v)
            throw std::invalid_argument("cross_entropy: label " + std::to_string(y) + " out of range [0, " +
                                        std::to_string(v) + ")");
    auto zd = logits.data();
    auto probs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(b * v));
    T loss = T(0);
    for (std::int64_t i = 0; i < b; ++i) {
        T mx = zd[i * v];
        for (std::int64_t j = 1; j < v; ++j) mx = std::max(mx, zd[i * v + j]);
        T denom = T(0);
        for (std::int64_t j = 0; j < v; ++j) {
            const T e = std::exp(zd[i * v + j] - mx);
            (*probs)[i * v + j] = e;
            denom += e;
        }
        for (std::int64_t j = 0; j < v; ++j) (*probs)[i * v + j] /= denom;
        loss += std::log(denom) + mx - zd[i * v + labels[i]];
    }
    loss /= static_cast<T>(b);

    return detail::make_op_node<T>(
        {1}, {loss}, {logits},
        [logits, labels, probs, b, v](TensorNode<T>& self) {
            if (!logits.requires_grad()) return;
            const T g = self.grad[0] / static_cast<T>(b);
            auto dz = logits.node()->grad.data();
            for (std::int64_t i = 0; i < b; ++i) {
                for (std::int64_t j = 0; j < v; ++j) {
                    T p = (*probs)[i * v + j];
                    if (j == labels[i]) p -= T(1);
                    dz[i * v + j] += g * p;
                }
            }
        });
}

// ---------------------------------------------------------------------------
// structural ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    check_shape_positive(shape);
    if (shape_numel(shape) != x.numel())
        throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    std::vector<T> out(x.data().begin(), x.data().end());
    return detail::make_op_node<T>(
        std::move(shape), std::move(out), {x},
        [x](TensorNode<T>& self) {
            if (x.requires_grad()) kern::vec_axpy(T(1), self.grad.data(), x.node()->grad.data(), x.numel());
        });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::int64_t r0, std::int64_t r1) {
    detail::check_2d(x, "slice_rows");
    const std::int64_t rows = x.dim(0), cols = x.dim(1);
    if (r0 < 0 || r1 <= r0 || r1 > rows)
        throw std::invalid_argument("slice_rows: range [" + std::to_string(r0) + ", " + std::to_string(r1) +
                                    ") invalid for " + shape_str(x.shape()));
    std::vector<T> out(x.data().begin() + r0 * cols, x.data().begin() + r1 * cols);
    return detail::make_op_node<T>(
        {r1 - r0, cols}, std::move(out), {x},
        [x, r0, cols](TensorNode<T>& self) {
            if (!x.requires_grad()) return;
            kern::vec_axpy(T(1), self.grad.data(), x.node()->grad.data() + r0 * cols,
                           static_cast<std::int64_t>(self.grad.size()));
        });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::int64_t c0, std::int64_t c1) {
    detail::check_2d(x, "slice_cols");
    const std::int64_t rows = x.dim(0), cols = x.dim(1);
    if (c0 < 0 || c1 <= c0 || c1 > cols)
        throw std::invalid_argument("slice_cols: range [" + std::to_string(c0) + ", " + std::to_string(c1) +
                                    ") invalid for " + shape_str(x.shape()));
    const std::int64_t w = c1 - c0;
    std::vector<T> out(static_cast<std::size_t>(rows * w));
    auto xd = x.data();
    for (std::int64_t i = 0; i < rows; ++i)
        for (std::int64_t j = 0; j < w; ++j) out[i * w + j] = xd[i * cols + c0 + j];
    return detail::make_op_node<T>(
        {rows, w}, std::move(out), {x},
        [x, c0, w, rows, cols](TensorNode<T>& self) {
            if (!x.requires_grad()) return;
            auto g = self.grad.data();
            auto dx = x.node()->grad.data();
            for (std::int64_t i = 0; i < rows; ++i)
                for (std::int64_t j = 0; j < w; ++j) dx[i * cols + c0 + j] += g[i * w + j];
        });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no tensors given");
    const std::int64_t cols = parts[0].dim(1);
    std::int64_t rows = 0;
    for (const auto& p : parts) {
        detail::check_2d(p, "concat_rows");
        if (p.dim(1) != cols) throw std::invalid_argument("concat_rows: column count mismatch");
        rows += p.dim(0);
    }
    std::vector<T> out;
    out.reserve(static_cast<std::size_t>(rows * cols));
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    return detail::make_op_node<T>(
        {rows, cols}, std::move(out), parts,
        [parts](TensorNode<T>& self) {
            auto g = self.grad.data();
            std::int64_t off = 0;
            for (const auto& p : parts) {
                if (p.requires_grad())
                    kern::vec_axpy(T(1), g + off, p.node()->grad.data(), p.numel());
                off += p.numel();
            }
        });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no tensors given");
    const std::int64_t rows = parts[0].dim(0);
    std::int64_t cols = 0;
    for (const auto& p : parts) {
        detail::check_2d(p, "concat_cols");
        if (p.dim(0) != rows) throw std::invalid_argument("concat_cols: row count mismatch");
        cols += p.dim(1);
    }
    std::vector<T> out(static_cast<std::size_t>(rows * cols));
    std::int64_t off = 0;
    for (const auto& p : parts) {
        auto pd = p.data();
        const std::int64_t w = p.dim(1);
        for (std::int64_t i = 0; i < rows; ++i)
            for (std::int64_t j = 0; j < w; ++j) out[i * cols + off + j] = pd[i * w + j];
        off += w;
    }
    return detail::make_op_node<T>(
        {rows, cols}, std::move(out), parts,
        [parts, rows, cols](TensorNode<T>& self) {
            auto g = self.grad.data();
            std::int64_t off = 0;
            for (const auto& p : parts) {
                const std::int64_t w = p.dim(1);
                if (p.requires_grad()) {
                    auto dp = p.node()->grad.data();
                    for (std::int64_t i = 0; i < rows; ++i)
                        for (std::int64_t j = 0; j < w; ++j) dp[i * w + j] += g[i * cols + off + j];
                }
                off += w;
            }
        });
}

/// y[i, :] = table[ids[i], :]
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<std::int64_t>& ids) {
    detail::check_2d(table, "gather_rows");
    const std::int64_t v = table.dim(0), d = table.dim(1);
    for (auto id : ids)
        if (id < 0 || id >= v)
            throw std::invalid_argument("gather_rows: index " + std::to_string(id) + " out of range [0, " +
                                        std::to_string(v) + ")");
    const std::int64_t b = static_cast<std::int64_t>(ids.size());
    std::vector<T> out(static_cast<std::size_t>(b * d));
    auto td = table.data();
    for (std::int64_t i = 0; i < b; ++i)
        std::copy_n(td.data() + ids[i] * d, d, out.data() + i * d);
    return detail::make_op_node<T>(
        {b, d}, std::move(out), {table},
        [table, ids, d](TensorNode<T>& self) {
            if (!table.requires_grad()) return;
            auto g = self.grad.data();
            auto dt = table.node()->grad.data();
            for (std::size_t i = 0; i < ids.size(); ++i)
                kern::vec_axpy(T(1), g + static_cast<std::int64_t>(i) * d, dt + ids[i] * d, d);
        });
}

/// Row-wise RMS normalization without a learnable scale:
/// y = x / sqrt(mean(x^2) + eps).
template <typename T>
Tensor<T> rmsnorm(const Tensor<T>& x, T eps = T(1e-5)) {
    detail::check_2d(x, "rmsnorm");
    const std::int64_t rows = x.dim(0), d = x.dim(1);
    std::vector<T> out(static_cast<std::size_t>(rows * d));
    auto rinv = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows));
    auto xd = x.data();
    for (std::int64_t i = 0; i < rows; ++i) {
        T ms = T(0);
        for (std::int64_t j = 0; j < d; ++j) ms += xd[i * d + j] * xd[i * d + j];
        ms /= static_cast<T>(d);
        const T r = T(1) / std::sqrt(ms + eps);
        (*rinv)[i] = r;
        for (std::int64_t j = 0; j < d; ++j) out[i * d + j] = xd[i * d + j] * r;
    }
    return detail::make_op_node<T>(
        x.shape(), std::move(out), {x},
        [x, rinv, rows, d](TensorNode<T>& self) {
            if (!x.requires_grad()) return;
            auto g = self.grad.data();
            auto dx = x.node()->grad.data();
            auto xd = x.data();
            for (std::int64_t i = 0; i < rows; ++i) {
                const T r = (*rinv)[i];
                T gx = T(0);
                for (std::int64_t j = 0; j < d; ++j) gx += g[i * d + j] * xd[i * d + j];
                const T coef = r * r * r * gx / static_cast<T>(d);
                for (std::int64_t j = 0; j < d; ++j) dx[i * d + j] += r * g[i * d + j] - coef * xd[i * d + j];
            }
        });
}

// ---------------------------------------------------------------------------
// seeded sampling

template <typename T>
Tensor<T> sample_uniform(Rng& rng, double lo, double hi, Shape shape, bool requires_grad = false) {
    if (!(lo < hi)) throw std::invalid_argument("sample_uniform: requires lo < hi");
    Tensor<T> t = Tensor<T>::zeros(std::move(shape), requires_grad);
    for (auto& v : t.mutable_data()) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

template <typename T>
Tensor<T> sample_gaussian(Rng& rng, double mean, double std, Shape shape, bool requires_grad = false) {
    if (!(std > 0.0)) throw std::invalid_argument("sample_gaussian: requires std > 0");
    Tensor<T> t = Tensor<T>::zeros(std::move(shape), requires_grad);
    for (auto& v : t.mutable_data()) v = static_cast<T>(rng.gaussian(mean, std));
    return t;
}

inline Mask sample_bernoulli(Rng& rng, double keep_prob, const Shape& shape) {
    if (!(keep_prob > 0.0) || keep_prob > 1.0)
        throw std::invalid_argument("sample_bernoulli: requires 0 < keep_prob <= 1");
    Mask m(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& b : m) b = rng.bernoulli(keep_prob) ? 1 : 0;
    return m;
}

}  // namespace loralab
