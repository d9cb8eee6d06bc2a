// SPDX-License-Identifier: Apache-2.0
//
// Low-rank adapter variants over one frozen projection W [m x n]:
//
//   Vanilla         h = Wx + (alpha/r) B A x
//   MultiAdapter    h = Wx + (alpha/r) (1/N) sum_i B_i A_i x
//   MultiAdapterMoE h = Wx + (alpha/r) sum_i s_i B_i A_i x, s = top-k routed
//   MultiHead       h = Wx + (alpha/r) sum_i w_i B_i A x,  w = softmax(W_r x)
//   RLoRA           MultiHead forward + scaled-gaussian init, per-head
//                   dropout on H = A x, and the one-time offset
//                   W <- W - (alpha/r) (1/N) sum_i B_i0 A_0
//
// Routing is per token (each row of the batch gets its own softmax weights).
// The router W_r is zero-initialized, so routing is uniform at step 0 and
// the offset cancels exactly. The adapter owns a private copy of W; the
// backbone's parameters are never mutated.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "loralab/ops.hpp"
#include "loralab/rng.hpp"
#include "loralab/tensor.hpp"

namespace loralab {

enum class Variant { Vanilla, MultiAdapter, MultiAdapterMoE, MultiHead, RLoRA };
enum class InitScheme { KaimingUniform, HydraUniform, ScaledGaussian, ZeroAScaledGaussianB };

/// Which width feeds the d^{1/4} prefactor of the scaled-gaussian init.
/// DOut reproduces the published table; DIn is the alternative reading.
enum class InitPrefactor { DOut, DIn };

const char* variant_name(Variant v);
const char* init_scheme_name(InitScheme s);

struct LoraConfig {
    std::int64_t rank = 4;
    double alpha = 32.0;
    std::int64_t n_heads = 3;
    double dropout_p = 0.2;
    double gamma = 64.0;
    Variant variant = Variant::Vanilla;
    InitScheme init_scheme = InitScheme::KaimingUniform;
    InitPrefactor init_prefactor = InitPrefactor::DOut;
    bool multi_head_dropout = false;
    std::int64_t moe_top_k = 2;
    std::uint64_t seed = 0;

    double scaling() const { return alpha / static_cast<double>(rank); }

    void validate() const {
        if (rank < 1) throw std::invalid_argument("lora.rank: must be >= 1");
        if (!(alpha > 0)) throw std::invalid_argument("lora.alpha: must be > 0");
        if (n_heads < 1) throw std::invalid_argument("lora.n_heads: must be >= 1");
        if (!(dropout_p >= 0) || dropout_p >= 1)
            throw std::invalid_argument("lora.dropout_p: must satisfy 0 <= p < 1");
        if (!(gamma > 0)) throw std::invalid_argument("lora.gamma: must be > 0");
        if (variant == Variant::Vanilla && n_heads != 1)
            throw std::invalid_argument("lora.n_heads: variant 'vanilla' requires n_heads == 1");
        if (variant == Variant::MultiAdapterMoE && (moe_top_k < 1 || moe_top_k > n_heads))
            throw std::invalid_argument("lora.moe_top_k: must satisfy 1 <= k <= n_heads");
    }
};

// ---------------------------------------------------------------------------
// Initialization schemes. Each draws child streams from the passed rng
// (one fresh seed per matrix) so heads never share a stream.

/// A ~ U(-sqrt(3/n), sqrt(3/n)), B = 0.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> init_vanilla(Rng& rng, std::int64_t m, std::int64_t n, std::int64_t r) {
    if (m < 1 || n < 1 || r < 1) throw std::invalid_argument("init_vanilla: dims must be >= 1");
    const double bound = std::sqrt(3.0 / static_cast<double>(n));
    Rng a_rng(rng.next_u64());
    Tensor<T> a = sample_uniform<T>(a_rng, -bound, bound, {r, n}, true);
    Tensor<T> b = Tensor<T>::zeros({m, r}, true);
    return {std::move(a), std::move(b)};
}

/// A ~ U(-1/n, 1/n), every B_i = 0.
template <typename T>
std::pair<Tensor<T>, std::vector<Tensor<T>>> init_hydra(Rng& rng, std::int64_t m, std::int64_t n,
                                                        std::int64_t r, std::int64_t n_heads) {
    if (m < 1 || n < 1 || r < 1 || n_heads < 1) throw std::invalid_argument("init_hydra: dims must be >= 1");
    const double bound = 1.0 / static_cast<double>(n);
    Rng a_rng(rng.next_u64());
    Tensor<T> a = sample_uniform<T>(a_rng, -bound, bound, {r, n}, true);
    std::vector<Tensor<T>> heads;
    heads.reserve(static_cast<std::size_t>(n_heads));
    for (std::int64_t i = 0; i < n_heads; ++i) heads.push_back(Tensor<T>::zeros({m, r}, true));
    return {std::move(a), std::move(heads)};
}

/// Scaled-gaussian randomization:
///   A   ~ (d^{1/4} / sqrt(gamma)) * N(0, 1/n)   (or A = 0 when zero_a)
///   B_i ~ (d^{1/4} / sqrt(gamma)) * N(0, 1/m)   independently per head,
/// where d = m for InitPrefactor::DOut and d = n for DIn.
template <typename T>
std::pair<Tensor<T>, std::vector<Tensor<T>>> init_rlora(Rng& rng, std::int64_t m, std::int64_t n,
                                                        std::int64_t r, std::int64_t n_heads, double gamma,
                                                        bool zero_a,
                                                        InitPrefactor prefactor = InitPrefactor::DOut) {
    if (m < 1 || n < 1 || r < 1 || n_heads < 1) throw std::invalid_argument("init_rlora: dims must be >= 1");
    if (!(gamma > 0)) throw std::invalid_argument("init_rlora: gamma must be > 0");
    const double d = static_cast<double>(prefactor == InitPrefactor::DOut ? m : n);
    const double coeff = std::pow(d, 0.25) / std::sqrt(gamma);
    const double std_a = coeff * std::sqrt(1.0 / static_cast<double>(n));
    const double std_b = coeff * std::sqrt(1.0 / static_cast<double>(m));

    Rng a_rng(rng.next_u64());
    Tensor<T> a = zero_a ? Tensor<T>::zeros({r, n}, true)
                         : sample_gaussian<T>(a_rng, 0.0, std_a, {r, n}, true);
    std::vector<Tensor<T>> heads;
    heads.reserve(static_cast<std::size_t>(n_heads));
    for (std::int64_t i = 0; i < n_heads; ++i) {
        Rng b_rng(rng.next_u64());
        heads.push_back(sample_gaussian<T>(b_rng, 0.0, std_b, {m, r}, true));
    }
    return {std::move(a), std::move(heads)};
}

// ---------------------------------------------------------------------------

/// One adapted projection site.
template <typename T>
class AdapterLayer {
public:
    /// Takes a private copy of the frozen weight; initializes A/B/router per
    /// the config's scheme from a stream seeded with `seed`.
    AdapterLayer(std::string site, const Tensor<T>& frozen_w, const LoraConfig& cfg, std::uint64_t seed)
        : site_(std::move(site)), cfg_(cfg) {
        cfg_.validate();
        detail::check_2d(frozen_w, "AdapterLayer");
        m_ = frozen_w.dim(0);
        n_ = frozen_w.dim(1);
        w_ = Tensor<T>::from_data(frozen_w.shape(),
                                  std::vector<T>(frozen_w.data().begin(), frozen_w.data().end()),
                                  /*requires_grad=*/false);
        Rng rng(seed);
        const std::int64_t r = cfg_.rank;
        const std::int64_t big_n = cfg_.n_heads;
        const bool shared_a =
            cfg_.variant == Variant::Vanilla || cfg_.variant == Variant::MultiHead || cfg_.variant == Variant::RLoRA;

        const auto init_pair = [&](Rng& stream) -> std::pair<Tensor<T>, std::vector<Tensor<T>>> {
            switch (cfg_.init_scheme) {
                case InitScheme::KaimingUniform: {
                    auto [a, b] = init_vanilla<T>(stream, m_, n_, r);
                    std::vector<Tensor<T>> hs;
                    hs.push_back(std::move(b));
                    return {std::move(a), std::move(hs)};
                }
                case InitScheme::HydraUniform:
                    return init_hydra<T>(stream, m_, n_, r, shared_a ? big_n : 1);
                case InitScheme::ScaledGaussian:
                    return init_rlora<T>(stream, m_, n_, r, shared_a ? big_n : 1, cfg_.gamma, false,
                                         cfg_.init_prefactor);
                case InitScheme::ZeroAScaledGaussianB:
                    return init_rlora<T>(stream, m_, n_, r, shared_a ? big_n : 1, cfg_.gamma, true,
                                         cfg_.init_prefactor);
            }
            throw std::logic_error("unreachable");
        };

        if (shared_a) {
            auto [a, hs] = init_pair(rng);
            a_mats_.push_back(std::move(a));
            if (static_cast<std::int64_t>(hs.size()) == big_n) {
                b_mats_ = std::move(hs);
            } else {
                // Kaiming scheme yields one zero head; replicate fresh zero heads.
                b_mats_.push_back(std::move(hs[0]));
                for (std::int64_t i = 1; i < big_n; ++i) b_mats_.push_back(Tensor<T>::zeros({m_, r}, true));
            }
        } else {
            // Independent adapter pairs (A_i, B_i).
            for (std::int64_t i = 0; i < big_n; ++i) {
                auto [a, hs] = init_pair(rng);
                a_mats_.push_back(std::move(a));
                b_mats_.push_back(std::move(hs[0]));
            }
        }

        if (uses_router()) router_ = Tensor<T>::zeros({big_n, n_}, true);
    }

    bool uses_router() const {
        return cfg_.variant == Variant::MultiHead || cfg_.variant == Variant::RLoRA ||
               cfg_.variant == Variant::MultiAdapterMoE;
    }

    /// One-time correction that restores init transparency with nonzero
    /// heads: W <- W - (alpha/r) (1/N) sum_i B_i A_(i).
    void apply_weight_offset() {
        if (offset_applied_)
            throw std::logic_error("apply_weight_offset: already applied to site '" + site_ + "'");
        offset_applied_ = true;
        const double c = cfg_.scaling() / static_cast<double>(cfg_.n_heads);
        auto wd = w_.mutable_data();
        for (std::int64_t i = 0; i < cfg_.n_heads; ++i) {
            auto bd = b_mats_[static_cast<std::size_t>(i)].data();
            auto ad = a_for_head(i).data();
            for (std::int64_t row = 0; row < m_; ++row)
                for (std::int64_t col = 0; col < n_; ++col) {
                    double dot = 0;
                    for (std::int64_t p = 0; p < cfg_.rank; ++p)
                        dot += static_cast<double>(bd[row * cfg_.rank + p]) *
                               static_cast<double>(ad[p * n_ + col]);
                    wd[row * n_ + col] -= static_cast<T>(c * dot);
                }
        }
    }
    bool offset_applied() const { return offset_applied_; }

    /// Variant-dispatched forward for a batch of token rows x [b x n].
    Tensor<T> forward(const Tensor<T>& x, bool training, Rng* rng) const {
        detail::check_2d(x, "AdapterLayer::forward");
        if (x.dim(1) != n_)
            throw std::invalid_argument("AdapterLayer::forward: input " + shape_str(x.shape()) +
                                        " does not match weight " + shape_str(w_.shape()));
        switch (cfg_.variant) {
            case Variant::Vanilla: return forward_vanilla(x, training, rng);
            case Variant::MultiAdapter: return forward_multiadapter(x, training, rng);
            case Variant::MultiAdapterMoE: return forward_moe(x, training, rng);
            case Variant::MultiHead:
            case Variant::RLoRA: return forward_multihead(x, training, rng);
        }
        throw std::logic_error("unreachable");
    }

    Tensor<T> forward_vanilla(const Tensor<T>& x, bool training, Rng* rng) const {
        Tensor<T> base = matmul(x, transpose(w_));
        auto dropped = dropout(x, cfg_.dropout_p, rng, training);
        Tensor<T> h = matmul(dropped.value, transpose(a_mats_[0]));
        Tensor<T> up = matmul(h, transpose(b_mats_[0]));
        return add(base, scale(up, static_cast<T>(cfg_.scaling())));
    }

    /// Shared-A multi-head path (MultiHead and RLoRA). With multi-head
    /// dropout each head masks its own copy of H = A x; otherwise dropout is
    /// applied to the adapter input as in vanilla LoRA.
    Tensor<T> forward_multihead(const Tensor<T>& x, bool training, Rng* rng) const {
        Tensor<T> base = matmul(x, transpose(w_));
        Tensor<T> omega = softmax(matmul(x, transpose(router_)), -1);  // [b x N]

        Tensor<T> h_shared;
        if (cfg_.multi_head_dropout) {
            h_shared = matmul(x, transpose(a_mats_[0]));
        } else {
            auto dropped = dropout(x, cfg_.dropout_p, rng, training);
            h_shared = matmul(dropped.value, transpose(a_mats_[0]));
        }

        Tensor<T> mix;
        for (std::int64_t i = 0; i < cfg_.n_heads; ++i) {
            Tensor<T> hi = h_shared;
            if (cfg_.multi_head_dropout)
                hi = dropout(h_shared, cfg_.dropout_p, rng, training).value;  // independent mask per head
            Tensor<T> yi = matmul(hi, transpose(b_mats_[static_cast<std::size_t>(i)]));
            Tensor<T> weighted = scale_rows(yi, slice_cols(omega, i, i + 1));
            mix = mix.defined() ? add(mix, weighted) : weighted;
        }
        return add(base, scale(mix, static_cast<T>(cfg_.scaling())));
    }

    /// Uniformly mixed independent adapters (no router).
    Tensor<T> forward_multiadapter(const Tensor<T>& x, bool training, Rng* rng) const {
        Tensor<T> base = matmul(x, transpose(w_));
        auto dropped = dropout(x, cfg_.dropout_p, rng, training);
        Tensor<T> acc;
        for (std::int64_t i = 0; i < cfg_.n_heads; ++i) {
            Tensor<T> h = matmul(dropped.value, transpose(a_mats_[static_cast<std::size_t>(i)]));
            Tensor<T> yi = matmul(h, transpose(b_mats_[static_cast<std::size_t>(i)]));
            acc = acc.defined() ? add(acc, yi) : yi;
        }
        const T c = static_cast<T>(cfg_.scaling() / static_cast<double>(cfg_.n_heads));
        return add(base, scale(acc, c));
    }

    /// Top-k routed mixture of independent adapters: per token the k largest
    /// router logits are kept and re-normalized with a softmax; dropped
    /// experts contribute exactly zero.
    Tensor<T> forward_moe(const Tensor<T>& x, bool training, Rng* rng) const {
        Tensor<T> base = matmul(x, transpose(w_));
        Tensor<T> logits = matmul(x, transpose(router_));  // [b x N]
        auto keep = std::make_shared<Mask>(top_k_mask(logits.data(), x.dim(0), cfg_.n_heads, cfg_.moe_top_k));
        Tensor<T> s = masked_softmax(logits, keep);

        auto dropped = dropout(x, cfg_.dropout_p, rng, training);
        Tensor<T> mix;
        for (std::int64_t i = 0; i < cfg_.n_heads; ++i) {
            Tensor<T> h = matmul(dropped.value, transpose(a_mats_[static_cast<std::size_t>(i)]));
            Tensor<T> yi = matmul(h, transpose(b_mats_[static_cast<std::size_t>(i)]));
            Tensor<T> weighted = scale_rows(yi, slice_cols(s, i, i + 1));
            mix = mix.defined() ? add(mix, weighted) : weighted;
        }
        return add(base, scale(mix, static_cast<T>(cfg_.scaling())));
    }

    /// Routing weights for one token, matching the forward pass (test and
    /// diagnostic surface; also used by merged_weight).
    std::vector<double> routing_weights(std::span<const T> x_t) const {
        if (static_cast<std::int64_t>(x_t.size()) != n_)
            throw std::invalid_argument("routing_weights: token width mismatch");
        const std::int64_t nh = cfg_.n_heads;
        std::vector<double> w(static_cast<std::size_t>(nh), 0.0);
        switch (cfg_.variant) {
            case Variant::Vanilla: w[0] = 1.0; return w;
            case Variant::MultiAdapter:
                std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(nh));
                return w;
            default: break;
        }
        std::vector<double> logits(static_cast<std::size_t>(nh), 0.0);
        auto rd = router_.data();
        for (std::int64_t i = 0; i < nh; ++i) {
            double s = 0;
            for (std::int64_t j = 0; j < n_; ++j) s += static_cast<double>(rd[i * n_ + j]) * static_cast<double>(x_t[j]);
            logits[static_cast<std::size_t>(i)] = s;
        }
        std::vector<std::uint8_t> keep(static_cast<std::size_t>(nh), 1);
        if (cfg_.variant == Variant::MultiAdapterMoE) {
            std::vector<T> tl(logits.begin(), logits.end());
            keep = top_k_mask(std::span<const T>(tl), 1, nh, cfg_.moe_top_k);
        }
        double mx = -std::numeric_limits<double>::infinity();
        for (std::int64_t i = 0; i < nh; ++i)
            if (keep[static_cast<std::size_t>(i)]) mx = std::max(mx, logits[static_cast<std::size_t>(i)]);
        double denom = 0;
        for (std::int64_t i = 0; i < nh; ++i)
            if (keep[static_cast<std::size_t>(i)]) denom += std::exp(logits[static_cast<std::size_t>(i)] - mx);
        for (std::int64_t i = 0; i < nh; ++i)
            w[static_cast<std::size_t>(i)] =
                keep[static_cast<std::size_t>(i)] ? std::exp(logits[static_cast<std::size_t>(i)] - mx) / denom : 0.0;
        return w;
    }

    /// Explicit merged matrix W + (alpha/r) sum_i w_i(x_t) B_i A_(i) for one
    /// token, computed with plain loops. Eval-mode semantics; test oracle.
    std::vector<T> merged_weight(std::span<const T> x_t) const {
        const std::vector<double> w = routing_weights(x_t);
        std::vector<T> merged(w_.data().begin(), w_.data().end());
        const double c = cfg_.scaling();
        for (std::int64_t i = 0; i < cfg_.n_heads; ++i) {
            if (w[static_cast<std::size_t>(i)] == 0.0) continue;
            auto bd = b_mats_[static_cast<std::size_t>(i)].data();
            auto ad = a_for_head(i).data();
            const double wi = c * w[static_cast<std::size_t>(i)];
            for (std::int64_t row = 0; row < m_; ++row)
                for (std::int64_t col = 0; col < n_; ++col) {
                    double dot = 0;
                    for (std::int64_t p = 0; p < cfg_.rank; ++p)
                        dot += static_cast<double>(bd[row * cfg_.rank + p]) *
                               static_cast<double>(ad[p * n_ + col]);
                    merged[static_cast<std::size_t>(row * n_ + col)] += static_cast<T>(wi * dot);
                }
        }
        return merged;
    }

    struct Footprint {
        std::int64_t multi_head_elements;  // N * b * r, masks over H
        std::int64_t input_elements;       // b * n, the input-dropout mask
    };
    Footprint mask_footprint(std::int64_t batch) const {
        return {cfg_.n_heads * batch * cfg_.rank, batch * n_};
    }

    const std::string& site() const { return site_; }
    const LoraConfig& config() const { return cfg_; }
    std::int64_t d_in() const { return n_; }
    std::int64_t d_out() const { return m_; }
    const Tensor<T>& weight() const { return w_; }
    Tensor<T>& weight() { return w_; }
    const std::vector<Tensor<T>>& down_mats() const { return a_mats_; }
    const std::vector<Tensor<T>>& heads() const { return b_mats_; }
    std::vector<Tensor<T>>& heads() { return b_mats_; }
    const Tensor<T>& router() const {
        if (!uses_router()) throw std::logic_error("variant has no router");
        return router_;
    }

    /// Trainable tensors with names relative to the site ("A", "A0", "B0",
    /// "Wr", ...). The frozen W is excluded.
    std::vector<std::pair<std::string, Tensor<T>>> trainable_tensors() const {
        std::vector<std::pair<std::string, Tensor<T>>> out;
        if (a_mats_.size() == 1) {
            out.emplace_back("A", a_mats_[0]);
        } else {
            for (std::size_t i = 0; i < a_mats_.size(); ++i) out.emplace_back("A" + std::to_string(i), a_mats_[i]);
        }
        for (std::size_t i = 0; i < b_mats_.size(); ++i) out.emplace_back("B" + std::to_string(i), b_mats_[i]);
        if (uses_router()) out.emplace_back("Wr", router_);
        return out;
    }

    /// Everything the checkpoint must carry, including the (possibly
    /// offset-corrected) private W.
    std::vector<std::pair<std::string, Tensor<T>>> all_tensors() const {
        std::vector<std::pair<std::string, Tensor<T>>> out;
        out.emplace_back("W", w_);
        auto t = trainable_tensors();
        out.insert(out.end(), t.begin(), t.end());
        return out;
    }

private:
    const Tensor<T>& a_for_head(std::int64_t i) const {
        return a_mats_.size() == 1 ? a_mats_[0] : a_mats_[static_cast<std::size_t>(i)];
    }

    // Per-row top-k keep mask over logits [rows x n]; ties resolved toward
    // the lower index so routing is deterministic.
    static Mask top_k_mask(std::span<const T> logits, std::int64_t rows, std::int64_t n, std::int64_t k) {
        Mask keep(static_cast<std::size_t>(rows * n), 0);
        std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
        for (std::int64_t row = 0; row < rows; ++row) {
            for (std::int64_t i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
            std::stable_sort(idx.begin(), idx.end(), [&](std::int64_t a, std::int64_t b) {
                return logits[row * n + a] > logits[row * n + b];
            });
            for (std::int64_t i = 0; i < k; ++i) keep[row * n + idx[static_cast<std::size_t>(i)]] = 1;
        }
        return keep;
    }

    std::string site_;
    LoraConfig cfg_;
    std::int64_t m_ = 0, n_ = 0;
    Tensor<T> w_;
    std::vector<Tensor<T>> a_mats_;  // one shared A, or N adapter-specific
    std::vector<Tensor<T>> b_mats_;  // N head matrices
    Tensor<T> router_;               // [N x n], zero-initialized
    bool offset_applied_ = false;
};

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::Vanilla: return "vanilla";
        case Variant::MultiAdapter: return "multi_adapter";
        case Variant::MultiAdapterMoE: return "multi_adapter_moe";
        case Variant::MultiHead: return "multi_head";
        case Variant::RLoRA: return "rlora";
    }
    return "?";
}

inline const char* init_scheme_name(InitScheme s) {
    switch (s) {
        case InitScheme::KaimingUniform: return "kaiming_uniform";
        case InitScheme::HydraUniform: return "hydra_uniform";
        case InitScheme::ScaledGaussian: return "scaled_gaussian";
        case InitScheme::ZeroAScaledGaussianB: return "zero_a_scaled_gaussian_b";
    }
    return "?";
}

}  // namespace loralab
