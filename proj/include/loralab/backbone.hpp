// SPDX-License-Identifier: Apache-2.0
//
// Frozen base models that adapters are injected into.
//
//   Mlp             x -> silu(fc1 x) -> fc2, adaptation sites "fc1", "fc2".
//                   Cheap enough for exhaustive finite-difference checks.
//   TinyTransformer token ids -> embedding + sinusoidal positions ->
//                   n_layers x [attention, gated FFN] pre-norm blocks ->
//                   last-token logits. Adaptation sites are the FFN
//                   projections "blocks.<i>.{gate_proj,up_proj,down_proj}";
//                   attention is never adapted.
//
// Every parameter is drawn from N(0, 0.02) on a stream derived from the
// config seed and the parameter name, and stays frozen (requires_grad is
// false, and adapters operate on private copies of W).

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "loralab/adapters.hpp"
#include "loralab/ops.hpp"

namespace loralab {

enum class BackboneKind { Mlp, TinyTransformer };

struct BackboneConfig {
    BackboneKind kind = BackboneKind::Mlp;
    std::int64_t d_model = 64;
    std::int64_t d_ff = 128;
    std::int64_t n_layers = 1;        // transformer only; the MLP is always 2 layers
    std::int64_t n_attn_heads = 4;    // transformer only
    std::int64_t vocab_size = 32;     // transformer only
    std::int64_t max_seq_len = 16;    // transformer only
    std::uint64_t seed = 0;

    void validate() const {
        if (d_model < 1) throw std::invalid_argument("backbone.d_model: must be >= 1");
        if (d_ff < 1) throw std::invalid_argument("backbone.d_ff: must be >= 1");
        if (kind == BackboneKind::TinyTransformer) {
            if (n_layers < 1) throw std::invalid_argument("backbone.n_layers: must be >= 1");
            if (n_attn_heads < 1) throw std::invalid_argument("backbone.n_attn_heads: must be >= 1");
            if (d_model % n_attn_heads != 0)
                throw std::invalid_argument("backbone.d_model: must be divisible by n_attn_heads");
            if (vocab_size < 1) throw std::invalid_argument("backbone.vocab_size: must be >= 1");
            if (max_seq_len < 1) throw std::invalid_argument("backbone.max_seq_len: must be >= 1");
        }
    }
};

/// Sinusoidal position rows, [max_seq_len x d_model].
template <typename T>
Tensor<T> sinusoidal_positions(std::int64_t max_seq_len, std::int64_t d_model) {
    std::vector<T> data(static_cast<std::size_t>(max_seq_len * d_model));
    for (std::int64_t pos = 0; pos < max_seq_len; ++pos) {
        for (std::int64_t i = 0; i < d_model; ++i) {
            const double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(d_model);
            const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
            data[pos * d_model + i] = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
        }
    }
    return Tensor<T>::from_data({max_seq_len, d_model}, std::move(data));
}

template <typename T>
class Backbone {
public:
    /// The hook an adapted model supplies: computes input * W_site^T for a
    /// named projection site (through the adapter when one is attached).
    using SiteFn = std::function<Tensor<T>(const std::string& site, const Tensor<T>& input)>;

    static Backbone build(const BackboneConfig& cfg) {
        cfg.validate();
        Backbone b;
        b.cfg_ = cfg;
        const auto param = [&](const std::string& name, std::int64_t rows, std::int64_t cols) {
            Rng rng(derive_seed(cfg.seed, "backbone/" + name));
            b.params_.emplace(name, sample_gaussian<T>(rng, 0.0, 0.02, {rows, cols}, false));
        };
        if (cfg.kind == BackboneKind::Mlp) {
            param("fc1", cfg.d_ff, cfg.d_model);
            param("fc2", cfg.d_model, cfg.d_ff);
            b.sites_ = {"fc1", "fc2"};
        } else {
            param("embed", cfg.vocab_size, cfg.d_model);
            param("lm_head", cfg.vocab_size, cfg.d_model);
            for (std::int64_t l = 0; l < cfg.n_layers; ++l) {
                const std::string pfx = "blocks." + std::to_string(l) + ".";
                param(pfx + "wq", cfg.d_model, cfg.d_model);
                param(pfx + "wk", cfg.d_model, cfg.d_model);
                param(pfx + "wv", cfg.d_model, cfg.d_model);
                param(pfx + "wo", cfg.d_model, cfg.d_model);
                param(pfx + "gate_proj", cfg.d_ff, cfg.d_model);
                param(pfx + "up_proj", cfg.d_ff, cfg.d_model);
                param(pfx + "down_proj", cfg.d_model, cfg.d_ff);
                b.sites_.push_back(pfx + "gate_proj");
                b.sites_.push_back(pfx + "up_proj");
                b.sites_.push_back(pfx + "down_proj");
            }
            b.posenc_ = sinusoidal_positions<T>(cfg.max_seq_len, cfg.d_model);
        }
        return b;
    }

    const BackboneConfig& config() const { return cfg_; }
    const std::vector<std::string>& adaptation_sites() const { return sites_; }

    const Tensor<T>& param(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw std::invalid_argument("backbone: unknown parameter '" + name + "'");
        return it->second;
    }
    const std::map<std::string, Tensor<T>>& params() const { return params_; }

    /// MLP forward over feature rows [b x d_model].
    Tensor<T> forward_features(const Tensor<T>& x, const SiteFn& site) const {
        if (cfg_.kind != BackboneKind::Mlp)
            throw std::logic_error("forward_features: backbone is not an MLP");
        detail::check_2d(x, "Backbone::forward_features");
        if (x.dim(1) != cfg_.d_model)
            throw std::invalid_argument("backbone: feature dim " + shape_str(x.shape()) + " != d_model " +
                                        std::to_string(cfg_.d_model));
        return site("fc2", silu(site("fc1", x)));
    }

    /// Transformer forward; returns last-token logits [b x vocab].
    Tensor<T> forward_tokens(const std::vector<std::vector<std::int64_t>>& tokens, const SiteFn& site) const {
        if (cfg_.kind != BackboneKind::TinyTransformer)
            throw std::logic_error("forward_tokens: backbone is not a transformer");
        std::vector<Tensor<T>> logit_rows;
        logit_rows.reserve(tokens.size());
        for (const auto& seq : tokens) logit_rows.push_back(forward_sequence(seq, site));
        return concat_rows(logit_rows);
    }

private:
    Tensor<T> forward_sequence(const std::vector<std::int64_t>& seq, const SiteFn& site) const {
        const std::int64_t s = static_cast<std::int64_t>(seq.size());
        if (s < 1) throw std::invalid_argument("backbone: empty token sequence");
        if (s > cfg_.max_seq_len)
            throw std::invalid_argument("backbone: sequence length " + std::to_string(s) + " exceeds max_seq_len " +
                                        std::to_string(cfg_.max_seq_len));
        for (auto t : seq)
            if (t < 0 || t >= cfg_.vocab_size)
                throw std::invalid_argument("backbone: token id " + std::to_string(t) + " out of range [0, " +
                                            std::to_string(cfg_.vocab_size) + ")");

        Tensor<T> x = add(gather_rows(param("embed"), seq), slice_rows(posenc_, 0, s));
        for (std::int64_t l = 0; l < cfg_.n_layers; ++l) {
            const std::string pfx = "blocks." + std::to_string(l) + ".";
            x = add(x, attention(rmsnorm(x), pfx));
            Tensor<T> xn = rmsnorm(x);
            Tensor<T> f = site(pfx + "down_proj", mul(silu(site(pfx + "gate_proj", xn)), site(pfx + "up_proj", xn)));
            x = add(x, f);
        }
        Tensor<T> last = slice_rows(rmsnorm(x), s - 1, s);
        return matmul(last, transpose(param("lm_head")));
    }

    Tensor<T> attention(const Tensor<T>& x, const std::string& pfx) const {
        const std::int64_t dh = cfg_.d_model / cfg_.n_attn_heads;
        Tensor<T> q = matmul(x, transpose(param(pfx + "wq")));
        Tensor<T> k = matmul(x, transpose(param(pfx + "wk")));
        Tensor<T> v = matmul(x, transpose(param(pfx + "wv")));
        std::vector<Tensor<T>> heads;
        heads.reserve(static_cast<std::size_t>(cfg_.n_attn_heads));
        for (std::int64_t h = 0; h < cfg_.n_attn_heads; ++h) {
            Tensor<T> qh = slice_cols(q, h * dh, (h + 1) * dh);
            Tensor<T> kh = slice_cols(k, h * dh, (h + 1) * dh);
            Tensor<T> vh = slice_cols(v, h * dh, (h + 1) * dh);
            Tensor<T> scores = scale(matmul(qh, transpose(kh)), static_cast<T>(1.0 / std::sqrt(double(dh))));
            heads.push_back(matmul(softmax(scores, -1), vh));
        }
        return matmul(concat_cols(heads), transpose(param(pfx + "wo")));
    }

    BackboneConfig cfg_;
    std::map<std::string, Tensor<T>> params_;
    std::vector<std::string> sites_;
    Tensor<T> posenc_;
};

// ---------------------------------------------------------------------------

/// A backbone plus the adapters attached to (a subset of) its sites.
template <typename T>
class AdaptedModel {
public:
    AdaptedModel(Backbone<T> backbone, std::map<std::string, AdapterLayer<T>> adapters)
        : backbone_(std::move(backbone)), adapters_(std::move(adapters)) {}

    Tensor<T> forward_features(const Tensor<T>& x, bool training, Rng* rng) const {
        return backbone_.forward_features(x, site_fn(training, rng));
    }
    Tensor<T> forward_tokens(const std::vector<std::vector<std::int64_t>>& tokens, bool training, Rng* rng) const {
        return backbone_.forward_tokens(tokens, site_fn(training, rng));
    }

    const Backbone<T>& backbone() const { return backbone_; }
    const std::map<std::string, AdapterLayer<T>>& adapters() const { return adapters_; }
    std::map<std::string, AdapterLayer<T>>& adapters() { return adapters_; }

    /// All trainable tensors as (site.name, tensor), in deterministic order.
    std::vector<std::pair<std::string, Tensor<T>>> trainable_tensors() const {
        std::vector<std::pair<std::string, Tensor<T>>> out;
        for (const auto& [site, layer] : adapters_)
            for (const auto& [name, t] : layer.trainable_tensors()) out.emplace_back(site + "." + name, t);
        return out;
    }

    std::int64_t trainable_param_count() const {
        std::int64_t n = 0;
        for (const auto& [name, t] : trainable_tensors()) n += t.numel();
        return n;
    }

    void zero_grad() {
        for (auto& [name, t] : trainable_tensors()) {
            Tensor<T> tt = t;
            tt.zero_grad();
        }
    }

private:
    typename Backbone<T>::SiteFn site_fn(bool training, Rng* rng) const {
        return [this, training, rng](const std::string& site, const Tensor<T>& input) -> Tensor<T> {
            auto it = adapters_.find(site);
            if (it == adapters_.end()) return matmul(input, transpose(backbone_.param(site)));
            return it->second.forward(input, training, rng);
        };
    }

    Backbone<T> backbone_;
    std::map<std::string, AdapterLayer<T>> adapters_;
};

/// Attaches adapters to every site matched by `targets`. A target matches a
/// site when it equals the full name or a trailing ".<target>" component
/// ("gate_proj" matches "blocks.0.gate_proj"). A target matching nothing is
/// an error listing the valid site names. An empty target list yields a
/// model with zero trainable parameters.
template <typename T>
AdaptedModel<T> inject_adapters(Backbone<T> backbone, const LoraConfig& cfg,
                                const std::vector<std::string>& targets) {
    cfg.validate();
    const auto& sites = backbone.adaptation_sites();
    std::vector<std::string> matched;
    for (const auto& target : targets) {
        bool any = false;
        for (const auto& site : sites) {
            const bool hit = site == target ||
                             (site.size() > target.size() + 1 &&
                              site.compare(site.size() - target.size() - 1, target.size() + 1, "." + target) == 0);
            if (hit) {
                if (std::find(matched.begin(), matched.end(), site) == matched.end()) matched.push_back(site);
                any = true;
            }
        }
        if (!any) {
            std::string valid;
            for (const auto& s : sites) valid += (valid.empty() ? "" : ", ") + s;
            throw std::invalid_argument("inject_adapters: unknown site '" + target + "'; valid sites: " + valid);
        }
    }
    std::map<std::string, AdapterLayer<T>> adapters;
    for (const auto& site : matched) {
        AdapterLayer<T> layer(site, backbone.param(site), cfg, derive_seed(cfg.seed, "adapter/" + site));
        layer.apply_weight_offset();
        adapters.emplace(site, std::move(layer));
    }
    return AdaptedModel<T>(std::move(backbone), std::move(adapters));
}

}  // namespace loralab
