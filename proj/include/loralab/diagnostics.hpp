// SPDX-License-Identifier: Apache-2.0
//
// Head-matrix similarity analysis: flatten every head matrix to a vector,
// build per-site pairwise cosine-similarity matrices, and aggregate
// off-diagonal means per site and across sites. Zero-vector heads make a
// pair undefined, marked explicitly rather than silently zero. All similarity
// math runs in float64 regardless of the model's precision.
//
// The mean reported as primary covers off-diagonal entries only; the
// full-matrix mean (diagonal included) rides along so either aggregation
// convention can be compared.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "loralab/backbone.hpp"

namespace loralab {

struct SiteSimilarity {
    std::string site;
    std::int64_t n_heads = 0;
    std::vector<double> matrix;           // n_heads^2 row-major; NaN = undefined entry
    std::vector<std::uint8_t> degenerate; // per head: 1 = zero vector
    std::optional<double> offdiag_mean;   // over defined off-diagonal entries
    std::optional<double> full_mean;      // over defined entries incl. diagonal
};

struct SimilarityReport {
    std::string variant;
    std::uint64_t seed = 0;
    std::int64_t step = 0;
    std::vector<SiteSimilarity> sites;
    std::optional<double> overall_offdiag_mean;  // mean of defined per-site means
    std::optional<double> overall_full_mean;
};

struct ComparisonSummary {
    struct SiteDelta {
        std::string site;
        std::optional<double> mean_a, mean_b, delta;  // delta = a - b
    };
    std::vector<SiteDelta> sites;
    std::optional<double> overall_a, overall_b, overall_delta;
    std::string more_diverse;  // "a", "b", or "tie"/"undefined"
};

/// Row-major flattening of a head matrix into a float64 vector.
template <typename T>
std::vector<double> flatten_head(const Tensor<T>& b) {
    return std::vector<double>(b.data().begin(), b.data().end());
}

/// Pairwise cosine-similarity matrix of equal-length vectors. Rows/columns
/// of zero vectors are NaN (undefined) and flagged in `degenerate`.
SiteSimilarity cosine_similarity_matrix(const std::vector<std::vector<double>>& heads);

/// Aggregates a similarity matrix into the per-site means.
void finalize_site(SiteSimilarity& site);

SimilarityReport make_report(const std::vector<std::pair<std::string, std::vector<std::vector<double>>>>& site_heads,
                             const std::string& variant, std::uint64_t seed, std::int64_t step);

/// Builds the report from a model snapshot. Requires a multi-head
/// configuration (n_heads >= 2).
template <typename T>
SimilarityReport report(const AdaptedModel<T>& model, std::int64_t step) {
    std::vector<std::pair<std::string, std::vector<std::vector<double>>>> site_heads;
    std::string variant = "none";
    std::uint64_t seed = 0;
    for (const auto& [site, layer] : model.adapters()) {
        if (layer.config().n_heads < 2)
            throw std::invalid_argument("report: site '" + site + "' has a single head, nothing to compare");
        variant = variant_name(layer.config().variant);
        seed = layer.config().seed;
        std::vector<std::vector<double>> heads;
        for (const auto& b : layer.heads()) heads.push_back(flatten_head(b));
        site_heads.emplace_back(site, std::move(heads));
    }
    if (site_heads.empty()) throw std::invalid_argument("report: model has no adapted sites");
    return make_report(site_heads, variant, seed, step);
}

void write_head_vectors_jsonl(
    const std::vector<std::pair<std::string, std::vector<std::vector<double>>>>& site_heads,
    const std::string& path);

/// One JSON line per head: {"site":., "head_index":., "vector":[...]}.
template <typename T>
void export_head_vectors(const AdaptedModel<T>& model, const std::string& path) {
    std::vector<std::pair<std::string, std::vector<std::vector<double>>>> site_heads;
    for (const auto& [site, layer] : model.adapters()) {
        if (layer.config().n_heads < 2)
            throw std::invalid_argument("export_head_vectors: site '" + site + "' has a single head");
        std::vector<std::vector<double>> heads;
        for (const auto& b : layer.heads()) heads.push_back(flatten_head(b));
        site_heads.emplace_back(site, std::move(heads));
    }
    write_head_vectors_jsonl(site_heads, path);
}

/// Per-site and overall deltas of two reports over the same site structure.
ComparisonSummary compare_runs(const SimilarityReport& a, const SimilarityReport& b);

std::string report_to_json(const SimilarityReport& report);
SimilarityReport report_from_json(const std::string& text);
void save_report(const SimilarityReport& report, const std::string& path);
SimilarityReport load_report(const std::string& path);

/// CSV summary, columns: site, offdiag_mean, full_mean, step.
void save_report_csv(const SimilarityReport& report, const std::string& path);

}  // namespace loralab
