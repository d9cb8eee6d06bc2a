// SPDX-License-Identifier: Apache-2.0

#include "loralab/diagnostics.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "json.hpp"

#include "loralab/format.hpp"

namespace loralab {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

SiteSimilarity cosine_similarity_matrix(const std::vector<std::vector<double>>& heads) {
    if (heads.empty()) throw std::invalid_argument("cosine_similarity_matrix: no vectors given");
    const std::size_t len = heads[0].size();
    for (const auto& h : heads)
        if (h.size() != len)
            throw std::invalid_argument("cosine_similarity_matrix: vector length mismatch (" +
                                        std::to_string(h.size()) + " vs " + std::to_string(len) + ")");
    const std::size_t n = heads.size();
    SiteSimilarity out;
    out.n_heads = static_cast<std::int64_t>(n);
    out.matrix.assign(n * n, kNaN);
    out.degenerate.assign(n, 0);

    std::vector<double> norms(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0;
        for (double v : heads[i]) s += v * v;
        norms[i] = std::sqrt(s);
        if (norms[i] == 0.0) out.degenerate[i] = 1;
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            if (out.degenerate[i] || out.degenerate[j]) continue;  // stays NaN
            double dot = 0;
            for (std::size_t k = 0; k < len; ++k) dot += heads[i][k] * heads[j][k];
            const double sim = dot / (norms[i] * norms[j]);
            out.matrix[i * n + j] = sim;
            out.matrix[j * n + i] = sim;
        }
    }
    finalize_site(out);
    return out;
}

void finalize_site(SiteSimilarity& site) {
    const std::size_t n = static_cast<std::size_t>(site.n_heads);
    double off_sum = 0, full_sum = 0;
    std::int64_t off_cnt = 0, full_cnt = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double v = site.matrix[i * n + j];
            if (std::isnan(v)) continue;
            full_sum += v;
            ++full_cnt;
            if (i != j) {
                off_sum += v;
                ++off_cnt;
            }
        }
    }
    site.offdiag_mean = off_cnt > 0 ? std::optional<double>(off_sum / static_cast<double>(off_cnt)) : std::nullopt;
    site.full_mean = full_cnt > 0 ? std::optional<double>(full_sum / static_cast<double>(full_cnt)) : std::nullopt;
}

SimilarityReport make_report(const std::vector<std::pair<std::string, std::vector<std::vector<double>>>>& site_heads,
                             const std::string& variant, std::uint64_t seed, std::int64_t step) {
    SimilarityReport rep;
    rep.variant = variant;
    rep.seed = seed;
    rep.step = step;
    double off_sum = 0, full_sum = 0;
    std::int64_t off_cnt = 0, full_cnt = 0;
    for (const auto& [site, heads] : site_heads) {
        SiteSimilarity s = cosine_similarity_matrix(heads);
        s.site = site;
        if (s.offdiag_mean) {
            off_sum += *s.offdiag_mean;
            ++off_cnt;
        }
        if (s.full_mean) {
            full_sum += *s.full_mean;
            ++full_cnt;
        }
        rep.sites.push_back(std::move(s));
    }
    rep.overall_offdiag_mean =
        off_cnt > 0 ? std::optional<double>(off_sum / static_cast<double>(off_cnt)) : std::nullopt;
    rep.overall_full_mean =
        full_cnt > 0 ? std::optional<double>(full_sum / static_cast<double>(full_cnt)) : std::nullopt;
    return rep;
}

void write_head_vectors_jsonl(
    const std::vector<std::pair<std::string, std::vector<std::vector<double>>>>& site_heads,
    const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("export_head_vectors: cannot open '" + path + "'");
    for (const auto& [site, heads] : site_heads) {
        for (std::size_t i = 0; i < heads.size(); ++i) {
            nlohmann::ordered_json j;
            j["site"] = site;
            j["head_index"] = i;
            j["vector"] = heads[i];
            out << j.dump() << '\n';
        }
    }
    if (!out) throw std::runtime_error("export_head_vectors: write to '" + path + "' failed");
}

ComparisonSummary compare_runs(const SimilarityReport& a, const SimilarityReport& b) {
    if (a.sites.size() != b.sites.size())
        throw std::invalid_argument("compare_runs: site structure mismatch (" + std::to_string(a.sites.size()) +
                                    " vs " + std::to_string(b.sites.size()) + " sites)");
    ComparisonSummary cmp;
    for (std::size_t i = 0; i < a.sites.size(); ++i) {
        if (a.sites[i].site != b.sites[i].site)
            throw std::invalid_argument("compare_runs: site name mismatch: '" + a.sites[i].site + "' vs '" +
                                        b.sites[i].site + "'");
        ComparisonSummary::SiteDelta d;
        d.site = a.sites[i].site;
        d.mean_a = a.sites[i].offdiag_mean;
        d.mean_b = b.sites[i].offdiag_mean;
        if (d.mean_a && d.mean_b) d.delta = *d.mean_a - *d.mean_b;
        cmp.sites.push_back(std::move(d));
    }
    cmp.overall_a = a.overall_offdiag_mean;
    cmp.overall_b = b.overall_offdiag_mean;
    if (cmp.overall_a && cmp.overall_b) {
        cmp.overall_delta = *cmp.overall_a - *cmp.overall_b;
        // Lower mean similarity = more diverse heads.
        cmp.more_diverse = *cmp.overall_delta < 0 ? "a" : (*cmp.overall_delta > 0 ? "b" : "tie");
    } else {
        cmp.more_diverse = "undefined";
    }
    return cmp;
}

namespace {

nlohmann::ordered_json site_to_json(const SiteSimilarity& s) {
    nlohmann::ordered_json j;
    j["site"] = s.site;
    j["n_heads"] = s.n_heads;
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (std::int64_t i = 0; i < s.n_heads; ++i) {
        nlohmann::ordered_json row = nlohmann::ordered_json::array();
        for (std::int64_t k = 0; k < s.n_heads; ++k) {
            const double v = s.matrix[static_cast<std::size_t>(i * s.n_heads + k)];
            if (std::isnan(v))
                row.push_back(nullptr);
            else
                row.push_back(v);
        }
        rows.push_back(std::move(row));
    }
    j["matrix"] = std::move(rows);
    j["degenerate_heads"] = s.degenerate;
    j["offdiag_mean"] = s.offdiag_mean ? nlohmann::ordered_json(*s.offdiag_mean) : nlohmann::ordered_json(nullptr);
    j["full_mean"] = s.full_mean ? nlohmann::ordered_json(*s.full_mean) : nlohmann::ordered_json(nullptr);
    return j;
}

SiteSimilarity site_from_json(const nlohmann::json& j) {
    SiteSimilarity s;
    s.site = j.at("site").get<std::string>();
    s.n_heads = j.at("n_heads").get<std::int64_t>();
    s.matrix.assign(static_cast<std::size_t>(s.n_heads * s.n_heads), kNaN);
    const auto& rows = j.at("matrix");
    for (std::int64_t i = 0; i < s.n_heads; ++i)
        for (std::int64_t k = 0; k < s.n_heads; ++k) {
            const auto& cell = rows.at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(k));
            if (!cell.is_null()) s.matrix[static_cast<std::size_t>(i * s.n_heads + k)] = cell.get<double>();
        }
    s.degenerate = j.at("degenerate_heads").get<std::vector<std::uint8_t>>();
    if (!j.at("offdiag_mean").is_null()) s.offdiag_mean = j.at("offdiag_mean").get<double>();
    if (!j.at("full_mean").is_null()) s.full_mean = j.at("full_mean").get<double>();
    return s;
}

}  // namespace

std::string report_to_json(const SimilarityReport& report) {
    nlohmann::ordered_json j;
    j["variant"] = report.variant;
    j["seed"] = report.seed;
    j["step"] = report.step;
    nlohmann::ordered_json sites = nlohmann::ordered_json::array();
    for (const auto& s : report.sites) sites.push_back(site_to_json(s));
    j["sites"] = std::move(sites);
    j["overall_offdiag_mean"] =
        report.overall_offdiag_mean ? nlohmann::ordered_json(*report.overall_offdiag_mean) : nlohmann::ordered_json(nullptr);
    j["overall_full_mean"] =
        report.overall_full_mean ? nlohmann::ordered_json(*report.overall_full_mean) : nlohmann::ordered_json(nullptr);
    return j.dump(2);
}

SimilarityReport report_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    SimilarityReport rep;
    rep.variant = j.at("variant").get<std::string>();
    rep.seed = j.at("seed").get<std::uint64_t>();
    rep.step = j.at("step").get<std::int64_t>();
    for (const auto& s : j.at("sites")) rep.sites.push_back(site_from_json(s));
    if (!j.at("overall_offdiag_mean").is_null()) rep.overall_offdiag_mean = j.at("overall_offdiag_mean").get<double>();
    if (!j.at("overall_full_mean").is_null()) rep.overall_full_mean = j.at("overall_full_mean").get<double>();
    return rep;
}

void save_report(const SimilarityReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_report: cannot open '" + path + "'");
    out << report_to_json(report) << '\n';
    if (!out) throw std::runtime_error("save_report: write to '" + path + "' failed");
}

SimilarityReport load_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_report: cannot open '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return report_from_json(text);
}

void save_report_csv(const SimilarityReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_report_csv: cannot open '" + path + "'");
    out << "site,offdiag_mean,full_mean,step\n";
    for (const auto& s : report.sites) {
        out << s.site << ',' << (s.offdiag_mean ? fmt_double(*s.offdiag_mean) : "undefined") << ','
            << (s.full_mean ? fmt_double(*s.full_mean) : "undefined") << ',' << report.step << '\n';
    }
    if (!out) throw std::runtime_error("save_report_csv: write to '" + path + "' failed");
}

}  // namespace loralab
