// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <fstream>

#include "json.hpp"

#include "loralab/diagnostics.hpp"

using namespace loralab;

namespace {

AdaptedModel<float> fresh_model(Variant variant, InitScheme scheme, std::uint64_t seed,
                                std::int64_t d = 64, std::int64_t rank = 4) {
    BackboneConfig bc;
    bc.kind = BackboneKind::Mlp;
    bc.d_model = d;
    bc.d_ff = 4 * d;  // fc1 heads are (4d x r): 1024 elements at d=64, r=4
    bc.seed = derive_seed(seed, "backbone");
    LoraConfig lc;
    lc.variant = variant;
    lc.init_scheme = scheme;
    lc.n_heads = 3;
    lc.rank = rank;
    lc.multi_head_dropout = variant == Variant::RLoRA;
    lc.seed = derive_seed(seed, "lora");
    return inject_adapters(Backbone<float>::build(bc), lc, {"fc1", "fc2"});
}

}  // namespace

TEST_CASE("flatten_head is row-major and length-preserving") {
    auto b = Tensor<float>::from_data({2, 2}, {1, 2, 3, 4});
    CHECK(flatten_head(b) == std::vector<double>{1, 2, 3, 4});
    auto z = Tensor<float>::zeros({3, 5});
    auto v = flatten_head(z);
    CHECK(v.size() == 15);
    for (double x : v) CHECK(x == 0.0);
}

TEST_CASE("cosine similarity: self, orthogonal, collinear, sign") {
    auto s = cosine_similarity_matrix({{1, 2, 3}, {1, 2, 3}});
    CHECK(s.matrix[1] == doctest::Approx(1.0).epsilon(1e-12));

    auto o = cosine_similarity_matrix({{1, 0}, {0, 1}});
    CHECK(o.matrix[1] == doctest::Approx(0.0));

    auto c = cosine_similarity_matrix({{1, 2, 3}, {2, 4, 6}, {-1, -2, -3}});
    CHECK(c.matrix[0 * 3 + 1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(c.matrix[0 * 3 + 2] == doctest::Approx(-1.0).epsilon(1e-12));

    CHECK_THROWS_AS(cosine_similarity_matrix({{1, 2}, {1, 2, 3}}), std::invalid_argument);
}

TEST_CASE("scale invariance: positive scaling preserves, negative flips") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> v(32), w(32), v_pos(32), v_neg(32);
        for (std::size_t i = 0; i < 32; ++i) {
            v[i] = rng.gaussian(0, 1);
            w[i] = rng.gaussian(0, 1);
            v_pos[i] = 2.5 * v[i];
            v_neg[i] = -0.7 * v[i];
        }
        const double base = cosine_similarity_matrix({v, w}).matrix[1];
        CHECK(cosine_similarity_matrix({v_pos, w}).matrix[1] == doctest::Approx(base).epsilon(1e-12));
        CHECK(cosine_similarity_matrix({v_neg, w}).matrix[1] == doctest::Approx(-base).epsilon(1e-12));
    }
}

TEST_CASE("zero vectors are flagged undefined, never silently zero") {
    auto s = cosine_similarity_matrix({{1, 2}, {0, 0}, {3, 4}});
    CHECK(s.degenerate == std::vector<std::uint8_t>{0, 1, 0});
    CHECK(std::isnan(s.matrix[0 * 3 + 1]));
    CHECK(std::isnan(s.matrix[1 * 3 + 1]));  // even the diagonal of a zero head
    CHECK_FALSE(std::isnan(s.matrix[0 * 3 + 2]));
    // The defined pair still feeds the mean.
    REQUIRE(s.offdiag_mean.has_value());
    CHECK(*s.offdiag_mean == doctest::Approx(s.matrix[0 * 3 + 2]));
}

TEST_CASE("matrix is symmetric with unit diagonal for nonzero heads") {
    Rng rng(6);
    std::vector<std::vector<double>> heads;
    for (int h = 0; h < 4; ++h) {
        std::vector<double> v(64);
        for (auto& x : v) x = rng.gaussian(0, 1);
        heads.push_back(std::move(v));
    }
    auto s = cosine_similarity_matrix(heads);
    for (int i = 0; i < 4; ++i) {
        CHECK(std::abs(s.matrix[i * 4 + i] - 1.0) < 1e-9);
        for (int j = 0; j < 4; ++j) {
            CHECK(s.matrix[i * 4 + j] == s.matrix[j * 4 + i]);
            if (i != j) {
                CHECK(s.matrix[i * 4 + j] >= -1.0);
                CHECK(s.matrix[i * 4 + j] <= 1.0);
            }
        }
    }
}

TEST_CASE("report: identical heads give mean 1; fresh random init concentrates near 0") {
    // Model copies share parameter handles, so use a separate instance for
    // the identical-heads case.
    {
        auto clones = fresh_model(Variant::RLoRA, InitScheme::ScaledGaussian, 42);
        for (auto& [site, layer] : clones.adapters()) {
            auto first = layer.heads()[0];
            for (std::size_t i = 1; i < layer.heads().size(); ++i)
                std::copy(first.data().begin(), first.data().end(), layer.heads()[i].mutable_data().begin());
        }
        SimilarityReport rep = report(clones, 0);
        for (const auto& s : rep.sites) CHECK(*s.offdiag_mean == doctest::Approx(1.0).epsilon(1e-9));
    }
    auto model = fresh_model(Variant::RLoRA, InitScheme::ScaledGaussian, 42);
    SimilarityReport rep = report(model, 0);
    REQUIRE(rep.overall_offdiag_mean.has_value());
    CHECK(std::abs(*rep.overall_offdiag_mean) < 0.1);
    CHECK(rep.variant == "rlora");
}

TEST_CASE("report flags every site degenerate for zero-initialized heads") {
    auto model = fresh_model(Variant::MultiHead, InitScheme::HydraUniform, 7);
    SimilarityReport rep = report(model, 0);
    for (const auto& s : rep.sites) {
        for (auto d : s.degenerate) CHECK(d == 1);
        CHECK_FALSE(s.offdiag_mean.has_value());
        CHECK_FALSE(s.full_mean.has_value());
    }
    CHECK_FALSE(rep.overall_offdiag_mean.has_value());
}

TEST_CASE("report rejects single-head models") {
    BackboneConfig bc;
    bc.kind = BackboneKind::Mlp;
    bc.d_model = 8;
    bc.d_ff = 16;
    LoraConfig lc;
    lc.variant = Variant::Vanilla;
    lc.n_heads = 1;
    auto model = inject_adapters(Backbone<float>::build(bc), lc, {"fc1"});
    CHECK_THROWS_AS(report(model, 0), std::invalid_argument);
}

TEST_CASE("report is deterministic for a model snapshot") {
    auto model = fresh_model(Variant::RLoRA, InitScheme::ScaledGaussian, 9);
    auto a = report(model, 3);
    auto b = report(model, 3);
    CHECK(report_to_json(a) == report_to_json(b));
}

TEST_CASE("full-matrix mean includes the diagonal and shifts upward") {
    auto model = fresh_model(Variant::RLoRA, InitScheme::ScaledGaussian, 10);
    SimilarityReport rep = report(model, 0);
    for (const auto& s : rep.sites) {
        // mean over N^2 entries vs N(N-1): diagonal of ones pulls it up by ~1/N.
        CHECK(*s.full_mean > *s.offdiag_mean);
    }
}

TEST_CASE("export_head_vectors: line count and bit-exact vectors") {
    auto model = fresh_model(Variant::RLoRA, InitScheme::ScaledGaussian, 11);
    const std::string path = "/tmp/loralab_test_heads.jsonl";
    export_head_vectors(model, path);
    std::ifstream in(path);
    std::string line;
    std::size_t rows = 0;
    std::map<std::string, std::map<int, std::vector<double>>> seen;
    while (std::getline(in, line)) {
        auto j = nlohmann::json::parse(line);
        seen[j.at("site").get<std::string>()][j.at("head_index").get<int>()] =
            j.at("vector").get<std::vector<double>>();
        ++rows;
    }
    CHECK(rows == 6);  // 2 sites x 3 heads
    for (const auto& [site, layer] : model.adapters()) {
        for (std::size_t h = 0; h < layer.heads().size(); ++h) {
            const auto want = flatten_head(layer.heads()[h]);
            CHECK(seen.at(site).at(static_cast<int>(h)) == want);
        }
    }
}

TEST_CASE("compare_runs: self-comparison is all zeros; synthetic delta") {
    auto model = fresh_model(Variant::RLoRA, InitScheme::ScaledGaussian, 12);
    auto rep = report(model, 0);
    auto self_cmp = compare_runs(rep, rep);
    CHECK(*self_cmp.overall_delta == 0.0);
    for (const auto& s : self_cmp.sites) CHECK(*s.delta == 0.0);
    CHECK(self_cmp.more_diverse == "tie");

    // Synthetic reports with overall means 0.8 and 0.65.
    SimilarityReport a, b;
    SiteSimilarity sa, sb;
    sa.site = sb.site = "fc1";
    sa.n_heads = sb.n_heads = 2;
    sa.matrix = {1, 0.8, 0.8, 1};
    sb.matrix = {1, 0.65, 0.65, 1};
    finalize_site(sa);
    finalize_site(sb);
    a.sites = {sa};
    b.sites = {sb};
    a.overall_offdiag_mean = 0.8;
    b.overall_offdiag_mean = 0.65;
    auto cmp = compare_runs(a, b);
    CHECK(*cmp.overall_delta == doctest::Approx(0.15));
    CHECK(cmp.more_diverse == "b");

    SimilarityReport mismatched = a;
    mismatched.sites.push_back(sa);
    CHECK_THROWS_AS(compare_runs(a, mismatched), std::invalid_argument);
}

TEST_CASE("report JSON and CSV round trips") {
    auto model = fresh_model(Variant::RLoRA, InitScheme::ScaledGaussian, 13);
    auto rep = report(model, 17);
    const std::string jpath = "/tmp/loralab_test_report.json";
    save_report(rep, jpath);
    auto loaded = load_report(jpath);
    CHECK(report_to_json(loaded) == report_to_json(rep));
    CHECK(loaded.step == 17);

    // Degenerate entries survive as nulls.
    auto zero_model = fresh_model(Variant::MultiHead, InitScheme::HydraUniform, 14);
    auto zrep = report(zero_model, 0);
    save_report(zrep, jpath);
    auto zloaded = load_report(jpath);
    CHECK_FALSE(zloaded.overall_offdiag_mean.has_value());
    CHECK(std::isnan(zloaded.sites[0].matrix[1]));

    const std::string cpath = "/tmp/loralab_test_report.csv";
    save_report_csv(rep, cpath);
    std::ifstream in(cpath);
    std::string header;
    std::getline(in, header);
    CHECK(header == "site,offdiag_mean,full_mean,step");
    std::size_t rows = 0;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 2);
}
