// SPDX-License-Identifier: Apache-2.0
//
// Ops and reverse-mode gradients. Every differentiable op is checked
// against the central finite-difference oracle in float64; the handful of
// hand-checkable values are asserted directly.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "gradcheck.hpp"
#include "loralab/ops.hpp"

using namespace loralab;
using loralab::testing::gradcheck_backward;

namespace {
Tensor<double> rand_t(Rng& rng, Shape shape, bool rg = true) {
    return sample_uniform<double>(rng, -1.0, 1.0, std::move(shape), rg);
}
}  // namespace

TEST_CASE("matmul values: identity and 1x2 * 2x1") {
    auto eye = Tensor<double>::from_data({2, 2}, {1, 0, 0, 1});
    auto m = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4});
    auto prod = matmul(eye, m);
    CHECK(std::vector<double>(prod.data().begin(), prod.data().end()) == std::vector<double>{1, 2, 3, 4});

    auto row = Tensor<double>::from_data({1, 2}, {1, 2});
    auto col = Tensor<double>::from_data({2, 1}, {3, 4});
    CHECK(matmul(row, col).item() == 11.0);
}

TEST_CASE("matmul rejects mismatched inner dimensions, naming both shapes") {
    auto a = Tensor<double>::zeros({2, 3});
    auto b = Tensor<double>::zeros({4, 2});
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2 x 3]"), std::invalid_argument);
    try {
        matmul(a, b);
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("[4 x 2]") != std::string::npos);
    }
}

TEST_CASE("gradient of sum(A*B) matches finite differences") {
    Rng rng(3);
    for (int trial = 0; trial < 3; ++trial) {
        auto a = rand_t(rng, {3, 4});
        auto b = rand_t(rng, {4, 2});
        auto res = gradcheck_backward({{"A", a}, {"B", b}}, [&] { return sum(matmul(a, b)); });
        CHECK(res.max_error < 1e-6);
    }
}

TEST_CASE("softmax: uniform logits, overflow stability, brute-force values") {
    auto u = softmax(Tensor<double>::from_data({3}, {0, 0, 0}), -1);
    for (double v : u.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));

    auto s = softmax(Tensor<double>::from_data({2}, {1000, 0}), -1);
    CHECK(std::abs(s.data()[0] - 1.0) < 1e-12);
    CHECK(std::abs(s.data()[1] - 0.0) < 1e-12);

    // Independent high-precision evaluation in long double.
    auto t = softmax(Tensor<double>::from_data({3}, {1, 2, 3}), -1);
    long double denom = 0;
    for (long double z : {1.0L, 2.0L, 3.0L}) denom += std::exp(z - 3.0L);
    const double want[3] = {double(std::exp(1.0L - 3.0L) / denom), double(std::exp(2.0L - 3.0L) / denom),
                            double(std::exp(3.0L - 3.0L) / denom)};
    for (int i = 0; i < 3; ++i) CHECK(std::abs(t.data()[i] - want[i]) < 1e-12);
}

TEST_CASE("softmax properties: normalization and shift invariance") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        auto x = rand_t(rng, {4, 6}, false);
        auto y = softmax(x, -1);
        for (std::int64_t i = 0; i < 4; ++i) {
            double s = 0;
            for (std::int64_t j = 0; j < 6; ++j) {
                const double v = y.data()[i * 6 + j];
                CHECK(v > 0);
                s += v;
            }
            CHECK(std::abs(s - 1.0) < 1e-12);
        }
        // Adding a constant to every logit leaves the output unchanged.
        auto shifted = add(x, Tensor<double>::full({4, 6}, 17.25));
        auto y2 = softmax(shifted, -1);
        for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(std::abs(y.data()[i] - y2.data()[i]) < 1e-12);
    }
}

TEST_CASE("softmax over a non-trailing axis") {
    auto x = Tensor<double>::from_data({2, 2}, {0, 1, 1, 0});
    auto y = softmax(x, 0);  // columns
    CHECK(y.data()[0] + y.data()[2] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(y.data()[1] + y.data()[3] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK_THROWS_AS(softmax(x, 2), std::invalid_argument);
}

TEST_CASE("dropout: degenerate p, eval identity, scaling contract") {
    Rng rng(9);
    auto x = rand_t(rng, {8, 8}, false);

    auto kept = dropout(x, 0.0, &rng, true);
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(kept.value.data()[i] == x.data()[i]);
    for (auto b : *kept.mask) CHECK(b == 1);

    auto eval = dropout(x, 0.2, nullptr, false);
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(eval.value.data()[i] == x.data()[i]);
    for (auto b : *eval.mask) CHECK(b == 1);

    // Training mode: every element is 0 or x/(1-p).
    const double p = 0.3;
    auto trained = dropout(x, p, &rng, true);
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        const double v = trained.value.data()[i];
        const bool zero = v == 0.0;
        const bool scaled = std::abs(v - x.data()[i] / (1.0 - p)) < 1e-15;
        CHECK((zero || scaled));
    }
}

TEST_CASE("dropout: Monte-Carlo mean preservation and keep fraction") {
    Rng rng(2024);
    auto ones = Tensor<double>::full({100000}, 1.0);
    for (double p : {0.1, 0.2, 0.5}) {
        auto d = dropout(ones, p, &rng, true);
        double sum = 0;
        std::int64_t kept = 0;
        for (std::int64_t i = 0; i < d.value.numel(); ++i) {
            sum += d.value.data()[i];
            kept += (*d.mask)[static_cast<std::size_t>(i)];
        }
        const double mean = sum / 1e5;
        CHECK(mean > 0.99);
        CHECK(mean < 1.01);
        const double frac = static_cast<double>(kept) / 1e5;
        CHECK(std::abs(frac - (1.0 - p)) < 0.01);
    }
}

TEST_CASE("dropout error paths") {
    Rng rng(1);
    auto x = Tensor<double>::zeros({4});
    CHECK_THROWS_AS(dropout(x, 1.0, &rng, true), std::invalid_argument);
    CHECK_THROWS_AS(dropout(x, 1.5, &rng, true), std::invalid_argument);
    CHECK_THROWS_AS(dropout(x, -0.1, &rng, true), std::invalid_argument);
    CHECK_THROWS_AS(dropout(x, 0.5, nullptr, true), std::invalid_argument);
}

TEST_CASE("elementwise values and broadcast") {
    auto a = Tensor<double>::from_data({2}, {1, 2});
    auto b = Tensor<double>::from_data({2}, {3, 4});
    auto s = add(a, b);
    CHECK(std::vector<double>(s.data().begin(), s.data().end()) == std::vector<double>{4, 6});

    // leading-dim broadcast: [2 x 3] + [3]
    auto m = Tensor<double>::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    auto bias = Tensor<double>::from_data({3}, {10, 20, 30});
    auto r = add(m, bias);
    CHECK(r.data()[0] == 11);
    CHECK(r.data()[5] == 36);

    CHECK_THROWS_AS(add(m, Tensor<double>::zeros({2})), std::invalid_argument);
    CHECK_THROWS_AS(mul(m, Tensor<double>::zeros({4, 3})), std::invalid_argument);
}

TEST_CASE("mse_loss: identical inputs give zero") {
    Rng rng(7);
    auto x = rand_t(rng, {5, 3}, false);
    CHECK(mse_loss(x, x).item() == 0.0);
}

TEST_CASE("cross_entropy: gradient matches finite differences on 3 classes") {
    Rng rng(17);
    auto logits = rand_t(rng, {4, 3});
    const std::vector<std::int64_t> labels{0, 2, 1, 2};
    auto res = gradcheck_backward({{"logits", logits}}, [&] { return cross_entropy(logits, labels); });
    CHECK(res.max_error < 1e-6);

    CHECK_THROWS_AS(cross_entropy(logits, {0, 1, 2, 3}), std::invalid_argument);
    CHECK_THROWS_AS(cross_entropy(logits, {0, -1, 2, 1}), std::invalid_argument);
    CHECK_THROWS_AS(cross_entropy(logits, {0, 1}), std::invalid_argument);
}

TEST_CASE("backward: all-ones for sum, analytic for sum(x*x)") {
    auto x = Tensor<double>::from_data({2, 3}, {1, -2, 3, 4, -5, 6}, true);
    auto l = sum(x);
    l.backward();
    for (double g : x.grad()) CHECK(g == 1.0);

    auto y = Tensor<double>::from_data({3}, {1, 2, 3}, true);
    auto l2 = sum(mul(y, y));
    l2.backward();
    CHECK(std::vector<double>(y.grad().begin(), y.grad().end()) == std::vector<double>{2, 4, 6});
}

TEST_CASE("backward requires a scalar loss; loss grad w.r.t. itself is 1") {
    auto x = Tensor<double>::zeros({2, 2}, true);
    CHECK_THROWS_AS(x.backward(), std::invalid_argument);

    auto l = sum(x);
    l.backward();
    CHECK(l.grad()[0] == 1.0);
}

TEST_CASE("repeated backward without zero_grad accumulates") {
    auto x = Tensor<double>::from_data({3}, {1, 2, 3}, true);
    {
        auto l = sum(mul(x, x));
        l.backward();
    }
    {
        auto l = sum(mul(x, x));
        l.backward();
    }
    CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{4, 8, 12});
    x.zero_grad();
    for (double g : x.grad()) CHECK(g == 0.0);
}

TEST_CASE("three-layer composition gradient matches finite differences") {
    Rng rng(23);
    auto w1 = rand_t(rng, {5, 4});
    auto w2 = rand_t(rng, {3, 5});
    auto w3 = rand_t(rng, {2, 3});
    auto x = rand_t(rng, {6, 4}, false);
    auto target = rand_t(rng, {6, 2}, false);
    auto forward = [&] {
        auto h1 = silu(matmul(x, transpose(w1)));
        auto h2 = silu(matmul(h1, transpose(w2)));
        return mse_loss(matmul(h2, transpose(w3)), target);
    };
    auto res = gradcheck_backward({{"w1", w1}, {"w2", w2}, {"w3", w3}}, forward);
    CHECK(res.max_error < 1e-6);
}

TEST_CASE("gradients of the structural and normalization ops") {
    Rng rng(31);
    auto x = rand_t(rng, {4, 6});
    auto w = rand_t(rng, {4});
    auto table = rand_t(rng, {5, 3});

    SUBCASE("transpose + slice + concat") {
        auto forward = [&] {
            auto t = transpose(x);                      // 6 x 4
            auto top = slice_rows(t, 0, 3);             // 3 x 4
            auto bottom = slice_rows(t, 3, 6);          // 3 x 4
            auto glued = concat_cols(std::vector<Tensor<double>>{top, bottom});  // 3 x 8
            auto left = slice_cols(glued, 0, 5);
            return sum(mul(left, left));
        };
        CHECK(gradcheck_backward({{"x", x}}, forward).max_error < 1e-7);
    }
    SUBCASE("scale_rows and reshape") {
        auto forward = [&] {
            auto scaled = scale_rows(x, w);
            return sum(mul(scaled, reshape(x, {4, 6})));
        };
        CHECK(gradcheck_backward({{"x", x}, {"w", w}}, forward).max_error < 1e-7);
    }
    SUBCASE("rmsnorm") {
        auto forward = [&] { return sum(mul(rmsnorm(x), x)); };
        CHECK(gradcheck_backward({{"x", x}}, forward).max_error < 1e-6);
    }
    SUBCASE("gather_rows") {
        const std::vector<std::int64_t> ids{0, 2, 4, 2};
        auto forward = [&] {
            auto rows = gather_rows(table, ids);
            return sum(mul(rows, rows));
        };
        CHECK(gradcheck_backward({{"table", table}}, forward).max_error < 1e-7);
        CHECK_THROWS_AS(gather_rows(table, {5}), std::invalid_argument);
    }
    SUBCASE("softmax and masked_softmax") {
        auto logits = rand_t(rng, {3, 5});
        auto keep = std::make_shared<Mask>(Mask{1, 0, 1, 1, 0, 0, 1, 1, 0, 1, 1, 1, 0, 0, 1});
        auto target = rand_t(rng, {3, 5}, false);
        CHECK(gradcheck_backward({{"logits", logits}},
                                 [&] { return mse_loss(softmax(logits, -1), target); })
                  .max_error < 1e-6);
        CHECK(gradcheck_backward({{"logits", logits}},
                                 [&] { return mse_loss(masked_softmax(logits, keep), target); })
                  .max_error < 1e-6);
        // Masked-out entries emit exactly zero.
        auto ms = masked_softmax(logits, keep);
        CHECK(ms.data()[1] == 0.0);
        CHECK(ms.data()[4] == 0.0);
    }
    SUBCASE("dropout backward with a frozen mask") {
        auto forward = [&] {
            Rng fixed(77);  // same mask on every evaluation
            auto d = dropout(x, 0.4, &fixed, true);
            return sum(mul(d.value, d.value));
        };
        CHECK(gradcheck_backward({{"x", x}}, forward).max_error < 1e-7);
    }
}

TEST_CASE("sub gradients, including the broadcast side") {
    Rng rng(37);
    auto x = rand_t(rng, {3, 4});
    auto bias = rand_t(rng, {4});
    auto forward = [&] {
        auto d = sub(x, bias);
        return sum(mul(d, d));
    };
    CHECK(gradcheck_backward({{"x", x}, {"bias", bias}}, forward).max_error < 1e-7);
}

TEST_CASE("property: reverse-mode vs finite differences across random op chains") {
    Rng rng(101);
    for (int trial = 0; trial < 5; ++trial) {
        auto a = rand_t(rng, {3, 5});
        auto b = rand_t(rng, {5, 4});
        auto bias = rand_t(rng, {4});
        auto target = rand_t(rng, {3, 4}, false);
        auto forward = [&] {
            auto h = add(matmul(a, b), bias);
            auto act = silu(softmax(h, -1));
            return mse_loss(act, target);
        };
        auto res = gradcheck_backward({{"a", a}, {"b", b}, {"bias", bias}}, forward);
        CHECK(res.max_error < 1e-5);
    }
}
