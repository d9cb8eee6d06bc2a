// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "json.hpp"

#include "loralab/tasks.hpp"

using namespace loralab;

namespace {

TaskSuiteConfig teacher_cfg(std::uint64_t seed, double lambda, std::int64_t d = 8, double noise = 0.05,
                            std::int64_t train_size = 64, std::int64_t eval_size = 32) {
    TaskSuiteConfig cfg;
    cfg.kind = TaskKind::TeacherRegression;
    cfg.n_tasks = 3;
    cfg.d_model = d;
    cfg.lambda = lambda;
    cfg.noise_std = noise;
    cfg.train_size = train_size;
    cfg.eval_size = eval_size;
    cfg.seed = seed;
    return cfg;
}

TaskSuiteConfig sequence_cfg(std::uint64_t seed, std::int64_t n_tasks = 4) {
    TaskSuiteConfig cfg;
    cfg.kind = TaskKind::SequenceClassify;
    cfg.n_tasks = n_tasks;
    cfg.vocab = 16;
    cfg.seq_len = 6;
    cfg.train_size = 64;
    cfg.eval_size = 32;
    cfg.seed = seed;
    return cfg;
}

double teacher_cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

double avg_pairwise_teacher_sim(const TaskSuite& suite) {
    double sum = 0;
    int cnt = 0;
    for (std::size_t i = 0; i < suite.teachers.size(); ++i)
        for (std::size_t j = i + 1; j < suite.teachers.size(); ++j) {
            sum += teacher_cosine(suite.teachers[i], suite.teachers[j]);
            ++cnt;
        }
    return sum / cnt;
}

// Least-squares fit of y = M x per task via Gauss-Jordan on the normal
// equations; test-only oracle.
std::vector<double> fit_linear(const std::vector<const Example*>& ex, std::int64_t d) {
    std::vector<double> xtx(d * d, 0.0), xty(d * d, 0.0);
    for (const auto* e : ex) {
        for (std::int64_t i = 0; i < d; ++i)
            for (std::int64_t j = 0; j < d; ++j) {
                xtx[i * d + j] += e->input[i] * e->input[j];
                xty[i * d + j] += e->input[i] * e->target[j];
            }
    }
    // Solve xtx * Z = xty, then M = Z^T.
    std::vector<double> aug(xtx);
    std::vector<double> rhs(xty);
    for (std::int64_t col = 0; col < d; ++col) {
        std::int64_t piv = col;
        for (std::int64_t row = col + 1; row < d; ++row)
            if (std::abs(aug[row * d + col]) > std::abs(aug[piv * d + col])) piv = row;
        for (std::int64_t k = 0; k < d; ++k) {
            std::swap(aug[piv * d + k], aug[col * d + k]);
            std::swap(rhs[piv * d + k], rhs[col * d + k]);
        }
        const double diag = aug[col * d + col];
        for (std::int64_t k = 0; k < d; ++k) {
            aug[col * d + k] /= diag;
            rhs[col * d + k] /= diag;
        }
        for (std::int64_t row = 0; row < d; ++row) {
            if (row == col) continue;
            const double f = aug[row * d + col];
            for (std::int64_t k = 0; k < d; ++k) {
                aug[row * d + k] -= f * aug[col * d + k];
                rhs[row * d + k] -= f * rhs[col * d + k];
            }
        }
    }
    std::vector<double> m(d * d);
    for (std::int64_t i = 0; i < d; ++i)
        for (std::int64_t j = 0; j < d; ++j) m[j * d + i] = rhs[i * d + j];
    return m;
}

}  // namespace

TEST_CASE("lambda=1 collapses every task onto the shared teacher") {
    auto suite = gen_teacher_suite(teacher_cfg(1, 1.0));
    for (std::size_t t = 1; t < suite.teachers.size(); ++t) CHECK(suite.teachers[0] == suite.teachers[t]);
}

TEST_CASE("lambda=0 with zero noise: a per-task linear fit reaches zero eval error") {
    auto suite = gen_teacher_suite(teacher_cfg(2, 0.0, 8, 0.0));
    for (std::int64_t task = 0; task < 3; ++task) {
        std::vector<const Example*> train_ex;
        for (const auto& e : suite.train.examples)
            if (e.task_id == task) train_ex.push_back(&e);
        REQUIRE(train_ex.size() >= 16);
        const auto m = fit_linear(train_ex, 8);
        double worst = 0;
        for (const auto& e : suite.eval.examples) {
            if (e.task_id != task) continue;
            for (std::int64_t row = 0; row < 8; ++row) {
                double y = 0;
                for (std::int64_t col = 0; col < 8; ++col) y += m[row * 8 + col] * e.input[col];
                worst = std::max(worst, std::abs(y - e.target[row]));
            }
        }
        CHECK(worst < 1e-9);
    }
}

TEST_CASE("intermediate lambda sits strictly between the extremes") {
    const double lo = avg_pairwise_teacher_sim(gen_teacher_suite(teacher_cfg(3, 0.0, 64)));
    const double mid = avg_pairwise_teacher_sim(gen_teacher_suite(teacher_cfg(3, 0.5, 64)));
    const double hi = avg_pairwise_teacher_sim(gen_teacher_suite(teacher_cfg(3, 1.0, 64)));
    CHECK(mid > lo);
    CHECK(mid < hi);
    CHECK(hi == doctest::Approx(1.0));
}

TEST_CASE("average teacher similarity is non-decreasing in lambda (5 seeds)") {
    for (std::uint64_t seed = 10; seed < 15; ++seed) {
        double prev = -2.0;
        for (double lambda : {0.0, 0.25, 0.5, 0.75, 1.0}) {
            const double sim = avg_pairwise_teacher_sim(gen_teacher_suite(teacher_cfg(seed, lambda, 64)));
            CHECK(sim >= prev - 1e-9);
            prev = sim;
        }
    }
}

TEST_CASE("sequence rules produce the documented labels") {
    CHECK(sequence_rule_label(0, {3, 1, 4}, 5) == 4);   // copy last
    CHECK(sequence_rule_label(1, {3, 1, 4}, 5) == 3);   // first token
    CHECK(sequence_rule_label(2, {3, 4}, 5) == 2);      // (3+4) mod 5
    CHECK(sequence_rule_label(3, {0, 1, 4, 4}, 5) == 0);  // two tokens >= 3 -> even
    CHECK(sequence_rule_label(3, {0, 1, 4}, 5) == 1);     // one token >= 3 -> odd
    CHECK_THROWS_AS(sequence_rule_label(9, {1}, 5), std::invalid_argument);
}

TEST_CASE("sequence suite: labels in range and majority class below 0.55") {
    TaskSuiteConfig cfg = sequence_cfg(4);
    cfg.train_size = 1000;
    auto suite = gen_sequence_suite(cfg);
    std::map<std::int64_t, std::map<std::int64_t, int>> hist;
    std::map<std::int64_t, int> totals;
    for (const auto& e : suite.train.examples) {
        CHECK(e.label >= 0);
        CHECK(e.label < cfg.vocab);
        CHECK(e.tokens.size() == std::size_t(cfg.seq_len));
        hist[e.task_id][e.label] += 1;
        totals[e.task_id] += 1;
    }
    for (const auto& [task, labels] : hist) {
        int top = 0;
        for (const auto& [label, n] : labels) top = std::max(top, n);
        CHECK(double(top) / double(totals[task]) <= 0.55);
    }
}

TEST_CASE("asking for more tasks than rules is an error") {
    CHECK_THROWS_AS(gen_sequence_suite(sequence_cfg(1, 5)), std::invalid_argument);
}

TEST_CASE("every task appears in both splits; generation is deterministic") {
    auto a = gen_teacher_suite(teacher_cfg(5, 0.5));
    auto b = gen_teacher_suite(teacher_cfg(5, 0.5));
    for (const auto* split : {&a.train, &a.eval}) {
        std::set<std::int64_t> seen;
        for (const auto& e : split->examples) seen.insert(e.task_id);
        CHECK(seen == std::set<std::int64_t>{0, 1, 2});
    }
    REQUIRE(a.train.examples.size() == b.train.examples.size());
    for (std::size_t i = 0; i < a.train.examples.size(); ++i) {
        CHECK(a.train.examples[i].task_id == b.train.examples[i].task_id);
        CHECK(a.train.examples[i].input == b.train.examples[i].input);
    }
    // Train and eval inputs are disjoint draws.
    CHECK(a.train.examples[0].input != a.eval.examples[0].input);
}

TEST_CASE("epoch batches: single-batch case, determinism, exact histogram") {
    auto suite = gen_teacher_suite(teacher_cfg(6, 0.5));
    const std::int64_t n = static_cast<std::int64_t>(suite.train.examples.size());

    auto all = epoch_batches(suite.train, n, 7, 0);
    REQUIRE(all.size() == 1);
    CHECK(static_cast<std::int64_t>(all[0].size()) == n);

    auto e1 = epoch_batches(suite.train, 16, 7, 0);
    auto e1_again = epoch_batches(suite.train, 16, 7, 0);
    CHECK(e1 == e1_again);
    auto e2 = epoch_batches(suite.train, 16, 7, 1);
    CHECK(e1 != e2);  // epochs reshuffle

    // One epoch covers the dataset exactly once.
    std::map<std::int64_t, int> hist, want;
    for (const auto& e : suite.train.examples) want[e.task_id] += 1;
    for (const auto& batch : e1)
        for (auto i : batch_task_ids(suite.train, batch)) hist[i] += 1;
    CHECK(hist == want);
}

TEST_CASE("batches interleave tasks") {
    auto suite = gen_teacher_suite(teacher_cfg(8, 0.5, 8, 0.05, 128, 32));
    auto batches = epoch_batches(suite.train, 32, 9, 0);
    // With 3 tasks uniformly shuffled, a 32-row batch containing a single
    // task has probability ~ (1/3)^31; require every batch to be mixed.
    for (const auto& batch : batches) {
        std::set<std::int64_t> tasks;
        for (auto t : batch_task_ids(suite.train, batch)) tasks.insert(t);
        CHECK(tasks.size() >= 2);
    }
}

TEST_CASE("jsonl export: one parseable line per example") {
    auto suite = gen_sequence_suite(sequence_cfg(10, 3));
    const std::string path = "/tmp/loralab_test_tasks.jsonl";
    export_jsonl(suite.train, path);
    std::ifstream in(path);
    REQUIRE(in.good());
    std::string line;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        auto j = nlohmann::json::parse(line);
        CHECK(j.at("split") == "train");
        CHECK(j.at("tokens").size() == std::size_t(suite.config.seq_len));
        const auto& ex = suite.train.examples.at(rows);
        CHECK(j.at("task_id").get<std::int64_t>() == ex.task_id);
        CHECK(j.at("label").get<std::int64_t>() == ex.label);
        ++rows;
    }
    CHECK(rows == suite.train.examples.size());
}

TEST_CASE("config validation") {
    TaskSuiteConfig cfg = teacher_cfg(1, 0.5);
    cfg.lambda = 1.5;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = teacher_cfg(1, 0.5);
    cfg.n_tasks = 1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = sequence_cfg(1);
    cfg.vocab = 3;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = sequence_cfg(1);
    cfg.seq_len = 1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
