// SPDX-License-Identifier: Apache-2.0
//
// Training loop: AdamW over the adapter tensors, linear warmup followed by
// cosine decay to zero, per-step loss / gradient-norm telemetry, per-epoch
// per-task evaluation. Only tensors with a gradient buffer are ever
// updated; the frozen backbone is untouched by construction.

#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "loralab/backbone.hpp"
#include "loralab/format.hpp"
#include "loralab/tasks.hpp"

namespace loralab {

struct TrainConfig {
    double learning_rate = 2e-4;
    double warmup_ratio = 0.03;
    std::int64_t epochs = 1;
    std::int64_t max_steps = 0;  // 0 = run every epoch to completion
    std::int64_t batch_size = 16;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.0;
    double max_grad_norm = 0.0;  // 0 = no clipping
    std::int64_t grad_log_every = 10;
    std::uint64_t seed = 0;

    void validate() const {
        // lr = 0 is allowed as an explicit no-op run (zero step size).
        if (!(learning_rate >= 0)) throw std::invalid_argument("train.learning_rate: must be >= 0");
        if (warmup_ratio < 0 || warmup_ratio >= 1)
            throw std::invalid_argument("train.warmup_ratio: must satisfy 0 <= ratio < 1");
        if (epochs < 1) throw std::invalid_argument("train.epochs: must be >= 1");
        if (max_steps < 0) throw std::invalid_argument("train.max_steps: must be >= 0");
        if (batch_size < 1) throw std::invalid_argument("train.batch_size: must be >= 1");
        if (grad_log_every < 1) throw std::invalid_argument("train.grad_log_every: must be >= 1");
        if (max_grad_norm < 0) throw std::invalid_argument("train.max_grad_norm: must be >= 0");
        if (weight_decay < 0) throw std::invalid_argument("train.weight_decay: must be >= 0");
    }
};

/// Learning rate after `step` completed optimizer steps out of
/// `total_steps`: linear warmup from 0 over ceil(warmup_ratio * total)
/// steps, then cosine decay reaching 0 at total_steps.
inline double lr_at(const TrainConfig& cfg, std::int64_t step, std::int64_t total_steps) {
    if (step < 0 || step > total_steps)
        throw std::invalid_argument("lr_at: step " + std::to_string(step) + " outside [0, " +
                                    std::to_string(total_steps) + "]");
    const std::int64_t warmup =
        static_cast<std::int64_t>(std::ceil(cfg.warmup_ratio * static_cast<double>(total_steps)));
    if (warmup > 0 && step < warmup)
        return cfg.learning_rate * static_cast<double>(step) / static_cast<double>(warmup);
    if (total_steps == warmup) return step < total_steps ? cfg.learning_rate : 0.0;
    const double progress = static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
    return cfg.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

struct SiteGradNorm {
    std::string site;
    double norm = 0.0;
};

struct StepRecord {
    std::int64_t step = 0;  // 1-based
    double lr = 0.0;
    double loss = 0.0;
    double grad_norm = 0.0;
    std::vector<SiteGradNorm> site_norms;
};

struct EvalRecord {
    std::int64_t epoch = 0;
    std::int64_t task_id = 0;
    double metric = 0.0;
};

struct MetricsLog {
    std::vector<StepRecord> steps;
    std::vector<EvalRecord> evals;
};

/// Training aborted on a non-finite loss; carries the offending step.
struct TrainAbort : std::runtime_error {
    std::int64_t step;
    explicit TrainAbort(std::int64_t s)
        : std::runtime_error("training aborted: non-finite loss at step " + std::to_string(s)), step(s) {}
};

/// Global L2 norm over all gradient buffers, plus per-site norms (site =
/// name prefix before the first '.'). Every tensor must carry a gradient
/// buffer.
template <typename T>
std::pair<double, std::vector<SiteGradNorm>> grad_norms(
    const std::vector<std::pair<std::string, Tensor<T>>>& trainables) {
    double total = 0.0;
    std::map<std::string, double> by_site;
    for (const auto& [name, t] : trainables) {
        if (!t.has_grad()) throw std::logic_error("grad_norm: tensor '" + name + "' has no gradient");
        double s = 0.0;
        for (T g : t.grad()) s += static_cast<double>(g) * static_cast<double>(g);
        total += s;
        by_site[name.substr(0, name.find('.'))] += s;
    }
    std::vector<SiteGradNorm> sites;
    sites.reserve(by_site.size());
    for (const auto& [site, s] : by_site) sites.push_back({site, std::sqrt(s)});
    return {std::sqrt(total), std::move(sites)};
}

template <typename T>
double grad_norm(const std::vector<std::pair<std::string, Tensor<T>>>& trainables) {
    return grad_norms(trainables).first;
}

struct EvalMetrics {
    std::map<std::int64_t, double> per_task;  // MSE for regression, accuracy for classification
    double macro = 0.0;
};

inline double macro_average(const std::map<std::int64_t, double>& per_task) {
    double s = 0.0;
    for (const auto& [task, v] : per_task) s += v;
    return s / static_cast<double>(per_task.size());
}

/// Per-task eval metric in eval mode: MSE (regression) or accuracy
/// (classification), plus the macro average.
template <typename T>
EvalMetrics evaluate(const AdaptedModel<T>& model, const MultiTaskDataset& ds) {
    std::map<std::int64_t, double> acc_sum;
    std::map<std::int64_t, std::int64_t> count;
    const std::int64_t bs = 64;
    std::vector<std::int64_t> idx(ds.examples.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t pos = 0; pos < idx.size(); pos += static_cast<std::size_t>(bs)) {
        std::vector<std::int64_t> batch(idx.begin() + static_cast<std::ptrdiff_t>(pos),
                                        idx.begin() + static_cast<std::ptrdiff_t>(
                                                          std::min(idx.size(), pos + static_cast<std::size_t>(bs))));
        const auto task_ids = batch_task_ids(ds, batch);
        if (ds.kind == TaskKind::TeacherRegression) {
            Tensor<T> x = batch_features<T>(ds, batch);
            Tensor<T> y = batch_targets<T>(ds, batch);
            Tensor<T> pred = model.forward_features(x, /*training=*/false, nullptr);
            const std::int64_t d = ds.d_model;
            auto pd = pred.data();
            auto td = y.data();
            for (std::size_t i = 0; i < batch.size(); ++i) {
                double se = 0.0;
                for (std::int64_t j = 0; j < d; ++j) {
                    const double diff = static_cast<double>(pd[static_cast<std::int64_t>(i) * d + j]) -
                                        static_cast<double>(td[static_cast<std::int64_t>(i) * d + j]);
                    se += diff * diff;
                }
                acc_sum[task_ids[i]] += se / static_cast<double>(d);
                count[task_ids[i]] += 1;
            }
        } else {
            auto tokens = batch_tokens(ds, batch);
            auto labels = batch_labels(ds, batch);
            Tensor<T> logits = model.forward_tokens(tokens, /*training=*/false, nullptr);
            const std::int64_t v = logits.dim(1);
            auto ld = logits.data();
            for (std::size_t i = 0; i < batch.size(); ++i) {
                std::int64_t best = 0;
                for (std::int64_t j = 1; j < v; ++j)
                    if (ld[static_cast<std::int64_t>(i) * v + j] > ld[static_cast<std::int64_t>(i) * v + best])
                        best = j;
                acc_sum[task_ids[i]] += best == labels[i] ? 1.0 : 0.0;
                count[task_ids[i]] += 1;
            }
        }
    }
    EvalMetrics out;
    for (std::int64_t t = 0; t < ds.n_tasks; ++t) {
        if (count[t] == 0)
            throw std::invalid_argument("evaluate: task " + std::to_string(t) + " has no examples in this split");
        out.per_task[t] = acc_sum[t] / static_cast<double>(count[t]);
    }
    out.macro = macro_average(out.per_task);
    return out;
}

namespace detail {

inline void append_metrics_csv(std::ofstream& out, const StepRecord& rec) {
    for (const auto& site : rec.site_norms) {
        out << rec.step << ',' << fmt_double(rec.lr) << ',' << fmt_double(rec.loss) << ','
            << fmt_double(rec.grad_norm) << ',' << site.site << ',' << fmt_double(site.norm) << '\n';
    }
}

}  // namespace detail

/// Runs the optimization loop over the suite's train split, evaluating the
/// eval split after every epoch. When csv_path is non-empty the metrics
/// stream is appended there after every grad_log_every steps (header
/// written first).
template <typename T>
MetricsLog train(AdaptedModel<T>& model, const TaskSuite& suite, const TrainConfig& cfg,
                 const std::string& csv_path = "") {
    cfg.validate();
    auto trainables = model.trainable_tensors();
    if (trainables.empty()) throw std::invalid_argument("train: model has no trainable tensors");

    const MultiTaskDataset& ds = suite.train;
    if (ds.examples.empty()) throw std::invalid_argument("train: empty training split");
    const std::int64_t steps_per_epoch =
        (static_cast<std::int64_t>(ds.examples.size()) + cfg.batch_size - 1) / cfg.batch_size;
    // max_steps > 0 runs exactly that many steps, re-shuffling epochs as
    // needed; otherwise `epochs` full passes.
    const std::int64_t total_steps = cfg.max_steps > 0 ? cfg.max_steps : cfg.epochs * steps_per_epoch;
    if (total_steps < 1) throw std::invalid_argument("train: no steps to run");

    // AdamW state.
    std::vector<std::vector<double>> m(trainables.size()), v(trainables.size());
    for (std::size_t i = 0; i < trainables.size(); ++i) {
        m[i].assign(static_cast<std::size_t>(trainables[i].second.numel()), 0.0);
        v[i].assign(static_cast<std::size_t>(trainables[i].second.numel()), 0.0);
    }

    std::ofstream csv;
    if (!csv_path.empty()) {
        csv.open(csv_path, std::ios::app);
        if (!csv) throw std::runtime_error("train: cannot open metrics CSV '" + csv_path + "'");
        csv << "step,lr,loss,grad_norm,site,site_grad_norm\n";
    }

    Rng dropout_rng(derive_seed(cfg.seed, "train/dropout"));
    MetricsLog log;
    std::int64_t step = 0;
    bool done = false;
    for (std::int64_t epoch = 0; !done && (cfg.max_steps > 0 || epoch < cfg.epochs); ++epoch) {
        for (const auto& batch : epoch_batches(ds, cfg.batch_size, cfg.seed, epoch)) {
            if (step >= total_steps) {
                done = true;
                break;
            }
            const double lr = lr_at(cfg, step, total_steps);  // completed-step count
            ++step;

            Tensor<T> loss;
            if (ds.kind == TaskKind::TeacherRegression) {
                Tensor<T> pred = model.forward_features(batch_features<T>(ds, batch), true, &dropout_rng);
                loss = mse_loss(pred, batch_targets<T>(ds, batch));
            } else {
                Tensor<T> logits = model.forward_tokens(batch_tokens(ds, batch), true, &dropout_rng);
                loss = cross_entropy(logits, batch_labels(ds, batch));
            }
            const double loss_val = static_cast<double>(loss.item());
            if (!std::isfinite(loss_val)) throw TrainAbort(step);
            loss.backward();

            auto [gnorm, site_norms] = grad_norms(trainables);
            double clip_scale = 1.0;
            if (cfg.max_grad_norm > 0 && gnorm > cfg.max_grad_norm) clip_scale = cfg.max_grad_norm / gnorm;

            const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
            for (std::size_t i = 0; i < trainables.size(); ++i) {
                auto data = trainables[i].second.mutable_data();
                auto grad = trainables[i].second.grad();
                for (std::size_t j = 0; j < data.size(); ++j) {
                    const double g = static_cast<double>(grad[j]) * clip_scale;
                    m[i][j] = cfg.beta1 * m[i][j] + (1.0 - cfg.beta1) * g;
                    v[i][j] = cfg.beta2 * v[i][j] + (1.0 - cfg.beta2) * g * g;
                    const double mh = m[i][j] / bc1;
                    const double vh = v[i][j] / bc2;
                    const double upd = mh / (std::sqrt(vh) + cfg.adam_eps) +
                                       cfg.weight_decay * static_cast<double>(data[j]);
                    data[j] -= static_cast<T>(lr * upd);
                }
            }
            model.zero_grad();

            StepRecord rec{step, lr, loss_val, gnorm, std::move(site_norms)};
            if (csv.is_open() && (step % cfg.grad_log_every == 0 || step == total_steps))
                detail::append_metrics_csv(csv, rec);
            log.steps.push_back(std::move(rec));
        }
        EvalMetrics em = evaluate(model, suite.eval);
        for (const auto& [task, metric] : em.per_task) log.evals.push_back({epoch, task, metric});
    }
    return log;
}

}  // namespace loralab
