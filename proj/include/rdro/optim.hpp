#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "losses.hpp"
#include "policy.hpp"
#include "world.hpp"
#include "world_io.hpp"

namespace rdro {

enum class Method { RDRO, DDRO_Raw, DDRO_Stabilized };
enum class Schedule { Cosine, Constant };

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;
};

struct TrainConfig {
    Method method = Method::RDRO;
    double alpha = 0.5;
    double beta = 0.0;
    bool kl_in_grad = false;
    double learning_rate = 1e-2;
    std::size_t batch_size = 64;
    std::size_t epochs = 200;
    double warmup_ratio = 0.1;
    double clip_norm = 1.0;  // <= 0 disables clipping
    std::uint64_t seed = 0;
    bool exact_mode = false;
    Schedule schedule = Schedule::Cosine;
    AdamHyper adam{};
    double init_scale = 0.0;
    std::vector<std::size_t> frozen_prompts;  // rows excluded from updates

    void validate() const {
        if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
        if (!(beta >= 0.0)) throw std::invalid_argument("beta must be >= 0");
        if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be > 0");
        if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) throw std::invalid_argument("warmup ratio must lie in [0, 1)");
        if (!exact_mode && batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
        if (!(init_scale >= 0.0)) throw std::invalid_argument("init scale must be >= 0");
    }

    bool clipping() const noexcept { return clip_norm > 0.0; }

    /// Optimizer settings of the large-model runs: lr 5e-7, batch 128, one epoch.
    static TrainConfig large_model_preset() {
        TrainConfig c;
        c.learning_rate = 5e-7;
        c.batch_size = 128;
        c.epochs = 1;
        c.clip_norm = 1.0;
        c.warmup_ratio = 0.1;
        return c;
    }
};

struct StepMetrics {
    std::size_t step = 0;
    double lr = 0.0;
    double loss = 0.0;
    double grad_norm_preclip = 0.0;
    double grad_norm_postclip = 0.0;
    double mean_preferred_logratio = 0.0;
    double mean_nonpreferred_logratio = 0.0;
    double margin = 0.0;
    std::size_t clamp_events = 0;
};

struct FailureRecord {
    std::size_t step = 0;
    std::string message;
};

struct RunLog {
    TrainConfig config;
    std::string world_fingerprint;
    std::vector<StepMetrics> steps;
    std::string checkpoint;
    std::optional<FailureRecord> failure;

    std::size_t total_clamp_events() const {
        std::size_t s = 0;
        for (const auto& m : steps) s += m.clamp_events;
        return s;
    }
    double max_preclip_norm() const {
        double s = 0.0;
        for (const auto& m : steps) s = std::max(s, m.grad_norm_preclip);
        return s;
    }
};

/// Linear warmup over ceil(warmup_ratio * total) steps, then cosine decay to 0.
inline double lr_schedule(std::size_t step, std::size_t total_steps, double warmup_ratio, double base_lr) {
    if (total_steps == 0) throw std::invalid_argument("lr schedule needs at least one step");
    if (step > total_steps) throw std::invalid_argument("step beyond the end of the schedule");
    const auto warmup = static_cast<std::size_t>(std::ceil(warmup_ratio * static_cast<double>(total_steps)));
    if (step < warmup) return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
    if (warmup >= total_steps) return base_lr;
    const double progress = static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

struct AdamState {
    Table m;
    Table v;
    std::size_t t = 0;

    AdamState() = default;
    AdamState(std::size_t rows, std::size_t cols) : m(rows, cols), v(rows, cols) {}
};

/// One AdamW update with bias correction and decoupled weight decay.
inline void adam_step(AdamState& state, Table& params, const Table& grad, double lr, const AdamHyper& h = {}) {
    if (!state.m.same_shape(grad) || !params.same_shape(grad))
        throw std::invalid_argument("adam state, parameters and gradient differ in shape");
    for (std::size_t i = 0; i < grad.size(); ++i)
        if (!std::isfinite(grad.flat()[i]))
            throw std::domain_error("non-finite gradient entry " + std::to_string(i) + " at optimizer step " +
                                    std::to_string(state.t + 1));
    state.t += 1;
    const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < grad.size(); ++i) {
        const double g = grad.flat()[i];
        double& m = state.m.flat()[i];
        double& v = state.v.flat()[i];
        m = h.beta1 * m + (1.0 - h.beta1) * g;
        v = h.beta2 * v + (1.0 - h.beta2) * g * g;
        double& p = params.flat()[i];
        p -= lr * h.weight_decay * p;
        p -= lr * (m / bc1) / (std::sqrt(v / bc2) + h.epsilon);
    }
}

struct ClipResult {
    Table gradient;
    double preclip_norm = 0.0;
};

/// Rescales the gradient to `max_norm` when its global L2 norm exceeds it.
inline ClipResult clip_gradient(Table gradient, double max_norm) {
    if (!(max_norm > 0.0)) throw std::invalid_argument("clip norm must be > 0");
    const double norm = frobenius_norm(gradient);
    if (norm > max_norm) gradient *= max_norm / norm;
    return {std::move(gradient), norm};
}

/// Epoch-wise shuffled mini-batches. Each step takes an even share of the
/// shuffled preferred and non-preferred lists, so every batch keeps the
/// dataset's label proportions and each sample is used once per epoch.
class BatchSampler {
public:
    BatchSampler(const PreferenceDataset& data, std::size_t batch_size, std::uint64_t seed)
        : data_(&data), rng_(derive_seed(seed, 0xba7c4)) {
        if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
        for (std::size_t i = 0; i < data.size(); ++i)
            (data.samples()[i].label == Label::Preferred ? pos_ : neg_).push_back(i);
        steps_ = data.empty() ? 0 : (data.size() + batch_size - 1) / batch_size;
    }

    std::size_t steps_per_epoch() const noexcept { return steps_; }

    std::vector<PreferenceSample> next() {
        if (steps_ == 0) return {};
        if (cursor_ == 0) {
            std::shuffle(pos_.begin(), pos_.end(), rng_);
            std::shuffle(neg_.begin(), neg_.end(), rng_);
        }
        std::vector<PreferenceSample> batch;
        auto take = [&](const std::vector<std::size_t>& idx) {
            const std::size_t lo = cursor_ * idx.size() / steps_;
            const std::size_t hi = (cursor_ + 1) * idx.size() / steps_;
            for (std::size_t i = lo; i < hi; ++i) batch.push_back(data_->samples()[idx[i]]);
        };
        take(pos_);
        take(neg_);
        cursor_ = (cursor_ + 1) % steps_;
        return batch;
    }

private:
    const PreferenceDataset* data_;
    std::mt19937_64 rng_;
    std::vector<std::size_t> pos_;
    std::vector<std::size_t> neg_;
    std::size_t steps_ = 0;
    std::size_t cursor_ = 0;
};

/// Method loss and gradient under the given weights.
inline Evaluation method_evaluate(const TrainConfig& cfg, const PolicyLogits& policy, const ReferenceLogProbs& ref,
                                  const SampleWeights& w, std::span<const double> prompt_dist) {
    switch (cfg.method) {
        case Method::RDRO:
            return rdro_evaluate(policy, ref, w, cfg.alpha);
        case Method::DDRO_Raw:
            return ddro_objective(policy, ref, w, cfg.alpha, cfg.beta, DdroVariant::Raw, cfg.kl_in_grad, prompt_dist);
        case Method::DDRO_Stabilized:
            return ddro_objective(policy, ref, w, cfg.alpha, cfg.beta, DdroVariant::Stabilized, cfg.kl_in_grad,
                                  prompt_dist);
    }
    throw std::logic_error("unknown method");
}

namespace detail {

inline double weighted_mean_log_ratio(const Table& weights, const Table& t) {
    double total = 0.0, acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double w = weights.flat()[i];
        if (w == 0.0) continue;
        total += w;
        acc += w * t.flat()[i];
    }
    return total > 0.0 ? acc / total : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace detail

struct TrainResult {
    PolicyLogits policy;
    RunLog log;
};

/// Mini-batch (or exact-expectation) training loop: evaluate the method
/// objective, clip, schedule the learning rate and take an AdamW step. The
/// reference is the world's mixture and stays frozen throughout. A
/// non-finite loss or gradient stops the run with a failure record.
inline TrainResult train(const WorldSpec& world, const PreferenceDataset& data, const TrainConfig& cfg) {
    cfg.validate();
    world.validate();
    data.check_bounds(world.num_prompts, world.num_responses);
    if (!cfg.exact_mode && data.empty()) throw std::invalid_argument("training needs a nonempty dataset");
    for (std::size_t x : cfg.frozen_prompts)
        if (x >= world.num_prompts) throw std::out_of_range("frozen prompt out of range");

    const auto ref = ReferenceLogProbs::from_probabilities(reference_policy(world));
    TrainResult out{init_policy(ref, cfg.init_scale, cfg.seed), RunLog{cfg, world_fingerprint(world), {}, {}, {}}};
    const Table frozen_logits = out.policy.logits();

    std::optional<BatchSampler> sampler;
    SampleWeights exact;
    std::size_t steps_per_epoch = 1;
    if (cfg.exact_mode) {
        exact = exact_weights(world);
    } else {
        sampler.emplace(data, cfg.batch_size, cfg.seed);
        steps_per_epoch = sampler->steps_per_epoch();
    }
    const std::size_t total = cfg.epochs * steps_per_epoch;
    AdamState adam(world.num_prompts, world.num_responses);

    for (std::size_t step = 0; step < total; ++step) {
        const SampleWeights w = cfg.exact_mode ? exact
                                               : [&] {
                                                     const auto batch = sampler->next();
                                                     return weights_from_samples(batch, world.num_prompts,
                                                                                 world.num_responses);
                                                 }();
        Evaluation ev = method_evaluate(cfg, out.policy, ref, w, world.prompt_dist);
        if (!std::isfinite(ev.loss.total)) {
            out.log.failure = FailureRecord{step, "non-finite loss " + std::to_string(ev.loss.total)};
            break;
        }
        for (std::size_t x : cfg.frozen_prompts)
            for (double& g : ev.gradient.row(x)) g = 0.0;

        StepMetrics m;
        m.step = step;
        m.loss = ev.loss.total;
        m.clamp_events = ev.loss.clamp_events;
        const Table t = log_ratio_table(out.policy, ref);
        m.mean_preferred_logratio = detail::weighted_mean_log_ratio(w.preferred, t);
        m.mean_nonpreferred_logratio = detail::weighted_mean_log_ratio(w.nonpreferred, t);
        m.margin = m.mean_preferred_logratio - m.mean_nonpreferred_logratio;

        Table grad;
        if (cfg.clipping()) {
            auto clipped = clip_gradient(std::move(ev.gradient), cfg.clip_norm);
            m.grad_norm_preclip = clipped.preclip_norm;
            grad = std::move(clipped.gradient);
        } else {
            m.grad_norm_preclip = frobenius_norm(ev.gradient);
            grad = std::move(ev.gradient);
        }
        m.grad_norm_postclip = frobenius_norm(grad);
        m.lr = cfg.schedule == Schedule::Cosine ? lr_schedule(step, total, cfg.warmup_ratio, cfg.learning_rate)
                                                : cfg.learning_rate;
        try {
            adam_step(adam, out.policy.logits(), grad, m.lr, cfg.adam);
        } catch (const std::domain_error& e) {
            out.log.failure = FailureRecord{step, e.what()};
            break;
        }
        for (std::size_t x : cfg.frozen_prompts)
            std::copy(frozen_logits.row(x).begin(), frozen_logits.row(x).end(), out.policy.logits().row(x).begin());
        out.log.steps.push_back(m);
    }
    return out;
}

struct StabilityEntry {
    Method method = Method::RDRO;
    double max_preclip_norm = 0.0;
    std::size_t clamp_events = 0;
    double final_margin = 0.0;
    bool finite_throughout = true;
    RunLog log;
};

struct StabilityReport {
    std::vector<StabilityEntry> entries;

    const StabilityEntry& find(Method m) const {
        for (const auto& e : entries)
            if (e.method == m) return e;
        throw std::out_of_range("method not present in stability report");
    }
};

/// Trains each configuration on the same data and summarizes gradient-norm
/// peaks, clamp totals and final log-ratio margins per method.
inline StabilityReport compare_stability(const WorldSpec& world, const PreferenceDataset& data,
                                         std::span<const TrainConfig> configs) {
    for (const auto& c : configs)
        if (c.seed != configs.front().seed) throw std::invalid_argument("stability comparison needs a shared seed");
    StabilityReport report;
    for (const auto& c : configs) {
        TrainResult r = train(world, data, c);
        StabilityEntry e;
        e.method = c.method;
        e.max_preclip_norm = r.log.max_preclip_norm();
        e.clamp_events = r.log.total_clamp_events();
        e.final_margin = r.log.steps.empty() ? 0.0 : r.log.steps.back().margin;
        e.finite_throughout = !r.log.failure.has_value();
        e.log = std::move(r.log);
        report.entries.push_back(std::move(e));
    }
    return report;
}

}  // namespace rdro
