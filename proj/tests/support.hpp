#pragma once

// Generators and independent oracles shared by the unit and acceptance tests.
// Oracles avoid the library's log-space helpers on purpose: they work from
// plain probabilities and per-sample loops.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include <rdro/rdro.hpp>

namespace rdro::testing {

inline constexpr double kAlphaGrid[] = {0.1, 0.39, 0.5, 0.9};

struct Instance {
    WorldSpec world;
    PolicyLogits policy;
};

/// Random world (<= max_prompts x max_responses) and random logits.
inline Instance random_instance(std::mt19937_64& rng, std::size_t max_prompts = 8, std::size_t max_responses = 16,
                                double logit_scale = 1.5) {
    std::uniform_int_distribution<std::size_t> np(1, max_prompts), nr(2, max_responses);
    std::uniform_real_distribution<double> alpha(0.05, 0.95), conc(0.3, 3.0);
    const std::size_t p = np(rng), r = nr(rng);
    WorldSpec w = random_world(p, r, alpha(rng), conc(rng), rng());
    std::normal_distribution<double> z(0.0, logit_scale);
    Table logits(p, r);
    for (double& v : logits.flat()) v = z(rng);
    return {std::move(w), PolicyLogits(std::move(logits))};
}

/// Policy row-wise softmax computed directly in probability space, in extended precision.
inline std::vector<std::vector<long double>> softmax_oracle(const Table& logits) {
    std::vector<std::vector<long double>> out(logits.rows());
    for (std::size_t x = 0; x < logits.rows(); ++x) {
        long double mx = -INFINITY;
        for (double v : logits.row(x)) mx = std::max<long double>(mx, v);
        long double s = 0.0L;
        for (double v : logits.row(x)) s += std::exp(v - mx);
        for (double v : logits.row(x)) out[x].push_back(std::exp(v - mx) / s);
    }
    return out;
}

inline long double plain_softplus(long double t) { return std::log1p(std::exp(t)); }

/// Per-sample loop of the empirical RDRO objective.
inline long double rdro_loss_oracle(const Table& logits, const Table& ref_probs, const PreferenceDataset& data,
                                    long double alpha) {
    const auto p = softmax_oracle(logits);
    long double pos = 0.0L, neg = 0.0L;
    for (const auto& s : data.samples()) {
        const long double t = std::log(p[s.prompt][s.response] / ref_probs(s.prompt, s.response));
        if (s.label == Label::Preferred)
            pos += (1.0 + alpha) * plain_softplus(t) - t;
        else
            neg += (1.0 - alpha) * plain_softplus(t);
    }
    const long double n = data.n_preferred(), m = data.m_nonpreferred();
    return (n > 0 ? pos / n : 0.0L) + (m > 0 ? neg / m : 0.0L);
}

/// Per-sample loop of the DDRO objective: raw log(1+g), log(1+1/g); the
/// stabilized variant wraps each argument h in log sigma(h).
inline long double ddro_loss_oracle(const Table& logits, const Table& ref_probs, const PreferenceDataset& data,
                                    long double alpha, DdroVariant variant) {
    const auto p = softmax_oracle(logits);
    long double pos = 0.0L, neg = 0.0L;
    for (const auto& s : data.samples()) {
        const long double g = (ref_probs(s.prompt, s.response) / p[s.prompt][s.response] - alpha) / (1.0L - alpha);
        long double h = s.label == Label::Preferred ? std::log(1.0L + g) : std::log(1.0L + 1.0L / g);
        if (variant == DdroVariant::Stabilized) h = std::log(1.0L / (1.0L + std::exp(-h)));
        (s.label == Label::Preferred ? pos : neg) += h;
    }
    const long double n = data.n_preferred(), m = data.m_nonpreferred();
    return (n > 0 ? pos / n : 0.0L) + (m > 0 ? neg / m : 0.0L);
}

/// Central finite-difference gradient of f at the logits. Differences are
/// taken in extended precision over the step actually representable.
inline Table fd_gradient(const Table& logits, const std::function<long double(const Table&)>& f, double h = 1e-6) {
    Table g(logits.rows(), logits.cols());
    Table probe = logits;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double keep = probe.flat()[i];
        probe.flat()[i] = keep + h;
        const long double up = f(probe);
        const long double hi = probe.flat()[i];
        probe.flat()[i] = keep - h;
        const long double down = f(probe);
        const long double lo = probe.flat()[i];
        probe.flat()[i] = keep;
        g.flat()[i] = static_cast<double>((up - down) / (hi - lo));
    }
    return g;
}

/// Largest per-coordinate relative error over coordinates where either side
/// exceeds `floor` in magnitude.
inline double max_relative_error(const Table& analytic, const Table& numeric, double floor = 1e-6) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double a = analytic.flat()[i], n = numeric.flat()[i];
        const double scale = std::max(std::abs(a), std::abs(n));
        if (scale <= floor) continue;
        worst = std::max(worst, std::abs(a - n) / scale);
    }
    return worst;
}

/// True when every sample sits at least `margin` (in T) away from the DDRO
/// clamp boundary T = log(1/alpha).
inline bool away_from_clamp(const Table& logits, const Table& ref_probs, const PreferenceDataset& data, double alpha,
                            double margin = 0.05) {
    const auto p = softmax_oracle(logits);
    for (const auto& s : data.samples()) {
        const double t = std::log(p[s.prompt][s.response] / ref_probs(s.prompt, s.response));
        if (t > std::log(1.0 / alpha) - margin) return false;
    }
    return true;
}

/// Canonical Bregman divergence written out from f(t) = t log t - (1+t) log(1+t).
inline double bregman_oracle(double u, double v) {
    auto f = [](double t) { return t == 0.0 ? 0.0 : t * std::log(t) - (1.0 + t) * std::log(1.0 + t); };
    const double fp = std::log(v) - std::log(1.0 + v);
    return f(u) - f(v) - fp * (u - v);
}

/// Estimation error E_{p(x)p+(y|x)}[(p_theta - p+)^2] by direct loops.
inline double estimation_error_oracle(const Table& logits, const WorldSpec& w) {
    const auto p = softmax_oracle(logits);
    double s = 0.0;
    for (std::size_t x = 0; x < w.num_prompts; ++x)
        for (std::size_t y = 0; y < w.num_responses; ++y) {
            const double d = p[x][y] - w.preferred_cond(x, y);
            s += w.prompt_dist[x] * w.preferred_cond(x, y) * d * d;
        }
    return s;
}

/// Golden-section minimizer of a unimodal function on [lo, hi].
inline double golden_min(const std::function<double(double)>& f, double lo, double hi, double tol = 1e-10) {
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - phi * (b - a), d = a + phi * (b - a);
    double fc = f(c), fd = f(d);
    while (b - a > tol) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    return 0.5 * (a + b);
}

/// Policy whose probabilities equal `probs` (zeros mapped to a very negative logit).
inline PolicyLogits policy_from_probs(const Table& probs) {
    Table logits(probs.rows(), probs.cols());
    for (std::size_t i = 0; i < probs.size(); ++i)
        logits.flat()[i] = probs.flat()[i] > 0.0 ? std::log(probs.flat()[i]) : kZeroMassLogit;
    return PolicyLogits(std::move(logits));
}

}  // namespace rdro::testing
