#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "losses.hpp"
#include "optim.hpp"
#include "parallel.hpp"
#include "ratios.hpp"
#include "world.hpp"

namespace rdro {

/// E_{p(x) p+(y|x)}[(p_theta(y|x) - p+(y|x))^2] by enumeration.
inline double estimation_error(const PolicyLogits& policy, const WorldSpec& world) {
    const Table p = prob_table(policy);
    std::vector<double> terms;
    for (std::size_t x = 0; x < world.num_prompts; ++x) {
        for (std::size_t y = 0; y < world.num_responses; ++y) {
            const double pp = world.preferred_cond(x, y);
            if (pp == 0.0 || world.prompt_dist[x] == 0.0) continue;
            const double d = p(x, y) - pp;
            terms.push_back(world.prompt_dist[x] * pp * d * d);
        }
    }
    return pairwise_sum(terms);
}

/// Smallest positive p+(y|x).
inline double m_plus(const WorldSpec& world) {
    double best = std::numeric_limits<double>::infinity();
    for (double v : world.preferred_cond.flat())
        if (v > 0.0) best = std::min(best, v);
    if (!std::isfinite(best)) throw std::invalid_argument("p+ has empty support");
    return best;
}

struct AlphaCondition {
    double threshold_exact = 0.0;   // ((sqrt(m^2 + 4) - m) / 2)^2
    double threshold_taylor = 0.0;  // 1 - m
};

/// Largest alpha for which 2/(alpha mu) < 2(1-alpha)^2 / (alpha^2 m+^2 mu).
inline AlphaCondition alpha_condition(double m) {
    if (!(m > 0.0 && m <= 1.0)) throw std::invalid_argument("m_plus must lie in (0, 1]");
    const double root = (std::sqrt(m * m + 4.0) - m) / 2.0;
    return {root * root, 1.0 - m};
}

inline double rdro_coefficient(double alpha, double mu) { return 2.0 / (alpha * mu); }

inline double ddro_coefficient(double alpha, double m, double mu) {
    return 2.0 * (1.0 - alpha) * (1.0 - alpha) / (alpha * alpha * m * m * mu);
}

struct RademacherEstimate {
    double mean = 0.0;
    double std_error = 0.0;
    std::size_t sample_size = 0;
    std::size_t trials = 0;
};

/// Monte-Carlo estimate of R_K(H) for the tabular softmax class over samples
/// from p(x) p+/-(y|x). Per draw the supremum over the closure of the class
/// is (1/K) sum_x max_y c[x][y], with c[x][y] the signed count of samples
/// hitting (x, y): each softmax row can put all its mass on one response.
inline RademacherEstimate empirical_rademacher(std::size_t sample_size, const WorldSpec& world, std::size_t trials,
                                               std::uint64_t seed, Label label = Label::Preferred) {
    if (trials == 0) throw std::invalid_argument("need at least one trial");
    if (sample_size == 0) throw std::invalid_argument("sample size must be >= 1");
    const Table& cond = label == Label::Preferred ? world.preferred_cond : world.nonpreferred_cond;
    std::vector<double> joint(world.num_prompts * world.num_responses);
    for (std::size_t x = 0; x < world.num_prompts; ++x)
        for (std::size_t y = 0; y < world.num_responses; ++y)
            joint[x * world.num_responses + y] = world.prompt_dist[x] * cond(x, y);

    std::vector<double> values(trials);
    parallel_for(trials, [&](std::size_t trial) {
        std::mt19937_64 rng(derive_seed(seed, trial));
        std::discrete_distribution<std::size_t> cell(joint.begin(), joint.end());
        std::bernoulli_distribution coin(0.5);
        Table signed_counts(world.num_prompts, world.num_responses);
        for (std::size_t k = 0; k < sample_size; ++k) {
            const std::size_t c = cell(rng);
            signed_counts.flat()[c] += coin(rng) ? 1.0 : -1.0;
        }
        double sup = 0.0;
        for (std::size_t x = 0; x < world.num_prompts; ++x) {
            const auto row = signed_counts.row(x);
            sup += *std::max_element(row.begin(), row.end());
        }
        values[trial] = sup / static_cast<double>(sample_size);
    });

    const double mean = pairwise_sum(values) / static_cast<double>(trials);
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double sd = trials > 1 ? std::sqrt(ss / static_cast<double>(trials - 1)) : 0.0;
    return {mean, sd / std::sqrt(static_cast<double>(trials)), sample_size, trials};
}

/// [min positive r*, 1/alpha]: where the true and trained relative ratios live.
inline RatioRange rdro_default_range(const WorldSpec& world) {
    const Table r = true_ratios(world).relative;
    double lo = std::numeric_limits<double>::infinity();
    for (double v : r.flat())
        if (v > 0.0) lo = std::min(lo, v);
    return {std::min(lo, 1.0 / world.alpha), 1.0 / world.alpha};
}

/// [min positive g*, max g*]; empty when any g* diverges or none is positive.
inline std::optional<RatioRange> ddro_default_range(const WorldSpec& world) {
    const auto g = true_ratios(world).density;
    if (g.any_diverged()) return std::nullopt;
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (const auto& c : g.cells()) {
        if (!c.finite()) continue;
        hi = std::max(hi, c.value);
        if (c.value > 0.0) lo = std::min(lo, c.value);
    }
    if (!std::isfinite(lo)) return std::nullopt;
    return RatioRange{lo, hi};
}

enum class BoundMethod { RDRO, DDRO };

struct BoundReport {
    BoundMethod method = BoundMethod::RDRO;
    bool diverged = false;
    double inf_risk = 0.0;
    double mu = 0.0;
    double l1 = 0.0;
    double l2 = 0.0;
    double c_lip = 0.0;
    double rademacher_n = 0.0;
    double rademacher_m = 0.0;
    double rademacher_n_se = 0.0;
    double rademacher_m_se = 0.0;
    double coefficient = 0.0;
    double bound_value = 0.0;
    double m_plus = 0.0;
    std::optional<double> sup_g_star;  // DDRO only; empty when g* diverges
    std::size_t n = 0;
    std::size_t m = 0;

    /// alpha R_N + (1 - alpha) R_M <= R_N + R_M.
    bool rademacher_weighting_holds(double alpha) const {
        return alpha * rademacher_n + (1.0 - alpha) * rademacher_m <= rademacher_n + rademacher_m;
    }
};

/// (2/(alpha mu)) [inf L + 4 C_Lip (alpha R_N + (1 - alpha) R_M)] with C_Lip = L1 + L2/alpha.
inline BoundReport rdro_bound(const WorldSpec& world, const RatioRange& range, std::size_t n, std::size_t m,
                              std::size_t trials, std::uint64_t seed, double inf_risk = 0.0) {
    if (n == 0 || m == 0) throw std::invalid_argument("bound needs n, m >= 1");
    const BregmanSpec f = canonical_bregman();
    BoundReport r;
    r.method = BoundMethod::RDRO;
    r.n = n;
    r.m = m;
    r.inf_risk = inf_risk;
    r.mu = strong_convexity_mu(f, range);
    const auto lip = lipschitz_constants(f, range);
    r.l1 = lip.l1;
    r.l2 = lip.l2;
    r.c_lip = c_lip(lip.l1, lip.l2, 1.0 / world.alpha);
    const auto rn = empirical_rademacher(n, world, trials, derive_seed(seed, 1), Label::Preferred);
    const auto rm = empirical_rademacher(m, world, trials, derive_seed(seed, 2), Label::NonPreferred);
    r.rademacher_n = rn.mean;
    r.rademacher_n_se = rn.std_error;
    r.rademacher_m = rm.mean;
    r.rademacher_m_se = rm.std_error;
    r.m_plus = m_plus(world);
    r.coefficient = rdro_coefficient(world.alpha, r.mu);
    const double a = world.alpha;
    r.bound_value =
        r.coefficient * (inf_risk + 4.0 * r.c_lip * (a * r.rademacher_n + (1.0 - a) * r.rademacher_m));
    return r;
}

/// (2(1-alpha)^2 / (alpha^2 m+^2 mu)) [inf L + 4 C'_Lip (R_N + R_M)] with
/// C'_Lip = L1 + sup|g*| L2; reported as diverged when g* is unbounded.
inline BoundReport ddro_bound(const WorldSpec& world, std::optional<RatioRange> range, std::size_t n, std::size_t m,
                              std::size_t trials, std::uint64_t seed, double inf_risk = 0.0) {
    if (n == 0 || m == 0) throw std::invalid_argument("bound needs n, m >= 1");
    BoundReport r;
    r.method = BoundMethod::DDRO;
    r.n = n;
    r.m = m;
    r.inf_risk = inf_risk;
    r.m_plus = m_plus(world);
    const auto natural = ddro_default_range(world);
    if (!natural) {
        r.diverged = true;
        r.bound_value = std::numeric_limits<double>::infinity();
        r.coefficient = std::numeric_limits<double>::infinity();
        return r;
    }
    if (!range) range = natural;
    const BregmanSpec f = canonical_bregman();
    r.sup_g_star = natural->upper;
    r.mu = strong_convexity_mu(f, *range);
    const auto lip = lipschitz_constants(f, *range);
    r.l1 = lip.l1;
    r.l2 = lip.l2;
    r.c_lip = c_lip(lip.l1, lip.l2, *r.sup_g_star);
    const auto rn = empirical_rademacher(n, world, trials, derive_seed(seed, 1), Label::Preferred);
    const auto rm = empirical_rademacher(m, world, trials, derive_seed(seed, 2), Label::NonPreferred);
    r.rademacher_n = rn.mean;
    r.rademacher_n_se = rn.std_error;
    r.rademacher_m = rm.mean;
    r.rademacher_m_se = rm.std_error;
    r.coefficient = ddro_coefficient(world.alpha, r.m_plus, r.mu);
    r.bound_value = r.coefficient * (inf_risk + 4.0 * r.c_lip * (r.rademacher_n + r.rademacher_m));
    return r;
}

/// inf over the model class of the Bregman risk when the rows in
/// `frozen_prompts` are pinned to `anchor`: free rows can reach p+ exactly,
/// so only the frozen rows contribute.
inline double rdro_inf_risk(const WorldSpec& world, const PolicyLogits& anchor,
                            std::span<const std::size_t> frozen_prompts) {
    if (frozen_prompts.empty()) return 0.0;
    WorldSpec masked = world;
    std::fill(masked.prompt_dist.begin(), masked.prompt_dist.end(), 0.0);
    for (std::size_t x : frozen_prompts) masked.prompt_dist.at(x) = world.prompt_dist.at(x);
    return rdro_bregman_risk(anchor, masked);
}

struct LemmaCheck {
    double risk = 0.0;                // E_ref[Breg(r* || r_theta)]
    double mu = 0.0;                  // inf f'' over the realized ratio range
    double ratio_gap = 0.0;           // E_ref[(r* - r_theta)^2]
    double estimation_error = 0.0;
    bool strong_convexity_holds = false;  // risk >= (mu/2) ratio_gap
    bool error_bound_holds = false;       // error <= (2/(alpha mu)) risk
};

/// Evaluates both sides of the strong-convexity lower bound and the
/// squared-error bound on one (world, policy) instance. mu comes from the
/// realized range of r* and r_theta over the reference support.
inline LemmaCheck lemma_chain(const PolicyLogits& policy, const WorldSpec& world) {
    const Table ref_probs = reference_policy(world);
    const auto ref = ReferenceLogProbs::from_probabilities(ref_probs);
    const Table r_star = true_ratios(world).relative;
    const Table t = log_ratio_table(policy, ref);
    double hi = 0.0, lo = std::numeric_limits<double>::infinity();
    std::vector<double> gaps;
    for (std::size_t x = 0; x < world.num_prompts; ++x) {
        for (std::size_t y = 0; y < world.num_responses; ++y) {
            const double w = world.prompt_dist[x] * ref_probs(x, y);
            if (w == 0.0) continue;
            const double r = std::exp(t(x, y));
            hi = std::max({hi, r, r_star(x, y)});
            for (double v : {r, r_star(x, y)})
                if (v > 0.0) lo = std::min(lo, v);
            gaps.push_back(w * (r - r_star(x, y)) * (r - r_star(x, y)));
        }
    }
    LemmaCheck c;
    c.risk = rdro_bregman_risk(policy, world);
    c.mu = strong_convexity_mu(canonical_bregman(), RatioRange(lo, hi));
    c.ratio_gap = pairwise_sum(gaps);
    c.estimation_error = estimation_error(policy, world);
    constexpr double kSlack = 1e-12;
    c.strong_convexity_holds = c.risk >= 0.5 * c.mu * c.ratio_gap * (1.0 - kSlack) - 1e-15;
    c.error_bound_holds = c.estimation_error <= rdro_coefficient(world.alpha, c.mu) * c.risk * (1.0 + kSlack) + 1e-15;
    return c;
}

struct RateStudy {
    std::vector<std::size_t> sizes;  // N = M per entry
    std::vector<double> mean_error;
    std::vector<double> std_error;
    std::size_t seeds_per_size = 0;
    double fitted_slope = 0.0;
    double fit_r2 = 0.0;
};

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
};

inline LinearFit ols_fit(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size() || xs.size() < 2) throw std::invalid_argument("fit needs >= 2 paired points");
    const double n = static_cast<double>(xs.size());
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    LinearFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    f.r2 = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
    return f;
}

/// For each N = M in `sizes` and each seed: sample data, train, record the
/// estimation error. Fits log(RMSE) against log(N) by least squares, with
/// RMSE the square root of the mean error at that size.
inline RateStudy convergence_study(const WorldSpec& world, std::span<const std::size_t> sizes,
                                   std::size_t seeds_per_size, const TrainConfig& config) {
    if (sizes.size() < 4) throw std::invalid_argument("rate study needs at least 4 sizes");
    if (seeds_per_size < 5) throw std::invalid_argument("rate study needs at least 5 seeds per size");
    const std::size_t runs = sizes.size() * seeds_per_size;
    std::vector<double> errors(runs);
    parallel_for(runs, [&](std::size_t k) {
        const std::size_t i = k / seeds_per_size;
        const std::size_t j = k % seeds_per_size;
        const std::uint64_t run_seed = derive_seed(config.seed, (static_cast<std::uint64_t>(i) << 32) | j);
        const auto data = sample_dataset(world, sizes[i], sizes[i], run_seed);
        TrainConfig cfg = config;
        cfg.seed = run_seed;
        errors[k] = estimation_error(train(world, data, cfg).policy, world);
    });

    RateStudy study;
    study.sizes.assign(sizes.begin(), sizes.end());
    study.seeds_per_size = seeds_per_size;
    std::vector<double> log_n, log_rmse;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        std::span<const double> e(errors.data() + i * seeds_per_size, seeds_per_size);
        const double mean = pairwise_sum(e) / static_cast<double>(seeds_per_size);
        double ss = 0.0;
        for (double v : e) ss += (v - mean) * (v - mean);
        study.mean_error.push_back(mean);
        study.std_error.push_back(std::sqrt(ss / static_cast<double>(seeds_per_size - 1)));
        log_n.push_back(std::log(static_cast<double>(sizes[i])));
        log_rmse.push_back(0.5 * std::log(mean));
    }
    const auto fit = ols_fit(log_n, log_rmse);
    study.fitted_slope = fit.slope;
    study.fit_r2 = fit.r2;
    return study;
}

/// max over (x, y) of r_theta = exp(T_theta).
inline double max_r_theta(const PolicyLogits& policy, const ReferenceLogProbs& ref) {
    double mx = 0.0;
    const Table t = log_ratio_table(policy, ref);
    for (std::size_t i = 0; i < t.size(); ++i)
        if (ref.has_mass(i / t.cols(), i % t.cols())) mx = std::max(mx, std::exp(t.flat()[i]));
    return mx;
}

/// Mean T_theta over preferred samples minus mean over non-preferred samples.
inline double dataset_margin(const PolicyLogits& policy, const ReferenceLogProbs& ref, const PreferenceDataset& data) {
    std::vector<double> pos, neg;
    for (const auto& s : data.samples())
        (s.label == Label::Preferred ? pos : neg).push_back(log_ratio(policy, ref, s.prompt, s.response));
    auto mean = [](const std::vector<double>& v) {
        return v.empty() ? std::numeric_limits<double>::quiet_NaN() : pairwise_sum(v) / static_cast<double>(v.size());
    };
    return mean(pos) - mean(neg);
}

struct SweepRun {
    double alpha = 0.0;
    std::size_t seed_index = 0;
    double estimation_error = 0.0;
    double margin = 0.0;
    double max_r_theta = 0.0;
    double kl = 0.0;
    bool finite = true;
};

struct SweepRow {
    double alpha = 0.0;
    double final_estimation_error = 0.0;  // mean over seeds
    double final_margin = 0.0;            // mean over seeds
    double max_r_theta = 0.0;             // max over seeds
    double final_kl = 0.0;                // mean over seeds
};

struct SweepResult {
    std::vector<SweepRow> rows;
    std::vector<SweepRun> runs;
};

/// Trains RDRO once per (alpha, seed) with the training alpha varied and the
/// reference fixed to the world's mixture. Seed k draws one dataset of n
/// preferred and m non-preferred samples shared by every alpha.
inline SweepResult alpha_sweep(const WorldSpec& world, std::span<const double> alphas, std::size_t n, std::size_t m,
                               std::size_t seeds, const TrainConfig& base) {
    if (alphas.empty()) throw std::invalid_argument("alpha grid is empty");
    for (double a : alphas)
        if (!(a > 0.0 && a < 1.0)) throw std::invalid_argument("alpha grid values must lie strictly inside (0, 1)");
    if (seeds == 0) throw std::invalid_argument("sweep needs at least one seed");
    const auto ref = ReferenceLogProbs::from_probabilities(reference_policy(world));
    std::vector<PreferenceDataset> data(seeds);
    for (std::size_t k = 0; k < seeds; ++k) data[k] = sample_dataset(world, n, m, derive_seed(base.seed, k));

    SweepResult out;
    out.runs.resize(alphas.size() * seeds);
    parallel_for(out.runs.size(), [&](std::size_t idx) {
        const std::size_t i = idx / seeds, k = idx % seeds;
        TrainConfig cfg = base;
        cfg.method = Method::RDRO;
        cfg.alpha = alphas[i];
        cfg.seed = derive_seed(base.seed, k);
        const auto r = train(world, data[k], cfg);
        SweepRun& run = out.runs[idx];
        run.alpha = alphas[i];
        run.seed_index = k;
        run.estimation_error = estimation_error(r.policy, world);
        run.margin = dataset_margin(r.policy, ref, data[k]);
        run.max_r_theta = max_r_theta(r.policy, ref);
        run.kl = kl_regularizer(r.policy, ref, world.prompt_dist);
        run.finite = !r.log.failure.has_value();
    });
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        SweepRow row;
        row.alpha = alphas[i];
        for (std::size_t k = 0; k < seeds; ++k) {
            const SweepRun& run = out.runs[i * seeds + k];
            row.final_estimation_error += run.estimation_error / static_cast<double>(seeds);
            row.final_margin += run.margin / static_cast<double>(seeds);
            row.final_kl += run.kl / static_cast<double>(seeds);
            row.max_r_theta = std::max(row.max_r_theta, run.max_r_theta);
        }
        out.rows.push_back(row);
    }
    return out;
}

struct BtFit {
    std::array<double, 3> rewards{};         // R_a (pinned to 0), R_b, R_c
    std::array<double, 3> pairwise_probs{};  // Pr(a > b), Pr(b > c), Pr(c > a)
};

/// Fits Bradley-Terry rewards to the cyclic targets Pr(a>b) = Pr(b>c) =
/// Pr(c>a) = t by gradient descent on the summed cross-entropy.
inline BtFit bt_cyclic_fit(double t, std::size_t steps = 10000, double lr = 0.5) {
    if (!(t > 0.0 && t < 1.0)) throw std::invalid_argument("target probability must lie in (0, 1)");
    std::array<double, 3> r{0.0, 0.0, 0.0};
    for (std::size_t s = 0; s < steps; ++s) {
        // d CE / d (R_i - R_j) = sigma(R_i - R_j) - t for each ordered pair (a,b), (b,c), (c,a).
        const double dab = sigmoid(r[0] - r[1]) - t;
        const double dbc = sigmoid(r[1] - r[2]) - t;
        const double dca = sigmoid(r[2] - r[0]) - t;
        const std::array<double, 3> grad{dab - dca, dbc - dab, dca - dbc};
        for (std::size_t i = 1; i < 3; ++i) r[i] -= lr * grad[i];
    }
    return {r, {sigmoid(r[0] - r[1]), sigmoid(r[1] - r[2]), sigmoid(r[2] - r[0])}};
}

}  // namespace rdro
