#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "numeric.hpp"
#include "policy.hpp"
#include "ratios.hpp"
#include "world.hpp"

namespace rdro {

/// Per-cell sample weights for the two label terms. Empirical weights are
/// count / N and count / M; exact weights are p(x) p+(y|x) and p(x) p-(y|x).
/// The multiplicity tables count how many samples sit in each cell and are
/// only used to tally clamp events.
struct SampleWeights {
    Table preferred;
    Table nonpreferred;
    Table preferred_multiplicity;
    Table nonpreferred_multiplicity;

    bool has_preferred() const {
        for (double w : preferred.flat())
            if (w > 0.0) return true;
        return false;
    }
    bool has_nonpreferred() const {
        for (double w : nonpreferred.flat())
            if (w > 0.0) return true;
        return false;
    }
};

/// Weights from per-cell counts, each label normalized by its own total.
inline SampleWeights weights_from_counts(Table preferred_counts, Table nonpreferred_counts) {
    SampleWeights w;
    auto normalize = [](const Table& counts) {
        double total = 0.0;
        for (double c : counts.flat()) total += c;
        Table out = counts;
        if (total > 0.0) out *= 1.0 / total;
        return out;
    };
    w.preferred = normalize(preferred_counts);
    w.nonpreferred = normalize(nonpreferred_counts);
    w.preferred_multiplicity = std::move(preferred_counts);
    w.nonpreferred_multiplicity = std::move(nonpreferred_counts);
    return w;
}

inline SampleWeights weights_from_samples(std::span<const PreferenceSample> samples, std::size_t num_prompts,
                                          std::size_t num_responses) {
    Table pos(num_prompts, num_responses), neg(num_prompts, num_responses);
    for (const auto& s : samples) {
        if (s.prompt >= num_prompts || s.response >= num_responses)
            throw std::out_of_range("sample lies outside the policy table");
        (s.label == Label::Preferred ? pos : neg)(s.prompt, s.response) += 1.0;
    }
    return weights_from_counts(std::move(pos), std::move(neg));
}

inline SampleWeights weights_from_dataset(const PreferenceDataset& data, std::size_t num_prompts,
                                          std::size_t num_responses) {
    return weights_from_samples(data.samples(), num_prompts, num_responses);
}

/// Full-expectation weights p(x) p+/-(y|x); each positive cell counts once.
inline SampleWeights exact_weights(const WorldSpec& world) {
    Table pos(world.num_prompts, world.num_responses), neg(world.num_prompts, world.num_responses);
    SampleWeights w;
    w.preferred_multiplicity = pos;
    w.nonpreferred_multiplicity = neg;
    for (std::size_t x = 0; x < world.num_prompts; ++x) {
        for (std::size_t y = 0; y < world.num_responses; ++y) {
            pos(x, y) = world.prompt_dist[x] * world.preferred_cond(x, y);
            neg(x, y) = world.prompt_dist[x] * world.nonpreferred_cond(x, y);
            w.preferred_multiplicity(x, y) = pos(x, y) > 0.0 ? 1.0 : 0.0;
            w.nonpreferred_multiplicity(x, y) = neg(x, y) > 0.0 ? 1.0 : 0.0;
        }
    }
    w.preferred = std::move(pos);
    w.nonpreferred = std::move(neg);
    return w;
}

struct LossBreakdown {
    double total = 0.0;
    double preferred_term = 0.0;
    double nonpreferred_term = 0.0;
    double kl_term = 0.0;
    std::size_t clamp_events = 0;
};

struct Evaluation {
    LossBreakdown loss;
    Table gradient;
};

// Per-sample terms as functions of the log-ratio T.

inline double rdro_preferred_term(double t, double alpha) { return (1.0 + alpha) * softplus(t) - t; }
inline double rdro_nonpreferred_term(double t, double alpha) { return (1.0 - alpha) * softplus(t); }

enum class DdroVariant { Raw, Stabilized };

struct DdroTerm {
    double value = 0.0;
    double d_log_ratio = 0.0;  // derivative w.r.t. T; zero when the ratio was clamped
    bool clamped = false;
};

/// Raw preferred term log(1 + g) or its stabilized form S(log(1 + g)).
inline DdroTerm ddro_preferred_term(double t, double alpha, DdroVariant variant) {
    const ClampedValue g = ddro_ratio_from_log_ratio(t, alpha);
    const double h = std::log1p(g.value);
    double dh = 0.0;
    if (!g.clamped) {
        const double dg = -std::exp(-t) / (1.0 - alpha);
        dh = dg / (1.0 + g.value);
    }
    if (variant == DdroVariant::Raw) return {h, dh, g.clamped};
    return {log_sigmoid(h), sigmoid(-h) * dh, g.clamped};
}

/// Raw non-preferred term log(1 + 1/g) or its stabilized form S(log(1 + 1/g)).
inline DdroTerm ddro_nonpreferred_term(double t, double alpha, DdroVariant variant) {
    const ClampedValue g = ddro_ratio_from_log_ratio(t, alpha);
    const double h = std::log1p(1.0 / g.value);
    double dh = 0.0;
    if (!g.clamped) {
        const double dg = -std::exp(-t) / (1.0 - alpha);
        dh = dg * (1.0 / (1.0 + g.value) - 1.0 / g.value);
    }
    if (variant == DdroVariant::Raw) return {h, dh, g.clamped};
    return {log_sigmoid(h), sigmoid(-h) * dh, g.clamped};
}

namespace detail {

inline void require_samples(const SampleWeights& w) {
    if (!w.has_preferred() && !w.has_nonpreferred())
        throw std::invalid_argument("loss needs at least one preferred or non-preferred sample");
}

/// Chain rule through the softmax: dL/dtheta[x][k] = A[x][k] - p(k|x) sum_y A[x][y],
/// where A = dL/dT per cell.
inline Table softmax_chain(const Table& d_log_ratio, const Table& probs) {
    Table g(d_log_ratio.rows(), d_log_ratio.cols());
    for (std::size_t x = 0; x < g.rows(); ++x) {
        const double row_total = pairwise_sum(d_log_ratio.row(x));
        for (std::size_t k = 0; k < g.cols(); ++k) g(x, k) = d_log_ratio(x, k) - probs(x, k) * row_total;
    }
    return g;
}

/// Shared driver: visits each weighted cell in row-major order, collects the
/// per-cell contributions and reduces them pairwise.
template <class PrefFn, class NonPrefFn>
Evaluation evaluate_cells(const PolicyLogits& policy, const ReferenceLogProbs& ref, const SampleWeights& w,
                          PrefFn&& pref, NonPrefFn&& nonpref) {
    require_samples(w);
    const Table lp = log_prob_table(policy);
    Table probs = lp;
    for (double& v : probs.flat()) v = std::exp(v);
    Table d_t(lp.rows(), lp.cols());
    std::vector<double> pos_terms, neg_terms;
    std::size_t clamps = 0;
    for (std::size_t x = 0; x < lp.rows(); ++x) {
        for (std::size_t y = 0; y < lp.cols(); ++y) {
            const double wp = w.preferred(x, y);
            const double wn = w.nonpreferred(x, y);
            if (wp == 0.0 && wn == 0.0) continue;
            const double t = lp(x, y) - ref(x, y);
            if (wp > 0.0) {
                const auto [value, slope, clamped] = pref(t);
                pos_terms.push_back(wp * value);
                d_t(x, y) += wp * slope;
                if (clamped) clamps += static_cast<std::size_t>(w.preferred_multiplicity(x, y));
            }
            if (wn > 0.0) {
                const auto [value, slope, clamped] = nonpref(t);
                neg_terms.push_back(wn * value);
                d_t(x, y) += wn * slope;
                if (clamped) clamps += static_cast<std::size_t>(w.nonpreferred_multiplicity(x, y));
            }
        }
    }
    Evaluation out;
    out.loss.preferred_term = pairwise_sum(pos_terms);
    out.loss.nonpreferred_term = pairwise_sum(neg_terms);
    out.loss.total = out.loss.preferred_term + out.loss.nonpreferred_term;
    out.loss.clamp_events = clamps;
    out.gradient = softmax_chain(d_t, probs);
    return out;
}

}  // namespace detail

/// RDRO objective and gradient under arbitrary per-cell weights:
/// sum w+ [(1+a) phi(T) - T] + sum w- (1-a) phi(T), with dL/dT = w+ c+ + w- c-.
inline Evaluation rdro_evaluate(const PolicyLogits& policy, const ReferenceLogProbs& ref, const SampleWeights& w,
                                double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
    return detail::evaluate_cells(
        policy, ref, w,
        [alpha](double t) {
            return DdroTerm{rdro_preferred_term(t, alpha), rdro_coefficients(t, alpha).preferred, false};
        },
        [alpha](double t) {
            return DdroTerm{rdro_nonpreferred_term(t, alpha), rdro_coefficients(t, alpha).nonpreferred, false};
        });
}

inline LossBreakdown rdro_empirical_loss(const PolicyLogits& policy, const ReferenceLogProbs& ref,
                                         const PreferenceDataset& data, double alpha) {
    return rdro_evaluate(policy, ref, weights_from_dataset(data, policy.num_prompts(), policy.num_responses()),
                         alpha)
        .loss;
}

inline Table rdro_gradient(const PolicyLogits& policy, const ReferenceLogProbs& ref, const PreferenceDataset& data,
                           double alpha) {
    return rdro_evaluate(policy, ref, weights_from_dataset(data, policy.num_prompts(), policy.num_responses()),
                         alpha)
        .gradient;
}

inline Evaluation ddro_evaluate(const PolicyLogits& policy, const ReferenceLogProbs& ref, const SampleWeights& w,
                                double alpha, DdroVariant variant) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
    return detail::evaluate_cells(
        policy, ref, w, [=](double t) { return ddro_preferred_term(t, alpha, variant); },
        [=](double t) { return ddro_nonpreferred_term(t, alpha, variant); });
}

inline LossBreakdown ddro_empirical_loss(const PolicyLogits& policy, const ReferenceLogProbs& ref,
                                         const PreferenceDataset& data, double alpha, DdroVariant variant) {
    return ddro_evaluate(policy, ref, weights_from_dataset(data, policy.num_prompts(), policy.num_responses()),
                         alpha, variant)
        .loss;
}

inline Table ddro_gradient(const PolicyLogits& policy, const ReferenceLogProbs& ref, const PreferenceDataset& data,
                           double alpha, DdroVariant variant) {
    return ddro_evaluate(policy, ref, weights_from_dataset(data, policy.num_prompts(), policy.num_responses()),
                         alpha, variant)
        .gradient;
}

/// Exact KL(p_theta || p_ref) = sum_x p(x) sum_y p_theta (log p_theta - log p_ref).
inline double kl_regularizer(const PolicyLogits& policy, const ReferenceLogProbs& ref,
                             std::span<const double> prompt_dist) {
    if (prompt_dist.size() != policy.num_prompts()) throw std::invalid_argument("prompt_dist has wrong length");
    const Table lp = log_prob_table(policy);
    std::vector<double> rows;
    for (std::size_t x = 0; x < lp.rows(); ++x) {
        if (prompt_dist[x] == 0.0) continue;
        std::vector<double> terms;
        for (std::size_t y = 0; y < lp.cols(); ++y) {
            const double p = std::exp(lp(x, y));
            if (p == 0.0) continue;
            terms.push_back(p * (lp(x, y) - ref(x, y)));
        }
        rows.push_back(prompt_dist[x] * std::max(0.0, pairwise_sum(terms)));
    }
    return pairwise_sum(rows);
}

/// d KL / d theta[x][k] = p(x) p(k|x) (log p(k|x) - log p_ref(k|x) - KL_x).
inline Table kl_gradient(const PolicyLogits& policy, const ReferenceLogProbs& ref,
                         std::span<const double> prompt_dist) {
    const Table lp = log_prob_table(policy);
    Table g(lp.rows(), lp.cols());
    for (std::size_t x = 0; x < lp.rows(); ++x) {
        if (prompt_dist[x] == 0.0) continue;
        std::vector<double> terms;
        for (std::size_t y = 0; y < lp.cols(); ++y) {
            const double p = std::exp(lp(x, y));
            if (p > 0.0) terms.push_back(p * (lp(x, y) - ref(x, y)));
        }
        const double kl_x = pairwise_sum(terms);
        for (std::size_t y = 0; y < lp.cols(); ++y) {
            const double p = std::exp(lp(x, y));
            if (p > 0.0) g(x, y) = prompt_dist[x] * p * (lp(x, y) - ref(x, y) - kl_x);
        }
    }
    return g;
}

/// DDRO objective plus beta KL. With kl_in_grad off the gradient ignores the
/// KL term while the reported total still includes it.
inline Evaluation ddro_objective(const PolicyLogits& policy, const ReferenceLogProbs& ref, const SampleWeights& w,
                                 double alpha, double beta, DdroVariant variant, bool kl_in_grad,
                                 std::span<const double> prompt_dist) {
    if (!(beta >= 0.0)) throw std::invalid_argument("beta must be >= 0");
    Evaluation out = ddro_evaluate(policy, ref, w, alpha, variant);
    if (beta > 0.0) {
        out.loss.kl_term = kl_regularizer(policy, ref, prompt_dist);
        out.loss.total += beta * out.loss.kl_term;
        if (kl_in_grad) {
            Table kg = kl_gradient(policy, ref, prompt_dist);
            kg *= beta;
            out.gradient += kg;
        }
    }
    return out;
}

inline Evaluation ddro_objective(const PolicyLogits& policy, const ReferenceLogProbs& ref,
                                 const PreferenceDataset& data, double alpha, double beta, DdroVariant variant,
                                 bool kl_in_grad, std::span<const double> prompt_dist) {
    return ddro_objective(policy, ref, weights_from_dataset(data, policy.num_prompts(), policy.num_responses()),
                          alpha, beta, variant, kl_in_grad, prompt_dist);
}

// Exact (full-expectation) RDRO risk.

enum class RiskForm {
    Bregman,   // E_ref[Breg_f(r* || r_theta)]
    Logistic,  // E_ref[phi(T)] + E_+[phi(T) - T]
    Mixture    // E_+[(1+a) phi(T) - T] + E_-[(1-a) phi(T)]
};

namespace detail {

inline double rdro_risk_from_log_ratios(const Table& t, const WorldSpec& world, const Table& ref_probs,
                                        const Table& r_star, RiskForm form) {
    const double a = world.alpha;
    const BregmanSpec f = canonical_bregman();
    std::vector<double> terms;
    for (std::size_t x = 0; x < t.rows(); ++x) {
        const double px = world.prompt_dist[x];
        if (px == 0.0) continue;
        for (std::size_t y = 0; y < t.cols(); ++y) {
            const double pr = ref_probs(x, y);
            if (pr == 0.0) continue;
            const double pp = world.preferred_cond(x, y);
            const double pm = world.nonpreferred_cond(x, y);
            const double ty = t(x, y);
            switch (form) {
                case RiskForm::Bregman:
                    terms.push_back(px * pr * bregman(f, r_star(x, y), std::exp(ty)));
                    break;
                case RiskForm::Logistic:
                    terms.push_back(px * pr * softplus(ty));
                    if (pp > 0.0) terms.push_back(px * pp * (softplus(ty) - ty));
                    break;
                case RiskForm::Mixture:
                    if (pp > 0.0) terms.push_back(px * pp * rdro_preferred_term(ty, a));
                    if (pm > 0.0) terms.push_back(px * pm * rdro_nonpreferred_term(ty, a));
                    break;
            }
        }
    }
    return pairwise_sum(terms);
}

}  // namespace detail

/// Exact RDRO risk of the selected form over the finite (x, y) space, using
/// the world's own reference policy. When `normalized`, the value at
/// p_theta = p_ref is subtracted so all three forms share one anchor.
inline double rdro_exact_risk(const PolicyLogits& policy, const WorldSpec& world, RiskForm form,
                              bool normalized = true) {
    const Table ref_probs = reference_policy(world);
    const auto ref = ReferenceLogProbs::from_probabilities(ref_probs);
    const Table r_star = true_ratios(world).relative;
    const double value =
        detail::rdro_risk_from_log_ratios(log_ratio_table(policy, ref), world, ref_probs, r_star, form);
    if (!normalized) return value;
    const Table zero(world.num_prompts, world.num_responses, 0.0);
    return value - detail::rdro_risk_from_log_ratios(zero, world, ref_probs, r_star, form);
}

/// L_RDRE(theta) = E_ref[Breg_f(r* || r_theta)], non-negative and zero at p_theta = p+.
inline double rdro_bregman_risk(const PolicyLogits& policy, const WorldSpec& world) {
    return rdro_exact_risk(policy, world, RiskForm::Bregman, false);
}

/// Gradient of the exact mixture-form risk (uses the world's alpha and reference).
inline Table rdro_exact_gradient(const PolicyLogits& policy, const WorldSpec& world) {
    const auto ref = ReferenceLogProbs::from_probabilities(reference_policy(world));
    return rdro_evaluate(policy, ref, exact_weights(world), world.alpha).gradient;
}

}  // namespace rdro
