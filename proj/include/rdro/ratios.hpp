#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>

#include "numeric.hpp"
#include "policy.hpp"

namespace rdro {

/// Interval on which the Bregman generator is defined. `lower_closed`
/// admits the left endpoint for the first Bregman argument only.
struct Domain {
    double lower = 0.0;
    double upper = std::numeric_limits<double>::infinity();
    bool lower_closed = false;

    bool contains_open(double t) const noexcept { return t > lower && t < upper; }
    bool contains(double t) const noexcept {
        return contains_open(t) || (lower_closed && t == lower);
    }
};

/// Strictly convex generator f together with f' and f''.
struct BregmanSpec {
    std::function<double(double)> f;
    std::function<double(double)> f_prime;
    std::function<double(double)> f_second;
    Domain domain;
    bool canonical = false;
};

/// f(t) = t log t - (1 + t) log(1 + t), the generator that turns Bregman
/// minimization into a logistic-regression objective. f(0) = 0 by continuity.
inline BregmanSpec canonical_bregman() {
    BregmanSpec s;
    s.f = [](double t) { return t == 0.0 ? 0.0 : -t * std::log1p(1.0 / t) - std::log1p(t); };
    s.f_prime = [](double t) { return -std::log1p(1.0 / t); };
    s.f_second = [](double t) { return 1.0 / (t * (1.0 + t)); };
    s.domain = {0.0, std::numeric_limits<double>::infinity(), true};
    s.canonical = true;
    return s;
}

struct RatioRange {
    double lower = 1.0;
    double upper = 1.0;

    RatioRange() = default;
    RatioRange(double lo, double hi) : lower(lo), upper(hi) {
        if (!(lo > 0.0) || !(hi >= lo) || !std::isfinite(hi))
            throw std::invalid_argument("ratio range needs 0 < lower <= upper < inf");
    }
};

/// Breg_f(u || v) = f(u) - f(v) - f'(v)(u - v).
inline double bregman(const BregmanSpec& spec, double u, double v) {
    if (!spec.domain.contains(u) || !spec.domain.contains_open(v))
        throw std::domain_error("bregman arguments (" + std::to_string(u) + ", " + std::to_string(v) +
                                ") outside the generator's domain");
    return spec.f(u) - spec.f(v) - spec.f_prime(v) * (u - v);
}

/// r_theta(y|x) = p_theta(y|x) / p_ref(y|x) = exp(T_theta). Empty when p_ref(y|x) = 0.
inline std::optional<double> relative_ratio_model(const PolicyLogits& policy, const ReferenceLogProbs& ref,
                                                  std::size_t x, std::size_t y) {
    check_index(policy, x, y);
    if (!ref.has_mass(x, y)) return std::nullopt;
    return std::exp(log_ratio(policy, ref, x, y));
}

inline constexpr double kDdroClampEpsilon = 1e-12;

struct ClampedValue {
    double value = 0.0;
    bool clamped = false;
};

/// g_theta from its log-ratio: (e^{-T} - alpha) / (1 - alpha), floored at
/// epsilon. The analytic value is <= 0 exactly when r_theta >= 1/alpha.
inline ClampedValue ddro_ratio_from_log_ratio(double log_ratio_value, double alpha) {
    const double g = (std::exp(-log_ratio_value) - alpha) / (1.0 - alpha);
    if (g <= 0.0 || std::isnan(g)) return {kDdroClampEpsilon, true};
    return {g, false};
}

/// g_theta(y|x) = p_ref / ((1 - alpha) p_theta) - alpha / (1 - alpha).
inline ClampedValue ddro_ratio_model(const PolicyLogits& policy, const ReferenceLogProbs& ref, double alpha,
                                     std::size_t x, std::size_t y) {
    return ddro_ratio_from_log_ratio(log_ratio(policy, ref, x, y), alpha);
}

namespace detail {

inline void check_range_in_domain(const BregmanSpec& spec, const RatioRange& range) {
    if (!spec.domain.contains_open(range.lower) || !spec.domain.contains_open(range.upper))
        throw std::domain_error("ratio range outside the generator's domain");
}

/// Extremum of h over [lo, hi] by dense scan; used when no closed form exists.
template <class H, class Pick>
double scan_extremum(H&& h, const RatioRange& range, Pick&& pick) {
    constexpr int kPoints = 20001;
    double best = h(range.lower);
    for (int i = 1; i < kPoints; ++i) {
        const double t = range.lower + (range.upper - range.lower) * i / (kPoints - 1);
        best = pick(best, h(t));
    }
    return best;
}

}  // namespace detail

/// mu = inf f'' over the range. Canonical f'' = 1/(t(1+t)) is decreasing,
/// so the infimum sits at the upper end.
inline double strong_convexity_mu(const BregmanSpec& spec, const RatioRange& range) {
    detail::check_range_in_domain(spec, range);
    if (spec.canonical) return 1.0 / (range.upper * (1.0 + range.upper));
    return detail::scan_extremum(spec.f_second, range, [](double a, double b) { return std::min(a, b); });
}

struct LipschitzConstants {
    double l1 = 0.0;  // sup |psi1'| = sup |f''(v) v|
    double l2 = 0.0;  // sup |psi2'| = sup |f''(v)|
};

/// Lipschitz constants of psi1(v) = -f(v) + f'(v) v and psi2(v) = -f'(v)
/// on the range. Canonical: L1 = 1/(1+lower), L2 = 1/(lower(1+lower)).
inline LipschitzConstants lipschitz_constants(const BregmanSpec& spec, const RatioRange& range) {
    detail::check_range_in_domain(spec, range);
    if (spec.canonical) {
        const double a = range.lower;
        return {1.0 / (1.0 + a), 1.0 / (a * (1.0 + a))};
    }
    auto pick_max = [](double a, double b) { return std::max(a, b); };
    return {detail::scan_extremum([&](double v) { return std::abs(spec.f_second(v) * v); }, range, pick_max),
            detail::scan_extremum([&](double v) { return std::abs(spec.f_second(v)); }, range, pick_max)};
}

/// Lip(Breg_f(u || .)) = L1 + sup|u| L2.
inline double c_lip(double l1, double l2, double sup_ratio) {
    if (l1 < 0.0 || l2 < 0.0 || sup_ratio < 0.0) throw std::invalid_argument("c_lip inputs must be >= 0");
    return l1 + sup_ratio * l2;
}

/// Gradient coefficients of the RDRO loss in T: c+ = (1+a) sigma(T) - 1, c- = (1-a) sigma(T).
struct RdroCoefficients {
    double preferred = 0.0;
    double nonpreferred = 0.0;
};

/// Near the boundary b = log(1/alpha), c+ = (alpha e^T - 1) / (1 + e^T) is
/// evaluated as expm1(T - b) sigma(-T), which avoids cancellation and is
/// exactly zero at T = b.
inline RdroCoefficients rdro_coefficients(double log_ratio_value, double alpha) {
    const double s = sigmoid(log_ratio_value);
    const double gap = log_ratio_value - std::log(1.0 / alpha);
    const double preferred =
        std::abs(gap) < 1.0 ? std::expm1(gap) * sigmoid(-log_ratio_value) : (1.0 + alpha) * s - 1.0;
    return {preferred, (1.0 - alpha) * s};
}

}  // namespace rdro
