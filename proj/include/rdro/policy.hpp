#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

#include "numeric.hpp"
#include "table.hpp"

namespace rdro {

/// Logit used in place of log(0). exp() of it underflows to exactly zero,
/// so a row built from it reproduces a zero-mass entry bit-for-bit.
inline constexpr double kZeroMassLogit = -1e4;

/// Tabular softmax policy: p_theta(y|x) = softmax(theta[x])[y].
class PolicyLogits {
public:
    PolicyLogits() = default;
    explicit PolicyLogits(Table logits) : logits_(std::move(logits)) { check_finite(); }

    const Table& logits() const noexcept { return logits_; }
    Table& logits() noexcept { return logits_; }
    std::size_t num_prompts() const noexcept { return logits_.rows(); }
    std::size_t num_responses() const noexcept { return logits_.cols(); }

    void check_finite() const {
        for (std::size_t i = 0; i < logits_.size(); ++i)
            if (!std::isfinite(logits_.flat()[i]))
                throw std::invalid_argument("policy logit " + std::to_string(i) + " is not finite");
    }

    friend bool operator==(const PolicyLogits&, const PolicyLogits&) = default;

private:
    Table logits_;
};

/// Frozen reference stored as normalized log-probabilities (-inf marks zero mass).
class ReferenceLogProbs {
public:
    ReferenceLogProbs() = default;

    static ReferenceLogProbs from_probabilities(const Table& probs) {
        Table lp(probs.rows(), probs.cols());
        for (std::size_t i = 0; i < probs.size(); ++i) {
            const double p = probs.flat()[i];
            if (!(p >= 0.0)) throw std::invalid_argument("reference probability must be non-negative");
            lp.flat()[i] = p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity();
        }
        return ReferenceLogProbs(std::move(lp));
    }

    explicit ReferenceLogProbs(Table log_probs) : log_probs_(std::move(log_probs)) {
        for (std::size_t x = 0; x < log_probs_.rows(); ++x) {
            const double z = logsumexp(log_probs_.row(x));
            if (!(std::abs(z) <= 1e-10))
                throw std::invalid_argument("reference row " + std::to_string(x) + " is not normalized");
        }
    }

    const Table& log_probs() const noexcept { return log_probs_; }
    double operator()(std::size_t x, std::size_t y) const { return log_probs_(x, y); }
    bool has_mass(std::size_t x, std::size_t y) const { return std::isfinite(log_probs_(x, y)); }

    friend bool operator==(const ReferenceLogProbs&, const ReferenceLogProbs&) = default;

private:
    Table log_probs_;
};

inline void check_index(const PolicyLogits& policy, std::size_t x, std::size_t y) {
    if (x >= policy.num_prompts() || y >= policy.num_responses())
        throw std::out_of_range("index (" + std::to_string(x) + ", " + std::to_string(y) + ") out of range");
}

/// log p_theta(y|x) = theta[x][y] - logsumexp(theta[x]).
inline double log_prob(const PolicyLogits& policy, std::size_t x, std::size_t y) {
    check_index(policy, x, y);
    return policy.logits()(x, y) - logsumexp(policy.logits().row(x));
}

inline Table log_prob_table(const PolicyLogits& policy) {
    Table out = policy.logits();
    for (std::size_t x = 0; x < out.rows(); ++x) {
        const double z = logsumexp(policy.logits().row(x));
        for (double& v : out.row(x)) v -= z;
    }
    return out;
}

inline Table prob_table(const PolicyLogits& policy) {
    Table out = log_prob_table(policy);
    for (double& v : out.flat()) v = std::exp(v);
    return out;
}

/// T_theta(x, y) = log p_theta(y|x) - log p_ref(y|x).
inline double log_ratio(const PolicyLogits& policy, const ReferenceLogProbs& ref, std::size_t x,
                        std::size_t y) {
    return log_prob(policy, x, y) - ref(x, y);
}

inline Table log_ratio_table(const PolicyLogits& policy, const ReferenceLogProbs& ref) {
    Table t = log_prob_table(policy);
    for (std::size_t i = 0; i < t.size(); ++i) t.flat()[i] -= ref.log_probs().flat()[i];
    return t;
}

/// d log p_theta(y|x) / d theta: row x holds onehot(y) - p_theta(.|x), all other rows zero.
inline Table grad_log_prob(const PolicyLogits& policy, std::size_t x, std::size_t y) {
    check_index(policy, x, y);
    Table g(policy.num_prompts(), policy.num_responses());
    const double z = logsumexp(policy.logits().row(x));
    for (std::size_t k = 0; k < policy.num_responses(); ++k)
        g(x, k) = (k == y ? 1.0 : 0.0) - std::exp(policy.logits()(x, k) - z);
    return g;
}

/// Logits reproducing the reference, plus optional N(0, scale^2) noise.
inline PolicyLogits init_policy(const ReferenceLogProbs& ref, double perturbation_scale, std::uint64_t seed) {
    if (!(perturbation_scale >= 0.0)) throw std::invalid_argument("perturbation scale must be >= 0");
    Table logits = ref.log_probs();
    for (double& v : logits.flat())
        if (!std::isfinite(v)) v = kZeroMassLogit;
    if (perturbation_scale > 0.0) {
        std::mt19937_64 rng(derive_seed(seed, 0x5eed));
        std::normal_distribution<double> noise(0.0, perturbation_scale);
        for (double& v : logits.flat()) v += noise(rng);
    }
    return PolicyLogits(std::move(logits));
}

}  // namespace rdro
