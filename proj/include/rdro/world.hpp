#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "numeric.hpp"
#include "table.hpp"

namespace rdro {

inline constexpr double kDistributionTolerance = 1e-12;

/// Synthetic ground truth: p(x), p+(y|x), p-(y|x) and the mixing weight alpha
/// that defines the reference policy p_ref = alpha p+ + (1 - alpha) p-.
struct WorldSpec {
    std::size_t num_prompts = 0;
    std::size_t num_responses = 0;
    double alpha = 0.5;
    std::vector<double> prompt_dist;
    Table preferred_cond;
    Table nonpreferred_cond;

    void validate() const;
};

namespace detail {

inline void check_distribution(std::span<const double> row, const std::string& what) {
    double sum = 0.0;
    for (double v : row) {
        if (!std::isfinite(v) || v < 0.0)
            throw std::invalid_argument(what + " has a negative or non-finite entry");
        sum += v;
    }
    if (std::abs(sum - 1.0) > kDistributionTolerance)
        throw std::invalid_argument(what + " sums to " + std::to_string(sum) + ", not 1");
}

inline std::vector<double> dirichlet(std::size_t k, double concentration, std::mt19937_64& rng) {
    std::gamma_distribution<double> gamma(concentration, 1.0);
    std::vector<double> out(k);
    for (;;) {
        for (auto& v : out) v = gamma(rng);
        const double total = std::accumulate(out.begin(), out.end(), 0.0);
        if (total > 0.0 && std::isfinite(total)) {
            for (auto& v : out) v /= total;
            return out;
        }
    }
}

}  // namespace detail

inline void WorldSpec::validate() const {
    if (num_prompts == 0 || num_responses == 0)
        throw std::invalid_argument("world needs at least one prompt and one response");
    if (!(alpha > 0.0 && alpha < 1.0))
        throw std::invalid_argument("alpha must lie in (0, 1), got " + std::to_string(alpha));
    if (prompt_dist.size() != num_prompts)
        throw std::invalid_argument("prompt_dist has wrong length");
    detail::check_distribution(prompt_dist, "prompt_dist");
    for (const Table* t : {&preferred_cond, &nonpreferred_cond}) {
        if (t->rows() != num_prompts || t->cols() != num_responses)
            throw std::invalid_argument("conditional table has wrong shape");
    }
    for (std::size_t x = 0; x < num_prompts; ++x) {
        detail::check_distribution(preferred_cond.row(x), "preferred_cond row " + std::to_string(x));
        detail::check_distribution(nonpreferred_cond.row(x),
                                   "nonpreferred_cond row " + std::to_string(x));
    }
}

enum class Label { Preferred, NonPreferred };

struct PreferenceSample {
    std::size_t prompt = 0;
    std::size_t response = 0;
    Label label = Label::Preferred;

    friend bool operator==(const PreferenceSample&, const PreferenceSample&) = default;
};

/// Labeled (prompt, response) pairs. The label tallies are kept in sync by add().
class PreferenceDataset {
public:
    PreferenceDataset() = default;
    explicit PreferenceDataset(std::vector<PreferenceSample> samples) {
        for (const auto& s : samples) add(s);
    }

    void add(const PreferenceSample& s) {
        samples_.push_back(s);
        (s.label == Label::Preferred ? n_preferred_ : m_nonpreferred_) += 1;
    }

    const std::vector<PreferenceSample>& samples() const noexcept { return samples_; }
    std::size_t n_preferred() const noexcept { return n_preferred_; }
    std::size_t m_nonpreferred() const noexcept { return m_nonpreferred_; }
    std::size_t size() const noexcept { return samples_.size(); }
    bool empty() const noexcept { return samples_.empty(); }

    /// Fraction of preferred samples, the recommended default for alpha.
    double preferred_fraction() const {
        if (samples_.empty()) throw std::invalid_argument("empty dataset has no preferred fraction");
        return static_cast<double>(n_preferred_) / static_cast<double>(samples_.size());
    }

    void check_bounds(std::size_t num_prompts, std::size_t num_responses) const {
        for (std::size_t i = 0; i < samples_.size(); ++i) {
            if (samples_[i].prompt >= num_prompts || samples_[i].response >= num_responses)
                throw std::out_of_range("sample " + std::to_string(i) + " lies outside the world");
        }
    }

    friend bool operator==(const PreferenceDataset&, const PreferenceDataset&) = default;

private:
    std::vector<PreferenceSample> samples_;
    std::size_t n_preferred_ = 0;
    std::size_t m_nonpreferred_ = 0;
};

/// p_ref(y|x) = a p+(y|x) + (1 - a) p-(y|x). The two-argument form builds the
/// reference from a different weight than the world's (misspecification knob).
inline Table reference_policy(const WorldSpec& world, double mixing_alpha) {
    Table ref(world.num_prompts, world.num_responses);
    for (std::size_t i = 0; i < ref.size(); ++i)
        ref.flat()[i] = mixing_alpha * world.preferred_cond.flat()[i] +
                        (1.0 - mixing_alpha) * world.nonpreferred_cond.flat()[i];
    return ref;
}

inline Table reference_policy(const WorldSpec& world) { return reference_policy(world, world.alpha); }

enum class RatioState {
    Finite,
    Diverged,      // p+ = 0 < p-: the density ratio is infinite
    OutsideSupport // p+ = p- = 0
};

struct RatioCell {
    double value = 0.0;
    RatioState state = RatioState::Finite;

    bool finite() const noexcept { return state == RatioState::Finite; }
};

/// Table of g*(y|x) = p-(y|x) / p+(y|x) with explicit divergence markers.
class DensityRatioTable {
public:
    DensityRatioTable(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), cells_(rows * cols) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    RatioCell& operator()(std::size_t r, std::size_t c) { return cells_[r * cols_ + c]; }
    const RatioCell& operator()(std::size_t r, std::size_t c) const { return cells_[r * cols_ + c]; }
    const std::vector<RatioCell>& cells() const noexcept { return cells_; }

    bool any_diverged() const {
        return std::any_of(cells_.begin(), cells_.end(),
                           [](const RatioCell& c) { return c.state == RatioState::Diverged; });
    }

private:
    std::size_t rows_;
    std::size_t cols_;
    std::vector<RatioCell> cells_;
};

struct TrueRatios {
    DensityRatioTable density;  // g*
    Table relative;             // r*, always in [0, 1/alpha]
};

inline TrueRatios true_ratios(const WorldSpec& world) {
    const Table ref = reference_policy(world);
    TrueRatios out{DensityRatioTable(world.num_prompts, world.num_responses),
                   Table(world.num_prompts, world.num_responses)};
    for (std::size_t x = 0; x < world.num_prompts; ++x) {
        for (std::size_t y = 0; y < world.num_responses; ++y) {
            const double pp = world.preferred_cond(x, y);
            const double pm = world.nonpreferred_cond(x, y);
            RatioCell& g = out.density(x, y);
            if (pp > 0.0) {
                g = {pm / pp, RatioState::Finite};
            } else if (pm > 0.0) {
                g = {0.0, RatioState::Diverged};
            } else {
                g = {0.0, RatioState::OutsideSupport};
            }
            // pp <= ref / alpha holds in exact arithmetic; rounding may push a hair above.
            out.relative(x, y) = ref(x, y) > 0.0 ? std::min(pp / ref(x, y), 1.0 / world.alpha) : 0.0;
        }
    }
    return out;
}

/// Draws n preferred pairs from p(x)p+(y|x) and m non-preferred pairs from
/// p(x)p-(y|x). Preferred samples come first in the returned dataset.
inline PreferenceDataset sample_dataset(const WorldSpec& world, std::size_t n, std::size_t m,
                                        std::uint64_t seed) {
    auto draw = [&](const Table& cond, std::size_t count, Label label, std::uint64_t stream,
                    PreferenceDataset& out) {
        if (count == 0) return;
        std::vector<double> joint(world.num_prompts * world.num_responses);
        for (std::size_t x = 0; x < world.num_prompts; ++x)
            for (std::size_t y = 0; y < world.num_responses; ++y)
                joint[x * world.num_responses + y] = world.prompt_dist[x] * cond(x, y);
        std::discrete_distribution<std::size_t> cell(joint.begin(), joint.end());
        std::mt19937_64 rng(derive_seed(seed, stream));
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t c = cell(rng);
            out.add({c / world.num_responses, c % world.num_responses, label});
        }
    };
    PreferenceDataset out;
    draw(world.preferred_cond, n, Label::Preferred, 1, out);
    draw(world.nonpreferred_cond, m, Label::NonPreferred, 2, out);
    return out;
}

/// Random world with every row drawn from a symmetric Dirichlet.
inline WorldSpec random_world(std::size_t num_prompts, std::size_t num_responses, double alpha,
                              double concentration, std::uint64_t seed) {
    if (!(concentration > 0.0)) throw std::invalid_argument("Dirichlet concentration must be positive");
    std::mt19937_64 rng(derive_seed(seed, 0x77));
    WorldSpec w;
    w.num_prompts = num_prompts;
    w.num_responses = num_responses;
    w.alpha = alpha;
    w.prompt_dist = detail::dirichlet(num_prompts, concentration, rng);
    w.preferred_cond = Table(num_prompts, num_responses);
    w.nonpreferred_cond = Table(num_prompts, num_responses);
    for (std::size_t x = 0; x < num_prompts; ++x) {
        const auto p = detail::dirichlet(num_responses, concentration, rng);
        const auto q = detail::dirichlet(num_responses, concentration, rng);
        std::copy(p.begin(), p.end(), w.preferred_cond.row(x).begin());
        std::copy(q.begin(), q.end(), w.nonpreferred_cond.row(x).begin());
    }
    w.validate();
    return w;
}

/// World whose per-prompt supports of p+ and p- share at most
/// ceil(overlap * num_responses) responses. The two supports jointly cover
/// every response, so p_ref has full support. overlap = 1 imposes nothing.
inline WorldSpec make_disjoint_world(std::size_t num_prompts, std::size_t num_responses, double overlap,
                                     double alpha, std::uint64_t seed, double concentration = 1.0) {
    if (num_responses < 2) throw std::invalid_argument("need at least two responses to separate supports");
    if (!(overlap >= 0.0 && overlap <= 1.0)) throw std::invalid_argument("overlap must lie in [0, 1]");
    if (overlap >= 1.0) return random_world(num_prompts, num_responses, alpha, concentration, seed);

    std::mt19937_64 rng(derive_seed(seed, 0x99));
    WorldSpec w;
    w.num_prompts = num_prompts;
    w.num_responses = num_responses;
    w.alpha = alpha;
    w.prompt_dist = detail::dirichlet(num_prompts, concentration, rng);
    w.preferred_cond = Table(num_prompts, num_responses);
    w.nonpreferred_cond = Table(num_prompts, num_responses);

    const auto shared = std::min<std::size_t>(
        num_responses - 2,
        static_cast<std::size_t>(std::ceil(overlap * static_cast<double>(num_responses))));
    const std::size_t exclusive = num_responses - shared;
    const std::size_t pref_only = (exclusive + 1) / 2;

    std::vector<std::size_t> order(num_responses);
    for (std::size_t x = 0; x < num_prompts; ++x) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<std::size_t> pref(order.begin(), order.begin() + static_cast<long>(shared + pref_only));
        std::vector<std::size_t> nonpref(order.begin(), order.begin() + static_cast<long>(shared));
        nonpref.insert(nonpref.end(), order.begin() + static_cast<long>(shared + pref_only), order.end());
        const auto p = detail::dirichlet(pref.size(), concentration, rng);
        const auto q = detail::dirichlet(nonpref.size(), concentration, rng);
        for (std::size_t i = 0; i < pref.size(); ++i) w.preferred_cond(x, pref[i]) = p[i];
        for (std::size_t i = 0; i < nonpref.size(); ++i) w.nonpreferred_cond(x, nonpref[i]) = q[i];
    }
    w.validate();
    return w;
}

/// Largest per-prompt count of responses in both supports.
inline std::size_t max_support_overlap(const WorldSpec& world) {
    std::size_t worst = 0;
    for (std::size_t x = 0; x < world.num_prompts; ++x) {
        std::size_t shared = 0;
        for (std::size_t y = 0; y < world.num_responses; ++y)
            if (world.preferred_cond(x, y) > 0.0 && world.nonpreferred_cond(x, y) > 0.0) ++shared;
        worst = std::max(worst, shared);
    }
    return worst;
}

}  // namespace rdro
