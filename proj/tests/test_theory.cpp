#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support.hpp"

using namespace rdro;
namespace rt = rdro::testing;

namespace {

WorldSpec one_prompt(std::vector<double> pos, std::vector<double> neg, double alpha) {
    WorldSpec w;
    w.num_prompts = 1;
    w.num_responses = pos.size();
    w.alpha = alpha;
    w.prompt_dist = {1.0};
    w.preferred_cond = Table::from_rows({pos});
    w.nonpreferred_cond = Table::from_rows({neg});
    w.validate();
    return w;
}

}  // namespace

TEST(EstimationError, ZeroAtTargetPositiveAtReference) {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 50; ++i) {
        const auto inst = rt::random_instance(rng);
        const auto& w = inst.world;
        EXPECT_NEAR(estimation_error(rt::policy_from_probs(w.preferred_cond), w), 0.0, 1e-25);
        const auto at_ref = rt::policy_from_probs(reference_policy(w));
        const double e = estimation_error(at_ref, w);
        EXPECT_GT(e, 0.0);
        EXPECT_NEAR(e, rt::estimation_error_oracle(at_ref.logits(), w), 1e-14);
        EXPECT_NEAR(estimation_error(inst.policy, w), rt::estimation_error_oracle(inst.policy.logits(), w), 1e-14);
    }
}

TEST(MPlus, Examples) {
    EXPECT_DOUBLE_EQ(m_plus(one_prompt({0.25, 0.25, 0.25, 0.25}, {0.25, 0.25, 0.25, 0.25}, 0.5)), 0.25);
    WorldSpec w;
    w.num_prompts = 2;
    w.num_responses = 4;
    w.alpha = 0.5;
    w.prompt_dist = {0.5, 0.5};
    w.preferred_cond = Table::from_rows({{0.9, 0.1, 0, 0}, {0.5, 0.5, 0, 0}});
    w.nonpreferred_cond = Table::from_rows({{0, 0, 0.5, 0.5}, {0, 0, 0.5, 0.5}});
    EXPECT_DOUBLE_EQ(m_plus(w), 0.1);
    EXPECT_DOUBLE_EQ(m_plus(one_prompt({1.0, 0, 0, 0}, {0, 0.5, 0.5, 0}, 0.5)), 1.0);
}

TEST(AlphaCondition, ValuesAndTaylorGap) {
    const auto c = alpha_condition(0.1);
    const double expected = std::pow((std::sqrt(4.01L) - 0.1L) / 2.0L, 2.0L);
    EXPECT_NEAR(c.threshold_exact, expected, 1e-15);
    EXPECT_NEAR(c.threshold_exact, 0.9048751, 1e-7);
    EXPECT_DOUBLE_EQ(c.threshold_taylor, 0.9);
    EXPECT_LE(std::abs(c.threshold_exact - c.threshold_taylor), 0.01);
    EXPECT_NEAR(alpha_condition(1e-12).threshold_exact, 1.0, 1e-11);
    for (double m = 1e-3; m <= 0.5; m += 1e-3) {
        const auto a = alpha_condition(m);
        EXPECT_LE(std::abs(a.threshold_exact - a.threshold_taylor), m * m) << m;
    }
    EXPECT_THROW(alpha_condition(0.0), std::invalid_argument);
    EXPECT_THROW(alpha_condition(1.5), std::invalid_argument);
}

TEST(AlphaCondition, CoefficientComparisonBelowThreshold) {
    for (double m : {0.05, 0.1, 0.3, 0.5}) {
        const double th = alpha_condition(m).threshold_exact;
        for (double a = 0.01; a < th; a += 0.01) {
            const double mu = 0.37;
            EXPECT_LT(rdro_coefficient(a, mu), ddro_coefficient(a, m, mu)) << m << " " << a;
        }
        // just above the threshold the ordering flips
        EXPECT_GT(rdro_coefficient(th + 1e-3, 1.0), ddro_coefficient(th + 1e-3, m, 1.0));
    }
    EXPECT_NEAR(ddro_coefficient(0.5, 0.05, 1.0) / ddro_coefficient(0.5, 0.1, 1.0), 4.0, 1e-12);
}

TEST(EmpiricalRademacher, SingleSampleValues) {
    WorldSpec w = random_world(3, 4, 0.5, 1.0, 2);
    const auto r = empirical_rademacher(1, w, 10000, 7);
    EXPECT_LE(std::abs(r.mean - 0.5), 3 * r.std_error);
    EXPECT_GT(r.std_error, 0.0);
    const auto single = one_prompt({1.0}, {1.0}, 0.5);
    const auto z = empirical_rademacher(1, single, 10000, 7);
    EXPECT_LE(std::abs(z.mean), 3 * z.std_error);
    EXPECT_THROW(empirical_rademacher(1, w, 0, 7), std::invalid_argument);
}

TEST(EmpiricalRademacher, InverseRootScaling) {
    WorldSpec w = random_world(2, 4, 0.5, 1.0, 3);
    const double a = empirical_rademacher(256, w, 10000, 1).mean;
    const double b = empirical_rademacher(1024, w, 10000, 2).mean;
    EXPECT_GE(a / b, 1.6);
    EXPECT_LE(a / b, 2.4);
}

TEST(EmpiricalRademacher, DeterministicAcrossThreadCounts) {
    WorldSpec w = random_world(2, 3, 0.5, 1.0, 4);
    const auto a = empirical_rademacher(50, w, 500, 9);
    const auto b = empirical_rademacher(50, w, 500, 9);
    EXPECT_EQ(a.mean, b.mean);
    EXPECT_EQ(a.std_error, b.std_error);
}

TEST(RdroBound, ComponentsAndAssembly) {
    WorldSpec w = random_world(2, 4, 0.4, 2.0, 5);
    const auto range = rdro_default_range(w);
    const auto r = rdro_bound(w, range, 500, 700, 500, 3);
    EXPECT_EQ(r.inf_risk, 0.0);
    for (double v : {r.mu, r.c_lip, r.rademacher_n, r.rademacher_m, r.coefficient, r.bound_value})
        EXPECT_GE(v, 0.0);
    EXPECT_NEAR(r.mu, 1.0 / (range.upper * (1 + range.upper)), 1e-15);
    EXPECT_NEAR(r.c_lip, r.l1 + r.l2 / w.alpha, 1e-12);
    EXPECT_NEAR(r.coefficient, 2 / (w.alpha * r.mu), 1e-9);
    const double a = w.alpha;
    EXPECT_NEAR(r.bound_value,
                r.coefficient * (4 * r.c_lip * (a * r.rademacher_n + (1 - a) * r.rademacher_m)), 1e-9 * r.bound_value);
    EXPECT_TRUE(r.rademacher_weighting_holds(a));
    EXPECT_THROW(rdro_bound(w, range, 0, 1, 10, 1), std::invalid_argument);
}

TEST(RdroBound, DecreasesAtInverseRootRate) {
    WorldSpec w = random_world(2, 4, 0.5, 2.0, 6);
    const auto range = rdro_default_range(w);
    std::vector<double> ln, lb;
    double prev = INFINITY;
    for (std::size_t n : {256u, 1024u, 4096u, 16384u}) {
        const auto r = rdro_bound(w, range, n, n, 2000, 11);
        EXPECT_LT(r.bound_value, prev);
        prev = r.bound_value;
        ln.push_back(std::log(static_cast<double>(n)));
        lb.push_back(std::log(r.bound_value));
    }
    const auto fit = ols_fit(ln, lb);
    EXPECT_GE(fit.slope, -0.75);
    EXPECT_LE(fit.slope, -0.25);
}

TEST(DdroBound, DivergedOnDisjointWorld) {
    WorldSpec w = make_disjoint_world(3, 6, 0.0, 0.5, 1);
    const auto r = ddro_bound(w, std::nullopt, 100, 100, 100, 1);
    EXPECT_TRUE(r.diverged);
    EXPECT_FALSE(r.sup_g_star.has_value());
    EXPECT_TRUE(std::isinf(r.bound_value));
}

TEST(DdroBound, AssemblyAndComparison) {
    // m+ = 0.1, overlapping supports
    WorldSpec w = one_prompt({0.1, 0.4, 0.5}, {0.3, 0.3, 0.4}, 0.5);
    const auto d = ddro_bound(w, std::nullopt, 400, 400, 500, 2);
    ASSERT_FALSE(d.diverged);
    EXPECT_DOUBLE_EQ(d.m_plus, 0.1);
    ASSERT_TRUE(d.sup_g_star.has_value());
    EXPECT_NEAR(*d.sup_g_star, 3.0, 1e-12);
    EXPECT_NEAR(d.c_lip, d.l1 + 3.0 * d.l2, 1e-12);
    EXPECT_NEAR(d.coefficient, 2 * 0.25 / (0.25 * 0.01 * d.mu), 1e-9 * d.coefficient);
    EXPECT_NEAR(d.bound_value, d.coefficient * 4 * d.c_lip * (d.rademacher_n + d.rademacher_m),
                1e-9 * d.bound_value);
    EXPECT_TRUE(d.rademacher_weighting_holds(0.5));
    // with a shared mu the coefficient ordering is the alpha condition
    const double mu = 0.2;
    EXPECT_LT(rdro_coefficient(0.5, mu), ddro_coefficient(0.5, d.m_plus, mu));
}

TEST(LemmaChain, HoldsOnRandomInstances) {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 100; ++i) {
        const auto inst = rt::random_instance(rng);
        const auto c = lemma_chain(inst.policy, inst.world);
        EXPECT_TRUE(c.strong_convexity_holds) << c.risk << " vs " << 0.5 * c.mu * c.ratio_gap;
        EXPECT_TRUE(c.error_bound_holds) << c.estimation_error << " vs " << c.risk;
        EXPECT_GT(c.mu, 0.0);
    }
}

TEST(InfRisk, FrozenRowsContributeExactly) {
    WorldSpec w = random_world(3, 4, 0.5, 1.0, 8);
    const auto init = init_policy(ReferenceLogProbs::from_probabilities(reference_policy(w)), 0.0, 0);
    EXPECT_EQ(rdro_inf_risk(w, init, {}), 0.0);
    const std::vector<std::size_t> frozen{0, 2};
    const double r = rdro_inf_risk(w, init, frozen);
    EXPECT_GT(r, 0.0);
    EXPECT_LT(r, rdro_bregman_risk(init, w));
    // free rows at their optimum, frozen rows at init: full risk equals the frozen-row part
    Table logits = rt::policy_from_probs(w.preferred_cond).logits();
    for (std::size_t x : frozen)
        std::copy(init.logits().row(x).begin(), init.logits().row(x).end(), logits.row(x).begin());
    EXPECT_NEAR(rdro_bregman_risk(PolicyLogits(logits), w), r, 1e-12);
}

TEST(ConvergenceStudy, ErrorsDecreaseAndSlopeNearHalf) {
    WorldSpec w = random_world(2, 4, 0.5, 5.0, 11);
    TrainConfig c;
    c.batch_size = 1 << 20;
    c.epochs = 500;
    c.learning_rate = 0.05;
    c.seed = 3;
    const std::vector<std::size_t> sizes{64, 256, 1024, 4096};
    const auto s = convergence_study(w, sizes, 5, c);
    ASSERT_EQ(s.mean_error.size(), 4u);
    for (std::size_t i = 1; i < sizes.size(); ++i) EXPECT_LT(s.mean_error[i], s.mean_error[i - 1]);
    EXPECT_GE(s.fitted_slope, -0.75);
    EXPECT_LE(s.fitted_slope, -0.25);
    EXPECT_THROW(convergence_study(w, std::vector<std::size_t>{64, 128, 256}, 5, c), std::invalid_argument);
    EXPECT_THROW(convergence_study(w, sizes, 1, c), std::invalid_argument);
}

TEST(ConvergenceStudy, MisspecifiedWorldPlateaus) {
    WorldSpec w = random_world(2, 4, 0.5, 5.0, 12);
    TrainConfig c;
    c.batch_size = 1 << 20;
    c.epochs = 500;
    c.learning_rate = 0.05;
    c.frozen_prompts = {0};
    const std::vector<std::size_t> sizes{64, 256, 1024, 4096};
    const auto s = convergence_study(w, sizes, 5, c);
    // the frozen row keeps p_theta = p_ref there, an error floor independent of N
    Table logits = rt::policy_from_probs(w.preferred_cond).logits();
    const auto init = init_policy(ReferenceLogProbs::from_probabilities(reference_policy(w)), 0.0, 0);
    std::copy(init.logits().row(0).begin(), init.logits().row(0).end(), logits.row(0).begin());
    const double floor = estimation_error(PolicyLogits(logits), w);
    ASSERT_GT(floor, 0.0);
    for (double e : s.mean_error) EXPECT_GE(e, floor * (1 - 1e-9));
    EXPECT_LT(s.mean_error.back() - floor, 0.2 * floor);
    EXPECT_GT(s.fitted_slope, -0.25);
}

TEST(OlsFit, ExactLine) {
    const std::vector<double> x{1, 2, 3, 4}, y{3, 5, 7, 9};
    const auto f = ols_fit(x, y);
    EXPECT_NEAR(f.slope, 2.0, 1e-14);
    EXPECT_NEAR(f.intercept, 1.0, 1e-14);
    EXPECT_NEAR(f.r2, 1.0, 1e-14);
}

TEST(BradleyTerry, CyclicTargetsForceHalf) {
    const auto f = bt_cyclic_fit(0.7);
    EXPECT_EQ(f.rewards[0], 0.0);
    for (double p : f.pairwise_probs) EXPECT_NEAR(p, 0.5, 1e-3);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) EXPECT_NEAR(f.rewards[i], f.rewards[j], 1e-3);
    const auto h = bt_cyclic_fit(0.5);
    for (double p : h.pairwise_probs) EXPECT_EQ(p, 0.5);
    EXPECT_THROW(bt_cyclic_fit(1.0), std::invalid_argument);
    EXPECT_THROW(bt_cyclic_fit(0.0), std::invalid_argument);
}
