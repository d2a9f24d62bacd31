#include "subsidy/dual.hpp"

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "subsidy/core.hpp"

using namespace subsidy;

namespace {

struct Instance {
  DualParams d;
  double reward, slope, cap;
};

Instance draw_instance(SeededRng& r) {
  Instance in;
  in.d.lambda = r.uniform(1e-3, kLambdaMax);
  in.d.cap_C = r.uniform(0.05, 0.3);
  in.d.tolerance_delta = 0.1 * in.d.cap_C;
  in.reward = r.uniform(1e-3, 100.0);
  in.slope = r.uniform(1e-4, 0.1);
  in.cap = r.uniform(0.5, 100.0);
  return in;
}

}  // namespace

TEST(ClosedFormSubsidyTest, HandWorkedValues) {
  DualParams d{.lambda = 1.0, .cap_C = 0.10, .tolerance_delta = 0.0};
  EXPECT_NEAR(d.kappa(), 0.55, 1e-15);
  EXPECT_NEAR(closed_form_subsidy(d, 10.0, 100.0), 5.5, 1e-12);

  DualParams tight{.lambda = 0.1, .cap_C = 0.10, .tolerance_delta = 0.02};
  // kappa = (0.12 + 10)/2 = 5.06; unclipped b = 101.2 saturates the pair cap
  EXPECT_NEAR(closed_form_subsidy(tight, 20.0, 3.0), 3.0, 1e-12);
}

TEST(ClosedFormSubsidyTest, InvalidInputsThrow) {
  DualParams d{.lambda = 0.0, .cap_C = 0.1, .tolerance_delta = 0.0};
  EXPECT_THROW(closed_form_subsidy(d, 10.0, 5.0), ValidationError);
  d.lambda = -1.0;
  EXPECT_THROW(closed_form_subsidy(d, 10.0, 5.0), ValidationError);
  d.lambda = 1.0;
  EXPECT_THROW(closed_form_subsidy(d, -10.0, 5.0), ValidationError);
  EXPECT_THROW(closed_form_subsidy(d, 10.0, 0.0), ValidationError);
  d.cap_C = 1.5;
  EXPECT_THROW(closed_form_subsidy(d, 10.0, 5.0), ValidationError);
}

TEST(PairwiseLagrangianTest, HandWorkedValue) {
  DualParams d{.lambda = 1.0, .cap_C = 0.1, .tolerance_delta = 0.0};
  EXPECT_NEAR(pairwise_lagrangian_term(d, 10.0, 0.01, 5.5), 0.3025, 1e-12);
}

TEST(ClosedFormSubsidyTest, MatchesGridSearchOracle) {
  SeededRng r(171, 1);
  for (int i = 0; i < 300; ++i) {
    Instance in = draw_instance(r);
    double b_closed = closed_form_subsidy(in.d, in.reward, in.cap);
    double b_grid = oracle::grid_argmax(
        [&](double b) { return pairwise_lagrangian_term(in.d, in.reward, in.slope, b); }, 0.0,
        in.cap, 1e-3);
    ASSERT_NEAR(b_closed, b_grid, 1e-3) << "instance " << i;
  }
}

TEST(ClosedFormSubsidyTest, NonincreasingInLambdaAndNondiscriminatory) {
  DualParams d{.lambda = 0.05, .cap_C = 0.12, .tolerance_delta = 0.012};
  double prev = closed_form_subsidy(d, 25.0, 40.0);
  for (double lam = 0.1; lam <= kLambdaMax; lam += 0.1) {
    d.lambda = lam;
    double b = closed_form_subsidy(d, 25.0, 40.0);
    ASSERT_LE(b, prev + 1e-12);
    prev = b;
  }

  // two identical pairs always receive identical subsidies
  PairEconomics p{.reward = 12.0, .gmv = 48.0, .slope = 0.01, .cap = 24.0, .base_prob = 0.3};
  auto subs = map_window_subsidies(d, {p, p});
  ASSERT_EQ(subs.size(), 2u);
  EXPECT_EQ(subs[0], subs[1]);
  EXPECT_LE(subs[0], p.cap);
}

TEST(GeneralSubsidyTest, LinearModelMatchesClosedForm) {
  SeededRng r(171, 2);
  for (int i = 0; i < 500; ++i) {
    Instance in = draw_instance(r);
    LinearCompletion lin{in.slope};
    double b_gen = general_subsidy(in.d, in.reward, in.cap, lin);
    double b_closed = closed_form_subsidy(in.d, in.reward, in.cap);
    ASSERT_NEAR(b_gen, b_closed, 1e-6) << "instance " << i;
  }
}

TEST(GeneralSubsidyTest, LogisticModelMatchesFineGrid) {
  SeededRng r(171, 3);
  for (int i = 0; i < 12; ++i) {
    Instance in = draw_instance(r);
    in.cap = r.uniform(0.5, 20.0);  // keep the reference grid tractable
    LogisticCompletion model{.scale = r.uniform(0.3, 0.9),
                             .mid = r.uniform(0.2, 0.8) * in.cap,
                             .rate = r.uniform(0.2, 2.0)};
    const double boost = 1.0 + in.d.lambda * (in.d.cap_C + in.d.tolerance_delta);
    auto objective = [&](double b) {
      return (boost * in.reward - in.d.lambda * b) * model.prob(b);
    };
    double b_gen = general_subsidy(in.d, in.reward, in.cap, model);
    double b_grid = oracle::grid_argmax(objective, 0.0, in.cap, 1e-4);
    ASSERT_NEAR(b_gen, b_grid, 2e-4) << "instance " << i;
  }
}

TEST(GeneralSubsidyTest, InteriorSolutionsAreStationary) {
  SeededRng r(171, 4);
  int interior_seen = 0;
  for (int i = 0; i < 200; ++i) {
    Instance in = draw_instance(r);
    LogisticCompletion model{.scale = r.uniform(0.3, 0.9),
                             .mid = r.uniform(0.2, 0.8) * in.cap,
                             .rate = r.uniform(0.05, 2.0)};
    double b = general_subsidy(in.d, in.reward, in.cap, model);
    if (b > 0.0 && b < in.cap) {
      ++interior_seen;
      const double boost = 1.0 + in.d.lambda * (in.d.cap_C + in.d.tolerance_delta);
      double foc = (boost * in.reward - in.d.lambda * b) * model.dprob(b) -
                   in.d.lambda * model.prob(b);
      ASSERT_LE(std::abs(foc), 1e-8) << "instance " << i << " b=" << b;
    }
  }
  EXPECT_GT(interior_seen, 20);  // the draw ranges must actually exercise the interior branch
}

TEST(GeneralSubsidyTest, DecreasingModelRejected) {
  struct Bad {
    double prob(double b) const { return 0.5 * std::sin(b); }
    double dprob(double b) const { return 0.5 * std::cos(b); }
  };
  DualParams d{.lambda = 1.0, .cap_C = 0.1, .tolerance_delta = 0.0};
  EXPECT_THROW(general_subsidy(d, 10.0, 10.0, Bad{}), InvariantError);

  struct NonzeroAtOrigin {
    double prob(double) const { return 0.5; }
    double dprob(double) const { return 0.0; }
  };
  EXPECT_THROW(general_subsidy(d, 10.0, 10.0, NonzeroAtOrigin{}), InvariantError);
}

TEST(MapWindowSubsidiesTest, ValidatesPairsAndPreservesOrder) {
  DualParams d{.lambda = 2.0, .cap_C = 0.13, .tolerance_delta = 0.013};
  std::vector<PairEconomics> pairs;
  SeededRng r(171, 5);
  for (int i = 0; i < 50; ++i) {
    PairEconomics p;
    p.gmv = r.lognormal(2.9, 0.45);
    p.reward = 0.25 * p.gmv;
    p.cap = 0.5 * p.gmv;
    p.base_prob = r.uniform(0.2, 0.4);
    p.slope = std::min(r.uniform(0.005, 0.05), (1.0 - p.base_prob) / p.cap);
    pairs.push_back(p);
  }
  auto subs = map_window_subsidies(d, pairs);
  ASSERT_EQ(subs.size(), pairs.size());
  for (size_t i = 0; i < pairs.size(); ++i) {
    EXPECT_EQ(subs[i], closed_form_subsidy(d, pairs[i].reward, pairs[i].cap));
  }

  pairs[10].base_prob = 0.9;
  pairs[10].slope = 0.2;  // violates slope*cap + base <= 1
  EXPECT_THROW(map_window_subsidies(d, pairs), InvariantError);
}

// The 1-D dual search is a reference for picking a multiplier given a pair
// population; the mapping itself always takes lambda as an input.
TEST(DualSearchOracleTest, GoldenSectionFindsDualMinimum) {
  SeededRng r(171, 6);
  std::vector<PairEconomics> pairs;
  for (int i = 0; i < 200; ++i) {
    PairEconomics p;
    p.gmv = r.lognormal(2.9, 0.45);
    p.reward = 0.25 * p.gmv;
    p.cap = 0.5 * p.gmv;
    p.base_prob = r.uniform(0.2, 0.4);
    p.slope = std::min(r.uniform(0.005, 0.05), (1.0 - p.base_prob) / p.cap);
    pairs.push_back(p);
  }
  const double C = 0.13, delta = 0.013;
  auto dual_value = [&](double lam) {
    DualParams d{.lambda = lam, .cap_C = C, .tolerance_delta = delta};
    double total = 0.0;
    for (const auto& p : pairs) {
      double b = closed_form_subsidy(d, p.reward, p.cap);
      total += pairwise_lagrangian_term(d, p.reward, p.slope, b);
    }
    return total;
  };
  double lam_star = oracle::golden_section_min(dual_value, 1e-3, kLambdaMax, 1e-7);
  // dense-grid reference and convexity spot check
  double best_lam = lam_star, best_v = dual_value(lam_star);
  for (double lam = 1e-3; lam <= kLambdaMax; lam += 1e-3) {
    double v = dual_value(lam);
    if (v < best_v) {
      best_v = v;
      best_lam = lam;
    }
  }
  EXPECT_NEAR(lam_star, best_lam, 2e-3);
  EXPECT_GT(lam_star, 0.0);
  EXPECT_LE(lam_star, kLambdaMax);
}
