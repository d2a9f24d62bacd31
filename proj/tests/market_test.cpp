#include "subsidy/market.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "subsidy/core.hpp"

using namespace subsidy;

namespace {

CityProfile profile(const std::string& id) {
  for (auto& p : default_profiles())
    if (p.city_id == id) return p;
  throw std::runtime_error("unknown profile " + id);
}

}  // namespace

TEST(CityProfileTest, DefaultRosterValidatesAndRoundTrips) {
  auto profiles = default_profiles();
  ASSERT_EQ(profiles.size(), 6u);
  std::set<std::string> ids;
  for (const auto& p : profiles) {
    EXPECT_NO_THROW(p.validate());
    ids.insert(p.city_id);
    CityProfile back = CityProfile::from_kv(p.to_kv());
    EXPECT_EQ(back.city_id, p.city_id);
    EXPECT_EQ(back.cap_C, p.cap_C);
    EXPECT_EQ(back.demand_curve, p.demand_curve);
    EXPECT_EQ(back.behavior_lambda, p.behavior_lambda);
  }
  EXPECT_EQ(ids.size(), 6u);
}

TEST(CityProfileTest, ValidationCatchesBadFields) {
  auto p = profile("city_a");
  p.margin = 1.0;
  EXPECT_THROW(p.validate(), ValidationError);
  p = profile("city_a");
  p.base_prob_hi = 1.0;
  EXPECT_THROW(p.validate(), ValidationError);
  p = profile("city_a");
  p.elasticity = 0.0;
  EXPECT_THROW(p.validate(), ValidationError);
}

TEST(GeneratePairsTest, MeanCountMatchesDemandCurve) {
  auto p = profile("city_b");
  const int t = 216;  // 18:00 with 5-minute windows
  const double expect = p.hourly_rate(18.0) * p.demand_scale * 5.0 / 60.0;
  SeededRng rng(7, 11);
  double total = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) total += generate_pairs(p, t, rng).size();
  EXPECT_NEAR(total / n, expect, 0.02 * expect);
}

TEST(GeneratePairsTest, PairsSatisfyEconomicInvariants) {
  auto p = profile("city_a");
  SeededRng rng(7, 12);
  for (int t : {0, 60, 120, 216, 270}) {
    auto pairs = generate_pairs(p, t, rng);
    for (const auto& pr : pairs) {
      ASSERT_NO_THROW(pr.validate());
      EXPECT_NEAR(pr.reward, p.margin * pr.gmv, 1e-12);
      EXPECT_NEAR(pr.cap, p.cap_frac * pr.gmv, 1e-12);
      // completion probability stays a probability across the whole brief range
      EXPECT_LE(pr.base_prob + pr.slope * pr.cap, 1.0 + 1e-12);
      EXPECT_GE(completion_prob(pr, 0.0), 0.0);
      EXPECT_LE(completion_prob(pr, pr.cap), 1.0);
    }
  }
}

TEST(CompletionProbTest, RejectsOutOfRangeSubsidy) {
  PairEconomics pr{.reward = 5, .gmv = 20, .slope = 0.02, .cap = 10, .base_prob = 0.3};
  EXPECT_THROW(completion_prob(pr, -0.1), ValidationError);
  EXPECT_THROW(completion_prob(pr, 10.5), ValidationError);
  EXPECT_NEAR(completion_prob(pr, 5.0), 0.4, 1e-12);
}

TEST(StepTest, RejectsBadLambda) {
  auto p = profile("city_c");
  SeededRng rng(3, 1);
  SimState s = init_state(p, 0, 5, rng);
  for (double bad : {0.0, -1.0, 30.000001, std::nan("")})
    EXPECT_THROW(step(s, p, bad, rng), ValidationError);
  EXPECT_NO_THROW(step(s, p, kLambdaMax, rng));
}

TEST(UpdateRhoTest, HandlesZeroAndAccumulates) {
  WindowOutcome none;
  auto u0 = update_rho(0.0, 0.0, none);
  EXPECT_EQ(u0.rho, 0.0);

  WindowOutcome w1{.pairs = 3, .completions = 2, .gmv_completed = 50.0, .subsidy_paid = 4.0};
  WindowOutcome w2{.pairs = 2, .completions = 1, .gmv_completed = 30.0, .subsidy_paid = 1.5};
  auto u1 = update_rho(0.0, 0.0, w1);
  auto u2 = update_rho(u1.cum_subsidy, u1.cum_gmv, w2);
  EXPECT_NEAR(u1.rho, 4.0 / 50.0, 1e-15);
  EXPECT_NEAR(u2.rho, 5.5 / 80.0, 1e-15);
}

TEST(StepTest, RhoMatchesPrefixSumsOverADay) {
  auto p = profile("city_b");
  SeededRng rng(11, 4);
  SimState s = init_state(p, 3, 5, rng);
  double cum_s = 0, cum_g = 0;
  for (int t = 0; t < 80; ++t) {
    ASSERT_NEAR(s.market.subsidy_rate_so_far, safe_div(cum_s, cum_g), 1e-12);
    auto [next, o] = step(s, p, 1.3, rng);
    cum_s += o.subsidy_paid;
    cum_g += o.gmv_completed;
    s = std::move(next);
  }
  ASSERT_NEAR(s.market.subsidy_rate_so_far, cum_s / cum_g, 1e-12);
}

TEST(RolloutTest, ProducesValidTrajectoryWithConsistentStates) {
  auto p = profile("city_c");
  auto res = rollout(p, [](const MarketState&, int) { return 1.5; }, 5, SeededRng(21, 9));
  const Trajectory& tr = res.traj;
  EXPECT_NO_THROW(tr.validate());
  EXPECT_EQ(tr.horizon(), 288);
  EXPECT_EQ(tr.states.at(0, kStateDim - 1), 0.0);       // rho starts at 0
  EXPECT_EQ(tr.states.at(0, kFLastAction), 0.0);        // no action yet
  EXPECT_NEAR(tr.states.at(0, kFHorizonLeft), 1.0, 1e-15);
  EXPECT_NEAR(tr.states.at(1, kFLastAction), 1.5 / kLambdaMax, 1e-15);
  double rides = 0;
  for (double v : tr.rides) rides += v;
  EXPECT_EQ(rides, res.summary.total_rides);
  EXPECT_GT(rides, 0);
  // day-end rate equals total subsidy over total gmv
  EXPECT_NEAR(res.summary.c_real, res.summary.total_subsidy / res.summary.total_gmv, 1e-12);
}

// With scalar margin and cap_frac, every pair in a window shares the same
// subsidy-to-gmv ratio, so a constant multiplier pins the day-end rate exactly.
TEST(RolloutTest, ConstantLambdaPinsRealizedRate) {
  auto p = profile("city_a");
  for (double lam : {1.0, 2.0, 5.0}) {
    DualParams d{.lambda = lam, .cap_C = p.cap_C, .tolerance_delta = p.tolerance_delta};
    double expect = std::min(p.margin * d.kappa(), p.cap_frac);
    auto r1 = rollout(p, [&](const MarketState&, int) { return lam; }, 2, SeededRng(5, 1));
    auto r2 = rollout(p, [&](const MarketState&, int) { return lam; }, 9, SeededRng(6, 2));
    EXPECT_NEAR(r1.summary.c_real, expect, 1e-12);
    EXPECT_NEAR(r2.summary.c_real, expect, 1e-12);
  }
}

TEST(RolloutTest, RealizedRateMonotoneNonIncreasingInLambda) {
  auto p = profile("city_b");
  double prev = 1.0;
  for (double lam : {0.3, 0.8, 1.5, 3.0, 8.0, 20.0}) {
    auto r = rollout(p, [&](const MarketState&, int) { return lam; }, 1, SeededRng(9, 3));
    EXPECT_LE(r.summary.c_real, prev + 1e-12);
    prev = r.summary.c_real;
  }
}

TEST(RolloutTest, ExogenousDrawsSharedAcrossPolicies) {
  auto p = profile("city_b");
  auto low = rollout(p, [](const MarketState&, int) { return 0.8; }, 4, SeededRng(31, 7));
  auto high = rollout(p, [](const MarketState&, int) { return 6.0; }, 4, SeededRng(31, 7));
  for (int t = 0; t < low.traj.horizon(); ++t) {
    ASSERT_EQ(low.traj.states.at(t, kFLastPairs), high.traj.states.at(t, kFLastPairs))
        << "pair arrivals diverged at t=" << t;
    ASSERT_EQ(low.traj.states.at(t, kFDemandRate), high.traj.states.at(t, kFDemandRate));
  }
  // same day, more subsidy: weakly more completions window by window in
  // the first step (before supply feedback can differ)
  EXPECT_GE(low.traj.rides[0], high.traj.rides[0]);
}

TEST(RolloutTest, MoreSubsidyMeansMoreCompletionsOnAverage) {
  auto p = profile("city_c");
  double rides_low = 0, rides_high = 0;
  const int days = 120;
  for (int d = 0; d < days; ++d) {
    auto lo = rollout(p, [](const MarketState&, int) { return 1.0; }, d, SeededRng(77, d), 10);
    auto hi = rollout(p, [](const MarketState&, int) { return 4.0; }, d, SeededRng(77, d), 10);
    rides_low += lo.summary.total_rides;
    rides_high += hi.summary.total_rides;
  }
  EXPECT_GT(rides_low / days, rides_high / days);
}

TEST(BehaviorPolicyTest, StaysInRangeAndFollowsDailyShape) {
  auto p = profile("city_a");
  SeededRng root(2025, 0);
  double morning = 0, evening = 0;
  const int days = 60;
  for (int d = 0; d < days; ++d) {
    auto pol = behavior_policy(p, root.fork(d));
    MarketState dummy;
    for (int t = 0; t < 288; ++t) {
      double lam = pol(dummy, t);
      ASSERT_GT(lam, 0.0);
      ASSERT_LE(lam, kLambdaMax);
      double hour = t * 5.0 / 60.0;
      if (hour >= 5.0 && hour < 7.0) morning += lam;
      if (hour >= 17.0 && hour < 19.0) evening += lam;
    }
  }
  // sinusoid minimum sits in the evening peak where subsidies convert best
  EXPECT_GT(morning, evening * 1.2);
}

TEST(InitStateTest, FeaturesWellFormed) {
  auto p = profile("city_e");
  SeededRng rng(1, 1);
  SimState s = init_state(p, 10, 5, rng);
  ASSERT_EQ(s.market.features.size(), size_t(kFeatureDim));
  EXPECT_EQ(s.day.dow, 3);
  EXPECT_GT(s.market.features[kFDemandRate], 0.0);
  auto aug = augment_state(s.market);
  EXPECT_EQ(aug.size(), size_t(kStateDim));
}
