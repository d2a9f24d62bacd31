#pragma once

// ===== Synthetic city market =====
//
// Poisson pair arrivals from a 24-hour demand curve, lognormal order values,
// and an affine-clipped completion response min(1, base + slope*b).  The
// response is deliberately richer than the planner's linear assumption:
// supply tightness moves the intercept and pickup distance moves the slope,
// so a constant multiplier is not the best achievable policy.
//
// All exogenous randomness (arrivals, order values, completion thresholds)
// is drawn in a fixed order that does not depend on the policy, so two
// policies rolled out on the same stream face the same market day.

#include <array>
#include <cmath>
#include <deque>
#include <string>
#include <vector>

#include "subsidy/core.hpp"
#include "subsidy/dual.hpp"

namespace subsidy {

// --- feature vector layout (kFeatureDim entries, rho appended as index 19) ---
enum Feature : int {
  kFHourSin = 0,
  kFHourCos,
  kFDowSin,
  kFDowCos,
  kFDemandRate,   // noisy forecast of expected pairs this window, normalized
  kFSupply,       // noisy supply-level proxy
  kFLastComplRate,
  kFLastRides,
  kFLastGmv,
  kFLastDrv,
  kFRollRides,    // 6-window rolling means
  kFRollGmv,
  kFRollDrv,
  kFLastPickup,   // mean pickup distance last window, km / 3
  kFLastPairs,
  kFCumRides,
  kFCumGmv,
  kFHorizonLeft,
  kFLastAction,   // lambda_{t-1} / 30, 0 before the first decision
};

struct CityProfile {
  std::string city_id;
  double demand_scale = 1.0;
  std::array<double, 24> demand_curve{};  // orders/hour at scale 1
  std::array<double, 7> demand_dow{1, 1, 1, 1, 1.1, 1.15, 0.9};
  double day_sigma = 0.12;        // lognormal sigma of the day-level demand multiplier
  double gmv_mu = 2.9, gmv_sigma = 0.45;
  double margin = 0.25;           // reward = margin * gmv
  double slope_base = 0.015;      // completion slope at zero pickup distance
  double slope_per_km = 0.006;    // slope gain per pickup km
  double pickup_mean_km = 1.8;
  double pickup_peak_gain = 0.6;  // pickup distances stretch when demand peaks
  double base_prob_lo = 0.28, base_prob_hi = 0.42;
  double base_peak_dip = 0.25;    // intercept dip at the demand peak (tight supply)
  double cap_frac = 0.5;          // per-pair cap = cap_frac * gmv
  double cap_C = 0.13;            // relative-spend cap
  double tolerance_delta = 0.013; // operating tolerance, default 0.1 * cap_C
  double noise_sigma = 0.03;
  double elasticity = 0.35;       // completions -> next-window supply feedback
  // logged behavior policy: fixed level, daily sinusoid, day/window noise
  double behavior_lambda = 1.25;
  double behavior_amp = 0.35;
  double behavior_phase = 0.0;    // 0 puts the sinusoid minimum at 18:00
  double behavior_day_sigma = 0.22;
  double behavior_noise = 0.10;

  void validate() const {
    if (city_id.empty()) throw ValidationError("CityProfile: empty city_id");
    if (!(demand_scale > 0.0)) throw ValidationError("CityProfile: demand_scale must be > 0");
    for (double v : demand_curve)
      if (!(v >= 0.0)) throw ValidationError("CityProfile: demand_curve entries must be >= 0");
    if (!(margin > 0.0 && margin < 1.0))
      throw ValidationError("CityProfile: margin must lie in (0,1)");
    if (!(cap_frac > 0.0 && cap_frac <= 1.0))
      throw ValidationError("CityProfile: cap_frac must lie in (0,1]");
    if (!(base_prob_lo >= 0.0 && base_prob_lo <= base_prob_hi && base_prob_hi < 1.0))
      throw ValidationError("CityProfile: base_prob range must satisfy 0 <= lo <= hi < 1");
    if (!(cap_C > 0.0 && cap_C < 1.0)) throw ValidationError("CityProfile: cap_C in (0,1)");
    if (tolerance_delta < 0.0) throw ValidationError("CityProfile: tolerance_delta >= 0");
    if (!(elasticity > 0.0)) throw ValidationError("CityProfile: elasticity must be > 0");
    if (noise_sigma < 0.0) throw ValidationError("CityProfile: noise_sigma >= 0");
    if (!(gmv_sigma >= 0.0)) throw ValidationError("CityProfile: gmv_sigma >= 0");
    if (!(behavior_lambda > 0.0 && behavior_lambda <= kLambdaMax))
      throw ValidationError("CityProfile: behavior_lambda outside (0,30]");
  }

  double curve_mean() const {
    double s = 0;
    for (double v : demand_curve) s += v;
    return s / 24.0;
  }
  double curve_min() const { return *std::min_element(demand_curve.begin(), demand_curve.end()); }
  double curve_max() const { return *std::max_element(demand_curve.begin(), demand_curve.end()); }

  // scale anchors used to keep features O(1); derived, not configured
  double norm_pairs(int window_minutes) const {
    return std::max(1e-9, curve_mean() * demand_scale * window_minutes / 60.0);
  }
  double norm_gmv(int window_minutes) const {
    return norm_pairs(window_minutes) * std::exp(gmv_mu + 0.5 * gmv_sigma * gmv_sigma);
  }
  double norm_rides(int window_minutes) const { return norm_pairs(window_minutes) * 0.45; }

  // demand intensity in [0,1] used for pickup stretch and supply dip
  double peak_shape(double hour) const {
    double lo = curve_min(), hi = curve_max();
    return hi - lo < 1e-12 ? 0.0 : (hourly_rate(hour) - lo) / (hi - lo);
  }

  // linear interpolation between hourly buckets keeps windows smooth
  double hourly_rate(double hour) const {
    double h = std::fmod(hour, 24.0);
    int h0 = static_cast<int>(h);
    double frac = h - h0;
    int h1 = (h0 + 1) % 24;
    return demand_curve[h0] * (1.0 - frac) + demand_curve[h1] * frac;
  }

  KvMap to_kv() const;
  static CityProfile from_kv(const KvMap& kv);
};

inline KvMap CityProfile::to_kv() const {
  KvMap kv;
  auto put = [&](const std::string& k, double v) {
    char buf[40];
    snprintf(buf, sizeof(buf), "%.17g", v);
    kv[k] = buf;
  };
  kv["city_id"] = city_id;
  put("demand_scale", demand_scale);
  std::string curve;
  for (int i = 0; i < 24; ++i) {
    char buf[40];
    snprintf(buf, sizeof(buf), "%.17g", demand_curve[i]);
    curve += (i ? "," : "") + std::string(buf);
  }
  kv["demand_curve"] = curve;
  std::string dow;
  for (int i = 0; i < 7; ++i) {
    char buf[40];
    snprintf(buf, sizeof(buf), "%.17g", demand_dow[i]);
    dow += (i ? "," : "") + std::string(buf);
  }
  kv["demand_dow"] = dow;
  put("day_sigma", day_sigma);
  put("gmv_mu", gmv_mu);
  put("gmv_sigma", gmv_sigma);
  put("margin", margin);
  put("slope_base", slope_base);
  put("slope_per_km", slope_per_km);
  put("pickup_mean_km", pickup_mean_km);
  put("pickup_peak_gain", pickup_peak_gain);
  put("base_prob_lo", base_prob_lo);
  put("base_prob_hi", base_prob_hi);
  put("base_peak_dip", base_peak_dip);
  put("cap_frac", cap_frac);
  put("cap_C", cap_C);
  put("tolerance_delta", tolerance_delta);
  put("noise_sigma", noise_sigma);
  put("elasticity", elasticity);
  put("behavior_lambda", behavior_lambda);
  put("behavior_amp", behavior_amp);
  put("behavior_phase", behavior_phase);
  put("behavior_day_sigma", behavior_day_sigma);
  put("behavior_noise", behavior_noise);
  return kv;
}

inline CityProfile CityProfile::from_kv(const KvMap& kv) {
  CityProfile p;
  p.city_id = kv_string(kv, "city_id");
  p.demand_scale = kv_double(kv, "demand_scale");
  auto curve = kv_doubles(kv, "demand_curve");
  if (curve.size() != 24)
    throw ValidationError("CityProfile: demand_curve needs 24 hourly entries");
  std::copy(curve.begin(), curve.end(), p.demand_curve.begin());
  if (kv.count("demand_dow")) {
    auto dow = kv_doubles(kv, "demand_dow");
    if (dow.size() != 7) throw ValidationError("CityProfile: demand_dow needs 7 entries");
    std::copy(dow.begin(), dow.end(), p.demand_dow.begin());
  }
  p.day_sigma = kv_double(kv, "day_sigma", p.day_sigma);
  p.gmv_mu = kv_double(kv, "gmv_mu");
  p.gmv_sigma = kv_double(kv, "gmv_sigma");
  p.margin = kv_double(kv, "margin");
  p.slope_base = kv_double(kv, "slope_base", p.slope_base);
  p.slope_per_km = kv_double(kv, "slope_per_km", p.slope_per_km);
  p.pickup_mean_km = kv_double(kv, "pickup_mean_km", p.pickup_mean_km);
  p.pickup_peak_gain = kv_double(kv, "pickup_peak_gain", p.pickup_peak_gain);
  p.base_prob_lo = kv_double(kv, "base_prob_lo");
  p.base_prob_hi = kv_double(kv, "base_prob_hi");
  p.base_peak_dip = kv_double(kv, "base_peak_dip", p.base_peak_dip);
  p.cap_frac = kv_double(kv, "cap_frac");
  p.cap_C = kv_double(kv, "cap_C");
  p.tolerance_delta = kv_double(kv, "tolerance_delta", 0.1 * p.cap_C);
  p.noise_sigma = kv_double(kv, "noise_sigma", p.noise_sigma);
  p.elasticity = kv_double(kv, "elasticity", p.elasticity);
  p.behavior_lambda = kv_double(kv, "behavior_lambda", p.behavior_lambda);
  p.behavior_amp = kv_double(kv, "behavior_amp", p.behavior_amp);
  p.behavior_phase = kv_double(kv, "behavior_phase", p.behavior_phase);
  p.behavior_day_sigma = kv_double(kv, "behavior_day_sigma", p.behavior_day_sigma);
  p.behavior_noise = kv_double(kv, "behavior_noise", p.behavior_noise);
  p.validate();
  return p;
}

// ===== per-day simulation state =====

struct DayContext {
  int day_index = 0;
  int dow = 0;
  double dow_factor = 1.0;
  double day_mult = 1.0;  // day-level demand multiplier, drawn once per day
};

struct WindowOutcome {
  int pairs = 0;
  int completions = 0;
  double gmv_completed = 0.0;
  double drv_total = 0.0;     // driver take: (1-margin)*gmv + subsidy, completed pairs
  double subsidy_paid = 0.0;  // paid only on completion
  double mean_pickup_km = 0.0;
};

struct RhoUpdate {
  double rho = 0.0;
  double cum_subsidy = 0.0;
  double cum_gmv = 0.0;
};

inline RhoUpdate update_rho(double cum_subsidy, double cum_gmv, const WindowOutcome& o) {
  RhoUpdate u;
  u.cum_subsidy = cum_subsidy + o.subsidy_paid;
  u.cum_gmv = cum_gmv + o.gmv_completed;
  u.rho = safe_div(u.cum_subsidy, u.cum_gmv, 0.0);  // 0/0 before any completion
  return u;
}

struct SimState {
  int t = 0;
  int window_minutes = 5;
  DayContext day;
  MarketState market;          // what the policy observes
  double supply = 1.0;         // latent supply level, drives base_prob
  double cum_subsidy = 0.0, cum_gmv = 0.0, cum_rides = 0.0;
  WindowOutcome last;          // previous window's outcome
  double last_action = 0.0;
  std::deque<double> roll_rides, roll_gmv, roll_drv;  // capped at 6 windows

  int horizon() const { return kMinutesPerDay / window_minutes; }
};

namespace detail {

inline double window_hour(int t, int window_minutes) {
  return t * window_minutes / 60.0;
}

inline double expected_pairs(const CityProfile& p, const DayContext& day, int t,
                             int window_minutes) {
  double hour = window_hour(t, window_minutes);
  return p.hourly_rate(hour) * p.demand_scale * (window_minutes / 60.0) * day.dow_factor *
         day.day_mult;
}

inline std::vector<double> build_features(const CityProfile& p, const SimState& s,
                                          double rate_forecast, double supply_obs) {
  const int T = s.horizon();
  const double np = p.norm_pairs(s.window_minutes);
  const double ng = p.norm_gmv(s.window_minutes);
  const double nr = p.norm_rides(s.window_minutes);
  const double hour = window_hour(s.t, s.window_minutes);
  auto roll_mean = [](const std::deque<double>& q) {
    if (q.empty()) return 0.0;
    double m = 0;
    for (double v : q) m += v;
    return m / q.size();
  };
  std::vector<double> f(kFeatureDim, 0.0);
  f[kFHourSin] = std::sin(2 * M_PI * hour / 24.0);
  f[kFHourCos] = std::cos(2 * M_PI * hour / 24.0);
  f[kFDowSin] = std::sin(2 * M_PI * s.day.dow / 7.0);
  f[kFDowCos] = std::cos(2 * M_PI * s.day.dow / 7.0);
  f[kFDemandRate] = rate_forecast / np;
  f[kFSupply] = supply_obs;
  f[kFLastComplRate] = s.last.pairs > 0 ? double(s.last.completions) / s.last.pairs : 0.0;
  f[kFLastRides] = s.last.completions / nr;
  f[kFLastGmv] = s.last.gmv_completed / ng;
  f[kFLastDrv] = s.last.drv_total / ng;
  f[kFRollRides] = roll_mean(s.roll_rides) / nr;
  f[kFRollGmv] = roll_mean(s.roll_gmv) / ng;
  f[kFRollDrv] = roll_mean(s.roll_drv) / ng;
  f[kFLastPickup] = s.last.mean_pickup_km / 3.0;
  f[kFLastPairs] = s.last.pairs / np;
  f[kFCumRides] = s.cum_rides / (nr * T);
  f[kFCumGmv] = s.cum_gmv / (ng * T);
  f[kFHorizonLeft] = double(T - s.t) / T;
  f[kFLastAction] = s.last_action / kLambdaMax;
  return f;
}

struct PairDraw {
  PairEconomics econ;
  double pickup_km = 0.0;
  double completion_u = 1.0;  // pair completes iff u <= prob
};

// Exogenous draws only; identical across policies sharing a stream.
inline std::vector<PairDraw> draw_pairs(const CityProfile& p, const DayContext& day, int t,
                                        int window_minutes, double supply, SeededRng& rng) {
  const double rate = expected_pairs(p, day, t, window_minutes);
  const double hour = window_hour(t, window_minutes);
  const double peak = p.peak_shape(hour);
  const int n = rng.poisson(rate);
  std::vector<PairDraw> out(n);
  for (auto& pd : out) {
    auto& e = pd.econ;
    e.gmv = rng.lognormal(p.gmv_mu, p.gmv_sigma);
    e.reward = p.margin * e.gmv;
    e.cap = p.cap_frac * e.gmv;
    pd.pickup_km = std::clamp(
        rng.exponential(p.pickup_mean_km * (1.0 + p.pickup_peak_gain * peak)), 0.05, 9.0);
    double base = rng.uniform(p.base_prob_lo, p.base_prob_hi);
    base *= std::clamp(supply, 0.0, 2.0) * (1.0 - p.base_peak_dip * peak);
    e.base_prob = std::clamp(base, 0.01, 0.95);
    double slope = p.slope_base + p.slope_per_km * pd.pickup_km;
    // clipping rule: the affine response never exceeds probability 1 at the cap
    e.slope = std::min(slope, (1.0 - e.base_prob) / e.cap * (1.0 - 1e-12));
    pd.completion_u = rng.u01();
  }
  return out;
}

}  // namespace detail

// Spec-facing variant used by tests and tooling: neutral day, unit supply.
inline std::vector<PairEconomics> generate_pairs(const CityProfile& p, int t, SeededRng& rng,
                                                 int window_minutes = 5) {
  p.validate();
  DayContext day;
  auto draws = detail::draw_pairs(p, day, t, window_minutes, 1.0, rng);
  std::vector<PairEconomics> out;
  out.reserve(draws.size());
  for (auto& d : draws) out.push_back(d.econ);
  return out;
}

inline double completion_prob(const PairEconomics& pair, double b) {
  pair.validate();
  if (!(b >= 0.0) || b > pair.cap * (1.0 + 1e-12))
    throw ValidationError(str_printf("completion_prob: subsidy %.6g outside [0, cap=%.6g]", b,
                                     pair.cap));
  return std::min(1.0, pair.base_prob + pair.slope * b);
}

inline SimState init_state(const CityProfile& p, int day_index, int window_minutes,
                           SeededRng& rng) {
  p.validate();
  SimState s;
  s.window_minutes = window_minutes;
  s.day.day_index = day_index;
  s.day.dow = ((day_index % 7) + 7) % 7;
  s.day.dow_factor = p.demand_dow[s.day.dow];
  s.day.day_mult = rng.lognormal(-0.5 * p.day_sigma * p.day_sigma, p.day_sigma);
  s.supply = 1.0;
  double forecast = detail::expected_pairs(p, s.day, 0, window_minutes) *
                    (1.0 + p.noise_sigma * rng.normal());
  double supply_obs = s.supply + 0.3 * p.noise_sigma * rng.normal();
  s.market.features = detail::build_features(p, s, std::max(0.0, forecast), supply_obs);
  s.market.subsidy_rate_so_far = 0.0;
  return s;
}

// One market window under multiplier lambda_t.
inline std::pair<SimState, WindowOutcome> step(const SimState& s, const CityProfile& p,
                                               double lambda_t, SeededRng& rng) {
  if (!std::isfinite(lambda_t) || !(lambda_t > 0.0) || lambda_t > kLambdaMax)
    throw ValidationError(str_printf("step: lambda %.6g outside (0,%g]", lambda_t, kLambdaMax));
  if (s.t >= s.horizon()) throw InvariantError("step: past end of day");

  auto draws = detail::draw_pairs(p, s.day, s.t, s.window_minutes, s.supply, rng);
  DualParams d{.lambda = lambda_t, .cap_C = p.cap_C, .tolerance_delta = p.tolerance_delta};

  WindowOutcome o;
  o.pairs = static_cast<int>(draws.size());
  double pickup_sum = 0.0;
  for (auto& pd : draws) {
    pd.econ.validate();
    double b = closed_form_subsidy(d, pd.econ.reward, pd.econ.cap);
    double prob = completion_prob(pd.econ, b);
    pickup_sum += pd.pickup_km;
    if (pd.completion_u <= prob) {
      ++o.completions;
      o.gmv_completed += pd.econ.gmv;
      o.drv_total += (1.0 - p.margin) * pd.econ.gmv + b;
      o.subsidy_paid += b;
    }
  }
  o.mean_pickup_km = o.pairs > 0 ? pickup_sum / o.pairs : 0.0;

  SimState n = s;
  n.t = s.t + 1;
  n.last = o;
  n.last_action = lambda_t;
  auto upd = update_rho(s.cum_subsidy, s.cum_gmv, o);
  n.cum_subsidy = upd.cum_subsidy;
  n.cum_gmv = upd.cum_gmv;
  n.cum_rides = s.cum_rides + o.completions;
  n.market.subsidy_rate_so_far = upd.rho;

  auto push6 = [](std::deque<double>& q, double v) {
    q.push_back(v);
    if (q.size() > 6) q.pop_front();
  };
  push6(n.roll_rides, o.completions);
  push6(n.roll_gmv, o.gmv_completed);
  push6(n.roll_drv, o.drv_total);

  // supply feedback: completions above the nominal level drain supply,
  // recovery pulls toward 1
  const double comp_norm = o.completions / p.norm_rides(s.window_minutes);
  double supply_noise = 0.5 * p.noise_sigma * rng.normal();
  n.supply = std::clamp(
      s.supply + 0.15 * (1.0 - s.supply) - 0.05 * p.elasticity * (comp_norm - 1.0) +
          supply_noise,
      0.3, 1.7);

  if (n.t < n.horizon()) {
    double forecast = detail::expected_pairs(p, n.day, n.t, n.window_minutes) *
                      (1.0 + p.noise_sigma * rng.normal());
    double supply_obs = n.supply + 0.3 * p.noise_sigma * rng.normal();
    n.market.features = detail::build_features(p, n, std::max(0.0, forecast), supply_obs);
  }
  return {std::move(n), o};
}

// ===== rollouts =====

using Policy = std::function<double(const MarketState&, int t)>;

struct RolloutSummary {
  double total_rides = 0.0;
  double total_gmv = 0.0;
  double total_drv = 0.0;
  double total_subsidy = 0.0;
  double c_real = 0.0;  // day-end realized subsidy rate
  double decide_ms_mean = 0.0;
};

struct RolloutResult {
  Trajectory traj;
  RolloutSummary summary;
};

inline RolloutResult rollout(const CityProfile& p, const Policy& policy, int day_index,
                             SeededRng rng, int window_minutes = 5) {
  const int T = kMinutesPerDay / window_minutes;
  SimState s = init_state(p, day_index, window_minutes, rng);

  RolloutResult res;
  Trajectory& tr = res.traj;
  tr.city_id = p.city_id;
  tr.day_index = day_index;
  tr.window_minutes = window_minutes;
  tr.states = Matrix(T, kStateDim);
  tr.actions.assign(T, 0.0);
  tr.rides.assign(T, 0.0);
  tr.gmv.assign(T, 0.0);
  tr.drv.assign(T, 0.0);
  tr.valid_length = T;

  for (int t = 0; t < T; ++t) {
    auto aug = augment_state(s.market);
    std::copy(aug.begin(), aug.end(), tr.states.row(t).begin());
    double lambda_t = policy(s.market, t);
    auto [next, o] = step(s, p, lambda_t, rng);
    tr.actions[t] = lambda_t;
    tr.rides[t] = o.completions;
    tr.gmv[t] = o.gmv_completed;
    tr.drv[t] = o.drv_total;
    s = std::move(next);
  }
  res.summary.total_rides = s.cum_rides;
  res.summary.total_gmv = s.cum_gmv;
  res.summary.total_subsidy = s.cum_subsidy;
  res.summary.c_real = safe_div(s.cum_subsidy, s.cum_gmv, 0.0);
  double drv = 0;
  for (double v : tr.drv) drv += v;
  res.summary.total_drv = drv;
  tr.validate();
  return res;
}

// Logged heuristic: city level, daily sinusoid, day offset and window noise.
inline Policy behavior_policy(const CityProfile& p, SeededRng rng) {
  const int T = kMinutesPerDay / 5;
  double day_off = rng.lognormal(-0.5 * p.behavior_day_sigma * p.behavior_day_sigma,
                                 p.behavior_day_sigma);
  auto rng_ptr = std::make_shared<SeededRng>(rng);
  return [&p, day_off, rng_ptr, T](const MarketState&, int t) {
    double sinmod = 1.0 + p.behavior_amp * std::sin(2 * M_PI * t / double(T) + p.behavior_phase);
    double lam = p.behavior_lambda * day_off * sinmod *
                 (1.0 + p.behavior_noise * rng_ptr->normal());
    return std::clamp(lam, 0.05, kLambdaMax);
  };
}

// ===== built-in city roster =====
//
// Three training/eval cities and three cold-start cities.  cap_C values are
// staggered; every delta is 0.1 * cap_C.

inline std::vector<CityProfile> default_profiles() {
  auto curve_urban = std::array<double, 24>{18, 12, 9,  7,  8,  14, 34, 72, 108, 92, 78, 80,
                                            86, 88, 84, 90, 108, 148, 182, 168, 128, 88, 56, 32};
  auto curve_flat = std::array<double, 24>{22, 16, 12, 10, 11, 16, 30, 52, 70,  66, 62, 64,
                                           68, 70, 66, 68, 78,  98,  116, 108, 88,  66, 46, 30};
  auto mk = [&](std::string id, double scale, double capC, double beh_lambda,
                const std::array<double, 24>& curve) {
    CityProfile p;
    p.city_id = std::move(id);
    p.demand_scale = scale;
    p.demand_curve = curve;
    p.cap_C = capC;
    p.tolerance_delta = 0.1 * capC;
    p.behavior_lambda = beh_lambda;
    return p;
  };
  // behavior levels put the median logged day a few percent under each cap
  std::vector<CityProfile> out;
  out.push_back(mk("city_a", 3.0, 0.13, 1.30, curve_urban));
  out.push_back(mk("city_b", 1.5, 0.135, 1.22, curve_flat));
  out.push_back(mk("city_c", 0.8, 0.14, 1.15, curve_urban));
  out.push_back(mk("city_d", 2.2, 0.13, 1.30, curve_flat));
  out.push_back(mk("city_e", 1.0, 0.135, 1.22, curve_urban));
  out.push_back(mk("city_f", 0.55, 0.14, 1.15, curve_flat));
  return out;
}

}  // namespace subsidy
