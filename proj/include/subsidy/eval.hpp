#pragma once

// Constraint-aware evaluation: the capped-spend score, violation and
// under-utilization accounting, paired significance tests, rank correlation,
// fixed-level and behavior-cloning baselines, the target-scaling sweep, and
// CSV report emission.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "subsidy/controller.hpp"
#include "subsidy/train.hpp"

namespace subsidy {

// ===== score =====
//
// Rides, multiplicatively discounted once the day-end subsidy rate exceeds
// the cap: rides * (C / c_real)^beta on the violating branch.  Continuous at
// c_real = C, strictly decreasing in both c_real and beta past it.

inline constexpr double kDefaultScoreBeta = 0.5;

inline double score(double rides, double c_real, double cap_C, double beta) {
  if (!std::isfinite(rides) || rides < 0.0)
    throw ValidationError(str_printf("score: rides must be finite and >= 0, got %.6g", rides));
  if (!std::isfinite(c_real) || c_real < 0.0)
    throw ValidationError(str_printf("score: c_real must be finite and >= 0, got %.6g", c_real));
  if (!(cap_C > 0.0 && cap_C < 1.0))
    throw ValidationError(str_printf("score: cap must lie in (0,1), got %.6g", cap_C));
  if (!std::isfinite(beta) || !(beta > 0.0))
    throw ValidationError(str_printf("score: beta must be positive, got %.6g", beta));
  if (c_real <= cap_C) return rides;
  return std::pow(cap_C / c_real, beta) * rides;
}

// ===== per-day report =====

struct EvalReport {
  std::string policy;
  std::string city;
  int day = 0;
  double rides = 0.0;
  double gmv = 0.0;
  double drv = 0.0;
  double c_real = 0.0;
  double score = 0.0;
  double under_gap = 0.0;  // max(0, C - c_real); positive only when not violated
  bool violated = false;   // c_real > C + delta
};

inline EvalReport make_report(const std::string& policy, const CityProfile& p, int day_index,
                              const RolloutSummary& s, double beta) {
  EvalReport r;
  r.policy = policy;
  r.city = p.city_id;
  r.day = day_index;
  r.rides = s.total_rides;
  r.gmv = s.total_gmv;
  r.drv = s.total_drv;
  r.c_real = s.c_real;
  r.score = score(s.total_rides, s.c_real, p.cap_C, beta);
  r.under_gap = std::max(0.0, p.cap_C - s.c_real);
  r.violated = s.c_real > p.cap_C + p.tolerance_delta;
  return r;
}

// ===== student-t machinery =====
//
// Regularized incomplete beta via the Lentz continued fraction, good to
// ~1e-14; the statistics tests pin it against an independent reference.

namespace detail {

inline double betacf(double a, double b, double x) {
  constexpr double kEps = 1e-15, kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 300; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) return h;
  }
  throw InvariantError("betacf: continued fraction did not converge");
}

inline double ibeta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double lbt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                     b * std::log1p(-x);
  const double bt = std::exp(lbt);
  if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
  return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

}  // namespace detail

// P(T > t) for Student's t with nu degrees of freedom.
inline double t_sf(double t, double nu) {
  if (!std::isfinite(t)) throw ValidationError("t_sf: t must be finite");
  if (!(nu > 0.0)) throw ValidationError("t_sf: nu must be positive");
  const double half = 0.5 * detail::ibeta(0.5 * nu, 0.5, nu / (nu + t * t));
  return t >= 0.0 ? half : 1.0 - half;
}

// Quantile by bisection on the CDF; the interval shrinks far below the
// survival function's own accuracy.
inline double t_ppf(double q, double nu) {
  if (!(q > 0.0 && q < 1.0)) throw ValidationError("t_ppf: q must lie in (0,1)");
  if (!(nu > 0.0)) throw ValidationError("t_ppf: nu must be positive");
  double lo = -1e10, hi = 1e10;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (1.0 - t_sf(mid, nu) < q ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// ===== paired one-sided t-test =====

struct PairedTTest {
  int n = 0;
  double mean_diff = 0.0;
  double sd_diff = 0.0;          // sample standard deviation of the differences
  double t_stat = 0.0;
  double p_one_sided = 1.0;      // H1: mean(a - b) > 0
  double ci_lo = 0.0, ci_hi = 0.0;  // two-sided 95% interval for the mean difference
};

inline PairedTTest paired_compare(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("paired_compare: length mismatch");
  const int n = int(a.size());
  if (n < 2) throw ValidationError("paired_compare: need at least two pairs");
  std::vector<double> d(a.size());
  for (size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  PairedTTest r;
  r.n = n;
  for (double v : d) r.mean_diff += v;
  r.mean_diff /= double(n);
  double ss = 0.0;
  for (double v : d) ss += (v - r.mean_diff) * (v - r.mean_diff);
  r.sd_diff = std::sqrt(ss / double(n - 1));
  if (r.sd_diff == 0.0) {
    // degenerate spread: report the sign of the shift as an extreme sentinel
    r.t_stat = r.mean_diff == 0.0
                   ? 0.0
                   : std::copysign(std::numeric_limits<double>::infinity(), r.mean_diff);
    r.p_one_sided = r.mean_diff == 0.0 ? 0.5 : (r.mean_diff > 0.0 ? 1e-12 : 1.0 - 1e-12);
    r.ci_lo = r.ci_hi = r.mean_diff;
    return r;
  }
  const double se = r.sd_diff / std::sqrt(double(n));
  r.t_stat = r.mean_diff / se;
  r.p_one_sided = t_sf(r.t_stat, double(n - 1));
  const double q = t_ppf(0.975, double(n - 1));
  r.ci_lo = r.mean_diff - q * se;
  r.ci_hi = r.mean_diff + q * se;
  return r;
}

// ===== rank correlation =====

namespace detail {

// 1-based ranks; tied values share the mean of their positions
inline std::vector<double> average_ranks(std::span<const double> v) {
  const size_t n = v.size();
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::sort(idx.begin(), idx.end(), [&](size_t i, size_t j) { return v[i] < v[j]; });
  std::vector<double> rank(n, 0.0);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * double(i + j) + 1.0;
    for (size_t k = i; k <= j; ++k) rank[idx[k]] = avg;
    i = j + 1;
  }
  return rank;
}

}  // namespace detail

// Spearman rank correlation: Pearson on tie-averaged ranks.
inline double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("spearman: length mismatch");
  if (a.size() < 2) throw ValidationError("spearman: need at least two points");
  const std::vector<double> ra = detail::average_ranks(a), rb = detail::average_ranks(b);
  double ma = 0.0, mb = 0.0;
  for (size_t i = 0; i < ra.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= double(ra.size());
  mb /= double(rb.size());
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw ValidationError("spearman: an input is constant");
  return sab / std::sqrt(saa * sbb);
}

// ===== fixed-level baseline =====

inline Policy baseline_fixed_lambda(double level) {
  if (!(level > 0.0 && level <= kLambdaMax))
    throw ValidationError(str_printf("baseline_fixed_lambda: level %.6g outside (0,30]",
                                     level));
  return [level](const MarketState&, int) { return level; };
}

// 15 log-spaced levels spanning the control range; endpoints pinned so the
// top level never rounds past the admissible range.
inline std::vector<double> fixed_lambda_grid() {
  std::vector<double> g(15);
  const double lo = 0.05;
  for (int i = 0; i < 15; ++i) g[size_t(i)] = lo * std::pow(kLambdaMax / lo, i / 14.0);
  g.front() = lo;
  g.back() = kLambdaMax;
  return g;
}

// Best level for one city by mean score over the given days; ties keep the
// lower level.  Tuning draws the same per-(city, day) market streams as
// evaluation, so level comparisons share randomness.
inline double tune_fixed_lambda(const CityProfile& p, std::span<const int> days, uint64_t seed,
                                int window_minutes, double beta,
                                const std::vector<double>& grid = fixed_lambda_grid()) {
  if (days.empty()) throw ValidationError("tune_fixed_lambda: no tuning days");
  if (grid.empty()) throw ValidationError("tune_fixed_lambda: empty level grid");
  double best_level = grid.front();
  double best_score = -std::numeric_limits<double>::infinity();
  for (double level : grid) {
    const Policy pol = baseline_fixed_lambda(level);
    double acc = 0.0;
    for (int day : days) {
      RolloutResult rr =
          rollout(p, pol, day, market_day_rng(seed, p.city_id, day), window_minutes);
      acc += score(rr.summary.total_rides, rr.summary.c_real, p.cap_C, beta);
    }
    const double mean = acc / double(days.size());
    if (mean > best_score) {
      best_score = mean;
      best_level = level;
    }
  }
  return best_level;
}

// ===== behavior-cloning baseline =====
//
// A causal window of recent augmented states plus the city context and the
// day-phase features, regressed onto the logged control with masked MSE.
// Reuses the decoder MLP; only the input assembly differs (no future rows).

inline std::vector<double> bc_window_input(const Matrix& states, int t, int day_horizon,
                                           const std::vector<double>& ctx) {
  if (states.rows < 1) throw ValidationError("bc_window_input: empty state matrix");
  if (t < 0 || t >= states.rows)
    throw ValidationError(str_printf("bc_window_input: row %d outside [0, %d)", t,
                                     states.rows));
  if (day_horizon < states.rows)
    throw ValidationError("bc_window_input: day horizon shorter than the state matrix");
  std::vector<double> v;
  v.reserve(size_t(4) * states.cols + ctx.size() + 2);
  for (int off = -3; off <= 0; ++off) {
    const int idx = std::clamp(t + off, 0, states.rows - 1);
    auto r = states.row(idx);
    v.insert(v.end(), r.begin(), r.end());
  }
  v.insert(v.end(), ctx.begin(), ctx.end());
  const double ang = 2.0 * M_PI * double(t) / double(day_horizon);
  v.push_back(std::sin(ang));
  v.push_back(std::cos(ang));
  return v;
}

struct BCBaseline {
  DecoderNet net;
  NormStats stats;
  CityRegistry registry;
};

struct BCTrainConfig {
  int epochs = 6;
  int batch = 16;
  double lr = 3e-4;
  double weight_decay = 1e-4;
  int hidden = 64;
  uint64_t seed = 1;
};

namespace detail {

inline double bc_traj_loss(DecoderNet& net, const TrainExample& e, double grad_scale,
                           bool with_grad) {
  const Matrix vs = valid_states(e);
  const int day_horizon = e.states.rows;
  std::vector<double> pred(size_t(e.valid_length), 0.0), mask(size_t(e.valid_length), 1.0);
  std::vector<double> target(e.actions.begin(), e.actions.begin() + e.valid_length);
  std::vector<DecoderNet::Tape> tapes;
  if (with_grad) tapes.resize(size_t(e.valid_length));
  DecoderNet::Tape scratch;
  for (int t = 0; t < e.valid_length; ++t) {
    DecoderNet::Tape& tp = with_grad ? tapes[size_t(t)] : scratch;
    pred[size_t(t)] = net.forward_tape(bc_window_input(vs, t, day_horizon, e.ctx), tp);
  }
  std::vector<double> dpred;
  const double loss = inverse_loss(pred, target, mask, with_grad ? &dpred : nullptr);
  if (with_grad)
    for (int t = 0; t < e.valid_length; ++t)
      net.backward(grad_scale * dpred[size_t(t)], tapes[size_t(t)]);
  return loss;
}

}  // namespace detail

inline BCBaseline train_bc(const Dataset& ds, const CityRegistry& reg, const NormStats& stats,
                           const BCTrainConfig& cfg) {
  std::vector<TrainExample> ex = prepare_examples(ds, reg, stats);
  if (ex.empty()) throw ValidationError("train_bc: empty dataset");
  DecoderConfig arch;
  arch.state_dim = ex.front().states.cols;
  arch.ctx_dim = reg.ctx_dim() + 2;  // context plus day-phase sin/cos
  arch.hidden = cfg.hidden;
  BCBaseline bc{DecoderNet(arch), stats, reg};
  SeededRng root(cfg.seed, 7004);
  SeededRng init_rng = root.fork("init");
  bc.net.init(init_rng);
  SeededRng shuffle_rng = root.fork("shuffle");

  ParamStore& ps = bc.net.params();
  AdamW opt(ps.size(), cfg.lr, cfg.weight_decay);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<size_t> order = detail::shuffled_indices(ex.size(), shuffle_rng);
    for (size_t start = 0; start < order.size(); start += size_t(cfg.batch)) {
      const size_t end = std::min(order.size(), start + size_t(cfg.batch));
      const double inv_b = 1.0 / double(end - start);
      ps.zero_grads();
      for (size_t k = start; k < end; ++k)
        detail::bc_traj_loss(bc.net, ex[order[k]], inv_b, true);
      opt.update(ps.values(), ps.grads());
    }
  }
  return bc;
}

// Fresh per (city, day); enforces in-order window visits like the controller.
inline Policy bc_policy(std::shared_ptr<const BCBaseline> bc, const CityMeta& city,
                        int day_index, int horizon) {
  if (horizon < 1) throw ValidationError("bc_policy: horizon must be positive");
  auto ctx = std::make_shared<const std::vector<double>>(
      make_context(bc->registry, city, day_index, 1.0).to_vector());
  auto hist = std::make_shared<Matrix>(horizon, int(bc->stats.mean.size()));
  auto filled = std::make_shared<int>(0);
  return [bc, ctx, hist, filled, horizon](const MarketState& s, int t) {
    if (t != *filled || t >= horizon)
      throw InvariantError(str_printf("bc policy: expected window %d, got %d", *filled, t));
    const std::vector<double> raw = augment_state(s);
    for (int c = 0; c < hist->cols; ++c)
      hist->at(t, c) =
          (raw[size_t(c)] - bc->stats.mean[size_t(c)]) / bc->stats.stdev[size_t(c)];
    *filled = t + 1;
    return bc->net.forward(bc_window_input(*hist, t, horizon, *ctx));
  };
}

// ===== policy evaluation over a day roster =====

using PolicyFactory = std::function<Policy(const CityProfile&, int day_index)>;

inline PolicyFactory fixed_lambda_factory(double level) {
  return [level](const CityProfile&, int) { return baseline_fixed_lambda(level); };
}

// per-city tuned levels
inline PolicyFactory fixed_lambda_factory(std::map<std::string, double> levels) {
  return [levels = std::move(levels)](const CityProfile& p, int) {
    const auto it = levels.find(p.city_id);
    if (it == levels.end())
      throw ValidationError("fixed_lambda_factory: no tuned level for city " + p.city_id);
    return baseline_fixed_lambda(it->second);
  };
}

inline PolicyFactory bc_factory(std::shared_ptr<const BCBaseline> bc, int window_minutes) {
  const int T = kMinutesPerDay / window_minutes;
  return [bc, T](const CityProfile& p, int day) {
    return bc_policy(bc, CityMeta{p.city_id, p.cap_C, p.tolerance_delta}, day, T);
  };
}

inline PolicyFactory controller_factory(std::shared_ptr<const ControllerBundle> bundle,
                                        ControllerConfig cfg, uint64_t seed,
                                        int window_minutes) {
  const int T = kMinutesPerDay / window_minutes;
  return [bundle, cfg, seed, T](const CityProfile& p, int day) {
    const CityMeta city{p.city_id, p.cap_C, p.tolerance_delta};
    auto ctrl = std::make_shared<Controller>(*bundle, city, day, T, cfg,
                                             controller_day_rng(seed, p.city_id, day));
    return controller_policy(std::move(ctrl));
  };
}

// City-major, days in the order given; every policy sees the same
// per-(city, day) market stream, so reports pair elementwise across policies.
struct PolicyEval {
  std::vector<EvalReport> reports;
  std::vector<RolloutResult> rolls;  // aligned with reports
};

inline PolicyEval evaluate_policy(const std::string& name, const PolicyFactory& make,
                                  const std::vector<CityProfile>& profiles,
                                  std::span<const int> days, uint64_t seed, int window_minutes,
                                  double beta) {
  if (profiles.empty() || days.empty())
    throw ValidationError("evaluate_policy: need at least one city and one day");
  PolicyEval ev;
  for (const CityProfile& p : profiles)
    for (int day : days) {
      RolloutResult rr =
          rollout(p, make(p, day), day, market_day_rng(seed, p.city_id, day), window_minutes);
      ev.reports.push_back(make_report(name, p, day, rr.summary, beta));
      ev.rolls.push_back(std::move(rr));
    }
  return ev;
}

inline std::vector<double> scores_of(const std::vector<EvalReport>& reports) {
  std::vector<double> v;
  v.reserve(reports.size());
  for (const EvalReport& r : reports) v.push_back(r.score);
  return v;
}

// ===== target-scaling sweep =====

inline std::vector<double> default_gamma_grid() {
  std::vector<double> g(10);
  for (int k = 1; k <= 10; ++k) g[size_t(k - 1)] = double(k) / 5.0;
  return g;
}

struct SweepRow {
  double gamma = 0.0;
  double mean_score = 0.0, mean_rides = 0.0, mean_gmv = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;    // one per gamma, grid order
  double rides_rank_corr = 0.0;  // spearman(gamma, mean rides); 0 when rides are flat
};

// Scales the demand target in the controller context.  Market and controller
// streams depend only on (seed, city, day), so the gamma = 1 entry coincides
// with the standard evaluation run.
inline SweepResult steering_sweep(std::shared_ptr<const ControllerBundle> bundle,
                                  const std::vector<CityProfile>& profiles,
                                  std::span<const int> days, ControllerConfig base_cfg,
                                  uint64_t seed, int window_minutes, double beta,
                                  const std::vector<double>& grid = default_gamma_grid()) {
  if (grid.empty()) throw ValidationError("steering_sweep: empty gamma grid");
  SweepResult out;
  std::vector<double> gammas, rides;
  for (double gamma : grid) {
    ControllerConfig cfg = base_cfg;
    cfg.gamma = gamma;
    const PolicyEval ev =
        evaluate_policy("steer", controller_factory(bundle, cfg, seed, window_minutes),
                        profiles, days, seed, window_minutes, beta);
    SweepRow row;
    row.gamma = gamma;
    for (const EvalReport& r : ev.reports) {
      row.mean_score += r.score;
      row.mean_rides += r.rides;
      row.mean_gmv += r.gmv;
    }
    const double n = double(ev.reports.size());
    row.mean_score /= n;
    row.mean_rides /= n;
    row.mean_gmv /= n;
    out.rows.push_back(row);
    gammas.push_back(gamma);
    rides.push_back(row.mean_rides);
  }
  const bool flat = std::all_of(rides.begin(), rides.end(),
                                [&](double v) { return v == rides.front(); });
  out.rides_rank_corr = (grid.size() >= 2 && !flat) ? spearman(gammas, rides) : 0.0;
  return out;
}

// ===== report emission =====

struct CurveEntry {
  std::string policy;
  Trajectory traj;
  double cap_C = 0.0;
  double c_real = 0.0;  // day-end rate from the rollout summary
};

namespace detail {

inline void write_csv_file(const std::string& path, const std::string& body) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report file: " + path);
  out << body;
  if (!out.good()) throw IoError("short write on report file: " + path);
}

}  // namespace detail

// Three deterministic files: per-window and cumulative KPI curves, the
// day-to-date subsidy-rate-minus-cap series, and per-(policy, city) means.
// Re-emitting identical inputs reproduces the files byte for byte.
inline void emit_report(const std::string& dir, const std::vector<EvalReport>& reports,
                        const std::vector<CurveEntry>& curves) {
  std::string kpi = "city,day,t,metric,value,policy\n";
  std::string rate = "city,day,t,rate_minus_C,policy\n";
  for (const CurveEntry& e : curves) {
    const Trajectory& tr = e.traj;
    double cum_rides = 0.0, cum_gmv = 0.0, cum_drv = 0.0;
    for (int t = 0; t < tr.valid_length; ++t) {
      cum_rides += tr.rides[size_t(t)];
      cum_gmv += tr.gmv[size_t(t)];
      cum_drv += tr.drv[size_t(t)];
      const std::pair<const char*, double> metrics[] = {
          {"rides", tr.rides[size_t(t)]}, {"gmv", tr.gmv[size_t(t)]},
          {"drv", tr.drv[size_t(t)]},     {"lambda", tr.actions[size_t(t)]},
          {"cum_rides", cum_rides},       {"cum_gmv", cum_gmv},
          {"cum_drv", cum_drv}};
      for (const auto& [name, value] : metrics) {
        kpi += str_printf("%s,%d,%d,%s,", tr.city_id.c_str(), tr.day_index, t, name);
        detail::append_double(kpi, value);
        kpi += ',';
        kpi += e.policy;
        kpi += '\n';
      }
      // the rate after window t opens the next state row; day end comes from
      // the rollout summary
      const double rate_after = t + 1 < tr.valid_length
                                    ? tr.states.at(t + 1, tr.states.cols - 1)
                                    : e.c_real;
      rate += str_printf("%s,%d,%d,", tr.city_id.c_str(), tr.day_index, t);
      detail::append_double(rate, rate_after - e.cap_C);
      rate += ',';
      rate += e.policy;
      rate += '\n';
    }
  }

  std::string summary = "policy,city,mean_score,mean_rides,mean_gmv,violations,mean_under_gap\n";
  struct Agg {
    double score = 0.0, rides = 0.0, gmv = 0.0, under = 0.0;
    long violations = 0, n = 0;
  };
  std::vector<std::pair<std::string, std::string>> order;  // first-appearance (policy, city)
  std::map<std::pair<std::string, std::string>, Agg> agg;
  for (const EvalReport& r : reports) {
    const auto key = std::make_pair(r.policy, r.city);
    auto [it, fresh] = agg.try_emplace(key);
    if (fresh) order.push_back(key);
    it->second.score += r.score;
    it->second.rides += r.rides;
    it->second.gmv += r.gmv;
    it->second.under += r.under_gap;
    it->second.violations += r.violated ? 1 : 0;
    it->second.n += 1;
  }
  for (const auto& key : order) {
    const Agg& a = agg.at(key);
    const double n = double(a.n);
    summary += key.first;
    summary += ',';
    summary += key.second;
    for (double v : {a.score / n, a.rides / n, a.gmv / n}) {
      summary += ',';
      detail::append_double(summary, v);
    }
    summary += str_printf(",%ld,", a.violations);
    detail::append_double(summary, a.under / n);
    summary += '\n';
  }

  detail::write_csv_file(dir + "/kpi_curves.csv", kpi);
  detail::write_csv_file(dir + "/rate_curve.csv", rate);
  detail::write_csv_file(dir + "/summary.csv", summary);
}

}  // namespace subsidy
