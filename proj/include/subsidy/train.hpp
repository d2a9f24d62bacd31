#pragma once

// ===== Dataset bundle, losses, optimizer, and training loops =====

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "subsidy/core.hpp"
#include "subsidy/diffusion.hpp"
#include "subsidy/net.hpp"

namespace subsidy {

// ===== dataset bundle =====

struct CityMeta {
  std::string id;
  double cap_C = 0.0;
  double tolerance_delta = 0.0;
};

struct Dataset {
  std::vector<Trajectory> trajs;
  std::vector<CityMeta> cities;
  int window_minutes = 5;
  int horizon = kMinutesPerDay / 5;

  const CityMeta& city(const std::string& id) const {
    for (const CityMeta& c : cities)
      if (c.id == id) return c;
    throw ValidationError("dataset: unknown city " + id);
  }
};

inline void save_dataset(const std::string& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  save_jsonl(dir + "/dataset.jsonl", ds.trajs);
  nlohmann::json man;
  man["window_minutes"] = ds.window_minutes;
  man["horizon"] = ds.horizon;
  auto& cities = man["cities"] = nlohmann::json::array();
  for (const CityMeta& c : ds.cities)
    cities.push_back({{"id", c.id}, {"cap_C", c.cap_C}, {"tolerance_delta", c.tolerance_delta}});
  std::ofstream out(dir + "/manifest.json");
  if (!out) throw IoError("cannot write manifest in " + dir);
  out << man.dump(2) << '\n';
}

inline Dataset load_dataset(const std::string& dir) {
  Dataset ds;
  ds.trajs = load_jsonl(dir + "/dataset.jsonl");
  std::ifstream in(dir + "/manifest.json");
  if (!in) throw IoError("cannot open manifest in " + dir);
  nlohmann::json man;
  try {
    in >> man;
  } catch (const std::exception& e) {
    throw ValidationError(std::string("manifest parse error: ") + e.what());
  }
  ds.window_minutes = man.at("window_minutes").get<int>();
  ds.horizon = man.at("horizon").get<int>();
  for (const auto& c : man.at("cities"))
    ds.cities.push_back({c.at("id").get<std::string>(), c.at("cap_C").get<double>(),
                         c.at("tolerance_delta").get<double>()});
  for (const Trajectory& tr : ds.trajs) ds.city(tr.city_id);  // every city must be declared
  return ds;
}

// ===== city registry =====

struct CityRegistry {
  std::vector<std::string> ids;  // known cities; one-hot gets a trailing unknown slot

  static CityRegistry from_dataset(const Dataset& ds) {
    CityRegistry reg;
    for (const CityMeta& c : ds.cities) reg.ids.push_back(c.id);
    std::sort(reg.ids.begin(), reg.ids.end());
    reg.ids.erase(std::unique(reg.ids.begin(), reg.ids.end()), reg.ids.end());
    return reg;
  }

  std::vector<double> onehot(const std::string& id) const {
    std::vector<double> v(ids.size() + 1, 0.0);
    auto it = std::find(ids.begin(), ids.end(), id);
    v[it == ids.end() ? ids.size() : size_t(it - ids.begin())] = 1.0;
    return v;
  }

  int ctx_dim() const { return Context::dim(int(ids.size())); }

  nlohmann::json to_json() const { return nlohmann::json(ids); }
  static CityRegistry from_json(const nlohmann::json& j) {
    CityRegistry reg;
    reg.ids = j.get<std::vector<std::string>>();
    return reg;
  }
};

// Daily ride totals per city; a day's conditioning target is its realized
// rides over the trailing seven-day mean (expanding when history is shorter,
// 1 with no history at all).
struct RidesHistory {
  std::map<std::string, std::map<int, double>> day_rides;

  static RidesHistory from(const Dataset& ds) {
    RidesHistory h;
    for (const Trajectory& tr : ds.trajs) {
      double total = 0.0;
      for (int t = 0; t < tr.valid_length; ++t) total += tr.rides[size_t(t)];
      h.day_rides[tr.city_id][tr.day_index] = total;
    }
    return h;
  }

  double trailing_mean(const std::string& city, int day_index) const {
    auto it = day_rides.find(city);
    if (it == day_rides.end()) return 0.0;
    double sum = 0.0;
    int n = 0;
    for (auto r = it->second.rbegin(); r != it->second.rend() && n < 7; ++r) {
      if (r->first >= day_index) continue;
      sum += r->second;
      ++n;
    }
    return n > 0 ? sum / n : 0.0;
  }

  double target_ratio(const std::string& city, int day_index) const {
    auto it = day_rides.find(city);
    if (it == day_rides.end()) return 1.0;
    auto d = it->second.find(day_index);
    if (d == it->second.end()) return 1.0;
    double base = trailing_mean(city, day_index);
    return base > 0.0 ? d->second / base : 1.0;
  }
};

inline Context make_context(const CityRegistry& reg, const CityMeta& city, int day_index,
                            double target_ratio) {
  Context ctx;
  ctx.city_onehot = reg.onehot(city.id);
  int dow = ((day_index % 7) + 7) % 7;
  ctx.dow_sin = std::sin(2.0 * M_PI * dow / 7.0);
  ctx.dow_cos = std::cos(2.0 * M_PI * dow / 7.0);
  ctx.hour_sin = 0.0;  // day-start convention
  ctx.hour_cos = 1.0;
  ctx.cap_C = city.cap_C;
  ctx.tolerance_delta = city.tolerance_delta;
  ctx.target_rides = target_ratio;
  return ctx;
}

// ===== per-dimension normalization =====

struct NormStats {
  std::vector<double> mean, stdev;

  static NormStats compute(const std::vector<Trajectory>& trajs) {
    if (trajs.empty()) throw ValidationError("NormStats: empty dataset");
    const int d = trajs.front().states.cols;
    NormStats st;
    st.mean.assign(d, 0.0);
    st.stdev.assign(d, 0.0);
    long n = 0;
    for (const Trajectory& tr : trajs) {
      for (int t = 0; t < tr.valid_length; ++t) {
        auto r = tr.states.row(t);
        for (int c = 0; c < d; ++c) st.mean[size_t(c)] += r[size_t(c)];
      }
      n += tr.valid_length;
    }
    if (n == 0) throw ValidationError("NormStats: no valid rows");
    for (double& m : st.mean) m /= double(n);
    for (const Trajectory& tr : trajs)
      for (int t = 0; t < tr.valid_length; ++t) {
        auto r = tr.states.row(t);
        for (int c = 0; c < d; ++c) {
          double dlt = r[size_t(c)] - st.mean[size_t(c)];
          st.stdev[size_t(c)] += dlt * dlt;
        }
      }
    for (double& s : st.stdev) s = std::max(std::sqrt(s / double(n)), 1e-6);
    return st;
  }

  Matrix normalize(const Matrix& x) const {
    check_dims(x.cols);
    Matrix y(x.rows, x.cols);
    for (int t = 0; t < x.rows; ++t)
      for (int c = 0; c < x.cols; ++c)
        y.at(t, c) = (x.at(t, c) - mean[size_t(c)]) / stdev[size_t(c)];
    return y;
  }

  Matrix denormalize(const Matrix& x) const {
    check_dims(x.cols);
    Matrix y(x.rows, x.cols);
    for (int t = 0; t < x.rows; ++t)
      for (int c = 0; c < x.cols; ++c)
        y.at(t, c) = x.at(t, c) * stdev[size_t(c)] + mean[size_t(c)];
    return y;
  }

  void check_dims(int d) const {
    if (int(mean.size()) != d || int(stdev.size()) != d)
      throw ValidationError(str_printf("NormStats: dimension %d, expected %zu", d, mean.size()));
  }

  nlohmann::json to_json() const { return {{"mean", mean}, {"stdev", stdev}}; }
  static NormStats from_json(const nlohmann::json& j) {
    NormStats st;
    st.mean = j.at("mean").get<std::vector<double>>();
    st.stdev = j.at("stdev").get<std::vector<double>>();
    if (st.mean.size() != st.stdev.size() || st.mean.empty())
      throw ValidationError("NormStats: malformed stats");
    return st;
  }
};

// ===== training examples =====

struct TrainExample {
  Matrix states;  // horizon x d, normalized; rows at or past valid_length zeroed
  std::vector<double> actions;
  std::vector<double> ctx;
  int valid_length = 0;
};

// Rows past valid_length are canonicalized to zero so padding content can
// never reach the model; that makes the masked losses exactly invariant to it.
inline std::vector<TrainExample> prepare_examples(const Dataset& ds, const CityRegistry& reg,
                                                  const NormStats& stats) {
  RidesHistory hist = RidesHistory::from(ds);
  std::vector<TrainExample> out;
  out.reserve(ds.trajs.size());
  for (const Trajectory& tr : ds.trajs) {
    tr.validate();
    TrainExample ex;
    ex.states = stats.normalize(tr.states);
    for (int t = tr.valid_length; t < ex.states.rows; ++t)
      std::fill(ex.states.row(t).begin(), ex.states.row(t).end(), 0.0);
    ex.actions = tr.actions;
    ex.valid_length = tr.valid_length;
    const CityMeta& cm = ds.city(tr.city_id);
    ex.ctx = make_context(reg, cm, tr.day_index, hist.target_ratio(tr.city_id, tr.day_index))
                 .to_vector();
    out.push_back(std::move(ex));
  }
  return out;
}

// ===== masked losses =====
//
// The mask is per row; rows with mask zero are skipped outright, so their
// content cannot perturb the sum even at the last bit.

inline double masked_sq_sum(const Matrix& pred, const Matrix& eps,
                            const std::vector<double>& mask, double scale, Matrix* dpred) {
  if (!pred.same_shape(eps)) throw ValidationError("masked loss: shape mismatch");
  if (int(mask.size()) != pred.rows) throw ValidationError("masked loss: mask length mismatch");
  if (dpred && !dpred->same_shape(pred)) *dpred = Matrix(pred.rows, pred.cols);
  double total = 0.0;
  for (int t = 0; t < pred.rows; ++t) {
    if (mask[size_t(t)] == 0.0) {
      if (dpred) std::fill(dpred->row(t).begin(), dpred->row(t).end(), 0.0);
      continue;
    }
    const double m = mask[size_t(t)];
    for (int c = 0; c < pred.cols; ++c) {
      double r = pred.at(t, c) - eps.at(t, c);
      total += m * r * r;
      if (dpred) dpred->at(t, c) = scale * 2.0 * m * r;
    }
  }
  return total;
}

inline double mask_weight(const std::vector<double>& mask) {
  double w = 0.0;
  for (double m : mask) w += m;
  return w;
}

// normalized: sum of masked squared errors over the mask weight
inline double mndl_loss(const Matrix& pred, const Matrix& eps, const std::vector<double>& mask,
                        Matrix* dpred = nullptr) {
  double w = mask_weight(mask);
  if (w <= 0.0) throw ValidationError("mndl_loss: mask selects no rows");
  return masked_sq_sum(pred, eps, mask, 1.0 / w, dpred) / w;
}

// plain masked sum; its scale grows with the masked row count
inline double sum_loss(const Matrix& pred, const Matrix& eps, const std::vector<double>& mask,
                       Matrix* dpred = nullptr) {
  return masked_sq_sum(pred, eps, mask, 1.0, dpred);
}

inline double inverse_loss(const std::vector<double>& pred, const std::vector<double>& target,
                           const std::vector<double>& mask,
                           std::vector<double>* dpred = nullptr) {
  if (pred.size() != target.size() || pred.size() != mask.size())
    throw ValidationError("inverse_loss: length mismatch");
  double w = mask_weight(mask) + 1e-8;
  if (dpred) dpred->assign(pred.size(), 0.0);
  double total = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (mask[i] == 0.0) continue;
    double r = pred[i] - target[i];
    total += mask[i] * r * r;
    if (dpred) (*dpred)[i] = 2.0 * mask[i] * r / w;
  }
  return total / w;
}

// ===== prefix-length sampling =====

inline int sample_prefix_length(int T, SeededRng& rng) {
  if (T < 2) throw ValidationError("sample_prefix_length: horizon too short");
  int lo = int(std::lround(T / 8.0));
  int hi = int(std::lround(7.0 * T / 8.0));
  return int(rng.uniform_int(uint64_t(lo), uint64_t(hi)));
}

// ===== AdamW =====

struct AdamW {
  double lr = 3e-4, beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.0;
  std::vector<double> m, v;
  long step = 0;

  AdamW(size_t n, double lr_, double wd) : lr(lr_), weight_decay(wd), m(n, 0.0), v(n, 0.0) {}

  void update(std::vector<double>& w, const std::vector<double>& g) {
    if (w.size() != m.size() || g.size() != m.size())
      throw InvariantError("AdamW: parameter count mismatch");
    ++step;
    const double bc1 = 1.0 - std::pow(beta1, double(step));
    const double bc2 = 1.0 - std::pow(beta2, double(step));
    for (size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      w[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * w[i]);
    }
  }
};

// Cosine decay of the base rate to a 2% floor across a fixed step budget.
inline double cosine_lr(double base, long step, long total) {
  if (total <= 1) return base;
  double u = std::min(1.0, double(step) / double(total - 1));
  return base * (0.02 + 0.98 * 0.5 * (1.0 + std::cos(M_PI * u)));
}

// Bias-corrected exponential average of the weights.  Pretraining ships the
// averaged iterate: it sits at the centre of the late-run noise ball, which
// matters for sampling quality far more than the last SGD step does.
struct ParamEma {
  double decay;
  long steps = 0;
  std::vector<double> avg;

  ParamEma(size_t n, double d) : decay(d), avg(n, 0.0) {
    if (!(d >= 0.0) || d >= 1.0) throw ValidationError("ParamEma: decay must be in [0, 1)");
  }
  void observe(const std::vector<double>& w) {
    if (w.size() != avg.size()) throw InvariantError("ParamEma: parameter count mismatch");
    ++steps;
    for (size_t i = 0; i < avg.size(); ++i) avg[i] = decay * avg[i] + (1.0 - decay) * w[i];
  }
  void write_back(std::vector<double>& w) const {
    if (steps == 0) return;
    const double corr = 1.0 / (1.0 - std::pow(decay, double(steps)));
    for (size_t i = 0; i < avg.size(); ++i) w[i] = corr * avg[i];
  }
};

// ===== loss logging =====

struct LossRow {
  int epoch = 0, batch = 0;
  double loss = 0.0, loss_std = 0.0, loss_unnorm = 0.0, loss_unnorm_std = 0.0;
};

inline void write_loss_csv(const std::string& path, const std::vector<LossRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write loss log: " + path);
  out << "epoch,batch,loss,loss_std,loss_unnorm,loss_unnorm_std\n";
  for (const LossRow& r : rows)
    out << str_printf("%d,%d,%.10g,%.10g,%.10g,%.10g\n", r.epoch, r.batch, r.loss, r.loss_std,
                      r.loss_unnorm, r.loss_unnorm_std);
  if (!out.good()) throw IoError("short write on loss log: " + path);
}

namespace detail {

inline double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / double(xs.size());
}

inline double std_of(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  double mu = mean_of(xs), s = 0.0;
  for (double x : xs) s += (x - mu) * (x - mu);
  return std::sqrt(s / double(xs.size()));
}

inline std::vector<size_t> shuffled_indices(size_t n, SeededRng& rng) {
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  for (size_t i = n; i > 1; --i) {
    size_t j = size_t(rng.uniform_int(0, i - 1));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

}  // namespace detail

// ===== diffusion pretraining =====

struct DiffusionTrainConfig {
  int epochs = 8;
  int batch = 16;
  int L = 50;
  double lr = 3e-4;
  double weight_decay = 1e-4;
  double ema_decay = 0.999;  // 0 disables weight averaging
  uint64_t seed = 1;
  std::string loss_variant = "normalized";  // or "sum"
  DenoiserConfig arch;                      // ctx_dim is filled in by the trainer
};

struct DiffusionTrainResult {
  DenoiserNet net;
  NormStats stats;
  CityRegistry registry;
  NoiseSchedule schedule;
  std::vector<LossRow> log;
};

inline DiffusionTrainResult train_diffusion(const Dataset& ds, DiffusionTrainConfig cfg) {
  if (cfg.loss_variant != "normalized" && cfg.loss_variant != "sum")
    throw ValidationError("train_diffusion: unknown loss variant " + cfg.loss_variant);
  CityRegistry reg = CityRegistry::from_dataset(ds);
  NormStats stats = NormStats::compute(ds.trajs);
  std::vector<TrainExample> ex = prepare_examples(ds, reg, stats);
  if (ex.empty()) throw ValidationError("train_diffusion: empty dataset");

  cfg.arch.ctx_dim = reg.ctx_dim();
  DiffusionTrainResult res{DenoiserNet(cfg.arch), std::move(stats), std::move(reg),
                           cosine_schedule(cfg.L), {}};
  SeededRng root(cfg.seed, 7001);
  SeededRng init_rng = root.fork("init");
  res.net.init(init_rng);
  SeededRng shuffle_rng = root.fork("shuffle");
  SeededRng noise_rng = root.fork("noise");

  ParamStore& ps = res.net.params();
  AdamW opt(ps.size(), cfg.lr, cfg.weight_decay);
  ParamEma ema(ps.size(), cfg.ema_decay);
  const long steps_total =
      long(cfg.epochs) * long((ex.size() + size_t(cfg.batch) - 1) / size_t(cfg.batch));
  const bool normalized = cfg.loss_variant == "normalized";

  DenoiserNet::Tape tape;
  Matrix dpred;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<size_t> order = detail::shuffled_indices(ex.size(), shuffle_rng);
    int batch_id = 0;
    for (size_t start = 0; start < order.size(); start += size_t(cfg.batch), ++batch_id) {
      size_t end = std::min(order.size(), start + size_t(cfg.batch));
      const double inv_b = 1.0 / double(end - start);
      ps.zero_grads();
      std::vector<double> norm_losses, sum_losses;
      for (size_t k = start; k < end; ++k) {
        const TrainExample& e = ex[order[k]];
        const int T = e.states.rows;
        int K = sample_prefix_length(T, noise_rng);
        // keep at least one supervised row for short trajectories
        if (K >= e.valid_length) K = std::max(0, e.valid_length - 1);
        int tau = int(noise_rng.uniform_int(1, uint64_t(cfg.L)));
        ForwardSample fs = forward_noise(e.states, K, tau, res.schedule, noise_rng);
        std::vector<double> mask(size_t(T), 0.0);
        for (int t = K; t < e.valid_length; ++t) mask[size_t(t)] = 1.0;

        Matrix vhat = res.net.forward_tape(fs.z, tau, e.ctx, tape);
        Matrix pred = implied_noise(fs.z, vhat, tau, res.schedule);
        Matrix* dp = &dpred;
        double ln, lu;
        if (normalized) {
          ln = mndl_loss(pred, fs.eps, mask, dp);
          lu = sum_loss(pred, fs.eps, mask, nullptr);
        } else {
          lu = sum_loss(pred, fs.eps, mask, dp);
          ln = mndl_loss(pred, fs.eps, mask, nullptr);
        }
        norm_losses.push_back(ln);
        sum_losses.push_back(lu);
        // d(loss)/d(vhat) = sa * d(loss)/d(eps_hat)
        const double gscale = inv_b * std::sqrt(res.schedule.alpha_bar[tau]);
        for (double& g : dpred.data) g *= gscale;
        res.net.backward(dpred, tape);
      }
      opt.lr = cosine_lr(cfg.lr, opt.step, steps_total);
      opt.update(ps.values(), ps.grads());
      ema.observe(ps.values());
      res.log.push_back({epoch, batch_id, detail::mean_of(norm_losses),
                         detail::std_of(norm_losses), detail::mean_of(sum_losses),
                         detail::std_of(sum_losses)});
    }
  }
  ema.write_back(ps.values());
  return res;
}

// ===== decoder pretraining =====

struct InverseTrainConfig {
  int epochs = 6;
  int batch = 16;
  double lr = 3e-4;
  double weight_decay = 1e-4;
  double ema_decay = 0.999;  // 0 disables weight averaging
  uint64_t seed = 1;
  int hidden = 64;
};

struct InverseTrainResult {
  DecoderNet net;
  std::vector<LossRow> log;
};

namespace detail {

// valid rows only, so window clamping can never touch padding
inline Matrix valid_states(const TrainExample& e) {
  Matrix m(e.valid_length, e.states.cols);
  for (int t = 0; t < e.valid_length; ++t)
    std::copy(e.states.row(t).begin(), e.states.row(t).end(), m.row(t).begin());
  return m;
}

// per-trajectory inverse loss and parameter gradients
inline double decoder_traj_loss(DecoderNet& net, const TrainExample& e, double grad_scale,
                                bool with_grad) {
  Matrix vs = valid_states(e);
  std::vector<double> pred(size_t(e.valid_length), 0.0), mask(size_t(e.valid_length), 1.0);
  std::vector<double> target(e.actions.begin(), e.actions.begin() + e.valid_length);
  std::vector<DecoderNet::Tape> tapes;
  if (with_grad) tapes.resize(size_t(e.valid_length));
  DecoderNet::Tape scratch;
  for (int t = 0; t < e.valid_length; ++t) {
    DecoderNet::Tape& tp = with_grad ? tapes[size_t(t)] : scratch;
    pred[size_t(t)] = net.forward_tape(decoder_window_input(vs, t, e.ctx), tp);
  }
  std::vector<double> dpred;
  double loss = inverse_loss(pred, target, mask, with_grad ? &dpred : nullptr);
  if (with_grad)
    for (int t = 0; t < e.valid_length; ++t)
      net.backward(grad_scale * dpred[size_t(t)], tapes[size_t(t)]);
  return loss;
}

// unnormalized counterpart for the log columns
inline double decoder_traj_sum_loss(DecoderNet& net, const TrainExample& e) {
  Matrix vs = valid_states(e);
  double total = 0.0;
  for (int t = 0; t < e.valid_length; ++t) {
    double r = net.forward(decoder_window_input(vs, t, e.ctx)) - e.actions[size_t(t)];
    total += r * r;
  }
  return total;
}

}  // namespace detail

inline InverseTrainResult train_inverse(const Dataset& ds, const CityRegistry& reg,
                                        const NormStats& stats, const InverseTrainConfig& cfg) {
  std::vector<TrainExample> ex = prepare_examples(ds, reg, stats);
  if (ex.empty()) throw ValidationError("train_inverse: empty dataset");
  DecoderConfig arch;
  arch.state_dim = ex.front().states.cols;
  arch.ctx_dim = reg.ctx_dim();
  arch.hidden = cfg.hidden;
  InverseTrainResult res{DecoderNet(arch), {}};
  SeededRng root(cfg.seed, 7002);
  SeededRng init_rng = root.fork("init");
  res.net.init(init_rng);
  SeededRng shuffle_rng = root.fork("shuffle");

  ParamStore& ps = res.net.params();
  AdamW opt(ps.size(), cfg.lr, cfg.weight_decay);
  ParamEma ema(ps.size(), cfg.ema_decay);
  const long steps_total =
      long(cfg.epochs) * long((ex.size() + size_t(cfg.batch) - 1) / size_t(cfg.batch));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<size_t> order = detail::shuffled_indices(ex.size(), shuffle_rng);
    int batch_id = 0;
    for (size_t start = 0; start < order.size(); start += size_t(cfg.batch), ++batch_id) {
      size_t end = std::min(order.size(), start + size_t(cfg.batch));
      const double inv_b = 1.0 / double(end - start);
      ps.zero_grads();
      std::vector<double> losses, sums;
      for (size_t k = start; k < end; ++k) {
        losses.push_back(detail::decoder_traj_loss(res.net, ex[order[k]], inv_b, true));
        sums.push_back(detail::decoder_traj_sum_loss(res.net, ex[order[k]]));
      }
      opt.lr = cosine_lr(cfg.lr, opt.step, steps_total);
      opt.update(ps.values(), ps.grads());
      ema.observe(ps.values());
      res.log.push_back({epoch, batch_id, detail::mean_of(losses), detail::std_of(losses),
                         detail::mean_of(sums), detail::std_of(sums)});
    }
  }
  ema.write_back(ps.values());
  return res;
}

// ===== anchored finetuning =====
//
// Re-optimizes the decoder on the same inverse objective plus a quadratic
// anchor toward the pretrained weights.  The denoiser is never touched.

struct FinetuneConfig {
  int epochs = 4;
  int batch = 16;
  double lr = 3e-5;
  double lambda_anchor = 1e-2;
  uint64_t seed = 1;
};

struct FinetuneResult {
  std::vector<LossRow> log;
  double anchor_distance = 0.0;  // final l2 distance from the pretrained weights
};

inline FinetuneResult finetune_decoder(DecoderNet& net, const Dataset& ds,
                                       const CityRegistry& reg, const NormStats& stats,
                                       const FinetuneConfig& cfg) {
  std::vector<TrainExample> ex = prepare_examples(ds, reg, stats);
  if (ex.empty()) throw ValidationError("finetune_decoder: empty dataset");
  const std::vector<double> phi0 = net.params().values();
  SeededRng root(cfg.seed, 7003);
  SeededRng shuffle_rng = root.fork("shuffle");

  ParamStore& ps = net.params();
  AdamW opt(ps.size(), cfg.lr, /*wd=*/0.0);  // the anchor replaces weight decay
  FinetuneResult res;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<size_t> order = detail::shuffled_indices(ex.size(), shuffle_rng);
    int batch_id = 0;
    for (size_t start = 0; start < order.size(); start += size_t(cfg.batch), ++batch_id) {
      size_t end = std::min(order.size(), start + size_t(cfg.batch));
      const double inv_b = 1.0 / double(end - start);
      ps.zero_grads();
      std::vector<double> losses, sums;
      for (size_t k = start; k < end; ++k) {
        losses.push_back(detail::decoder_traj_loss(net, ex[order[k]], inv_b, true));
        sums.push_back(detail::decoder_traj_sum_loss(net, ex[order[k]]));
      }
      std::vector<double>& g = ps.grads();
      const std::vector<double>& w = ps.values();
      for (size_t i = 0; i < w.size(); ++i)
        g[i] += 2.0 * cfg.lambda_anchor * (w[i] - phi0[i]);
      opt.update(ps.values(), ps.grads());
      res.log.push_back({epoch, batch_id, detail::mean_of(losses), detail::std_of(losses),
                         detail::mean_of(sums), detail::std_of(sums)});
    }
  }
  double d2 = 0.0;
  for (size_t i = 0; i < phi0.size(); ++i) {
    double d = ps.values()[i] - phi0[i];
    d2 += d * d;
  }
  res.anchor_distance = std::sqrt(d2);
  return res;
}

}  // namespace subsidy
