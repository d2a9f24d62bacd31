#pragma once

// ===== Closed-loop controller =====
//
// At window t the controller conditions the trajectory model on the observed
// day so far (rows 0..t), samples the remainder of the day toward the
// operator's target, and reads the next control rate off the sampled plan
// through the inverse-dynamics decoder.

#include <chrono>
#include <memory>
#include <string>
#include <vector>

#include "subsidy/core.hpp"
#include "subsidy/diffusion.hpp"
#include "subsidy/market.hpp"
#include "subsidy/net.hpp"
#include "subsidy/train.hpp"

namespace subsidy {

struct ControllerBundle {
  DenoiserNet denoiser;
  DecoderNet decoder;
  NormStats stats;
  CityRegistry registry;
  NoiseSchedule schedule;
};

inline void save_bundle(const std::string& dir, const ControllerBundle& b) {
  std::filesystem::create_directories(dir);
  nlohmann::json shared;
  shared["norm"] = b.stats.to_json();
  shared["registry"] = b.registry.to_json();
  nlohmann::json dmeta = shared;
  dmeta["denoiser"] = b.denoiser.config().to_json();
  dmeta["L"] = b.schedule.L;
  save_checkpoint(dir + "/denoiser.json", b.denoiser.params(), dmeta);
  nlohmann::json cmeta = shared;
  cmeta["decoder"] = b.decoder.config().to_json();
  save_checkpoint(dir + "/decoder.json", b.decoder.params(), cmeta);
}

inline ControllerBundle load_bundle(const std::string& dir) {
  nlohmann::json ddoc = load_checkpoint(dir + "/denoiser.json");
  nlohmann::json cdoc = load_checkpoint(dir + "/decoder.json");
  const nlohmann::json& dmeta = ddoc.at("meta");
  const nlohmann::json& cmeta = cdoc.at("meta");
  if (dmeta.at("norm") != cmeta.at("norm") || dmeta.at("registry") != cmeta.at("registry"))
    throw ValidationError("bundle: denoiser and decoder disagree on stats or registry");
  ControllerBundle b{DenoiserNet(DenoiserConfig::from_json(dmeta.at("denoiser"))),
                     DecoderNet(DecoderConfig::from_json(cmeta.at("decoder"))),
                     NormStats::from_json(dmeta.at("norm")),
                     CityRegistry::from_json(dmeta.at("registry")),
                     cosine_schedule(dmeta.at("L").get<int>())};
  assign_params(b.denoiser.params(), ddoc);
  assign_params(b.decoder.params(), cdoc);
  return b;
}

struct ControllerConfig {
  int replan_every = 1;        // windows between fresh suffix samples
  double gamma = 1.0;          // demand target as a multiple of the trailing week
  bool deterministic = false;  // zero per-step sampling noise (tests)
};

class Controller {
 public:
  Controller(const ControllerBundle& bundle, const CityMeta& city, int day_index, int horizon,
             ControllerConfig cfg, SeededRng rng)
      : b_(bundle), cfg_(cfg), T_(horizon), rng_(rng) {
    if (cfg_.replan_every < 1) throw ValidationError("controller: replan_every must be >= 1");
    if (!(cfg_.gamma > 0.0)) throw ValidationError("controller: gamma must be positive");
    ctx_ = make_context(b_.registry, city, day_index, cfg_.gamma).to_vector();
    plan_ = Matrix(T_, b_.stats_dim());
    history_rows_ = 0;
  }

  // One decision per window, in strict time order starting at t = 0.
  double decide(const MarketState& st, int t) {
    const auto t0 = std::chrono::steady_clock::now();
    if (t != history_rows_)
      throw InvariantError(str_printf("controller: expected window %d, got %d", history_rows_,
                                      t));
    if (t >= T_) throw InvariantError("controller: past end of day");

    std::vector<double> raw = augment_state(st.features, st.subsidy_rate_so_far);
    for (int c = 0; c < plan_.cols; ++c)
      plan_.at(t, c) = (raw[size_t(c)] - b_.stats.mean[size_t(c)]) / b_.stats.stdev[size_t(c)];
    history_rows_ = t + 1;

    if (t == 0 || t - last_plan_t_ >= cfg_.replan_every) {
      Matrix prefix(history_rows_, plan_.cols);
      for (int r = 0; r < history_rows_; ++r)
        std::copy(plan_.row(r).begin(), plan_.row(r).end(), prefix.row(r).begin());
      DenoiserFn fn = [this](const Matrix& z, int tau, const std::vector<double>& c) {
        Matrix v;
        b_.denoiser.forward_infer(z, tau, c, scratch_, v);
        return implied_noise(z, v, tau, b_.schedule);
      };
      Matrix suffix =
          reverse_sample(prefix, ctx_, b_.schedule, fn, T_, rng_, cfg_.deterministic);
      for (int r = 0; r < suffix.rows; ++r)
        std::copy(suffix.row(r).begin(), suffix.row(r).end(),
                  plan_.row(history_rows_ + r).begin());
      last_plan_t_ = t;
      ++replans_;
    }

    double lambda = b_.decoder.forward(decoder_window_input(plan_, t, ctx_));
    const auto t1 = std::chrono::steady_clock::now();
    decide_ms_total_ += std::chrono::duration<double, std::milli>(t1 - t0).count();
    ++decides_;
    return lambda;
  }

  double mean_decide_ms() const { return decides_ ? decide_ms_total_ / double(decides_) : 0.0; }
  long decides() const { return decides_; }
  long replans() const { return replans_; }
  const std::vector<double>& context() const { return ctx_; }

 private:
  struct BundleView {
    const DenoiserNet& denoiser;
    const DecoderNet& decoder;
    const NormStats& stats;
    const CityRegistry& registry;
    const NoiseSchedule& schedule;
    BundleView(const ControllerBundle& b)
        : denoiser(b.denoiser), decoder(b.decoder), stats(b.stats), registry(b.registry),
          schedule(b.schedule) {}
    int stats_dim() const { return int(stats.mean.size()); }
  };

  BundleView b_;
  ControllerConfig cfg_;
  int T_;
  SeededRng rng_;
  std::vector<double> ctx_;
  Matrix plan_;  // rows < history are normalized reality, the rest sampled
  int history_rows_ = 0;
  int last_plan_t_ = -1;
  long replans_ = 0, decides_ = 0;
  double decide_ms_total_ = 0.0;
  DenoiserNet::InferScratch scratch_;
};

inline Policy controller_policy(std::shared_ptr<Controller> c) {
  return [c](const MarketState& s, int t) { return c->decide(s, t); };
}

// Seeds depend on (seed, city, day) only, never on the policy or gamma, so
// market draws are shared across compared policies and target levels.
inline SeededRng market_day_rng(uint64_t seed, const std::string& city, int day_index) {
  return SeededRng(seed, 501).fork(city).fork(uint64_t(day_index));
}
inline SeededRng controller_day_rng(uint64_t seed, const std::string& city, int day_index) {
  return SeededRng(seed, 502).fork(city).fork(uint64_t(day_index));
}

struct ControllerDayResult {
  RolloutResult roll;
  double decide_ms_mean = 0.0;
  long replans = 0;
};

inline ControllerDayResult run_controller_day(const ControllerBundle& bundle,
                                              const CityProfile& profile, int day_index,
                                              const ControllerConfig& cfg, uint64_t seed,
                                              int window_minutes = 5) {
  CityMeta city{profile.city_id, profile.cap_C, profile.tolerance_delta};
  const int T = kMinutesPerDay / window_minutes;
  auto ctrl = std::make_shared<Controller>(bundle, city, day_index, T, cfg,
                                           controller_day_rng(seed, city.id, day_index));
  ControllerDayResult out;
  out.roll = rollout(profile, controller_policy(ctrl), day_index,
                     market_day_rng(seed, city.id, day_index), window_minutes);
  out.roll.summary.decide_ms_mean = ctrl->mean_decide_ms();
  out.decide_ms_mean = ctrl->mean_decide_ms();
  out.replans = ctrl->replans();
  return out;
}

}  // namespace subsidy
