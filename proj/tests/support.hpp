#pragma once

// Shared helpers for tests that need small datasets and trained bundles.

#include <cmath>
#include <string>

#include "subsidy/controller.hpp"
#include "subsidy/core.hpp"
#include "subsidy/train.hpp"

namespace testsupport {

inline subsidy::Trajectory make_traj(const std::string& city, int day, uint64_t seed,
                                     int valid_length = 144, double action_level = 3.0) {
  subsidy::SeededRng rng(seed, 42);
  subsidy::Trajectory tr;
  tr.city_id = city;
  tr.day_index = day;
  tr.window_minutes = 10;  // T = 144
  const int T = 144;
  tr.states = subsidy::Matrix(T, subsidy::kStateDim);
  const double phase = 0.7 * double(seed % 13);
  for (int t = 0; t < T; ++t)
    for (int c = 0; c < subsidy::kStateDim; ++c)
      tr.states.at(t, c) = std::sin(0.05 * t + 0.3 * c + phase);
  tr.actions.assign(T, action_level);
  tr.rides.assign(T, 0.0);
  tr.gmv.assign(T, 0.0);
  tr.drv.assign(T, 0.0);
  for (int t = 0; t < T; ++t) {
    tr.rides[t] = double(int(rng.uniform_int(0, 8)));
    tr.gmv[t] = 12.0 * tr.rides[t];
    tr.drv[t] = 9.0 * tr.rides[t];
  }
  tr.valid_length = valid_length;
  return tr;
}

inline subsidy::Dataset make_dataset(int n_trajs, uint64_t seed) {
  subsidy::Dataset ds;
  ds.window_minutes = 10;
  ds.horizon = 144;
  ds.cities = {{"aa", 0.13, 0.013}, {"bb", 0.14, 0.014}};
  for (int i = 0; i < n_trajs; ++i)
    ds.trajs.push_back(make_traj(i % 2 ? "aa" : "bb", i / 2, seed + i));
  return ds;
}

inline subsidy::DiffusionTrainConfig tiny_diffusion_config() {
  subsidy::DiffusionTrainConfig cfg;
  cfg.arch.width = 8;
  cfg.arch.emb_dim = 16;
  cfg.arch.tau_freqs = 4;
  cfg.arch.dilations = {1, 2};
  cfg.L = 4;
  cfg.batch = 4;
  return cfg;
}

inline subsidy::ControllerBundle tiny_bundle(const subsidy::Dataset& ds, uint64_t seed = 1,
                                             int epochs = 3) {
  subsidy::DiffusionTrainConfig dc = tiny_diffusion_config();
  dc.epochs = epochs;
  dc.seed = seed;
  subsidy::DiffusionTrainResult diff = subsidy::train_diffusion(ds, dc);
  subsidy::InverseTrainConfig ic;
  ic.epochs = epochs;
  ic.hidden = 16;
  ic.seed = seed;
  subsidy::InverseTrainResult inv = subsidy::train_inverse(ds, diff.registry, diff.stats, ic);
  return subsidy::ControllerBundle{std::move(diff.net), std::move(inv.net),
                                   std::move(diff.stats), std::move(diff.registry),
                                   std::move(diff.schedule)};
}

inline subsidy::MarketState fake_market_state(int t, uint64_t seed) {
  subsidy::SeededRng rng(seed + uint64_t(t), 77);
  subsidy::MarketState st;
  st.features.assign(subsidy::kFeatureDim, 0.0);
  for (double& v : st.features) v = 0.5 * rng.normal();
  st.subsidy_rate_so_far = 0.05 + 0.01 * rng.u01();
  return st;
}

}  // namespace testsupport
