#pragma once

// ===== Core types: states, trajectories, seeded randomness, serialization =====

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <fstream>
#include <map>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

namespace subsidy {

inline constexpr int kFeatureDim = 19;           // observable market features
inline constexpr int kStateDim = kFeatureDim + 1; // features + realized subsidy rate
inline constexpr double kLambdaMax = 30.0;
inline constexpr int kMinutesPerDay = 1440;

// Error taxonomy; the CLI maps these to distinct exit codes.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvariantError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string str_printf(const char* fmt, ...) {
  va_list ap;
  va_start(ap, fmt);
  char buf[512];
  vsnprintf(buf, sizeof(buf), fmt, ap);
  va_end(ap);
  return std::string(buf);
}

inline double safe_div(double num, double den, double fallback = 0.0) {
  return den == 0.0 ? fallback : num / den;
}

// ===== Seeded RNG =====
//
// (seed, stream_id) fully determines the draw sequence.  The engine is
// mt19937_64 (output pinned by the standard) and every distribution below is
// hand-rolled, so sequences do not depend on the standard library vendor.

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class SeededRng {
 public:
  SeededRng(uint64_t seed, uint64_t stream_id)
      : seed_(seed), stream_(stream_id),
        eng_(splitmix64(splitmix64(seed) ^ splitmix64(stream_id))) {}

  uint64_t seed() const { return seed_; }
  uint64_t stream() const { return stream_; }

  // Child streams are derived, never correlated with the parent sequence.
  SeededRng fork(uint64_t child) const {
    return SeededRng(seed_, splitmix64(stream_ ^ splitmix64(child + 0x51ed2701)));
  }
  SeededRng fork(std::string_view name) const { return fork(fnv1a64(name)); }

  uint64_t next_u64() { return eng_(); }

  // uniform on (0,1]; never returns 0 so log() is safe
  double u01() {
    return (static_cast<double>(eng_() >> 11) + 1.0) * (1.0 / 9007199254740992.0);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

  int uniform_int(int lo, int hi) {  // inclusive both ends
    if (hi < lo) throw ValidationError("uniform_int: empty range");
    uint64_t span = static_cast<uint64_t>(hi) - static_cast<uint64_t>(lo) + 1;
    // rejection sampling keeps the draw exactly uniform
    uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    uint64_t x;
    do {
      x = eng_();
    } while (x >= limit);
    return lo + static_cast<int>(x % span);
  }

  bool bernoulli(double p) { return u01() <= p; }

  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = u01(), u2 = u01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  double lognormal(double mu, double sigma) { return std::exp(normal(mu, sigma)); }

  // Exact Poisson; large rates are split so exp(-rate) never underflows.
  int poisson(double rate) {
    if (rate <= 0.0) return 0;
    int n = 0;
    while (rate > 30.0) {
      n += poisson_knuth(30.0);
      rate -= 30.0;
    }
    return n + poisson_knuth(rate);
  }

  double exponential(double mean) { return -mean * std::log(u01()); }

 private:
  int poisson_knuth(double rate) {
    double limit = std::exp(-rate), prod = u01();
    int n = 0;
    while (prod > limit) {
      ++n;
      prod *= u01();
    }
    return n;
  }

  uint64_t seed_, stream_;
  std::mt19937_64 eng_;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

// ===== Dense row-major matrix (rows x cols of double) =====

struct Matrix {
  int rows = 0, cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0) : rows(r), cols(c), data(size_t(r) * c, fill) {}

  double& at(int r, int c) { return data[size_t(r) * cols + c]; }
  double at(int r, int c) const { return data[size_t(r) * cols + c]; }
  std::span<double> row(int r) { return {data.data() + size_t(r) * cols, size_t(cols)}; }
  std::span<const double> row(int r) const {
    return {data.data() + size_t(r) * cols, size_t(cols)};
  }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

// ===== Market-facing state types =====

struct MarketState {
  std::vector<double> features;  // kFeatureDim entries
  double subsidy_rate_so_far = 0.0;  // 0 until the first completion
};

// [features; rho] -> model-facing state vector
inline std::vector<double> augment_state(std::span<const double> features, double rho,
                                         int expected_dim = kFeatureDim) {
  if (static_cast<int>(features.size()) != expected_dim) {
    throw ValidationError(str_printf(
        "augment_state: expected %d features, got %zu", expected_dim, features.size()));
  }
  std::vector<double> out(features.begin(), features.end());
  out.push_back(rho);
  return out;
}

inline std::vector<double> augment_state(const MarketState& s) {
  return augment_state(s.features, s.subsidy_rate_so_far);
}

// Conditioning record shared by the denoiser and the action decoder.
struct Context {
  std::vector<double> city_onehot;  // known cities + trailing "unknown" slot
  double hour_sin = 0.0, hour_cos = 1.0;
  double dow_sin = 0.0, dow_cos = 1.0;
  double cap_C = 0.0;
  double tolerance_delta = 0.0;
  double target_rides = 0.0;  // normalized by the city's trailing daily mean

  std::vector<double> to_vector() const {
    std::vector<double> v(city_onehot);
    v.insert(v.end(), {hour_sin, hour_cos, dow_sin, dow_cos, cap_C, tolerance_delta,
                       target_rides});
    return v;
  }
  static int dim(int n_known_cities) { return n_known_cities + 1 + 7; }
};

// Per-pair economics handed to the subsidy mapping.
struct PairEconomics {
  double reward = 0.0;     // platform margin on this pair
  double gmv = 0.0;
  double slope = 0.0;      // completion-probability gain per subsidy unit
  double cap = 0.0;        // per-pair subsidy cap
  double base_prob = 0.0;  // completion probability at zero subsidy

  void validate() const {
    if (!(reward > 0.0) || !(gmv > 0.0) || !(cap > 0.0))
      throw InvariantError("PairEconomics: reward, gmv, cap must be positive");
    if (slope < 0.0 || base_prob < 0.0 || base_prob >= 1.0)
      throw InvariantError("PairEconomics: slope >= 0 and base_prob in [0,1) required");
    if (slope * cap + base_prob > 1.0 + 1e-12)
      throw InvariantError("PairEconomics: slope*cap + base_prob exceeds 1");
  }
};

// ===== Trajectory =====

struct Trajectory {
  std::string city_id;
  int day_index = 0;
  int window_minutes = 5;
  Matrix states;                 // T x kStateDim, row t is the pre-action state
  std::vector<double> actions;   // lambda_t
  std::vector<double> rides;     // per-window completions
  std::vector<double> gmv;       // per-window completed GMV
  std::vector<double> drv;       // per-window driver revenue
  int valid_length = 0;

  int horizon() const { return states.rows; }

  void validate() const {
    if (window_minutes != 2 && window_minutes != 5 && window_minutes != 10)
      throw InvariantError("Trajectory: window_minutes must be one of {2,5,10}");
    const int T = kMinutesPerDay / window_minutes;
    if (states.rows != T)
      throw InvariantError(str_printf("Trajectory: %d rows, expected T=%d", states.rows, T));
    if (states.cols != kStateDim)
      throw InvariantError(str_printf("Trajectory: state dim %d, expected %d", states.cols,
                                      kStateDim));
    const size_t n = static_cast<size_t>(T);
    if (actions.size() != n || rides.size() != n || gmv.size() != n || drv.size() != n)
      throw InvariantError("Trajectory: per-window arrays must all have length T");
    if (valid_length < 0 || valid_length > T)
      throw InvariantError("Trajectory: valid_length out of range");
    for (int t = 0; t < valid_length; ++t) {
      if (!(actions[t] > 0.0 && actions[t] <= kLambdaMax))
        throw InvariantError(str_printf("Trajectory: action %.6g at t=%d outside (0,30]",
                                        actions[t], t));
    }
  }
};

// ===== JSONL serialization =====
//
// Doubles are written with %.17g: enough digits that parsing returns the exact
// same bits, so serialize/parse round-trips are identities.

namespace detail {

inline void append_double(std::string& out, double v) {
  char buf[40];
  snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}

inline void append_array(std::string& out, std::span<const double> v) {
  out += '[';
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    append_double(out, v[i]);
  }
  out += ']';
}

}  // namespace detail

inline std::string to_jsonl_line(const Trajectory& tr) {
  std::string out;
  out.reserve(size_t(tr.horizon()) * (tr.states.cols + 4) * 20 + 128);
  out += "{\"city_id\":\"";
  out += tr.city_id;
  out += "\",\"day_index\":";
  out += std::to_string(tr.day_index);
  out += ",\"window_minutes\":";
  out += std::to_string(tr.window_minutes);
  out += ",\"valid_length\":";
  out += std::to_string(tr.valid_length);
  out += ",\"states\":[";
  for (int t = 0; t < tr.states.rows; ++t) {
    if (t) out += ',';
    detail::append_array(out, tr.states.row(t));
  }
  out += "],\"actions\":";
  detail::append_array(out, tr.actions);
  out += ",\"rides\":";
  detail::append_array(out, tr.rides);
  out += ",\"gmv\":";
  detail::append_array(out, tr.gmv);
  out += ",\"drv\":";
  detail::append_array(out, tr.drv);
  out += '}';
  return out;
}

inline Trajectory from_jsonl_line(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("trajectory record is not valid JSON: ") + e.what());
  }
  Trajectory tr;
  try {
    tr.city_id = j.at("city_id").get<std::string>();
    tr.day_index = j.at("day_index").get<int>();
    tr.window_minutes = j.at("window_minutes").get<int>();
    tr.valid_length = j.at("valid_length").get<int>();
    const auto& st = j.at("states");
    tr.states = Matrix(static_cast<int>(st.size()),
                       st.empty() ? kStateDim : static_cast<int>(st[0].size()));
    for (int t = 0; t < tr.states.rows; ++t) {
      const auto& row = st[t];
      if (static_cast<int>(row.size()) != tr.states.cols)
        throw IoError("trajectory record: ragged state rows");
      for (int c = 0; c < tr.states.cols; ++c) tr.states.at(t, c) = row[c].get<double>();
    }
    tr.actions = j.at("actions").get<std::vector<double>>();
    tr.rides = j.at("rides").get<std::vector<double>>();
    tr.gmv = j.at("gmv").get<std::vector<double>>();
    tr.drv = j.at("drv").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("trajectory record missing or mistyped field: ") + e.what());
  }
  return tr;
}

inline void save_jsonl(const std::filesystem::path& path, const std::vector<Trajectory>& trs) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  for (const auto& tr : trs) f << to_jsonl_line(tr) << '\n';
  if (!f) throw IoError("write failed: " + path.string());
}

inline std::vector<Trajectory> load_jsonl(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open for reading: " + path.string());
  std::vector<Trajectory> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    out.push_back(from_jsonl_line(line));
  }
  return out;
}

// ===== key=value config files =====

using KvMap = std::map<std::string, std::string>;

inline KvMap parse_kv_text(std::istream& in) {
  KvMap kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError(str_printf("config line %d: expected key=value", lineno));
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t\r");
      auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
    if (key.empty()) throw ValidationError(str_printf("config line %d: empty key", lineno));
    kv[key] = val;
  }
  return kv;
}

inline KvMap parse_kv_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config: " + path.string());
  return parse_kv_text(f);
}

inline void write_kv_file(const std::filesystem::path& path, const KvMap& kv) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  for (const auto& [k, v] : kv) f << k << '=' << v << '\n';
}

inline double kv_double(const KvMap& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw ValidationError("config missing key: " + key);
  try {
    size_t pos = 0;
    double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing junk");
    return v;
  } catch (const std::exception&) {
    throw ValidationError("config key " + key + " is not a number: " + it->second);
  }
}

inline double kv_double(const KvMap& kv, const std::string& key, double dflt) {
  return kv.count(key) ? kv_double(kv, key) : dflt;
}

inline long kv_int(const KvMap& kv, const std::string& key) {
  double v = kv_double(kv, key);
  long i = static_cast<long>(v);
  if (static_cast<double>(i) != v)
    throw ValidationError("config key " + key + " is not an integer");
  return i;
}

inline long kv_int(const KvMap& kv, const std::string& key, long dflt) {
  return kv.count(key) ? kv_int(kv, key) : dflt;
}

inline std::string kv_string(const KvMap& kv, const std::string& key, std::string dflt = "") {
  auto it = kv.find(key);
  return it == kv.end() ? dflt : it->second;
}

inline std::vector<double> kv_doubles(const KvMap& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw ValidationError("config missing key: " + key);
  std::vector<double> out;
  std::stringstream ss(it->second);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw ValidationError("config key " + key + ": bad number '" + tok + "'");
    }
  }
  return out;
}

inline std::vector<std::string> kv_strings(const KvMap& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw ValidationError("config missing key: " + key);
  std::vector<std::string> out;
  std::stringstream ss(it->second);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    auto b = tok.find_first_not_of(" \t");
    auto e = tok.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(tok.substr(b, e - b + 1));
  }
  return out;
}

// ===== parallel_for =====
//
// Work is split by index, results must be written to per-index slots; any
// reduction happens afterwards in index order so thread count never changes
// the result.

inline void parallel_for(size_t n, int jobs, const std::function<void(size_t)>& fn) {
  if (jobs <= 0) jobs = static_cast<int>(std::thread::hardware_concurrency());
  if (jobs <= 1 || n <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<size_t>(jobs));
  const int workers = static_cast<int>(std::min<size_t>(static_cast<size_t>(jobs), n));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
      } catch (...) {
        errors[static_cast<size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace subsidy
