#pragma once

// Command pipeline behind subsidyctl: dataset generation, the two training
// stages, anchored finetuning, controller rollouts, policy evaluation, the
// target-scaling sweep, and report emission.  Every command reads a key=value
// config, runs deterministically from (config, seed), and writes a resolved
// copy of the settings it used next to its outputs, so artifacts are
// reproducible from the files alone.  Nothing here mutates its inputs.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "subsidy/eval.hpp"

namespace subsidy {

// ===== config access =====
//
// Reads go through CfgReader so the resolved-config copy lists every key a
// command actually consumed, with the value in effect (default or override).

class CfgReader {
 public:
  explicit CfgReader(const KvMap& kv) : kv_(kv) {}

  long integer(const std::string& key, long dflt) { return note_int(key, kv_int(kv_, key, dflt)); }
  long integer(const std::string& key) { return note_int(key, kv_int(kv_, key)); }
  double number(const std::string& key, double dflt) {
    return note_num(key, kv_double(kv_, key, dflt));
  }
  std::string text(const std::string& key, const std::string& dflt = "") {
    std::string v = kv_string(kv_, key, dflt);
    used_[key] = v;
    return v;
  }
  std::string require(const std::string& key, const std::string& why) {
    std::string v = kv_string(kv_, key);
    if (v.empty()) throw ValidationError("config missing key '" + key + "' (" + why + ")");
    used_[key] = v;
    return v;
  }
  uint64_t seed() { return static_cast<uint64_t>(integer("seed", 1)); }
  int jobs() {
    long j = integer("jobs", 1);
    if (j < 1) throw ValidationError("jobs must be >= 1");
    return static_cast<int>(j);
  }
  int window_minutes() {
    long wm = integer("window_minutes", 5);
    if (wm != 2 && wm != 5 && wm != 10)
      throw ValidationError("window_minutes must be one of {2,5,10}");
    return static_cast<int>(wm);
  }

  const KvMap& used() const { return used_; }

 private:
  long note_int(const std::string& key, long v) {
    used_[key] = std::to_string(v);
    return v;
  }
  double note_num(const std::string& key, double v) {
    std::string s;
    detail::append_double(s, v);
    used_[key] = s;
    return v;
  }
  const KvMap& kv_;
  KvMap used_;
};

inline void write_resolved(const std::string& out_dir, const std::string& command,
                           const KvMap& used) {
  KvMap kv = used;
  kv["command"] = command;
  write_kv_file(out_dir + "/resolved_" + command + ".cfg", kv);
}

inline void require_artifact(const std::string& path, const std::string& what,
                             const std::string& producer) {
  if (!std::filesystem::exists(path))
    throw IoError("missing prerequisite: " + what + " at " + path + " (produce it with `" +
                  producer + "`)");
}

// "0,3,7" and "21-27" forms, mixed; order and repeats are kept as written.
inline std::vector<int> parse_day_list(const std::string& spec) {
  std::vector<int> out;
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    auto dash = tok.find('-', 1);  // position 0 would be a sign, which we reject below
    try {
      if (dash == std::string::npos) {
        out.push_back(std::stoi(tok));
      } else {
        int lo = std::stoi(tok.substr(0, dash));
        int hi = std::stoi(tok.substr(dash + 1));
        if (hi < lo) throw ValidationError("day range '" + tok + "' runs backwards");
        for (int d = lo; d <= hi; ++d) out.push_back(d);
      }
    } catch (const std::invalid_argument&) {
      throw ValidationError("bad day token '" + tok + "' in '" + spec + "'");
    } catch (const std::out_of_range&) {
      throw ValidationError("day token out of range: '" + tok + "'");
    }
  }
  if (out.empty()) throw ValidationError("empty day list: '" + spec + "'");
  for (int d : out)
    if (d < 0) throw ValidationError("day indices must be >= 0");
  return out;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

// ===== profiles =====
//
// City ids end up as CSV fields and file names, so they are restricted to a
// safe alphabet at the boundary.

inline void check_city_id(const std::string& id) {
  if (id.empty()) throw ValidationError("empty city id");
  for (char c : id) {
    bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
              c == '_' || c == '-';
    if (!ok) throw ValidationError("city id '" + id + "' has characters outside [A-Za-z0-9_-]");
  }
}

// profiles= names a directory of <city>.cfg files; empty means the built-in
// roster.  Files load in name order so the roster is stable.
inline std::vector<CityProfile> load_profiles(const std::string& dir) {
  if (dir.empty()) {
    std::vector<CityProfile> ps = default_profiles();
    for (const CityProfile& p : ps) check_city_id(p.city_id);
    return ps;
  }
  require_artifact(dir, "profiles directory", "subsidyctl gen");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().extension() == ".cfg") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no .cfg profiles under " + dir);
  std::vector<CityProfile> ps;
  for (const auto& f : files) {
    ps.push_back(CityProfile::from_kv(parse_kv_file(f)));
    check_city_id(ps.back().city_id);
  }
  return ps;
}

inline const CityProfile& profile_by_id(const std::vector<CityProfile>& ps,
                                        const std::string& id) {
  for (const CityProfile& p : ps)
    if (p.city_id == id) return p;
  throw ValidationError("unknown city '" + id + "' (not in the profile roster)");
}

inline std::vector<CityProfile> select_profiles(const std::vector<CityProfile>& ps,
                                                const std::vector<std::string>& ids) {
  std::vector<CityProfile> out;
  for (const std::string& id : ids) out.push_back(profile_by_id(ps, id));
  return out;
}

// ===== small file helpers =====

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << body;
  if (!out.good()) throw IoError("short write: " + path);
}

inline void copy_file_bytes(const std::string& from, const std::string& to) {
  write_text_file(to, read_text_file(from));
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int col(const std::string& name) const {
    for (size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    throw ValidationError("csv column '" + name + "' not found");
  }
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open csv: " + path);
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.push_back("");
    if (first) {
      t.header = std::move(cells);
      first = false;
    } else {
      if (cells.size() != t.header.size())
        throw IoError(str_printf("csv %s: row with %zu cells, header has %zu", path.c_str(),
                                 cells.size(), t.header.size()));
      t.rows.push_back(std::move(cells));
    }
  }
  if (first) throw IoError("csv has no header: " + path);
  return t;
}

inline double csv_num(const std::string& cell) {
  try {
    size_t pos = 0;
    double v = std::stod(cell, &pos);
    if (pos != cell.size()) throw std::invalid_argument("trailing junk");
    return v;
  } catch (const std::exception&) {
    throw IoError("csv cell is not a number: '" + cell + "'");
  }
}

// ===== rng stream for logged behavior =====
//
// Streams 501/502 drive the market and the controller; the logging heuristic
// gets its own root so datasets never share draws with evaluation runs.

inline SeededRng behavior_day_rng(uint64_t seed, const std::string& city, int day_index) {
  return SeededRng(seed, 503).fork(city).fork(uint64_t(day_index));
}

// ===== parallel evaluation =====
//
// Same contract and output as evaluate_policy; (city, day) tasks carry
// independent rng streams, so results are byte-identical for any worker
// count.  jobs <= 1 takes the sequential path unchanged.

inline PolicyEval evaluate_policy_jobs(const std::string& name, const PolicyFactory& make,
                                       const std::vector<CityProfile>& profiles,
                                       std::span<const int> days, uint64_t seed,
                                       int window_minutes, double beta, int jobs) {
  if (jobs <= 1) return evaluate_policy(name, make, profiles, days, seed, window_minutes, beta);
  if (profiles.empty() || days.empty())
    throw ValidationError("evaluate_policy: need at least one city and one day");

  struct Task {
    const CityProfile* profile;
    int day;
  };
  std::vector<Task> tasks;
  for (const CityProfile& p : profiles)
    for (int day : days) tasks.push_back({&p, day});

  std::vector<EvalReport> reports(tasks.size());
  std::vector<RolloutResult> rolls(tasks.size());
  std::atomic<size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;

  auto worker = [&] {
    for (size_t i = next.fetch_add(1); i < tasks.size(); i = next.fetch_add(1)) {
      try {
        const CityProfile& p = *tasks[i].profile;
        const int day = tasks[i].day;
        RolloutResult rr = rollout(p, make(p, day), day, market_day_rng(seed, p.city_id, day),
                                   window_minutes);
        reports[i] = make_report(name, p, day, rr.summary, beta);
        rolls[i] = std::move(rr);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
        next.store(tasks.size());
        return;
      }
    }
  };

  const int n_workers = std::min<int>(jobs, static_cast<int>(tasks.size()));
  std::vector<std::thread> pool;
  pool.reserve(size_t(n_workers));
  for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  for (std::thread& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);

  PolicyEval ev;
  ev.reports = std::move(reports);
  ev.rolls = std::move(rolls);
  return ev;
}

// ===== per-day report table =====
//
// days.csv is the lossless per-trajectory record (doubles as %.17g), and the
// report command rebuilds EvalReports and curve metadata from it, so eval ->
// report round-trips byte for byte.

inline const char* kDayCsvHeader = "policy,city,day,cap_C,rides,gmv,drv,c_real,score,under_gap,violated\n";

inline std::string day_report_csv(const std::vector<EvalReport>& reports,
                                  const std::map<std::string, double>& cap_by_city) {
  std::string out = kDayCsvHeader;
  for (const EvalReport& r : reports) {
    out += r.policy;
    out += ',';
    out += r.city;
    out += str_printf(",%d,", r.day);
    detail::append_double(out, cap_by_city.at(r.city));
    for (double v : {r.rides, r.gmv, r.drv, r.c_real, r.score, r.under_gap}) {
      out += ',';
      detail::append_double(out, v);
    }
    out += r.violated ? ",1\n" : ",0\n";
  }
  return out;
}

struct DayTable {
  std::vector<EvalReport> reports;
  std::map<std::string, double> cap_by_city;
};

inline DayTable parse_day_reports(const std::string& path) {
  CsvTable t = read_csv(path);
  const int c_policy = t.col("policy"), c_city = t.col("city"), c_day = t.col("day");
  const int c_cap = t.col("cap_C"), c_rides = t.col("rides"), c_gmv = t.col("gmv");
  const int c_drv = t.col("drv"), c_creal = t.col("c_real"), c_score = t.col("score");
  const int c_under = t.col("under_gap"), c_viol = t.col("violated");
  DayTable out;
  for (const auto& row : t.rows) {
    EvalReport r;
    r.policy = row[size_t(c_policy)];
    r.city = row[size_t(c_city)];
    r.day = static_cast<int>(csv_num(row[size_t(c_day)]));
    r.rides = csv_num(row[size_t(c_rides)]);
    r.gmv = csv_num(row[size_t(c_gmv)]);
    r.drv = csv_num(row[size_t(c_drv)]);
    r.c_real = csv_num(row[size_t(c_creal)]);
    r.score = csv_num(row[size_t(c_score)]);
    r.under_gap = csv_num(row[size_t(c_under)]);
    r.violated = row[size_t(c_viol)] == "1";
    out.cap_by_city[r.city] = csv_num(row[size_t(c_cap)]);
    out.reports.push_back(std::move(r));
  }
  return out;
}

// ===== gen =====

inline std::string run_gen(const KvMap& kv) {
  CfgReader cfg(kv);
  const std::string out = cfg.require("out", "output directory for the datasets");
  const uint64_t seed = cfg.seed();
  const int wm = cfg.window_minutes();
  const int days = static_cast<int>(cfg.integer("days", 28));
  const int test_days = static_cast<int>(cfg.integer("test_days", 7));
  const int cold_days = static_cast<int>(cfg.integer("cold_days", 7));
  if (days < 1) throw ValidationError("days must be >= 1");
  if (test_days < 0 || test_days >= days)
    throw ValidationError("test_days must lie in [0, days)");
  if (cold_days < 0) throw ValidationError("cold_days must be >= 0");

  const std::vector<CityProfile> roster = load_profiles(cfg.text("profiles"));
  const std::vector<std::string> main_ids =
      split_list(cfg.text("main_cities", "city_a,city_b,city_c"));
  if (main_ids.empty()) throw ValidationError("main_cities is empty");
  const std::vector<CityProfile> mains = select_profiles(roster, main_ids);
  std::vector<CityProfile> colds;
  for (const CityProfile& p : roster) {
    bool is_main = false;
    for (const std::string& id : main_ids) is_main |= (id == p.city_id);
    if (!is_main) colds.push_back(p);
  }

  std::filesystem::create_directories(out + "/profiles");
  for (const CityProfile& p : roster)
    write_kv_file(out + "/profiles/" + p.city_id + ".cfg", p.to_kv());

  auto log_days = [&](const std::vector<CityProfile>& cities, int day_lo, int day_hi) {
    Dataset ds;
    ds.window_minutes = wm;
    ds.horizon = kMinutesPerDay / wm;
    for (const CityProfile& p : cities)
      ds.cities.push_back({p.city_id, p.cap_C, p.tolerance_delta});
    for (const CityProfile& p : cities)
      for (int day = day_lo; day < day_hi; ++day) {
        Policy logged = behavior_policy(p, behavior_day_rng(seed, p.city_id, day));
        ds.trajs.push_back(
            rollout(p, logged, day, market_day_rng(seed, p.city_id, day), wm).traj);
      }
    return ds;
  };

  const Dataset train = log_days(mains, 0, days - test_days);
  const Dataset test = log_days(mains, days - test_days, days);
  const Dataset cold = log_days(colds, 0, cold_days);
  save_dataset(out + "/train", train);
  save_dataset(out + "/test", test);
  save_dataset(out + "/cold", cold);

  write_resolved(out, "gen", cfg.used());
  return str_printf("gen: %zu train / %zu test / %zu cold trajectories (T=%d) -> %s",
                    train.trajs.size(), test.trajs.size(), cold.trajs.size(),
                    kMinutesPerDay / wm, out.c_str());
}

// ===== training stages =====

inline double final_epoch_loss(const std::vector<LossRow>& log) {
  if (log.empty()) return 0.0;
  const int last = log.back().epoch;
  double sum = 0.0;
  int n = 0;
  for (const LossRow& r : log)
    if (r.epoch == last) {
      sum += r.loss;
      ++n;
    }
  return n ? sum / n : 0.0;
}

inline std::string run_train_diffusion(const KvMap& kv) {
  CfgReader cfg(kv);
  const std::string out = cfg.require("out", "directory for the denoiser checkpoint");
  const std::string data = cfg.require("data", "training dataset directory from `subsidyctl gen`");
  require_artifact(data + "/manifest.json", "dataset manifest", "subsidyctl gen");
  const Dataset ds = load_dataset(data);

  DiffusionTrainConfig tc;
  tc.epochs = static_cast<int>(cfg.integer("epochs", 160));
  tc.batch = static_cast<int>(cfg.integer("batch", 16));
  tc.L = static_cast<int>(cfg.integer("L", 50));
  tc.lr = cfg.number("lr", 3e-4);
  tc.weight_decay = cfg.number("weight_decay", 1e-4);
  tc.ema_decay = cfg.number("ema_decay", tc.ema_decay);
  tc.seed = cfg.seed();
  tc.loss_variant = cfg.text("loss", "normalized");
  tc.arch.width = static_cast<int>(cfg.integer("width", 32));
  if (tc.epochs < 1 || tc.batch < 1) throw ValidationError("epochs and batch must be >= 1");

  DiffusionTrainResult res = train_diffusion(ds, tc);

  std::filesystem::create_directories(out);
  nlohmann::json meta;
  meta["norm"] = res.stats.to_json();
  meta["registry"] = res.registry.to_json();
  meta["denoiser"] = res.net.config().to_json();
  meta["L"] = res.schedule.L;
  save_checkpoint(out + "/denoiser.json", res.net.params(), meta);
  write_loss_csv(out + "/diffusion_loss.csv", res.log);

  write_resolved(out, "train-diffusion", cfg.used());
  return str_printf("train-diffusion: %zu trajectories, %d epochs, final loss %.5g -> %s",
                    ds.trajs.size(), tc.epochs, final_epoch_loss(res.log), out.c_str());
}

inline std::string run_train_inverse(const KvMap& kv) {
  CfgReader cfg(kv);
  const std::string out = cfg.require("out", "directory for the decoder checkpoint");
  const std::string data = cfg.require("data", "training dataset directory from `subsidyctl gen`");
  const std::string model =
      cfg.require("model", "directory holding denoiser.json from `subsidyctl train-diffusion`");
  require_artifact(data + "/manifest.json", "dataset manifest", "subsidyctl gen");
  require_artifact(model + "/denoiser.json", "denoiser checkpoint", "subsidyctl train-diffusion");
  const Dataset ds = load_dataset(data);

  // the decoder must share the denoiser's normalization and city roster, or
  // the two halves would disagree at deployment; both come from its metadata
  const nlohmann::json ddoc = load_checkpoint(model + "/denoiser.json");
  const NormStats stats = NormStats::from_json(ddoc.at("meta").at("norm"));
  const CityRegistry reg = CityRegistry::from_json(ddoc.at("meta").at("registry"));

  InverseTrainConfig tc;
  tc.epochs = static_cast<int>(cfg.integer("epochs", 120));
  tc.batch = static_cast<int>(cfg.integer("batch", 16));
  tc.lr = cfg.number("lr", 1e-3);
  tc.weight_decay = cfg.number("weight_decay", 1e-4);
  tc.ema_decay = cfg.number("ema_decay", tc.ema_decay);
  tc.hidden = static_cast<int>(cfg.integer("hidden", 64));
  tc.seed = cfg.seed();
  if (tc.epochs < 1 || tc.batch < 1) throw ValidationError("epochs and batch must be >= 1");

  InverseTrainResult res = train_inverse(ds, reg, stats, tc);

  std::filesystem::create_directories(out);
  nlohmann::json meta;
  meta["norm"] = ddoc.at("meta").at("norm");
  meta["registry"] = ddoc.at("meta").at("registry");
  meta["decoder"] = res.net.config().to_json();
  save_checkpoint(out + "/decoder.json", res.net.params(), meta);
  write_loss_csv(out + "/inverse_loss.csv", res.log);
  if (!std::filesystem::equivalent(std::filesystem::path(out),
                                   std::filesystem::path(model)))
    copy_file_bytes(model + "/denoiser.json", out + "/denoiser.json");

  write_resolved(out, "train-inverse", cfg.used());
  return str_printf("train-inverse: %zu trajectories, %d epochs, final loss %.5g -> %s",
                    ds.trajs.size(), tc.epochs, final_epoch_loss(res.log), out.c_str());
}

inline std::string run_finetune(const KvMap& kv) {
  CfgReader cfg(kv);
  const std::string out = cfg.require("out", "directory for the adapted bundle");
  const double lambda_anchor = cfg.number("lambda_anchor", 1e-2);
  if (lambda_anchor < 0.0) throw ValidationError("lambda_anchor must be >= 0");
  const std::string model =
      cfg.require("model", "pretrained bundle directory from `subsidyctl train-inverse`");
  const std::string data = cfg.require("data", "target-city dataset directory");
  const std::string city = cfg.require("city", "target city id");
  require_artifact(model + "/denoiser.json", "denoiser checkpoint", "subsidyctl train-diffusion");
  require_artifact(model + "/decoder.json", "decoder checkpoint", "subsidyctl train-inverse");
  require_artifact(data + "/manifest.json", "dataset manifest", "subsidyctl gen");

  ControllerBundle bundle = load_bundle(model);
  const Dataset full = load_dataset(data);
  Dataset target;
  target.window_minutes = full.window_minutes;
  target.horizon = full.horizon;
  for (const CityMeta& c : full.cities)
    if (c.id == city) target.cities.push_back(c);
  for (const Trajectory& tr : full.trajs)
    if (tr.city_id == city) target.trajs.push_back(tr);
  if (target.trajs.empty())
    throw ValidationError("no trajectories for city '" + city + "' in " + data);

  FinetuneConfig fc;
  fc.epochs = static_cast<int>(cfg.integer("epochs", 40));
  fc.batch = static_cast<int>(cfg.integer("batch", 16));
  fc.lr = cfg.number("lr", 3e-5);
  fc.lambda_anchor = lambda_anchor;
  fc.seed = cfg.seed();
  if (fc.epochs < 1 || fc.batch < 1) throw ValidationError("epochs and batch must be >= 1");

  // only the decoder moves; the diffusion half is copied through untouched
  FinetuneResult res = finetune_decoder(bundle.decoder, target, bundle.registry, bundle.stats, fc);

  std::filesystem::create_directories(out);
  copy_file_bytes(model + "/denoiser.json", out + "/denoiser.json");
  const nlohmann::json ddoc = load_checkpoint(model + "/denoiser.json");
  nlohmann::json meta;
  meta["norm"] = ddoc.at("meta").at("norm");
  meta["registry"] = ddoc.at("meta").at("registry");
  meta["decoder"] = bundle.decoder.config().to_json();
  save_checkpoint(out + "/decoder.json", bundle.decoder.params(), meta);
  write_loss_csv(out + "/finetune_loss.csv", res.log);
  std::string stats = "metric,value\nanchor_distance,";
  detail::append_double(stats, res.anchor_distance);
  stats += "\nlambda_anchor,";
  detail::append_double(stats, lambda_anchor);
  stats += str_printf("\nepochs,%d\n", fc.epochs);
  write_text_file(out + "/finetune_stats.csv", stats);

  write_resolved(out, "finetune", cfg.used());
  return str_printf("finetune: %s on %zu trajectories, %d epochs, anchor distance %.5g -> %s",
                    city.c_str(), target.trajs.size(), fc.epochs, res.anchor_distance,
                    out.c_str());
}

// ===== rollout =====

inline std::string run_rollout(const KvMap& kv) {
  CfgReader cfg(kv);
  const std::string out = cfg.require("out", "directory for rollout artifacts");
  const std::string model = cfg.require("model", "bundle directory with both checkpoints");
  const std::string city = cfg.require("city", "city id to roll out");
  require_artifact(model + "/denoiser.json", "denoiser checkpoint", "subsidyctl train-diffusion");
  require_artifact(model + "/decoder.json", "decoder checkpoint", "subsidyctl train-inverse");
  const std::vector<int> days = parse_day_list(cfg.text("days", "0"));
  const uint64_t seed = cfg.seed();
  const int wm = cfg.window_minutes();

  ControllerConfig cc;
  cc.gamma = cfg.number("gamma", 1.0);
  cc.replan_every = static_cast<int>(cfg.integer("replan_every", 1));
  cc.deterministic = cfg.integer("deterministic", 0) != 0;

  const std::vector<CityProfile> roster = load_profiles(cfg.text("profiles"));
  const CityProfile& profile = profile_by_id(roster, city);
  const ControllerBundle bundle = load_bundle(model);

  std::vector<Trajectory> trajs;
  std::string csv = "city,day,rides,gmv,drv,subsidy,c_real,decide_ms_mean,replans\n";
  double mean_rides = 0.0, mean_rate = 0.0, mean_ms = 0.0;
  for (int day : days) {
    ControllerDayResult r = run_controller_day(bundle, profile, day, cc, seed, wm);
    const RolloutSummary& s = r.roll.summary;
    csv += str_printf("%s,%d,", city.c_str(), day);
    for (double v : {s.total_rides, s.total_gmv, s.total_drv, s.total_subsidy, s.c_real}) {
      detail::append_double(csv, v);
      csv += ',';
    }
    detail::append_double(csv, r.decide_ms_mean);
    csv += str_printf(",%ld\n", r.replans);
    mean_rides += s.total_rides;
    mean_rate += s.c_real;
    mean_ms += r.decide_ms_mean;
    trajs.push_back(std::move(r.roll.traj));
  }
  const double n = double(days.size());

  std::filesystem::create_directories(out);
  save_jsonl(out + "/trajectories.jsonl", trajs);
  write_text_file(out + "/rollout.csv", csv);

  write_resolved(out, "rollout", cfg.used());
  return str_printf("rollout: %s, %zu days, mean rides %.1f, mean rate %.4f, decide %.1f ms -> %s",
                    city.c_str(), days.size(), mean_rides / n, mean_rate / n, mean_ms / n,
                    out.c_str());
}

// ===== eval =====

namespace detail {

// Per-city adapted bundles when models= points at a root of <city>/ dirs, or
// one shared bundle via model=.
inline std::map<std::string, std::shared_ptr<const ControllerBundle>> load_city_bundles(
    CfgReader& cfg, const std::vector<CityProfile>& cities) {
  std::map<std::string, std::shared_ptr<const ControllerBundle>> out;
  const std::string models = cfg.text("models");
  if (!models.empty()) {
    for (const CityProfile& p : cities) {
      const std::string dir = models + "/" + p.city_id;
      require_artifact(dir + "/denoiser.json", "denoiser checkpoint for " + p.city_id,
                       "subsidyctl finetune");
      require_artifact(dir + "/decoder.json", "decoder checkpoint for " + p.city_id,
                       "subsidyctl finetune");
      out[p.city_id] = std::make_shared<const ControllerBundle>(load_bundle(dir));
    }
    return out;
  }
  const std::string model = cfg.text("model");
  if (model.empty())
    throw ValidationError("controller policy needs model= (shared bundle) or models= (per-city)");
  require_artifact(model + "/denoiser.json", "denoiser checkpoint", "subsidyctl train-diffusion");
  require_artifact(model + "/decoder.json", "decoder checkpoint", "subsidyctl train-inverse");
  auto shared = std::make_shared<const ControllerBundle>(load_bundle(model));
  for (const CityProfile& p : cities) out[p.city_id] = shared;
  return out;
}

}  // namespace detail

inline std::string run_eval(const KvMap& kv) {
  CfgReader cfg(kv);
  const std::string out = cfg.require("out", "directory for evaluation artifacts");
  const uint64_t seed = cfg.seed();
  const int wm = cfg.window_minutes();
  const int jobs = cfg.jobs();
  const double beta = cfg.number("beta", kDefaultScoreBeta);
  const std::vector<int> days = parse_day_list(cfg.text("days", "21-27"));
  const std::vector<std::string> policy_names =
      split_list(cfg.text("policies", "controller,fixed"));
  if (policy_names.empty()) throw ValidationError("policies is empty");
  for (const std::string& n : policy_names)
    if (n != "controller" && n != "fixed" && n != "bc")
      throw ValidationError("unknown policy '" + n + "' (expected controller, fixed or bc)");

  const std::vector<CityProfile> roster = load_profiles(cfg.text("profiles"));
  const std::vector<CityProfile> cities =
      select_profiles(roster, split_list(cfg.text("cities", "city_a,city_b,city_c")));
  if (cities.empty()) throw ValidationError("cities is empty");
  std::map<std::string, double> cap_by_city;
  for (const CityProfile& p : cities) cap_by_city[p.city_id] = p.cap_C;

  // build the requested policies up front so missing artifacts fail fast
  std::vector<std::pair<std::string, PolicyFactory>> policies;
  std::string fixed_levels_csv;
  for (const std::string& name : policy_names) {
    if (name == "controller") {
      auto bundles = detail::load_city_bundles(cfg, cities);
      ControllerConfig cc;
      cc.gamma = cfg.number("gamma", 1.0);
      cc.replan_every = static_cast<int>(cfg.integer("replan_every", 1));
      PolicyFactory f = [bundles, cc, seed, wm](const CityProfile& p, int day) {
        return controller_factory(bundles.at(p.city_id), cc, seed, wm)(p, day);
      };
      policies.emplace_back(name, std::move(f));
    } else if (name == "fixed") {
      const std::vector<int> tune_days = parse_day_list(cfg.text("tune_days", "14-20"));
      std::map<std::string, double> levels;
      fixed_levels_csv = "city,lambda\n";
      for (const CityProfile& p : cities) {
        levels[p.city_id] = tune_fixed_lambda(p, tune_days, seed, wm, beta);
        fixed_levels_csv += p.city_id + ",";
        detail::append_double(fixed_levels_csv, levels[p.city_id]);
        fixed_levels_csv += '\n';
      }
      policies.emplace_back(name, fixed_lambda_factory(std::move(levels)));
    } else {  // bc
      const std::string data =
          cfg.require("data", "training dataset for the cloned baseline (bc policy)");
      require_artifact(data + "/manifest.json", "dataset manifest", "subsidyctl gen");
      const Dataset ds = load_dataset(data);
      const CityRegistry reg = CityRegistry::from_dataset(ds);
      const NormStats stats = NormStats::compute(ds.trajs);
      BCTrainConfig bc;
      bc.epochs = static_cast<int>(cfg.integer("bc_epochs", 120));
      bc.batch = static_cast<int>(cfg.integer("bc_batch", 16));
      bc.lr = cfg.number("bc_lr", 1e-3);
      bc.weight_decay = cfg.number("bc_weight_decay", 1e-4);
      bc.hidden = static_cast<int>(cfg.integer("bc_hidden", 64));
      bc.seed = seed;
      auto model = std::make_shared<const BCBaseline>(train_bc(ds, reg, stats, bc));
      policies.emplace_back(name, bc_factory(std::move(model), wm));
    }
  }

  std::vector<EvalReport> reports;
  std::vector<CurveEntry> curves;
  std::vector<std::pair<std::string, std::vector<double>>> scores;
  std::filesystem::create_directories(out + "/curves");
  for (const auto& [name, factory] : policies) {
    PolicyEval ev = evaluate_policy_jobs(name, factory, cities, days, seed, wm, beta, jobs);
    std::vector<Trajectory> trajs;
    for (size_t i = 0; i < ev.reports.size(); ++i) {
      const EvalReport& r = ev.reports[i];
      curves.push_back({name, ev.rolls[i].traj, cap_by_city.at(r.city), r.c_real});
      trajs.push_back(ev.rolls[i].traj);
    }
    save_jsonl(out + "/curves/" + name + ".jsonl", trajs);
    scores.emplace_back(name, scores_of(ev.reports));
    reports.insert(reports.end(), ev.reports.begin(), ev.reports.end());
  }

  write_text_file(out + "/days.csv", day_report_csv(reports, cap_by_city));
  if (!fixed_levels_csv.empty()) write_text_file(out + "/fixed_levels.csv", fixed_levels_csv);

  // one-sided paired comparison of the first policy against each other one
  std::string cmp = "policy_a,policy_b,n,mean_diff,t_stat,p_one_sided,ci_lo,ci_hi\n";
  for (size_t i = 1; i < scores.size(); ++i) {
    if (scores[0].second.size() < 2) break;
    PairedTTest tt = paired_compare(scores[0].second, scores[i].second);
    cmp += scores[0].first + "," + scores[i].first + str_printf(",%d", tt.n);
    for (double v : {tt.mean_diff, tt.t_stat, tt.p_one_sided, tt.ci_lo, tt.ci_hi}) {
      cmp += ',';
      detail::append_double(cmp, v);
    }
    cmp += '\n';
  }
  write_text_file(out + "/compare.csv", cmp);

  emit_report(out, reports, curves);

  std::string means;
  for (const auto& [name, sc] : scores) {
    double m = 0.0;
    for (double v : sc) m += v;
    means += str_printf("%s%s=%.2f", means.empty() ? "" : " ", name.c_str(),
                        sc.empty() ? 0.0 : m / double(sc.size()));
  }
  write_resolved(out, "eval", cfg.used());
  return str_printf("eval: %zu cities x %zu days, mean score %s -> %s", cities.size(),
                    days.size(), means.c_str(), out.c_str());
}

// ===== sweep-gamma =====

inline std::string run_sweep_gamma(const KvMap& kv) {
  CfgReader cfg(kv);
  const std::string out = cfg.require("out", "directory for sweep artifacts");
  const std::string model = cfg.require("model", "bundle directory with both checkpoints");
  require_artifact(model + "/denoiser.json", "denoiser checkpoint", "subsidyctl train-diffusion");
  require_artifact(model + "/decoder.json", "decoder checkpoint", "subsidyctl train-inverse");
  const uint64_t seed = cfg.seed();
  const int wm = cfg.window_minutes();
  const int jobs = cfg.jobs();
  const double beta = cfg.number("beta", kDefaultScoreBeta);
  const std::vector<int> days = parse_day_list(cfg.text("days", "21-27"));
  const std::vector<CityProfile> roster = load_profiles(cfg.text("profiles"));
  const std::vector<CityProfile> cities =
      select_profiles(roster, split_list(cfg.text("cities", "city_a")));
  if (cities.empty()) throw ValidationError("cities is empty");

  std::vector<double> grid;
  const std::string grid_spec = cfg.text("grid");
  if (grid_spec.empty()) {
    grid = default_gamma_grid();
  } else {
    for (const std::string& tok : split_list(grid_spec)) grid.push_back(csv_num(tok));
  }
  if (grid.empty()) throw ValidationError("gamma grid is empty");
  for (double g : grid)
    if (!(g > 0.0)) throw ValidationError("gamma grid values must be positive");

  ControllerConfig cc;
  cc.replan_every = static_cast<int>(cfg.integer("replan_every", 1));
  auto bundle = std::make_shared<const ControllerBundle>(load_bundle(model));

  SweepResult res;
  if (jobs <= 1) {
    res = steering_sweep(bundle, cities, days, cc, seed, wm, beta, grid);
  } else {
    // same accumulation order as the sequential sweep, parallel across
    // (city, day) inside each gamma level
    std::vector<double> gammas, rides;
    for (double gamma : grid) {
      ControllerConfig gcc = cc;
      gcc.gamma = gamma;
      PolicyEval ev =
          evaluate_policy_jobs("steer", controller_factory(bundle, gcc, seed, wm), cities, days,
                               seed, wm, beta, jobs);
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
      res.rows.push_back(row);
      gammas.push_back(gamma);
      rides.push_back(row.mean_rides);
    }
    const bool flat = std::all_of(rides.begin(), rides.end(),
                                  [&](double v) { return v == rides.front(); });
    res.rides_rank_corr = (grid.size() >= 2 && !flat) ? spearman(gammas, rides) : 0.0;
  }

  std::string csv = "gamma,mean_score,mean_rides,mean_gmv\n";
  for (const SweepRow& row : res.rows) {
    detail::append_double(csv, row.gamma);
    for (double v : {row.mean_score, row.mean_rides, row.mean_gmv}) {
      csv += ',';
      detail::append_double(csv, v);
    }
    csv += '\n';
  }
  std::string stats = "metric,value\nrides_rank_corr,";
  detail::append_double(stats, res.rides_rank_corr);
  stats += '\n';

  std::filesystem::create_directories(out);
  write_text_file(out + "/gamma_sweep.csv", csv);
  write_text_file(out + "/sweep_stats.csv", stats);

  write_resolved(out, "sweep-gamma", cfg.used());
  return str_printf("sweep-gamma: %zu levels x %zu days, rides rank corr %.4f -> %s",
                    grid.size(), days.size(), res.rides_rank_corr, out.c_str());
}

// ===== report =====

inline std::string run_report(const KvMap& kv) {
  CfgReader cfg(kv);
  const std::string out = cfg.require("out", "directory for the report CSVs");
  const std::string eval_dir = cfg.require("eval", "evaluation directory from `subsidyctl eval`");
  require_artifact(eval_dir + "/days.csv", "per-day evaluation table", "subsidyctl eval");

  DayTable table = parse_day_reports(eval_dir + "/days.csv");

  // curve files per policy, in first-appearance order of days.csv
  std::vector<std::string> policy_order;
  for (const EvalReport& r : table.reports)
    if (std::find(policy_order.begin(), policy_order.end(), r.policy) == policy_order.end())
      policy_order.push_back(r.policy);

  std::map<std::pair<std::string, int>, const EvalReport*> by_city_day;
  std::vector<CurveEntry> curves;
  for (const std::string& policy : policy_order) {
    const std::string path = eval_dir + "/curves/" + policy + ".jsonl";
    require_artifact(path, "trajectory curves for policy " + policy, "subsidyctl eval");
    by_city_day.clear();
    for (const EvalReport& r : table.reports)
      if (r.policy == policy) by_city_day[{r.city, r.day}] = &r;
    for (Trajectory& tr : load_jsonl(path)) {
      const std::string city = tr.city_id;
      auto it = by_city_day.find({city, tr.day_index});
      if (it == by_city_day.end())
        throw ValidationError(str_printf("curves/%s.jsonl has (%s, day %d) with no days.csv row",
                                         policy.c_str(), city.c_str(), tr.day_index));
      curves.push_back({policy, std::move(tr), table.cap_by_city.at(city), it->second->c_real});
    }
  }

  std::filesystem::create_directories(out);
  emit_report(out, table.reports, curves);

  write_resolved(out, "report", cfg.used());
  return str_printf("report: %zu day summaries, %zu curves -> %s", table.reports.size(),
                    curves.size(), out.c_str());
}

}  // namespace subsidy
