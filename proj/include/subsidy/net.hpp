#pragma once

// ===== Parameter storage, checkpoints, and the two networks =====
//
// Both networks run in double precision with hand-written backward passes;
// every analytic gradient is covered by finite-difference checks in the test
// suite.  Layouts keep the output index contiguous so the hot loops vectorize.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "subsidy/core.hpp"

namespace subsidy {

// ===== ParamStore =====

struct TensorRef {
  std::string name;
  std::vector<int> shape;
  size_t offset = 0, size = 0;
};

class ParamStore {
 public:
  std::span<double> add(const std::string& name, std::vector<int> shape) {
    if (index_.count(name)) throw InvariantError("ParamStore: duplicate tensor " + name);
    size_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw InvariantError("ParamStore: nonpositive dim in " + name);
      n *= size_t(d);
    }
    TensorRef ref{name, std::move(shape), values_.size(), n};
    index_[name] = tensors_.size();
    tensors_.push_back(ref);
    values_.resize(values_.size() + n, 0.0);
    grads_.resize(values_.size(), 0.0);
    return v(name);
  }

  std::span<double> v(const std::string& name) {
    const TensorRef& r = ref(name);
    return {values_.data() + r.offset, r.size};
  }
  std::span<const double> v(const std::string& name) const {
    const TensorRef& r = ref(name);
    return {values_.data() + r.offset, r.size};
  }
  std::span<double> g(const std::string& name) {
    const TensorRef& r = ref(name);
    return {grads_.data() + r.offset, r.size};
  }

  const TensorRef& ref(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValidationError("ParamStore: unknown tensor " + name);
    return tensors_[it->second];
  }

  const std::vector<TensorRef>& tensors() const { return tensors_; }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& grads() { return grads_; }
  size_t size() const { return values_.size(); }
  void zero_grads() { std::fill(grads_.begin(), grads_.end(), 0.0); }

 private:
  std::vector<double> values_, grads_;
  std::vector<TensorRef> tensors_;
  std::unordered_map<std::string, size_t> index_;
};

// ===== Checkpoint I/O =====
//
// { "format": "subsidy-ckpt-1", "meta": {...}, "tensors": [{name, shape, data}] }

inline void save_checkpoint(const std::string& path, const ParamStore& ps,
                            const nlohmann::json& meta) {
  nlohmann::json doc;
  doc["format"] = "subsidy-ckpt-1";
  doc["meta"] = meta;
  auto& tensors = doc["tensors"] = nlohmann::json::array();
  for (const TensorRef& r : ps.tensors()) {
    nlohmann::json t;
    t["name"] = r.name;
    t["shape"] = r.shape;
    auto sp = ps.v(r.name);
    t["data"] = std::vector<double>(sp.begin(), sp.end());
    tensors.push_back(std::move(t));
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out << doc.dump();
  out << '\n';
  if (!out.good()) throw IoError("short write on checkpoint: " + path);
}

inline nlohmann::json load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const std::exception& e) {
    throw ValidationError(std::string("checkpoint parse error: ") + e.what());
  }
  if (!doc.is_object() || doc.value("format", "") != std::string("subsidy-ckpt-1"))
    throw ValidationError("checkpoint format tag missing or unsupported: " + path);
  return doc;
}

// Strict fill: every registered tensor must be present with the exact shape.
inline void assign_params(ParamStore& ps, const nlohmann::json& doc) {
  std::unordered_map<std::string, const nlohmann::json*> by_name;
  for (const auto& t : doc.at("tensors")) by_name[t.at("name").get<std::string>()] = &t;
  if (by_name.size() != ps.tensors().size())
    throw ValidationError(str_printf("checkpoint has %zu tensors, model expects %zu",
                                     by_name.size(), ps.tensors().size()));
  for (const TensorRef& r : ps.tensors()) {
    auto it = by_name.find(r.name);
    if (it == by_name.end()) throw ValidationError("checkpoint missing tensor " + r.name);
    const nlohmann::json& t = *it->second;
    std::vector<int> shape = t.at("shape").get<std::vector<int>>();
    if (shape != r.shape)
      throw ValidationError("checkpoint shape mismatch for tensor " + r.name);
    std::vector<double> data = t.at("data").get<std::vector<double>>();
    if (data.size() != r.size)
      throw ValidationError("checkpoint data size mismatch for tensor " + r.name);
    std::copy(data.begin(), data.end(), ps.v(r.name).begin());
  }
}

// ===== shared math =====

namespace netops {

inline double sigmoid(double x) {
  if (x >= 0.0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline double silu(double x) { return x * sigmoid(x); }
inline double silu_grad(double x) {
  double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

inline void check_finite(std::span<const double> xs, const char* what) {
  for (double x : xs)
    if (!std::isfinite(x)) throw ValidationError(str_printf("non-finite value in %s", what));
}

// y[t] = x[t] W + b over all rows; W is [in][out], out index contiguous.
// Rows are processed in tiles so each weight row is streamed once per tile;
// per-element accumulation order (bias, then ascending i) is unchanged.
inline void dense_rows(const Matrix& x, std::span<const double> w, std::span<const double> b,
                       Matrix& y) {
  const int in = x.cols, out = int(b.size()), T = x.rows;
  constexpr int kTile = 16;
  for (int t0 = 0; t0 < T; t0 += kTile) {
    const int t1 = std::min(t0 + kTile, T);
    for (int t = t0; t < t1; ++t) std::copy(b.begin(), b.end(), y.row(t).data());
    for (int i = 0; i < in; ++i) {
      const double* wr = w.data() + size_t(i) * out;
      for (int t = t0; t < t1; ++t) {
        const double xi = x.at(t, i);
        double* yr = y.row(t).data();
        for (int o = 0; o < out; ++o) yr[o] += xi * wr[o];
      }
    }
  }
}

inline void dense_rows_backward(const Matrix& x, std::span<const double> w, const Matrix& dy,
                                std::span<double> dw, std::span<double> db, Matrix* dx) {
  const int in = x.cols, out = dy.cols;
  for (int t = 0; t < x.rows; ++t) {
    const double* xr = x.row(t).data();
    const double* dyr = dy.row(t).data();
    for (int o = 0; o < out; ++o) db[o] += dyr[o];
    for (int i = 0; i < in; ++i) {
      const double xi = xr[i];
      double* dwr = dw.data() + size_t(i) * out;
      for (int o = 0; o < out; ++o) dwr[o] += xi * dyr[o];
    }
    if (dx) {
      double* dxr = dx->row(t).data();
      for (int i = 0; i < in; ++i) {
        const double* wr = w.data() + size_t(i) * out;
        double acc = 0.0;
        for (int o = 0; o < out; ++o) acc += wr[o] * dyr[o];
        dxr[i] += acc;
      }
    }
  }
}

inline void dense_vec(std::span<const double> x, std::span<const double> w,
                      std::span<const double> b, std::span<double> y) {
  const int in = int(x.size()), out = int(b.size());
  std::copy(b.begin(), b.end(), y.begin());
  for (int i = 0; i < in; ++i) {
    const double xi = x[i];
    const double* wr = w.data() + size_t(i) * out;
    for (int o = 0; o < out; ++o) y[o] += xi * wr[o];
  }
}

inline void dense_vec_backward(std::span<const double> x, std::span<const double> w,
                               std::span<const double> dy, std::span<double> dw,
                               std::span<double> db, std::span<double> dx) {
  const int in = int(x.size()), out = int(dy.size());
  for (int o = 0; o < out; ++o) db[o] += dy[o];
  for (int i = 0; i < in; ++i) {
    const double* wr = w.data() + size_t(i) * out;
    double* dwr = dw.data() + size_t(i) * out;
    double acc = 0.0;
    for (int o = 0; o < out; ++o) {
      dwr[o] += x[i] * dy[o];
      acc += wr[o] * dy[o];
    }
    if (!dx.empty()) dx[i] += acc;
  }
}

// Zero-padded channel-mixing conv along time; W is [taps][in][out].  Tiled
// like dense_rows; per-element order (bias, ascending j, ascending i) as a
// plain triple loop would produce.
inline void conv_rows(const Matrix& x, std::span<const double> w, std::span<const double> b,
                      int taps, int dilation, Matrix& y) {
  const int in = x.cols, out = int(b.size()), half = taps / 2, T = x.rows;
  constexpr int kTile = 16;
  for (int t0 = 0; t0 < T; t0 += kTile) {
    const int t1 = std::min(t0 + kTile, T);
    for (int t = t0; t < t1; ++t) std::copy(b.begin(), b.end(), y.row(t).data());
    for (int j = 0; j < taps; ++j) {
      const int off = (j - half) * dilation;
      const double* wj = w.data() + size_t(j) * in * out;
      for (int i = 0; i < in; ++i) {
        const double* wr = wj + size_t(i) * out;
        for (int t = t0; t < t1; ++t) {
          const int ts = t + off;
          if (ts < 0 || ts >= T) continue;
          const double xi = x.at(ts, i);
          double* yr = y.row(t).data();
          for (int o = 0; o < out; ++o) yr[o] += xi * wr[o];
        }
      }
    }
  }
}

inline void conv_rows_backward(const Matrix& x, std::span<const double> w, const Matrix& dy,
                               int taps, int dilation, std::span<double> dw,
                               std::span<double> db, Matrix& dx) {
  const int in = x.cols, out = dy.cols, half = taps / 2;
  for (int t = 0; t < x.rows; ++t) {
    const double* dyr = dy.row(t).data();
    for (int o = 0; o < out; ++o) db[o] += dyr[o];
    for (int j = 0; j < taps; ++j) {
      const int ts = t + (j - half) * dilation;
      if (ts < 0 || ts >= x.rows) continue;
      const double* xr = x.row(ts).data();
      double* dxr = dx.row(ts).data();
      const double* wj = w.data() + size_t(j) * in * out;
      double* dwj = dw.data() + size_t(j) * in * out;
      for (int i = 0; i < in; ++i) {
        const double xi = xr[i];
        const double* wr = wj + size_t(i) * out;
        double* dwr = dwj + size_t(i) * out;
        double acc = 0.0;
        for (int o = 0; o < out; ++o) {
          dwr[o] += xi * dyr[o];
          acc += wr[o] * dyr[o];
        }
        dxr[i] += acc;
      }
    }
  }
}

}  // namespace netops

// ===== Denoiser =====
//
// Pointwise input projection, then residual blocks of dilated conv + FiLM
// modulation from the conditioning vector + SiLU + pointwise mix, then a
// pointwise head back to state width.  Conditioning sums a sinusoidal step
// embedding MLP and a context MLP.

struct DenoiserConfig {
  int state_dim = kStateDim;
  int width = 32;
  int emb_dim = 64;
  int ctx_dim = 0;
  int tau_freqs = 32;
  int taps = 5;
  std::vector<int> dilations = {1, 4, 16, 64};

  void validate() const {
    if (state_dim < 1 || width < 1 || emb_dim < 1 || ctx_dim < 1 || tau_freqs < 1)
      throw ValidationError("DenoiserConfig: dimensions must be positive");
    if (taps < 1 || taps % 2 == 0) throw ValidationError("DenoiserConfig: taps must be odd");
    if (dilations.empty()) throw ValidationError("DenoiserConfig: need at least one block");
    for (int d : dilations)
      if (d < 1) throw ValidationError("DenoiserConfig: dilations must be >= 1");
  }

  nlohmann::json to_json() const {
    return {{"state_dim", state_dim}, {"width", width},         {"emb_dim", emb_dim},
            {"ctx_dim", ctx_dim},     {"tau_freqs", tau_freqs}, {"taps", taps},
            {"dilations", dilations}};
  }
  static DenoiserConfig from_json(const nlohmann::json& j) {
    DenoiserConfig c;
    c.state_dim = j.at("state_dim").get<int>();
    c.width = j.at("width").get<int>();
    c.emb_dim = j.at("emb_dim").get<int>();
    c.ctx_dim = j.at("ctx_dim").get<int>();
    c.tau_freqs = j.at("tau_freqs").get<int>();
    c.taps = j.at("taps").get<int>();
    c.dilations = j.at("dilations").get<std::vector<int>>();
    c.validate();
    return c;
  }
};

// Deterministic day-phase channels appended to the denoiser input.  The conv
// stack is translation-equivariant, so absolute position cannot be inferred
// once the state rows are noised; these channels stay clean at every step.
constexpr int kDenoiserPosChannels = 5;

inline void fill_position_row(double* r, int t, int rows) {
  const double u = double(t) / double(std::max(1, rows));
  r[0] = std::sin(2.0 * M_PI * u);
  r[1] = std::cos(2.0 * M_PI * u);
  r[2] = std::sin(4.0 * M_PI * u);
  r[3] = std::cos(4.0 * M_PI * u);
  r[4] = 2.0 * u - 1.0;
}

class DenoiserNet {
 public:
  struct Tape {
    Matrix z;
    int tau = 0;
    std::vector<double> tau_emb, tau_pre, tau_act, cond_tau;
    std::vector<double> ctx, ctx_pre, ctx_act, cond_ctx;
    std::vector<double> cond;
    Matrix x0;
    struct Block {
      Matrix x_in, conv_out, film_out, act, out;
      std::vector<double> scale_shift;
    };
    std::vector<Block> blocks;
    Matrix x_final;
  };

  explicit DenoiserNet(DenoiserConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const int d = cfg_.state_dim + kDenoiserPosChannels, W = cfg_.width, E = cfg_.emb_dim,
              F2 = 2 * cfg_.tau_freqs;
    ps_.add("in.w", {d, W});
    ps_.add("in.b", {W});
    ps_.add("tau.w1", {F2, E});
    ps_.add("tau.b1", {E});
    ps_.add("tau.w2", {E, E});
    ps_.add("tau.b2", {E});
    ps_.add("ctx.w1", {cfg_.ctx_dim, E});
    ps_.add("ctx.b1", {E});
    ps_.add("ctx.w2", {E, E});
    ps_.add("ctx.b2", {E});
    for (size_t b = 0; b < cfg_.dilations.size(); ++b) {
      std::string p = str_printf("blk%zu.", b);
      ps_.add(p + "conv.w", {cfg_.taps, W, W});
      ps_.add(p + "conv.b", {W});
      ps_.add(p + "film.w", {E, 2 * W});
      ps_.add(p + "film.b", {2 * W});
      ps_.add(p + "out.w", {W, W});
      ps_.add(p + "out.b", {W});
    }
    ps_.add("head.w", {W, d});
    ps_.add("head.b", {d});
  }

  const DenoiserConfig& config() const { return cfg_; }
  ParamStore& params() { return ps_; }
  const ParamStore& params() const { return ps_; }

  void init(SeededRng& rng) {
    for (const TensorRef& r : ps_.tensors()) {
      auto sp = ps_.v(r.name);
      if (r.shape.size() == 1) {
        std::fill(sp.begin(), sp.end(), 0.0);
        continue;
      }
      size_t fan_in = r.size / size_t(r.shape.back());
      double scale = std::sqrt(1.0 / double(fan_in));
      // pre-residual mixers and the head start small so blocks begin near identity
      if (r.name.find("out.w") != std::string::npos || r.name == "head.w") scale *= 0.1;
      for (double& x : sp) x = scale * rng.normal();
    }
  }

  // Reusable buffers for the allocation-free inference path.
  struct InferScratch {
    Matrix zin, x, c, o;
    std::vector<double> emb, pre, act, cond, ss;
  };

  Matrix augmented_input(const Matrix& z) const {
    Matrix a(z.rows, z.cols + kDenoiserPosChannels);
    for (int t = 0; t < z.rows; ++t) {
      double* r = a.row(t).data();
      std::copy(z.row(t).begin(), z.row(t).end(), r);
      fill_position_row(r + z.cols, t, z.rows);
    }
    return a;
  }

  Matrix forward(const Matrix& z, int tau, const std::vector<double>& ctx) const {
    InferScratch s;
    Matrix eps;
    forward_infer(z, tau, ctx, s, eps);
    return eps;
  }

  // Same math and per-element operation order as forward_tape, but activations
  // are overwritten in place; outputs are bit-identical to the tape path.
  void forward_infer(const Matrix& z, int tau, const std::vector<double>& ctx, InferScratch& s,
                     Matrix& eps_out) const {
    using namespace netops;
    if (z.cols != cfg_.state_dim)
      throw ValidationError(str_printf("denoiser: state width %d, expected %d", z.cols,
                                       cfg_.state_dim));
    if (int(ctx.size()) != cfg_.ctx_dim)
      throw ValidationError(str_printf("denoiser: context size %zu, expected %d", ctx.size(),
                                       cfg_.ctx_dim));
    if (tau < 1) throw ValidationError("denoiser: step index must be >= 1");
    check_finite(z.data, "denoiser state input");
    check_finite(ctx, "denoiser context");

    const int T = z.rows, W = cfg_.width, E = cfg_.emb_dim, F = cfg_.tau_freqs;
    s.emb.assign(2 * F, 0.0);
    for (int i = 0; i < F; ++i) {
      double omega = std::pow(10000.0, -double(i) / double(F));
      s.emb[2 * i] = std::sin(tau * omega);
      s.emb[2 * i + 1] = std::cos(tau * omega);
    }
    s.pre.assign(E, 0.0);
    s.act.resize(E);
    s.cond.assign(E, 0.0);
    dense_vec(s.emb, ps_.v("tau.w1"), ps_.v("tau.b1"), s.pre);
    for (int i = 0; i < E; ++i) s.act[i] = silu(s.pre[i]);
    dense_vec(s.act, ps_.v("tau.w2"), ps_.v("tau.b2"), s.cond);
    s.pre.assign(E, 0.0);
    dense_vec(ctx, ps_.v("ctx.w1"), ps_.v("ctx.b1"), s.pre);
    for (int i = 0; i < E; ++i) s.act[i] = silu(s.pre[i]);
    std::vector<double>& cond_ctx = s.pre;  // reuse as the second MLP output
    cond_ctx.assign(E, 0.0);
    dense_vec(s.act, ps_.v("ctx.w2"), ps_.v("ctx.b2"), cond_ctx);
    for (int i = 0; i < E; ++i) s.cond[i] += cond_ctx[i];

    const int din = cfg_.state_dim + kDenoiserPosChannels;
    if (s.zin.rows != T || s.zin.cols != din) s.zin = Matrix(T, din);
    for (int t = 0; t < T; ++t) {
      double* r = s.zin.row(t).data();
      std::copy(z.row(t).begin(), z.row(t).end(), r);
      fill_position_row(r + z.cols, t, T);
    }
    if (s.x.rows != T || s.x.cols != W) {
      s.x = Matrix(T, W);
      s.c = Matrix(T, W);
      s.o = Matrix(T, W);
    }
    dense_rows(s.zin, ps_.v("in.w"), ps_.v("in.b"), s.x);
    s.ss.assign(2 * W, 0.0);
    for (size_t b = 0; b < cfg_.dilations.size(); ++b) {
      std::string p = str_printf("blk%zu.", b);
      conv_rows(s.x, ps_.v(p + "conv.w"), ps_.v(p + "conv.b"), cfg_.taps, cfg_.dilations[b],
                s.c);
      std::fill(s.ss.begin(), s.ss.end(), 0.0);
      dense_vec(s.cond, ps_.v(p + "film.w"), ps_.v(p + "film.b"), s.ss);
      for (int t = 0; t < T; ++t) {
        double* cr = s.c.row(t).data();
        for (int o = 0; o < W; ++o) cr[o] = silu(cr[o] * (1.0 + s.ss[o]) + s.ss[W + o]);
      }
      dense_rows(s.c, ps_.v(p + "out.w"), ps_.v(p + "out.b"), s.o);
      for (size_t i = 0; i < s.x.data.size(); ++i) s.x.data[i] += s.o.data[i];
    }
    if (eps_out.rows != T || eps_out.cols != cfg_.state_dim)
      eps_out = Matrix(T, cfg_.state_dim);
    dense_rows(s.x, ps_.v("head.w"), ps_.v("head.b"), eps_out);
  }

  Matrix forward_tape(const Matrix& z, int tau, const std::vector<double>& ctx,
                      Tape& tape) const {
    using namespace netops;
    if (z.cols != cfg_.state_dim)
      throw ValidationError(str_printf("denoiser: state width %d, expected %d", z.cols,
                                       cfg_.state_dim));
    if (int(ctx.size()) != cfg_.ctx_dim)
      throw ValidationError(str_printf("denoiser: context size %zu, expected %d", ctx.size(),
                                       cfg_.ctx_dim));
    if (tau < 1) throw ValidationError("denoiser: step index must be >= 1");
    check_finite(z.data, "denoiser state input");
    check_finite(ctx, "denoiser context");

    const int T = z.rows, W = cfg_.width, E = cfg_.emb_dim, F = cfg_.tau_freqs;
    tape.z = augmented_input(z);
    tape.tau = tau;
    tape.ctx = ctx;

    tape.tau_emb.assign(2 * F, 0.0);
    for (int i = 0; i < F; ++i) {
      double omega = std::pow(10000.0, -double(i) / double(F));
      tape.tau_emb[2 * i] = std::sin(tau * omega);
      tape.tau_emb[2 * i + 1] = std::cos(tau * omega);
    }
    tape.tau_pre.assign(E, 0.0);
    dense_vec(tape.tau_emb, ps_.v("tau.w1"), ps_.v("tau.b1"), tape.tau_pre);
    tape.tau_act.resize(E);
    for (int i = 0; i < E; ++i) tape.tau_act[i] = silu(tape.tau_pre[i]);
    tape.cond_tau.assign(E, 0.0);
    dense_vec(tape.tau_act, ps_.v("tau.w2"), ps_.v("tau.b2"), tape.cond_tau);

    tape.ctx_pre.assign(E, 0.0);
    dense_vec(ctx, ps_.v("ctx.w1"), ps_.v("ctx.b1"), tape.ctx_pre);
    tape.ctx_act.resize(E);
    for (int i = 0; i < E; ++i) tape.ctx_act[i] = silu(tape.ctx_pre[i]);
    tape.cond_ctx.assign(E, 0.0);
    dense_vec(tape.ctx_act, ps_.v("ctx.w2"), ps_.v("ctx.b2"), tape.cond_ctx);

    tape.cond.resize(E);
    for (int i = 0; i < E; ++i) tape.cond[i] = tape.cond_tau[i] + tape.cond_ctx[i];

    tape.x0 = Matrix(T, W);
    dense_rows(z, ps_.v("in.w"), ps_.v("in.b"), tape.x0);

    tape.blocks.resize(cfg_.dilations.size());
    Matrix x = tape.x0;
    for (size_t b = 0; b < cfg_.dilations.size(); ++b) {
      std::string p = str_printf("blk%zu.", b);
      Tape::Block& tb = tape.blocks[b];
      tb.x_in = x;
      tb.conv_out = Matrix(T, W);
      conv_rows(x, ps_.v(p + "conv.w"), ps_.v(p + "conv.b"), cfg_.taps, cfg_.dilations[b],
                tb.conv_out);
      tb.scale_shift.assign(2 * W, 0.0);
      dense_vec(tape.cond, ps_.v(p + "film.w"), ps_.v(p + "film.b"), tb.scale_shift);
      tb.film_out = Matrix(T, W);
      for (int t = 0; t < T; ++t)
        for (int o = 0; o < W; ++o)
          tb.film_out.at(t, o) =
              tb.conv_out.at(t, o) * (1.0 + tb.scale_shift[o]) + tb.scale_shift[W + o];
      tb.act = Matrix(T, W);
      for (size_t i = 0; i < tb.act.data.size(); ++i) tb.act.data[i] = silu(tb.film_out.data[i]);
      tb.out = Matrix(T, W);
      dense_rows(tb.act, ps_.v(p + "out.w"), ps_.v(p + "out.b"), tb.out);
      for (size_t i = 0; i < x.data.size(); ++i) x.data[i] += tb.out.data[i];
    }
    tape.x_final = x;

    Matrix eps(T, cfg_.state_dim);
    dense_rows(x, ps_.v("head.w"), ps_.v("head.b"), eps);
    return eps;
  }

  // Accumulates parameter gradients for the tape's forward pass.
  void backward(const Matrix& dl_deps, const Tape& tape) {
    using namespace netops;
    const int T = tape.z.rows, W = cfg_.width, E = cfg_.emb_dim;
    if (dl_deps.rows != T || dl_deps.cols != cfg_.state_dim)
      throw InvariantError("denoiser backward: gradient shape mismatch");

    Matrix g(T, W);
    dense_rows_backward(tape.x_final, ps_.v("head.w"), dl_deps, ps_.g("head.w"),
                        ps_.g("head.b"), &g);

    std::vector<double> dcond(E, 0.0);
    for (int b = int(cfg_.dilations.size()) - 1; b >= 0; --b) {
      std::string p = str_printf("blk%d.", b);
      const Tape::Block& tb = tape.blocks[size_t(b)];

      Matrix da(T, W);
      dense_rows_backward(tb.act, ps_.v(p + "out.w"), g, ps_.g(p + "out.w"),
                          ps_.g(p + "out.b"), &da);

      Matrix df(T, W);
      for (size_t i = 0; i < df.data.size(); ++i)
        df.data[i] = da.data[i] * silu_grad(tb.film_out.data[i]);

      Matrix dc(T, W);
      std::vector<double> dss(2 * W, 0.0);
      for (int t = 0; t < T; ++t) {
        for (int o = 0; o < W; ++o) {
          const double d = df.at(t, o);
          dc.at(t, o) = d * (1.0 + tb.scale_shift[o]);
          dss[o] += d * tb.conv_out.at(t, o);
          dss[W + o] += d;
        }
      }
      dense_vec_backward(tape.cond, ps_.v(p + "film.w"), dss, ps_.g(p + "film.w"),
                         ps_.g(p + "film.b"), dcond);

      conv_rows_backward(tb.x_in, ps_.v(p + "conv.w"), dc, cfg_.taps, cfg_.dilations[size_t(b)],
                         ps_.g(p + "conv.w"), ps_.g(p + "conv.b"), g);
    }

    dense_rows_backward(tape.z, ps_.v("in.w"), g, ps_.g("in.w"), ps_.g("in.b"), nullptr);

    // conditioning fed every block; dcond now carries the sum
    std::vector<double> dtau_act(E, 0.0), dctx_act(E, 0.0);
    dense_vec_backward(tape.tau_act, ps_.v("tau.w2"), dcond, ps_.g("tau.w2"), ps_.g("tau.b2"),
                       dtau_act);
    dense_vec_backward(tape.ctx_act, ps_.v("ctx.w2"), dcond, ps_.g("ctx.w2"), ps_.g("ctx.b2"),
                       dctx_act);
    std::vector<double> dtau_pre(E), dctx_pre(E);
    for (int i = 0; i < E; ++i) {
      dtau_pre[i] = dtau_act[i] * silu_grad(tape.tau_pre[i]);
      dctx_pre[i] = dctx_act[i] * silu_grad(tape.ctx_pre[i]);
    }
    dense_vec_backward(tape.tau_emb, ps_.v("tau.w1"), dtau_pre, ps_.g("tau.w1"),
                       ps_.g("tau.b1"), {});
    dense_vec_backward(tape.ctx, ps_.v("ctx.w1"), dctx_pre, ps_.g("ctx.w1"), ps_.g("ctx.b1"),
                       {});
  }

 private:
  DenoiserConfig cfg_;
  ParamStore ps_;
};

// ===== Inverse-dynamics decoder =====
//
// Maps a four-row state window plus the context vector to a per-window
// control rate, squashed into (0, kLambdaMax).

struct DecoderConfig {
  int state_dim = kStateDim;
  int ctx_dim = 0;
  int hidden = 64;

  int in_dim() const { return 4 * state_dim + ctx_dim; }

  void validate() const {
    if (state_dim < 1 || ctx_dim < 1 || hidden < 1)
      throw ValidationError("DecoderConfig: dimensions must be positive");
  }

  nlohmann::json to_json() const {
    return {{"state_dim", state_dim}, {"ctx_dim", ctx_dim}, {"hidden", hidden}};
  }
  static DecoderConfig from_json(const nlohmann::json& j) {
    DecoderConfig c;
    c.state_dim = j.at("state_dim").get<int>();
    c.ctx_dim = j.at("ctx_dim").get<int>();
    c.hidden = j.at("hidden").get<int>();
    c.validate();
    return c;
  }
};

// Rows t-2..t+1 clamped to the matrix, flattened, context appended.
inline std::vector<double> decoder_window_input(const Matrix& states, int t,
                                                const std::vector<double>& ctx) {
  if (states.rows < 1) throw ValidationError("decoder_window_input: empty state matrix");
  if (t < 0 || t >= states.rows)
    throw ValidationError(str_printf("decoder_window_input: row %d outside [0, %d)", t,
                                     states.rows));
  std::vector<double> v;
  v.reserve(size_t(4) * states.cols + ctx.size());
  for (int off = -2; off <= 1; ++off) {
    int idx = std::clamp(t + off, 0, states.rows - 1);
    auto r = states.row(idx);
    v.insert(v.end(), r.begin(), r.end());
  }
  v.insert(v.end(), ctx.begin(), ctx.end());
  return v;
}

class DecoderNet {
 public:
  struct Tape {
    std::vector<double> x, h1_pre, h1, h2_pre, h2;
    double u = 0.0, sig = 0.0;
  };

  explicit DecoderNet(DecoderConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    const int in = cfg_.in_dim(), H = cfg_.hidden;
    ps_.add("w1", {in, H});
    ps_.add("b1", {H});
    ps_.add("w2", {H, H});
    ps_.add("b2", {H});
    ps_.add("w3", {H, 1});
    ps_.add("b3", {1});
  }

  const DecoderConfig& config() const { return cfg_; }
  ParamStore& params() { return ps_; }
  const ParamStore& params() const { return ps_; }

  void init(SeededRng& rng) {
    for (const TensorRef& r : ps_.tensors()) {
      auto sp = ps_.v(r.name);
      if (r.shape.size() == 1) {
        std::fill(sp.begin(), sp.end(), 0.0);
        continue;
      }
      double scale = std::sqrt(1.0 / double(r.shape.front()));
      for (double& x : sp) x = scale * rng.normal();
    }
  }

  double forward(const std::vector<double>& x) const {
    Tape tape;
    return forward_tape(x, tape);
  }

  double forward_tape(const std::vector<double>& x, Tape& tape) const {
    using namespace netops;
    if (int(x.size()) != cfg_.in_dim())
      throw ValidationError(str_printf("decoder: input size %zu, expected %d", x.size(),
                                       cfg_.in_dim()));
    check_finite(x, "decoder input");
    const int H = cfg_.hidden;
    tape.x = x;
    tape.h1_pre.assign(H, 0.0);
    dense_vec(x, ps_.v("w1"), ps_.v("b1"), tape.h1_pre);
    tape.h1.resize(H);
    for (int i = 0; i < H; ++i) tape.h1[i] = silu(tape.h1_pre[i]);
    tape.h2_pre.assign(H, 0.0);
    dense_vec(tape.h1, ps_.v("w2"), ps_.v("b2"), tape.h2_pre);
    tape.h2.resize(H);
    for (int i = 0; i < H; ++i) tape.h2[i] = silu(tape.h2_pre[i]);
    double u = ps_.v("b3")[0];
    auto w3 = ps_.v("w3");
    for (int i = 0; i < H; ++i) u += tape.h2[i] * w3[i];
    tape.u = u;
    tape.sig = netops::sigmoid(u);
    return kLambdaMax * tape.sig * (1.0 - 1e-3) + 1e-3;
  }

  void backward(double dl_dlambda, const Tape& tape) {
    using namespace netops;
    const int H = cfg_.hidden;
    double du = dl_dlambda * kLambdaMax * (1.0 - 1e-3) * tape.sig * (1.0 - tape.sig);
    std::vector<double> dh2(H);
    auto w3 = ps_.v("w3");
    auto gw3 = ps_.g("w3");
    for (int i = 0; i < H; ++i) {
      gw3[i] += du * tape.h2[i];
      dh2[i] = du * w3[i];
    }
    ps_.g("b3")[0] += du;
    std::vector<double> dh2_pre(H), dh1(H, 0.0);
    for (int i = 0; i < H; ++i) dh2_pre[i] = dh2[i] * silu_grad(tape.h2_pre[i]);
    dense_vec_backward(tape.h1, ps_.v("w2"), dh2_pre, ps_.g("w2"), ps_.g("b2"), dh1);
    std::vector<double> dh1_pre(H);
    for (int i = 0; i < H; ++i) dh1_pre[i] = dh1[i] * silu_grad(tape.h1_pre[i]);
    dense_vec_backward(tape.x, ps_.v("w1"), dh1_pre, ps_.g("w1"), ps_.g("b1"), {});
  }

 private:
  DecoderConfig cfg_;
  ParamStore ps_;
};

}  // namespace subsidy
