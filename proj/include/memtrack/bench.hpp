#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "memtrack/attention.hpp"
#include "memtrack/config.hpp"
#include "memtrack/fusion.hpp"
#include "memtrack/matrix.hpp"
#include "memtrack/memory_bank.hpp"
#include "memtrack/perceiver.hpp"
#include "memtrack/tensor.hpp"

namespace memtrack {

inline double median_of(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median_of: empty sample set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n % 2 == 1) return v[n / 2];
  return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Per-rep wall times with robust summary statistics. Warmup reps are
/// excluded before construction.
struct BenchResult {
  std::vector<double> wall_ns;
  double median_ns = 0.0;
  double mad_ns = 0.0;

  int reps() const { return static_cast<int>(wall_ns.size()); }
};

inline BenchResult summarize(std::vector<double> samples) {
  BenchResult r;
  r.median_ns = median_of(samples);
  std::vector<double> dev(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) dev[i] = std::abs(samples[i] - r.median_ns);
  r.mad_ns = median_of(std::move(dev));
  r.wall_ns = std::move(samples);
  return r;
}

/// Closed-form MAC totals for one fuse call in each memory mode at a
/// steady-state bank, with the headline cross-attention ratio in lowest
/// terms. Softmax/norm flops and the per-frame compression cost are carried
/// separately and never enter the ratio.
struct ComplexityReport {
  EngineConfig cfg;
  MacCounts dense;
  MacCounts compressed;
  std::uint64_t perceiver_mac = 0;
  std::uint64_t softmax_flops_dense = 0;
  std::uint64_t softmax_flops_compressed = 0;
  std::uint64_t ratio_num = 0;
  std::uint64_t ratio_den = 0;

  std::uint64_t cross_mac_dense() const { return dense.cross; }
  std::uint64_t cross_mac_compressed() const { return compressed.cross; }
};

inline ComplexityReport complexity_report(const EngineConfig& cfg) {
  cfg.validate();
  const int ptr = cfg.use_pointers ? cfg.pointer_capacity : 0;
  const std::int64_t hw = static_cast<std::int64_t>(cfg.h) * cfg.w;
  ComplexityReport r;
  r.cfg = cfg;
  r.dense = fuse_flops(cfg.t, cfg.c, cfg.h, cfg.w, hw, ptr, cfg.fusion_depth);
  r.compressed = fuse_flops(cfg.t, cfg.c, cfg.h, cfg.w, cfg.ng + cfg.nl, ptr, cfg.fusion_depth);
  r.softmax_flops_dense = fuse_softmax_flops(cfg.t, cfg.c, cfg.h, cfg.w, hw, ptr, cfg.fusion_depth);
  r.softmax_flops_compressed =
      fuse_softmax_flops(cfg.t, cfg.c, cfg.h, cfg.w, cfg.ng + cfg.nl, ptr, cfg.fusion_depth);
  r.perceiver_mac =
      perceiver_flops(cfg.c, cfg.h, cfg.w, cfg.ng, cfg.nl, cfg.window(), cfg.perceiver_depth)
          .total();
  const std::uint64_t g = std::gcd(r.dense.cross, r.compressed.cross);
  r.ratio_num = r.dense.cross / g;
  r.ratio_den = r.compressed.cross / g;
  return r;
}

/// Token-budget rule behind the compression shape: (H*W)/(Ng+Nl) should sit
/// near T so frame self-attention and bank cross-attention cost about the
/// same.
struct DesignRuleReport {
  double hw_over_latents = 0.0;
  int t = 0;
  std::uint64_t self_mac = 0;   // compressed mode, steady state
  std::uint64_t cross_mac = 0;
  double self_over_cross = 0.0;
  double imbalance = 0.0;  // |self - cross| / max(self, cross)
};

inline DesignRuleReport verify_design_rule(const EngineConfig& cfg) {
  cfg.validate();
  const int ptr = cfg.use_pointers ? cfg.pointer_capacity : 0;
  const MacCounts m =
      fuse_flops(cfg.t, cfg.c, cfg.h, cfg.w, cfg.ng + cfg.nl, ptr, cfg.fusion_depth);
  DesignRuleReport r;
  r.hw_over_latents = static_cast<double>(cfg.h) * cfg.w / (cfg.ng + cfg.nl);
  r.t = cfg.t;
  r.self_mac = m.self_attn;
  r.cross_mac = m.cross;
  r.self_over_cross = static_cast<double>(m.self_attn) / static_cast<double>(m.cross);
  const double mx = static_cast<double>(std::max(m.self_attn, m.cross));
  r.imbalance = std::abs(static_cast<double>(m.self_attn) - static_cast<double>(m.cross)) / mx;
  return r;
}

enum class SweepAxis { kFrames, kLatents, kDepth, kMode };

inline std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::kFrames: return "frames";
    case SweepAxis::kLatents: return "latents";
    case SweepAxis::kDepth: return "depth";
    case SweepAxis::kMode: return "mode";
  }
  return "?";
}

inline SweepAxis parse_axis(const std::string& s) {
  if (s == "frames") return SweepAxis::kFrames;
  if (s == "latents") return SweepAxis::kLatents;
  if (s == "depth") return SweepAxis::kDepth;
  if (s == "mode") return SweepAxis::kMode;
  throw ConfigError("axis must be one of frames|latents|depth|mode, got '" + s + "'");
}

/// Instantiate the base config at one axis value. The latents axis takes the
/// combined budget Ng+Nl and splits it evenly; mode takes 0 (dense) or 1
/// (compressed).
inline EngineConfig apply_axis(EngineConfig cfg, SweepAxis axis, std::int64_t value) {
  switch (axis) {
    case SweepAxis::kFrames:
      if (value < 1) throw ConfigError("frames axis value must be >= 1");
      cfg.t = static_cast<int>(value);
      break;
    case SweepAxis::kLatents:
      if (value < 2 || value % 2 != 0) {
        throw ConfigError("latents axis value is the even total Ng+Nl, got " +
                          std::to_string(value));
      }
      cfg.ng = static_cast<int>(value / 2);
      cfg.nl = static_cast<int>(value / 2);
      break;
    case SweepAxis::kDepth:
      if (value < 1) throw ConfigError("depth axis value must be >= 1");
      cfg.fusion_depth = static_cast<int>(value);
      break;
    case SweepAxis::kMode:
      if (value == 0) cfg.mode = MemoryMode::kDense;
      else if (value == 1) cfg.mode = MemoryMode::kCompressed;
      else throw ConfigError("mode axis value must be 0 (dense) or 1 (compressed)");
      break;
  }
  cfg.validate();
  return cfg;
}

inline std::vector<std::int64_t> default_axis_values(SweepAxis axis, const EngineConfig& base) {
  std::vector<std::int64_t> v;
  switch (axis) {
    case SweepAxis::kFrames:
      v = {1, 2, base.t, 2 * static_cast<std::int64_t>(base.t)};
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
      break;
    case SweepAxis::kLatents:
      for (const int side : {2, 4, 8, 16}) {
        if (base.h % side == 0 && base.w % side == 0 && 2 * side * side <= base.h * base.w) {
          v.push_back(2ll * side * side);
        }
      }
      break;
    case SweepAxis::kDepth:
      v = {1, 2, 4};
      break;
    case SweepAxis::kMode:
      v = {0, 1};
      break;
  }
  return v;
}

template <typename T>
FeatureMap<T> random_map(int c, int h, int w, Rng& rng) {
  return from_tokens(TokenSet<T>{rng.template matrix<T>(h * w, c, 1.0), Grid{h, w}}, h, w);
}

/// Bank at steady state: t frames of the requested kind plus a full pointer
/// queue. Contents are random tokens of the correct shapes; timing and MAC
/// counting do not depend on values.
template <typename T>
MemoryBank<T> synthetic_bank(const EngineConfig& cfg, MemoryMode mode, Rng& rng) {
  MemoryBank<T> bank(cfg.t, cfg.pointer_capacity);
  for (int f = 0; f < cfg.t; ++f) {
    FrameMemory<T> fm;
    fm.frame_index = f;
    if (mode == MemoryMode::kDense) {
      fm.payload = random_map<T>(cfg.c, cfg.h, cfg.w, rng);
    } else {
      CompressedMemory<T> cm;
      cm.global = rng.template matrix<T>(cfg.ng, cfg.c, 1.0);
      cm.spatial = TokenSet<T>{rng.template matrix<T>(cfg.nl, cfg.c, 1.0),
                               cfg.nl > 0 ? std::optional<Grid>(cfg.window_grid()) : std::nullopt};
      cm.source_h = cfg.h;
      cm.source_w = cfg.w;
      fm.payload = std::move(cm);
    }
    bank.push_frame(std::move(fm));
  }
  for (int i = 0; i < cfg.pointer_capacity; ++i) {
    bank.push_pointer(ObjectPointer<T>{rng.template vector<T>(cfg.c, 1.0), i});
  }
  return bank;
}

/// Median/MAD timing of the full fuse step at one config and mode.
/// Single-threaded by construction.
template <typename T>
BenchResult time_fuse(const EngineConfig& cfg, MemoryMode mode, int reps, int warmup) {
  if (reps < 10) throw std::invalid_argument("time_fuse: need at least 10 reps");
  if (warmup < 3) throw std::invalid_argument("time_fuse: need at least 3 warmup reps");
  Rng rng(cfg.seed);
  const MemoryBank<T> bank = synthetic_bank<T>(cfg, mode, rng);
  const FusionParams<T> fp = FusionParams<T>::seeded(cfg.c, cfg.fusion_depth, rng);
  const FeatureMap<T> q = random_map<T>(cfg.c, cfg.h, cfg.w, rng);
  volatile T sink = T(0);
  for (int i = 0; i < warmup; ++i) sink = sink + fuse(q, bank, fp, nullptr, cfg.use_pointers).data[0];
  std::vector<double> samples;
  samples.reserve(reps);
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const FeatureMap<T> out = fuse(q, bank, fp, nullptr, cfg.use_pointers);
    const auto t1 = std::chrono::steady_clock::now();
    sink = sink + out.data[0];
    samples.push_back(
        static_cast<double>(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count()));
  }
  return summarize(std::move(samples));
}

/// Median/MAD timing of a single residual cross-attention call with nq query
/// tokens against nkv memory tokens.
template <typename T>
BenchResult time_cross_attention(int nq, int nkv, int c, int reps, int warmup,
                                 std::uint64_t seed) {
  if (reps < 10) throw std::invalid_argument("time_cross_attention: need at least 10 reps");
  if (warmup < 3) throw std::invalid_argument("time_cross_attention: need at least 3 warmup reps");
  Rng rng(seed);
  const AttnParams<T> p = AttnParams<T>::seeded(c, rng);
  const Matrix<T> q = rng.template matrix<T>(nq, c, 1.0);
  const Matrix<T> kv = rng.template matrix<T>(nkv, c, 1.0);
  volatile T sink = T(0);
  for (int i = 0; i < warmup; ++i) sink = sink + cross_attention(q, kv, p).data[0];
  std::vector<double> samples;
  samples.reserve(reps);
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const Matrix<T> out = cross_attention(q, kv, p);
    const auto t1 = std::chrono::steady_clock::now();
    sink = sink + out.data[0];
    samples.push_back(
        static_cast<double>(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count()));
  }
  return summarize(std::move(samples));
}

struct SweepOptions {
  SweepAxis axis = SweepAxis::kFrames;
  std::vector<std::int64_t> values;  // empty selects per-axis defaults
  int reps = 20;
  int warmup = 3;
  bool timed = true;  // false: MAC model and counted execution only
};

struct SweepRow {
  SweepAxis axis = SweepAxis::kFrames;
  std::int64_t value = 0;
  MemoryMode mode = MemoryMode::kCompressed;
  EngineConfig cfg;
  MacCounts mac;  // counted at execution; must equal the closed-form model
  std::uint64_t ratio_num = 0;
  std::uint64_t ratio_den = 0;
  BenchResult timing;
};

namespace detail {

template <typename T>
SweepRow sweep_row(const EngineConfig& cfg, SweepAxis axis, std::int64_t value, MemoryMode mode,
                   const SweepOptions& opt) {
  SweepRow row;
  row.axis = axis;
  row.value = value;
  row.mode = mode;
  row.cfg = cfg;

  Rng rng(cfg.seed);
  const MemoryBank<T> bank = synthetic_bank<T>(cfg, mode, rng);
  const FusionParams<T> fp = FusionParams<T>::seeded(cfg.c, cfg.fusion_depth, rng);
  const FeatureMap<T> q = random_map<T>(cfg.c, cfg.h, cfg.w, rng);
  MacCounts counted;
  const FeatureMap<T> out = fuse(q, bank, fp, &counted, cfg.use_pointers);
  if (out.height != cfg.h || out.width != cfg.w) {
    throw std::logic_error("sweep: fuse changed the map shape");
  }
  const std::int64_t tokens_per_frame =
      mode == MemoryMode::kDense ? static_cast<std::int64_t>(cfg.h) * cfg.w : cfg.ng + cfg.nl;
  const int ptr = cfg.use_pointers ? cfg.pointer_capacity : 0;
  const MacCounts model =
      fuse_flops(cfg.t, cfg.c, cfg.h, cfg.w, tokens_per_frame, ptr, cfg.fusion_depth);
  if (!(counted == model)) {
    throw std::logic_error("sweep: counted MACs diverge from the closed-form model at " +
                           to_string(axis) + "=" + std::to_string(value));
  }
  row.mac = counted;

  const ComplexityReport rep = complexity_report(cfg);
  row.ratio_num = rep.ratio_num;
  row.ratio_den = rep.ratio_den;

  if (opt.timed) row.timing = time_fuse<T>(cfg, mode, opt.reps, opt.warmup);
  return row;
}

}  // namespace detail

/// One row per axis value, carried out in the config's memory mode. The mode
/// axis overrides the mode per value; the model ratio columns always compare
/// dense against compressed regardless of the row's own mode.
template <typename T>
std::vector<SweepRow> run_sweep(const EngineConfig& base, const SweepOptions& opt) {
  base.validate();
  const std::vector<std::int64_t> values =
      opt.values.empty() ? default_axis_values(opt.axis, base) : opt.values;
  std::vector<SweepRow> rows;
  for (const std::int64_t v : values) {
    const EngineConfig cfg = apply_axis(base, opt.axis, v);
    rows.push_back(detail::sweep_row<T>(cfg, opt.axis, v, cfg.mode, opt));
  }
  return rows;
}

inline constexpr const char* kSweepCsvHeader =
    "axis,value,mode,T,C,H,W,Ng,Nl,depth,cross_mac,self_mac,proj_mac,mlp_mac,ratio_num,"
    "ratio_den,median_ns,mad_ns,reps";

inline void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << kSweepCsvHeader << "\n";
  for (const auto& r : rows) {
    out << to_string(r.axis) << ',' << r.value << ',' << to_string(r.mode) << ',' << r.cfg.t << ','
        << r.cfg.c << ',' << r.cfg.h << ',' << r.cfg.w << ',' << r.cfg.ng << ',' << r.cfg.nl << ','
        << r.cfg.fusion_depth << ',' << r.mac.cross << ',' << r.mac.self_attn << ',' << r.mac.proj
        << ',' << r.mac.mlp << ',' << r.ratio_num << ',' << r.ratio_den << ','
        << static_cast<std::uint64_t>(r.timing.median_ns) << ','
        << static_cast<std::uint64_t>(r.timing.mad_ns) << ',' << r.timing.reps() << "\n";
  }
}

}  // namespace memtrack
