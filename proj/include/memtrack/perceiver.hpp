#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "memtrack/attention.hpp"
#include "memtrack/matrix.hpp"
#include "memtrack/tensor.hpp"

namespace memtrack {

template <typename T>
struct PerceiverBlock {
  AttnParams<T> attn;
  MlpParams<T> mlp;

  static PerceiverBlock seeded(int c, Rng& rng) {
    PerceiverBlock b;
    b.attn = AttnParams<T>::seeded(c, rng);
    b.mlp = MlpParams<T>::seeded(c, rng);
    return b;
  }
};

/// How the spatial summary tokens carry their window-grid position.
enum class SpatialOutputPe {
  kRope2d,              // rotate channel pairs by the window coordinates
  kAdditiveSinusoidal,  // add a fixed sinusoidal code instead
  kNone,                // ablation: leave summaries position-free
};

/// Learned-query compressor state. Two readout paths share it: a global path
/// whose ng latents cross-attend to the whole map, and a spatial path with
/// one latent per window. Cross/self blocks are shared between the paths;
/// populate the spatial_* vectors to unshare them.
template <typename T>
struct PerceiverParams {
  Matrix<T> global_latents;   // ng x c
  Matrix<T> spatial_latents;  // nl x c, one query per window
  Grid window;                // window shape, must tile the input map
  std::vector<PerceiverBlock<T>> cross_blocks;  // one per depth step
  std::vector<PerceiverBlock<T>> self_blocks;   // one per depth step
  std::vector<PerceiverBlock<T>> spatial_cross_blocks;  // optional unshared weights
  std::vector<PerceiverBlock<T>> spatial_self_blocks;
  bool use_self_attention = true;
  bool add_positional = true;
  SpatialOutputPe spatial_pe = SpatialOutputPe::kRope2d;

  int channels() const {
    return global_latents.cols != 0 ? global_latents.cols : spatial_latents.cols;
  }
  int ng() const { return global_latents.rows; }
  int nl() const { return spatial_latents.rows; }
  int depth() const { return static_cast<int>(cross_blocks.size()); }

  static PerceiverParams seeded(int c, int ng, int nl, Grid window, int depth, Rng& rng) {
    PerceiverParams p;
    p.global_latents = rng.template matrix<T>(ng, c, 1.0);
    p.spatial_latents = rng.template matrix<T>(nl, c, 1.0);
    p.window = window;
    for (int d = 0; d < depth; ++d) p.cross_blocks.push_back(PerceiverBlock<T>::seeded(c, rng));
    for (int d = 0; d < depth; ++d) p.self_blocks.push_back(PerceiverBlock<T>::seeded(c, rng));
    return p;
  }

  void validate() const {
    if (global_latents.rows < 0 || spatial_latents.rows < 0 ||
        global_latents.rows + spatial_latents.rows < 1) {
      throw std::invalid_argument("PerceiverParams: need at least one latent across both paths");
    }
    if (spatial_latents.rows > 0 && spatial_latents.cols != channels()) {
      throw std::invalid_argument("PerceiverParams: latent channel mismatch, global " +
                                  global_latents.shape() + " vs spatial " +
                                  spatial_latents.shape());
    }
    if (spatial_latents.rows > 0 && (window.h < 1 || window.w < 1)) {
      throw std::invalid_argument("PerceiverParams: window must be at least 1x1");
    }
    if (cross_blocks.empty()) {
      throw std::invalid_argument("PerceiverParams: depth must be at least 1");
    }
    if (use_self_attention && self_blocks.size() != cross_blocks.size()) {
      throw std::invalid_argument("PerceiverParams: self/cross depth mismatch");
    }
    if (!spatial_cross_blocks.empty() && spatial_cross_blocks.size() != cross_blocks.size()) {
      throw std::invalid_argument("PerceiverParams: unshared spatial cross depth mismatch");
    }
    if (use_self_attention && !spatial_self_blocks.empty() &&
        spatial_self_blocks.size() != self_blocks.size()) {
      throw std::invalid_argument("PerceiverParams: unshared spatial self depth mismatch");
    }
  }
};

/// Fixed-size summary of one frame's memory features: ng map-wide tokens plus
/// nl window tokens that keep a coarse grid.
template <typename T>
struct CompressedMemory {
  Matrix<T> global;     // ng x c
  TokenSet<T> spatial;  // nl x c with the window-grid attached
  int source_h = 0;
  int source_w = 0;

  int token_count() const { return global.rows + spatial.n(); }

  bool operator==(const CompressedMemory&) const = default;

  /// Global tokens first, then spatial tokens in window-grid row-major order.
  Matrix<T> concat() const {
    Matrix<T> out(token_count(), global.cols);
    std::copy(global.data.begin(), global.data.end(), out.data.begin());
    std::copy(spatial.tokens.data.begin(), spatial.tokens.data.end(),
              out.data.begin() + global.data.size());
    return out;
  }
};

namespace detail {

template <typename T>
void check_map_channels(const FeatureMap<T>& m, const PerceiverParams<T>& p, const char* what) {
  if (m.channels != p.channels()) {
    throw std::invalid_argument(std::string(what) + ": map channels " +
                                std::to_string(m.channels) + " do not match latents " +
                                std::to_string(p.channels()));
  }
}

}  // namespace detail

/// Map-wide readout: ng latents cross-attend to every position of the map
/// (with an additive sinusoidal code when add_positional is set), then
/// self-attend, repeated depth times. first_ca, when given, receives the
/// attention internals of the first cross step.
template <typename T>
TokenSet<T> global_perceive(const FeatureMap<T>& m, const PerceiverParams<T>& p,
                            MacRecorder* mac = nullptr, AttnDebug<T>* first_ca = nullptr) {
  p.validate();
  detail::check_map_channels(m, p, "global_perceive");
  if (p.ng() == 0) return TokenSet<T>{Matrix<T>(0, p.channels()), std::nullopt};
  Matrix<T> kv = to_tokens(m).tokens;
  if (p.add_positional) add_inplace(kv, sinusoidal_pe<T>(m.height, m.width, m.channels));

  Matrix<T> z = p.global_latents;
  for (int d = 0; d < p.depth(); ++d) {
    const auto& cb = p.cross_blocks[d];
    z = cross_attention(z, kv, cb.attn, mac, d == 0 ? first_ca : nullptr);
    z = mlp_forward(z, cb.mlp, mac);
    if (p.use_self_attention) {
      const auto& sb = p.self_blocks[d];
      z = self_attention(z, sb.attn, mac);
      z = mlp_forward(z, sb.mlp, mac);
    }
  }
  return TokenSet<T>{std::move(z), std::nullopt};
}

/// Window readout: the map is split into nl windows and latent i cross-attends
/// only inside window i, producing one summary token per window. Summaries
/// then pass through a joint MLP and self-attention, repeated depth times, and
/// finally pick up their window-grid position (rotary by default).
/// first_ca, when given, receives one AttnDebug per window for the first
/// cross step; each weight row spans only that window's tokens.
template <typename T>
TokenSet<T> spatial_perceive(const FeatureMap<T>& m, const PerceiverParams<T>& p,
                             MacRecorder* mac = nullptr,
                             std::vector<AttnDebug<T>>* first_ca = nullptr) {
  p.validate();
  detail::check_map_channels(m, p, "spatial_perceive");
  if (p.nl() == 0) return TokenSet<T>{Matrix<T>(0, p.channels()), std::nullopt};
  FeatureMap<T> pm = m;
  if (p.add_positional) {
    auto toks = to_tokens(pm);
    add_inplace(toks.tokens, sinusoidal_pe<T>(m.height, m.width, m.channels));
    pm = from_tokens(toks, m.height, m.width);
  }
  const auto windows = window_partition(pm, p.window.h, p.window.w);
  if (windows.size() != static_cast<std::size_t>(p.nl())) {
    throw std::invalid_argument("spatial_perceive: " + std::to_string(windows.size()) +
                                " windows but " + std::to_string(p.nl()) + " spatial latents");
  }
  const int c = p.channels();
  const Grid out_grid{m.height / p.window.h, m.width / p.window.w};
  if (first_ca) first_ca->assign(windows.size(), AttnDebug<T>{});

  Matrix<T> z = p.spatial_latents;
  for (int d = 0; d < p.depth(); ++d) {
    const auto& cb = p.spatial_cross_blocks.empty() ? p.cross_blocks[d] : p.spatial_cross_blocks[d];
    Matrix<T> next(p.nl(), c);
    for (int i = 0; i < p.nl(); ++i) {
      Matrix<T> q(1, c);
      std::copy(z.row_ptr(i), z.row_ptr(i) + c, q.data.begin());
      AttnDebug<T>* dbg = (first_ca && d == 0) ? &(*first_ca)[i] : nullptr;
      const Matrix<T> upd = cross_attention(q, windows[i].tokens, cb.attn, mac, dbg);
      std::copy(upd.data.begin(), upd.data.end(), next.row_ptr(i));
    }
    z = mlp_forward(next, cb.mlp, mac);
    if (p.use_self_attention) {
      const auto& sb = p.spatial_self_blocks.empty() ? p.self_blocks[d] : p.spatial_self_blocks[d];
      z = self_attention(z, sb.attn, mac);
      z = mlp_forward(z, sb.mlp, mac);
    }
  }
  if (p.spatial_pe == SpatialOutputPe::kRope2d) {
    z = rope_2d(z, out_grid);
  } else if (p.spatial_pe == SpatialOutputPe::kAdditiveSinusoidal) {
    add_inplace(z, sinusoidal_pe<T>(out_grid.h, out_grid.w, c));
  }
  return TokenSet<T>{std::move(z), out_grid};
}

/// Run both readout paths and bundle the fixed-size frame summary.
template <typename T>
CompressedMemory<T> compress(const FeatureMap<T>& m, const PerceiverParams<T>& p,
                             MacRecorder* mac = nullptr) {
  CompressedMemory<T> out;
  out.global = global_perceive(m, p, mac).tokens;
  out.spatial = spatial_perceive(m, p, mac);
  out.source_h = m.height;
  out.source_w = m.width;
  return out;
}

/// Closed-form MAC model for one compress call; the counted totals from a
/// real call must match exactly. Self-attention terms assume
/// use_self_attention and shared or unshared blocks alike.
inline MacRecorder perceiver_flops(int c, int h, int w, int ng, int nl, Grid window, int depth,
                                   bool use_self_attention = true) {
  const std::uint64_t hw = static_cast<std::uint64_t>(h) * w;
  const std::uint64_t cc = static_cast<std::uint64_t>(c) * c;
  const std::uint64_t per_window = static_cast<std::uint64_t>(window.h) * window.w;
  MacRecorder r;
  for (int d = 0; d < depth; ++d) {
    // global path: one wide cross step, then self attention
    if (ng > 0) {
      r.attn += 2ull * ng * hw * c;
      r.proj += (2ull * ng + 2ull * hw) * cc;
      r.mlp += 8ull * ng * cc;
      if (use_self_attention) {
        r.attn += 2ull * ng * ng * c;
        r.proj += 4ull * ng * cc;
        r.mlp += 8ull * ng * cc;
      }
    }
    // spatial path: nl single-query window reads, then joint self attention
    if (nl > 0) {
      r.attn += 2ull * nl * per_window * c;
      r.proj += (2ull * nl + 2ull * nl * per_window) * cc;
      r.mlp += 8ull * nl * cc;
      if (use_self_attention) {
        r.attn += 2ull * nl * nl * c;
        r.proj += 4ull * nl * cc;
        r.mlp += 8ull * nl * cc;
      }
    }
  }
  return r;
}

}  // namespace memtrack
