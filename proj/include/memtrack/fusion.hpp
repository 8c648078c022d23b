#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "memtrack/attention.hpp"
#include "memtrack/matrix.hpp"
#include "memtrack/memory_bank.hpp"
#include "memtrack/tensor.hpp"

namespace memtrack {

/// MACs of one fuse call, split by role. The dense-vs-compressed headline
/// ratio compares the cross term alone; proj and mlp do not depend on the
/// memory size except through the kv projections.
struct MacCounts {
  std::uint64_t cross = 0;      // frame-to-memory attention scores and sums
  std::uint64_t self_attn = 0;  // frame self-attention scores and sums
  std::uint64_t proj = 0;       // all q/k/v/output projections
  std::uint64_t mlp = 0;

  std::uint64_t total() const { return cross + self_attn + proj + mlp; }
  bool operator==(const MacCounts&) const = default;
};

template <typename T>
struct FusionBlock {
  AttnParams<T> self_attn;
  AttnParams<T> cross_attn;
  MlpParams<T> mlp;

  static FusionBlock seeded(int c, Rng& rng) {
    FusionBlock b;
    b.self_attn = AttnParams<T>::seeded(c, rng);
    b.cross_attn = AttnParams<T>::seeded(c, rng);
    b.mlp = MlpParams<T>::seeded(c, rng);
    return b;
  }
};

template <typename T>
struct FusionParams {
  std::vector<FusionBlock<T>> blocks;
  bool use_self = true;
  bool use_cross = true;

  int depth() const { return static_cast<int>(blocks.size()); }
  int channels() const { return blocks.empty() ? 0 : blocks[0].mlp.channels(); }

  static FusionParams seeded(int c, int depth, Rng& rng) {
    if (depth < 1) throw std::invalid_argument("FusionParams: depth must be at least 1");
    FusionParams p;
    for (int d = 0; d < depth; ++d) p.blocks.push_back(FusionBlock<T>::seeded(c, rng));
    return p;
  }
};

/// Condition the frame features on the memory bank. Each block runs
/// self-attention over the frame tokens, cross-attention into the stacked
/// bank tokens, then an MLP. An empty bank (or one whose selected token set
/// is empty) returns the input bit for bit.
template <typename T>
FeatureMap<T> fuse(const FeatureMap<T>& feat16, const MemoryBank<T>& bank,
                   const FusionParams<T>& p, MacCounts* mac = nullptr,
                   bool include_pointers = true) {
  if (p.blocks.empty()) throw std::invalid_argument("fuse: no fusion blocks");
  if (p.channels() != feat16.channels) {
    throw std::invalid_argument("fuse: block width " + std::to_string(p.channels()) +
                                " does not match map channels " +
                                std::to_string(feat16.channels));
  }
  if (bank.empty() || bank.token_count(include_pointers) == 0) return feat16;

  const Matrix<T> kv = bank.concat(include_pointers);
  Matrix<T> q = to_tokens(feat16).tokens;
  add_inplace(q, sinusoidal_pe<T>(feat16.height, feat16.width, feat16.channels));

  MacRecorder rec_self, rec_cross, rec_mlp;
  for (const auto& block : p.blocks) {
    if (p.use_self) q = self_attention(q, block.self_attn, &rec_self);
    if (p.use_cross) q = cross_attention(q, kv, block.cross_attn, &rec_cross);
    q = mlp_forward(q, block.mlp, &rec_mlp);
  }
  if (mac) {
    mac->cross += rec_cross.attn;
    mac->self_attn += rec_self.attn;
    mac->proj += rec_self.proj + rec_cross.proj;
    mac->mlp += rec_mlp.mlp;
  }
  return from_tokens(TokenSet<T>{std::move(q), Grid{feat16.height, feat16.width}}, feat16.height,
                     feat16.width);
}

/// Closed-form MAC model for fuse over a steady-state bank of t_frames
/// entries holding tokens_per_frame tokens each plus `pointers` pointer
/// tokens. A real fuse call over such a bank must count exactly this.
inline MacCounts fuse_flops(int t_frames, int c, int h, int w, std::int64_t tokens_per_frame,
                            int pointers, int depth, bool use_self = true, bool use_cross = true) {
  const std::uint64_t nq = static_cast<std::uint64_t>(h) * w;
  const std::uint64_t nkv =
      static_cast<std::uint64_t>(t_frames) * static_cast<std::uint64_t>(tokens_per_frame) +
      static_cast<std::uint64_t>(pointers);
  const std::uint64_t cc = static_cast<std::uint64_t>(c) * c;
  MacCounts m;
  for (int d = 0; d < depth; ++d) {
    if (use_self) {
      m.self_attn += 2ull * nq * nq * c;
      m.proj += 4ull * nq * cc;
    }
    if (use_cross) {
      m.cross += 2ull * nq * nkv * c;
      m.proj += (2ull * nq + 2ull * nkv) * cc;
    }
    m.mlp += 8ull * nq * cc;
  }
  return m;
}

/// Rough non-MAC flop estimate for one fuse call (softmax exp/div and
/// layer-norm passes), reported separately and never folded into MAC ratios.
inline std::uint64_t fuse_softmax_flops(int t_frames, int c, int h, int w,
                                        std::int64_t tokens_per_frame, int pointers, int depth,
                                        bool use_self = true, bool use_cross = true) {
  const std::uint64_t nq = static_cast<std::uint64_t>(h) * w;
  const std::uint64_t nkv =
      static_cast<std::uint64_t>(t_frames) * static_cast<std::uint64_t>(tokens_per_frame) +
      static_cast<std::uint64_t>(pointers);
  std::uint64_t f = 0;
  for (int d = 0; d < depth; ++d) {
    if (use_self) f += 4ull * nq * nq + 6ull * nq * c;
    if (use_cross) f += 4ull * nq * nkv + 3ull * (nq + nkv) * c;
    f += 3ull * nq * c;  // mlp layer norm
  }
  return f;
}

}  // namespace memtrack
