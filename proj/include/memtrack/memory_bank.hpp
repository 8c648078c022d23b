#pragma once

#include <cstdint>
#include <deque>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "memtrack/matrix.hpp"
#include "memtrack/perceiver.hpp"
#include "memtrack/tensor.hpp"

namespace memtrack {

/// One remembered frame: either the full feature map or its compressed
/// summary, tagged with the frame it came from.
template <typename T>
struct FrameMemory {
  std::variant<FeatureMap<T>, CompressedMemory<T>> payload;
  std::int64_t frame_index = 0;

  bool compressed() const { return std::holds_alternative<CompressedMemory<T>>(payload); }

  int token_count() const {
    if (const auto* dense = std::get_if<FeatureMap<T>>(&payload)) {
      return dense->height * dense->width;
    }
    return std::get<CompressedMemory<T>>(payload).token_count();
  }

  int channels() const {
    if (const auto* dense = std::get_if<FeatureMap<T>>(&payload)) return dense->channels;
    const auto& cm = std::get<CompressedMemory<T>>(payload);
    return cm.global.cols != 0 ? cm.global.cols : cm.spatial.channels();
  }
};

/// Single-token digest of the tracked object at one frame.
template <typename T>
struct ObjectPointer {
  std::vector<T> vec;  // length c
  std::int64_t frame_index = 0;
};

/// Fixed-capacity FIFO store of frame memories plus object pointers.
/// Both queues evict their oldest entry when full and require strictly
/// increasing frame indices within each queue.
template <typename T>
class MemoryBank {
 public:
  MemoryBank(int frame_capacity, int pointer_capacity)
      : frame_capacity_(frame_capacity), pointer_capacity_(pointer_capacity) {
    if (frame_capacity < 1) {
      throw std::invalid_argument("MemoryBank: frame capacity must be at least 1, got " +
                                  std::to_string(frame_capacity));
    }
    if (pointer_capacity < 0) {
      throw std::invalid_argument("MemoryBank: pointer capacity must be non-negative, got " +
                                  std::to_string(pointer_capacity));
    }
  }

  void push_frame(FrameMemory<T> m) {
    if (!frames_.empty() && m.frame_index <= frames_.back().frame_index) {
      throw std::invalid_argument("MemoryBank: frame index " + std::to_string(m.frame_index) +
                                  " not after " + std::to_string(frames_.back().frame_index));
    }
    check_channels(m.channels());
    if (static_cast<int>(frames_.size()) == frame_capacity_) frames_.pop_front();
    frames_.push_back(std::move(m));
  }

  void push_pointer(ObjectPointer<T> p) {
    if (pointer_capacity_ == 0) return;
    if (!pointers_.empty() && p.frame_index <= pointers_.back().frame_index) {
      throw std::invalid_argument("MemoryBank: pointer index " + std::to_string(p.frame_index) +
                                  " not after " + std::to_string(pointers_.back().frame_index));
    }
    check_channels(static_cast<int>(p.vec.size()));
    if (static_cast<int>(pointers_.size()) == pointer_capacity_) pointers_.pop_front();
    pointers_.push_back(std::move(p));
  }

  /// Store one processed frame: its memory payload and its object pointer.
  void push(FrameMemory<T> m, ObjectPointer<T> p) {
    push_frame(std::move(m));
    push_pointer(std::move(p));
  }

  bool empty() const { return frames_.empty() && pointers_.empty(); }
  int frame_count() const { return static_cast<int>(frames_.size()); }
  int pointer_count() const { return static_cast<int>(pointers_.size()); }
  int frame_capacity() const { return frame_capacity_; }
  int pointer_capacity() const { return pointer_capacity_; }
  int channels() const { return channels_; }

  const std::deque<FrameMemory<T>>& frames() const { return frames_; }
  const std::deque<ObjectPointer<T>>& pointers() const { return pointers_; }

  std::int64_t token_count(bool include_pointers = true) const {
    std::int64_t n = 0;
    for (const auto& f : frames_) n += f.token_count();
    if (include_pointers) n += static_cast<std::int64_t>(pointers_.size());
    return n;
  }

  /// Stack every stored token into one matrix: frames oldest to newest (dense
  /// maps flatten row-major, summaries put global tokens before spatial),
  /// then pointers oldest to newest.
  Matrix<T> concat(bool include_pointers = true) const {
    if (empty()) throw std::invalid_argument("MemoryBank: concat on empty bank");
    const std::int64_t n = token_count(include_pointers);
    if (n == 0) throw std::invalid_argument("MemoryBank: no tokens selected");
    Matrix<T> out(static_cast<int>(n), channels_);
    T* dst = out.data.data();
    for (const auto& f : frames_) {
      if (const auto* dense = std::get_if<FeatureMap<T>>(&f.payload)) {
        dst = std::copy(dense->data.begin(), dense->data.end(), dst);
      } else {
        const auto& cm = std::get<CompressedMemory<T>>(f.payload);
        dst = std::copy(cm.global.data.begin(), cm.global.data.end(), dst);
        dst = std::copy(cm.spatial.tokens.data.begin(), cm.spatial.tokens.data.end(), dst);
      }
    }
    if (include_pointers) {
      for (const auto& p : pointers_) dst = std::copy(p.vec.begin(), p.vec.end(), dst);
    }
    return out;
  }

 private:
  void check_channels(int c) {
    if (c < 1) throw std::invalid_argument("MemoryBank: entry has no channels");
    if (channels_ == 0) {
      channels_ = c;
    } else if (c != channels_) {
      throw std::invalid_argument("MemoryBank: channel mismatch, bank holds " +
                                  std::to_string(channels_) + ", entry has " + std::to_string(c));
    }
  }

  int frame_capacity_;
  int pointer_capacity_;
  int channels_ = 0;
  std::deque<FrameMemory<T>> frames_;
  std::deque<ObjectPointer<T>> pointers_;
};

/// Fuses a frame feature map with its predicted mask into a memory map:
/// a channel projection of the features plus a mask-occupancy embedding.
template <typename T>
struct MemoryEncoderParams {
  Matrix<T> proj;             // c x c
  std::vector<T> mask_embed;  // c

  static MemoryEncoderParams seeded(int c, Rng& rng) {
    MemoryEncoderParams p;
    p.proj = rng.template weight<T>(c, c);
    p.mask_embed = rng.template vector<T>(c, 1.0);
    return p;
  }
};

/// mask holds per-pixel object probability in [0, 1] at any resolution that
/// is an integer multiple of the feature grid; it is average-pooled down and
/// scales the mask embedding at each position.
template <typename T>
FeatureMap<T> memory_encode(const FeatureMap<T>& f16, const Matrix<T>& mask,
                            const MemoryEncoderParams<T>& p) {
  const int c = f16.channels;
  if (p.proj.rows != c || p.proj.cols != c || static_cast<int>(p.mask_embed.size()) != c) {
    throw std::invalid_argument("memory_encode: parameter shapes do not match " +
                                std::to_string(c) + " channels");
  }
  if (f16.height < 1 || f16.width < 1 || mask.rows % f16.height != 0 ||
      mask.cols % f16.width != 0 || mask.rows == 0 || mask.cols == 0) {
    throw std::invalid_argument("memory_encode: mask " + mask.shape() +
                                " is not an integer upscale of " + std::to_string(f16.height) +
                                "x" + std::to_string(f16.width));
  }
  for (const T v : mask.data) {
    if (!(v >= T(0) && v <= T(1))) {
      throw std::invalid_argument("memory_encode: mask values must lie in [0, 1]");
    }
  }
  const int sy = mask.rows / f16.height;
  const int sx = mask.cols / f16.width;
  const T inv_area = T(1) / static_cast<T>(sy * sx);

  const TokenSet<T> toks = to_tokens(f16);
  FeatureMap<T> out = from_tokens(
      TokenSet<T>{matmul(toks.tokens, p.proj), toks.grid}, f16.height, f16.width);
  for (int y = 0; y < f16.height; ++y) {
    for (int x = 0; x < f16.width; ++x) {
      T pooled = T(0);
      for (int dy = 0; dy < sy; ++dy) {
        for (int dx = 0; dx < sx; ++dx) pooled += mask(y * sy + dy, x * sx + dx);
      }
      pooled *= inv_area;
      T* cell = &out.at(0, y, x);
      for (int ch = 0; ch < c; ++ch) cell[ch] += pooled * p.mask_embed[ch];
    }
  }
  return out;
}

}  // namespace memtrack
