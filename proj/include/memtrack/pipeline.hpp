#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "memtrack/config.hpp"
#include "memtrack/fusion.hpp"
#include "memtrack/losses.hpp"
#include "memtrack/matrix.hpp"
#include "memtrack/memory_bank.hpp"
#include "memtrack/perceiver.hpp"
#include "memtrack/tensor.hpp"

namespace memtrack {

inline constexpr int kPatch = 16;  // image pixels per stride-16 feature cell

/// Non-overlapping patch projections at strides 4, 8 and 16. Images are
/// grayscale, 16h x 16w pixels for an h x w stride-16 grid.
template <typename T>
struct EncoderParams {
  Matrix<T> w4;   // 16 x c, flattened 4x4 patch to channels
  Matrix<T> w8;   // 64 x c
  Matrix<T> w16;  // 256 x c

  static EncoderParams seeded(int c, Rng& rng) {
    EncoderParams p;
    p.w4 = rng.template weight<T>(16, c);
    p.w8 = rng.template weight<T>(64, c);
    p.w16 = rng.template weight<T>(256, c);
    return p;
  }
};

template <typename T>
struct ImageFeatures {
  FeatureMap<T> stride4;
  FeatureMap<T> stride8;
  FeatureMap<T> stride16;
};

namespace detail {

template <typename T>
FeatureMap<T> patch_project(const Matrix<T>& image, int patch, const Matrix<T>& weight) {
  const int gh = image.rows / patch;
  const int gw = image.cols / patch;
  const int c = weight.cols;
  Matrix<T> patches(gh * gw, patch * patch);
  for (int gy = 0; gy < gh; ++gy) {
    for (int gx = 0; gx < gw; ++gx) {
      T* row = patches.row_ptr(gy * gw + gx);
      for (int dy = 0; dy < patch; ++dy) {
        for (int dx = 0; dx < patch; ++dx) {
          row[dy * patch + dx] = image(gy * patch + dy, gx * patch + dx);
        }
      }
    }
  }
  return from_tokens(TokenSet<T>{matmul(patches, weight), Grid{gh, gw}}, gh, gw);
}

}  // namespace detail

template <typename T>
ImageFeatures<T> encode(const Matrix<T>& image, const EncoderParams<T>& p) {
  if (image.rows < kPatch || image.cols < kPatch || image.rows % kPatch != 0 ||
      image.cols % kPatch != 0) {
    throw std::invalid_argument("encode: image " + image.shape() + " is not a multiple of " +
                                std::to_string(kPatch));
  }
  ImageFeatures<T> f;
  f.stride4 = detail::patch_project(image, 4, p.w4);
  f.stride8 = detail::patch_project(image, 8, p.w8);
  f.stride16 = detail::patch_project(image, 16, p.w16);
  return f;
}

template <typename T>
struct Prompt {
  std::optional<std::pair<int, int>> point;  // (y, x) in image pixels
  std::optional<Matrix<T>> mask;             // image resolution, values in [0, 1]
};

/// Mask/quality/visibility heads plus the per-frame object pointer readout.
template <typename T>
struct DecoderParams {
  Matrix<T> proj_m;  // c x c, on the memory-conditioned map
  Matrix<T> proj8;   // c x c, lateral at stride 8
  Matrix<T> proj4;   // c x c, lateral at stride 4
  Matrix<T> w_ptr;   // c x c, pooled features to object pointer
  std::vector<T> w_mask;  // c
  std::vector<T> w_iou;   // c
  std::vector<T> w_occ;   // c
  std::vector<T> prompt_embed;  // c

  static DecoderParams seeded(int c, Rng& rng) {
    DecoderParams p;
    p.proj_m = rng.template weight<T>(c, c);
    p.proj8 = rng.template weight<T>(c, c);
    p.proj4 = rng.template weight<T>(c, c);
    p.w_ptr = rng.template weight<T>(c, c);
    p.w_mask = rng.template vector<T>(c, 1.0);
    p.w_iou = rng.template vector<T>(c, 1.0);
    p.w_occ = rng.template vector<T>(c, 1.0);
    p.prompt_embed = rng.template vector<T>(c, 1.0);
    return p;
  }
};

template <typename T>
struct DecodeResult {
  Matrix<T> mask_logits;  // image resolution
  T iou_pred = T(0);
  T occ_logit = T(0);
  std::vector<T> pointer;  // length c
};

namespace detail {

template <typename T>
FeatureMap<T> upsample2(const FeatureMap<T>& m) {
  FeatureMap<T> out(m.channels, m.height * 2, m.width * 2);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      const T* src = &m.at(0, y / 2, x / 2);
      std::copy(src, src + m.channels, &out.at(0, y, x));
    }
  }
  return out;
}

template <typename T>
FeatureMap<T> channel_project(const FeatureMap<T>& m, const Matrix<T>& w) {
  const auto toks = to_tokens(m);
  return from_tokens(TokenSet<T>{matmul(toks.tokens, w), toks.grid}, m.height, m.width);
}

}  // namespace detail

/// Decode the memory-conditioned map into an image-resolution mask, a mask
/// quality estimate, a visibility logit and the frame's object pointer.
/// Prompts inject the prompt embedding at the pointed cell or scaled by the
/// pooled prompt mask.
template <typename T>
DecodeResult<T> decode(const FeatureMap<T>& fused, const FeatureMap<T>& f8,
                       const FeatureMap<T>& f4, const Prompt<T>* prompt,
                       const DecoderParams<T>& p) {
  const int c = fused.channels;
  const int h = fused.height;
  const int w = fused.width;
  if (f8.height != 2 * h || f8.width != 2 * w || f4.height != 4 * h || f4.width != 4 * w ||
      f8.channels != c || f4.channels != c) {
    throw std::invalid_argument("decode: scale pyramid shapes disagree: " + fused.shape() + ", " +
                                f8.shape() + ", " + f4.shape());
  }
  FeatureMap<T> pm = fused;
  if (prompt) {
    if (prompt->point) {
      const int cy = std::clamp(prompt->point->first / kPatch, 0, h - 1);
      const int cx = std::clamp(prompt->point->second / kPatch, 0, w - 1);
      T* cell = &pm.at(0, cy, cx);
      for (int ch = 0; ch < c; ++ch) cell[ch] += p.prompt_embed[ch];
    }
    if (prompt->mask) {
      const Matrix<T>& mk = *prompt->mask;
      if (mk.rows != h * kPatch || mk.cols != w * kPatch) {
        throw std::invalid_argument("decode: prompt mask " + mk.shape() +
                                    " is not image resolution");
      }
      const T inv_area = T(1) / static_cast<T>(kPatch * kPatch);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          T pooled = T(0);
          for (int dy = 0; dy < kPatch; ++dy) {
            for (int dx = 0; dx < kPatch; ++dx) pooled += mk(y * kPatch + dy, x * kPatch + dx);
          }
          pooled *= inv_area;
          T* cell = &pm.at(0, y, x);
          for (int ch = 0; ch < c; ++ch) cell[ch] += pooled * p.prompt_embed[ch];
        }
      }
    }
  }

  const FeatureMap<T> m16 = detail::channel_project(pm, p.proj_m);

  std::vector<T> gap(c, T(0));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const T* cell = &m16.at(0, y, x);
      for (int ch = 0; ch < c; ++ch) gap[ch] += cell[ch];
    }
  }
  const T inv_hw = T(1) / static_cast<T>(h * w);
  for (auto& v : gap) v *= inv_hw;

  DecodeResult<T> out;
  T iou_z = T(0), occ_z = T(0);
  for (int ch = 0; ch < c; ++ch) {
    iou_z += gap[ch] * p.w_iou[ch];
    occ_z += gap[ch] * p.w_occ[ch];
  }
  out.iou_pred = sigmoid(iou_z);
  out.occ_logit = occ_z;
  out.pointer.assign(c, T(0));
  for (int ch = 0; ch < c; ++ch) {
    for (int j = 0; j < c; ++j) out.pointer[j] += gap[ch] * p.w_ptr(ch, j);
  }

  FeatureMap<T> m8 = detail::upsample2(m16);
  add_map(m8, detail::channel_project(f8, p.proj8));
  FeatureMap<T> m4 = detail::upsample2(m8);
  add_map(m4, detail::channel_project(f4, p.proj4));

  out.mask_logits = Matrix<T>(h * kPatch, w * kPatch);
  for (int y = 0; y < 4 * h; ++y) {
    for (int x = 0; x < 4 * w; ++x) {
      const T* cell = &m4.at(0, y, x);
      T z = T(0);
      for (int ch = 0; ch < c; ++ch) z += cell[ch] * p.w_mask[ch];
      for (int dy = 0; dy < 4; ++dy) {
        for (int dx = 0; dx < 4; ++dx) out.mask_logits(y * 4 + dy, x * 4 + dx) = z;
      }
    }
  }
  return out;
}

template <typename T>
struct EngineParams {
  EncoderParams<T> encoder;
  DecoderParams<T> decoder;
  MemoryEncoderParams<T> memory_encoder;
  PerceiverParams<T> perceiver;
  FusionParams<T> fusion;

  /// Single draw stream, fixed order, so one seed pins every weight and f32
  /// and f64 engines agree on parameters.
  static EngineParams seeded(const EngineConfig& cfg) {
    Rng rng(cfg.seed);
    EngineParams p;
    p.encoder = EncoderParams<T>::seeded(cfg.c, rng);
    p.decoder = DecoderParams<T>::seeded(cfg.c, rng);
    p.memory_encoder = MemoryEncoderParams<T>::seeded(cfg.c, rng);
    p.perceiver = PerceiverParams<T>::seeded(cfg.c, cfg.ng, cfg.nl, cfg.window(),
                                             cfg.perceiver_depth, rng);
    p.fusion = FusionParams<T>::seeded(cfg.c, cfg.fusion_depth, rng);
    return p;
  }
};

struct FrameTrace {
  int frame = 0;
  MemoryMode mode = MemoryMode::kCompressed;
  std::int64_t mem_tokens = 0;  // bank tokens visible to this frame's fusion
  std::uint64_t cross_mac = 0;
  std::uint64_t self_mac = 0;
  std::uint64_t wall_ns = 0;  // fusion step only
};

inline void write_trace_csv(std::ostream& out, const std::vector<FrameTrace>& traces) {
  out << "frame,mode,mem_tokens,cross_mac,self_mac,wall_ns\n";
  for (const auto& t : traces) {
    out << t.frame << ',' << to_string(t.mode) << ',' << t.mem_tokens << ',' << t.cross_mac << ','
        << t.self_mac << ',' << t.wall_ns << "\n";
  }
}

template <typename T>
struct StepResult {
  DecodeResult<T> decoded;
  FeatureMap<T> f16;
  FeatureMap<T> fused;
  FrameTrace trace;
};

/// Streaming tracker: encode, condition on the memory bank, decode, then
/// write the frame back into the bank (dense or compressed per config).
template <typename T>
class Engine {
 public:
  explicit Engine(EngineConfig cfg)
      : cfg_(validated(std::move(cfg))),
        params_(EngineParams<T>::seeded(cfg_)),
        bank_(cfg_.t, cfg_.pointer_capacity) {}

  const EngineConfig& config() const { return cfg_; }
  const EngineParams<T>& params() const { return params_; }
  const MemoryBank<T>& bank() const { return bank_; }
  int next_frame() const { return next_frame_; }

  StepResult<T> step(int frame_index, const Matrix<T>& image, const Prompt<T>* prompt = nullptr) {
    if (frame_index != next_frame_) {
      throw std::invalid_argument("Engine: expected frame " + std::to_string(next_frame_) +
                                  ", got " + std::to_string(frame_index));
    }
    if (image.rows != cfg_.h * kPatch || image.cols != cfg_.w * kPatch) {
      throw std::invalid_argument("Engine: image " + image.shape() + " does not match config " +
                                  std::to_string(cfg_.h * kPatch) + "x" +
                                  std::to_string(cfg_.w * kPatch));
    }
    StepResult<T> r;
    ImageFeatures<T> feats = encode(image, params_.encoder);

    MacCounts mac;
    const std::int64_t mem_tokens = bank_.token_count(cfg_.use_pointers);
    const auto t0 = std::chrono::steady_clock::now();
    r.fused = fuse(feats.stride16, bank_, params_.fusion, &mac, cfg_.use_pointers);
    const auto t1 = std::chrono::steady_clock::now();

    r.decoded = decode(r.fused, feats.stride8, feats.stride4, prompt, params_.decoder);

    Matrix<T> probs(r.decoded.mask_logits.rows, r.decoded.mask_logits.cols);
    for (std::size_t i = 0; i < probs.data.size(); ++i) {
      probs.data[i] = sigmoid(r.decoded.mask_logits.data[i]);
    }
    FeatureMap<T> mem = memory_encode(feats.stride16, probs, params_.memory_encoder);
    FrameMemory<T> fm;
    fm.frame_index = frame_index;
    if (cfg_.mode == MemoryMode::kCompressed) {
      fm.payload = compress(mem, params_.perceiver);
    } else {
      fm.payload = std::move(mem);
    }
    bank_.push_frame(std::move(fm));
    bank_.push_pointer(ObjectPointer<T>{r.decoded.pointer, frame_index});

    r.f16 = std::move(feats.stride16);
    r.trace = FrameTrace{frame_index, cfg_.mode, mem_tokens, mac.cross, mac.self_attn,
                         static_cast<std::uint64_t>(
                             std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0)
                                 .count())};
    ++next_frame_;
    return r;
  }

 private:
  static EngineConfig validated(EngineConfig cfg) {
    cfg.validate();
    return cfg;
  }

  EngineConfig cfg_;
  EngineParams<T> params_;
  MemoryBank<T> bank_;
  int next_frame_ = 0;
};

/// Moving-object clip with per-frame binary masks and visibility flags.
template <typename T>
struct SyntheticVideo {
  int image_h = 0;
  int image_w = 0;
  std::vector<Matrix<T>> images;
  std::vector<Matrix<T>> masks;
  std::vector<bool> visible;

  int frames() const { return static_cast<int>(images.size()); }
};

struct MotionSpec {
  int frames = 8;
  double start_y = 0.3;   // fractional position of the object center
  double start_x = 0.25;
  double vel_y = 0.03;    // per-frame motion, fraction of the extent
  double vel_x = 0.06;
  double radius = 0.14;   // fraction of the smaller image side
  bool disk = true;       // disk when true, axis-aligned square otherwise
  std::vector<int> occluded_frames;
  double noise = 0.05;
  std::uint64_t seed = 42;
};

template <typename T>
SyntheticVideo<T> make_synthetic_video(int image_h, int image_w, const MotionSpec& spec) {
  if (spec.frames < 1) throw std::invalid_argument("make_synthetic_video: need at least 1 frame");
  SyntheticVideo<T> v;
  v.image_h = image_h;
  v.image_w = image_w;
  Rng rng(spec.seed);
  const double r = spec.radius * std::min(image_h, image_w);
  for (int f = 0; f < spec.frames; ++f) {
    const bool hidden =
        std::find(spec.occluded_frames.begin(), spec.occluded_frames.end(), f) !=
        spec.occluded_frames.end();
    double cy = (spec.start_y + f * spec.vel_y) * image_h;
    double cx = (spec.start_x + f * spec.vel_x) * image_w;
    cy = std::fmod(std::fmod(cy, image_h) + image_h, image_h);
    cx = std::fmod(std::fmod(cx, image_w) + image_w, image_w);
    Matrix<T> img(image_h, image_w);
    Matrix<T> mask(image_h, image_w);
    for (int y = 0; y < image_h; ++y) {
      for (int x = 0; x < image_w; ++x) {
        img(y, x) = static_cast<T>(spec.noise * rng.unit());
        if (hidden) continue;
        const double dy = y - cy;
        const double dx = x - cx;
        const bool inside = spec.disk ? (dy * dy + dx * dx <= r * r)
                                      : (std::abs(dy) <= r && std::abs(dx) <= r);
        if (inside) {
          img(y, x) = T(1);
          mask(y, x) = T(1);
        }
      }
    }
    v.images.push_back(std::move(img));
    v.masks.push_back(std::move(mask));
    v.visible.push_back(!hidden);
  }
  return v;
}

template <typename T>
struct RunResult {
  std::vector<FrameTrace> traces;
  std::vector<double> frame_iou;  // thresholded mask vs ground truth
};

/// Track through a clip, prompting frame 0 with its ground-truth mask.
template <typename T>
RunResult<T> run_video(Engine<T>& engine, const SyntheticVideo<T>& video) {
  RunResult<T> out;
  for (int f = 0; f < video.frames(); ++f) {
    Prompt<T> prompt;
    const Prompt<T>* pp = nullptr;
    if (f == 0) {
      prompt.mask = video.masks[0];
      pp = &prompt;
    }
    StepResult<T> r = engine.step(f, video.images[f], pp);
    Matrix<T> probs(r.decoded.mask_logits.rows, r.decoded.mask_logits.cols);
    for (std::size_t i = 0; i < probs.data.size(); ++i) {
      probs.data[i] = sigmoid(r.decoded.mask_logits.data[i]);
    }
    out.frame_iou.push_back(static_cast<double>(mask_iou(probs, video.masks[f])));
    out.traces.push_back(r.trace);
  }
  return out;
}

}  // namespace memtrack
