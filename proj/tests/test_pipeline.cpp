#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "memtrack/pipeline.hpp"
#include "oracles.hpp"

using memtrack::Engine;
using memtrack::EngineConfig;
using memtrack::EngineParams;
using memtrack::kPatch;
using memtrack::Matrix;
using memtrack::MemoryMode;
using memtrack::MotionSpec;
using memtrack::Prompt;
using memtrack::Rng;

namespace {

EngineConfig tiny_config(MemoryMode mode = MemoryMode::kCompressed) {
  EngineConfig cfg;
  cfg.c = 8;
  cfg.h = 4;
  cfg.w = 4;
  cfg.t = 2;
  cfg.pointer_capacity = 16;
  cfg.ng = 4;
  cfg.nl = 4;
  cfg.fusion_depth = 1;
  cfg.perceiver_depth = 1;
  cfg.mode = mode;
  cfg.seed = 9;
  return cfg;
}

Matrix<double> random_image(const EngineConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  Matrix<double> img(cfg.h * kPatch, cfg.w * kPatch);
  for (auto& v : img.data) v = rng.unit();
  return img;
}

}  // namespace

TEST_CASE("a zero image yields zero features") {
  const EngineConfig cfg = tiny_config();
  Rng rng(3);
  const auto enc = memtrack::EncoderParams<double>::seeded(cfg.c, rng);
  const auto feats = memtrack::encode(Matrix<double>(cfg.h * kPatch, cfg.w * kPatch), enc);
  for (const double v : feats.stride16.data) REQUIRE(v == 0.0);
  for (const double v : feats.stride8.data) REQUIRE(v == 0.0);
  for (const double v : feats.stride4.data) REQUIRE(v == 0.0);
}

TEST_CASE("the feature pyramid keeps the stride relation") {
  const EngineConfig cfg = tiny_config();
  Rng rng(4);
  const auto enc = memtrack::EncoderParams<double>::seeded(cfg.c, rng);
  const auto feats = memtrack::encode(random_image(cfg, 12), enc);
  REQUIRE(feats.stride16.height == cfg.h);
  REQUIRE(feats.stride16.width == cfg.w);
  REQUIRE(feats.stride8.height == 2 * cfg.h);
  REQUIRE(feats.stride8.width == 2 * cfg.w);
  REQUIRE(feats.stride4.height == 4 * cfg.h);
  REQUIRE(feats.stride4.width == 4 * cfg.w);
  REQUIRE(feats.stride4.channels == cfg.c);
}

TEST_CASE("encode validates image dimensions") {
  Rng rng(5);
  const auto enc = memtrack::EncoderParams<double>::seeded(8, rng);
  REQUIRE_THROWS_AS(memtrack::encode(Matrix<double>(63, 64), enc), std::invalid_argument);
}

TEST_CASE("the engine is deterministic per seed") {
  const EngineConfig cfg = tiny_config();
  const auto spec = MotionSpec{};
  const auto video = memtrack::make_synthetic_video<double>(cfg.h * kPatch, cfg.w * kPatch, spec);

  Engine<double> a(cfg), b(cfg);
  const auto ra = memtrack::run_video(a, video);
  const auto rb = memtrack::run_video(b, video);
  REQUIRE(ra.frame_iou == rb.frame_iou);
  for (std::size_t i = 0; i < ra.traces.size(); ++i) {
    REQUIRE(ra.traces[i].cross_mac == rb.traces[i].cross_mac);
    REQUIRE(ra.traces[i].mem_tokens == rb.traces[i].mem_tokens);
  }

  EngineConfig other = cfg;
  other.seed = cfg.seed + 1;
  Engine<double> c(other), d(cfg);
  const auto rc = c.step(0, video.images[0]);
  const auto rd = d.step(0, video.images[0]);
  REQUIRE(oracle::max_abs_diff(rc.decoded.mask_logits, rd.decoded.mask_logits) > 0.0);
}

TEST_CASE("per frame MAC traces follow the closed form model") {
  for (const MemoryMode mode : {MemoryMode::kDense, MemoryMode::kCompressed}) {
    const EngineConfig cfg = tiny_config(mode);
    Engine<double> engine(cfg);
    const int frames = 6;
    for (int f = 0; f < frames; ++f) {
      const auto r = engine.step(f, random_image(cfg, 100 + f));
      const int bank_frames = std::min(f, cfg.t);
      const int bank_ptrs = std::min(f, cfg.pointer_capacity);
      const std::int64_t tokens_per_frame =
          mode == MemoryMode::kDense ? cfg.h * cfg.w : cfg.ng + cfg.nl;
      REQUIRE(r.trace.mem_tokens == bank_frames * tokens_per_frame + bank_ptrs);
      if (bank_frames == 0 && bank_ptrs == 0) {
        REQUIRE(r.trace.cross_mac == 0);
        REQUIRE(r.trace.self_mac == 0);
      } else {
        const auto model = memtrack::fuse_flops(bank_frames, cfg.c, cfg.h, cfg.w, tokens_per_frame,
                                                bank_ptrs, cfg.fusion_depth);
        REQUIRE(r.trace.cross_mac == model.cross);
        REQUIRE(r.trace.self_mac == model.self_attn);
      }
    }
    REQUIRE(engine.bank().frame_count() == cfg.t);
    REQUIRE(engine.bank().pointer_count() == frames);
  }
}

TEST_CASE("frames must arrive in order") {
  const EngineConfig cfg = tiny_config();
  Engine<double> engine(cfg);
  engine.step(0, random_image(cfg, 1));
  REQUIRE_THROWS_AS(engine.step(2, random_image(cfg, 2)), std::invalid_argument);
  REQUIRE_THROWS_AS(engine.step(0, random_image(cfg, 3)), std::invalid_argument);
  engine.step(1, random_image(cfg, 4));
}

TEST_CASE("the engine rejects mis-sized images") {
  const EngineConfig cfg = tiny_config();
  Engine<double> engine(cfg);
  REQUIRE_THROWS_AS(engine.step(0, Matrix<double>(10, 10)), std::invalid_argument);
}

TEST_CASE("decode emits image resolution outputs") {
  const EngineConfig cfg = tiny_config();
  Engine<double> engine(cfg);
  const auto r = engine.step(0, random_image(cfg, 21));
  REQUIRE(r.decoded.mask_logits.rows == cfg.h * kPatch);
  REQUIRE(r.decoded.mask_logits.cols == cfg.w * kPatch);
  REQUIRE(r.decoded.iou_pred > 0.0);
  REQUIRE(r.decoded.iou_pred < 1.0);
  REQUIRE(static_cast<int>(r.decoded.pointer.size()) == cfg.c);
  REQUIRE(r.fused.height == cfg.h);
  REQUIRE(r.fused.width == cfg.w);
}

TEST_CASE("prompts steer the decode") {
  const EngineConfig cfg = tiny_config();
  Engine<double> a(cfg), b(cfg);
  const auto img = random_image(cfg, 33);
  Prompt<double> prompt;
  prompt.mask = Matrix<double>(cfg.h * kPatch, cfg.w * kPatch);
  for (int y = 0; y < 20; ++y) {
    for (int x = 0; x < 20; ++x) (*prompt.mask)(y, x) = 1.0;
  }
  const auto with = a.step(0, img, &prompt);
  const auto without = b.step(0, img);
  REQUIRE(oracle::max_abs_diff(with.decoded.mask_logits, without.decoded.mask_logits) > 0.0);
  REQUIRE(with.f16.data == without.f16.data);  // prompts do not touch the encoder

  Prompt<double> point;
  point.point = std::make_pair(8, 8);
  Engine<double> c(cfg);
  const auto pointed = c.step(0, img, &point);
  REQUIRE(oracle::max_abs_diff(pointed.decoded.mask_logits, without.decoded.mask_logits) > 0.0);
}

TEST_CASE("synthetic clips are reproducible and binary") {
  MotionSpec spec;
  spec.frames = 5;
  spec.occluded_frames = {2};
  const auto a = memtrack::make_synthetic_video<double>(64, 64, spec);
  const auto b = memtrack::make_synthetic_video<double>(64, 64, spec);
  REQUIRE(a.frames() == 5);
  for (int f = 0; f < 5; ++f) {
    REQUIRE(a.images[f] == b.images[f]);
    REQUIRE(a.masks[f] == b.masks[f]);
    for (const double v : a.masks[f].data) REQUIRE((v == 0.0 || v == 1.0));
  }
  REQUIRE_FALSE(a.visible[2]);
  REQUIRE(a.visible[0]);
  double occluded_mass = 0.0;
  for (const double v : a.masks[2].data) occluded_mass += v;
  REQUIRE(occluded_mass == 0.0);
  double visible_mass = 0.0;
  for (const double v : a.masks[0].data) visible_mass += v;
  REQUIRE(visible_mass > 0.0);
}

TEST_CASE("the trace csv carries one row per frame") {
  const EngineConfig cfg = tiny_config();
  Engine<double> engine(cfg);
  const auto video = memtrack::make_synthetic_video<double>(cfg.h * kPatch, cfg.w * kPatch,
                                                            MotionSpec{3});
  const auto result = memtrack::run_video(engine, video);
  REQUIRE(result.traces.size() == 3);
  REQUIRE(result.frame_iou.size() == 3);
  std::ostringstream out;
  memtrack::write_trace_csv(out, result.traces);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  REQUIRE(line == "frame,mode,mem_tokens,cross_mac,self_mac,wall_ns");
  int rows = 0;
  while (std::getline(in, line)) {
    if (!line.empty()) ++rows;
  }
  REQUIRE(rows == 3);
}

TEST_CASE("parameter seeding is reproducible and seed sensitive") {
  const EngineConfig cfg = tiny_config();
  const auto a = EngineParams<double>::seeded(cfg);
  const auto b = EngineParams<double>::seeded(cfg);
  REQUIRE(a.encoder.w16 == b.encoder.w16);
  REQUIRE(a.fusion.blocks[0].cross_attn.wq == b.fusion.blocks[0].cross_attn.wq);
  EngineConfig other = cfg;
  other.seed = cfg.seed + 1;
  const auto c = EngineParams<double>::seeded(other);
  REQUIRE(a.encoder.w16 != c.encoder.w16);
}

TEST_CASE("float and double engines share their weights") {
  const EngineConfig cfg = tiny_config();
  const auto d = EngineParams<double>::seeded(cfg);
  const auto f = EngineParams<float>::seeded(cfg);
  REQUIRE(d.encoder.w16.rows == f.encoder.w16.rows);
  for (std::size_t i = 0; i < d.encoder.w16.data.size(); ++i) {
    REQUIRE(static_cast<float>(d.encoder.w16.data[i]) == f.encoder.w16.data[i]);
  }
}
