#include <catch2/catch_amalgamated.hpp>

#include <stdexcept>

#include "memtrack/bench.hpp"
#include "memtrack/fusion.hpp"
#include "oracles.hpp"

using memtrack::CompressedMemory;
using memtrack::EngineConfig;
using memtrack::FeatureMap;
using memtrack::FrameMemory;
using memtrack::FusionParams;
using memtrack::Grid;
using memtrack::MacCounts;
using memtrack::Matrix;
using memtrack::MemoryBank;
using memtrack::MemoryMode;
using memtrack::ObjectPointer;
using memtrack::Rng;
using memtrack::TokenSet;

namespace {

MemoryBank<double> random_bank(int c, int frames, int pointers, Rng& rng) {
  MemoryBank<double> bank(std::max(frames, 1), pointers);
  for (int f = 0; f < frames; ++f) {
    FrameMemory<double> fm;
    fm.frame_index = f;
    if (rng.range(0, 1) == 0) {
      const int h = rng.range(1, 3), w = rng.range(1, 3);
      fm.payload = oracle::random_feature_map(c, h, w, rng);
    } else {
      CompressedMemory<double> cm;
      const int ng = rng.range(0, 3);
      const int nl = rng.range(ng == 0 ? 1 : 0, 3);
      cm.global = rng.matrix<double>(ng, c, 1.0);
      cm.spatial = TokenSet<double>{rng.matrix<double>(nl, c, 1.0),
                                    nl > 0 ? std::optional<Grid>(Grid{1, nl}) : std::nullopt};
      cm.source_h = 2;
      cm.source_w = 2;
      fm.payload = std::move(cm);
    }
    bank.push_frame(std::move(fm));
  }
  for (int i = 0; i < pointers; ++i) {
    bank.push_pointer(ObjectPointer<double>{rng.vector<double>(c, 1.0), i});
  }
  return bank;
}

}  // namespace

TEST_CASE("an empty bank returns the input bit for bit") {
  Rng rng(71);
  const int c = 8;
  const auto p = FusionParams<double>::seeded(c, 2, rng);
  const auto map = oracle::random_feature_map(c, 3, 4, rng);
  MemoryBank<double> bank(3, 4);
  MacCounts mac;
  const auto out = memtrack::fuse(map, bank, p, &mac);
  REQUIRE(out == map);
  REQUIRE(mac.total() == 0);
}

TEST_CASE("a pointer-only bank with pointers excluded is identity") {
  Rng rng(72);
  const int c = 4;
  const auto p = FusionParams<double>::seeded(c, 1, rng);
  const auto map = oracle::random_feature_map(c, 2, 2, rng);
  MemoryBank<double> bank(2, 4);
  bank.push_pointer(ObjectPointer<double>{rng.vector<double>(c, 1.0), 0});
  bank.push_pointer(ObjectPointer<double>{rng.vector<double>(c, 1.0), 1});
  REQUIRE(memtrack::fuse(map, bank, p, nullptr, false) == map);
  REQUIRE(oracle::max_abs_diff(memtrack::fuse(map, bank, p, nullptr, true), map) > 0.0);
}

TEST_CASE("fusing over one dense frame matches the oracle") {
  Rng rng(73);
  const int c = 4;
  const auto p = FusionParams<double>::seeded(c, 1, rng);
  const auto map = oracle::random_feature_map(c, 2, 2, rng);
  MemoryBank<double> bank(1, 0);
  FrameMemory<double> fm;
  fm.frame_index = 0;
  fm.payload = oracle::random_feature_map(c, 2, 2, rng);
  bank.push_frame(std::move(fm));
  const auto got = memtrack::fuse(map, bank, p);
  const auto want = oracle::o_fuse(map, bank, p);
  REQUIRE(oracle::max_abs_diff(got, want) < 1e-10);
}

TEST_CASE("fuse matches the oracle over mixed banks") {
  Rng rng(74);
  for (int it = 0; it < 55; ++it) {
    const int c = 4 * rng.range(1, 2);
    const int h = rng.range(1, 4), w = rng.range(1, 4);
    auto p = FusionParams<double>::seeded(c, rng.range(1, 2), rng);
    p.use_self = rng.range(0, 1) == 1;
    p.use_cross = true;
    const bool include_pointers = rng.range(0, 1) == 1;
    const auto map = oracle::random_feature_map(c, h, w, rng);
    const auto bank = random_bank(c, rng.range(1, 3), rng.range(0, 3), rng);
    const auto got = memtrack::fuse(map, bank, p, nullptr, include_pointers);
    const auto want = oracle::o_fuse(map, bank, p, include_pointers);
    REQUIRE(oracle::max_abs_diff(got, want) < 1e-10);
  }
}

TEST_CASE("counted MACs equal the closed form model") {
  for (const MemoryMode mode : {MemoryMode::kDense, MemoryMode::kCompressed}) {
    const EngineConfig cfg = EngineConfig::desk();
    Rng rng(cfg.seed);
    const auto bank = memtrack::synthetic_bank<double>(cfg, mode, rng);
    const auto p = FusionParams<double>::seeded(cfg.c, cfg.fusion_depth, rng);
    const auto map = memtrack::random_map<double>(cfg.c, cfg.h, cfg.w, rng);
    MacCounts counted;
    memtrack::fuse(map, bank, p, &counted);
    const std::int64_t tokens_per_frame =
        mode == MemoryMode::kDense ? cfg.h * cfg.w : cfg.ng + cfg.nl;
    const MacCounts model = memtrack::fuse_flops(cfg.t, cfg.c, cfg.h, cfg.w, tokens_per_frame,
                                                 cfg.pointer_capacity, cfg.fusion_depth);
    REQUIRE(counted == model);
  }
}

TEST_CASE("the flop model is linear in depth") {
  const MacCounts one = memtrack::fuse_flops(4, 32, 16, 16, 64, 16, 1);
  const MacCounts two = memtrack::fuse_flops(4, 32, 16, 16, 64, 16, 2);
  const MacCounts four = memtrack::fuse_flops(4, 32, 16, 16, 64, 16, 4);
  REQUIRE(two.cross == 2 * one.cross);
  REQUIRE(four.cross == 4 * one.cross);
  REQUIRE(two.total() == 2 * one.total());
  REQUIRE(four.total() == 4 * one.total());
}

TEST_CASE("a single dense frame costs quadratically in map area") {
  const int c = 16, h = 8, w = 8;
  const std::uint64_t hw = static_cast<std::uint64_t>(h) * w;
  const MacCounts m = memtrack::fuse_flops(1, c, h, w, hw, 0, 1);
  REQUIRE(m.cross == 2ull * hw * hw * c);
  REQUIRE(m.self_attn == 2ull * hw * hw * c);
  REQUIRE(m.mlp == 8ull * hw * c * c);
  REQUIRE(m.proj == (4ull * hw + 2ull * hw + 2ull * hw) * c * c);
}

TEST_CASE("ablation flags drop their terms") {
  const MacCounts no_self = memtrack::fuse_flops(2, 8, 4, 4, 16, 0, 2, false, true);
  REQUIRE(no_self.self_attn == 0);
  REQUIRE(no_self.cross > 0);
  const MacCounts no_cross = memtrack::fuse_flops(2, 8, 4, 4, 16, 0, 2, true, false);
  REQUIRE(no_cross.cross == 0);
  REQUIRE(no_cross.self_attn > 0);
}

TEST_CASE("fuse validates its inputs") {
  Rng rng(75);
  const auto map = oracle::random_feature_map(4, 2, 2, rng);
  MemoryBank<double> bank(1, 0);
  FrameMemory<double> fm;
  fm.frame_index = 0;
  fm.payload = oracle::random_feature_map(4, 2, 2, rng);
  bank.push_frame(std::move(fm));
  REQUIRE_THROWS_AS(memtrack::fuse(map, bank, FusionParams<double>{}), std::invalid_argument);
  const auto wrong = FusionParams<double>::seeded(8, 1, rng);
  REQUIRE_THROWS_AS(memtrack::fuse(map, bank, wrong), std::invalid_argument);
}

TEST_CASE("softmax flops are tracked apart from MACs") {
  REQUIRE(memtrack::fuse_softmax_flops(4, 32, 16, 16, 64, 16, 2) > 0);
  REQUIRE(memtrack::fuse_softmax_flops(4, 32, 16, 16, 64, 16, 2, false, false) > 0);
}
