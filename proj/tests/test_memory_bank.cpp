#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "memtrack/memory_bank.hpp"
#include "memtrack/perceiver.hpp"
#include "oracles.hpp"

using memtrack::CompressedMemory;
using memtrack::FeatureMap;
using memtrack::FrameMemory;
using memtrack::Grid;
using memtrack::Matrix;
using memtrack::MemoryBank;
using memtrack::MemoryEncoderParams;
using memtrack::ObjectPointer;
using memtrack::Rng;
using memtrack::TokenSet;

namespace {

FrameMemory<double> dense_frame(std::int64_t index, int c, int h, int w, double fill) {
  FrameMemory<double> f;
  f.frame_index = index;
  FeatureMap<double> m(c, h, w);
  for (auto& v : m.data) v = fill;
  f.payload = std::move(m);
  return f;
}

FrameMemory<double> compressed_frame(std::int64_t index, int c, int ng, int nl, Rng& rng) {
  FrameMemory<double> f;
  f.frame_index = index;
  CompressedMemory<double> cm;
  cm.global = rng.matrix<double>(ng, c, 1.0);
  cm.spatial = TokenSet<double>{rng.matrix<double>(nl, c, 1.0), Grid{1, nl}};
  cm.source_h = 2;
  cm.source_w = 2;
  f.payload = std::move(cm);
  return f;
}

}  // namespace

TEST_CASE("frames evict oldest beyond capacity") {
  MemoryBank<double> bank(7, 0);
  for (int i = 0; i < 10; ++i) bank.push_frame(dense_frame(i, 2, 1, 1, i));
  REQUIRE(bank.frame_count() == 7);
  std::vector<std::int64_t> indices;
  for (const auto& f : bank.frames()) indices.push_back(f.frame_index);
  REQUIRE(indices == std::vector<std::int64_t>{3, 4, 5, 6, 7, 8, 9});
}

TEST_CASE("pointers evict oldest beyond capacity") {
  MemoryBank<double> bank(1, 16);
  bank.push_frame(dense_frame(0, 2, 1, 1, 0.0));
  for (int i = 0; i < 20; ++i) {
    bank.push_pointer(ObjectPointer<double>{{1.0 * i, 2.0 * i}, i});
  }
  REQUIRE(bank.pointer_count() == 16);
  std::vector<std::int64_t> indices;
  for (const auto& p : bank.pointers()) indices.push_back(p.frame_index);
  REQUIRE(indices.front() == 4);
  REQUIRE(indices.back() == 19);
  REQUIRE(static_cast<int>(indices.size()) == 16);
}

TEST_CASE("steady state token count at the large preset") {
  Rng rng(60);
  MemoryBank<double> bank(7, 16);
  for (int i = 0; i < 7; ++i) bank.push_frame(compressed_frame(i, 4, 256, 256, rng));
  for (int i = 0; i < 16; ++i) bank.push_pointer(ObjectPointer<double>{rng.vector<double>(4, 1.0), i});
  REQUIRE(bank.token_count(true) == 3600);
  REQUIRE(bank.token_count(false) == 3584);
}

TEST_CASE("concat stacks frames oldest first then pointers") {
  Rng rng(61);
  MemoryBank<double> bank(3, 4);
  bank.push_frame(dense_frame(0, 2, 1, 2, 1.0));
  bank.push_frame(compressed_frame(1, 2, 1, 2, rng));
  bank.push_pointer(ObjectPointer<double>{{9.0, 8.0}, 0});
  bank.push_pointer(ObjectPointer<double>{{7.0, 6.0}, 1});

  const Matrix<double> got = bank.concat(true);
  REQUIRE(got.rows == 7);
  REQUIRE(got.cols == 2);
  REQUIRE(got(0, 0) == 1.0);  // dense frame tokens
  REQUIRE(got(1, 1) == 1.0);
  const auto& cm = std::get<CompressedMemory<double>>(bank.frames()[1].payload);
  REQUIRE(got(2, 0) == cm.global(0, 0));     // global before spatial
  REQUIRE(got(3, 0) == cm.spatial.tokens(0, 0));
  REQUIRE(got(5, 0) == 9.0);  // pointers last, oldest first
  REQUIRE(got(6, 0) == 7.0);
  REQUIRE(oracle::max_abs_diff(got, oracle::o_bank_tokens(bank, true)) == 0.0);
  REQUIRE(bank.concat(false).rows == 5);
}

TEST_CASE("frame indices must increase strictly") {
  MemoryBank<double> bank(4, 4);
  bank.push_frame(dense_frame(5, 2, 1, 1, 0.0));
  REQUIRE_THROWS_AS(bank.push_frame(dense_frame(5, 2, 1, 1, 0.0)), std::invalid_argument);
  REQUIRE_THROWS_AS(bank.push_frame(dense_frame(4, 2, 1, 1, 0.0)), std::invalid_argument);
  bank.push_pointer(ObjectPointer<double>{{0.0, 0.0}, 2});
  REQUIRE_THROWS_AS(bank.push_pointer(ObjectPointer<double>{{0.0, 0.0}, 2}),
                    std::invalid_argument);
}

TEST_CASE("channel consistency is enforced across entries") {
  MemoryBank<double> bank(4, 4);
  bank.push_frame(dense_frame(0, 2, 1, 1, 0.0));
  REQUIRE_THROWS_AS(bank.push_frame(dense_frame(1, 3, 1, 1, 0.0)), std::invalid_argument);
  REQUIRE_THROWS_AS(bank.push_pointer(ObjectPointer<double>{{1.0, 2.0, 3.0}, 0}),
                    std::invalid_argument);
}

TEST_CASE("bank capacities are validated") {
  REQUIRE_THROWS_AS(MemoryBank<double>(0, 4), std::invalid_argument);
  REQUIRE_THROWS_AS(MemoryBank<double>(4, -1), std::invalid_argument);
}

TEST_CASE("zero pointer capacity drops pointers silently") {
  MemoryBank<double> bank(2, 0);
  bank.push_frame(dense_frame(0, 2, 1, 1, 3.0));
  bank.push_pointer(ObjectPointer<double>{{1.0, 2.0}, 0});
  REQUIRE(bank.pointer_count() == 0);
  REQUIRE(bank.token_count(true) == 1);
}

TEST_CASE("an empty bank refuses concat") {
  MemoryBank<double> bank(2, 2);
  REQUIRE(bank.empty());
  REQUIRE_THROWS_AS(bank.concat(true), std::invalid_argument);
}

TEST_CASE("memory encoding projects features and embeds the mask") {
  Rng rng(62);
  const int c = 4, h = 2, w = 3;
  MemoryEncoderParams<double> p = MemoryEncoderParams<double>::seeded(c, rng);
  const FeatureMap<double> f16 = oracle::random_feature_map(c, h, w, rng);

  const Matrix<double> zero_mask(h, w);
  const auto plain = memtrack::memory_encode(f16, zero_mask, p);
  const auto tokens = memtrack::to_tokens(f16);
  const auto projected = memtrack::matmul(tokens.tokens, p.proj);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int a = 0; a < c; ++a) {
        REQUIRE(std::abs(plain.at(a, y, x) - projected(y * w + x, a)) < 1e-12);
      }
    }
  }

  Matrix<double> ones(h, w);
  for (auto& v : ones.data) v = 1.0;
  const auto marked = memtrack::memory_encode(f16, ones, p);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int a = 0; a < c; ++a) {
        REQUIRE(std::abs(marked.at(a, y, x) - plain.at(a, y, x) - p.mask_embed[a]) < 1e-12);
      }
    }
  }
}

TEST_CASE("memory encoding pools an upscaled mask") {
  Rng rng(63);
  const int c = 4, h = 2, w = 2;
  MemoryEncoderParams<double> p = MemoryEncoderParams<double>::seeded(c, rng);
  const FeatureMap<double> f16 = oracle::random_feature_map(c, h, w, rng);
  Matrix<double> mask(8, 8);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) mask(y, x) = 1.0;  // top-left feature cell fully covered
  }
  mask(0, 4) = 1.0;  // one of sixteen pixels in the top-right cell
  const auto out = memtrack::memory_encode(f16, mask, p);
  const auto plain = memtrack::memory_encode(f16, Matrix<double>(8, 8), p);
  REQUIRE(std::abs((out.at(0, 0, 0) - plain.at(0, 0, 0)) - p.mask_embed[0]) < 1e-12);
  REQUIRE(std::abs((out.at(0, 0, 1) - plain.at(0, 0, 1)) - p.mask_embed[0] / 16.0) < 1e-12);
  REQUIRE(std::abs(out.at(0, 1, 1) - plain.at(0, 1, 1)) < 1e-12);
}

TEST_CASE("memory encoding matches the loop oracle") {
  Rng rng(64);
  for (int it = 0; it < 20; ++it) {
    const int c = rng.range(2, 6);
    const int h = rng.range(1, 3), w = rng.range(1, 3);
    const int scale = rng.range(1, 4);
    const auto p = MemoryEncoderParams<double>::seeded(c, rng);
    const auto f16 = oracle::random_feature_map(c, h, w, rng);
    Matrix<double> mask(h * scale, w * scale);
    for (auto& v : mask.data) v = rng.unit();
    const auto got = memtrack::memory_encode(f16, mask, p);
    REQUIRE(oracle::max_abs_diff(got, oracle::o_memory_encode(f16, mask, p)) < 1e-12);
  }
}

TEST_CASE("memory encoding validates the mask") {
  Rng rng(65);
  const auto p = MemoryEncoderParams<double>::seeded(2, rng);
  const auto f16 = oracle::random_feature_map(2, 2, 2, rng);
  REQUIRE_THROWS_AS(memtrack::memory_encode(f16, Matrix<double>(3, 4), p),
                    std::invalid_argument);
  Matrix<double> bad(2, 2);
  bad(0, 0) = 1.5;
  REQUIRE_THROWS_AS(memtrack::memory_encode(f16, bad, p), std::invalid_argument);
  bad(0, 0) = -0.1;
  REQUIRE_THROWS_AS(memtrack::memory_encode(f16, bad, p), std::invalid_argument);
}
