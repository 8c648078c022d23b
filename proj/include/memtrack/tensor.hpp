#pragma once

#include <optional>
#include <stdexcept>
#include <string>

#include "memtrack/matrix.hpp"

namespace memtrack {

struct Grid {
  int h = 0;
  int w = 0;
  bool operator==(const Grid&) const = default;
};

/// Sequence of n feature vectors of width c. Carries an optional 2D grid
/// when the tokens keep a spatial arrangement (grid.h * grid.w == n).
template <typename T>
struct TokenSet {
  Matrix<T> tokens;  // n x c
  std::optional<Grid> grid;

  int n() const { return tokens.rows; }
  int channels() const { return tokens.cols; }

  bool operator==(const TokenSet&) const = default;

  void validate() const {
    if (grid && grid->h * grid->w != tokens.rows) {
      throw std::invalid_argument("TokenSet: grid " + std::to_string(grid->h) + "x" +
                                  std::to_string(grid->w) + " does not cover " +
                                  std::to_string(tokens.rows) + " tokens");
    }
  }
};

/// Dense frame feature of logical shape channels x height x width.
/// Storage is position-major, (y * width + x) * channels + c, so flattening
/// to row-major position tokens is a straight copy.
template <typename T>
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w) : channels(c), height(h), width(w) {
    if (c < 0 || h < 0 || w < 0) throw std::invalid_argument("FeatureMap: negative shape");
    data.assign(static_cast<std::size_t>(c) * h * w, T(0));
  }

  T& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  const T& at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  std::string shape() const {
    return std::to_string(channels) + "x" + std::to_string(height) + "x" +
           std::to_string(width);
  }

  bool operator==(const FeatureMap&) const = default;
};

/// Flatten positions row-major into an (h*w) x c token set with grid attached.
template <typename T>
TokenSet<T> to_tokens(const FeatureMap<T>& m) {
  Matrix<T> t(m.height * m.width, m.channels, m.data);
  return TokenSet<T>{std::move(t), Grid{m.height, m.width}};
}

template <typename T>
void add_map(FeatureMap<T>& a, const FeatureMap<T>& b) {
  if (a.channels != b.channels || a.height != b.height || a.width != b.width) {
    throw std::invalid_argument("add_map: shape mismatch " + a.shape() + " vs " + b.shape());
  }
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

template <typename T>
FeatureMap<T> from_tokens(const TokenSet<T>& t, int h, int w) {
  if (t.n() != h * w) {
    throw std::invalid_argument("from_tokens: " + std::to_string(t.n()) + " tokens cannot fill " +
                                std::to_string(h) + "x" + std::to_string(w));
  }
  FeatureMap<T> m(t.channels(), h, w);
  m.data = t.tokens.data;
  return m;
}

}  // namespace memtrack
