#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace memtrack {

// Layer-norm epsilon. Small enough that normalized rows hit unit variance
// to ~1e-12 for O(1) inputs, while still guarding constant rows.
inline constexpr double kLayerNormEps = 1e-12;

/// Dense row-major matrix, the single tensor carrier of the engine.
/// Token sequences are n x c, projection weights c x c.
template <typename T>
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<T> data;  // rows * cols values, row-major

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c) {
    if (r < 0 || c < 0) {
      throw std::invalid_argument("Matrix: negative shape " + std::to_string(r) + "x" +
                                  std::to_string(c));
    }
    data.assign(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), T(0));
  }
  Matrix(int r, int c, std::vector<T> values) : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != static_cast<std::size_t>(r) * static_cast<std::size_t>(c)) {
      throw std::invalid_argument("Matrix: data length does not match shape");
    }
  }

  T& operator()(int i, int j) { return data[static_cast<std::size_t>(i) * cols + j]; }
  const T& operator()(int i, int j) const {
    return data[static_cast<std::size_t>(i) * cols + j];
  }

  T* row_ptr(int i) { return data.data() + static_cast<std::size_t>(i) * cols; }
  const T* row_ptr(int i) const { return data.data() + static_cast<std::size_t>(i) * cols; }

  std::string shape() const { return std::to_string(rows) + "x" + std::to_string(cols); }

  bool operator==(const Matrix&) const = default;
};

/// Seeded generator for all engine parameters and fixtures.
/// Identical seed yields an identical sample stream on every platform;
/// samples are drawn as f64 and narrowed so f32 and f64 engines share weights.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // Uniform in [0, 1), 53 mantissa bits.
  double unit() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Uniform in [-scale, scale].
  double uniform(double scale) { return (2.0 * unit() - 1.0) * scale; }

  std::uint64_t raw() { return gen_(); }

  // Integer in [lo, hi] inclusive.
  int range(int lo, int hi) {
    return lo + static_cast<int>(gen_() % static_cast<std::uint64_t>(hi - lo + 1));
  }

  template <typename T>
  Matrix<T> matrix(int rows, int cols, double scale) {
    Matrix<T> m(rows, cols);
    for (auto& v : m.data) v = static_cast<T>(uniform(scale));
    return m;
  }

  /// Weight init: uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], fan_in = rows
  /// under the tokens-times-weights convention used throughout.
  template <typename T>
  Matrix<T> weight(int rows, int cols) {
    return matrix<T>(rows, cols, 1.0 / std::sqrt(static_cast<double>(rows)));
  }

  template <typename T>
  std::vector<T> vector(int n, double scale) {
    std::vector<T> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = static_cast<T>(uniform(scale));
    return v;
  }

 private:
  std::mt19937_64 gen_;
};

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols != b.rows) {
    throw std::invalid_argument("matmul: shape mismatch " + a.shape() + " x " + b.shape());
  }
  Matrix<T> out(a.rows, b.cols);
  // Tiled over output columns and rows and unrolled by four along k, so a
  // block of accumulator rows stays cache-hot and loads amortize. Per output
  // element the sum still runs over k in ascending order for any tile shape,
  // so results do not depend on the tiling.
  constexpr int jt = 512, it = 8;
  for (int j0 = 0; j0 < b.cols; j0 += jt) {
    const int je = std::min(b.cols, j0 + jt);
    for (int i0 = 0; i0 < a.rows; i0 += it) {
      const int ie = std::min(a.rows, i0 + it);
      int k = 0;
      for (; k + 4 <= a.cols; k += 4) {
        const T* b0 = b.row_ptr(k);
        const T* b1 = b.row_ptr(k + 1);
        const T* b2 = b.row_ptr(k + 2);
        const T* b3 = b.row_ptr(k + 3);
        for (int i = i0; i < ie; ++i) {
          const T* arow = a.row_ptr(i);
          const T a0 = arow[k], a1 = arow[k + 1], a2 = arow[k + 2], a3 = arow[k + 3];
          T* orow = out.row_ptr(i);
          for (int j = j0; j < je; ++j) {
            T acc = orow[j];
            acc += a0 * b0[j];
            acc += a1 * b1[j];
            acc += a2 * b2[j];
            acc += a3 * b3[j];
            orow[j] = acc;
          }
        }
      }
      for (; k < a.cols; ++k) {
        const T* brow = b.row_ptr(k);
        for (int i = i0; i < ie; ++i) {
          const T aik = a(i, k);
          T* orow = out.row_ptr(i);
          for (int j = j0; j < je; ++j) orow[j] += aik * brow[j];
        }
      }
    }
  }
  return out;
}

/// a * b^T without materializing the transpose.
template <typename T>
Matrix<T> matmul_nt(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols != b.cols) {
    throw std::invalid_argument("matmul_nt: inner dim mismatch " + a.shape() + " x " +
                                b.shape() + "^T");
  }
  Matrix<T> out(a.rows, b.rows);
  for (int i = 0; i < a.rows; ++i) {
    const T* arow = a.row_ptr(i);
    T* orow = out.row_ptr(i);
    for (int j = 0; j < b.rows; ++j) {
      const T* brow = b.row_ptr(j);
      T acc = T(0);
      for (int k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
      orow[j] = acc;
    }
  }
  return out;
}

template <typename T>
Matrix<T> transpose(const Matrix<T>& m) {
  Matrix<T> out(m.cols, m.rows);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) out(j, i) = m(i, j);
  return out;
}

template <typename T>
Matrix<T> add(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.rows != b.rows || a.cols != b.cols) {
    throw std::invalid_argument("add: shape mismatch " + a.shape() + " vs " + b.shape());
  }
  Matrix<T> out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
  return out;
}

template <typename T>
void add_inplace(Matrix<T>& a, const Matrix<T>& b) {
  if (a.rows != b.rows || a.cols != b.cols) {
    throw std::invalid_argument("add_inplace: shape mismatch " + a.shape() + " vs " + b.shape());
  }
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

template <typename T>
Matrix<T> scale(const Matrix<T>& m, T s) {
  Matrix<T> out = m;
  for (auto& v : out.data) v *= s;
  return out;
}

/// Row-wise softmax with per-row max subtraction.
template <typename T>
Matrix<T> softmax_rows(const Matrix<T>& m) {
  Matrix<T> out(m.rows, m.cols);
  for (int i = 0; i < m.rows; ++i) {
    const T* in = m.row_ptr(i);
    T* o = out.row_ptr(i);
    T mx = in[0];
    for (int j = 1; j < m.cols; ++j) mx = std::max(mx, in[j]);
    T sum = T(0);
    for (int j = 0; j < m.cols; ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    const T inv = T(1) / sum;
    for (int j = 0; j < m.cols; ++j) o[j] *= inv;
  }
  return out;
}

/// Per-row normalization to mean 0 / variance 1 (population), then affine.
/// gain/bias length must equal m.cols; eps guards constant rows.
template <typename T>
Matrix<T> layer_norm(const Matrix<T>& m, const std::vector<T>& gain, const std::vector<T>& bias,
                     T eps = static_cast<T>(kLayerNormEps)) {
  if (static_cast<int>(gain.size()) != m.cols || static_cast<int>(bias.size()) != m.cols) {
    throw std::invalid_argument("layer_norm: gain/bias length must equal cols (" + m.shape() +
                                ")");
  }
  Matrix<T> out(m.rows, m.cols);
  for (int i = 0; i < m.rows; ++i) {
    const T* in = m.row_ptr(i);
    T* o = out.row_ptr(i);
    T mean = T(0);
    for (int j = 0; j < m.cols; ++j) mean += in[j];
    mean /= static_cast<T>(m.cols);
    T var = T(0);
    for (int j = 0; j < m.cols; ++j) {
      const T d = in[j] - mean;
      var += d * d;
    }
    var /= static_cast<T>(m.cols);
    const T inv = T(1) / std::sqrt(var + eps);
    for (int j = 0; j < m.cols; ++j) o[j] = gain[j] * ((in[j] - mean) * inv) + bias[j];
  }
  return out;
}

template <typename T>
T gelu(T x) {
  return static_cast<T>(0.5) * x * (T(1) + std::erf(x * static_cast<T>(0.7071067811865476)));
}

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
T softplus(T x) {
  if (x > T(30)) return x;
  if (x < T(-30)) return std::exp(x);
  return std::log1p(std::exp(x));
}

}  // namespace memtrack
