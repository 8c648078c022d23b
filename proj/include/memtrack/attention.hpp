#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "memtrack/matrix.hpp"
#include "memtrack/tensor.hpp"

namespace memtrack {

/// Multiply-accumulate tally. One MAC = one multiply plus one add; softmax,
/// normalization and activation flops are estimated separately by the
/// benchmark module and never enter these counters.
struct MacRecorder {
  std::uint64_t attn = 0;  // score pass plus weighted-sum pass
  std::uint64_t proj = 0;  // q/k/v/output projections
  std::uint64_t mlp = 0;

  std::uint64_t total() const { return attn + proj + mlp; }

  void merge(const MacRecorder& o) {
    attn += o.attn;
    proj += o.proj;
    mlp += o.mlp;
  }
};

/// Intermediate attention tensors, filled on request for inspection tests.
/// Materializes the full n_q x n_kv weight matrix; keep to small shapes.
template <typename T>
struct AttnDebug {
  Matrix<T> weights;  // n_q x n_kv, post-softmax
  Matrix<T> values;   // n_kv x c, projected values
  Matrix<T> context;  // n_q x c, weights * values before the output projection
};

/// Single-head pre-norm attention parameters. Seeding order is fixed
/// (wq, wk, wv, wo) so a shared Rng reproduces identical layers.
template <typename T>
struct AttnParams {
  Matrix<T> wq, wk, wv, wo;  // each c x c
  std::vector<T> ln_q_gain, ln_q_bias;
  std::vector<T> ln_kv_gain, ln_kv_bias;

  static AttnParams seeded(int c, Rng& rng) {
    AttnParams p;
    p.wq = rng.template weight<T>(c, c);
    p.wk = rng.template weight<T>(c, c);
    p.wv = rng.template weight<T>(c, c);
    p.wo = rng.template weight<T>(c, c);
    p.ln_q_gain.assign(c, T(1));
    p.ln_q_bias.assign(c, T(0));
    p.ln_kv_gain.assign(c, T(1));
    p.ln_kv_bias.assign(c, T(0));
    return p;
  }

  int channels() const { return wq.rows; }
};

/// Two-layer transformer MLP with hidden width 4c and erf GELU.
template <typename T>
struct MlpParams {
  Matrix<T> w1;  // c x 4c
  Matrix<T> w2;  // 4c x c
  std::vector<T> b1, b2;
  std::vector<T> ln_gain, ln_bias;

  static MlpParams seeded(int c, Rng& rng) {
    MlpParams p;
    p.w1 = rng.template weight<T>(c, 4 * c);
    p.w2 = rng.template weight<T>(4 * c, c);
    p.b1.assign(static_cast<std::size_t>(4) * c, T(0));
    p.b2.assign(static_cast<std::size_t>(c), T(0));
    p.ln_gain.assign(c, T(1));
    p.ln_bias.assign(c, T(0));
    return p;
  }

  int channels() const { return w1.rows; }
};

// Query rows are processed in blocks so a dense memory bank never
// materializes the full score matrix (n_q x n_kv can reach 4096 x 28688).
inline constexpr int kQueryBlock = 64;

/// Residual single-head cross attention:
///   out = queries + softmax(LN(queries)Wq (LN(kv)Wk)^T / sqrt(c)) LN(kv)Wv Wo
/// Records 2*n_q*n_kv*c attention MACs and (2*n_q + 2*n_kv)*c^2 projection MACs.
template <typename T>
Matrix<T> cross_attention(const Matrix<T>& queries, const Matrix<T>& kv, const AttnParams<T>& p,
                          MacRecorder* mac = nullptr, AttnDebug<T>* debug = nullptr) {
  const int c = p.channels();
  if (p.wq.cols != c || p.wk.rows != c || p.wk.cols != c || p.wv.rows != c || p.wv.cols != c ||
      p.wo.rows != c || p.wo.cols != c) {
    throw std::invalid_argument("cross_attention: projection weights must all be " +
                                std::to_string(c) + "x" + std::to_string(c));
  }
  if (queries.cols != c || kv.cols != c) {
    throw std::invalid_argument("cross_attention: channel mismatch, queries " + queries.shape() +
                                ", kv " + kv.shape() + ", weights " + p.wq.shape());
  }
  if (kv.rows == 0) throw std::invalid_argument("cross_attention: empty key/value set");
  if (queries.rows == 0) throw std::invalid_argument("cross_attention: empty query set");

  const int nq = queries.rows;
  const int nkv = kv.rows;

  const Matrix<T> qn = layer_norm(queries, p.ln_q_gain, p.ln_q_bias);
  const Matrix<T> kvn = layer_norm(kv, p.ln_kv_gain, p.ln_kv_bias);
  Matrix<T> q = matmul(qn, p.wq);
  const Matrix<T> k = matmul(kvn, p.wk);
  const Matrix<T> v = matmul(kvn, p.wv);

  const T inv_sqrt_c = T(1) / std::sqrt(static_cast<T>(c));
  for (auto& x : q.data) x *= inv_sqrt_c;

  if (debug) {
    debug->weights = Matrix<T>(nq, nkv);
    debug->values = v;
  }

  // c x n_kv keys keep the score inner loop contiguous over n_kv
  const Matrix<T> kt = transpose(k);
  Matrix<T> ctx(nq, c);
  for (int i0 = 0; i0 < nq; i0 += kQueryBlock) {
    const int ib = std::min(kQueryBlock, nq - i0);
    Matrix<T> qb(ib, c);
    std::copy(q.row_ptr(i0), q.row_ptr(i0) + static_cast<std::size_t>(ib) * c, qb.data.begin());
    const Matrix<T> w = softmax_rows(matmul(qb, kt));
    if (debug) {
      std::copy(w.data.begin(), w.data.end(), debug->weights.row_ptr(i0));
    }
    const Matrix<T> cb = matmul(w, v);
    std::copy(cb.data.begin(), cb.data.end(), ctx.row_ptr(i0));
  }
  if (debug) debug->context = ctx;

  Matrix<T> out = matmul(ctx, p.wo);
  add_inplace(out, queries);

  if (mac) {
    mac->attn += 2ull * nq * nkv * c;
    mac->proj += (2ull * nq + 2ull * nkv) * c * c;
  }
  return out;
}

template <typename T>
Matrix<T> self_attention(const Matrix<T>& tokens, const AttnParams<T>& p,
                         MacRecorder* mac = nullptr, AttnDebug<T>* debug = nullptr) {
  return cross_attention(tokens, tokens, p, mac, debug);
}

/// Residual pre-norm MLP: x + GELU(LN(x) w1 + b1) w2 + b2.
/// Records 8*n*c^2 MACs.
template <typename T>
Matrix<T> mlp_forward(const Matrix<T>& x, const MlpParams<T>& p, MacRecorder* mac = nullptr) {
  const int c = p.channels();
  if (x.cols != c || p.w1.cols != 4 * c || p.w2.rows != 4 * c || p.w2.cols != c ||
      static_cast<int>(p.b1.size()) != 4 * c || static_cast<int>(p.b2.size()) != c) {
    throw std::invalid_argument("mlp_forward: inconsistent shapes, x " + x.shape() + ", w1 " +
                                p.w1.shape() + ", w2 " + p.w2.shape());
  }
  Matrix<T> h = matmul(layer_norm(x, p.ln_gain, p.ln_bias), p.w1);
  for (int i = 0; i < h.rows; ++i) {
    T* row = h.row_ptr(i);
    for (int j = 0; j < h.cols; ++j) row[j] = gelu(row[j] + p.b1[j]);
  }
  Matrix<T> out = matmul(h, p.w2);
  for (int i = 0; i < out.rows; ++i) {
    T* row = out.row_ptr(i);
    for (int j = 0; j < out.cols; ++j) row[j] += p.b2[j];
  }
  add_inplace(out, x);
  if (mac) mac->mlp += 8ull * x.rows * c * c;
  return out;
}

/// Fixed sinusoidal position encoding for an h x w grid, one row per position
/// in row-major order. The first c/2 channels encode y, the rest encode x;
/// within each half, even channels carry sin and odd channels cos at
/// frequency 10000^(-i / (c/4)) for pair index i.
template <typename T>
Matrix<T> sinusoidal_pe(int h, int w, int c) {
  if (h < 1 || w < 1) throw std::invalid_argument("sinusoidal_pe: empty grid");
  if (c < 4 || c % 4 != 0) {
    throw std::invalid_argument("sinusoidal_pe: channels must be a positive multiple of 4, got " +
                                std::to_string(c));
  }
  const int quarter = c / 4;
  std::vector<double> freq(quarter);
  for (int i = 0; i < quarter; ++i) {
    freq[i] = std::pow(10000.0, -static_cast<double>(i) / quarter);
  }
  Matrix<T> pe(h * w, c);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      T* row = pe.row_ptr(y * w + x);
      for (int i = 0; i < quarter; ++i) {
        row[2 * i] = static_cast<T>(std::sin(y * freq[i]));
        row[2 * i + 1] = static_cast<T>(std::cos(y * freq[i]));
        row[c / 2 + 2 * i] = static_cast<T>(std::sin(x * freq[i]));
        row[c / 2 + 2 * i + 1] = static_cast<T>(std::cos(x * freq[i]));
      }
    }
  }
  return pe;
}

/// Rotary 2D position encoding. Channel pairs (2i, 2i+1) rotate by y * theta_i
/// for the first c/4 pairs and by x * theta_i for the next c/4 pairs, with
/// theta_i = 10000^(-i / (c/4)). Norm-preserving; the origin token is
/// unchanged. Token order must be row-major over the grid.
template <typename T>
Matrix<T> rope_2d(const Matrix<T>& tokens, const Grid& grid) {
  const int c = tokens.cols;
  if (c < 4 || c % 4 != 0) {
    throw std::invalid_argument("rope_2d: channels must be a positive multiple of 4, got " +
                                std::to_string(c));
  }
  if (grid.h * grid.w != tokens.rows) {
    throw std::invalid_argument("rope_2d: grid " + std::to_string(grid.h) + "x" +
                                std::to_string(grid.w) + " does not cover " +
                                std::to_string(tokens.rows) + " tokens");
  }
  const int quarter = c / 4;
  std::vector<double> freq(quarter);
  for (int i = 0; i < quarter; ++i) {
    freq[i] = std::pow(10000.0, -static_cast<double>(i) / quarter);
  }
  Matrix<T> out(tokens.rows, c);
  for (int y = 0; y < grid.h; ++y) {
    for (int x = 0; x < grid.w; ++x) {
      const int idx = y * grid.w + x;
      const T* in = tokens.row_ptr(idx);
      T* o = out.row_ptr(idx);
      for (int i = 0; i < quarter; ++i) {
        const T cy = static_cast<T>(std::cos(y * freq[i]));
        const T sy = static_cast<T>(std::sin(y * freq[i]));
        o[2 * i] = in[2 * i] * cy - in[2 * i + 1] * sy;
        o[2 * i + 1] = in[2 * i] * sy + in[2 * i + 1] * cy;
        const T cx = static_cast<T>(std::cos(x * freq[i]));
        const T sx = static_cast<T>(std::sin(x * freq[i]));
        const int b = c / 2 + 2 * i;
        o[b] = in[b] * cx - in[b + 1] * sx;
        o[b + 1] = in[b] * sx + in[b + 1] * cx;
      }
    }
  }
  return out;
}

template <typename T>
TokenSet<T> rope_2d(const TokenSet<T>& tokens) {
  if (!tokens.grid) throw std::invalid_argument("rope_2d: tokens carry no grid");
  return TokenSet<T>{rope_2d(tokens.tokens, *tokens.grid), tokens.grid};
}

/// Split an h x w map into non-overlapping wh x ww windows, row-major over
/// the window grid; tokens within a window are row-major as well.
template <typename T>
std::vector<TokenSet<T>> window_partition(const FeatureMap<T>& m, int wh, int ww) {
  if (wh < 1 || ww < 1 || m.height % wh != 0 || m.width % ww != 0) {
    throw std::invalid_argument("window_partition: " + std::to_string(wh) + "x" +
                                std::to_string(ww) + " windows do not tile a " + m.shape() +
                                " map");
  }
  const int gh = m.height / wh;
  const int gw = m.width / ww;
  std::vector<TokenSet<T>> out;
  out.reserve(static_cast<std::size_t>(gh) * gw);
  for (int by = 0; by < gh; ++by) {
    for (int bx = 0; bx < gw; ++bx) {
      Matrix<T> t(wh * ww, m.channels);
      for (int dy = 0; dy < wh; ++dy) {
        for (int dx = 0; dx < ww; ++dx) {
          const T* src = &m.at(0, by * wh + dy, bx * ww + dx);
          std::copy(src, src + m.channels, t.row_ptr(dy * ww + dx));
        }
      }
      out.push_back(TokenSet<T>{std::move(t), Grid{wh, ww}});
    }
  }
  return out;
}

/// Inverse of window_partition. Windows carrying wh*ww tokens reassemble the
/// original h x w map; windows reduced to a single summary token produce the
/// (h/wh) x (w/ww) summary map instead.
template <typename T>
FeatureMap<T> window_unpartition(const std::vector<TokenSet<T>>& windows, int wh, int ww, int h,
                                 int w) {
  if (wh < 1 || ww < 1 || h % wh != 0 || w % ww != 0) {
    throw std::invalid_argument("window_unpartition: " + std::to_string(wh) + "x" +
                                std::to_string(ww) + " windows do not tile " + std::to_string(h) +
                                "x" + std::to_string(w));
  }
  const int gh = h / wh;
  const int gw = w / ww;
  if (windows.size() != static_cast<std::size_t>(gh) * gw) {
    throw std::invalid_argument("window_unpartition: expected " + std::to_string(gh * gw) +
                                " windows, got " + std::to_string(windows.size()));
  }
  const int c = windows[0].channels();
  const int n = windows[0].n();
  if (n != wh * ww && n != 1) {
    throw std::invalid_argument("window_unpartition: windows must hold " +
                                std::to_string(wh * ww) + " tokens or 1 summary token, got " +
                                std::to_string(n));
  }
  for (const auto& win : windows) {
    if (win.n() != n || win.channels() != c) {
      throw std::invalid_argument("window_unpartition: ragged window set");
    }
  }
  if (n == 1) {
    FeatureMap<T> m(c, gh, gw);
    for (int by = 0; by < gh; ++by) {
      for (int bx = 0; bx < gw; ++bx) {
        const T* src = windows[static_cast<std::size_t>(by) * gw + bx].tokens.row_ptr(0);
        std::copy(src, src + c, &m.at(0, by, bx));
      }
    }
    return m;
  }
  FeatureMap<T> m(c, h, w);
  for (int by = 0; by < gh; ++by) {
    for (int bx = 0; bx < gw; ++bx) {
      const auto& t = windows[static_cast<std::size_t>(by) * gw + bx].tokens;
      for (int dy = 0; dy < wh; ++dy) {
        for (int dx = 0; dx < ww; ++dx) {
          const T* src = t.row_ptr(dy * ww + dx);
          std::copy(src, src + c, &m.at(0, by * wh + dy, bx * ww + dx));
        }
      }
    }
  }
  return m;
}

}  // namespace memtrack
