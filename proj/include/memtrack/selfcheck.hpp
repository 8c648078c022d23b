#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "memtrack/attention.hpp"
#include "memtrack/config.hpp"
#include "memtrack/fusion.hpp"
#include "memtrack/losses.hpp"
#include "memtrack/matrix.hpp"
#include "memtrack/memory_bank.hpp"
#include "memtrack/perceiver.hpp"
#include "memtrack/tensor.hpp"

namespace memtrack {

/// Outcome of one randomized invariant family.
struct CheckReport {
  std::string name;
  int cases = 0;
  int failures = 0;
  std::string detail;  // first failure, empty when clean

  bool pass() const { return cases > 0 && failures == 0; }

  void fail(const std::string& what) {
    ++failures;
    if (detail.empty()) detail = what;
  }
};

namespace selfcheck_detail {

inline int pick(Rng& rng, std::initializer_list<int> xs) {
  const int i = rng.range(0, static_cast<int>(xs.size()) - 1);
  return *(xs.begin() + i);
}

}  // namespace selfcheck_detail

/// Window partition followed by unpartition restores the map bit for bit.
inline CheckReport check_window_roundtrip(std::uint64_t seed, int cases) {
  CheckReport r{"window partition/unpartition round-trip"};
  Rng rng(seed);
  for (int i = 0; i < cases; ++i) {
    const int wh = rng.range(1, 4);
    const int ww = rng.range(1, 4);
    const int h = wh * rng.range(1, 4);
    const int w = ww * rng.range(1, 4);
    const int c = selfcheck_detail::pick(rng, {4, 8, 12});
    const FeatureMap<double> m =
        from_tokens(TokenSet<double>{rng.matrix<double>(h * w, c, 2.0), Grid{h, w}}, h, w);
    const auto windows = window_partition(m, wh, ww);
    const FeatureMap<double> back = window_unpartition(windows, wh, ww, h, w);
    ++r.cases;
    if (!(back == m)) {
      r.fail("round-trip mismatch at " + std::to_string(h) + "x" + std::to_string(w) +
             " with window " + std::to_string(wh) + "x" + std::to_string(ww));
    }
  }
  return r;
}

/// FIFO eviction against a plain reference queue, including the 7-frame /
/// 16-pointer shape, plus no-mutation of retained entries.
inline CheckReport check_fifo_semantics(std::uint64_t seed, int cases) {
  CheckReport r{"memory bank FIFO semantics"};
  Rng rng(seed);
  for (int i = 0; i < cases; ++i) {
    const int frame_cap = (i % 4 == 0) ? 7 : rng.range(1, 9);
    const int ptr_cap = (i % 4 == 0) ? 16 : rng.range(0, 20);
    const int c = 4;
    MemoryBank<double> bank(frame_cap, ptr_cap);
    std::vector<std::int64_t> ref_frames, ref_ptrs;
    std::vector<FrameMemory<double>> pushed;
    const int pushes = rng.range(1, 24);
    std::int64_t idx = 0;
    for (int pnum = 0; pnum < pushes; ++pnum) {
      idx += rng.range(1, 3);
      FrameMemory<double> fm;
      fm.frame_index = idx;
      if (rng.range(0, 1) == 0) {
        fm.payload =
            from_tokens(TokenSet<double>{rng.matrix<double>(4, c, 1.0), Grid{2, 2}}, 2, 2);
      } else {
        CompressedMemory<double> cm;
        cm.global = rng.matrix<double>(2, c, 1.0);
        cm.spatial = TokenSet<double>{rng.matrix<double>(1, c, 1.0), Grid{1, 1}};
        cm.source_h = 2;
        cm.source_w = 2;
        fm.payload = cm;
      }
      pushed.push_back(fm);
      bank.push(fm, ObjectPointer<double>{rng.vector<double>(c, 1.0), idx});
      ref_frames.push_back(idx);
      if (static_cast<int>(ref_frames.size()) > frame_cap) ref_frames.erase(ref_frames.begin());
      if (ptr_cap > 0) {
        ref_ptrs.push_back(idx);
        if (static_cast<int>(ref_ptrs.size()) > ptr_cap) ref_ptrs.erase(ref_ptrs.begin());
      }
    }
    ++r.cases;
    bool ok = bank.frame_count() == static_cast<int>(ref_frames.size()) &&
              bank.pointer_count() == static_cast<int>(ref_ptrs.size());
    if (ok) {
      int k = 0;
      for (const auto& f : bank.frames()) {
        if (f.frame_index != ref_frames[k]) ok = false;
        // retained entries must be the pushed payloads, unmutated
        const auto& orig = pushed[pushed.size() - ref_frames.size() + k];
        if (!(f.payload == orig.payload)) ok = false;
        ++k;
      }
      k = 0;
      for (const auto& p : bank.pointers()) {
        if (p.frame_index != ref_ptrs[k]) ok = false;
        ++k;
      }
    }
    if (!ok) {
      r.fail("bank state diverged from reference queue (caps " + std::to_string(frame_cap) + "/" +
             std::to_string(ptr_cap) + ")");
    }
  }
  return r;
}

/// Fusing against an empty bank returns the input map bit for bit.
inline CheckReport check_empty_bank_identity(std::uint64_t seed, int cases) {
  CheckReport r{"empty-bank fuse identity"};
  Rng rng(seed);
  for (int i = 0; i < cases; ++i) {
    const int c = selfcheck_detail::pick(rng, {4, 8, 16});
    const int h = selfcheck_detail::pick(rng, {2, 4, 8});
    const int w = selfcheck_detail::pick(rng, {2, 4, 8});
    const int depth = rng.range(1, 2);
    const FeatureMap<double> m =
        from_tokens(TokenSet<double>{rng.matrix<double>(h * w, c, 2.0), Grid{h, w}}, h, w);
    const FusionParams<double> fp = FusionParams<double>::seeded(c, depth, rng);
    const MemoryBank<double> bank(rng.range(1, 7), rng.range(0, 16));
    MacCounts mac;
    const FeatureMap<double> out = fuse(m, bank, fp, &mac);
    ++r.cases;
    if (!(out == m) || mac.total() != 0) r.fail("empty bank did not pass the map through");
  }
  return r;
}

/// compress always yields exactly ng + nl tokens regardless of map size, and
/// the spatial summaries keep the window-grid arrangement.
inline CheckReport check_compress_token_count(std::uint64_t seed, int cases) {
  CheckReport r{"compress token-count contract"};
  Rng rng(seed);
  for (int i = 0; i < cases; ++i) {
    const int c = selfcheck_detail::pick(rng, {4, 8});
    const int wh = rng.range(1, 3);
    const int ww = rng.range(1, 3);
    const int gh = rng.range(1, 3);
    const int gw = rng.range(1, 3);
    const int h = wh * gh;
    const int w = ww * gw;
    const int nl = gh * gw;
    const int ng = rng.range(0, 5);
    const int depth = rng.range(1, 2);
    PerceiverParams<double> p =
        PerceiverParams<double>::seeded(c, ng, nl, Grid{wh, ww}, depth, rng);
    p.use_self_attention = rng.range(0, 1) == 1;
    const FeatureMap<double> m =
        from_tokens(TokenSet<double>{rng.matrix<double>(h * w, c, 1.0), Grid{h, w}}, h, w);
    const CompressedMemory<double> cm = compress(m, p);
    ++r.cases;
    const bool grid_ok = cm.spatial.grid && cm.spatial.grid->h == gh && cm.spatial.grid->w == gw;
    if (cm.token_count() != ng + nl || cm.global.rows != ng || cm.spatial.n() != nl || !grid_ok) {
      r.fail("token count or grid wrong at ng=" + std::to_string(ng) +
             " nl=" + std::to_string(nl));
    }
  }
  return r;
}

/// The four structural invariant families, sized to exceed 1000 cases total.
inline std::vector<CheckReport> run_property_suite(std::uint64_t seed) {
  std::vector<CheckReport> reports;
  reports.push_back(check_window_roundtrip(seed ^ 0x11, 320));
  reports.push_back(check_fifo_semantics(seed ^ 0x22, 400));
  reports.push_back(check_empty_bank_identity(seed ^ 0x33, 120));
  reports.push_back(check_compress_token_count(seed ^ 0x44, 240));
  return reports;
}

/// Verdict of one loss family's finite-difference sweep.
struct GradReport {
  std::string loss;
  int fixtures = 0;
  int checked = 0;  // coordinates compared
  double max_rel_err = 0.0;
  double tol = 1e-5;

  bool pass() const { return fixtures > 0 && max_rel_err < tol; }
};

namespace selfcheck_detail {

inline void fold(GradReport& rep, const GradCheckResult& res) {
  rep.checked += res.checked;
  if (res.max_rel_err > rep.max_rel_err) rep.max_rel_err = res.max_rel_err;
}

inline Matrix<double> binary_mask(Rng& rng, int rows, int cols) {
  Matrix<double> m(rows, cols);
  for (auto& v : m.data) v = rng.range(0, 1);
  return m;
}

/// Logits bounded away from 0 so threshold crossings cannot occur within the
/// finite-difference step.
inline Matrix<double> safe_logits(Rng& rng, int rows, int cols) {
  Matrix<double> m(rows, cols);
  for (auto& v : m.data) {
    const double mag = 0.1 + 1.9 * rng.unit();
    v = rng.range(0, 1) == 1 ? mag : -mag;
  }
  return m;
}

inline Matrix<double> scalar_mat(double v) { return Matrix<double>(1, 1, {v}); }

}  // namespace selfcheck_detail

/// Finite-difference verification of every loss, fixtures_per_loss seeded
/// fixtures each. Composite losses are checked against each differentiable
/// input separately.
inline std::vector<GradReport> run_gradient_suite(std::uint64_t seed, int fixtures_per_loss = 100,
                                                  double h = 1e-5, double tol = 1e-5) {
  if (fixtures_per_loss < 1) {
    throw std::invalid_argument("run_gradient_suite: need at least 1 fixture per loss");
  }
  namespace sd = selfcheck_detail;
  std::vector<GradReport> reports;

  {
    GradReport rep{"dice", 0, 0, 0.0, tol};
    Rng rng(seed ^ 0xd1ce);
    for (int i = 0; i < fixtures_per_loss; ++i) {
      const int rows = rng.range(2, 5), cols = rng.range(2, 5);
      Matrix<double> probs(rows, cols);
      for (auto& v : probs.data) v = 0.05 + 0.9 * rng.unit();
      const Matrix<double> gt = sd::binary_mask(rng, rows, cols);
      sd::fold(rep, grad_check([&](const Matrix<double>& x) { return dice_loss(x, gt); }, probs, h));
      ++rep.fixtures;
    }
    reports.push_back(rep);
  }
  {
    GradReport rep{"focal", 0, 0, 0.0, tol};
    Rng rng(seed ^ 0xf0ca1);
    for (int i = 0; i < fixtures_per_loss; ++i) {
      const int rows = rng.range(2, 5), cols = rng.range(2, 5);
      const Matrix<double> logits = sd::safe_logits(rng, rows, cols);
      const Matrix<double> gt = sd::binary_mask(rng, rows, cols);
      sd::fold(rep, grad_check(
                        [&](const Matrix<double>& x) { return focal_loss(x, gt, 2.0, 0.25); },
                        logits, h));
      ++rep.fixtures;
    }
    reports.push_back(rep);
  }
  {
    GradReport rep{"iou_l1", 0, 0, 0.0, tol};
    Rng rng(seed ^ 0x100);
    for (int i = 0; i < fixtures_per_loss; ++i) {
      const double actual = rng.unit();
      double pred = rng.unit();
      if (std::abs(pred - actual) < 0.05) pred = actual + (pred >= actual ? 0.05 : -0.05);
      sd::fold(rep, grad_check(
                        [&](const Matrix<double>& x) {
                          const auto s = iou_l1_loss(x(0, 0), actual);
                          return ValueGrad<double>{s.value, sd::scalar_mat(s.grad)};
                        },
                        sd::scalar_mat(pred), h));
      ++rep.fixtures;
    }
    reports.push_back(rep);
  }
  {
    GradReport rep{"occlusion_bce", 0, 0, 0.0, tol};
    Rng rng(seed ^ 0x0cc);
    for (int i = 0; i < fixtures_per_loss; ++i) {
      const double logit = rng.uniform(2.0);
      const double y = rng.range(0, 1);
      sd::fold(rep, grad_check(
                        [&](const Matrix<double>& x) {
                          const auto s = occlusion_bce(x(0, 0), y);
                          return ValueGrad<double>{s.value, sd::scalar_mat(s.grad)};
                        },
                        sd::scalar_mat(logit), h));
      ++rep.fixtures;
    }
    reports.push_back(rep);
  }
  {
    GradReport rep{"align_mse", 0, 0, 0.0, tol};
    Rng rng(seed ^ 0xa115e);
    for (int i = 0; i < fixtures_per_loss; ++i) {
      const int n = rng.range(2, 5);
      const int cs = 4 * rng.range(1, 2);
      const bool project = i % 2 == 0;
      const int ct = project ? 4 * rng.range(1, 3) : cs;
      const Matrix<double> student = rng.matrix<double>(n, cs, 1.5);
      const Matrix<double> teacher = rng.matrix<double>(n, ct, 1.5);
      const Matrix<double> proj = rng.weight<double>(cs, ct);
      sd::fold(rep, grad_check(
                        [&](const Matrix<double>& x) {
                          return align_mse(x, teacher, project ? &proj : nullptr);
                        },
                        student, h));
      ++rep.fixtures;
    }
    reports.push_back(rep);
  }

  const LossWeights w;
  {
    GradReport rep{"loss_sam", 0, 0, 0.0, tol};
    Rng rng(seed ^ 0x5a31);
    for (int i = 0; i < fixtures_per_loss; ++i) {
      const int rows = rng.range(2, 4), cols = rng.range(2, 4);
      ModelOutputs<double> out;
      out.mask_logits = sd::safe_logits(rng, rows, cols);
      out.f16 = rng.matrix<double>(3, 4, 1.0);
      out.f_m = Matrix<double>(3, 4);
      GroundTruth<double> gt{sd::binary_mask(rng, rows, cols), true};
      const Matrix<double> teacher = rng.matrix<double>(3, 4, 1.0);
      Matrix<double> probs(rows, cols);
      for (std::size_t k = 0; k < probs.data.size(); ++k) {
        probs.data[k] = sigmoid(out.mask_logits.data[k]);
      }
      const double actual = mask_iou(probs, gt.mask);
      double pred = rng.unit();
      if (std::abs(pred - actual) < 0.05) pred = actual + (pred >= actual ? 0.05 : -0.05);
      out.iou_pred = pred;

      sd::fold(rep, grad_check(
                        [&](const Matrix<double>& x) {
                          ModelOutputs<double> o = out;
                          o.mask_logits = x;
                          const auto l = loss_sam(o, teacher, gt, w);
                          return ValueGrad<double>{l.total, l.grads.mask_logits};
                        },
                        out.mask_logits, h));
      sd::fold(rep, grad_check(
                        [&](const Matrix<double>& x) {
                          ModelOutputs<double> o = out;
                          o.iou_pred = x(0, 0);
                          const auto l = loss_sam(o, teacher, gt, w);
                          return ValueGrad<double>{l.total, sd::scalar_mat(l.grads.iou_pred)};
                        },
                        sd::scalar_mat(out.iou_pred), h));
      sd::fold(rep, grad_check(
                        [&](const Matrix<double>& x) {
                          ModelOutputs<double> o = out;
                          o.f16 = x;
                          const auto l = loss_sam(o, teacher, gt, w);
                          return ValueGrad<double>{l.total, l.grads.f16};
                        },
                        out.f16, h));
      ++rep.fixtures;
    }
    reports.push_back(rep);
  }
  {
    GradReport rep{"loss_sam2", 0, 0, 0.0, tol};
    Rng rng(seed ^ 0x5a32);
    for (int i = 0; i < fixtures_per_loss; ++i) {
      const int rows = rng.range(2, 4), cols = rng.range(2, 4);
      ModelOutputs<double> out;
      out.mask_logits = sd::safe_logits(rng, rows, cols);
      out.occ_logit = rng.uniform(2.0);
      out.f16 = rng.matrix<double>(3, 4, 1.0);
      out.f_m = rng.matrix<double>(3, 4, 1.0);
      TeacherOutputs<double> teacher{rng.matrix<double>(3, 4, 1.0), rng.matrix<double>(3, 4, 1.0)};
      GroundTruth<double> gt{sd::binary_mask(rng, rows, cols), rng.range(0, 1) == 1};
      Matrix<double> probs(rows, cols);
      for (std::size_t k = 0; k < probs.data.size(); ++k) {
        probs.data[k] = sigmoid(out.mask_logits.data[k]);
      }
      const double actual = mask_iou(probs, gt.mask);
      double pred = rng.unit();
      if (std::abs(pred - actual) < 0.05) pred = actual + (pred >= actual ? 0.05 : -0.05);
      out.iou_pred = pred;

      sd::fold(rep, grad_check(
                        [&](const Matrix<double>& x) {
                          ModelOutputs<double> o = out;
                          o.mask_logits = x;
                          const auto l = loss_sam2(o, teacher, gt, w);
                          return ValueGrad<double>{l.total, l.grads.mask_logits};
                        },
                        out.mask_logits, h));
      sd::fold(rep, grad_check(
                        [&](const Matrix<double>& x) {
                          ModelOutputs<double> o = out;
                          o.iou_pred = x(0, 0);
                          const auto l = loss_sam2(o, teacher, gt, w);
                          return ValueGrad<double>{l.total, sd::scalar_mat(l.grads.iou_pred)};
                        },
                        sd::scalar_mat(out.iou_pred), h));
      sd::fold(rep, grad_check(
                        [&](const Matrix<double>& x) {
                          ModelOutputs<double> o = out;
                          o.occ_logit = x(0, 0);
                          const auto l = loss_sam2(o, teacher, gt, w);
                          return ValueGrad<double>{l.total, sd::scalar_mat(l.grads.occ_logit)};
                        },
                        sd::scalar_mat(out.occ_logit), h));
      sd::fold(rep, grad_check(
                        [&](const Matrix<double>& x) {
                          ModelOutputs<double> o = out;
                          o.f16 = x;
                          const auto l = loss_sam2(o, teacher, gt, w);
                          return ValueGrad<double>{l.total, l.grads.f16};
                        },
                        out.f16, h));
      sd::fold(rep, grad_check(
                        [&](const Matrix<double>& x) {
                          ModelOutputs<double> o = out;
                          o.f_m = x;
                          const auto l = loss_sam2(o, teacher, gt, w);
                          return ValueGrad<double>{l.total, l.grads.f_m};
                        },
                        out.f_m, h));
      ++rep.fixtures;
    }
    reports.push_back(rep);
  }
  return reports;
}

}  // namespace memtrack
