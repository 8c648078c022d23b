#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "memtrack/matrix.hpp"

namespace memtrack {

inline constexpr double kDiceEps = 1e-6;

/// Term weights for the two training stages. dice/focal/iou/occlusion weigh
/// the task terms; gamma scales the stage-1 feature-alignment term; alpha and
/// beta scale the stage-2 frame-feature and fused-feature alignment terms.
struct LossWeights {
  double dice = 20.0;
  double focal = 1.0;
  double iou = 1.0;
  double occlusion = 1.0;
  double gamma = 1.0;
  double alpha = 1.0;
  double beta = 1.0;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
};

template <typename T>
struct ValueGrad {
  T value = T(0);
  Matrix<T> grad;
};

template <typename T>
struct ScalarGrad {
  T value = T(0);
  T grad = T(0);
};

namespace detail {

template <typename T>
void check_same_shape(const Matrix<T>& a, const Matrix<T>& b, const char* what) {
  if (a.rows != b.rows || a.cols != b.cols) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape() + " vs " +
                                b.shape());
  }
}

template <typename T>
void check_binary(const Matrix<T>& m, const char* what) {
  for (const T v : m.data) {
    if (v != T(0) && v != T(1)) {
      throw std::invalid_argument(std::string(what) + ": target entries must be 0 or 1");
    }
  }
}

}  // namespace detail

/// Soft overlap loss over mask probabilities:
///   L = 1 - 2*sum(p*g) / (sum(p) + sum(g) + eps)
template <typename T>
ValueGrad<T> dice_loss(const Matrix<T>& probs, const Matrix<T>& gt) {
  detail::check_same_shape(probs, gt, "dice_loss");
  detail::check_binary(gt, "dice_loss");
  T num = T(0), denom = static_cast<T>(kDiceEps);
  for (std::size_t i = 0; i < probs.data.size(); ++i) {
    num += T(2) * probs.data[i] * gt.data[i];
    denom += probs.data[i] + gt.data[i];
  }
  ValueGrad<T> out;
  out.value = T(1) - num / denom;
  out.grad = Matrix<T>(probs.rows, probs.cols);
  const T inv_d2 = T(1) / (denom * denom);
  for (std::size_t i = 0; i < probs.data.size(); ++i) {
    out.grad.data[i] = -(T(2) * gt.data[i] * denom - num) * inv_d2;
  }
  return out;
}

/// Mean focal loss over mask logits:
///   per element, q = sigma(s*z) with s = +1 for positives and -1 otherwise,
///   loss = -alpha_t * (1-q)^gamma * ln(q).
template <typename T>
ValueGrad<T> focal_loss(const Matrix<T>& logits, const Matrix<T>& gt, T gamma = T(2),
                        T alpha = T(0.25)) {
  detail::check_same_shape(logits, gt, "focal_loss");
  detail::check_binary(gt, "focal_loss");
  ValueGrad<T> out;
  out.grad = Matrix<T>(logits.rows, logits.cols);
  const T inv_n = T(1) / static_cast<T>(logits.data.size());
  for (std::size_t i = 0; i < logits.data.size(); ++i) {
    const T s = gt.data[i] == T(1) ? T(1) : T(-1);
    const T at = gt.data[i] == T(1) ? alpha : T(1) - alpha;
    const T u = s * logits.data[i];
    const T q = sigmoid(u);
    const T one_minus_q = sigmoid(-u);
    const T log_q = -softplus(-u);
    const T pow_g = std::pow(one_minus_q, gamma);
    out.value += -at * pow_g * log_q * inv_n;
    out.grad.data[i] =
        s * at * pow_g * (gamma * q * log_q - one_minus_q) * inv_n;
  }
  return out;
}

/// L1 between the predicted mask quality and the measured overlap.
/// The measured value is treated as a constant of the prediction.
template <typename T>
ScalarGrad<T> iou_l1_loss(T predicted, T actual) {
  ScalarGrad<T> out;
  out.value = std::abs(predicted - actual);
  out.grad = predicted >= actual ? T(1) : T(-1);
  return out;
}

/// Intersection-over-union of the thresholded probability mask against a
/// binary target. An empty union counts as a perfect match.
template <typename T>
T mask_iou(const Matrix<T>& probs, const Matrix<T>& gt, T threshold = T(0.5)) {
  detail::check_same_shape(probs, gt, "mask_iou");
  std::int64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < probs.data.size(); ++i) {
    const bool p = probs.data[i] >= threshold;
    const bool g = gt.data[i] >= T(0.5);
    inter += p && g;
    uni += p || g;
  }
  if (uni == 0) return T(1);
  return static_cast<T>(inter) / static_cast<T>(uni);
}

/// Binary cross entropy with logits for the visibility head:
///   L = softplus(z) - y*z, dL/dz = sigma(z) - y.
template <typename T>
ScalarGrad<T> occlusion_bce(T logit, T visible) {
  if (visible != T(0) && visible != T(1)) {
    throw std::invalid_argument("occlusion_bce: target must be 0 or 1");
  }
  ScalarGrad<T> out;
  out.value = softplus(logit) - visible * logit;
  out.grad = sigmoid(logit) - visible;
  return out;
}

/// Mean squared error between (optionally projected) student features and
/// teacher features. Gradient is with respect to the student.
template <typename T>
ValueGrad<T> align_mse(const Matrix<T>& student, const Matrix<T>& teacher,
                       const Matrix<T>* proj = nullptr) {
  Matrix<T> mapped = proj ? matmul(student, *proj) : student;
  detail::check_same_shape(mapped, teacher, "align_mse");
  const T inv_n = T(1) / static_cast<T>(mapped.data.size());
  ValueGrad<T> out;
  Matrix<T> resid(mapped.rows, mapped.cols);
  for (std::size_t i = 0; i < mapped.data.size(); ++i) {
    const T r = mapped.data[i] - teacher.data[i];
    resid.data[i] = r;
    out.value += r * r * inv_n;
  }
  Matrix<T> g = proj ? matmul_nt(resid, *proj) : resid;
  out.grad = scale(g, T(2) * inv_n);
  return out;
}

/// Everything the supervised heads produce for one frame, in token form.
template <typename T>
struct ModelOutputs {
  Matrix<T> mask_logits;  // mask resolution
  T iou_pred = T(0);
  T occ_logit = T(0);
  Matrix<T> f16;  // frame feature tokens
  Matrix<T> f_m;  // memory-conditioned feature tokens
};

template <typename T>
struct TeacherOutputs {
  Matrix<T> f16;
  Matrix<T> f_m;
};

template <typename T>
struct GroundTruth {
  Matrix<T> mask;  // binary, same shape as mask_logits
  bool visible = true;
};

template <typename T>
struct LossGrads {
  Matrix<T> mask_logits;
  T iou_pred = T(0);
  T occ_logit = T(0);
  Matrix<T> f16;
  Matrix<T> f_m;
};

template <typename T>
struct LossBreakdown {
  T total = T(0);
  T dice = T(0);
  T focal = T(0);
  T iou = T(0);
  T occlusion = T(0);
  T align_f16 = T(0);
  T align_fm = T(0);
  LossGrads<T> grads;
};

namespace detail {

/// Shared mask/iou terms: weighted dice over sigmoid(logits), focal over
/// logits, and L1 on the quality prediction against the measured overlap.
template <typename T>
void add_task_terms(const ModelOutputs<T>& out, const GroundTruth<T>& gt, const LossWeights& w,
                    LossBreakdown<T>& acc) {
  Matrix<T> probs(out.mask_logits.rows, out.mask_logits.cols);
  for (std::size_t i = 0; i < probs.data.size(); ++i) {
    probs.data[i] = sigmoid(out.mask_logits.data[i]);
  }
  const auto dice = dice_loss(probs, gt.mask);
  const auto focal =
      focal_loss(out.mask_logits, gt.mask, static_cast<T>(w.focal_gamma),
                 static_cast<T>(w.focal_alpha));
  const T actual = mask_iou(probs, gt.mask);
  const auto iou = iou_l1_loss(out.iou_pred, actual);

  acc.dice = dice.value;
  acc.focal = focal.value;
  acc.iou = iou.value;
  acc.grads.mask_logits = Matrix<T>(out.mask_logits.rows, out.mask_logits.cols);
  for (std::size_t i = 0; i < probs.data.size(); ++i) {
    const T dsig = probs.data[i] * (T(1) - probs.data[i]);
    acc.grads.mask_logits.data[i] = static_cast<T>(w.dice) * dice.grad.data[i] * dsig +
                                    static_cast<T>(w.focal) * focal.grad.data[i];
  }
  acc.grads.iou_pred = static_cast<T>(w.iou) * iou.grad;
  acc.total += static_cast<T>(w.dice) * dice.value + static_cast<T>(w.focal) * focal.value +
               static_cast<T>(w.iou) * iou.value;
}

}  // namespace detail

/// Stage-1 objective: task terms plus gamma-weighted alignment of the frame
/// features to the teacher's. No visibility term.
template <typename T>
LossBreakdown<T> loss_sam(const ModelOutputs<T>& out, const Matrix<T>& teacher_f16,
                          const GroundTruth<T>& gt, const LossWeights& w,
                          const Matrix<T>* proj_f16 = nullptr) {
  LossBreakdown<T> acc;
  detail::add_task_terms(out, gt, w, acc);
  const auto align = align_mse(out.f16, teacher_f16, proj_f16);
  acc.align_f16 = align.value;
  acc.grads.f16 = scale(align.grad, static_cast<T>(w.gamma));
  acc.grads.f_m = Matrix<T>(out.f_m.rows, out.f_m.cols);
  acc.total += static_cast<T>(w.gamma) * align.value;
  return acc;
}

/// Stage-2 objective: task terms, the visibility term, and alignment of both
/// the frame features (alpha) and the memory-conditioned features (beta).
template <typename T>
LossBreakdown<T> loss_sam2(const ModelOutputs<T>& out, const TeacherOutputs<T>& teacher,
                           const GroundTruth<T>& gt, const LossWeights& w,
                           const Matrix<T>* proj_f16 = nullptr,
                           const Matrix<T>* proj_fm = nullptr) {
  LossBreakdown<T> acc;
  detail::add_task_terms(out, gt, w, acc);
  const auto occ = occlusion_bce(out.occ_logit, gt.visible ? T(1) : T(0));
  acc.occlusion = occ.value;
  acc.grads.occ_logit = static_cast<T>(w.occlusion) * occ.grad;
  acc.total += static_cast<T>(w.occlusion) * occ.value;

  const auto a16 = align_mse(out.f16, teacher.f16, proj_f16);
  acc.align_f16 = a16.value;
  acc.grads.f16 = scale(a16.grad, static_cast<T>(w.alpha));
  acc.total += static_cast<T>(w.alpha) * a16.value;

  const auto am = align_mse(out.f_m, teacher.f_m, proj_fm);
  acc.align_fm = am.value;
  acc.grads.f_m = scale(am.grad, static_cast<T>(w.beta));
  acc.total += static_cast<T>(w.beta) * am.value;
  return acc;
}

/// Central-difference gradient verification. f maps a matrix to a scalar and
/// its analytic gradient; every coordinate of x0 is perturbed by +-h and the
/// relative error |fd - g| / max(|fd|, |g|, 1e-6) is tracked.
struct GradCheckResult {
  double max_rel_err = 0.0;
  int checked = 0;
  int worst_index = -1;
  double worst_fd = 0.0;
  double worst_analytic = 0.0;
};

template <typename F>
GradCheckResult grad_check(F&& f, const Matrix<double>& x0, double h = 1e-5) {
  const ValueGrad<double> base = f(x0);
  if (base.grad.rows != x0.rows || base.grad.cols != x0.cols) {
    throw std::invalid_argument("grad_check: gradient shape " + base.grad.shape() +
                                " does not match input " + x0.shape());
  }
  GradCheckResult r;
  Matrix<double> x = x0;
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const double orig = x.data[i];
    x.data[i] = orig + h;
    const double up = f(x).value;
    x.data[i] = orig - h;
    const double down = f(x).value;
    x.data[i] = orig;
    const double fd = (up - down) / (2.0 * h);
    const double g = base.grad.data[i];
    const double rel = std::abs(fd - g) / std::max({std::abs(fd), std::abs(g), 1e-6});
    ++r.checked;
    if (rel > r.max_rel_err) {
      r.max_rel_err = rel;
      r.worst_index = static_cast<int>(i);
      r.worst_fd = fd;
      r.worst_analytic = g;
    }
  }
  return r;
}

}  // namespace memtrack
