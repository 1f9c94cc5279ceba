#pragma once

// Training-free adapters over a labelled support set.
//
//   ZSL = f W^T
//   A   = exp(-beta * (1 - f F^T))                 intra-modal affinity
//   TL  = ZSL + alpha * A L
//   s   = softmax(f W^T / tau), S = softmax(F W^T / tau)
//   M   = KL(s_i || S_j)                            inter-modal divergence
//   TXL = ZSL + alpha * A L + gamma * psi(-M) L
//
// psi affinely maps its input onto the global [min, max] range of A.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "susx/classifier.hpp"
#include "susx/embedding_store.hpp"
#include "susx/error.hpp"
#include "susx/matrix.hpp"

namespace susx {

struct SupportSet {
  Matrix features;                 // m x d
  std::vector<ClassIndex> classes;  // length m
  Matrix one_hot;                   // m x C

  std::size_t size() const noexcept { return features.rows(); }
  std::size_t num_classes() const noexcept { return one_hot.cols(); }
  std::size_t dim() const noexcept { return features.cols(); }

  static SupportSet from_labels(Matrix features, std::vector<ClassIndex> classes, std::size_t num_classes) {
    if (features.rows() == 0) throw Error(ErrorCode::EmptyInput, "support set is empty");
    if (classes.size() != features.rows()) throw Error(ErrorCode::LengthMismatch, "support classes");
    if (num_classes == 0) throw Error(ErrorCode::InvalidArgument, "num_classes must be positive");
    SupportSet s{std::move(features), std::move(classes), Matrix(0, num_classes)};
    s.one_hot = Matrix(s.classes.size(), num_classes);
    for (std::size_t j = 0; j < s.classes.size(); ++j) {
      if (s.classes[j] >= num_classes) throw Error(ErrorCode::LabelOutOfRange, std::to_string(j));
      s.one_hot(j, s.classes[j]) = 1.0;
    }
    return s;
  }
};

struct HyperParams {
  double alpha = 0.1;
  double beta = 1.0;
  double gamma = 0.1;
  double tau = 1.0;
  double epsilon = 1e-12;

  void validate() const {
    auto finite = [](double v) { return std::isfinite(v); };
    if (!finite(alpha) || !finite(beta) || !finite(gamma) || !finite(tau) || !finite(epsilon)) {
      throw Error(ErrorCode::InvalidArgument, "non-finite hyperparameter");
    }
    if (alpha < 0.0) throw Error(ErrorCode::InvalidArgument, "alpha must be >= 0");
    if (beta <= 0.0) throw Error(ErrorCode::InvalidArgument, "beta must be > 0");
    if (gamma < 0.0) throw Error(ErrorCode::InvalidArgument, "gamma must be >= 0");
    if (tau <= 0.0) throw Error(ErrorCode::InvalidArgument, "tau must be > 0");
    if (epsilon <= 0.0) throw Error(ErrorCode::InvalidArgument, "epsilon must be > 0");
  }

  bool operator==(const HyperParams&) const = default;
};

struct AffinityMatrix {
  Matrix values;  // t x m
};

/// softmax(row / tau) per row, with max subtraction.
inline Matrix row_softmax(const Matrix& x, double tau) {
  if (!(tau > 0.0)) throw Error(ErrorCode::InvalidArgument, "tau must be > 0");
  if (!all_finite(x)) throw Error(ErrorCode::NonFiniteValue, "softmax input");
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto in = x.row(i);
    auto o = out.row(i);
    if (in.empty()) continue;
    double peak = in[0];
    for (double v : in) peak = std::max(peak, v);
    double total = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      o[c] = std::exp((in[c] - peak) / tau);
      total += o[c];
    }
    for (double& v : o) v /= total;
  }
  return out;
}

inline AffinityMatrix tip_affinity(const Matrix& f, const Matrix& support_features, double beta) {
  if (f.cols() != support_features.cols()) throw Error(ErrorCode::DimensionMismatch, "test vs support features");
  AffinityMatrix a{multiply_transposed(f, support_features)};
  for (double& v : a.values.data()) v = std::exp(-beta * (1.0 - v));
  return a;
}

/// weights (t x m) * L (m x C): per-class sums of support weights.
inline Matrix attend(const Matrix& weights, const Matrix& one_hot) {
  if (weights.cols() != one_hot.rows()) throw Error(ErrorCode::DimensionMismatch, "affinity vs one-hot");
  return multiply(weights, one_hot);
}

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error(ErrorCode::DimensionMismatch, what);
}

/// zsl + alpha * (A L); the blend used by TIP-Adapter.
inline LogitMatrix tip_logits(const Matrix& zsl, const AffinityMatrix& a, const Matrix& one_hot, double alpha) {
  if (a.values.rows() != zsl.rows()) throw Error(ErrorCode::DimensionMismatch, "affinity rows vs logits");
  Matrix al = attend(a.values, one_hot);
  require_same_shape(al, zsl, "A L vs logits");
  Matrix scores(zsl.rows(), zsl.cols());
  for (std::size_t k = 0; k < scores.size(); ++k) scores.data()[k] = zsl.data()[k] + alpha * al.data()[k];
  return make_logits(std::move(scores));
}

/// Class-probability signature of every row: softmax(X W^T / tau).
inline Matrix signatures(const Matrix& x, const ClassifierWeights& w, double tau) {
  return row_softmax(zeroshot_scores(x, w), tau);
}

inline constexpr double kStochasticTolerance = 1e-6;

inline void require_stochastic(const Matrix& p, const char* what) {
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double total = 0.0;
    for (double v : p.row(i)) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw Error(ErrorCode::NotStochastic, std::string(what) + " row " + std::to_string(i));
      total += v;
    }
    if (std::abs(total - 1.0) > kStochasticTolerance) {
      throw Error(ErrorCode::NotStochastic, std::string(what) + " row " + std::to_string(i));
    }
  }
}

/// M[i][j] = sum_c s[i][c] * ln((s[i][c] + eps) / (S[j][c] + eps)).
/// The logarithms are tabulated once per row, so the t x m sweep is a
/// multiply-add per class.
inline Matrix kl_matrix(const Matrix& test_sig, const Matrix& support_sig, double epsilon) {
  if (test_sig.cols() != support_sig.cols()) throw Error(ErrorCode::DimensionMismatch, "signature widths");
  if (!(epsilon > 0.0)) throw Error(ErrorCode::InvalidArgument, "epsilon must be > 0");
  require_stochastic(test_sig, "test signature");
  require_stochastic(support_sig, "support signature");
  auto log_table = [epsilon](const Matrix& p) {
    Matrix out(p.rows(), p.cols());
    for (std::size_t k = 0; k < p.size(); ++k) out.data()[k] = std::log(p.data()[k] + epsilon);
    return out;
  };
  const Matrix log_s = log_table(test_sig);
  const Matrix log_S = log_table(support_sig);
  Matrix m(test_sig.rows(), support_sig.rows());
  for (std::size_t i = 0; i < test_sig.rows(); ++i) {
    const auto si = test_sig.row(i);
    const auto lsi = log_s.row(i);
    auto mi = m.row(i);
    for (std::size_t j = 0; j < support_sig.rows(); ++j) {
      const auto lSj = log_S.row(j);
      double acc = 0.0;
      for (std::size_t c = 0; c < si.size(); ++c) acc += si[c] * (lsi[c] - lSj[c]);
      mi[j] = acc;
    }
  }
  return m;
}

/// Affine map of `x` onto the global [min, max] of `reference`. A constant
/// input maps to the midpoint of the reference range.
inline Matrix rescale_psi(const Matrix& x, const AffinityMatrix& reference) {
  require_same_shape(x, reference.values, "psi input vs reference");
  if (!all_finite(x) || !all_finite(reference.values)) throw Error(ErrorCode::NonFiniteValue, "psi input");
  Matrix out(x.rows(), x.cols());
  if (x.empty()) return out;
  const auto [lo, hi] = min_max(x);
  const auto [ref_lo, ref_hi] = min_max(reference.values);
  if (hi == lo) {
    const double mid = (ref_lo + ref_hi) / 2.0;
    for (double& v : out.data()) v = mid;
    return out;
  }
  // lerp is exact at both endpoints and monotonic in its parameter.
  const double span = hi - lo;
  for (std::size_t k = 0; k < x.size(); ++k) out.data()[k] = std::lerp(ref_lo, ref_hi, (x.data()[k] - lo) / span);
  return out;
}

inline Matrix negated(Matrix m) {
  for (double& v : m.data()) v = -v;
  return m;
}

/// psi(-M) L: the inter-modal term before its gamma weight.
inline Matrix inter_modal_term(const Matrix& kl, const AffinityMatrix& a, const Matrix& one_hot) {
  return attend(rescale_psi(negated(kl), a), one_hot);
}

/// zsl + alpha * al + gamma * pl, evaluated left to right per entry. Shared by
/// tipx_logits and the factored sweep so both produce identical bits.
inline Matrix blend_scores(const Matrix& zsl, const Matrix& al, const Matrix& pl, double alpha, double gamma) {
  require_same_shape(al, zsl, "A L vs logits");
  require_same_shape(pl, zsl, "psi(-M) L vs logits");
  Matrix scores(zsl.rows(), zsl.cols());
  for (std::size_t k = 0; k < scores.size(); ++k) {
    scores.data()[k] = zsl.data()[k] + alpha * al.data()[k] + gamma * pl.data()[k];
  }
  return scores;
}

inline LogitMatrix tipx_logits(const Matrix& zsl, const AffinityMatrix& a, const Matrix& kl, const Matrix& one_hot,
                               double alpha, double gamma) {
  if (a.values.rows() != zsl.rows()) throw Error(ErrorCode::DimensionMismatch, "affinity rows vs logits");
  const Matrix al = attend(a.values, one_hot);
  const Matrix pl = inter_modal_term(kl, a, one_hot);
  return make_logits(blend_scores(zsl, al, pl, alpha, gamma));
}

inline void require_compatible(const Matrix& f, const ClassifierWeights& w, const SupportSet& support) {
  if (f.cols() != w.dim() || support.dim() != w.dim()) throw Error(ErrorCode::DimensionMismatch, "feature dims");
  if (support.num_classes() != w.num_classes()) throw Error(ErrorCode::DimensionMismatch, "support classes vs classifier");
}

/// End-to-end TIP-Adapter scores for test features `f`.
inline LogitMatrix tip_predict(const Matrix& f, const ClassifierWeights& w, const SupportSet& support,
                               const HyperParams& hp) {
  hp.validate();
  require_compatible(f, w, support);
  const Matrix zsl = zeroshot_scores(f, w);
  return tip_logits(zsl, tip_affinity(f, support.features, hp.beta), support.one_hot, hp.alpha);
}

/// End-to-end TIP-X scores for test features `f`. psi's reference range is
/// taken over all of `f`, so splitting the test set into batches changes the
/// result.
inline LogitMatrix tipx_predict(const Matrix& f, const ClassifierWeights& w, const SupportSet& support,
                                const HyperParams& hp) {
  hp.validate();
  require_compatible(f, w, support);
  const Matrix zsl = zeroshot_scores(f, w);
  const AffinityMatrix a = tip_affinity(f, support.features, hp.beta);
  const Matrix kl = kl_matrix(signatures(f, w, hp.tau), signatures(support.features, w, hp.tau), hp.epsilon);
  return tipx_logits(zsl, a, kl, support.one_hot, hp.alpha, hp.gamma);
}

}  // namespace susx
