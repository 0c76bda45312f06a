#pragma once

// K-layer VAMP / unfolded-VAMP recovery on real-stacked data.
//
// Each layer runs a scaled soft-threshold denoiser, converts its output to
// extrinsic form, runs the LMMSE stage and converts back:
//
//   (xhat_k, v_k)  = eta_sst(r_k, alpha_k / sqrt(gamma_k), 1)
//   rt_k           = (xhat_k - v_k r_k) / (1 - v_k)
//   gt_k           = gamma_k (1 - v_k) / v_k
//   (xt_k, vt_k)   = lmmse(y, rt_k, gt_k, gamma_w_k)
//   r_{k+1}        = (xt_k - vt_k rt_k) / (1 - vt_k)
//   gamma_{k+1}    = gt_k (1 - vt_k) / vt_k
//
// with optional damping theta_k applied to r and gamma. The pseudo-measurement
// handed to the detector is r_{K+1}; the sparse solution is one more denoise of
// it.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "vampcfar/errors.hpp"
#include "vampcfar/signal_model.hpp"

namespace vampcfar {

struct LayerParams {
  double alpha = 1.0;    // threshold in units of the input standard deviation
  double theta = 1.0;    // damping, 1 = none
  double gamma_w = 1.0;  // per-real-component measurement precision
};

enum class Provenance { matched, perturbed, learned };

struct UnfoldedModel {
  std::vector<LayerParams> layers;
  // Only "sst" is implemented.
  std::string denoiser = "sst";
  Provenance provenance = Provenance::matched;
  double perturb_factor = 1.0;
  std::string source_path;
  // Free-form provenance string carried through parameter files.
  std::string provenance_note;

  std::size_t k_layers() const { return layers.size(); }
};

inline void validate(const LayerParams& p, std::size_t layer) {
  const auto where = "layer " + std::to_string(layer + 1) + ": ";
  if (!(p.alpha > 0.0) || !std::isfinite(p.alpha)) {
    throw ValidationError(where + "alpha must be finite and > 0");
  }
  if (!(p.theta > 0.0 && p.theta <= 1.0)) {
    throw ValidationError(where + "theta must lie in (0, 1]");
  }
  if (!(p.gamma_w > 0.0) || !std::isfinite(p.gamma_w)) {
    throw ValidationError(where + "gamma_w must be finite and > 0");
  }
}

inline void validate(const UnfoldedModel& model) {
  if (model.layers.empty()) throw ValidationError("model has no layers");
  if (model.denoiser != "sst") {
    throw ValidationError("unsupported denoiser '" + model.denoiser + "'");
  }
  for (std::size_t k = 0; k < model.layers.size(); ++k) validate(model.layers[k], k);
}

struct VampState {
  RealVector r_k;
  double gamma_k = 0.0;
  double v_denoise = 0.0;
  // 1 / gt_K of the last layer.
  double sigma2_tilde_K = 0.0;
  // LMMSE divergence of the last layer.
  double v_tilde_K = 0.0;
};

struct RecoveryOutput {
  RealVector r_ri;
  RealVector xhat_ri;
  double sigma2_vamp = 0.0;
  // NMSE of each layer's denoiser output followed by the final estimate; only
  // filled when ground truth is supplied.
  std::vector<double> layer_nmse;
};

struct Denoised {
  RealVector xhat;
  double divergence = 0.0;
};

// scale * sign(v) * max(|v| - lambda, 0). Entries at or below the threshold
// become exact zeros. The divergence is the a.e. derivative averaged over
// entries: scale * (active count) / len.
inline Denoised eta_sst(const RealVector& v, double lambda, double scale) {
  Denoised out;
  out.xhat.resize(v.size());
  Eigen::Index active = 0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double mag = std::abs(v[i]) - lambda;
    if (mag > 0.0) {
      out.xhat[i] = scale * std::copysign(mag, v[i]);
      ++active;
    } else {
      out.xhat[i] = 0.0;
    }
  }
  out.divergence = v.size() == 0 ? 0.0
                                 : scale * static_cast<double>(active) /
                                       static_cast<double>(v.size());
  return out;
}

struct LmmseResult {
  RealVector x_tilde;
  double v_tilde = 0.0;
};

// Solves (gamma_w A^T A + gamma_t I) x = gamma_w A^T y + gamma_t r for a fixed
// A, reusing a spectral factorization of A^T A across calls. Immutable after
// construction, so one instance can be shared by concurrent recoveries.
class LmmseSolver {
 public:
  // Any real matrix. Eigendecomposes the smaller of A A^T and A^T A.
  static LmmseSolver general(const RealMatrix& a) {
    LmmseSolver s;
    s.a_ = a;
    const auto rows = a.rows();
    const auto cols = a.cols();
    if (rows <= cols) {
      const RealMatrix gram = a * a.transpose();
      Eigen::SelfAdjointEigenSolver<RealMatrix> eig(gram);
      if (eig.info() != Eigen::Success) {
        throw NumericFailure("LmmseSolver: eigendecomposition failed");
      }
      const RealVector& lam = eig.eigenvalues();
      const double tol = std::max(lam.maxCoeff(), 0.0) *
                         static_cast<double>(cols) *
                         std::numeric_limits<double>::epsilon();
      std::vector<Eigen::Index> keep;
      for (Eigen::Index i = 0; i < lam.size(); ++i) {
        if (lam[i] > tol) keep.push_back(i);
      }
      s.eig_.resize(static_cast<Eigen::Index>(keep.size()));
      s.basis_.resize(static_cast<Eigen::Index>(keep.size()), cols);
      for (std::size_t j = 0; j < keep.size(); ++j) {
        const auto i = keep[j];
        const auto row = static_cast<Eigen::Index>(j);
        s.eig_[row] = lam[i];
        s.basis_.row(row) =
            (eig.eigenvectors().col(i).transpose() * a) / std::sqrt(lam[i]);
      }
    } else {
      const RealMatrix gram = a.transpose() * a;
      Eigen::SelfAdjointEigenSolver<RealMatrix> eig(gram);
      if (eig.info() != Eigen::Success) {
        throw NumericFailure("LmmseSolver: eigendecomposition failed");
      }
      s.eig_ = eig.eigenvalues().cwiseMax(0.0);
      s.basis_ = eig.eigenvectors().transpose();
    }
    return s;
  }

  // A with orthonormal rows (A A^T = I), e.g. a stacked partial-Fourier
  // matrix. A^T A is then a projector and no factorization is needed.
  static LmmseSolver row_orthonormal(const RealMatrix& a) {
    LmmseSolver s;
    s.a_ = a;
    s.row_orthonormal_ = true;
    return s;
  }

  static LmmseSolver for_matrix(const ObservationMatrix& a) {
    return row_orthonormal(a.stacked);
  }

  Eigen::Index rows() const { return a_.rows(); }
  Eigen::Index cols() const { return a_.cols(); }
  const RealMatrix& matrix() const { return a_; }

  // Residual form x = r + (gw A^T A + gt I)^-1 gw A^T (y - A r), which stays
  // accurate when gw is many orders of magnitude above gt.
  LmmseResult solve(const RealVector& y, const RealVector& r_tilde,
                    double gamma_tilde, double gamma_w) const {
    if (y.size() != rows() || r_tilde.size() != cols()) {
      throw InvalidDimension("lmmse: dimension mismatch");
    }
    if (!(gamma_tilde > 0.0) || !(gamma_w > 0.0)) {
      throw NumericFailure("lmmse: precisions must be > 0");
    }
    const double n = static_cast<double>(cols());
    const RealVector residual = y - a_ * r_tilde;
    LmmseResult out;
    if (row_orthonormal_) {
      // A^T A is the projector onto the row space, where the system matrix
      // acts as (gw + gt).
      out.x_tilde = r_tilde + (gamma_w / (gamma_w + gamma_tilde)) *
                                  (a_.transpose() * residual);
      const double rank = static_cast<double>(rows());
      out.v_tilde = gamma_tilde / n *
                    ((n - rank) / gamma_tilde + rank / (gamma_w + gamma_tilde));
    } else {
      // gw A^T (y - A r) lies in the row space spanned by basis_.
      RealVector coef = basis_ * (gamma_w * (a_.transpose() * residual));
      double trace = (n - static_cast<double>(eig_.size())) / gamma_tilde;
      for (Eigen::Index i = 0; i < eig_.size(); ++i) {
        const double inv = 1.0 / (gamma_w * eig_[i] + gamma_tilde);
        coef[i] *= inv;
        trace += inv;
      }
      out.x_tilde = r_tilde + basis_.transpose() * coef;
      out.v_tilde = gamma_tilde / n * trace;
    }
    return out;
  }

 private:
  RealMatrix a_;
  RealMatrix basis_;
  RealVector eig_;
  bool row_orthonormal_ = false;
};

inline LmmseResult lmmse_stage(const RealMatrix& a_ri, const RealVector& y_ri,
                               const RealVector& r_tilde, double gamma_tilde,
                               double gamma_w) {
  return LmmseSolver::general(a_ri).solve(y_ri, r_tilde, gamma_tilde, gamma_w);
}

inline double nmse(const RealVector& estimate, const RealVector& truth) {
  return (estimate - truth).squaredNorm() / truth.squaredNorm();
}

namespace detail {

inline void require_finite(const RealVector& v, double gamma, std::size_t layer,
                           const char* what) {
  if (!v.allFinite() || !std::isfinite(gamma)) {
    throw NumericFailure(std::string("vamp: non-finite ") + what + " at layer " +
                         std::to_string(layer + 1));
  }
}

inline void require_divergence(double v, std::size_t layer, const char* stage) {
  if (!(v > 0.0 && v < 1.0)) {
    throw DegenerateDivergence(std::string("vamp: ") + stage +
                               " divergence " + std::to_string(v) +
                               " outside (0,1) at layer " +
                               std::to_string(layer + 1));
  }
}

}  // namespace detail

struct VampResult {
  RecoveryOutput output;
  VampState state;
};

// Warm start: r_1 = A^T y and, unless init_gamma is given, gamma_1 = 1 / var(r_1)
// with var the mean-subtracted population variance.
//
// An all-zero y is the zero fixed point: r_ri = xhat_ri = 0 and the variance
// fields are reported as 0 (downstream thresholding rejects them).
inline VampResult vamp_unfold(const RealVector& y_ri, const LmmseSolver& solver,
                              const UnfoldedModel& model,
                              std::optional<double> init_gamma = std::nullopt,
                              const RealVector* truth_ri = nullptr) {
  validate(model);
  if (y_ri.size() != solver.rows()) {
    throw InvalidDimension("vamp_unfold: y has length " +
                           std::to_string(y_ri.size()) + ", matrix has " +
                           std::to_string(solver.rows()) + " rows");
  }
  if (truth_ri && truth_ri->size() != solver.cols()) {
    throw InvalidDimension("vamp_unfold: ground truth length mismatch");
  }
  const auto dim = solver.cols();
  VampResult res;
  if (!y_ri.allFinite()) throw NumericFailure("vamp_unfold: non-finite input");
  if (y_ri.isZero(0.0)) {
    res.output.r_ri = RealVector::Zero(dim);
    res.output.xhat_ri = RealVector::Zero(dim);
    res.state.r_k = res.output.r_ri;
    return res;
  }

  RealVector r = solver.matrix().transpose() * y_ri;
  double gamma = 0.0;
  if (init_gamma) {
    gamma = *init_gamma;
  } else {
    const double mean = r.mean();
    const double var = (r.array() - mean).square().mean();
    gamma = 1.0 / var;
  }
  if (!(gamma > 0.0) || !std::isfinite(gamma)) {
    throw NumericFailure("vamp_unfold: invalid initial precision");
  }

  double gamma_tilde = 0.0;
  double v_tilde = 0.0;
  double v_denoise = 0.0;
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    const auto& p = model.layers[k];
    Denoised d = eta_sst(r, p.alpha / std::sqrt(gamma), 1.0);
    detail::require_divergence(d.divergence, k, "denoiser");
    if (truth_ri) res.output.layer_nmse.push_back(nmse(d.xhat, *truth_ri));
    v_denoise = d.divergence;

    const RealVector r_tilde = (d.xhat - v_denoise * r) / (1.0 - v_denoise);
    gamma_tilde = gamma * (1.0 - v_denoise) / v_denoise;
    detail::require_finite(r_tilde, gamma_tilde, k, "denoiser extrinsic");

    LmmseResult l = solver.solve(y_ri, r_tilde, gamma_tilde, p.gamma_w);
    v_tilde = l.v_tilde;
    detail::require_divergence(v_tilde, k, "lmmse");

    RealVector r_next = (l.x_tilde - v_tilde * r_tilde) / (1.0 - v_tilde);
    double gamma_next = gamma_tilde * (1.0 - v_tilde) / v_tilde;
    if (p.theta < 1.0) {
      r_next = p.theta * r_next + (1.0 - p.theta) * r;
      gamma_next = p.theta * gamma_next + (1.0 - p.theta) * gamma;
    }
    detail::require_finite(r_next, gamma_next, k, "lmmse extrinsic");
    if (!(gamma_next > 0.0)) {
      throw NumericFailure("vamp_unfold: non-positive precision at layer " +
                           std::to_string(k + 1));
    }
    r = std::move(r_next);
    gamma = gamma_next;
  }

  const double final_alpha = model.layers.back().alpha;
  Denoised final_est = eta_sst(r, final_alpha / std::sqrt(gamma), 1.0);
  if (truth_ri) res.output.layer_nmse.push_back(nmse(final_est.xhat, *truth_ri));

  res.state.r_k = r;
  res.state.gamma_k = gamma;
  res.state.v_denoise = v_denoise;
  res.state.sigma2_tilde_K = 1.0 / gamma_tilde;
  res.state.v_tilde_K = v_tilde;

  res.output.r_ri = std::move(r);
  res.output.xhat_ri = std::move(final_est.xhat);
  res.output.sigma2_vamp =
      res.state.sigma2_tilde_K * v_tilde / (1.0 - v_tilde);
  return res;
}

inline VampResult vamp_unfold(const RealVector& y_ri, const ObservationMatrix& a,
                              const UnfoldedModel& model,
                              std::optional<double> init_gamma = std::nullopt,
                              const RealVector* truth_ri = nullptr) {
  return vamp_unfold(y_ri, LmmseSolver::for_matrix(a), model, init_gamma,
                     truth_ri);
}

// Traditional VAMP estimate of the pseudo-measurement error variance:
// sigma2_tilde_K * v_tilde_K / (1 - v_tilde_K).
inline double sigma2_vamp(const VampState& state) {
  if (!(state.v_tilde_K < 1.0)) {
    throw DegenerateDivergence("sigma2_vamp: v_tilde_K must be < 1");
  }
  if (state.v_tilde_K < 0.0 || state.sigma2_tilde_K < 0.0) {
    throw ValidationError("sigma2_vamp: negative intermediate variance");
  }
  return state.sigma2_tilde_K * state.v_tilde_K / (1.0 - state.v_tilde_K);
}

}  // namespace vampcfar
