#pragma once

// CFAR detection on the VAMP pseudo-measurement.
//
// The per-bin statistic is the magnitude sqrt(r_R^2 + r_I^2). Under H0 it is
// Rayleigh with parameter sigma^2 (the per-real-component error variance), so a
// false alarm rate p maps to the threshold sqrt(-2 sigma^2 ln p).
//
// The Parameter Convergence Detector estimates sigma^2 without trusting VAMP's
// own variance bookkeeping: it takes the sample variance of the stacked
// pseudo-measurement over entries not currently believed to hold a target,
// thresholds at an inner rate pfa0 to refresh that belief, and repeats until
// the variance estimate stops moving. The final threshold is then set at the
// requested rate pfa.

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "vampcfar/errors.hpp"
#include "vampcfar/signal_model.hpp"
#include "vampcfar/vamp_core.hpp"

namespace vampcfar {

using IndexSet = std::vector<std::size_t>;

struct PcdConfig {
  double pfa0 = 1e-3;
  double pfa = 1e-3;
  double c_tol = 1e-5;
  std::size_t m_max = 50;
};

inline void validate(const PcdConfig& cfg) {
  if (!(cfg.pfa0 > 0.0 && cfg.pfa0 < 1.0)) throw ValidationError("pfa0 must lie in (0,1)");
  if (!(cfg.pfa > 0.0 && cfg.pfa < 1.0)) throw ValidationError("pfa must lie in (0,1)");
  if (!(cfg.c_tol > 0.0)) throw ValidationError("c_tol must be > 0");
  if (cfg.m_max < 1) throw ValidationError("m_max must be >= 1");
}

struct PcdTrace {
  std::vector<double> sigma2_per_iter;
  std::vector<std::size_t> l_per_iter;
  // Inner threshold sqrt(-2 sigma2^(m) ln pfa0) for every iteration, including
  // the last one where it is computed but not used.
  std::vector<double> thresholds_per_iter;
  // Bins detected by the inner threshold; one entry per non-final iteration,
  // so this has iterations_used - 1 entries.
  std::vector<IndexSet> detections_per_iter;
  bool converged = false;
  std::size_t iterations_used = 0;
};

struct DetectionResult {
  // Statistic where detected, 0 elsewhere. Length N.
  RealVector xhat_pfa;
  IndexSet detected_bins;
  double threshold = 0.0;
  std::optional<double> sigma2_pcd;
  std::optional<double> sigma2_vamp;
};

inline RealVector test_statistic(const RealVector& r_r, const RealVector& r_i) {
  if (r_r.size() != r_i.size()) {
    throw InvalidDimension("test_statistic: length mismatch");
  }
  return (r_r.array().square() + r_i.array().square()).sqrt().matrix();
}

inline double rayleigh_threshold(double sigma2, double pfa) {
  if (!(sigma2 > 0.0)) {
    throw ValidationError("rayleigh_threshold: sigma2 must be > 0");
  }
  if (!(pfa > 0.0 && pfa <= 1.0)) {
    throw ValidationError("rayleigh_threshold: pfa must lie in (0, 1]");
  }
  // max() folds the -0.0 produced at pfa = 1.
  return std::max(0.0, std::sqrt(-2.0 * sigma2 * std::log(pfa)));
}

inline IndexSet support_set(const RealVector& x) {
  IndexSet s;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (x[i] != 0.0) s.push_back(static_cast<std::size_t>(i));
  }
  return s;
}

struct ResidualVariance {
  double sigma2 = 0.0;
  std::size_t l = 0;
};

// Unbiased, mean-subtracted sample variance of the entries of r_ri whose mask
// value is false.
inline ResidualVariance residual_variance_masked(const RealVector& r_ri,
                                                 const std::vector<bool>& excluded) {
  if (excluded.size() != static_cast<std::size_t>(r_ri.size())) {
    throw InvalidDimension("residual_variance: mask length mismatch");
  }
  ResidualVariance out;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < r_ri.size(); ++i) {
    if (!excluded[static_cast<std::size_t>(i)]) {
      sum += r_ri[i];
      ++out.l;
    }
  }
  if (out.l <= 1) {
    throw DetectorFailure("residual_variance: " + std::to_string(out.l) +
                          " null samples, need at least 2");
  }
  const double mean = sum / static_cast<double>(out.l);
  double ss = 0.0;
  for (Eigen::Index i = 0; i < r_ri.size(); ++i) {
    if (!excluded[static_cast<std::size_t>(i)]) {
      const double d = r_ri[i] - mean;
      ss += d * d;
    }
  }
  out.sigma2 = ss / static_cast<double>(out.l - 1);
  return out;
}

inline ResidualVariance residual_variance(const RealVector& r_ri,
                                          const IndexSet& excluded) {
  std::vector<bool> mask(static_cast<std::size_t>(r_ri.size()), false);
  for (auto i : excluded) {
    if (i >= mask.size()) throw InvalidDimension("residual_variance: index out of range");
    mask[i] = true;
  }
  return residual_variance_masked(r_ri, mask);
}

// stat[i] where stat[i] > threshold (strictly), else 0.
inline RealVector hard_detect(const RealVector& stat, double threshold) {
  return (stat.array() > threshold).select(stat, 0.0);
}

inline RealVector refine_scene(const RealVector& r_r, const RealVector& r_i,
                               const RealVector& detections) {
  if (r_r.size() != r_i.size() || r_r.size() != detections.size()) {
    throw InvalidDimension("refine_scene: length mismatch");
  }
  const auto n = r_r.size();
  RealVector out(2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool hit = detections[i] != 0.0;
    out[i] = hit ? r_r[i] : 0.0;
    out[n + i] = hit ? r_i[i] : 0.0;
  }
  return out;
}

inline DetectionResult make_detection(const RealVector& stat, double threshold) {
  DetectionResult d;
  d.threshold = threshold;
  d.xhat_pfa = hard_detect(stat, threshold);
  d.detected_bins = support_set(d.xhat_pfa);
  return d;
}

struct PcdResult {
  DetectionResult detection;
  PcdTrace trace;
};

inline PcdResult pcd_detect(const RealVector& xhat_ri, const RealVector& r_ri,
                            const RealVector& r_r, const RealVector& r_i,
                            const PcdConfig& cfg) {
  validate(cfg);
  const auto n = r_r.size();
  if (r_i.size() != n || r_ri.size() != 2 * n || xhat_ri.size() != 2 * n) {
    throw InvalidDimension("pcd_detect: inconsistent vector lengths");
  }
  const RealVector stat = test_statistic(r_r, r_i);

  PcdResult res;
  auto& trace = res.trace;
  RealVector current = xhat_ri;
  std::vector<bool> excluded(static_cast<std::size_t>(2 * n));
  for (std::size_t m = 1; m <= cfg.m_max; ++m) {
    for (Eigen::Index i = 0; i < current.size(); ++i) {
      excluded[static_cast<std::size_t>(i)] = current[i] != 0.0;
    }
    ResidualVariance rv;
    try {
      rv = residual_variance_masked(r_ri, excluded);
    } catch (const DetectorFailure& e) {
      throw DetectorFailure("pcd: iteration " + std::to_string(m) + ": " + e.what());
    }
    trace.sigma2_per_iter.push_back(rv.sigma2);
    trace.l_per_iter.push_back(rv.l);
    trace.iterations_used = m;

    double inner_threshold = 0.0;
    try {
      inner_threshold = rayleigh_threshold(rv.sigma2, cfg.pfa0);
    } catch (const ValidationError& e) {
      throw DetectorFailure("pcd: iteration " + std::to_string(m) + ": " + e.what());
    }
    trace.thresholds_per_iter.push_back(inner_threshold);

    bool stop = m == cfg.m_max;
    if (m >= 2) {
      const double prev = trace.sigma2_per_iter[m - 2];
      if (std::abs(rv.sigma2 - prev) / prev < cfg.c_tol) {
        trace.converged = true;
        stop = true;
      }
    }
    if (stop) {
      res.detection = make_detection(stat, rayleigh_threshold(rv.sigma2, cfg.pfa));
      res.detection.sigma2_pcd = rv.sigma2;
      return res;
    }

    const RealVector inner = hard_detect(stat, inner_threshold);
    trace.detections_per_iter.push_back(support_set(inner));
    current = refine_scene(r_r, r_i, inner);
  }
  // m_max >= 1 guarantees the loop returns.
  throw NumericFailure("pcd: loop exited without finalizing");
}

inline PcdResult pcd_detect(const RecoveryOutput& rec, const PcdConfig& cfg) {
  const auto n = rec.r_ri.size() / 2;
  return pcd_detect(rec.xhat_ri, rec.r_ri, rec.r_ri.head(n), rec.r_ri.tail(n), cfg);
}

// Thresholds with the traditional VAMP variance estimate instead.
inline DetectionResult baseline_vamp_detect(const RealVector& stat,
                                            double sigma2_vamp, double pfa) {
  DetectionResult d = make_detection(stat, rayleigh_threshold(sigma2_vamp, pfa));
  d.sigma2_vamp = sigma2_vamp;
  return d;
}

}  // namespace vampcfar
