#pragma once

// Scene, observation-matrix and measurement generation for the sub-Nyquist
// radar model y = A x0 + n, plus the complex <-> real-stacked conversions used
// by the recovery engine.
//
// Conventions:
//   * noise_var is the TOTAL complex per-sample variance; each of the real and
//     imaginary parts carries noise_var / 2.
//   * Bin indices are 0-based inside the library. Anything written for humans
//     (CSV, CLI) adds one.
//   * Every generator takes its own seed; no RNG state is shared, so calls are
//     safe from concurrent Monte-Carlo workers.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "vampcfar/errors.hpp"

namespace vampcfar {

using Complex = std::complex<double>;
using ComplexVector = Eigen::VectorXcd;
using RealVector = Eigen::VectorXd;
using RealMatrix = Eigen::MatrixXd;
using ComplexMatrix = Eigen::MatrixXcd;
using Seed = std::uint64_t;

// Independent generator for (seed, stream). Different streams of the same
// seed are decorrelated through seed_seq mixing.
inline std::mt19937_64 make_rng(Seed seed, std::uint32_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                    static_cast<std::uint32_t>(seed >> 32), stream,
                    0x9e3779b9u};
  return std::mt19937_64(seq);
}

struct Scene {
  std::size_t n = 0;
  ComplexVector amplitudes;
  // Sorted, 0-based.
  std::vector<std::size_t> support;
  std::optional<double> per_target_snr_db;
  double noise_var = 1.0;
};

struct ObservationMatrix {
  std::size_t m = 0;
  std::size_t n = 0;
  ComplexMatrix entries;
  std::vector<std::size_t> selected_rows;
  // [[Re(A), -Im(A)], [Im(A), Re(A)]], 2M x 2N.
  RealMatrix stacked;
};

struct Measurement {
  ComplexVector complex_values;
  RealVector stacked;
  double noise_var = 0.0;
  Seed seed = 0;
};

inline RealVector stack_complex(const ComplexVector& v) {
  const auto n = v.size();
  RealVector out(2 * n);
  out.head(n) = v.real();
  out.tail(n) = v.imag();
  return out;
}

inline ComplexVector unstack_real(const RealVector& v_ri) {
  if (v_ri.size() % 2 != 0) {
    throw InvalidDimension("unstack_real: odd-length input (" +
                           std::to_string(v_ri.size()) + ")");
  }
  const auto n = v_ri.size() / 2;
  ComplexVector out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = Complex(v_ri[i], v_ri[n + i]);
  return out;
}

inline RealMatrix stack_matrix(const ComplexMatrix& a) {
  const auto m = a.rows();
  const auto n = a.cols();
  RealMatrix out(2 * m, 2 * n);
  out.topLeftCorner(m, n) = a.real();
  out.topRightCorner(m, n) = -a.imag();
  out.bottomLeftCorner(m, n) = a.imag();
  out.bottomRightCorner(m, n) = a.real();
  return out;
}

// m distinct rows of the unitary n-point DFT, drawn uniformly without
// replacement. Rows are orthonormal: A A^H = I_m.
inline ObservationMatrix gen_partial_fourier(std::size_t n, std::size_t m,
                                             Seed seed) {
  if (m == 0 || m > n) {
    throw InvalidDimension("gen_partial_fourier: need 1 <= m <= n, got m=" +
                           std::to_string(m) + " n=" + std::to_string(n));
  }
  auto rng = make_rng(seed, 0x0a);
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  std::shuffle(rows.begin(), rows.end(), rng);
  rows.resize(m);

  ObservationMatrix a;
  a.m = m;
  a.n = n;
  a.selected_rows = rows;
  a.entries.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  const double step = -2.0 * std::numbers::pi / static_cast<double>(n);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t k = rows[i];
    for (std::size_t l = 0; l < n; ++l) {
      // Reduce k*l mod n first so the phase stays exact for large n.
      const double phase = step * static_cast<double>((k * l) % n);
      a.entries(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l)) =
          std::polar(scale, phase);
    }
  }
  a.stacked = stack_matrix(a.entries);
  return a;
}

// k targets on distinct uniformly random bins, each with magnitude
// sqrt(noise_var * 10^(snr_db/10)) and a uniform random phase.
inline Scene gen_scene(std::size_t n, std::size_t k, double snr_db,
                       double noise_var, Seed seed) {
  if (k > n) {
    throw InvalidDimension("gen_scene: k=" + std::to_string(k) +
                           " exceeds n=" + std::to_string(n));
  }
  if (k > 0 && !(noise_var > 0.0)) {
    throw ValidationError("gen_scene: noise_var must be > 0 to set target SNR");
  }
  auto rng = make_rng(seed, 0x5c);
  std::vector<std::size_t> bins(n);
  std::iota(bins.begin(), bins.end(), std::size_t{0});
  std::shuffle(bins.begin(), bins.end(), rng);
  bins.resize(k);
  std::sort(bins.begin(), bins.end());

  Scene s;
  s.n = n;
  s.noise_var = noise_var;
  s.per_target_snr_db = snr_db;
  s.amplitudes = ComplexVector::Zero(static_cast<Eigen::Index>(n));
  s.support = bins;
  const double magnitude = std::sqrt(noise_var * std::pow(10.0, snr_db / 10.0));
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  for (auto b : bins) {
    s.amplitudes[static_cast<Eigen::Index>(b)] = std::polar(magnitude, phase(rng));
  }
  return s;
}

// Circular complex Gaussian samples with total variance noise_var.
template <class Rng>
ComplexVector complex_awgn(std::size_t count, double noise_var, Rng& rng) {
  ComplexVector out = ComplexVector::Zero(static_cast<Eigen::Index>(count));
  if (noise_var == 0.0) return out;
  std::normal_distribution<double> gauss(0.0, std::sqrt(noise_var / 2.0));
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    const double re = gauss(rng);
    const double im = gauss(rng);
    out[i] = Complex(re, im);
  }
  return out;
}

inline Measurement measure(const ObservationMatrix& a, const Scene& scene,
                           double noise_var, Seed seed) {
  if (static_cast<std::size_t>(scene.amplitudes.size()) != a.n ||
      static_cast<std::size_t>(a.entries.cols()) != a.n ||
      static_cast<std::size_t>(a.entries.rows()) != a.m) {
    throw InvalidDimension("measure: scene length " +
                           std::to_string(scene.amplitudes.size()) +
                           " does not match matrix " + std::to_string(a.m) +
                           "x" + std::to_string(a.n));
  }
  if (!(noise_var >= 0.0)) {
    throw ValidationError("measure: noise_var must be >= 0");
  }
  auto rng = make_rng(seed, 0x77);
  Measurement y;
  y.noise_var = noise_var;
  y.seed = seed;
  y.complex_values = a.entries * scene.amplitudes;
  y.complex_values += complex_awgn(a.m, noise_var, rng);
  y.stacked = stack_complex(y.complex_values);
  return y;
}

}  // namespace vampcfar
