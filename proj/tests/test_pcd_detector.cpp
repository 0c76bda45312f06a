#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "reference/pcd_reference.hpp"
#include "vampcfar/pcd_detector.hpp"

using namespace vampcfar;

namespace {

std::vector<double> to_std(const RealVector& v) { return {v.data(), v.data() + v.size()}; }

RealVector gaussian(Eigen::Index n, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> g(0.0, sd);
  RealVector v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

// A pseudo-measurement with a few strong bins and a sparse estimate that
// marks some of them.
struct Instance {
  RealVector r_ri;
  RealVector xhat_ri;
};

Instance random_instance(Eigen::Index n, std::mt19937_64& rng, double sd = 1.0) {
  Instance in;
  in.r_ri = gaussian(2 * n, rng, sd);
  in.xhat_ri = RealVector::Zero(2 * n);
  std::uniform_int_distribution<Eigen::Index> bin(0, n - 1);
  for (int t = 0; t < 3; ++t) {
    const auto b = bin(rng);
    in.r_ri[b] += 8.0 * sd;
    in.r_ri[n + b] -= 6.0 * sd;
    if (t < 2) {
      in.xhat_ri[b] = in.r_ri[b] * 0.8;
      in.xhat_ri[n + b] = in.r_ri[n + b] * 0.8;
    }
  }
  return in;
}

}  // namespace

TEST(TestStatistic, Examples) {
  RealVector a(2), b(2);
  a << 3.0, 0.0;
  b << 4.0, 0.0;
  const auto s = test_statistic(a, b);
  EXPECT_EQ(s[0], 5.0);
  EXPECT_EQ(s[1], 0.0);
  EXPECT_THROW(test_statistic(RealVector::Zero(2), RealVector::Zero(3)), InvalidDimension);
}

TEST(TestStatistic, MatchesElementwiseRecomputation) {
  std::mt19937_64 rng(4);
  const RealVector a = gaussian(500, rng), b = gaussian(500, rng);
  const auto s = test_statistic(a, b);
  for (Eigen::Index i = 0; i < 500; ++i) {
    EXPECT_NEAR(s[i], std::hypot(a[i], b[i]), 1e-12);
    EXPECT_GE(s[i], 0.0);
  }
}

TEST(RayleighThreshold, Examples) {
  EXPECT_EQ(rayleigh_threshold(1.0, 1.0), 0.0);
  EXPECT_FALSE(std::signbit(rayleigh_threshold(1.0, 1.0)));
  EXPECT_NEAR(rayleigh_threshold(0.5, std::exp(-1.0)), 1.0, 1e-15);
  EXPECT_NEAR(rayleigh_threshold(1.0, 1e-3), 3.71692219, 1e-6);
  EXPECT_THROW(rayleigh_threshold(1.0, 0.0), ValidationError);
  EXPECT_THROW(rayleigh_threshold(0.0, 0.1), ValidationError);
  EXPECT_THROW(rayleigh_threshold(-1.0, 0.1), ValidationError);
  EXPECT_THROW(rayleigh_threshold(1.0, 1.5), ValidationError);
}

TEST(RayleighThreshold, ExceedanceMatchesNominalRate) {
  std::mt19937_64 rng(2718);
  std::normal_distribution<double> g;
  const int draws = 200000;
  std::vector<double> samples(draws);
  for (auto& s : samples) s = std::hypot(g(rng), g(rng));
  for (double p : {1e-1, 1e-2}) {
    const double t = rayleigh_threshold(1.0, p);
    const auto hits = std::count_if(samples.begin(), samples.end(),
                                    [&](double s) { return s > t; });
    const double sd = std::sqrt(draws * p * (1 - p));
    EXPECT_LE(std::abs(hits - draws * p), 3.0 * sd) << "p=" << p;
  }
}

TEST(SupportSet, Examples) {
  EXPECT_TRUE(support_set(RealVector::Zero(5)).empty());
  RealVector x(4);
  x << 0.0, 1.0, 0.0, -2.0;
  EXPECT_EQ(support_set(x), (IndexSet{1, 3}));  // bins 2 and 4, 1-based
}

TEST(SupportSet, PartitionsTheIndexRange) {
  std::mt19937_64 rng(9);
  std::bernoulli_distribution coin(0.3);
  for (int t = 0; t < 20; ++t) {
    RealVector x = gaussian(37, rng);
    for (auto& v : x) if (coin(rng)) v = 0.0;
    const auto s = support_set(x);
    std::size_t zeros = 0;
    for (auto v : x) zeros += v == 0.0;
    EXPECT_EQ(s.size() + zeros, 37u);
  }
}

TEST(ResidualVariance, Examples) {
  RealVector r(5);
  r << 1.0, 99.0, 2.0, 3.0, -50.0;
  const auto rv = residual_variance(r, {1, 4});
  EXPECT_EQ(rv.l, 3u);
  EXPECT_DOUBLE_EQ(rv.sigma2, 1.0);

  const auto flat = residual_variance(RealVector::Constant(6, 2.5), {});
  EXPECT_EQ(flat.sigma2, 0.0);
  EXPECT_EQ(flat.l, 6u);

  EXPECT_THROW(residual_variance(r, {0, 1, 2, 3, 4}), DetectorFailure);
  EXPECT_THROW(residual_variance(r, {0, 1, 2, 3}), DetectorFailure);
}

TEST(HardDetect, Examples) {
  RealVector s(2);
  s << 1.0, 3.0;
  EXPECT_EQ(hard_detect(s, 5.0), RealVector::Zero(2));
  RealVector expected(2);
  expected << 0.0, 3.0;
  EXPECT_EQ(hard_detect(s, 2.0), expected);
  // strict inequality at the threshold
  EXPECT_EQ(hard_detect(s, 3.0)[1], 0.0);
}

TEST(RefineScene, Examples) {
  RealVector rr(3), ri(3), det(3);
  rr << 1, 2, 3;
  ri << 4, 5, 6;
  det << 0, 7, 0;
  RealVector expected(6);
  expected << 0, 2, 0, 0, 5, 0;
  EXPECT_EQ(refine_scene(rr, ri, det), expected);
  EXPECT_EQ(refine_scene(rr, ri, RealVector::Zero(3)), RealVector::Zero(6));
  RealVector all(6);
  all << 1, 2, 3, 4, 5, 6;
  EXPECT_EQ(refine_scene(rr, ri, RealVector::Ones(3)), all);
  EXPECT_THROW(refine_scene(rr, ri, RealVector::Ones(2)), InvalidDimension);
}

// Hand-worked N = 3 instance:
//   r_R = [3, 0.1, -0.2], r_I = [4, 0.3, 0.1], xhat = [2.5, 0, 0, 0, 0, 0]
//   m=1: x_s = {0.1,-0.2,4,0.3,0.1}, L=5, sigma2 = 12.452/4 = 3.113
//        T0 = sqrt(2*3.113*ln 10) ~ 3.786 -> bin 1 (stat 5) detected
//   m=2: x_s = {0.1,-0.2,0.3,0.1}, L=4, sigma2 = 0.1275/3 = 0.0425
//   m=3: same set, sigma2 unchanged -> converged
TEST(PcdDetect, HandWorkedTranscript) {
  RealVector rr(3), ri(3), xhat(6);
  rr << 3.0, 0.1, -0.2;
  ri << 4.0, 0.3, 0.1;
  xhat << 2.5, 0, 0, 0, 0, 0;
  RealVector r_ri(6);
  r_ri << rr, ri;
  PcdConfig cfg{0.1, 0.01, 1e-5, 50};
  const auto res = pcd_detect(xhat, r_ri, rr, ri, cfg);
  const auto& tr = res.trace;
  ASSERT_EQ(tr.iterations_used, 3u);
  EXPECT_TRUE(tr.converged);
  EXPECT_EQ(tr.l_per_iter, (std::vector<std::size_t>{5, 4, 4}));
  EXPECT_NEAR(tr.sigma2_per_iter[0], 3.113, 1e-12);
  EXPECT_NEAR(tr.sigma2_per_iter[1], 0.0425, 1e-12);
  EXPECT_NEAR(tr.sigma2_per_iter[2], 0.0425, 1e-12);
  EXPECT_NEAR(tr.thresholds_per_iter[0], std::sqrt(2 * 3.113 * std::log(10.0)), 1e-12);
  ASSERT_EQ(tr.detections_per_iter.size(), 2u);
  EXPECT_EQ(tr.detections_per_iter[0], (IndexSet{0}));
  EXPECT_EQ(tr.detections_per_iter[1], (IndexSet{0}));
  EXPECT_NEAR(*res.detection.sigma2_pcd, 0.0425, 1e-12);
  EXPECT_NEAR(res.detection.threshold, std::sqrt(2 * 0.0425 * std::log(100.0)), 1e-12);
  EXPECT_EQ(res.detection.detected_bins, (IndexSet{0}));
  EXPECT_EQ(res.detection.xhat_pfa[0], 5.0);

  const auto ref = reference::run_pcd(to_std(xhat), to_std(r_ri), to_std(rr),
                                      to_std(ri), 0.1, 0.01, 1e-5, 50);
  EXPECT_EQ(ref.sigma2, tr.sigma2_per_iter);
  EXPECT_EQ(ref.l, tr.l_per_iter);
}

TEST(PcdDetect, MatchesReferenceTranscription) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> pfa0(1e-3, 0.3);
  std::uniform_int_distribution<int> mmax(1, 8);
  for (int t = 0; t < 100; ++t) {
    const Eigen::Index n = 8 + t % 40;
    const auto in = random_instance(n, rng, 0.5 + t * 0.05);
    PcdConfig cfg{pfa0(rng), 1e-2, 1e-3, static_cast<std::size_t>(mmax(rng))};
    const RealVector rr = in.r_ri.head(n), ri = in.r_ri.tail(n);
    const auto res = pcd_detect(in.xhat_ri, in.r_ri, rr, ri, cfg);
    const auto ref = reference::run_pcd(to_std(in.xhat_ri), to_std(in.r_ri), to_std(rr),
                                        to_std(ri), cfg.pfa0, cfg.pfa, cfg.c_tol, cfg.m_max);
    ASSERT_EQ(res.trace.iterations_used, ref.iterations);
    EXPECT_EQ(res.trace.converged, ref.converged);
    EXPECT_EQ(res.trace.l_per_iter, ref.l);
    EXPECT_EQ(res.trace.detections_per_iter, ref.inner_detections);
    for (std::size_t m = 0; m < ref.iterations; ++m) {
      EXPECT_NEAR(res.trace.sigma2_per_iter[m], ref.sigma2[m], 1e-12);
      EXPECT_NEAR(res.trace.thresholds_per_iter[m], ref.inner_threshold[m], 1e-12);
    }
    EXPECT_NEAR(*res.detection.sigma2_pcd, ref.sigma2_pcd, 1e-12);
    EXPECT_NEAR(res.detection.threshold, ref.threshold, 1e-12);
    EXPECT_EQ(res.detection.detected_bins, ref.detected);
  }
}

TEST(PcdDetect, PureNoiseConvergesAtSecondIteration) {
  std::mt19937_64 rng(1234);
  const Eigen::Index n = 5000;
  const RealVector r_ri = gaussian(2 * n, rng);
  const RealVector rr = r_ri.head(n), ri = r_ri.tail(n);
  PcdConfig cfg{1e-7, 1e-3, 1e-5, 50};
  // Precondition of this example: nothing exceeds the first inner threshold.
  ASSERT_EQ(test_statistic(rr, ri).maxCoeff() >
                rayleigh_threshold(residual_variance(r_ri, {}).sigma2, cfg.pfa0),
            false);
  const auto res = pcd_detect(RealVector::Zero(2 * n), r_ri, rr, ri, cfg);
  EXPECT_EQ(res.trace.iterations_used, 2u);
  EXPECT_TRUE(res.trace.converged);
  EXPECT_NEAR(*res.detection.sigma2_pcd, 1.0, 0.05);
}

TEST(PcdDetect, SingleIterationBudgetFinalizesImmediately) {
  std::mt19937_64 rng(8);
  const auto in = random_instance(30, rng);
  for (double c_tol : {1e-30, 1e-5, 10.0}) {
    PcdConfig cfg{1e-3, 1e-2, c_tol, 1};
    const auto res = pcd_detect(in.xhat_ri, in.r_ri, in.r_ri.head(30), in.r_ri.tail(30), cfg);
    EXPECT_EQ(res.trace.iterations_used, 1u);
    EXPECT_FALSE(res.trace.converged);
    EXPECT_EQ(*res.detection.sigma2_pcd, res.trace.sigma2_per_iter[0]);
    EXPECT_TRUE(res.trace.detections_per_iter.empty());
  }
}

TEST(PcdDetect, TooFewNullSamplesIsDetectorFailure) {
  const RealVector r_ri = RealVector::Ones(4);
  RealVector xhat = RealVector::Ones(4);
  xhat[2] = 0.0;
  try {
    pcd_detect(xhat, r_ri, r_ri.head(2), r_ri.tail(2), PcdConfig{});
    FAIL() << "expected DetectorFailure";
  } catch (const DetectorFailure& e) {
    EXPECT_NE(std::string(e.what()).find("iteration 1"), std::string::npos);
  }
  // All-zero residual: variance 0 cannot set a threshold.
  EXPECT_THROW(pcd_detect(RealVector::Zero(6), RealVector::Zero(6), RealVector::Zero(3),
                          RealVector::Zero(3), PcdConfig{}),
               DetectorFailure);
}

TEST(PcdDetect, RejectsBadConfigAndLengths) {
  const RealVector v = RealVector::Ones(6);
  EXPECT_THROW(pcd_detect(v, v, v.head(3), v.tail(3), PcdConfig{0.0, 0.1, 1e-3, 5}),
               ValidationError);
  EXPECT_THROW(pcd_detect(v, v, v.head(3), v.tail(3), PcdConfig{0.1, 0.1, 0.0, 5}),
               ValidationError);
  EXPECT_THROW(pcd_detect(v, v, v.head(3), v.tail(3), PcdConfig{0.1, 0.1, 1e-3, 0}),
               ValidationError);
  EXPECT_THROW(pcd_detect(v, v, v.head(2), v.tail(3), PcdConfig{}), InvalidDimension);
}

TEST(PcdDetect, ScaleEquivariance) {
  std::mt19937_64 rng(77);
  for (double c : {2.0, 0.25, 3.7}) {
    for (int t = 0; t < 20; ++t) {
      const Eigen::Index n = 200;
      const auto in = random_instance(n, rng);
      PcdConfig cfg{1e-3, 1e-2, 1e-8, 30};
      const auto base = pcd_detect(in.xhat_ri, in.r_ri, in.r_ri.head(n), in.r_ri.tail(n), cfg);
      const RealVector xs = c * in.xhat_ri, rs = c * in.r_ri;
      const auto scaled = pcd_detect(xs, rs, rs.head(n), rs.tail(n), cfg);
      EXPECT_NEAR(*scaled.detection.sigma2_pcd / (*base.detection.sigma2_pcd * c * c), 1.0, 1e-12);
      EXPECT_NEAR(scaled.detection.threshold / (base.detection.threshold * c), 1.0, 1e-12);
      EXPECT_EQ(scaled.detection.detected_bins, base.detection.detected_bins);
    }
  }
}

TEST(PcdDetect, NullSetGrowsWhileThresholdsRise) {
  std::mt19937_64 rng(55);
  for (int t = 0; t < 200; ++t) {
    const Eigen::Index n = 300;
    const auto in = random_instance(n, rng);
    PcdConfig cfg{1e-4, 1e-3, 1e-12, 20};
    const auto res = pcd_detect(in.xhat_ri, in.r_ri, in.r_ri.head(n), in.r_ri.tail(n), cfg);
    const auto& tr = res.trace;
    for (std::size_t m = 2; m < tr.iterations_used; ++m) {
      // L^(m+1) >= L^(m) whenever T^(m) >= T^(m-1) (0-based: m and m-1).
      if (tr.thresholds_per_iter[m - 1] >= tr.thresholds_per_iter[m - 2]) {
        EXPECT_GE(tr.l_per_iter[m], tr.l_per_iter[m - 1]);
      }
    }
  }
}

TEST(PcdDetect, ConvergedFlagImpliesToleranceHolds) {
  std::mt19937_64 rng(66);
  for (int t = 0; t < 200; ++t) {
    const Eigen::Index n = 100;
    const auto in = random_instance(n, rng);
    PcdConfig cfg{1e-2, 1e-2, 1e-3, 6};
    const auto res = pcd_detect(in.xhat_ri, in.r_ri, in.r_ri.head(n), in.r_ri.tail(n), cfg);
    const auto& s = res.trace.sigma2_per_iter;
    ASSERT_EQ(s.size(), res.trace.iterations_used);
    ASSERT_EQ(res.trace.l_per_iter.size(), res.trace.iterations_used);
    ASSERT_EQ(res.trace.thresholds_per_iter.size(), res.trace.iterations_used);
    if (res.trace.converged) {
      ASSERT_GE(s.size(), 2u);
      EXPECT_LT(std::abs(s.back() - s[s.size() - 2]) / s[s.size() - 2], cfg.c_tol);
    } else {
      EXPECT_EQ(res.trace.iterations_used, cfg.m_max);
    }
  }
}

TEST(PcdDetect, DetectionResultInvariants) {
  std::mt19937_64 rng(12);
  const Eigen::Index n = 400;
  const auto in = random_instance(n, rng);
  const auto res = pcd_detect(in.xhat_ri, in.r_ri, in.r_ri.head(n), in.r_ri.tail(n), PcdConfig{});
  EXPECT_EQ(res.detection.detected_bins, support_set(res.detection.xhat_pfa));
  for (auto b : res.detection.detected_bins) {
    EXPECT_GT(res.detection.xhat_pfa[b], res.detection.threshold);
  }
}

TEST(BaselineDetect, Examples) {
  RealVector stat(2);
  stat << 3.5, 4.0;
  const auto d = baseline_vamp_detect(stat, 1.0, 1e-3);
  EXPECT_EQ(d.detected_bins, (IndexSet{1}));
  EXPECT_NEAR(d.threshold, 3.7169222, 1e-6);
  EXPECT_EQ(*d.sigma2_vamp, 1.0);
  EXPECT_FALSE(d.sigma2_pcd.has_value());

  const auto tiny = baseline_vamp_detect(stat, 1e-300, 1e-3);
  EXPECT_EQ(tiny.detected_bins, (IndexSet{0, 1}));
  EXPECT_THROW(baseline_vamp_detect(stat, 0.0, 1e-3), ValidationError);
}

TEST(BaselineDetect, SharesFinalThresholdingWithPcd) {
  std::mt19937_64 rng(101);
  const Eigen::Index n = 250;
  const auto in = random_instance(n, rng);
  PcdConfig cfg;
  cfg.pfa = 5e-3;
  const RealVector rr = in.r_ri.head(n), ri = in.r_ri.tail(n);
  const auto pcd = pcd_detect(in.xhat_ri, in.r_ri, rr, ri, cfg);
  const auto base = baseline_vamp_detect(test_statistic(rr, ri), *pcd.detection.sigma2_pcd, cfg.pfa);
  EXPECT_EQ(base.threshold, pcd.detection.threshold);
  EXPECT_EQ(base.xhat_pfa, pcd.detection.xhat_pfa);
}
