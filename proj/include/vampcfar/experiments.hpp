#pragma once

// Monte-Carlo harness: sigma-estimate convergence, ROC and false-alarm control.
//
// Trial t uses seed base_seed + t for its matrix, scene and noise, and nothing
// else. Trials run on a small worker pool and land in a vector indexed by
// trial, so every aggregate is a reduction in trial order and the results do
// not depend on the worker count.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "vampcfar/errors.hpp"
#include "vampcfar/params.hpp"
#include "vampcfar/pcd_detector.hpp"
#include "vampcfar/signal_model.hpp"
#include "vampcfar/vamp_core.hpp"

namespace vampcfar {

enum class Detector { pcd, vamp, oracle };

inline std::string to_string(Detector d) {
  switch (d) {
    case Detector::pcd: return "pcd";
    case Detector::vamp: return "vamp";
    case Detector::oracle: return "oracle";
  }
  return "?";
}

inline Detector detector_from_string(const std::string& s) {
  if (s == "pcd") return Detector::pcd;
  if (s == "vamp") return Detector::vamp;
  if (s == "oracle") return Detector::oracle;
  throw ConfigError("unknown detector '" + s + "' (expected pcd, vamp or oracle)");
}

inline std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::matched: return "matched";
    case Provenance::perturbed: return "perturbed";
    case Provenance::learned: return "learned";
  }
  return "?";
}

struct ExperimentConfig {
  std::size_t m = 600;
  std::size_t n = 1000;
  std::size_t k_targets = 10;
  double snr_db = 25.0;
  double noise_var = 1.0;
  std::size_t k_layers = 15;
  Provenance param_mode = Provenance::matched;
  double perturb_factor = 2.0;
  std::string params_path;
  // Matched alpha is tuned for this fraction; defaults to max(k, 1) / n.
  std::optional<double> prior_sparsity;
  PcdConfig pcd;
  std::size_t trials = 100;
  Seed base_seed = 1;
  std::vector<double> pfa_grid{1e-2, 1e-3};
  std::vector<Detector> detectors{Detector::pcd, Detector::vamp};
};

inline void validate(const ExperimentConfig& c) {
  if (c.n == 0 || c.m == 0) throw ConfigError("m and n must be positive");
  if (c.m > c.n) throw ConfigError("m must not exceed n");
  if (c.k_targets > c.n) throw ConfigError("k_targets must not exceed n");
  if (c.k_layers == 0) throw ConfigError("k_layers must be >= 1");
  if (!(c.noise_var >= 0.0) || !std::isfinite(c.noise_var)) {
    throw ConfigError("noise_var must be finite and >= 0");
  }
  if (c.k_targets > 0 && !(c.noise_var > 0.0)) {
    throw ConfigError("noise_var must be > 0 when targets are present (SNR is relative to it)");
  }
  if (!std::isfinite(c.snr_db)) throw ConfigError("snr_db must be finite");
  if (c.trials == 0) throw ConfigError("trials must be >= 1");
  if (c.param_mode == Provenance::perturbed && !(c.perturb_factor > 0.0)) {
    throw ConfigError("perturb_factor must be > 0");
  }
  if (c.param_mode == Provenance::learned && c.params_path.empty()) {
    throw ConfigError("param_mode 'learned' requires params_path");
  }
  for (double p : c.pfa_grid) {
    if (!(p > 0.0 && p <= 1.0)) throw ConfigError("pfa_grid entries must lie in (0, 1]");
  }
  if (c.detectors.empty()) throw ConfigError("detectors must not be empty");
  try {
    validate(c.pcd);
  } catch (const ValidationError& e) {
    throw ConfigError(std::string("pcd: ") + e.what());
  }
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config root must be an object");
  static const std::vector<std::string> known{
      "m", "n", "k_targets", "snr_db", "noise_var", "k_layers", "param_mode",
      "perturb_factor", "params_path", "prior_sparsity", "pcd", "trials",
      "base_seed", "pfa_grid", "detectors"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  ExperimentConfig c;
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    get("m", c.m);
    get("n", c.n);
    get("k_targets", c.k_targets);
    get("snr_db", c.snr_db);
    get("noise_var", c.noise_var);
    get("k_layers", c.k_layers);
    get("perturb_factor", c.perturb_factor);
    get("params_path", c.params_path);
    get("trials", c.trials);
    get("base_seed", c.base_seed);
    get("pfa_grid", c.pfa_grid);
    if (j.contains("prior_sparsity")) c.prior_sparsity = j.at("prior_sparsity").get<double>();
    if (j.contains("param_mode")) {
      const auto mode = j.at("param_mode").get<std::string>();
      if (mode == "matched") c.param_mode = Provenance::matched;
      else if (mode == "perturbed") c.param_mode = Provenance::perturbed;
      else if (mode == "learned") c.param_mode = Provenance::learned;
      else throw ConfigError("param_mode must be matched, perturbed or learned");
    }
    if (j.contains("pcd")) {
      const auto& p = j.at("pcd");
      if (!p.is_object()) throw ConfigError("pcd must be an object");
      for (const auto& [key, _] : p.items()) {
        if (key != "pfa0" && key != "pfa" && key != "c_tol" && key != "m_max") {
          throw ConfigError("unknown config key 'pcd." + key + "'");
        }
      }
      if (p.contains("pfa0")) p.at("pfa0").get_to(c.pcd.pfa0);
      if (p.contains("pfa")) p.at("pfa").get_to(c.pcd.pfa);
      if (p.contains("c_tol")) p.at("c_tol").get_to(c.pcd.c_tol);
      if (p.contains("m_max")) p.at("m_max").get_to(c.pcd.m_max);
    }
    if (j.contains("detectors")) {
      c.detectors.clear();
      for (const auto& d : j.at("detectors")) {
        c.detectors.push_back(detector_from_string(d.get<std::string>()));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  validate(c);
  return c;
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["m"] = c.m;
  j["n"] = c.n;
  j["k_targets"] = c.k_targets;
  j["snr_db"] = c.snr_db;
  j["noise_var"] = c.noise_var;
  j["k_layers"] = c.k_layers;
  j["param_mode"] = to_string(c.param_mode);
  j["perturb_factor"] = c.perturb_factor;
  j["params_path"] = c.params_path;
  if (c.prior_sparsity) j["prior_sparsity"] = *c.prior_sparsity;
  j["pcd"] = {{"pfa0", c.pcd.pfa0}, {"pfa", c.pcd.pfa}, {"c_tol", c.pcd.c_tol},
              {"m_max", c.pcd.m_max}};
  j["trials"] = c.trials;
  j["base_seed"] = c.base_seed;
  j["pfa_grid"] = c.pfa_grid;
  j["detectors"] = nlohmann::json::array();
  for (auto d : c.detectors) j["detectors"].push_back(to_string(d));
  return j;
}

// The model shared by every trial. A perturbed model is drawn once from
// base_seed.
inline UnfoldedModel build_model(const ExperimentConfig& c) {
  if (c.param_mode == Provenance::learned) {
    UnfoldedModel m = load_params(c.params_path);
    return m;
  }
  const double sparsity = c.prior_sparsity.value_or(
      static_cast<double>(std::max<std::size_t>(c.k_targets, 1)) /
      static_cast<double>(c.n));
  UnfoldedModel m = matched_params(c.k_layers, sparsity, c.noise_var);
  if (c.param_mode == Provenance::perturbed) {
    m = perturb_params(m, c.perturb_factor, c.base_seed);
  }
  return m;
}

enum class TrialStatus { ok, recovery_failure };

struct DetectorOutcome {
  bool failed = false;
  std::string failure;
  // Per pfa_grid entry.
  std::vector<std::size_t> true_detected;
  std::vector<std::size_t> null_detected;
};

struct TrialRecord {
  std::size_t trial = 0;
  Seed seed = 0;
  TrialStatus status = TrialStatus::ok;
  std::string failure;
  double sigma_emp = 0.0;
  std::optional<double> sigma_pcd;
  std::optional<double> sigma_vamp;
  std::optional<PcdTrace> pcd_trace;
  std::size_t true_bins = 0;
  std::size_t null_bins = 0;
  std::map<Detector, DetectorOutcome> detectors;
};

// Sample standard deviation (mean-subtracted, n - 1) of r_ri - x0_ri.
inline double empirical_sigma(const RealVector& r_ri, const RealVector& x0_ri) {
  const RealVector w = r_ri - x0_ri;
  const double mean = w.mean();
  return std::sqrt((w.array() - mean).square().sum() /
                   static_cast<double>(w.size() - 1));
}

struct TrialData {
  ObservationMatrix matrix;
  Scene scene;
  Measurement measurement;
};

inline TrialData generate_trial(const ExperimentConfig& c, Seed seed) {
  TrialData d;
  d.matrix = gen_partial_fourier(c.n, c.m, seed);
  d.scene = gen_scene(c.n, c.k_targets, c.snr_db, c.noise_var, seed);
  d.measurement = measure(d.matrix, d.scene, c.noise_var, seed);
  return d;
}

namespace detail {

inline void count_detections(const DetectionResult& det, const std::vector<bool>& is_target,
                             std::size_t& true_hits, std::size_t& null_hits) {
  true_hits = 0;
  null_hits = 0;
  for (auto b : det.detected_bins) {
    if (is_target[b]) ++true_hits;
    else ++null_hits;
  }
}

}  // namespace detail

// One Monte-Carlo trial. Failures are recorded on the record, never thrown:
// a recovery failure voids the whole trial, a detector failure only voids that
// detector. The PCD variance estimate does not depend on the final pfa, so the
// loop runs once and its estimate is thresholded at every grid rate.
inline TrialRecord run_trial(const ExperimentConfig& c, const UnfoldedModel& model,
                             std::size_t trial) {
  TrialRecord rec;
  rec.trial = trial;
  rec.seed = c.base_seed + trial;
  const TrialData data = generate_trial(c, rec.seed);
  rec.true_bins = data.scene.support.size();
  rec.null_bins = c.n - rec.true_bins;
  const RealVector x0 = stack_complex(data.scene.amplitudes);

  RecoveryOutput out;
  try {
    out = vamp_unfold(data.measurement.stacked, data.matrix, model).output;
  } catch (const Error& e) {
    rec.status = TrialStatus::recovery_failure;
    rec.failure = e.what();
    return rec;
  }
  rec.sigma_emp = empirical_sigma(out.r_ri, x0);
  if (out.sigma2_vamp > 0.0) rec.sigma_vamp = std::sqrt(out.sigma2_vamp);

  const auto n = static_cast<Eigen::Index>(c.n);
  const RealVector stat = test_statistic(out.r_ri.head(n), out.r_ri.tail(n));
  std::vector<bool> is_target(c.n, false);
  for (auto b : data.scene.support) is_target[b] = true;

  auto threshold_all = [&](DetectorOutcome& o, double sigma2) {
    for (double p : c.pfa_grid) {
      std::size_t th = 0, nh = 0;
      detail::count_detections(make_detection(stat, rayleigh_threshold(sigma2, p)),
                               is_target, th, nh);
      o.true_detected.push_back(th);
      o.null_detected.push_back(nh);
    }
  };

  for (auto d : c.detectors) {
    DetectorOutcome o;
    try {
      switch (d) {
        case Detector::pcd: {
          PcdResult pr = pcd_detect(out, c.pcd);
          rec.sigma_pcd = std::sqrt(*pr.detection.sigma2_pcd);
          rec.pcd_trace = std::move(pr.trace);
          threshold_all(o, *pr.detection.sigma2_pcd);
          break;
        }
        case Detector::vamp:
          if (!(out.sigma2_vamp > 0.0)) {
            throw DetectorFailure("vamp: variance estimate is not positive");
          }
          threshold_all(o, out.sigma2_vamp);
          break;
        case Detector::oracle:
          if (!(rec.sigma_emp > 0.0)) {
            throw DetectorFailure("oracle: empirical sigma is zero");
          }
          threshold_all(o, rec.sigma_emp * rec.sigma_emp);
          break;
      }
    } catch (const Error& e) {
      o = DetectorOutcome{};
      o.failed = true;
      o.failure = e.what();
    }
    rec.detectors[d] = std::move(o);
  }
  return rec;
}

// Runs fn(t) for t in [0, count) on `workers` threads. Results must be written
// by index; the first non-library exception is rethrown after all workers join.
template <class Fn>
void parallel_trials(std::size_t count, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    for (std::size_t t = 0; t < count; ++t) fn(t);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t t = next.fetch_add(1);
        if (t >= count) return;
        try {
          fn(t);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next.store(count);
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

inline std::vector<TrialRecord> run_trials(const ExperimentConfig& c,
                                           std::size_t workers = 1) {
  validate(c);
  const UnfoldedModel model = build_model(c);
  std::vector<TrialRecord> records(c.trials);
  parallel_trials(c.trials, workers,
                  [&](std::size_t t) { records[t] = run_trial(c, model, t); });
  return records;
}

// Sorted samples with step heights k / n (right-continuous).
inline std::vector<std::pair<double, double>> ecdf(std::vector<double> samples) {
  if (samples.empty()) throw ValidationError("ecdf: empty sample");
  std::sort(samples.begin(), samples.end());
  std::vector<std::pair<double, double>> out;
  out.reserve(samples.size());
  const double n = static_cast<double>(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    out.emplace_back(samples[i], static_cast<double>(i + 1) / n);
  }
  return out;
}

struct Interval {
  double lo = 0.0;
  double hi = 1.0;
};

// Wilson score interval; [0, 1] when there are no observations.
inline Interval wilson_interval(std::size_t successes, std::size_t total,
                                double z = 1.959963984540054) {
  if (total == 0) return {};
  const double n = static_cast<double>(total);
  const double p = static_cast<double>(successes) / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double centre = (p + z2 / (2.0 * n)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
  return {successes == 0 ? 0.0 : std::max(0.0, centre - half),
          successes == total ? 1.0 : std::min(1.0, centre + half)};
}

struct MetricsRow {
  Detector detector = Detector::pcd;
  double nominal_pfa = 0.0;
  std::size_t true_detected = 0;
  std::size_t true_total = 0;
  std::size_t null_detected = 0;
  std::size_t null_total = 0;
  double empirical_pd = 0.0;
  double empirical_pfa = 0.0;
  Interval pd_ci;
  Interval pfa_ci;
  std::size_t trials_used = 0;
  std::size_t failures = 0;

  // log10(empirical / nominal); -inf when nothing was detected.
  double log10_ratio() const {
    return std::log10(empirical_pfa / nominal_pfa);
  }
};

struct MetricsTable {
  std::vector<MetricsRow> rows;

  const MetricsRow* find(Detector d, double nominal) const {
    for (const auto& r : rows) {
      if (r.detector == d && r.nominal_pfa == nominal) return &r;
    }
    return nullptr;
  }
};

// Pools per-bin counts over trials. Failed trials and failed detectors are
// left out of the denominators and counted in `failures`. Rates with an empty
// denominator are reported as 0 with the uninformative interval [0, 1].
inline MetricsTable aggregate(const ExperimentConfig& c,
                              const std::vector<TrialRecord>& records) {
  MetricsTable table;
  for (auto d : c.detectors) {
    for (std::size_t g = 0; g < c.pfa_grid.size(); ++g) {
      MetricsRow row;
      row.detector = d;
      row.nominal_pfa = c.pfa_grid[g];
      for (const auto& rec : records) {
        if (rec.status != TrialStatus::ok) {
          ++row.failures;
          continue;
        }
        const auto& o = rec.detectors.at(d);
        if (o.failed) {
          ++row.failures;
          continue;
        }
        ++row.trials_used;
        row.true_detected += o.true_detected[g];
        row.null_detected += o.null_detected[g];
        row.true_total += rec.true_bins;
        row.null_total += rec.null_bins;
      }
      auto rate = [](std::size_t k, std::size_t n) {
        return n == 0 ? 0.0 : static_cast<double>(k) / static_cast<double>(n);
      };
      row.empirical_pd = rate(row.true_detected, row.true_total);
      row.empirical_pfa = rate(row.null_detected, row.null_total);
      row.pd_ci = wilson_interval(row.true_detected, row.true_total);
      row.pfa_ci = wilson_interval(row.null_detected, row.null_total);
      table.rows.push_back(row);
    }
  }
  return table;
}

// Detection counts must be nondecreasing in the nominal rate for each
// detector. Returns a description of the first violation, or nothing.
inline std::optional<std::string> check_monotone(const MetricsTable& table) {
  std::map<Detector, std::vector<const MetricsRow*>> by_detector;
  for (const auto& r : table.rows) by_detector[r.detector].push_back(&r);
  for (auto& [d, rows] : by_detector) {
    std::sort(rows.begin(), rows.end(), [](auto* a, auto* b) {
      return a->nominal_pfa < b->nominal_pfa;
    });
    for (std::size_t i = 1; i < rows.size(); ++i) {
      if (rows[i]->true_detected < rows[i - 1]->true_detected ||
          rows[i]->null_detected < rows[i - 1]->null_detected) {
        return to_string(d) + ": rates decrease between nominal pfa " +
               std::to_string(rows[i - 1]->nominal_pfa) + " and " +
               std::to_string(rows[i]->nominal_pfa);
      }
    }
  }
  return std::nullopt;
}

inline MetricsTable run_roc(const ExperimentConfig& c, std::size_t workers = 1) {
  if (c.pfa_grid.empty()) throw ConfigError("roc: pfa_grid must not be empty");
  MetricsTable t = aggregate(c, run_trials(c, workers));
  if (auto bad = check_monotone(t)) throw NumericFailure("roc: " + *bad);
  return t;
}

inline MetricsTable run_pfa_control(const ExperimentConfig& c, std::size_t workers = 1) {
  return run_roc(c, workers);
}

struct SigmaReport {
  std::vector<TrialRecord> trials;
  std::size_t recovery_failures = 0;
  std::map<Detector, std::size_t> detector_failures;

  // Successful-trial values of each estimator; empty when none succeeded.
  std::vector<double> sigma_emp() const;
  std::vector<double> sigma_pcd() const;
  std::vector<double> sigma_vamp() const;
};

inline std::vector<double> SigmaReport::sigma_emp() const {
  std::vector<double> v;
  for (const auto& t : trials) {
    if (t.status == TrialStatus::ok) v.push_back(t.sigma_emp);
  }
  return v;
}

inline std::vector<double> SigmaReport::sigma_pcd() const {
  std::vector<double> v;
  for (const auto& t : trials) {
    if (t.sigma_pcd) v.push_back(*t.sigma_pcd);
  }
  return v;
}

inline std::vector<double> SigmaReport::sigma_vamp() const {
  std::vector<double> v;
  for (const auto& t : trials) {
    if (t.sigma_vamp) v.push_back(*t.sigma_vamp);
  }
  return v;
}

inline SigmaReport run_sigma_convergence(ExperimentConfig c, std::size_t workers = 1) {
  // Both estimators are always needed here, whatever the config lists.
  for (auto d : {Detector::pcd, Detector::vamp}) {
    if (std::find(c.detectors.begin(), c.detectors.end(), d) == c.detectors.end()) {
      c.detectors.push_back(d);
    }
  }
  SigmaReport r;
  r.trials = run_trials(c, workers);
  for (const auto& t : r.trials) {
    if (t.status != TrialStatus::ok) {
      ++r.recovery_failures;
      continue;
    }
    for (const auto& [d, o] : t.detectors) {
      if (o.failed) ++r.detector_failures[d];
    }
  }
  return r;
}

}  // namespace vampcfar
