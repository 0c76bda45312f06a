#pragma once

// CSV tables and the JSON run manifest. Numbers are written in shortest
// round-trip form so identical runs produce identical bytes.
//
// Files written into the output directory:
//   sigma-convergence: sigma_trials.csv, sigma_trace.csv, sigma_ecdf.csv
//   roc:               roc.csv
//   pfa-control:       pfa_control.csv
//   every run:         manifest.json
// Bins in CSV output are 1-based.

#include <nlohmann/json.hpp>

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>

#include "vampcfar/errors.hpp"
#include "vampcfar/experiments.hpp"

#ifndef VAMPCFAR_VERSION
#define VAMPCFAR_VERSION "0.0.0"
#endif

namespace vampcfar {

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw NumericFailure("format_number: conversion failed");
  return std::string(buf, end);
}

inline std::string format_optional(const std::optional<double>& v) {
  return v ? format_number(*v) : std::string{};
}

inline std::string to_string(TrialStatus s) {
  return s == TrialStatus::ok ? "ok" : "recovery_failure";
}

inline void write_sigma_trials_csv(std::ostream& out, const SigmaReport& r) {
  out << "trial,seed,status,sigma_emp,sigma_pcd,sigma_vamp,pcd_iterations,"
         "pcd_converged,pcd_failed\n";
  for (const auto& t : r.trials) {
    const bool pcd_failed = t.status == TrialStatus::ok &&
                            t.detectors.count(Detector::pcd) &&
                            t.detectors.at(Detector::pcd).failed;
    out << t.trial << ',' << t.seed << ',' << to_string(t.status) << ','
        << (t.status == TrialStatus::ok ? format_number(t.sigma_emp) : "") << ','
        << format_optional(t.sigma_pcd) << ',' << format_optional(t.sigma_vamp)
        << ',' << (t.pcd_trace ? std::to_string(t.pcd_trace->iterations_used) : "")
        << ',' << (t.pcd_trace ? (t.pcd_trace->converged ? "1" : "0") : "") << ','
        << (pcd_failed ? 1 : 0) << '\n';
  }
}

// Per-iteration sigma^(m) = sqrt(sigma2^(m)) of the PCD loop.
inline void write_sigma_trace_csv(std::ostream& out, const SigmaReport& r) {
  out << "trial,iteration,sigma,l,inner_threshold\n";
  for (const auto& t : r.trials) {
    if (!t.pcd_trace) continue;
    const auto& tr = *t.pcd_trace;
    for (std::size_t m = 0; m < tr.sigma2_per_iter.size(); ++m) {
      out << t.trial << ',' << (m + 1) << ','
          << format_number(std::sqrt(tr.sigma2_per_iter[m])) << ','
          << tr.l_per_iter[m] << ',' << format_number(tr.thresholds_per_iter[m])
          << '\n';
    }
  }
}

inline void write_sigma_ecdf_csv(std::ostream& out, const SigmaReport& r) {
  out << "estimator,value,fraction\n";
  auto emit = [&](const char* name, const std::vector<double>& v) {
    if (v.empty()) return;
    for (const auto& [x, f] : ecdf(v)) {
      out << name << ',' << format_number(x) << ',' << format_number(f) << '\n';
    }
  };
  emit("emp", r.sigma_emp());
  emit("pcd", r.sigma_pcd());
  emit("vamp", r.sigma_vamp());
}

inline void write_roc_csv(std::ostream& out, const MetricsTable& t) {
  out << "detector,nominal_pfa,pd,pd_lo,pd_hi,pfa,pfa_lo,pfa_hi,true_detected,"
         "true_total,null_detected,null_total,trials_used,failures\n";
  for (const auto& r : t.rows) {
    out << to_string(r.detector) << ',' << format_number(r.nominal_pfa) << ','
        << format_number(r.empirical_pd) << ',' << format_number(r.pd_ci.lo) << ','
        << format_number(r.pd_ci.hi) << ',' << format_number(r.empirical_pfa) << ','
        << format_number(r.pfa_ci.lo) << ',' << format_number(r.pfa_ci.hi) << ','
        << r.true_detected << ',' << r.true_total << ',' << r.null_detected << ','
        << r.null_total << ',' << r.trials_used << ',' << r.failures << '\n';
  }
}

inline void write_pfa_control_csv(std::ostream& out, const MetricsTable& t) {
  out << "detector,nominal_pfa,empirical_pfa,pfa_lo,pfa_hi,log10_ratio,"
         "null_detected,null_total,trials_used,failures\n";
  for (const auto& r : t.rows) {
    out << to_string(r.detector) << ',' << format_number(r.nominal_pfa) << ','
        << format_number(r.empirical_pfa) << ',' << format_number(r.pfa_ci.lo) << ','
        << format_number(r.pfa_ci.hi) << ',' << format_number(r.log10_ratio()) << ','
        << r.null_detected << ',' << r.null_total << ',' << r.trials_used << ','
        << r.failures << '\n';
  }
}

inline nlohmann::json make_manifest(const std::string& experiment,
                                    const ExperimentConfig& c,
                                    const UnfoldedModel& model) {
  nlohmann::json j;
  j["toolkit"] = "vampcfar";
  j["version"] = VAMPCFAR_VERSION;
  j["experiment"] = experiment;
  j["config"] = config_to_json(c);
  j["seeds"] = {{"first", c.base_seed}, {"last", c.base_seed + c.trials - 1},
                {"rule", "trial t uses base_seed + t"}};
  j["model"] = params_to_json(model);
  return j;
}

inline void write_text_file(const std::filesystem::path& path,
                            const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << contents;
  if (!out) throw ConfigError("write failed for '" + path.string() + "'");
}

template <class Writer, class Data>
void write_csv_file(const std::filesystem::path& path, Writer&& writer,
                    const Data& data) {
  std::ostringstream ss;
  writer(ss, data);
  write_text_file(path, ss.str());
}

}  // namespace vampcfar
