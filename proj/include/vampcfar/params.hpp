#pragma once

// Building, perturbing and (de)serializing per-layer unfolded-VAMP parameters.
//
// Parameter file (UTF-8 JSON):
//   {
//     "version": 1,
//     "k_layers": K,
//     "denoiser": "sst",
//     "layers": [ {"alpha": a, "theta": t, "gamma_w": g}, ... ],   // K entries
//     "provenance": "free text"
//   }

#include <boost/math/distributions/normal.hpp>
#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "vampcfar/errors.hpp"
#include "vampcfar/signal_model.hpp"
#include "vampcfar/vamp_core.hpp"

namespace vampcfar {

inline constexpr int kParamFileVersion = 1;
// gamma_w used when the nominal noise variance is zero.
inline constexpr double kNoiselessPrecision = 1e12;

// Soft-threshold scale for a Bernoulli-sparse input with the given fraction of
// nonzero real components: alpha = Phi^-1(1 - sparsity / 2), i.e. a pure-noise
// entry survives the threshold with probability equal to the sparsity.
inline double soft_threshold_alpha(double prior_sparsity) {
  if (!(prior_sparsity > 0.0 && prior_sparsity < 1.0)) {
    throw ValidationError("prior_sparsity must lie in (0, 1)");
  }
  boost::math::normal_distribution<double> std_normal;
  return boost::math::quantile(std_normal, 1.0 - prior_sparsity / 2.0);
}

// Emulates traditional VAMP: identical alpha on every layer, no damping and
// gamma_w equal to the true per-real-component precision 2 / noise_var.
inline UnfoldedModel matched_params(std::size_t k_layers, double prior_sparsity,
                                    double noise_var) {
  if (k_layers == 0) throw ValidationError("k_layers must be >= 1");
  if (!(noise_var >= 0.0)) throw ValidationError("noise_var must be >= 0");
  LayerParams p;
  p.alpha = soft_threshold_alpha(prior_sparsity);
  p.theta = 1.0;
  p.gamma_w = noise_var > 0.0 ? std::min(2.0 / noise_var, kNoiselessPrecision)
                              : kNoiselessPrecision;
  UnfoldedModel m;
  m.layers.assign(k_layers, p);
  m.provenance = Provenance::matched;
  m.provenance_note = "matched";
  return m;
}

// alpha_k and gamma_w_k are each multiplied by an independent draw from
// U[1/factor, factor]. factor = 1 returns the model unchanged.
inline UnfoldedModel perturb_params(const UnfoldedModel& model, double factor,
                                    Seed seed) {
  if (!(factor > 0.0) || !std::isfinite(factor)) {
    throw ValidationError("perturbation factor must be finite and > 0");
  }
  UnfoldedModel out = model;
  out.provenance = Provenance::perturbed;
  out.perturb_factor = factor;
  std::ostringstream note;
  note << "perturbed(" << factor << ")";
  out.provenance_note = note.str();
  if (factor == 1.0) return out;
  const double lo = std::min(factor, 1.0 / factor);
  const double hi = std::max(factor, 1.0 / factor);
  auto rng = make_rng(seed, 0x9a);
  std::uniform_real_distribution<double> draw(lo, hi);
  for (auto& layer : out.layers) {
    layer.alpha *= draw(rng);
    layer.gamma_w *= draw(rng);
  }
  return out;
}

inline nlohmann::json params_to_json(const UnfoldedModel& model) {
  nlohmann::json j;
  j["version"] = kParamFileVersion;
  j["k_layers"] = model.layers.size();
  j["denoiser"] = model.denoiser;
  j["layers"] = nlohmann::json::array();
  for (const auto& l : model.layers) {
    j["layers"].push_back(
        {{"alpha", l.alpha}, {"theta", l.theta}, {"gamma_w", l.gamma_w}});
  }
  j["provenance"] = model.provenance_note;
  return j;
}

namespace detail {

inline const nlohmann::json& require_field(const nlohmann::json& obj,
                                           const std::string& key,
                                           const std::string& path) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw SchemaError("parameter file: missing field " + path + "/" + key);
  }
  return obj.at(key);
}

inline double require_number(const nlohmann::json& obj, const std::string& key,
                             const std::string& path) {
  const auto& v = require_field(obj, key, path);
  if (!v.is_number()) {
    throw SchemaError("parameter file: " + path + "/" + key + " is not a number");
  }
  return v.get<double>();
}

}  // namespace detail

inline UnfoldedModel params_from_json(const nlohmann::json& j) {
  using detail::require_field;
  using detail::require_number;
  if (!j.is_object()) throw SchemaError("parameter file: root is not an object");
  const auto& version = require_field(j, "version", "");
  if (!version.is_number_integer() || version.get<int>() != kParamFileVersion) {
    throw SchemaError("parameter file: /version must be the integer 1");
  }
  const auto& k = require_field(j, "k_layers", "");
  if (!k.is_number_integer() || k.get<long long>() < 1) {
    throw SchemaError("parameter file: /k_layers must be a positive integer");
  }
  const auto& denoiser = require_field(j, "denoiser", "");
  if (!denoiser.is_string() || denoiser.get<std::string>() != "sst") {
    throw SchemaError("parameter file: /denoiser must be \"sst\"");
  }
  const auto& layers = require_field(j, "layers", "");
  if (!layers.is_array()) throw SchemaError("parameter file: /layers is not an array");
  const auto k_layers = k.get<std::size_t>();
  if (layers.size() != k_layers) {
    throw SchemaError("parameter file: /layers has " +
                      std::to_string(layers.size()) + " entries but /k_layers is " +
                      std::to_string(k_layers));
  }
  UnfoldedModel m;
  m.provenance = Provenance::learned;
  if (j.contains("provenance")) {
    if (!j["provenance"].is_string()) {
      throw SchemaError("parameter file: /provenance is not a string");
    }
    m.provenance_note = j["provenance"].get<std::string>();
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto path = "/layers/" + std::to_string(i);
    LayerParams p;
    p.alpha = require_number(layers[i], "alpha", path);
    p.theta = require_number(layers[i], "theta", path);
    p.gamma_w = require_number(layers[i], "gamma_w", path);
    m.layers.push_back(p);
  }
  validate(m);
  return m;
}

inline UnfoldedModel load_params(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open parameter file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError("parameter file '" + path + "': " + e.what());
  }
  UnfoldedModel m = params_from_json(j);
  m.source_path = path;
  return m;
}

inline void save_params(const UnfoldedModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write parameter file '" + path + "'");
  out << params_to_json(model).dump(2) << '\n';
}

}  // namespace vampcfar
