// vampcfar: Monte-Carlo experiments for unfolded-VAMP CFAR detection.
//
//   vampcfar sigma-convergence --config cfg.json --out dir [--workers k] [--params file]
//   vampcfar roc               --config cfg.json --out dir [--workers k] [--params file]
//   vampcfar pfa-control       --config cfg.json --out dir [--workers k] [--params file]
//   vampcfar export-params     --config cfg.json --out params.json
//   vampcfar export-fixture    --config cfg.json --out dir
//   vampcfar plot-data         --in table.csv --x col --y col [--group col]
//
// Exit codes: 0 success, 2 configuration error, 3 numeric failure.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "vampcfar/errors.hpp"
#include "vampcfar/experiments.hpp"
#include "vampcfar/params.hpp"
#include "vampcfar/report_io.hpp"

namespace fs = std::filesystem;
using namespace vampcfar;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct RunOptions {
  std::string config;
  std::string out;
  std::size_t workers = 1;
  std::string params;
};

ExperimentConfig load_config(const RunOptions& opt) {
  std::ifstream in(opt.config);
  if (!in) throw ConfigError("cannot open config '" + opt.config + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + opt.config + "': " + e.what());
  }
  if (!opt.params.empty()) {
    j["param_mode"] = "learned";
    j["params_path"] = opt.params;
  }
  return config_from_json(j);
}

void prepare_out_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory '" + dir + "': " + ec.message());
}

void write_manifest(const fs::path& dir, const std::string& name,
                    const ExperimentConfig& c, nlohmann::json results) {
  auto manifest = make_manifest(name, c, build_model(c));
  manifest["results"] = std::move(results);
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

nlohmann::json failure_counts(const MetricsTable& t) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& r : t.rows) j[to_string(r.detector)] = r.failures;
  return j;
}

int run_sigma(const RunOptions& opt) {
  const auto cfg = load_config(opt);
  prepare_out_dir(opt.out);
  const SigmaReport report = run_sigma_convergence(cfg, opt.workers);
  const fs::path dir = opt.out;
  write_csv_file(dir / "sigma_trials.csv", write_sigma_trials_csv, report);
  write_csv_file(dir / "sigma_trace.csv", write_sigma_trace_csv, report);
  write_csv_file(dir / "sigma_ecdf.csv", write_sigma_ecdf_csv, report);
  nlohmann::json results;
  results["recovery_failures"] = report.recovery_failures;
  results["detector_failures"] = nlohmann::json::object();
  for (const auto& [d, n] : report.detector_failures) {
    results["detector_failures"][to_string(d)] = n;
  }
  write_manifest(dir, "sigma-convergence", cfg, results);
  std::cerr << "sigma-convergence: " << cfg.trials << " trials, "
            << report.recovery_failures << " recovery failures\n";
  return 0;
}

int run_table(const RunOptions& opt, bool roc) {
  const auto cfg = load_config(opt);
  prepare_out_dir(opt.out);
  const MetricsTable table = roc ? run_roc(cfg, opt.workers)
                                 : run_pfa_control(cfg, opt.workers);
  const fs::path dir = opt.out;
  if (roc) {
    write_csv_file(dir / "roc.csv", write_roc_csv, table);
  } else {
    write_csv_file(dir / "pfa_control.csv", write_pfa_control_csv, table);
  }
  write_manifest(dir, roc ? "roc" : "pfa-control", cfg,
                 {{"failures", failure_counts(table)}});
  return 0;
}

int export_params(const RunOptions& opt) {
  const auto cfg = load_config(opt);
  save_params(build_model(cfg), opt.out);
  return 0;
}

// fixture.csv, one row per value:
//   trial,seed,field,index,re,im
// field "dft_row": index = 1-based matrix row, re = selected DFT frequency k
//                  (0-based, the k in exp(-j 2 pi k l / n) / sqrt(n)), im = 0
// field "x0":      index = 1-based bin, re/im = scene amplitude
// field "y":       index = 1-based measurement, re/im = noisy measurement
int export_fixture(const RunOptions& opt) {
  const auto cfg = load_config(opt);
  prepare_out_dir(opt.out);
  std::ostringstream out;
  out << "trial,seed,field,index,re,im\n";
  for (std::size_t t = 0; t < cfg.trials; ++t) {
    const Seed seed = cfg.base_seed + t;
    const TrialData d = generate_trial(cfg, seed);
    const std::string prefix = std::to_string(t) + ',' + std::to_string(seed) + ',';
    for (std::size_t i = 0; i < d.matrix.selected_rows.size(); ++i) {
      out << prefix << "dft_row," << (i + 1) << ',' << d.matrix.selected_rows[i]
          << ",0\n";
    }
    for (Eigen::Index i = 0; i < d.scene.amplitudes.size(); ++i) {
      const auto v = d.scene.amplitudes[i];
      out << prefix << "x0," << (i + 1) << ',' << format_number(v.real()) << ','
          << format_number(v.imag()) << '\n';
    }
    for (Eigen::Index i = 0; i < d.measurement.complex_values.size(); ++i) {
      const auto v = d.measurement.complex_values[i];
      out << prefix << "y," << (i + 1) << ',' << format_number(v.real()) << ','
          << format_number(v.imag()) << '\n';
    }
  }
  const fs::path dir = opt.out;
  write_text_file(dir / "fixture.csv", out.str());
  save_params(build_model(cfg), (dir / "params.json").string());
  write_manifest(dir, "export-fixture", cfg, nlohmann::json::object());
  return 0;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

// Two whitespace-separated columns per group; groups are separated by two
// blank lines so gnuplot can address them with `index`.
int plot_data(const std::string& in_path, const std::string& x, const std::string& y,
              const std::string& group) {
  std::ifstream in(in_path);
  if (!in) throw ConfigError("cannot open '" + in_path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("'" + in_path + "' is empty");
  const auto header = split_csv_line(line);
  auto column = [&](const std::string& name) -> std::size_t {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw ConfigError("column '" + name + "' not found in '" + in_path + "'");
  };
  const auto xi = column(x);
  const auto yi = column(y);
  const std::optional<std::size_t> gi =
      group.empty() ? std::nullopt : std::optional<std::size_t>(column(group));
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> blocks;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    const std::string key = gi ? cells.at(*gi) : "";
    if (!blocks.count(key)) order.push_back(key);
    blocks[key].emplace_back(cells.at(xi), cells.at(yi));
  }
  bool first = true;
  for (const auto& key : order) {
    if (!first) std::cout << "\n\n";
    first = false;
    std::cout << "# " << (gi ? group + "=" + key : std::string("all")) << '\n';
    std::cout << "# " << x << ' ' << y << '\n';
    for (const auto& [xv, yv] : blocks[key]) std::cout << xv << ' ' << yv << '\n';
  }
  return 0;
}

void add_run_options(CLI::App* cmd, RunOptions& opt, bool with_runtime) {
  cmd->add_option("--config", opt.config, "Experiment config (JSON)")->required();
  cmd->add_option("--out", opt.out, "Output directory")->required();
  if (with_runtime) {
    cmd->add_option("--workers", opt.workers, "Worker threads")
        ->check(CLI::PositiveNumber);
  }
  cmd->add_option("--params", opt.params, "Learned parameter file (overrides param_mode)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unfolded-VAMP CFAR detection experiments"};
  app.require_subcommand(1);

  RunOptions opt;
  auto* sigma = app.add_subcommand("sigma-convergence",
                                   "Per-iteration PCD sigma traces and ECDFs");
  auto* roc = app.add_subcommand("roc", "Pd / Pfa over a nominal pfa grid");
  auto* pfa = app.add_subcommand("pfa-control", "Empirical vs nominal false alarm rate");
  for (auto* cmd : {sigma, roc, pfa}) add_run_options(cmd, opt, true);

  auto* params = app.add_subcommand("export-params", "Write the model a config resolves to");
  add_run_options(params, opt, false);
  auto* fixture = app.add_subcommand("export-fixture",
                                     "Write generated trial data as a CSV fixture");
  add_run_options(fixture, opt, false);

  std::string plot_in, plot_x, plot_y, plot_group;
  auto* plot = app.add_subcommand("plot-data", "Emit gnuplot-ready columns from a CSV");
  plot->add_option("--in", plot_in, "CSV table")->required();
  plot->add_option("--x", plot_x, "X column")->required();
  plot->add_option("--y", plot_y, "Y column")->required();
  plot->add_option("--group", plot_group, "Column to split data blocks on");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*sigma) return run_sigma(opt);
    if (*roc) return run_table(opt, true);
    if (*pfa) return run_table(opt, false);
    if (*params) return export_params(opt);
    if (*fixture) return export_fixture(opt);
    if (*plot) return plot_data(plot_in, plot_x, plot_y, plot_group);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const SchemaError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ValidationError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const Error& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  }
  return 0;
}
