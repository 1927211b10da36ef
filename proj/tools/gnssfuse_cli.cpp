// gnssfuse command line: simulate | run | compare | sweep | fit-gmm
//
// Exit codes: 0 success, 2 usage error, 1 runtime failure.

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gnssfuse/io.hpp"

namespace gf = gnssfuse;
namespace io = gnssfuse::io;
namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::string dataset;
  std::string estimator;
  std::string window;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string input;
  std::string column = "residual";
  int k = 3;
  int epoch = -1;
  int residual_window = 0;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int parse_window(const std::string& s) {
  if (s == "batch") return gf::kBatchWindow;
  try {
    std::size_t pos = 0;
    const int w = std::stoi(s, &pos);
    if (pos != s.size() || w < 1) throw UsageError("");
    return w;
  } catch (const std::exception&) {
    throw UsageError("--window must be a positive integer or 'batch', got '" + s + "'");
  }
}

gf::EstimatorKind parse_estimator(const std::string& s) {
  try {
    return gf::estimator_from_string(s);
  } catch (const gf::DomainError&) {
    throw UsageError("unknown estimator '" + s + "' (expected ekf-lc, ekf-tc, fgo-lc or fgo-tc)");
  }
}

/// Run config file first, then command-line flags on top.
io::RunSettings resolve_run_settings(const Options& o) {
  io::RunSettings s;
  if (!o.config.empty()) s = io::load_run_settings(o.config);
  if (!o.dataset.empty()) s.dataset = o.dataset;
  if (!o.out.empty()) s.out = o.out;
  if (!o.estimator.empty()) s.run.estimator = parse_estimator(o.estimator);
  if (!o.window.empty()) s.run.window = parse_window(o.window);
  if (o.seed) s.seed = o.seed;
  if (s.dataset.empty()) throw UsageError("--dataset is required");
  if (s.out.empty()) throw UsageError("--out is required");
  return s;
}

struct Loaded {
  gf::Dataset ds;
  std::vector<gf::EpochMeasurements> epochs;
};

Loaded load(const io::RunSettings& s) {
  Loaded l;
  l.ds = io::read_dataset(s.dataset);
  l.epochs = gf::make_epochs(l.ds, s.run.weighting);
  return l;
}

nlohmann::json summary_with_meta(const gf::Summary& sum, const gf::RunResult& r, const io::RunSettings& s) {
  auto j = io::summary_json(sum);
  j["estimator"] = std::string(gf::to_string(r.estimator));
  j["window"] = io::window_label(r.window);
  if (s.seed) j["seed"] = *s.seed;
  if (r.error) j["error"] = *r.error;
  return j;
}

/// Writes epochs.csv, summary.json and, for tight coupling, the per-satellite
/// residuals. The summary is recomputed from the written CSV.
gf::Summary write_run(const fs::path& dir, const std::string& prefix, const gf::RunResult& r,
                      const io::RunSettings& s) {
  fs::create_directories(dir);
  const fs::path epochs = dir / (prefix + "epochs.csv");
  io::write_epochs_csv(epochs, r.records);
  if (gf::coupling_of(r.estimator) == gf::Coupling::kTight) {
    io::write_residuals_csv(dir / (prefix + "pseudorange_residuals.csv"), r.residuals);
  }
  gf::Summary sum;
  if (!r.records.empty()) sum = io::summary_from_written(epochs);
  io::write_json(dir / (prefix + "summary.json"), summary_with_meta(sum, r, s));
  return sum;
}

int cmd_simulate(const Options& o) {
  if (o.out.empty()) throw UsageError("--out is required");
  gf::SimConfig cfg = o.config.empty() ? gf::default_sim_config() : io::load_sim_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  const gf::Dataset ds = gf::simulate(cfg);
  io::write_dataset(o.out, ds);
  std::size_t obs = 0, nlos = 0;
  for (const auto& e : ds.observations) {
    for (const auto& s : e) {
      ++obs;
      nlos += s.nlos_truth.value_or(false);
    }
  }
  std::printf("epochs: %zu\nsatellites/epoch: %.2f\nnlos fraction: %.3f\n", ds.truth.size(),
              static_cast<double>(obs) / static_cast<double>(ds.truth.size()),
              obs ? static_cast<double>(nlos) / static_cast<double>(obs) : 0.0);
  return 0;
}

int cmd_run(const Options& o) {
  const io::RunSettings s = resolve_run_settings(o);
  const Loaded l = load(s);
  const gf::RunResult r = gf::run_estimator(l.epochs, l.ds.truth, l.ds.reference, s.run);
  const gf::Summary sum = write_run(s.out, "", r, s);
  std::printf("%s window=%s mean_err=%.3f std_err=%.3f total_time=%.4f\n", std::string(gf::to_string(r.estimator)).c_str(),
              io::window_label(r.window).c_str(), sum.mean_err, sum.std_err, sum.total_time);
  if (r.error) {
    std::fprintf(stderr, "error: %s\n", r.error->c_str());
    return 1;
  }
  return 0;
}

int cmd_compare(const Options& o) {
  Options base = o;
  base.estimator.clear();
  const io::RunSettings s = resolve_run_settings(base);
  std::vector<gf::EstimatorKind> kinds;
  if (o.estimator.empty()) {
    kinds.assign(gf::kAllEstimators.begin(), gf::kAllEstimators.end());
  } else {
    for (const auto& name : split_list(o.estimator)) kinds.push_back(parse_estimator(name));
  }
  const Loaded l = load(s);
  const fs::path dir = s.out;
  fs::create_directories(dir);
  io::CsvWriter table(dir / "compare.csv", {"estimator", "window", "mean_err", "std_err", "total_time"});
  nlohmann::json report = nlohmann::json::array();
  bool failed = false;
  std::printf("%-8s %10s %10s %12s\n", "estimator", "mean_err", "std_err", "total_time");
  for (auto k : kinds) {
    gf::RunConfig cfg = s.run;
    cfg.estimator = k;
    const gf::RunResult r = gf::run_estimator(l.epochs, l.ds.truth, l.ds.reference, cfg);
    const std::string name(gf::to_string(k));
    const gf::Summary sum = write_run(dir, name + "_", r, s);
    const std::string window = gf::is_fgo(k) ? io::window_label(cfg.window) : "";
    table.row({name, window, io::fmt(sum.mean_err), io::fmt(sum.std_err), io::fmt(sum.total_time)});
    report.push_back(summary_with_meta(sum, r, s));
    std::printf("%-8s %10.3f %10.3f %12.4f\n", name.c_str(), sum.mean_err, sum.std_err, sum.total_time);
    if (r.error) {
      std::fprintf(stderr, "error: %s\n", r.error->c_str());
      failed = true;
    }
  }
  io::write_json(dir / "compare.json", report);
  return failed ? 1 : 0;
}

int cmd_sweep(const Options& o) {
  Options base = o;
  base.window.clear();
  const io::RunSettings s = resolve_run_settings(base);
  std::vector<int> sizes;
  for (const auto& w : split_list(o.window.empty() ? "1,5,10,30,batch" : o.window)) sizes.push_back(parse_window(w));
  if (sizes.empty()) throw UsageError("--window needs at least one size");
  const Loaded l = load(s);
  const fs::path dir = s.out;
  fs::create_directories(dir);
  io::CsvWriter table(dir / "sweep.csv", {"window", "mean_err", "std_err", "total_time"});
  io::CsvWriter curves(dir / "sweep_curves.csv", {"window", "epoch", "t", "err_2d"});
  nlohmann::json report = nlohmann::json::array();
  gf::RunConfig cfg = s.run;
  cfg.estimator = gf::EstimatorKind::kFgoTc;
  bool failed = false;
  std::printf("%-8s %10s %10s %12s\n", "window", "mean_err", "std_err", "total_time");
  for (int w : sizes) {
    cfg.window = w;
    const gf::RunResult r = gf::run_estimator(l.epochs, l.ds.truth, l.ds.reference, cfg);
    const std::string label = io::window_label(w);
    const gf::Summary sum = write_run(dir, "w" + label + "_", r, s);
    table.row({label, io::fmt(sum.mean_err), io::fmt(sum.std_err), io::fmt(sum.total_time)});
    for (const auto& rec : r.records) curves.row({label, std::to_string(rec.epoch), io::fmt(rec.time), io::fmt(rec.err_2d)});
    report.push_back(summary_with_meta(sum, r, s));
    std::printf("%-8s %10.3f %10.3f %12.4f\n", label.c_str(), sum.mean_err, sum.std_err, sum.total_time);
    if (r.error) {
      std::fprintf(stderr, "error: %s\n", r.error->c_str());
      failed = true;
    }
  }
  io::write_json(dir / "sweep.json", report);
  return failed ? 1 : 0;
}

int cmd_fit_gmm(const Options& o) {
  if (o.input.empty()) throw UsageError("--input is required");
  if (o.out.empty()) throw UsageError("--out is required");
  if (o.k < 1) throw UsageError("--k must be >= 1");
  std::vector<double> samples;
  if (o.epoch >= 0 && o.residual_window > 0) {
    const io::CsvTable t = io::read_csv(o.input);
    const std::size_t ec = t.column("epoch");
    const std::size_t vc = t.column(o.column);
    for (const auto& r : t.rows) {
      const int e = io::to_int(r[ec]);
      if (e <= o.epoch && e > o.epoch - o.residual_window) samples.push_back(io::to_double(r[vc]));
    }
  } else {
    samples = io::read_column(o.input, o.column);
  }
  const gf::GmmFit fit = gf::fit_gmm_trace(samples, o.k);
  const fs::path out = o.out;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  auto j = io::gmm_json(fit);
  j["samples"] = samples.size();
  j["column"] = o.column;
  io::write_json(out, j);
  std::printf("%-9s %10s %10s %10s\n", "component", "weight", "mean", "std");
  for (std::size_t i = 0; i < fit.model.components.size(); ++i) {
    const auto& c = fit.model.components[i];
    std::printf("%-9zu %10.4f %10.3f %10.3f\n", i, c.weight, c.mean, c.std);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GNSS/INS fusion toolkit: EKF and factor-graph estimators on simulated urban-canyon data"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--out", o.out, "Output directory (file for fit-gmm)");
  };
  auto add_run = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Run config JSON");
    sub->add_option("--dataset", o.dataset, "Dataset directory");
    sub->add_option("--seed", seed, "Seed recorded with the outputs");
    add_common(sub);
  };

  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic urban-canyon dataset");
  simulate->add_option("--config", o.config, "Simulation config JSON");
  simulate->add_option("--seed", seed, "Overrides the config seed");
  add_common(simulate);

  auto* run = app.add_subcommand("run", "Run one estimator");
  add_run(run);
  run->add_option("--estimator", o.estimator, "ekf-lc | ekf-tc | fgo-lc | fgo-tc");
  run->add_option("--window", o.window, "FGO window in epochs, or 'batch'");

  auto* compare = app.add_subcommand("compare", "Run several estimators on one dataset");
  add_run(compare);
  compare->add_option("--estimator", o.estimator, "Comma-separated estimators (default: all four)");
  compare->add_option("--window", o.window, "FGO window in epochs, or 'batch'");

  auto* sweep = app.add_subcommand("sweep", "Tightly coupled FGO over several window sizes");
  add_run(sweep);
  sweep->add_option("--window", o.window, "Comma-separated sizes (default: 1,5,10,30,batch)");

  auto* fit = app.add_subcommand("fit-gmm", "Fit a Gaussian mixture to a CSV column");
  fit->add_option("--input", o.input, "CSV file, e.g. pseudorange_residuals.csv");
  fit->add_option("--column", o.column, "Column to fit (default: residual)");
  fit->add_option("--k", o.k, "Number of components (default: 3)");
  fit->add_option("--epoch", o.epoch, "Last epoch of the residual window");
  fit->add_option("--residual-window", o.residual_window, "Window length in epochs, used with --epoch");
  add_common(fit);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  for (auto* sub : {simulate, run, compare, sweep}) {
    if (*sub && sub->count("--seed") > 0) o.seed = seed;
  }

  try {
    if (*simulate) return cmd_simulate(o);
    if (*run) return cmd_run(o);
    if (*compare) return cmd_compare(o);
    if (*sweep) return cmd_sweep(o);
    if (*fit) return cmd_fit_gmm(o);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
