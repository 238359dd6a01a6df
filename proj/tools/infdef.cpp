// Command-line runner. Exit codes: 0 success, 1 other failure, 2 config
// error, 3 numerical failure.

#include <CLI11.hpp>

#include <iostream>

#include "infdef/experiment.hpp"

namespace {

struct Options {
  std::string config;
  std::string out;
  std::vector<std::uint64_t> seeds;
  int workers = 0;
  std::string preset;
  double constant_scale = 1.0;
  std::size_t max_cells = static_cast<std::size_t>(-1);
};

infdef::ExperimentConfig load(const Options& o) {
  auto cfg = infdef::ExperimentConfig::from_file(o.config);
  if (!o.seeds.empty()) cfg.seeds = o.seeds;
  if (o.workers > 0) cfg.workers = o.workers;
  if (!o.preset.empty()) cfg.preset = o.preset;
  if (!o.out.empty()) cfg.output_dir = o.out;
  if (cfg.output_dir.empty()) cfg.output_dir = "runs/" + cfg.name;
  cfg.validate();
  return cfg;
}

void print(const infdef::json& j) { std::cout << j.dump(2) << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Density estimation on manifolds by inflation and deflation"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--config", o.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  app.add_option("--out", o.out, "output directory (default: output_dir from the config, else runs/<name>)");
  app.add_option("--seed", o.seeds, "seed list, replaces the config seeds");
  app.add_option("--workers", o.workers, "parallel sweep cells")->check(CLI::PositiveNumber);
  app.add_option("--preset", o.preset, "flow preset")->check(CLI::IsMember({"desk", "paper", "highd"}));

  auto* generate = app.add_subcommand("generate", "write latent, on-manifold and inflated samples");
  auto* sweep = app.add_subcommand("sweep", "train and evaluate every (noise kind, sigma2, seed) cell");
  sweep->add_option("--max-cells", o.max_cells, "stop after this many new cells");
  auto* bounds = app.add_subcommand("bounds", "nearest-neighbour and curvature bounds on sigma2");
  auto* fom = app.add_subcommand("baseline-fom", "density fitted directly in latent space");
  auto* oracle = app.add_subcommand("oracle-deflate", "deflate the analytic inflated density");
  oracle->add_option("--constant-scale", o.constant_scale, "multiply the deflation constant")
      ->check(CLI::PositiveNumber);
  auto* reach = app.add_subcommand("reachability", "fraction of inflated points with several generators");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const auto cfg = load(o);
    const std::filesystem::path out = cfg.output_dir;
    if (generate->parsed()) {
      print(infdef::run_generate(cfg, out));
    } else if (sweep->parsed()) {
      infdef::SweepOptions so;
      so.max_cells = o.max_cells;
      so.log = [](const std::string& s) { std::cerr << s << std::endl; };
      const auto rows = infdef::run_sweep(cfg, out, so);
      std::size_t failed = 0;
      for (const auto& r : rows) failed += r.status != "ok";
      std::cout << rows.size() << " cells, " << failed << " failed, results in " << (out / "sweep.csv").string()
                << "\n";
    } else if (bounds->parsed()) {
      print(infdef::run_bounds(cfg, out));
    } else if (fom->parsed()) {
      print(infdef::run_fom(cfg, out));
    } else if (oracle->parsed()) {
      print(infdef::run_oracle_deflate(cfg, out, o.constant_scale));
    } else if (reach->parsed()) {
      print(infdef::run_reachability(cfg, out));
    }
  } catch (const infdef::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const infdef::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const infdef::DivergenceError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
