#include <omp.h>

#include <cstdio>
#include <cstdlib>
#include <string>

#include "CLI11.hpp"
#include "packetscope/pipeline.hpp"

using namespace packetscope;

namespace {

struct Overrides {
  std::string config;
  std::string preset;
  std::string out;
  std::string history;
  std::uint64_t seed = 0;
  int resolution = 0;
  int max_steps = -1;
  bool seed_set = false;
};

void add_common(CLI::App* sc, Overrides& ov) {
  sc->add_option("--config", ov.config, "run configuration JSON");
  sc->add_option("--preset", ov.preset, "initial-data preset, overrides the config")
      ->check(CLI::IsMember(preset_names()));
  sc->add_option("--seed", ov.seed, "random seed, overrides the config")
      ->each([&ov](const std::string&) { ov.seed_set = true; });
  sc->add_option("--out", ov.out, "output directory, overrides the config");
  sc->add_option("--resolution", ov.resolution, "grid points per axis, overrides the config");
}

RunConfig build_config(const Overrides& ov) {
  RunConfig cfg = ov.config.empty() ? parse_config(io::json::object()) : load_config(ov.config);
  if (!ov.preset.empty()) cfg.initial.preset = ov.preset;
  if (ov.seed_set) cfg.seed = ov.seed;
  if (!ov.out.empty()) cfg.out = ov.out;
  if (ov.resolution > 0)
    cfg.grid = Grid(ov.resolution, cfg.grid.box_length, cfg.grid.viscosity);
  if (ov.max_steps >= 0) cfg.max_steps = ov.max_steps;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* t = std::getenv("PACKETSCOPE_THREADS")) {
    const int k = std::atoi(t);
    if (k >= 1) omp_set_num_threads(k);
  }

  CLI::App app{"packetscope: parabolic-packet flow diagnostics"};
  app.require_subcommand(0, 1);
  bool dump_ledger = false;
  app.add_flag("--dump-ledger", dump_ledger, "print the effective constants ledger and exit");
  Overrides root_ov;
  app.add_option("--config", root_ov.config, "run configuration JSON");

  Overrides sim_ov, diag_ov, gap_ov;
  CLI::App* sim = app.add_subcommand("simulate", "integrate a preset and store the history");
  add_common(sim, sim_ov);
  CLI::App* diag = app.add_subcommand("diagnose", "run the diagnostics pipeline on a history");
  add_common(diag, diag_ov);
  diag->add_option("--history", diag_ov.history, "history manifest (default: <out>/manifest.json)");
  diag->add_option("--max-descent-steps", diag_ov.max_steps, "descent step budget override");
  CLI::App* gap = app.add_subcommand("probe-gap", "randomized frame-gap stress sweep");
  add_common(gap, gap_ov);

  CLI11_PARSE(app, argc, argv);

  try {
    if (dump_ledger) {
      Overrides& ov = sim->parsed() ? sim_ov : diag->parsed() ? diag_ov : gap->parsed() ? gap_ov : root_ov;
      const RunConfig cfg = build_config(ov);
      std::printf("%s\n", io::ledger_json(cfg.ledger).dump(2).c_str());
      return kExitOk;
    }
    if (sim->parsed()) return run_simulate(build_config(sim_ov));
    if (diag->parsed()) {
      const RunConfig cfg = build_config(diag_ov);
      const std::filesystem::path manifest =
          diag_ov.history.empty() ? cfg.out / "manifest.json" : std::filesystem::path(diag_ov.history);
      return run_diagnose(cfg, manifest);
    }
    if (gap->parsed()) return run_probe_gap(build_config(gap_ov));
    std::fprintf(stderr, "%s\n", app.help().c_str());
    return kExitError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitError;
  }
}
