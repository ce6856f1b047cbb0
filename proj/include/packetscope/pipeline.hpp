#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "packetscope/io.hpp"

namespace packetscope {

// Initial-data presets. The geometric parameters mean: amplitude = velocity
// scale, sigma = blob width, offset = blob displacement from the box center,
// [m_lo, m_hi] = retained mode band of the random preset. Seeds matter only
// for random-band.
struct InitialSpec {
  std::string preset = "taylor-green";
  double amplitude = 1.0;
  double sigma = 0.5;
  double offset = 1.0;
  int m_lo = 1;
  int m_hi = 4;
};

const std::vector<std::string>& preset_names();
FieldSnapshot make_initial(const Grid& g, const InitialSpec& spec, std::uint64_t seed);

struct ProbeSpec {
  std::vector<double> eps{0.1};
  int samples = 40;
};

struct RunConfig {
  Grid grid{64, kTwoPi, 1.0};
  RunParams integrator;  // dt = 0 selects an automatic CFL-safe step
  ScanConfig lattice;
  ThresholdConfig threshold;
  DefectConfig defect;
  double delta = 0.25;  // dichotomy fraction per descent step
  int max_steps = 0;
  ProbeSpec probe;
  ConstantsLedger ledger = default_ledger();
  InitialSpec initial;
  std::uint64_t seed = 0;
  std::filesystem::path out = "out";
};

// Schema-validated parse: unknown keys are rejected at every level, ledger
// entries may be overridden, and the threshold defaults inherit the ledger's
// m_star / c_star unless the config sets them explicitly.
RunConfig parse_config(const io::json& j);
RunConfig load_config(const std::filesystem::path& path);
io::json config_json(const RunConfig& cfg);  // effective config echo

// Exit codes shared by the pipeline entry points and the CLI:
// 0 clean / no threshold, 1 operational error, 2 descent terminated,
// 3 invariant violation.
inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitDescent = 2;
inline constexpr int kExitViolation = 3;

// integrate the preset and write snapshots + manifest + energy.csv
int run_simulate(const RunConfig& cfg);
// full diagnostics on a stored history: envelope.csv, transcript.jsonl,
// reports.json, triads.csv, frames.json, audit.json, falsifications.jsonl
int run_diagnose(const RunConfig& cfg, const std::filesystem::path& manifest);
// randomized frame-gap stress sweep: gap.json with per-eps records, the
// c(eps) floor table, and a fitted defect exponent
int run_probe_gap(const RunConfig& cfg);

}  // namespace packetscope
