#include "packetscope/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace packetscope {

namespace fs = std::filesystem;
using io::json;

// presets ----------------------------------------------------------------------

namespace {

VecField zero_field(const Grid& g) {
  VecField u;
  for (int c = 0; c < 3; ++c) u[c].assign(g.real_size(), 0.0);
  return u;
}

// localized rigid rotation about the line through x0 along unit axis a
void add_swirl(VecField& u, const Grid& g, const Vec3& x0, const Vec3& a, double sigma,
               double amp) {
  for (int iz = 0; iz < g.n; ++iz)
    for (int iy = 0; iy < g.n; ++iy)
      for (int ix = 0; ix < g.n; ++ix) {
        const Vec3 d = g.min_image(g.point(ix, iy, iz), x0);
        const double z = dot(d, a);
        const Vec3 p = d - z * a;
        const double e = amp * std::exp(-(dot(p, p) + z * z) / (2.0 * sigma * sigma));
        const Vec3 v = cross(a, p);
        const std::size_t id = g.real_index(ix, iy, iz);
        for (int c = 0; c < 3; ++c) u[c][id] += e * v[c];
      }
}

FieldSnapshot taylor_green(const Grid& g, double amp) {
  const double kb = kTwoPi / g.box_length;
  VecField u = zero_field(g);
  for (int iz = 0; iz < g.n; ++iz)
    for (int iy = 0; iy < g.n; ++iy)
      for (int ix = 0; ix < g.n; ++ix) {
        const Vec3 x = g.point(ix, iy, iz);
        const std::size_t id = g.real_index(ix, iy, iz);
        u[0][id] = amp * std::cos(kb * x[0]) * std::sin(kb * x[1]);
        u[1][id] = -amp * std::sin(kb * x[0]) * std::cos(kb * x[1]);
      }
  return FieldSnapshot::from_velocity(g, 0.0, u, true);
}

FieldSnapshot random_band(const Grid& g, const InitialSpec& spec, std::uint64_t seed) {
  if (spec.m_lo < 1 || spec.m_hi < spec.m_lo) throw ConfigError("random-band: bad mode band");
  if (spec.m_hi > g.dealias_mode())
    throw ConfigError("random-band: band exceeds the dealiased range");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coef(-1.0, 1.0);
  SpecVec uh;
  for (int c = 0; c < 3; ++c) uh[c].assign(g.spec_size(), {0.0, 0.0});
  const int nx = g.n / 2 + 1;
  for (int kz = 0; kz < g.n; ++kz)
    for (int ky = 0; ky < g.n; ++ky)
      for (int kx = 0; kx < nx; ++kx) {
        const double m2 = static_cast<double>(kx) * kx +
                          static_cast<double>(g.mode_of(ky)) * g.mode_of(ky) +
                          static_cast<double>(g.mode_of(kz)) * g.mode_of(kz);
        const double m = std::sqrt(m2);
        if (m < spec.m_lo - 0.5 || m > spec.m_hi + 0.5) continue;
        const std::size_t id = g.spec_index(kx, ky, kz);
        for (int c = 0; c < 3; ++c) uh[c][id] = {coef(rng), coef(rng)};
      }
  for (int c = 0; c < 3; ++c) hermitian_symmetrize(g, uh[c]);
  FieldSnapshot raw = FieldSnapshot::from_velocity_hat(g, 0.0, std::move(uh), true);
  const double e = raw.energy();
  if (e <= 0.0) throw ConfigError("random-band: the band carries no energy");
  const double s = spec.amplitude / std::sqrt(e);
  SpecVec scaled = raw.u_hat;
  for (int c = 0; c < 3; ++c)
    for (auto& v : scaled[c]) v *= s;
  return FieldSnapshot::from_velocity_hat(g, 0.0, std::move(scaled), false);
}

FieldSnapshot locally_2d(const Grid& g, const InitialSpec& spec) {
  // z-independent velocity from a two-blob streamfunction
  const Vec3 c0{0.5 * g.box_length, 0.5 * g.box_length, 0.0};
  const Vec3 x1 = c0 + Vec3{spec.offset * 0.45, spec.offset * 0.25, 0.0};
  const Vec3 x2 = c0 - Vec3{spec.offset * 0.45, spec.offset * 0.25, 0.0};
  const double s2 = spec.sigma * spec.sigma;
  VecField u = zero_field(g);
  for (int iz = 0; iz < g.n; ++iz)
    for (int iy = 0; iy < g.n; ++iy)
      for (int ix = 0; ix < g.n; ++ix) {
        const Vec3 x = g.point(ix, iy, iz);
        const std::size_t id = g.real_index(ix, iy, iz);
        for (int b = 0; b < 2; ++b) {
          Vec3 d = g.min_image(x, b == 0 ? x1 : x2);
          d[2] = 0.0;
          const double a = (b == 0 ? 1.0 : -0.7) * spec.amplitude;
          const double psi = a * std::exp(-dot(d, d) / (2.0 * s2));
          u[0][id] += -d[1] / s2 * psi;  //  d psi / dy
          u[1][id] += d[0] / s2 * psi;   // -d psi / dx
        }
      }
  return FieldSnapshot::from_velocity(g, 0.0, u, true);
}

Vec3 box_center(const Grid& g) {
  return {0.5 * g.box_length, 0.5 * g.box_length, 0.5 * g.box_length};
}

}  // namespace

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{
      "zero",     "taylor-green", "random-band",     "two-blob",
      "two-axis", "locally-2d",   "axisymmetric-swirl", "planted-annulus"};
  return names;
}

FieldSnapshot make_initial(const Grid& g, const InitialSpec& spec, std::uint64_t seed) {
  const Vec3 c0 = box_center(g);
  if (spec.amplitude < 0.0 || spec.sigma <= 0.0 || spec.offset < 0.0)
    throw ConfigError("initial: amplitude/sigma/offset out of range");
  if (spec.preset == "zero")
    return FieldSnapshot::from_velocity(g, 0.0, zero_field(g), true);
  if (spec.preset == "taylor-green") return taylor_green(g, spec.amplitude);
  if (spec.preset == "random-band") return random_band(g, spec, seed);
  if (spec.preset == "locally-2d") return locally_2d(g, spec);
  if (spec.preset == "axisymmetric-swirl") {
    VecField u = zero_field(g);
    add_swirl(u, g, c0, {0.0, 0.0, 1.0}, spec.sigma, spec.amplitude);
    return FieldSnapshot::from_velocity(g, 0.0, u, true);
  }
  if (spec.preset == "two-blob") {
    VecField u = zero_field(g);
    add_swirl(u, g, c0 + Vec3{0.0, spec.offset, 0.0}, {0.0, 0.0, 1.0}, spec.sigma, spec.amplitude);
    add_swirl(u, g, c0 - Vec3{0.0, spec.offset, 0.0}, {1.0, 0.0, 0.0}, spec.sigma,
              0.8 * spec.amplitude);
    return FieldSnapshot::from_velocity(g, 0.0, u, true);
  }
  if (spec.preset == "two-axis") {
    VecField u = zero_field(g);
    add_swirl(u, g, c0 + Vec3{0.0, 0.3, 0.25}, {0.0, 0.0, 1.0}, spec.sigma, spec.amplitude);
    add_swirl(u, g, c0 - Vec3{0.0, 0.3, 0.1}, {1.0, 0.0, 0.0}, spec.sigma, 0.8 * spec.amplitude);
    return FieldSnapshot::from_velocity(g, 0.0, u, true);
  }
  if (spec.preset == "planted-annulus") {
    VecField u = zero_field(g);
    add_swirl(u, g, c0, {0.0, 0.0, 1.0}, spec.sigma, spec.amplitude);
    static constexpr Vec3 dirs[6] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0},
                                     {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    for (const Vec3& d : dirs)
      add_swirl(u, g, c0 + spec.offset * d, {0.0, 0.0, 1.0}, spec.sigma, 1.2 * spec.amplitude);
    return FieldSnapshot::from_velocity(g, 0.0, u, true);
  }
  throw ConfigError("initial: unknown preset '" + spec.preset + "'");
}

// config -----------------------------------------------------------------------

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* ok : keys) known = known || (k == ok);
    if (!known) throw ConfigError(std::string(what) + ": unknown key '" + k + "'");
  }
}

template <typename T>
T get_or(const json& j, const char* key, T dflt) {
  if (!j.contains(key)) return dflt;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config: key '") + key + "' has the wrong type");
  }
}

}  // namespace

RunConfig parse_config(const json& j) {
  RunConfig cfg;
  reject_unknown(j,
                 {"grid", "integrator", "lattice", "threshold", "defect", "descent", "probe",
                  "ledger", "initial", "seed", "out"},
                 "config");

  if (j.contains("ledger")) cfg.ledger = io::ledger_from_json(j.at("ledger"), cfg.ledger);

  if (j.contains("grid")) {
    const json& g = j.at("grid");
    reject_unknown(g, {"n", "box_length", "viscosity"}, "config.grid");
    cfg.grid = Grid(get_or(g, "n", 64), get_or(g, "box_length", kTwoPi),
                    get_or(g, "viscosity", 1.0));
  }

  if (j.contains("integrator")) {
    const json& i = j.at("integrator");
    reject_unknown(i, {"dt", "steps", "snap_every", "cfl_limit"}, "config.integrator");
    cfg.integrator.dt = get_or(i, "dt", 0.0);
    cfg.integrator.steps = get_or(i, "steps", 0);
    cfg.integrator.snap_every = get_or(i, "snap_every", 1);
    cfg.integrator.control.cfl_limit = get_or(i, "cfl_limit", 0.5);
    if (cfg.integrator.dt < 0.0 || cfg.integrator.steps < 0 || cfg.integrator.snap_every < 1 ||
        cfg.integrator.control.cfl_limit <= 0.0)
      throw ConfigError("config.integrator: dt/steps/snap_every/cfl_limit out of range");
  }

  if (j.contains("lattice")) {
    const json& l = j.at("lattice");
    reject_unknown(l, {"j_min", "j_max", "center_stride_frac"}, "config.lattice");
    cfg.lattice.j_min = get_or(l, "j_min", cfg.lattice.j_min);
    cfg.lattice.j_max = get_or(l, "j_max", cfg.lattice.j_max);
    cfg.lattice.center_stride_frac = get_or(l, "center_stride_frac", cfg.lattice.center_stride_frac);
    if (cfg.lattice.j_min < 0 || cfg.lattice.j_max < 0 || cfg.lattice.center_stride_frac <= 0.0)
      throw ConfigError("config.lattice: values out of range");
  }

  cfg.threshold.m_star = cfg.ledger.m_star.value;
  cfg.threshold.c_star = cfg.ledger.c_star.value;
  if (j.contains("threshold")) {
    const json& t = j.at("threshold");
    reject_unknown(t, {"m_star", "c_star", "score_exponent", "baseline_energy"},
                   "config.threshold");
    cfg.threshold.m_star = get_or(t, "m_star", cfg.threshold.m_star);
    cfg.threshold.c_star = get_or(t, "c_star", cfg.threshold.c_star);
    cfg.threshold.score_exponent = get_or(t, "score_exponent", cfg.threshold.score_exponent);
    cfg.threshold.baseline_energy = get_or(t, "baseline_energy", cfg.threshold.baseline_energy);
    if (cfg.threshold.score_exponent != -1 && cfg.threshold.score_exponent != 1)
      throw ConfigError("config.threshold: score_exponent must be -1 or +1");
    if (cfg.threshold.m_star <= 0.0 || cfg.threshold.c_star <= 0.0 || cfg.threshold.c_star > 1.0)
      throw ConfigError("config.threshold: m_star/c_star out of range");
  }

  cfg.defect.c0_frac = cfg.ledger.c0.value;
  cfg.defect.alpha = cfg.threshold.score_exponent;
  if (j.contains("defect")) {
    const json& d = j.at("defect");
    reject_unknown(d, {"j_shell", "c0_frac", "tol_ax", "tol_2d"}, "config.defect");
    cfg.defect.j_shell = get_or(d, "j_shell", cfg.defect.j_shell);
    cfg.defect.c0_frac = get_or(d, "c0_frac", cfg.defect.c0_frac);
    cfg.defect.tol_ax = get_or(d, "tol_ax", cfg.defect.tol_ax);
    cfg.defect.tol_2d = get_or(d, "tol_2d", cfg.defect.tol_2d);
    if (cfg.defect.j_shell < 0 || cfg.defect.c0_frac <= 0.0 || cfg.defect.tol_ax <= 0.0 ||
        cfg.defect.tol_2d <= 0.0)
      throw ConfigError("config.defect: values out of range");
  }

  if (j.contains("descent")) {
    const json& d = j.at("descent");
    reject_unknown(d, {"delta", "max_steps"}, "config.descent");
    cfg.delta = get_or(d, "delta", cfg.delta);
    cfg.max_steps = get_or(d, "max_steps", cfg.max_steps);
    if (cfg.delta <= 0.0 || cfg.delta >= 1.0 || cfg.max_steps < 0)
      throw ConfigError("config.descent: delta/max_steps out of range");
  }

  if (j.contains("probe")) {
    const json& p = j.at("probe");
    reject_unknown(p, {"eps", "samples"}, "config.probe");
    if (p.contains("eps")) {
      cfg.probe.eps.clear();
      if (p.at("eps").is_array())
        for (const json& e : p.at("eps")) cfg.probe.eps.push_back(e.get<double>());
      else
        cfg.probe.eps.push_back(p.at("eps").get<double>());
    }
    cfg.probe.samples = get_or(p, "samples", cfg.probe.samples);
    if (cfg.probe.eps.empty() || cfg.probe.samples < 1)
      throw ConfigError("config.probe: eps/samples out of range");
    for (double e : cfg.probe.eps)
      if (e <= 0.0) throw ConfigError("config.probe: eps must be positive");
  }

  if (j.contains("initial")) {
    const json& i = j.at("initial");
    reject_unknown(i, {"preset", "amplitude", "sigma", "offset", "m_lo", "m_hi"},
                   "config.initial");
    cfg.initial.preset = get_or<std::string>(i, "preset", cfg.initial.preset);
    cfg.initial.amplitude = get_or(i, "amplitude", cfg.initial.amplitude);
    cfg.initial.sigma = get_or(i, "sigma", cfg.initial.sigma);
    cfg.initial.offset = get_or(i, "offset", cfg.initial.offset);
    cfg.initial.m_lo = get_or(i, "m_lo", cfg.initial.m_lo);
    cfg.initial.m_hi = get_or(i, "m_hi", cfg.initial.m_hi);
    const auto& names = preset_names();
    if (std::find(names.begin(), names.end(), cfg.initial.preset) == names.end())
      throw ConfigError("config.initial: unknown preset '" + cfg.initial.preset + "'");
  }

  cfg.seed = get_or<std::uint64_t>(j, "seed", 0);
  cfg.out = get_or<std::string>(j, "out", "out");
  return cfg;
}

RunConfig load_config(const fs::path& path) { return parse_config(io::read_json(path)); }

json config_json(const RunConfig& cfg) {
  return json{
      {"grid",
       {{"n", cfg.grid.n}, {"box_length", cfg.grid.box_length}, {"viscosity", cfg.grid.viscosity}}},
      {"integrator",
       {{"dt", cfg.integrator.dt},
        {"steps", cfg.integrator.steps},
        {"snap_every", cfg.integrator.snap_every},
        {"cfl_limit", cfg.integrator.control.cfl_limit}}},
      {"lattice",
       {{"j_min", cfg.lattice.j_min},
        {"j_max", cfg.lattice.j_max},
        {"center_stride_frac", cfg.lattice.center_stride_frac}}},
      {"threshold",
       {{"m_star", cfg.threshold.m_star},
        {"c_star", cfg.threshold.c_star},
        {"score_exponent", cfg.threshold.score_exponent},
        {"baseline_energy", cfg.threshold.baseline_energy}}},
      {"defect",
       {{"j_shell", cfg.defect.j_shell},
        {"c0_frac", cfg.defect.c0_frac},
        {"tol_ax", cfg.defect.tol_ax},
        {"tol_2d", cfg.defect.tol_2d}}},
      {"descent", {{"delta", cfg.delta}, {"max_steps", cfg.max_steps}}},
      {"probe", {{"eps", cfg.probe.eps}, {"samples", cfg.probe.samples}}},
      {"ledger", io::ledger_json(cfg.ledger)},
      {"initial",
       {{"preset", cfg.initial.preset},
        {"amplitude", cfg.initial.amplitude},
        {"sigma", cfg.initial.sigma},
        {"offset", cfg.initial.offset},
        {"m_lo", cfg.initial.m_lo},
        {"m_hi", cfg.initial.m_hi}}},
      {"seed", cfg.seed}};
}

// pipelines --------------------------------------------------------------------

int run_simulate(const RunConfig& cfg) {
  FieldSnapshot init = make_initial(cfg.grid, cfg.initial, cfg.seed);
  RunParams rp = cfg.integrator;
  if (rp.dt <= 0.0) {
    const double adv = admissible_dt(init, rp.control.cfl_limit);
    rp.dt = std::isfinite(adv) ? std::min(0.5 * adv, 0.1) : 0.1;
  }
  FieldHistory h = run_history(init, rp);
  io::write_history(cfg.out, h);
  io::write_energy_csv(cfg.out / "energy.csv", h);
  io::write_json(cfg.out / "config.json", config_json(cfg));
  io::write_run_meta(cfg.out, json{{"command", "simulate"}});
  return kExitOk;
}

int run_diagnose(const RunConfig& cfg, const fs::path& manifest) {
  FieldHistory h = io::read_history(manifest);
  QuadCache cache(h);
  const EnvelopeRecord env = envelope_scan(cache, cfg.lattice, cfg.threshold);
  io::write_envelope_csv(cfg.out / "envelope.csv", env);

  DescentConfig dc;
  dc.scan = cfg.lattice;
  dc.thr = cfg.threshold;
  dc.extract.defect = cfg.defect;
  dc.ledger = cfg.ledger;
  dc.delta = cfg.delta;
  dc.max_steps = cfg.max_steps;
  const DescentTranscript tr = descent_run(h, dc);
  io::write_transcript(cfg.out / "transcript.jsonl", tr);

  std::vector<json> falsifications;
  json reports = json::array();
  if (tr.start) {
    json rec{{"packet", io::packet_json(tr.final)},
             {"report", io::defect_report_json(tr.final_report)}};
    if (tr.endpoint) rec["classification"] = io::classification_json(*tr.endpoint);
    reports.push_back(rec);

    const TriadDecomposition td = triad_decompose(h, tr.final, dc.extract.lp);
    io::write_triad_csv(cfg.out / "triads.csv", td);
    const ActiveFrameResult af = active_frames(td, h, tr.final, dc.extract.lp);
    io::write_json(cfg.out / "frames.json",
                   af.outcome == ActiveOutcome::Frames
                       ? io::frame_measure_json(af.nu)
                       : json{{"atoms", json::array()}, {"total_weight", 0.0}});

    json audits = json::array();
    for (const auto& [eps, c_eps] : cfg.ledger.c_eps_table) {
      const AuditTable t = passive_visibility_audit(tr.final_report, {eps}, c_eps);
      audits.push_back(io::audit_json(t));
      for (const AuditRow& r : t.rows)
        if (r.residual > 0.0)
          falsifications.push_back(json{{"kind", "passive-visibility"},
                                        {"eps", r.eps},
                                        {"lhs", r.lhs},
                                        {"rhs", r.rhs},
                                        {"residual", r.residual}});
    }
    io::write_json(cfg.out / "audit.json", json{{"tables", audits}});
  }
  io::write_json(cfg.out / "reports.json", reports);
  if (tr.invariant_violation)
    falsifications.push_back(json{{"kind", "selection-invariant"}, {"violation", tr.violation}});
  io::write_jsonl(cfg.out / "falsifications.jsonl", falsifications);
  io::write_json(cfg.out / "config.json", config_json(cfg));
  io::write_run_meta(cfg.out, json{{"command", "diagnose"}, {"history", manifest.string()}});

  if (tr.invariant_violation) return kExitViolation;
  if (!tr.start) return kExitOk;
  return kExitDescent;
}

int run_probe_gap(const RunConfig& cfg) {
  RigidityConfig rig;
  rig.frame_gap = cfg.ledger.c_fr.value;
  json records = json::array();
  json floor = json::array();
  std::vector<std::pair<double, double>> fit;
  for (std::size_t i = 0; i < cfg.probe.eps.size(); ++i) {
    const double eps = cfg.probe.eps[i];
    if (eps > 1.0) {
      records.push_back(json{{"eps", eps},
                             {"inconclusive", true},
                             {"reason", "eps exceeds the projective family diameter"}});
      continue;
    }
    const std::uint64_t seed = cfg.seed + 1000 * i;
    const GapProbeReport r = gap_probe(eps, cfg.probe.samples, seed, rig);
    records.push_back(io::gap_probe_json(r, eps, cfg.probe.samples, seed, rig.frame_gap));
    floor.push_back(json::array({eps, r.min_defect_violator}));
    if (r.min_defect_violator > 0.0) fit.emplace_back(std::log(eps), std::log(r.min_defect_violator));
  }
  json fitted = nullptr;
  if (fit.size() >= 2) {
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (const auto& [x, y] : fit) {
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
    }
    const double nfit = static_cast<double>(fit.size());
    const double den = nfit * sxx - sx * sx;
    if (den > 0.0) fitted = (nfit * sxy - sx * sy) / den;
  }
  io::write_json(cfg.out / "gap.json", json{{"schema", "packetscope.gap-sweep/1"},
                                            {"samples", cfg.probe.samples},
                                            {"seed", cfg.seed},
                                            {"c_fr", rig.frame_gap},
                                            {"records", records},
                                            {"floor_table", floor},
                                            {"fitted_exponent", fitted}});
  io::write_json(cfg.out / "config.json", config_json(cfg));
  io::write_run_meta(cfg.out, json{{"command", "probe-gap"}});
  return kExitOk;
}

}  // namespace packetscope
