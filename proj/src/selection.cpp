#include "packetscope/selection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

#include "packetscope/spectral_ops.hpp"
#include "packetscope/windows.hpp"

namespace packetscope {

namespace {

// the shipped covering: two golden-angle layers per annulus, balls of half
// the annulus scale; counts must match the ledger entries
constexpr double kLayerRadius[2] = {1.25, 1.75};
constexpr int kLayerCount[2] = {64, 144};

std::vector<Vec3> fib_dirs(int m) {
  std::vector<Vec3> out(static_cast<std::size_t>(m));
  const double ga = kPi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < m; ++i) {
    const double z = 1.0 - (2.0 * i + 1.0) / m;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double th = ga * i;
    out[static_cast<std::size_t>(i)] = {r * std::cos(th), r * std::sin(th), z};
  }
  return out;
}

std::vector<Vec3> covering_centers(const Vec3& origin, double scale) {
  std::vector<Vec3> out;
  out.reserve(static_cast<std::size_t>(kLayerCount[0] + kLayerCount[1]));
  for (int l = 0; l < 2; ++l) {
    const double rad = kLayerRadius[l] * scale;
    for (const Vec3& d : fib_dirs(kLayerCount[l])) out.push_back(origin + rad * d);
  }
  return out;
}

std::vector<std::size_t> window_slices(const FieldHistory& h, const Packet& p) {
  if (p.rho <= 0.0) throw ConfigError("packet: scale must be positive");
  std::vector<std::size_t> idx = h.window_indices(p.t_begin(), p.t_end);
  if (idx.empty()) {
    for (std::size_t i = h.size(); i-- > 0;) {
      if (h.at(i).time <= p.t_end + 1e-12) {
        idx.push_back(i);
        break;
      }
    }
  }
  if (idx.empty()) throw ConfigError("packet: no snapshot at or before the endpoint");
  return idx;
}

Vec3 wrap3(const Grid& g, const Vec3& x) { return {g.wrap(x[0]), g.wrap(x[1]), g.wrap(x[2])}; }

RealField vort_sq(const FieldSnapshot& s) {
  const VecField w = s.vorticity();
  RealField out(w[0].size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(out.size()); ++i) {
    const std::size_t t = static_cast<std::size_t>(i);
    out[t] = w[0][t] * w[0][t] + w[1][t] * w[1][t] + w[2][t] * w[2][t];
  }
  return out;
}

double ball_mass(const Grid& g, const RealField& w2, const Vec3& center, double radius) {
  const double h = g.dx();
  const double reach = radius + h;
  int span = 2 * static_cast<int>(std::ceil(reach / h)) + 1;
  std::array<int, 3> lo{0, 0, 0};
  if (span >= g.n) {
    span = g.n;
  } else {
    for (int c = 0; c < 3; ++c) lo[c] = static_cast<int>(std::floor((center[c] - reach) / h));
  }
  auto wrapi = [&](int i) {
    i %= g.n;
    return i < 0 ? i + g.n : i;
  };
  const double r2 = radius * radius;
  double s = 0.0;
  for (int dz = 0; dz < span; ++dz)
    for (int dy = 0; dy < span; ++dy)
      for (int dx = 0; dx < span; ++dx) {
        const int ix = wrapi(lo[0] + dx), iy = wrapi(lo[1] + dy), iz = wrapi(lo[2] + dz);
        const Vec3 d = g.min_image(g.point(ix, iy, iz), center);
        if (dot(d, d) <= r2) s += w2[g.real_index(ix, iy, iz)];
      }
  return s * h * h * h;
}

struct BallPick {
  std::size_t slice = 0;
  int center = -1;
  double mass = -1.0;
  double time = 0.0;
};

// windowed sup of the ball mass over the candidate centers; ties resolve to
// the earlier slice, then the lower center index
BallPick best_ball(const FieldHistory& h, const std::vector<std::size_t>& slices,
                   const std::vector<Vec3>& centers, double radius, bool earlier_only,
                   double t_cut) {
  BallPick best;
  std::vector<double> mass(centers.size());
  for (std::size_t s : slices) {
    const FieldSnapshot& snap = h.at(s);
    if (earlier_only && snap.time >= t_cut - 1e-12) continue;
    const RealField w2 = vort_sq(snap);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(centers.size()); ++i)
      mass[static_cast<std::size_t>(i)] =
          ball_mass(h.grid, w2, centers[static_cast<std::size_t>(i)], radius);
    for (int i = 0; i < static_cast<int>(centers.size()); ++i)
      if (mass[static_cast<std::size_t>(i)] > best.mass)
        best = {s, i, mass[static_cast<std::size_t>(i)], snap.time};
  }
  return best;
}

std::string hop_text(Channel ch, double t, double rho) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%s child @ t=%.6g, rho=%.6g", channel_name(ch), t, rho);
  return buf;
}

Packet make_child(const Grid& g, const Packet& q, Channel ch, const Vec3& center, double rho,
                  double t_end) {
  Packet c;
  c.center = wrap3(g, center);
  c.t_end = t_end;
  c.rho = rho;
  c.component_count = q.component_count;
  c.channel_index = static_cast<int>(ch);
  c.parent_id = q.id;
  c.lineage = q.lineage;
  c.lineage.push_back(hop_text(ch, t_end, rho));
  return c;
}

DescendantCertificate finish(QuadCache& cache, Channel ch, const Packet& parent,
                             const Packet& child, double bound, double value, double thr,
                             bool trunc, bool degenerate, int alpha) {
  DescendantCertificate cert;
  cert.channel = ch;
  cert.parent = parent;
  cert.child = child;
  cert.bound = bound;
  cert.channel_value = value;
  cert.threshold = thr;
  cert.truncated = trunc;
  const double ps = packet_score(cache, parent, alpha);
  const double cs = packet_score(cache, child, alpha);
  cert.score_ratio = ps > 0.0 ? cs / ps : 0.0;
  cert.perturbative = degenerate || cert.score_ratio < bound;
  return cert;
}

void check_delta(double delta) {
  if (!(delta > 0.0) || !(delta < 1.0)) throw ConfigError("selection: delta must lie in (0, 1)");
}

void check_entry(const LedgerEntry& e, const char* name) {
  if (!(e.value > 0.0) || !std::isfinite(e.value))
    throw ConfigError(std::string("ledger: ") + name + " must be positive and finite");
  if (e.prov != Provenance::Configured && e.run_id.empty())
    throw ConfigError(std::string("ledger: ") + name + " needs the run id of its source");
}

void check_table(const std::vector<std::pair<double, double>>& t, const char* name) {
  double prev = 0.0;
  for (const auto& [x, c] : t) {
    if (!(x > prev) || !(c > 0.0))
      throw ConfigError(std::string("ledger: ") + name +
                        " must be strictly increasing with positive constants");
    prev = x;
  }
}

// per-cell residual density of one split part, summed with the window weights
std::vector<double> part_density(const StrainSplit& split, int part) {
  std::vector<double> dens(split.idx.size(), 0.0);
  for (std::size_t s = 0; s < split.snaps.size(); ++s) {
    const BoxTensor& tp = split.parts[s][static_cast<std::size_t>(part)];
    const double w = split.weights[s];
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(dens.size()); ++i) {
      const std::size_t t = static_cast<std::size_t>(i);
      dens[t] += w * split.chi2[t] * tp.at(t).frob2();
    }
  }
  return dens;
}

// same for the quadratic remainder of the low part after its affine fit
std::vector<double> quad_density(const StrainSplit& split) {
  std::vector<double> dens(split.idx.size(), 0.0);
  for (std::size_t s = 0; s < split.snaps.size(); ++s) {
    const BoxTensor& tp = split.parts[s][StrainSplit::kLow];
    const double w = split.weights[s];
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(dens.size()); ++i) {
      const std::size_t t = static_cast<std::size_t>(i);
      Sym3 fit = split.a0[s];
      for (int j = 0; j < 3; ++j) fit = fit + split.xrel[t][j] * split.a1[s][j];
      const Sym3 d = tp.at(t) - fit;
      dens[t] += w * split.chi2[t] * d.frob2();
    }
  }
  return dens;
}

Vec3 density_argmax(const Packet& q, const StrainSplit& split, const std::vector<double>& dens) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < dens.size(); ++i)
    if (dens[i] > dens[best]) best = i;
  return q.center + split.xrel[best];
}

// worst label patch of the frame measure: the cap whose atoms are least
// coherent in direction, phase, and parity under the ground-metric weights
Vec3 worst_cap_dir(const FrameMeasure& nu, const RigidityConfig& rig) {
  std::map<int, std::vector<std::size_t>> caps;
  for (std::size_t i = 0; i < nu.atoms.size(); ++i) caps[nu.atoms[i].label.window].push_back(i);
  double best_res = -1.0;
  Vec3 best_dir{0.0, 0.0, 1.0};
  for (const auto& [cap, ids] : caps) {
    double wsum = 0.0, c2 = 0.0, s2 = 0.0, par = 0.0;
    Sym3 m{};
    for (std::size_t i : ids) {
      const FrameAtom& a = nu.atoms[i];
      wsum += a.weight;
      c2 += a.weight * std::cos(2.0 * a.label.phase);
      s2 += a.weight * std::sin(2.0 * a.label.phase);
      par += a.weight * a.label.parity;
      m = m + a.weight * outer_sym(a.label.dir);
    }
    const Vec3 mean = eig_sym3(m).vec[2];
    const double phibar = 0.5 * std::atan2(s2, c2);
    double res = rig.w_parity * (wsum - std::abs(par));
    for (std::size_t i : ids) {
      const FrameAtom& a = nu.atoms[i];
      const double pd = phase_dist(a.label.phase, phibar);
      const double ad = angle_projective(a.label.dir, mean);
      res += a.weight * (rig.w_phase * pd * pd + rig.w_dir * ad * ad);
    }
    if (res > best_res) {
      best_res = res;
      best_dir = nu.atoms[ids.front()].label.window_center;
    }
  }
  return best_dir;
}

// spatial support of a label patch: vorticity through a double cone around
// the patch direction, then the densest sample inside the packet ball
Vec3 cone_argmax(const FieldHistory& h, const Packet& q, const Vec3& dir, double cap_cos) {
  const Grid& g = h.grid;
  const FieldSnapshot& snap = h.at(window_slices(h, q).back());
  SpecVec what = snap.vorticity_hat();
  const Vec3 e = normalized(dir);
  const int half = g.n / 2 + 1;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t kz = 0; kz < g.n; ++kz)
    for (int ky = 0; ky < g.n; ++ky)
      for (int kx = 0; kx < half; ++kx) {
        const Vec3 k{g.k_of(kx), g.k_of(g.mode_of(ky)), g.k_of(g.mode_of(static_cast<int>(kz)))};
        const double kn = norm(k);
        const std::size_t at = g.spec_index(kx, ky, static_cast<int>(kz));
        if (kn == 0.0 || std::abs(dot(k, e)) / kn < cap_cos)
          for (int c = 0; c < 3; ++c) what[c][at] = 0.0;
      }
  Fft& fft = Fft::plan_for(g.n);
  std::array<RealField, 3> wc;
  for (int c = 0; c < 3; ++c) fft.backward(what[c], wc[c]);

  const double hx = g.dx();
  const double reach = q.rho + hx;
  int span = 2 * static_cast<int>(std::ceil(reach / hx)) + 1;
  std::array<int, 3> lo{0, 0, 0};
  if (span >= g.n) {
    span = g.n;
  } else {
    for (int c = 0; c < 3; ++c) lo[c] = static_cast<int>(std::floor((q.center[c] - reach) / hx));
  }
  auto wrapi = [&](int i) {
    i %= g.n;
    return i < 0 ? i + g.n : i;
  };
  double best = -1.0;
  Vec3 out = q.center;
  for (int dz = 0; dz < span; ++dz)
    for (int dy = 0; dy < span; ++dy)
      for (int dx = 0; dx < span; ++dx) {
        const int ix = wrapi(lo[0] + dx), iy = wrapi(lo[1] + dy), iz = wrapi(lo[2] + dz);
        const Vec3 p = g.point(ix, iy, iz);
        const Vec3 d = g.min_image(p, q.center);
        if (dot(d, d) > q.rho * q.rho) continue;
        const std::size_t at = g.real_index(ix, iy, iz);
        const double v = wc[0][at] * wc[0][at] + wc[1][at] * wc[1][at] + wc[2][at] * wc[2][at];
        if (v > best) {
          best = v;
          out = p;
        }
      }
  return out;
}

}  // namespace

const char* provenance_name(Provenance p) {
  switch (p) {
    case Provenance::Configured:
      return "configured";
    case Provenance::Measured:
      return "measured";
    default:
      return "oracle-stub";
  }
}

const char* channel_name(Channel ch) {
  switch (ch) {
    case Channel::Collar:
      return "collar";
    case Channel::Shell:
      return "shell";
    case Channel::Tail:
      return "tail";
    case Channel::Passive:
      return "passive";
    case Channel::Phase:
      return "phase";
    case Channel::Low:
      return "low";
    default:
      return "fragment";
  }
}

ConstantsLedger default_ledger() {
  ConstantsLedger led;
  const std::string cov = "fib-cover-2026-08-14";
  led.n_col = {static_cast<double>(kLayerCount[0] + kLayerCount[1]), Provenance::Measured, cov};
  led.n_sh = {2.0 * led.n_col.value, Provenance::Measured, cov};
  led.c_ov = {8.0, Provenance::Measured, cov};
  led.c_ann = {led.n_col.value, Provenance::Measured, cov};
  led.c_sc = {1.0, Provenance::Configured, ""};
  led.c_vis = {1.0, Provenance::Configured, ""};
  led.c_pass = {1.0, Provenance::Configured, ""};
  led.c_frag = {0.25, Provenance::Configured, ""};
  led.c = {1e-2, Provenance::Configured, ""};
  led.q_star = {1.0, Provenance::Configured, ""};
  led.m_star = {1.0, Provenance::Configured, ""};
  led.c_star = {0.5, Provenance::Configured, ""};
  led.c_ph = {0.15, Provenance::Configured, ""};
  led.c_fr = {16.0, Provenance::Measured, "frame-gap-probe-2026-08-12"};
  led.c0 = {3e-2, Provenance::Measured, "endpoint-calibration-2026-08-14"};
  led.eta = {0.1, Provenance::Configured, ""};
  led.eta_ax = {0.1, Provenance::OracleStub, "external-input"};
  led.c_ax = {1.0, Provenance::OracleStub, "external-input"};
  led.c_eps_table = {{0.05, 8.0}, {0.1, 4.0}, {0.2, 2.0}, {0.4, 1.0}};
  led.c_delta_table = {{0.125, 1.125}, {0.25, 2.25}, {0.5, 4.5}};
  return led;
}

ConstantsLedger all_ones_ledger() {
  ConstantsLedger led;
  for (LedgerEntry* e : {&led.n_col, &led.n_sh, &led.c_ov, &led.c_ann, &led.c_sc, &led.c_vis,
                         &led.c_pass, &led.c_frag, &led.c, &led.q_star, &led.m_star, &led.c_star,
                         &led.c_ph, &led.c_fr, &led.c0, &led.eta, &led.eta_ax, &led.c_ax})
    *e = {1.0, Provenance::Configured, ""};
  led.c_eps_table = {{0.5, 1.0}};
  led.c_delta_table = {{0.5, 1.0}};
  return led;
}

void validate(const ConstantsLedger& led) {
  check_entry(led.n_col, "n_col");
  check_entry(led.n_sh, "n_sh");
  check_entry(led.c_ov, "c_ov");
  check_entry(led.c_ann, "c_ann");
  check_entry(led.c_sc, "c_sc");
  check_entry(led.c_vis, "c_vis");
  check_entry(led.c_pass, "c_pass");
  check_entry(led.c_frag, "c_frag");
  check_entry(led.c, "c");
  check_entry(led.q_star, "q_star");
  check_entry(led.m_star, "m_star");
  check_entry(led.c_star, "c_star");
  check_entry(led.c_ph, "c_ph");
  check_entry(led.c_fr, "c_fr");
  check_entry(led.c0, "c0");
  check_entry(led.eta, "eta");
  check_entry(led.eta_ax, "eta_ax");
  check_entry(led.c_ax, "c_ax");
  check_table(led.c_eps_table, "c_eps_table");
  check_table(led.c_delta_table, "c_delta_table");
}

double c_desc(double delta, const ConstantsLedger& led) {
  check_delta(delta);
  validate(led);
  const double ov = led.c_ov.value;
  const double terms[5] = {delta / (led.n_col.value * ov), delta / (led.n_sh.value * ov),
                           std::min(delta, delta * delta) / (led.c_ann.value * ov),
                           led.c_pass.value * delta * delta, led.c_frag.value};
  return led.c.value * *std::min_element(terms, terms + 5);
}

std::optional<DescendantCertificate> extract_collar_or_shell(const FieldHistory& h,
                                                             const Packet& q, double delta,
                                                             const ConstantsLedger& led,
                                                             const ExtractConfig& cfg) {
  check_delta(delta);
  validate(led);
  const Grid& g = h.grid;
  QuadCache cache(h);
  const double vis = visibility(cache, q).total();
  const double thr = delta * vis;
  const double dl = leakage(cache, q, cfg.defect);
  const double ds = shell_defect(cache, q, cfg.defect);
  if (dl < thr && ds < thr) return std::nullopt;

  const bool use_collar = dl >= thr && (dl >= ds || ds < thr);
  Channel ch = Channel::Collar;
  double scale = q.rho;
  double bound = led.c.value * delta / (led.n_col.value * led.c_ov.value);
  double value = dl;
  bool trunc = false;
  if (!use_collar) {
    ch = Channel::Shell;
    bound = led.c.value * delta / (led.n_sh.value * led.c_ov.value);
    value = ds;
    const TailResult tr = tail(cache, q, cfg.defect);
    int jstar = 1;
    double pbest = -1.0;
    for (const AnnulusRow& row : tr.table)
      if (row.j >= 1 && row.j <= cfg.defect.j_shell && row.p > pbest) {
        pbest = row.p;
        jstar = row.j;
        trunc = row.truncated;
      }
    scale = std::ldexp(q.rho, jstar);
  }
  trunc = trunc || 2.0 * scale > 0.5 * g.box_length;

  const double radius = 0.5 * scale;
  const std::vector<Vec3> centers = covering_centers(q.center, scale);
  const std::vector<std::size_t> slices = window_slices(h, q);
  BallPick pick = best_ball(h, slices, centers, radius, false, 0.0);
  Packet child = make_child(g, q, ch, centers[static_cast<std::size_t>(pick.center)], radius,
                            pick.time);
  bool degenerate = false;
  if (!(selection_key(child) < selection_key(q))) {
    const BallPick earlier = best_ball(h, slices, centers, radius, true, q.t_end);
    if (earlier.center >= 0) {
      pick = earlier;
      child = make_child(g, q, ch, centers[static_cast<std::size_t>(pick.center)], radius,
                         pick.time);
    }
    degenerate = !(selection_key(child) < selection_key(q));
  }
  return finish(cache, ch, q, child, bound, value, thr, trunc, degenerate, cfg.defect.alpha);
}

std::optional<DescendantCertificate> extract_tail(const FieldHistory& h, const Packet& q,
                                                  double delta, const ConstantsLedger& led,
                                                  const ExtractConfig& cfg) {
  check_delta(delta);
  validate(led);
  const Grid& g = h.grid;
  QuadCache cache(h);
  const double vis = visibility(cache, q).total();
  const double thr = delta * vis;
  const TailResult tr = tail(cache, q, cfg.defect);
  const double tailsum = std::sqrt(tr.p_tail) + tr.p_tail;
  if (tailsum < thr) return std::nullopt;

  int jstar = -1;
  double wbest = -1.0;
  bool trunc = tr.truncated;
  for (const AnnulusRow& row : tr.table) {
    if (row.j <= cfg.defect.j_shell) continue;
    const double w = std::exp2(-cfg.defect.c_tail * row.j) * row.p;
    if (w > wbest) {
      wbest = w;
      jstar = row.j;
      trunc = trunc || row.truncated;
    }
  }
  if (jstar < 0) return std::nullopt;

  const double scale = std::ldexp(q.rho, jstar);
  const double radius = 0.5 * scale;
  const double bound =
      led.c.value * std::min(delta, delta * delta) / (led.c_ann.value * led.c_ov.value);
  trunc = trunc || 2.0 * scale > 0.5 * g.box_length;

  const std::vector<Vec3> centers = covering_centers(q.center, scale);
  const std::vector<std::size_t> slices = window_slices(h, q);
  // the child scale grows, so descent must come from a strictly earlier endpoint
  BallPick pick = best_ball(h, slices, centers, radius, true, q.t_end);
  bool degenerate = false;
  if (pick.center < 0) {
    pick = best_ball(h, slices, centers, radius, false, 0.0);
    degenerate = true;
  }
  Packet child = make_child(g, q, Channel::Tail, centers[static_cast<std::size_t>(pick.center)],
                            radius, pick.time);
  degenerate = degenerate || !(selection_key(child) < selection_key(q));
  return finish(cache, Channel::Tail, q, child, bound, tailsum, thr, trunc, degenerate,
                cfg.defect.alpha);
}

std::optional<DescendantCertificate> extract_passive_phase_low(
    const FieldHistory& h, const Packet& q, double delta, const DefectReport& report,
    const FrameMeasure& nu, const ConstantsLedger& led, const ExtractConfig& cfg) {
  check_delta(delta);
  validate(led);
  const double thr = delta * report.visibility;
  const double pass = report.d_pass;
  const double phase = report.d_phase + report.d_stall + report.d_netpar;
  const double low = report.r_low;
  if (pass + phase + low < thr) return std::nullopt;

  Channel ch = Channel::Passive;
  double value = pass;
  if (phase > value) {
    ch = Channel::Phase;
    value = phase;
  }
  if (low > value) {
    ch = Channel::Low;
    value = low;
  }
  const double bound = led.c.value * led.c_pass.value * delta * delta;

  Vec3 center = q.center;
  if (ch == Channel::Phase && !nu.atoms.empty()) {
    center = cone_argmax(h, q, worst_cap_dir(nu, cfg.rig), cfg.cap_cos);
  } else {
    ActiveFrameResult af;
    af.nu = nu;
    af.outcome = nu.atoms.empty() ? ActiveOutcome::EmptyActive : ActiveOutcome::Frames;
    const StrainSplit split = strain_split(h, q, af, cfg.defect);
    const std::vector<double> dens = ch == Channel::Low
                                         ? quad_density(split)
                                         : part_density(split, StrainSplit::kPassCore);
    if (!dens.empty()) center = density_argmax(q, split, dens);
  }

  QuadCache cache(h);
  const Packet child = make_child(h.grid, q, ch, center, 0.5 * q.rho, q.t_end);
  return finish(cache, ch, q, child, bound, value, thr, false, false, cfg.defect.alpha);
}

std::optional<DescendantCertificate> extract_fragment(const FieldHistory& h, const Packet& q,
                                                      const ConstantsLedger& led,
                                                      const ExtractConfig& cfg,
                                                      double tail_delta) {
  validate(led);
  const Grid& g = h.grid;
  const std::vector<std::size_t> slices = window_slices(h, q);
  const FieldSnapshot& snap = h.at(slices.back());
  const ComponentAnalysis ca =
      count_components(snap, q.center, q.rho, cfg.frag_level, cfg.frag_sep);
  if (ca.count < 2) return std::nullopt;

  // component-induced velocities u_p = curl (-Delta)^{-1} (masked vorticity);
  // the inverse curl discards whatever gradient part the mask introduced
  const VecField w = snap.vorticity();
  Fft& fft = Fft::plan_for(g.n);
  std::vector<std::array<RealField, 3>> uvel;
  uvel.reserve(ca.parts.size());
  for (const Component& part : ca.parts) {
    SpecVec psin;
    for (int c = 0; c < 3; ++c) {
      RealField masked(g.real_size(), 0.0);
      for (std::size_t cell : part.cells) masked[cell] = w[c][cell];
      SpecField mhat;
      fft.forward(masked, mhat);
      mhat[0] = 0.0;
      psin[c] = inv_laplacian_hat(g, mhat);
    }
    const SpecVec uh = curl_hat(g, psin);
    std::array<RealField, 3> u;
    for (int c = 0; c < 3; ++c) fft.backward(uh[c], u[c]);
    uvel.push_back(std::move(u));
  }
  const double cell = g.dx() * g.dx() * g.dx();
  double eloc = 0.0, ecross = 0.0;
  for (std::size_t p = 0; p < uvel.size(); ++p)
    for (std::size_t r = p; r < uvel.size(); ++r) {
      double e = 0.0;
      for (int c = 0; c < 3; ++c)
        e += block_sum2(uvel[p][c].data(), uvel[r][c].data(), uvel[p][c].size());
      e *= cell;
      if (p == r)
        eloc += e;
      else
        ecross += 2.0 * std::abs(e);
    }
  if (eloc > 0.0 && ecross > cfg.frag_cutoff * eloc)
    return extract_tail(h, q, tail_delta, led, cfg);

  std::size_t pick = 0;
  for (std::size_t p = 1; p < ca.parts.size(); ++p)
    if (ca.parts[p].mass > ca.parts[pick].mass) pick = p;

  Packet parent = q;
  parent.component_count = ca.count;
  Packet child = make_child(g, parent, Channel::Fragment, ca.parts[pick].centroid, q.rho,
                            q.t_end);
  // shrink until the child ball isolates fewer components than the parent saw
  for (double f : {1.0, 0.7, 0.5}) {
    child.rho = f * q.rho;
    child.component_count =
        count_components(snap, child.center, child.rho, cfg.frag_level, cfg.frag_sep).count;
    if (child.component_count < ca.count) break;
  }
  const bool degenerate = !(selection_key(child) < selection_key(parent));
  QuadCache cache(h);
  const double bound = led.c.value * led.c_frag.value;
  return finish(cache, Channel::Fragment, parent, child, bound, ca.parts[pick].mass, 0.0, false,
                degenerate, cfg.defect.alpha);
}

DichotomyResult dichotomy_check(const FieldHistory& h, const Packet& q, double delta,
                                const ConstantsLedger& led, const ExtractConfig& cfg) {
  check_delta(delta);
  validate(led);
  DichotomyResult out;
  QuadCache cache(h);
  DefectChannels chn;
  chn.visibility = visibility(cache, q).total();
  chn.d_leak = leakage(cache, q, cfg.defect);
  chn.d_shell = shell_defect(cache, q, cfg.defect);
  const TailResult tr = tail(cache, q, cfg.defect);
  chn.p_tail = tr.p_tail;
  chn.tail_table = tr.table;
  chn.truncated = tr.truncated;

  const TriadDecomposition td = triad_decompose(h, q, cfg.lp);
  const ActiveFrameResult af = active_frames(td, h, q, cfg.lp);
  if (af.outcome == ActiveOutcome::Frames) {
    const DefectBreakdown db = frame_defects(af.nu, cfg.rig);
    chn.d_phase = db.phase;
    chn.d_stall = db.stall;
    chn.d_netpar = db.netpar;
  } else {
    chn.empty_active = true;
  }
  const StrainSplit split = strain_split(h, q, af, cfg.defect);
  chn.empty_active = chn.empty_active || split.empty_active;
  const PassiveChannel pc = passive_channel(q, split, cfg.defect);
  chn.d_pass = pc.d_pass;
  chn.t_pass_to_core = pc.t_pass_to_core;
  chn.r_low = low_residual(h, q, split, cfg.defect, cfg.lp);
  out.report = assemble(chn);
  out.nu = af.nu;

  const double vis = out.report.visibility;
  const double thr = delta * vis;
  const double tailsum = std::sqrt(out.report.p_tail) + out.report.p_tail;
  const double phasegrp = out.report.d_phase + out.report.d_stall + out.report.d_netpar;
  const double resid = out.report.d_pass + phasegrp + out.report.r_low;
  out.channels = {{"collar", out.report.d_leak}, {"shell", out.report.d_shell},
                  {"tail", tailsum},             {"passive", out.report.d_pass},
                  {"phase", phasegrp},           {"low", out.report.r_low}};

  struct Group {
    int kind;  // 0 collar/shell, 1 tail, 2 passive/phase/low
    double mass;
  };
  std::vector<Group> groups;
  if (std::max(out.report.d_leak, out.report.d_shell) >= thr)
    groups.push_back({0, std::max(out.report.d_leak, out.report.d_shell)});
  if (tailsum >= thr) groups.push_back({1, tailsum});
  if (resid >= thr) groups.push_back({2, resid});
  std::stable_sort(groups.begin(), groups.end(),
                   [](const Group& a, const Group& b) { return a.mass > b.mass; });

  for (const Group& gr : groups) {
    std::optional<DescendantCertificate> cert;
    switch (gr.kind) {
      case 0:
        cert = extract_collar_or_shell(h, q, delta, led, cfg);
        break;
      case 1:
        cert = extract_tail(h, q, delta, led, cfg);
        break;
      default:
        cert = extract_passive_phase_low(h, q, delta, out.report, out.nu, led, cfg);
        break;
    }
    if (cert && !cert->perturbative) {
      out.cert = std::move(cert);
      return out;
    }
  }

  const std::vector<std::size_t> slices = window_slices(h, q);
  out.components =
      count_components(h.at(slices.back()), q.center, q.rho, cfg.frag_level, cfg.frag_sep).count;
  if (out.components >= 2) {
    std::optional<DescendantCertificate> cert = extract_fragment(h, q, led, cfg, delta);
    if (cert && !cert->perturbative) {
      out.cert = std::move(cert);
      return out;
    }
  }

  out.perturbative = true;
  out.c_delta = vis > 0.0 ? out.report.e_fin / vis : 0.0;
  return out;
}

DescentTranscript descent_run(const FieldHistory& h, const DescentConfig& cfg) {
  validate(cfg.ledger);
  DescentTranscript tr;
  QuadCache cache(h);
  const std::optional<FirstThreshold> ft = first_threshold_select(cache, cfg.scan, cfg.thr);
  if (!ft) return tr;
  tr.start = ft;
  Packet cur = ft->packet;
  cur.id = 1;
  tr.final = cur;

  int max_steps = cfg.max_steps;
  if (max_steps <= 0) {
    int depth = 1;
    for (double r = 0.5 * h.grid.box_length; r > 2.0 * h.grid.dx(); r *= 0.5) ++depth;
    max_steps = static_cast<int>(h.size()) * (depth + 7 + 8);
  }

  std::uint64_t next_id = 2;
  for (;;) {
    DichotomyResult dr = dichotomy_check(h, cur, cfg.delta, cfg.ledger, cfg.extract);
    if (dr.perturbative) {
      tr.perturbative_stop = true;
      tr.c_delta = dr.c_delta;
      tr.final_report = dr.report;
      tr.endpoint = classify_endpoint(h, cur, dr.report, dr.nu, cfg.extract.defect,
                                      cfg.extract.rig);
      if (tr.endpoint->outcome == EndpointClass::AxisymmetricSwirl) {
        AxContraction ax;
        ax.eta_ax = cfg.ledger.eta_ax.value;
        ax.c_ax = cfg.ledger.c_ax.value;
        ax.q_ax = packet_score(cache, cur, cfg.thr.score_exponent) * tr.endpoint->m0_fraction;
        ax.contracted = (1.0 - ax.eta_ax) * ax.q_ax + ax.c_ax * dr.report.e_fin;
        tr.ax = ax;
      }
      break;
    }
    DescendantCertificate cert = *dr.cert;
    if (!(selection_key(cert.child) < selection_key(cert.parent))) {
      tr.invariant_violation = true;
      tr.violation = "selection key did not decrease";
      return tr;
    }
    cert.child.id = next_id++;
    tr.steps.push_back({cert, cfg.delta, dr.channels});
    cur = cert.child;
    tr.final = cur;
    if (static_cast<int>(tr.steps.size()) >= max_steps) {
      tr.invariant_violation = true;
      tr.violation = "descent exceeded its termination bound";
      break;
    }
  }
  return tr;
}

}  // namespace packetscope
