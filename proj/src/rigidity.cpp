#include "packetscope/rigidity.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "packetscope/lp.hpp"

namespace packetscope {

namespace {
double mod_pi(double x) {
  double r = std::fmod(x, kPi);
  if (r < 0.0) r += kPi;
  return r;
}

// orthonormal gauge perpendicular to a unit axis
void axis_gauge(const Vec3& a, Vec3& e1, Vec3& e2) {
  const Vec3 ref = std::abs(a[2]) < 0.9 ? Vec3{0.0, 0.0, 1.0} : Vec3{1.0, 0.0, 0.0};
  e1 = normalized(ref - dot(ref, a) * a);
  e2 = cross(a, e1);
}

// doubled-angle resultant |sum m exp(2i t_i)|
double resultant2(const std::vector<double>& t, const std::vector<double>& m) {
  double cr = 0.0, ci = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    cr += m[i] * std::cos(2.0 * t[i]);
    ci += m[i] * std::sin(2.0 * t[i]);
  }
  return std::sqrt(cr * cr + ci * ci);
}

double lambda_max_dir(const std::vector<Vec3>& d, const std::vector<double>& m) {
  Sym3 t;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const Sym3 o = outer_sym(d[i]);
    for (int c = 0; c < 6; ++c) t.v[c] += m[i] * o.v[c];
  }
  return eig_sym3(t).val[2];
}

Vec3 principal_dir(const std::vector<Vec3>& d, const std::vector<double>& m) {
  Sym3 t;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const Sym3 o = outer_sym(d[i]);
    for (int c = 0; c < 6; ++c) t.v[c] += m[i] * o.v[c];
  }
  return canonical_line(eig_sym3(t).vec[2]);
}

struct AxAlignment {
  double value = 0.0;   // phase spread + direction spread
  double theta0 = 0.0;
  Vec3 base{1.0, 0.0, 0.0};
  std::vector<double> residual;  // wrapped phase residual per atom
};

AxAlignment ax_alignment(const FrameMeasure& nu, const Vec3& axis) {
  AxAlignment out;
  const std::size_t k = nu.atoms.size();
  std::vector<double> rel(k), m(k);
  std::vector<Vec3> tr(k);
  for (std::size_t i = 0; i < k; ++i) {
    const FrameAtom& a = nu.atoms[i];
    const double az = axis_azimuth(axis, a.label.window_center);
    rel[i] = mod_pi(a.label.phase - az);
    m[i] = a.weight;
    tr[i] = rotate_about(axis, -az, a.label.dir);
  }
  const double r2 = resultant2(rel, m);
  const double lam = lambda_max_dir(tr, m);
  out.value = 0.5 * (1.0 - r2) + (1.0 - lam);
  // circular mean of the doubled residual angles
  double cr = 0.0, ci = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    cr += m[i] * std::cos(2.0 * rel[i]);
    ci += m[i] * std::sin(2.0 * rel[i]);
  }
  out.theta0 = mod_pi(0.5 * std::atan2(ci, cr));
  out.base = principal_dir(tr, m);
  out.residual.resize(k);
  for (std::size_t i = 0; i < k; ++i) out.residual[i] = 0.5 * wrap_angle(2.0 * (rel[i] - out.theta0));
  return out;
}

// candidate axes: a deterministic sphere grid plus the problem's own axes
std::vector<Vec3> axis_candidates(const FrameMeasure& nu, int grid) {
  std::vector<Vec3> cand = fibonacci_sphere(grid);
  cand.push_back({0.0, 0.0, 1.0});
  cand.push_back({0.0, 1.0, 0.0});
  cand.push_back({1.0, 0.0, 0.0});
  {
    Sym3 t{};
    Sym3 tw{};
    for (const auto& a : nu.atoms) {
      const Sym3 o = outer_sym(a.label.dir);
      const Sym3 ow = outer_sym(normalized(a.label.window_center));
      for (int c = 0; c < 6; ++c) {
        t.v[c] += a.weight * o.v[c];
        tw.v[c] += a.weight * ow.v[c];
      }
    }
    const EigSym3 e = eig_sym3(t), ew = eig_sym3(tw);
    for (int c = 0; c < 3; ++c) {
      cand.push_back(e.vec[c]);
      cand.push_back(ew.vec[c]);
    }
  }
  return cand;
}

// local refinement of an axis objective by pattern search over the tangent
// plane; keeps the step while it pays, halves it when it stalls
template <class F>
Vec3 refine_axis(Vec3 axis, F&& objective, int iters);

// axis minimizing the alignment value: grid scan plus local refinement
Vec3 best_alignment_axis(const FrameMeasure& nu, const RigidityConfig& cfg) {
  auto value = [&](const Vec3& a) { return ax_alignment(nu, a).value; };
  Vec3 best_axis{0.0, 0.0, 1.0};
  double best = 1e300;
  for (const Vec3& a : axis_candidates(nu, cfg.axis_grid)) {
    const double v = value(a);
    if (v < best) {
      best = v;
      best_axis = a;
    }
  }
  return refine_axis(best_axis, value, cfg.refine_iters);
}

template <class F>
Vec3 refine_axis(Vec3 axis, F&& objective, int iters) {
  double best = objective(axis);
  double step = 0.25;
  for (int it = 0; it < iters && step > 1e-11; ++it) {
    Vec3 e1, e2;
    axis_gauge(axis, e1, e2);
    bool improved = false;
    for (const Vec3& dir : {e1, e2, normalized(e1 + e2), normalized(e1 - e2)}) {
      for (double sgn : {1.0, -1.0}) {
        const Vec3 trial = normalized(axis + (sgn * step) * dir);
        const double v = objective(trial);
        if (v < best - 1e-300) {
          best = v;
          axis = trial;
          improved = true;
        }
      }
    }
    if (!improved) step *= 0.5;
  }
  return axis;
}
}  // namespace

double FrameMeasure::total_weight() const {
  double s = 0.0;
  for (const auto& a : atoms) s += a.weight;
  return s;
}

void FrameMeasure::normalize() {
  const double s = total_weight();
  if (atoms.empty() || s <= 0.0) throw InvariantViolation("frame measure: empty or nonpositive mass");
  for (auto& a : atoms) {
    if (a.weight < 0.0) throw InvariantViolation("frame measure: negative atom weight");
    a.weight /= s;
  }
}

Vec3 canonical_line(const Vec3& d) {
  const Vec3 u = normalized(d);
  int big = 0;
  for (int c = 1; c < 3; ++c)
    if (std::abs(u[c]) > std::abs(u[big]) + 1e-15) big = c;
  return u[big] < 0.0 ? Vec3{-u[0], -u[1], -u[2]} : u;
}

double projective_phase(const Vec3& d) {
  const double r = std::hypot(d[0], d[1]);
  if (r < 1e-14) return 0.0;
  return mod_pi(std::atan2(d[1], d[0]));
}

double phase_dist(double a, double b) { return std::abs(0.5 * wrap_angle(2.0 * (a - b))); }

double axis_azimuth(const Vec3& axis, const Vec3& v) {
  Vec3 e1, e2;
  axis_gauge(normalized(axis), e1, e2);
  const double x = dot(v, e1), y = dot(v, e2);
  if (std::abs(x) < 1e-14 && std::abs(y) < 1e-14) return 0.0;
  return std::atan2(y, x);
}

DefectBreakdown frame_defects(const FrameMeasure& nu_in, const RigidityConfig& cfg) {
  FrameMeasure nu = nu_in;
  nu.normalize();
  const std::size_t k = nu.atoms.size();
  DefectBreakdown out;

  // constant-frame branch: phase resultant + direction coherence
  std::vector<double> th(k), m(k);
  std::vector<Vec3> dirs(k);
  for (std::size_t i = 0; i < k; ++i) {
    th[i] = nu.atoms[i].label.phase;
    m[i] = nu.atoms[i].weight;
    dirs[i] = nu.atoms[i].label.dir;
  }
  const double d2d = 0.5 * (1.0 - resultant2(th, m)) + (1.0 - lambda_max_dir(dirs, m));

  // axis branch: minimize alignment over axes
  const Vec3 best_axis = best_alignment_axis(nu, cfg);
  const AxAlignment fit = ax_alignment(nu, best_axis);
  const double best_ax = fit.value;

  out.two_d_branch = d2d <= best_ax;
  out.phase = std::min(d2d, best_ax);
  out.ax.axis = best_axis;
  out.ax.base_dir = fit.base;
  out.ax.theta0 = fit.theta0;
  out.ax.value = best_ax;

  // stall: fitted axial drift of the winning branch's phase residuals
  {
    std::vector<double> res(k), z(k);
    if (out.two_d_branch) {
      const Vec3 d2 = principal_dir(dirs, m);
      double cr = 0.0, ci = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        cr += m[i] * std::cos(2.0 * th[i]);
        ci += m[i] * std::sin(2.0 * th[i]);
      }
      const double t0 = 0.5 * std::atan2(ci, cr);
      for (std::size_t i = 0; i < k; ++i) {
        res[i] = 0.5 * wrap_angle(2.0 * (th[i] - t0));
        z[i] = dot(normalized(nu.atoms[i].label.window_center), d2);
      }
    } else {
      for (std::size_t i = 0; i < k; ++i) {
        res[i] = fit.residual[i];
        z[i] = dot(normalized(nu.atoms[i].label.window_center), best_axis);
      }
    }
    double zbar = 0.0;
    for (std::size_t i = 0; i < k; ++i) zbar += m[i] * z[i];
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      const double zc = z[i] - zbar;
      num += m[i] * res[i] * zc;
      den += m[i] * zc * zc;
    }
    const double kappa = den > 1e-12 ? num / den : 0.0;
    double stall = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      const double s = std::sin(kappa * (z[i] - zbar));
      stall += m[i] * s * s;
    }
    out.stall = stall;
  }

  // net parity: pairwise rotation compatibility about the winning axis plus
  // parity mixing
  {
    const Vec3 a = out.two_d_branch ? principal_dir(dirs, m) : best_axis;
    Vec3 e1, e2;
    axis_gauge(a, e1, e2);
    std::vector<double> u(k), beta(k);
    for (std::size_t i = 0; i < k; ++i) {
      const Vec3 d = dirs[i];
      const Vec3 perp = d - dot(d, a) * a;
      u[i] = dot(perp, perp);
      beta[i] = (u[i] > 1e-20) ? mod_pi(std::atan2(dot(perp, e2), dot(perp, e1))) : 0.0;
    }
    double np = 0.0;
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = i + 1; j < k; ++j) {
        const double mis = std::sin((beta[i] - beta[j]) - (th[i] - th[j]));
        const double axis_term = cfg.w_axis_pair * u[i] * u[j] * mis * mis;
        const double par_term = cfg.w_parity_pair * 0.5 * (1.0 - nu.atoms[i].label.parity * nu.atoms[j].label.parity);
        np += 2.0 * m[i] * m[j] * (axis_term + par_term);
      }
    out.netpar = np;
  }
  return out;
}

namespace {
// minimize sum m * phase_dist(t_i, t). The objective is piecewise linear in t
// with kinks only at atom phases and their quarter-turn opposites, so the
// optimum is found exactly by checking those candidates.
double phase_median(const std::vector<double>& t, const std::vector<double>& m) {
  auto cost = [&](double x) {
    double s = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) s += m[i] * phase_dist(t[i], x);
    return s;
  };
  double best_x = 0.0, best = 1e300;
  for (const double base : t) {
    for (const double x : {mod_pi(base), mod_pi(base + 0.5 * kPi)}) {
      const double c = cost(x);
      if (c < best) {
        best = c;
        best_x = x;
      }
    }
  }
  return best_x;
}

// minimize sum m * angle_proj(d_i, d) over lines d; candidates are the atoms
// themselves plus the principal direction, optionally polished in place
Vec3 line_median(const std::vector<Vec3>& d, const std::vector<double>& m, int refine) {
  auto cost = [&](const Vec3& x) {
    double s = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) s += m[i] * angle_projective(d[i], x);
    return s;
  };
  Vec3 best_d = principal_dir(d, m);
  double best = cost(best_d);
  for (const Vec3& cand : d) {
    const double c = cost(cand);
    if (c < best) {
      best = c;
      best_d = cand;
    }
  }
  if (refine > 0) best_d = refine_axis(best_d, cost, refine);
  return canonical_line(best_d);
}
}  // namespace

RigidDistance dist_to_rigid(const FrameMeasure& nu_in, const RigidityConfig& cfg) {
  FrameMeasure nu = nu_in;
  nu.normalize();
  const std::size_t k = nu.atoms.size();
  RigidDistance out;

  std::vector<double> th(k), m(k);
  std::vector<Vec3> dirs(k);
  for (std::size_t i = 0; i < k; ++i) {
    th[i] = nu.atoms[i].label.phase;
    m[i] = nu.atoms[i].weight;
    dirs[i] = nu.atoms[i].label.dir;
  }

  // constant-frame family: windows free, single (d, theta, p)
  {
    const Vec3 dstar = line_median(dirs, m, 80);
    const double tstar = phase_median(th, m);
    double flip_cost = 0.0, keep_cost = 0.0;
    for (std::size_t i = 0; i < k; ++i)
      (nu.atoms[i].label.parity > 0 ? flip_cost : keep_cost) += m[i];
    const int pstar = keep_cost <= flip_cost ? 1 : -1;
    double cost = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      cost += m[i] * (cfg.w_dir * angle_projective(dirs[i], dstar) +
                      cfg.w_phase * phase_dist(th[i], tstar) +
                      cfg.w_parity * (nu.atoms[i].label.parity == pstar ? 0.0 : 1.0));
    }
    out.dist_2d = cost;
    out.frame_2d.dir = dstar;
    out.frame_2d.phase = tstar;
    out.frame_2d.parity = pstar;
  }

  // axis family: orbit graph with preserved windows and free weights
  {
    auto family_cost = [&](const Vec3& a, int median_refine, AxisFit* fit_out) {
      std::vector<double> rel(k);
      std::vector<Vec3> tr(k);
      for (std::size_t i = 0; i < k; ++i) {
        const double az = axis_azimuth(a, nu.atoms[i].label.window_center);
        rel[i] = mod_pi(th[i] - az);
        tr[i] = rotate_about(a, -az, dirs[i]);
      }
      const double t0 = phase_median(rel, m);
      const Vec3 d0 = line_median(tr, m, median_refine);
      double flip_cost = 0.0, keep_cost = 0.0;
      for (std::size_t i = 0; i < k; ++i)
        (nu.atoms[i].label.parity > 0 ? flip_cost : keep_cost) += m[i];
      const int p0 = keep_cost <= flip_cost ? 1 : -1;
      double cost = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        cost += m[i] * (cfg.w_dir * angle_projective(tr[i], d0) +
                        cfg.w_phase * phase_dist(rel[i], t0) +
                        cfg.w_parity * (nu.atoms[i].label.parity == p0 ? 0.0 : 1.0));
      }
      if (fit_out) {
        fit_out->axis = a;
        fit_out->base_dir = d0;
        fit_out->theta0 = t0;
        fit_out->parity = p0;
        fit_out->value = cost;
      }
      return cost;
    };
    auto coarse = [&](const Vec3& a) { return family_cost(a, 0, nullptr); };
    // scan the shared candidate grid, then refine from the best few starts;
    // the alignment-optimal axis is always a start so that any perturbation
    // the alignment defect can absorb is matched by a transport target
    std::vector<Vec3> starts;
    {
      std::vector<std::pair<double, Vec3>> scored;
      for (const Vec3& a : axis_candidates(nu, cfg.axis_grid)) scored.emplace_back(coarse(a), a);
      std::sort(scored.begin(), scored.end(),
                [](const auto& l, const auto& r) { return l.first < r.first; });
      for (std::size_t i = 0; i < scored.size() && i < 2; ++i) starts.push_back(scored[i].second);
      starts.push_back(best_alignment_axis(nu, cfg));
    }
    AxisFit fit;
    double best = 1e300;
    for (const Vec3& s : starts) {
      const Vec3 refined = refine_axis(s, coarse, cfg.refine_iters);
      AxisFit f;
      const double v = family_cost(refined, 80, &f);
      if (v < best) {
        best = v;
        fit = f;
      }
    }
    out.dist_ax = best;
    out.ax = fit;
  }

  out.two_d = out.dist_2d <= out.dist_ax;
  out.dist = std::min(out.dist_2d, out.dist_ax);
  return out;
}

PhaseRigidityResult phase_rigidity_check(const FrameMeasure& nu, const RigidityConfig& cfg) {
  PhaseRigidityResult out;
  out.defects = frame_defects(nu, cfg);
  const RigidDistance rd = dist_to_rigid(nu, cfg);
  out.dist = rd.dist;
  if (nu.atoms.size() == 1) {
    out.family = RigidFamily::ConstantFrame;
    return out;
  }
  if (rd.dist <= cfg.near_tol) {
    out.family = rd.two_d ? RigidFamily::ConstantFrame : RigidFamily::AxisOrbit;
    if (!rd.two_d) out.axis = rd.ax;
  } else {
    out.family = RigidFamily::None;
  }
  return out;
}

FrameMeasure make_constant_frame(const Vec3& dir, double phase, int parity,
                                 const std::vector<std::pair<int, double>>& windows,
                                 const std::vector<Vec3>& cap_centers) {
  FrameMeasure nu;
  for (const auto& [cap, w] : windows) {
    FrameAtom a;
    a.label.dir = canonical_line(dir);
    a.label.window = cap;
    a.label.window_center = cap_centers.at(cap);
    a.label.phase = mod_pi(phase);
    a.label.parity = parity;
    a.weight = w;
    nu.atoms.push_back(a);
  }
  nu.normalize();
  return nu;
}

FrameMeasure make_orbit_graph(const Vec3& axis, const Vec3& base_dir, double theta0, int parity,
                              const std::vector<std::pair<int, double>>& windows,
                              const std::vector<Vec3>& cap_centers) {
  FrameMeasure nu;
  const Vec3 a = normalized(axis);
  for (const auto& [cap, w] : windows) {
    const Vec3 c = cap_centers.at(cap);
    const double az = axis_azimuth(a, c);
    FrameAtom atom;
    atom.label.dir = canonical_line(rotate_about(a, az, normalized(base_dir)));
    atom.label.window = cap;
    atom.label.window_center = c;
    atom.label.phase = mod_pi(az + theta0);
    atom.label.parity = parity;
    atom.weight = w;
    nu.atoms.push_back(atom);
  }
  nu.normalize();
  return nu;
}

GapProbeReport gap_probe(double eps, int samples, std::uint64_t seed, const RigidityConfig& cfg) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::vector<Vec3> caps = icosahedral_axes();
  GapProbeReport rep;
  rep.samples = samples;
  for (int s = 0; s < samples; ++s) {
    // random member
    auto rand_dir = [&]() {
      const double z = 2.0 * unit(rng) - 1.0;
      const double ph = kTwoPi * unit(rng);
      const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
      return Vec3{r * std::cos(ph), r * std::sin(ph), z};
    };
    const int ncaps = 2 + static_cast<int>(unit(rng) * 4.99);
    std::vector<std::pair<int, double>> wins;
    std::vector<int> ids = {0, 1, 2, 3, 4, 5};
    for (int i = 0; i < ncaps; ++i) {
      const int pick = static_cast<int>(unit(rng) * ids.size());
      wins.emplace_back(ids[pick], 0.2 + unit(rng));
      ids.erase(ids.begin() + pick);
    }
    const int parity = unit(rng) < 0.5 ? 1 : -1;
    FrameMeasure nu = unit(rng) < 0.5
                          ? make_constant_frame(rand_dir(), kPi * unit(rng), parity, wins, caps)
                          : make_orbit_graph(rand_dir(), rand_dir(), kPi * unit(rng), parity, wins, caps);
    // perturb
    bool perturbed = false;
    for (auto& a : nu.atoms) {
      const double da = eps * unit(rng);
      if (da > 0.0) {
        Vec3 t = rand_dir();
        t = t - dot(t, a.label.dir) * a.label.dir;
        if (norm(t) > 1e-12) {
          a.label.dir = canonical_line(normalized(a.label.dir + (std::tan(da) * (1.0 / norm(t))) * t));
          perturbed = true;
        }
      }
      const double dp = eps * (2.0 * unit(rng) - 1.0);
      a.label.phase = std::fmod(a.label.phase + dp + kPi, kPi);
      if (dp != 0.0) perturbed = true;
    }
    if (!perturbed) continue;
    const RigidDistance rd = dist_to_rigid(nu, cfg);
    const DefectBreakdown db = frame_defects(nu, cfg);
    const double defect = db.total();
    if (rd.dist > 1e-9) {
      if (defect <= 0.0) {
        ++rep.zero_defect_perturbed;
        continue;
      }
      rep.worst_ratio = std::max(rep.worst_ratio, rd.dist * rd.dist / defect);
      rep.min_defect_violator = rep.min_defect_violator == 0.0
                                    ? defect
                                    : std::min(rep.min_defect_violator, defect);
    }
  }
  rep.holds = rep.zero_defect_perturbed == 0 && rep.worst_ratio <= cfg.frame_gap;
  return rep;
}

}  // namespace packetscope
