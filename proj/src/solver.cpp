#include "packetscope/solver.hpp"

#include <cmath>

#include "packetscope/spectral_ops.hpp"

namespace packetscope {

namespace {

// -P div(u (x) u), dealiased. The quadratic products of band-n/3 inputs reach
// band 2n/3; on an n-grid their aliases fold onto |m| >= n/3 and die in the
// truncation, so the retained band is alias free.
SpecVec nonlinear(const Grid& g, const SpecVec& u_hat) {
  Fft& fft = Fft::plan_for(g.n);
  VecField u;
  for (int c = 0; c < 3; ++c) fft.backward(u_hat[c], u[c]);

  static constexpr int pi[6] = {0, 1, 2, 0, 0, 1};
  static constexpr int pj[6] = {0, 1, 2, 1, 2, 2};
  std::array<SpecField, 6> prod;
  RealField tmp(g.real_size());
  for (int s = 0; s < 6; ++s) {
    const RealField& a = u[pi[s]];
    const RealField& b = u[pj[s]];
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(tmp.size()); ++i)
      tmp[static_cast<std::size_t>(i)] = a[static_cast<std::size_t>(i)] * b[static_cast<std::size_t>(i)];
    fft.forward(tmp, prod[s]);
    apply_dealias(g, prod[s]);
  }

  // N_i = -i k_j (u_i u_j)^
  const double kb = kTwoPi / g.box_length;
  const int n = g.n, nx = n / 2 + 1;
  SpecVec out;
  for (int c = 0; c < 3; ++c) out[c].assign(g.spec_size(), {0.0, 0.0});
  // slot of the (i,j) product in prod[]
  static constexpr int slot[3][3] = {{0, 3, 4}, {3, 1, 5}, {4, 5, 2}};
#pragma omp parallel for schedule(static)
  for (int kz = 0; kz < n; ++kz) {
    const double kzv = kb * (kz <= n / 2 ? kz : kz - n);
    for (int ky = 0; ky < n; ++ky) {
      const double kyv = kb * (ky <= n / 2 ? ky : ky - n);
      std::size_t idx = static_cast<std::size_t>(nx) * (ky + static_cast<std::size_t>(n) * kz);
      for (int kx = 0; kx < nx; ++kx, ++idx) {
        const Vec3 k = {kb * kx, kyv, kzv};
        const std::complex<double> I(0.0, 1.0);
        for (int i = 0; i < 3; ++i) {
          std::complex<double> s{0.0, 0.0};
          for (int j = 0; j < 3; ++j) s += k[j] * prod[slot[i][j]][idx];
          out[i][idx] = -I * s;
        }
      }
    }
  }
  leray_project(g, out);
  return out;
}

void axpy(SpecVec& y, double a, const SpecVec& x) {
  for (int c = 0; c < 3; ++c) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(y[c].size()); ++i)
      y[c][static_cast<std::size_t>(i)] += a * x[c][static_cast<std::size_t>(i)];
  }
}

// y = decay .* x  (decay defined per |k|^2)
void apply_decay(const Grid& g, const RealField& decay, const SpecVec& x, SpecVec& y) {
  for (int c = 0; c < 3; ++c) {
    y[c].resize(x[c].size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(x[c].size()); ++i)
      y[c][static_cast<std::size_t>(i)] = decay[static_cast<std::size_t>(i)] * x[c][static_cast<std::size_t>(i)];
  }
}

RealField decay_table(const Grid& g, double t) {
  const double kb = kTwoPi / g.box_length;
  const int n = g.n, nx = n / 2 + 1;
  RealField out(g.spec_size());
#pragma omp parallel for schedule(static)
  for (int kz = 0; kz < n; ++kz) {
    const double kzv = kb * (kz <= n / 2 ? kz : kz - n);
    for (int ky = 0; ky < n; ++ky) {
      const double kyv = kb * (ky <= n / 2 ? ky : ky - n);
      std::size_t idx = static_cast<std::size_t>(nx) * (ky + static_cast<std::size_t>(n) * kz);
      for (int kx = 0; kx < nx; ++kx, ++idx) {
        const double kxv = kb * kx;
        out[idx] = std::exp(-g.viscosity * (kxv * kxv + kyv * kyv + kzv * kzv) * t);
      }
    }
  }
  return out;
}

bool all_finite(const SpecVec& f) {
  for (int c = 0; c < 3; ++c)
    for (const auto& z : f[c])
      if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) return false;
  return true;
}

}  // namespace

double admissible_dt(const FieldSnapshot& snap, double cfl_limit) {
  const double umax = snap.max_speed();
  if (umax == 0.0) return 1.0 / 0.0;
  return cfl_limit * snap.grid.dx() / umax;
}

FieldSnapshot step(const FieldSnapshot& snap, double dt, const StepControl& ctl, double& dissipation_acc) {
  const Grid& g = snap.grid;
  if (dt <= 0.0) throw ConfigError("step: dt must be positive");
  const double dt_ok = admissible_dt(snap, ctl.cfl_limit);
  if (dt > dt_ok)
    throw CflError("step: dt exceeds the advective CFL limit", dt_ok);

  const RealField e_half = decay_table(g, 0.5 * dt);
  const RealField e_full = decay_table(g, dt);
  const double nu2 = 2.0 * g.viscosity;

  const SpecVec& u0 = snap.u_hat;
  const double d1 = nu2 * h1_seminorm_sq(g, u0);
  SpecVec k1 = nonlinear(g, u0);

  SpecVec ua = u0;
  axpy(ua, 0.5 * dt, k1);
  {
    SpecVec t;
    apply_decay(g, e_half, ua, t);
    ua = std::move(t);
  }
  const double d2 = nu2 * h1_seminorm_sq(g, ua);
  SpecVec k2 = nonlinear(g, ua);

  SpecVec ub;
  apply_decay(g, e_half, u0, ub);
  axpy(ub, 0.5 * dt, k2);
  const double d3 = nu2 * h1_seminorm_sq(g, ub);
  SpecVec k3 = nonlinear(g, ub);

  SpecVec uc;
  apply_decay(g, e_full, u0, uc);
  {
    SpecVec t;
    apply_decay(g, e_half, k3, t);
    axpy(uc, dt, t);
  }
  const double d4 = nu2 * h1_seminorm_sq(g, uc);
  SpecVec k4 = nonlinear(g, uc);

  // u+ = E2 u0 + dt/6 (E2 k1 + 2 E1 (k2 + k3) + k4)
  SpecVec unew;
  apply_decay(g, e_full, u0, unew);
  {
    SpecVec t;
    apply_decay(g, e_full, k1, t);
    axpy(unew, dt / 6.0, t);
  }
  {
    SpecVec k23 = k2;
    axpy(k23, 1.0, k3);
    SpecVec t;
    apply_decay(g, e_half, k23, t);
    axpy(unew, dt / 3.0, t);
  }
  axpy(unew, dt / 6.0, k4);

  if (ctl.check_finite && !all_finite(unew))
    throw FieldError("step: state is no longer finite");

  dissipation_acc += dt / 6.0 * (d1 + 2.0 * d2 + 2.0 * d3 + d4);

  FieldSnapshot out;
  out.grid = g;
  out.time = snap.time + dt;
  out.u_hat = std::move(unew);
  return out;
}

FieldHistory run_history(const FieldSnapshot& initial, const RunParams& params) {
  if (params.dt <= 0.0 || params.steps < 0) throw ConfigError("run: bad dt/steps");
  if (params.snap_every < 1) throw ConfigError("run: snap_every must be >= 1");
  FieldHistory hist;
  hist.grid = initial.grid;
  hist.dt = params.dt;
  hist.initial_energy = initial.energy();
  double dissipation = 0.0;

  FieldSnapshot cur = initial;
  hist.snaps.push_back(cur);
  hist.energy.push_back(hist.initial_energy);
  hist.dissipation.push_back(0.0);

  for (int s = 1; s <= params.steps; ++s) {
    cur = step(cur, params.dt, params.control, dissipation);
    if (s % params.snap_every == 0 || s == params.steps) {
      // shave off the roundoff drift from the solenoidal manifold
      leray_project(hist.grid, cur.u_hat);
      cur.validate();
      hist.snaps.push_back(cur);
      hist.energy.push_back(cur.energy());
      hist.dissipation.push_back(dissipation);
    }
  }
  return hist;
}

}  // namespace packetscope
