#include "packetscope/field.hpp"

#include <algorithm>
#include <cmath>

#include "packetscope/spectral_ops.hpp"

namespace packetscope {

FieldSnapshot FieldSnapshot::from_velocity(const Grid& g, double t, const VecField& u, bool project) {
  return from_velocity_hat(g, t, to_spectral(g, u), project);
}

FieldSnapshot FieldSnapshot::from_velocity_hat(const Grid& g, double t, SpecVec u_hat, bool project) {
  for (int c = 0; c < 3; ++c) {
    if (u_hat[c].size() != g.spec_size()) throw FieldError("snapshot: spectral size mismatch");
    hermitian_symmetrize(g, u_hat[c]);
  }
  apply_dealias(g, u_hat);
  if (project) leray_project(g, u_hat);
  FieldSnapshot snap;
  snap.grid = g;
  snap.time = t;
  snap.u_hat = std::move(u_hat);
  snap.validate();
  return snap;
}

FieldSnapshot FieldSnapshot::from_vorticity_hat(const Grid& g, double t, const SpecVec& omega_hat) {
  SpecVec w = omega_hat;
  apply_dealias(g, w);
  return from_velocity_hat(g, t, biot_savart(g, w), false);
}

SpecVec FieldSnapshot::vorticity_hat() const { return curl_hat(grid, u_hat); }
VecField FieldSnapshot::velocity() const { return to_real(grid, u_hat); }
VecField FieldSnapshot::vorticity() const { return to_real(grid, vorticity_hat()); }

double FieldSnapshot::energy() const { return l2_norm_sq(grid, u_hat); }
double FieldSnapshot::enstrophy() const { return l2_norm_sq(grid, vorticity_hat()); }
double FieldSnapshot::grad_norm_sq() const { return h1_seminorm_sq(grid, u_hat); }

double FieldSnapshot::max_speed() const {
  const VecField u = velocity();
  double best = 0.0;
  for (int c = 0; c < 3; ++c) best = std::max(best, max_abs(u[c]));
  return best;
}

void FieldSnapshot::validate(double tol) const {
  const double scale = std::sqrt(l2_norm_sq(grid, u_hat)) + 1e-300;
  if (mean_magnitude(u_hat) > tol * scale)
    throw FieldError("snapshot: velocity has a nonzero mean");
  if (divergence_max(grid, u_hat) > tol * scale * grid.k_max_resolved())
    throw FieldError("snapshot: velocity is not divergence free");
}

std::vector<std::size_t> FieldHistory::window_indices(double t0, double t1) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < snaps.size(); ++i) {
    const double t = snaps[i].time;
    if (t > t0 && t <= t1 + 1e-12 * std::max(1.0, std::abs(t1))) out.push_back(i);
  }
  return out;
}

double FieldHistory::energy_budget_residual() const {
  double worst = 0.0;
  for (std::size_t i = 0; i < snaps.size(); ++i)
    worst = std::max(worst, std::abs(energy[i] + dissipation[i] - initial_energy));
  return worst;
}

}  // namespace packetscope
