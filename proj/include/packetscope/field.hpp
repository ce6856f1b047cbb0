#pragma once

#include <array>
#include <optional>
#include <vector>

#include "packetscope/fft.hpp"
#include "packetscope/grid.hpp"

namespace packetscope {

struct VecField {
  std::array<RealField, 3> c;
  RealField& operator[](int i) { return c[i]; }
  const RealField& operator[](int i) const { return c[i]; }
};

struct SpecVec {
  std::array<SpecField, 3> c;
  SpecField& operator[](int i) { return c[i]; }
  const SpecField& operator[](int i) const { return c[i]; }
};

// six components xx, yy, zz, xy, xz, yz on the grid
struct SymTensorField {
  std::array<RealField, 6> comp;
  RealField& operator[](int i) { return comp[i]; }
  const RealField& operator[](int i) const { return comp[i]; }
};

// One instant of a simulated flow. The dealiased spectral velocity is the
// ground truth; everything else is synthesized on demand.
struct FieldSnapshot {
  Grid grid;
  double time = 0.0;
  SpecVec u_hat;

  // project=true removes the mean and the gradient part before validating,
  // project=false rejects fields that are not already solenoidal and mean free.
  static FieldSnapshot from_velocity(const Grid& g, double t, const VecField& u, bool project = false);
  static FieldSnapshot from_velocity_hat(const Grid& g, double t, SpecVec u_hat, bool project = false);
  static FieldSnapshot from_vorticity_hat(const Grid& g, double t, const SpecVec& omega_hat);

  SpecVec vorticity_hat() const;
  VecField velocity() const;
  VecField vorticity() const;

  double energy() const;        // integral of |u|^2 over the box
  double enstrophy() const;     // integral of |omega|^2
  double grad_norm_sq() const;  // integral of |grad u|^2
  double max_speed() const;

  void validate(double tol = 1e-12) const;  // mean-free + divergence-free, relative to the field size
};

// Time-ordered snapshots from one integration, plus the running energy budget.
struct FieldHistory {
  Grid grid;
  double dt = 0.0;  // integrator step behind the stored cadence
  std::vector<FieldSnapshot> snaps;
  std::vector<double> energy;            // E at each snapshot
  std::vector<double> dissipation;       // 2 nu * time integral of |grad u|^2, co-integrated
  double initial_energy = 0.0;

  std::size_t size() const { return snaps.size(); }
  const FieldSnapshot& at(std::size_t i) const { return snaps[i]; }
  double t_begin() const { return snaps.front().time; }
  double t_end() const { return snaps.back().time; }

  // indices of snapshots with time in (t0, t1], clamped to the stored range
  std::vector<std::size_t> window_indices(double t0, double t1) const;

  // max over snapshots of |E(t) + D(t) - E(0)|
  double energy_budget_residual() const;
};

// spectral helpers ----------------------------------------------------------

void apply_dealias(const Grid& g, SpecField& f);
void apply_dealias(const Grid& g, SpecVec& f);

// enforce conjugate symmetry on the kx = 0 and kx = n/2 planes
void hermitian_symmetrize(const Grid& g, SpecField& f);

SpecVec to_spectral(const Grid& g, const VecField& u);
VecField to_real(const Grid& g, const SpecVec& f);
RealField to_real_scalar(const Grid& g, const SpecField& f);
SpecField to_spectral_scalar(const Grid& g, const RealField& f);

}  // namespace packetscope
