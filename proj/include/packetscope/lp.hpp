#pragma once

#include <cstdint>

#include "packetscope/windows.hpp"

namespace packetscope {

// Dyadic-shell x angular-cap decomposition of a spectral field.
//
// Radial shells come from telescoped ramps: psi_N is supported on
// |m| in (2^{N-1}, 2^{N+1}) fundamental modes and the shells sum to 1 on the
// whole resolved band, so at most two shells meet any mode. Angular caps are
// smooth antipodal bumps around the six icosahedral axes, normalized to an
// exact partition of directions; antipodal symmetry keeps every piece real.
struct LpConfig {
  double cap_width_deg = 60.0;     // bump support half-angle (projective)
  double prune_rel = 1e-14;        // drop pieces below this relative mass
  double nonres_angle_deg = 80.0;  // cap separation that makes a pair nonresonant
  int j_low = 2;                   // shell gap that marks a low-frequency triad
  int j_res = 1;                   // dyadic comparability width for resonance
  double tail_frac = 0.5;          // window-exterior mass fraction that marks a tail piece
  double listing_cutoff = 1e-3;    // relative size below which triads are left off the list
};

struct LpPiece {
  int shell = 0;  // N: support (2^{N-1}, 2^{N+1}) in units of the fundamental mode
  int cap = 0;
  std::vector<std::uint32_t> idx;
  std::array<std::vector<std::complex<double>>, 3> val;
  double l2sq = 0.0;  // Parseval mass of the piece
};

struct LpDecomposition {
  Grid grid;
  LpConfig cfg;
  std::vector<Vec3> cap_centers;
  std::vector<LpPiece> pieces;
  int shell_min = 0, shell_max = 0;
  double total_l2sq = 0.0;
  double pruned_l2sq = 0.0;

  SpecVec reconstruct() const;              // dense sum of the kept pieces
  SpecVec piece_spectrum(std::size_t p) const;
};

// shell and cap multipliers, exposed so tests can probe the partition directly
double shell_multiplier(int N, double mode_radius);
double cap_multiplier(const std::vector<Vec3>& centers, double width_rad, int cap, const Vec3& khat);
std::vector<Vec3> icosahedral_axes();

LpDecomposition lp_decompose(const Grid& g, const SpecVec& f, const LpConfig& cfg = {});

// sum over shells of || P_N(chi f) - chi P_N f ||_{L2}^2 relative to
// || chi f ||_{L2}^2, with chi the packet cutoff; measures how far the cutoff
// is from commuting with the frequency decomposition
double commutator_measure(const Grid& g, const SpecVec& f, const Vec3& center, double rho,
                          const LpConfig& cfg = {});

}  // namespace packetscope
