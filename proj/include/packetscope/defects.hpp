#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "packetscope/field.hpp"
#include "packetscope/lp.hpp"
#include "packetscope/microlocal.hpp"
#include "packetscope/packets.hpp"
#include "packetscope/rigidity.hpp"

namespace packetscope {

// sampling geometry for the cylindrical decomposition
struct CylConfig {
  int nr = 24;
  int ntheta = 16;
  int nz = 24;
  int r_min_cells = 2;  // inner radial cutoff in grid cells (omega_theta / r)
};

struct DefectConfig {
  int alpha = -1;            // scale exponent shared with the packet score
  double c_tail = 1.0;       // dyadic tail weight exponent
  int j_shell = 2;           // finite shell annuli
  double k_low_frac = 1.0;   // low-pass cutoff = k_low_frac * pi / rho
  double c0_frac = 3e-2;     // dichotomy threshold as a fraction of visibility
  double tol_ax = 1e-6;      // max m != 0 energy fraction for the swirl class
  double tol_2d = 1e-6;      // max invariance fraction for the 2d class
  double swirl_floor = 0.1;  // minimum swirl energy fraction for the swirl class
  int axis_grid = 96;        // coarse axis candidates in the classifier search
  int refine_iters = 120;    // pattern-search refinement budget
  int flux_nodes = 16;       // Gauss-Legendre nodes in cos(theta) on the sphere
  int flux_slices = 32;      // uniform azimuthal slices on the sphere
  CylConfig cyl;
};

// collar mass at the score scale plus the measured |u.n| |omega|^2 flux
// through the packet sphere, both weighted like the score
double leakage(QuadCache& cache, const Packet& q, const DefectConfig& cfg = {});

struct AnnulusRow {
  int j = 0;
  double p = 0.0;  // scale-normalized annular enstrophy, sup over the window
  bool truncated = false;
};

struct TailResult {
  double p_tail = 0.0;
  std::vector<AnnulusRow> table;  // every nonempty annulus j >= 1
  bool truncated = false;
};

double shell_defect(QuadCache& cache, const Packet& q, const DefectConfig& cfg = {});
TailResult tail(QuadCache& cache, const Packet& q, const DefectConfig& cfg = {});

// symmetric tensor sampled on the window cells, component order as Sym3
struct BoxTensor {
  std::array<std::vector<double>, 6> comp;
  Sym3 at(std::size_t t) const {
    Sym3 s;
    for (int c = 0; c < 6; ++c) s.v[c] = comp[c][t];
    return s;
  }
};

// packet-adapted strain decomposition sampled where the cutoff is positive
struct StrainSplit {
  enum Part { kAct = 0, kPassCore, kSh, kCol, kFar, kLow, kParts };

  std::vector<std::uint32_t> idx;  // grid cells with chi > 0
  std::vector<double> chi2;
  std::vector<Vec3> xrel;  // min-image offset of each cell from the center
  double cell = 0.0;

  std::vector<std::size_t> snaps;  // window snapshots
  std::vector<double> weights;     // matching trapezoid weights

  std::vector<std::array<BoxTensor, kParts>> parts;       // [snapshot][part]
  std::vector<std::array<std::vector<double>, 3>> omega;  // vorticity samples

  std::vector<Sym3> a0;                  // constant moment of the low part
  std::vector<std::array<Sym3, 3>> a1;   // affine moments, slot j pairs with xrel[j]
  std::vector<Sym3> basis;               // orthonormal active channel tensors
  bool empty_active = false;
  double sum_residual = 0.0;  // worst relative defect of the six-part sum
};

StrainSplit strain_split(const FieldHistory& h, const Packet& q, const ActiveFrameResult& frames,
                         const DefectConfig& cfg = {});

struct PassiveChannel {
  double d_pass = 0.0;
  double t_pass_to_core = 0.0;
};

PassiveChannel passive_channel(const Packet& q, const StrainSplit& split,
                               const DefectConfig& cfg = {});

double low_residual(const FieldHistory& h, const Packet& q, const StrainSplit& split,
                    const DefectConfig& cfg = {}, const LpConfig& lp = {});

struct DefectChannels {
  double d_leak = 0.0, d_shell = 0.0, p_tail = 0.0, d_pass = 0.0;
  double d_phase = 0.0, d_stall = 0.0, d_netpar = 0.0, r_low = 0.0;
  double visibility = 0.0;
  double t_pass_to_core = 0.0;
  std::vector<AnnulusRow> tail_table;
  bool empty_active = false;
  bool truncated = false;
};

struct DefectReport {
  double d_leak = 0.0, d_shell = 0.0, p_tail = 0.0, d_pass = 0.0;
  double d_phase = 0.0, d_stall = 0.0, d_netpar = 0.0, r_low = 0.0;
  double e_fin = 0.0;    // leak + shell + sqrt(tail) + tail + pass + phase + stall + netpar + low
  double d_final = 0.0;  // shell + leak + pass + phase + stall + netpar
  double visibility = 0.0;
  double t_pass_to_core = 0.0;
  std::vector<AnnulusRow> tail_table;
  bool clamped = false;
  bool empty_active = false;
  bool truncated = false;
};

DefectReport assemble(const DefectChannels& ch);

// the whole pipeline for one packet
DefectReport defect_report(const FieldHistory& h, const Packet& q, const DefectConfig& cfg = {},
                           const LpConfig& lp = {}, const RigidityConfig& rig = {});

struct AuditRow {
  double eps = 0.0;
  double lhs = 0.0;
  double rhs = 0.0;
  double residual = 0.0;  // lhs - rhs, positive = falsification
};

struct AuditTable {
  std::vector<AuditRow> rows;
  double c_eps = 0.0;      // constant the rows were evaluated with
  double min_c_eps = 0.0;  // smallest constant that would pass every row
  bool all_pass = true;
};

AuditTable passive_visibility_audit(const DefectReport& report, const std::vector<double>& eps_grid,
                                    double c_eps);

struct AxisLine {
  Vec3 point{0.0, 0.0, 0.0};
  Vec3 dir{0.0, 0.0, 1.0};
};

struct CylindricalDecomposition {
  AxisLine axis;
  int nr = 0, ntheta = 0, nz = 0;
  double r_min = 0.0, r_max = 0.0, z_half = 0.0;
  std::vector<double> r;  // ring radii
  std::vector<double> z;  // slab offsets along the axis
  // velocity components at (it + ntheta * (ir + nr * iz))
  std::vector<double> u_r, u_theta, u_z;
  // theta averages on the (ir + nr * iz) grid
  std::vector<double> gamma;    // r u_theta
  std::vector<double> gbig;     // omega_theta / r
  std::vector<double> gamma_e;  // u_theta / r
  std::vector<double> mu5;      // r^3 dr dz weights
  std::vector<double> mode_energies;  // azimuthal energies, 0 .. ntheta/2
  double total_energy = 0.0;
  double m0_fraction = 0.0;
  double swirl_fraction = 0.0;
  double delta5_residual = 0.0;  // rms of the lifted-Laplacian stencil on gamma
};

CylindricalDecomposition cylindrical_decompose(const FieldSnapshot& snap, const AxisLine& axis,
                                               double r_max, double z_half,
                                               const CylConfig& cfg = {});

enum class EndpointClass { LocallyTwoD, AxisymmetricSwirl, Defective, Ambiguous };

struct Classification {
  EndpointClass outcome = EndpointClass::Ambiguous;
  Vec3 axis{0.0, 0.0, 1.0};  // invariant direction (2d) or symmetry axis (swirl)
  std::vector<std::pair<std::string, double>> channels;  // sorted, largest first
  double c0 = 0.0;
  double gate = 0.0;  // d_final + r_low, compared against c0
  double invariance_fraction = 0.0;  // 2d score: min directional derivative fraction
  double m_other_fraction = 0.0;     // swirl score: m != 0 energy at the best axis
  double m0_fraction = 0.0;
  double swirl_fraction = 0.0;
  RigidFamily frame_family = RigidFamily::None;
  double frame_dist = 0.0;
};

Classification classify_endpoint(const FieldHistory& h, const Packet& q,
                                 const DefectReport& report, const FrameMeasure& nu,
                                 const DefectConfig& cfg = {}, const RigidityConfig& rig = {});

}  // namespace packetscope
