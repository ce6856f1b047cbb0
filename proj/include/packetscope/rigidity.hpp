#pragma once

#include <cstdint>
#include <optional>

#include "packetscope/util.hpp"

namespace packetscope {

// Active-frame label: a line direction (sign-canonicalized unit vector), the
// angular window (cap) it came from, a projective phase in [0, pi), and a
// parity sign. Phases live modulo pi because the direction is a line, so all
// circular statistics below run on doubled angles.
struct FrameLabel {
  Vec3 dir{1.0, 0.0, 0.0};
  int window = 0;       // cap id
  Vec3 window_center{0.0, 0.0, 1.0};
  double phase = 0.0;   // in [0, pi)
  int parity = 1;       // +1 / -1
};

struct FrameAtom {
  FrameLabel label;
  double weight = 0.0;
};

struct FrameMeasure {
  std::vector<FrameAtom> atoms;
  double total_weight() const;
  void normalize();  // throws on empty or nonpositive mass
};

// canonical sign for a line representative: largest-|component| entry positive
Vec3 canonical_line(const Vec3& d);
// projective phase of a direction in the global frame: azimuth of its
// xy-projection, modulo pi; lines parallel to z get phase 0
double projective_phase(const Vec3& d);
// phase difference modulo pi, in [0, pi/2]
double phase_dist(double a, double b);
// azimuth of a point/direction about an axis, measured from a fixed gauge
// perpendicular to the axis; modulo pi for line transport
double axis_azimuth(const Vec3& axis, const Vec3& v);

struct RigidityConfig {
  // ground-metric weights: direction angle, phase, window angle, parity flip
  double w_dir = 1.0;
  double w_phase = 1.0;
  double w_window = 0.5;
  double w_parity = 0.5;
  // defect-channel weights
  double w_axis_pair = 0.5;
  double w_parity_pair = 0.5;
  int axis_grid = 96;        // trial axes before local refinement
  int refine_iters = 160;
  double near_tol = 0.15;    // classification distance threshold
  double frame_gap = 16.0;   // shipped C_fr: dist^2 <= C_fr * defect
};

struct AxisFit {
  Vec3 axis{0.0, 0.0, 1.0};
  Vec3 base_dir{1.0, 0.0, 0.0};
  double theta0 = 0.0;
  int parity = 1;
  double value = 0.0;  // objective at the optimum
};

struct DefectBreakdown {
  double phase = 0.0;  // alignment defect of the better rigid family
  double stall = 0.0;  // fitted axial phase drift
  double netpar = 0.0; // pairwise rotation/parity incompatibility
  bool two_d_branch = false;  // which family won the alignment fit
  AxisFit ax;                 // axis-family fit details
  double total() const { return phase + stall + netpar; }
};

// The rigidity defect. Zero exactly on the two rigid families:
//  - constant-frame measures: one (dir, phase, parity), windows free;
//  - orbit graphs: atoms (R_a(az) d0, cap, az + theta0 mod pi, p0) over any
//    cap set with arbitrary weights, for some axis a.
DefectBreakdown frame_defects(const FrameMeasure& nu, const RigidityConfig& cfg = {});

struct RigidDistance {
  double dist = 0.0;      // min of the two family distances
  double dist_2d = 0.0;
  double dist_ax = 0.0;
  bool two_d = false;
  AxisFit ax;
  FrameLabel frame_2d;    // optimal constant frame
};

// Family-constrained transport cost: atoms pay the ground metric to their
// orbit/constant-frame image at the same window (windows are free in the 2d
// family and preserved in the axis family, whose weights are arbitrary), and
// the family parameters are optimized. Exact on members; an upper bound for
// W1 in general.
RigidDistance dist_to_rigid(const FrameMeasure& nu, const RigidityConfig& cfg = {});

struct GapProbeReport {
  int samples = 0;
  double worst_ratio = 0.0;    // max dist^2 / defect over perturbed samples
  double min_defect_violator = 0.0;  // smallest defect among genuinely perturbed samples
  int zero_defect_perturbed = 0;     // perturbed samples whose defect vanished (should be 0)
  bool holds = false;          // worst_ratio <= cfg.frame_gap
};

// Randomized stress test of dist^2 <= C_fr * defect around both families.
GapProbeReport gap_probe(double eps, int samples, std::uint64_t seed, const RigidityConfig& cfg = {});

enum class RigidFamily { ConstantFrame, AxisOrbit, None };

struct PhaseRigidityResult {
  RigidFamily family = RigidFamily::None;
  double dist = 0.0;
  DefectBreakdown defects;
  std::optional<AxisFit> axis;
};

// Nearest rigid family within tolerance; constant-frame wins ties and the
// single-atom case.
PhaseRigidityResult phase_rigidity_check(const FrameMeasure& nu, const RigidityConfig& cfg = {});

// helpers for building test members
FrameMeasure make_constant_frame(const Vec3& dir, double phase, int parity,
                                 const std::vector<std::pair<int, double>>& windows,
                                 const std::vector<Vec3>& cap_centers);
FrameMeasure make_orbit_graph(const Vec3& axis, const Vec3& base_dir, double theta0, int parity,
                              const std::vector<std::pair<int, double>>& windows,
                              const std::vector<Vec3>& cap_centers);

}  // namespace packetscope
