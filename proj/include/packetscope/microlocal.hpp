#pragma once

#include "packetscope/lp.hpp"
#include "packetscope/packets.hpp"
#include "packetscope/rigidity.hpp"

namespace packetscope {

// Localized Biot-Savart cubic form over a packet cylinder and its triad
// decomposition into resonant / nonresonant / low / tail classes.

enum class TriadClass { Resonant = 0, Nonresonant = 1, Low = 2, Tail = 3 };

struct TriadTerm {
  std::array<int, 3> shell{};
  std::array<int, 3> cap{};
  TriadClass cls = TriadClass::Resonant;
  double contribution = 0.0;
  double pairing_phase = 0.0;  // arg of the analytic pairing mod pi; resonant cells only
};

struct TriadDecomposition {
  double b_res = 0.0;
  double b_nonres = 0.0;
  double b_low = 0.0;
  double b_tail = 0.0;
  double cubic_full = 0.0;     // the undecomposed form, same quadrature
  double abs_mass = 0.0;       // sum of |contribution| over all cell triples
  double listing_floor = 0.0;  // absolute cutoff applied to the listing
  std::vector<TriadTerm> listed;

  double total() const { return b_res + b_nonres + b_low + b_tail; }
  double identity_residual() const;  // |total - cubic_full| relative to the form
};

// chi^2-weighted Riemann quadrature of w1 . grad(-Delta)^{-1}w2 . w3 over the
// window ball around center; the middle factor by spectral inversion. w2 must
// be mean-free.
double cubic_form_slice(const Grid& g, const Vec3& center, const Cutoff& chi,
                        const VecField& w1, const VecField& w2, const VecField& w3);

// cylinder quadrature on the evolving vorticity (trapezoid on the cadence)
double cubic_form(const FieldHistory& h, const Packet& q);
// same cylinder measure for a frozen triple of fields
double cubic_form(const FieldHistory& h, const Packet& q, const VecField& w1,
                  const VecField& w2, const VecField& w3);

// Classifies every shell/cap cell triple: low when one frequency sits at least
// j_low shells below the top, tail when a participant keeps more than
// tail_frac of its mass outside the window, nonresonant when cap centers are
// separated beyond nonres_angle_deg or shells beyond j_res, resonant
// otherwise. Class sums cover every triple; the listing keeps those above
// listing_cutoff of the total absolute mass.
TriadDecomposition triad_decompose(const FieldHistory& h, const Packet& q,
                                   const LpConfig& cfg = {});

enum class ActiveOutcome { Frames, EmptyActive };

struct ActiveFrameResult {
  ActiveOutcome outcome = ActiveOutcome::EmptyActive;
  FrameMeasure nu;             // meaningful when outcome == Frames
  std::vector<Vec3> cap_dirs;  // dominant strain line per cap (unit, canonical)
};

// Saddle-frame labels from the listed resonant triads: direction from the
// packet-averaged cap-restricted strain, window from the middle cap, phase
// from the analytic pairing, parity from the sign of the contribution, weight
// proportional to |contribution|.
ActiveFrameResult active_frames(const TriadDecomposition& td, const FieldHistory& h,
                                const Packet& q, const LpConfig& cfg = {});

}  // namespace packetscope
