#pragma once

#include "packetscope/packets.hpp"

namespace packetscope::ref {

// Serial direct-space counterparts of the windowed kernels. They share the
// mathematical contract but not the code path: plain Riemann quadrature on
// the grid instead of padded spectral windows, no OpenMP. Kept as test
// oracles and as the baseline of the kernel benchmark.

// sharp-ball |omega|^2 mass around center
double ball_enstrophy(const FieldSnapshot& snap, const Vec3& center, double rho);

// rho^alpha * sup over window snapshots of the sharp-ball enstrophy
double packet_score(const FieldHistory& h, const Packet& q, int alpha);

// trapezoid-weighted  chi^2 |grad omega|^2 + |chi'|^2 |omega|^2  over the
// visibility window, chi evaluated pointwise on the grid
double visibility(const FieldHistory& h, const Packet& q);

// chi^2-weighted quadrature of w1 . grad (-Delta)^{-1} w2 . w3 around center;
// the middle factor inverted spectrally, the contraction summed serially
double cubic_form_slice(const Grid& g, const Vec3& center, const Cutoff& chi, const VecField& w1,
                        const VecField& w2, const VecField& w3);

}  // namespace packetscope::ref
