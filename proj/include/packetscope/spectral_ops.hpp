#pragma once

#include "packetscope/field.hpp"

namespace packetscope {

// All operators act on dealiased spectral fields and return dealiased fields.

SpecVec curl_hat(const Grid& g, const SpecVec& f);

// Solenoidal, mean-free velocity from vorticity: u = curl (-Delta)^{-1} omega.
// Rejects inputs with a nonzero mean or a divergence above tol (relative).
SpecVec biot_savart(const Grid& g, const SpecVec& omega_hat, double tol = 1e-10);

// Remove the gradient part: P = I - k k^T / |k|^2, and zero the mean.
void leray_project(const Grid& g, SpecVec& f);

SpecField divergence_hat(const Grid& g, const SpecVec& f);
SpecVec gradient_hat(const Grid& g, const SpecField& f);

// (-Delta)^{-1} with zero mean.
SpecField inv_laplacian_hat(const Grid& g, const SpecField& f);

// Symmetrized gradient of a velocity field, synthesized to the grid.
SymTensorField strain_of(const Grid& g, const SpecVec& u_hat);

// Full gradient tensor d_i f_j, synthesized; slot (i,j) at out[3*i+j].
std::array<RealField, 9> gradient_tensor(const Grid& g, const SpecVec& f);

// Parseval sums over the full mode lattice (deterministic block reduction).
double l2_norm_sq(const Grid& g, const SpecField& f);
double l2_norm_sq(const Grid& g, const SpecVec& f);
double h1_seminorm_sq(const Grid& g, const SpecVec& f);  // integral |grad f|^2

double divergence_max(const Grid& g, const SpecVec& f);  // max_k |k . fhat|
double mean_magnitude(const SpecVec& f);                 // |fhat(0)|

double max_abs(const RealField& f);

}  // namespace packetscope
