#pragma once

#include <functional>
#include <vector>

#include "packetscope/field.hpp"

namespace packetscope {

// C^2 radial cutoff: 1 on B_rho, quintic ramp down to 0 at 2 rho.
struct Cutoff {
  double rho = 1.0;

  double chi(double r) const;
  double dchi(double r) const;
  double d2chi(double r) const;

  // measured on a fine 1d grid; the advertised ceilings are grad <= 2/rho
  // and hess <= 6/rho^2
  double grad_sup_rho() const;
  double hess_sup_rho2() const;
  static constexpr double kGradCeiling = 2.0;
  static constexpr double kHessCeiling = 6.0;
};

// Radial weight w(|x|) with compact support and its 3D Fourier transform
//   W(k) = int w(|x|) exp(-i k.x) dx = (4 pi / k) int w(r) r sin(kr) dr.
// Sharp balls and annuli use the closed form; smooth profiles are integrated
// piecewise with Gauss-Legendre panels sized to the oscillation.
class RadialWindow {
 public:
  RadialWindow(std::function<double(double)> profile, std::vector<double> breaks);

  static RadialWindow ball(double rho);
  static RadialWindow annulus(double r0, double r1);
  static RadialWindow chi_sq(double rho);       // chi^2 of the cutoff at scale rho
  static RadialWindow grad_chi_sq(double rho);  // |chi'|^2

  double value(double r) const;
  double ft(double k) const;
  double support() const { return breaks_.back(); }
  double inner() const { return breaks_.front(); }

 private:
  std::function<double(double)> profile_;
  std::vector<double> breaks_;
  bool sharp_ = false;
  double sharp_r0_ = 0.0, sharp_r1_ = 0.0;
};

// Window integrals of quadratic expressions in band-limited fields, computed
// spectrally. Products are formed on a doubled grid, so for dealiased inputs
// (band 2n/3 after squaring <= padded Nyquist n) they are exact, and
//   int f(x) w(|x - x0|) dx = sum_k fhat(k) W(|k|) exp(i k.x0)
// is evaluated either for every grid center at once (one inverse FFT) or at a
// single center by direct summation.
class WindowEngine {
 public:
  explicit WindowEngine(const Grid& g);

  const Grid& grid() const { return g_; }
  int padded() const { return m_; }

  // padded-grid spectral coefficients of sum_c a_c b_c
  SpecField quadratic_spectrum(const SpecVec& a, const SpecVec& b) const;
  SpecField quadratic_spectrum(const std::vector<const SpecField*>& a,
                               const std::vector<const SpecField*>& b) const;
  // real samples of one n-grid spectral field on the padded grid
  RealField synth_padded(const SpecField& f) const;
  SpecField analyze_padded(const RealField& f) const;

  // window integral centered at every n-grid point
  RealField scan(const SpecField& f_pad, const RadialWindow& w) const;
  // window integral at one (not necessarily grid) center
  double integrate_at(const SpecField& f_pad, const RadialWindow& w, const Vec3& x0) const;
  // integral over the whole box
  double integrate_box(const SpecField& f_pad) const;

 private:
  Grid g_;
  int m_;
  std::vector<double> window_table(const RadialWindow& w) const;
};

// trapezoid weights on the snapshot times that fall in (t0, t1]; a lone
// snapshot stands in for the whole window and gets lone_weight
std::vector<double> trapezoid_weights(const std::vector<double>& times, double lone_weight);

// periodic trilinear sample of a grid field
double trilerp(const Grid& g, const RealField& f, const Vec3& x);

// periodic Catmull-Rom tricubic sample; reproduces quadratics, so smooth
// fields interpolate to O(h^3) instead of trilerp's O(h^2)
double tricubic(const Grid& g, const RealField& f, const Vec3& x);

}  // namespace packetscope
