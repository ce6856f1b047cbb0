#include "packetscope/defects.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>

#include "packetscope/spectral_ops.hpp"
#include "packetscope/windows.hpp"

namespace packetscope {

namespace {

std::vector<std::size_t> cylinder_window(const FieldHistory& h, const Packet& p) {
  if (p.rho <= 0.0) throw ConfigError("packet: scale must be positive");
  std::vector<std::size_t> idx = h.window_indices(p.t_begin(), p.t_end);
  if (idx.empty()) {
    for (std::size_t i = h.size(); i-- > 0;) {
      if (h.at(i).time <= p.t_end + 1e-12) {
        idx.push_back(i);
        break;
      }
    }
  }
  if (idx.empty()) throw ConfigError("packet: no snapshot at or before the endpoint");
  return idx;
}

std::vector<double> cylinder_weights(const FieldHistory& h, const std::vector<std::size_t>& idx,
                                     double lone) {
  std::vector<double> times;
  times.reserve(idx.size());
  for (std::size_t i : idx) times.push_back(h.at(i).time);
  return trapezoid_weights(times, lone);
}

// grid cells where the cutoff is positive, with their offsets from the center
struct SupportBox {
  std::vector<std::uint32_t> idx;
  std::vector<double> chi2;
  std::vector<Vec3> xrel;
  double cell = 0.0;
};

SupportBox make_support(const Grid& g, const Vec3& center, const Cutoff& chi) {
  SupportBox box;
  const double h = g.dx();
  box.cell = h * h * h;
  const double reach = 2.0 * chi.rho + h;
  int span = 2 * static_cast<int>(std::ceil(reach / h)) + 1;
  std::array<int, 3> lo{0, 0, 0};
  if (span >= g.n) {
    span = g.n;
  } else {
    for (int c = 0; c < 3; ++c) lo[c] = static_cast<int>(std::floor((center[c] - reach) / h));
  }
  auto wrapi = [&](int i) {
    i %= g.n;
    return i < 0 ? i + g.n : i;
  };
  for (int dz = 0; dz < span; ++dz)
    for (int dy = 0; dy < span; ++dy)
      for (int dx = 0; dx < span; ++dx) {
        const int ix = wrapi(lo[0] + dx), iy = wrapi(lo[1] + dy), iz = wrapi(lo[2] + dz);
        const Vec3 d = g.min_image(g.point(ix, iy, iz), center);
        const double c = chi.chi(norm(d));
        if (c > 0.0) {
          box.idx.push_back(static_cast<std::uint32_t>(g.real_index(ix, iy, iz)));
          box.chi2.push_back(c * c);
          box.xrel.push_back(d);
        }
      }
  return box;
}

std::array<std::vector<double>, 3> gather3(const SupportBox& box, const VecField& f) {
  std::array<std::vector<double>, 3> out;
  for (int c = 0; c < 3; ++c) {
    out[c].resize(box.idx.size());
    for (std::size_t t = 0; t < box.idx.size(); ++t) out[c][t] = f[c][box.idx[t]];
  }
  return out;
}

BoxTensor gather6(const SupportBox& box, const SymTensorField& f) {
  BoxTensor out;
  for (int c = 0; c < 6; ++c) {
    out.comp[c].resize(box.idx.size());
    for (std::size_t t = 0; t < box.idx.size(); ++t) out.comp[c][t] = f[c][box.idx[t]];
  }
  return out;
}

struct AnnulusGeom {
  int j = 0;
  double r0 = 0.0, r1 = 0.0;
  bool truncated = false;
};

// enstrophy mass of {r0 < |x - center| <= r1} at one snapshot; spectral while
// the annulus embeds in the cell, min-image mask sum once it wraps
double annulus_mass(QuadCache& cache, std::size_t snap, const Vec3& center, const AnnulusGeom& a,
                    const VecField* vort) {
  const Grid& g = cache.engine().grid();
  if (!a.truncated)
    return std::max(
        0.0, cache.engine().integrate_at(cache.enstrophy(snap), RadialWindow::annulus(a.r0, a.r1),
                                         center));
  const VecField& w = *vort;
  const int n = g.n;
  const double s = block_sum_fn(static_cast<std::size_t>(n) * n * n, [&](std::size_t t) {
    const int ix = static_cast<int>(t % n);
    const int iy = static_cast<int>((t / n) % n);
    const int iz = static_cast<int>(t / (static_cast<std::size_t>(n) * n));
    const double r = norm(g.min_image(g.point(ix, iy, iz), center));
    if (r <= a.r0 || r > a.r1) return 0.0;
    const double w0 = w[0][t], w1 = w[1][t], w2 = w[2][t];
    return w0 * w0 + w1 * w1 + w2 * w2;
  });
  return s * g.dx() * g.dx() * g.dx();
}

std::vector<AnnulusRow> annulus_table(QuadCache& cache, const Packet& q, const DefectConfig& cfg) {
  const Grid& g = cache.engine().grid();
  const double half = 0.5 * g.box_length;
  const double reach = std::sqrt(3.0) * half;
  std::vector<AnnulusGeom> geom;
  for (int j = 1;; ++j) {
    const double r0 = q.rho * std::ldexp(1.0, j);
    if (r0 >= reach) break;
    geom.push_back({j, r0, r0 * 2.0, r0 * 2.0 > half + 1e-12});
  }
  std::vector<double> sup(geom.size(), 0.0);
  const std::vector<std::size_t> snaps = cylinder_window(cache.history(), q);
  const bool any_mask = std::any_of(geom.begin(), geom.end(),
                                    [](const AnnulusGeom& a) { return a.truncated; });
  for (std::size_t s : snaps) {
    VecField vort;
    if (any_mask) vort = cache.history().at(s).vorticity();
    for (std::size_t i = 0; i < geom.size(); ++i)
      sup[i] = std::max(sup[i], annulus_mass(cache, s, q.center, geom[i], &vort));
  }
  std::vector<AnnulusRow> rows(geom.size());
  for (std::size_t i = 0; i < geom.size(); ++i)
    rows[i] = {geom[i].j, std::pow(geom[i].r0, cfg.alpha) * sup[i], geom[i].truncated};
  return rows;
}

// region labels for the spatial strain decomposition
enum : std::uint8_t { kRegCore = 0, kRegCol = 1, kRegSh = 2, kRegFar = 3 };

std::vector<std::uint8_t> region_mask(const Grid& g, const Vec3& center, double rho, int j_shell) {
  const double r_col = 2.0 * rho;
  const double r_sh = rho * std::ldexp(1.0, j_shell + 1);
  std::vector<std::uint8_t> m(g.real_size());
  const int n = g.n;
#pragma omp parallel for schedule(static)
  for (int iz = 0; iz < n; ++iz)
    for (int iy = 0; iy < n; ++iy)
      for (int ix = 0; ix < n; ++ix) {
        const double r = norm(g.min_image(g.point(ix, iy, iz), center));
        m[g.real_index(ix, iy, iz)] = r <= rho      ? kRegCore
                                      : r <= r_col  ? kRegCol
                                      : r <= r_sh   ? kRegSh
                                                    : kRegFar;
      }
  return m;
}

SpecVec lowpass(const Grid& g, const SpecVec& u, double k_lo) {
  SpecVec out = u;
  const double m2max = (k_lo / g.k_min()) * (k_lo / g.k_min());
  spec_for_each(g, [&](std::size_t idx, int mx, int my, int mz, int) {
    if (mx * mx + my * my + mz * mz > m2max)
      for (int c = 0; c < 3; ++c) out[c][idx] = {};
  });
  return out;
}

// velocity induced by a vorticity piece: u = i k x w / |k|^2; pieces of a
// solenoidal field sum back to the inducing velocity even though each piece
// alone carries a gradient part
SpecVec induced_velocity(const Grid& g, const SpecVec& w_hat) {
  SpecVec out;
  for (int c = 0; c < 3; ++c) out[c].assign(g.spec_size(), {});
  spec_for_each(g, [&](std::size_t idx, int mx, int my, int mz, int) {
    if (mx == 0 && my == 0 && mz == 0) return;
    const Vec3 k{g.k_of(mx), g.k_of(my), g.k_of(mz)};
    const double k2 = dot(k, k);
    const std::complex<double> I(0.0, 1.0);
    const std::complex<double> w0 = w_hat[0][idx], w1 = w_hat[1][idx], w2 = w_hat[2][idx];
    out[0][idx] = I * (k[1] * w2 - k[2] * w1) / k2;
    out[1][idx] = I * (k[2] * w0 - k[0] * w2) / k2;
    out[2][idx] = I * (k[0] * w1 - k[1] * w0) / k2;
  });
  return out;
}

// orthonormal span of the aligned stretching tensors d d^T - I/3
std::vector<Sym3> frame_basis(const FrameMeasure& nu) {
  std::vector<const FrameAtom*> atoms;
  for (const FrameAtom& a : nu.atoms) atoms.push_back(&a);
  std::sort(atoms.begin(), atoms.end(),
            [](const FrameAtom* a, const FrameAtom* b) { return a->weight > b->weight; });
  std::vector<Sym3> basis;
  for (const FrameAtom* a : atoms) {
    if (basis.size() == 5) break;  // traceless symmetric tensors span five dims
    Sym3 b = outer_sym(a->label.dir);
    for (int c = 0; c < 3; ++c) b.v[c] -= 1.0 / 3.0;
    for (const Sym3& e : basis) b = b - frob_inner(b, e) * e;
    const double n2 = b.frob2();
    if (n2 > 1e-12) basis.push_back(std::sqrt(1.0 / n2) * b);
  }
  return basis;
}

void solve4(double a[4][4], double b[4], double out[4]) {
  int piv[4] = {0, 1, 2, 3};
  for (int c = 0; c < 4; ++c) {
    int best = c;
    for (int r = c + 1; r < 4; ++r)
      if (std::abs(a[piv[r]][c]) > std::abs(a[piv[best]][c])) best = r;
    std::swap(piv[c], piv[best]);
    const double d = a[piv[c]][c];
    if (std::abs(d) < 1e-300) {
      for (int i = 0; i < 4; ++i) out[i] = 0.0;
      return;
    }
    for (int r = c + 1; r < 4; ++r) {
      const double f = a[piv[r]][c] / d;
      for (int k = c; k < 4; ++k) a[piv[r]][k] -= f * a[piv[c]][k];
      b[piv[r]] -= f * b[piv[c]];
    }
  }
  for (int c = 3; c >= 0; --c) {
    double s = b[piv[c]];
    for (int k = c + 1; k < 4; ++k) s -= a[piv[c]][k] * out[k];
    out[c] = s / a[piv[c]][c];
  }
}

std::vector<Vec3> fib_dirs(int m) {
  std::vector<Vec3> out;
  out.reserve(m);
  const double ga = kPi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < m; ++i) {
    const double zc = 1.0 - (2.0 * i + 1.0) / m;
    const double r = std::sqrt(std::max(0.0, 1.0 - zc * zc));
    out.push_back({r * std::cos(ga * i), r * std::sin(ga * i), zc});
  }
  return out;
}

}  // namespace

double leakage(QuadCache& cache, const Packet& q, const DefectConfig& cfg) {
  const Grid& g = cache.engine().grid();
  const FieldHistory& h = cache.history();
  const std::vector<std::size_t> snaps = cylinder_window(h, q);
  const std::vector<double> wts = cylinder_weights(h, snaps, q.rho * q.rho);

  const double half = 0.5 * g.box_length;
  const AnnulusGeom collar{0, q.rho, 2.0 * q.rho, 2.0 * q.rho > half + 1e-12};

  std::vector<double> gx, gw;
  gauss_legendre(cfg.flux_nodes, gx, gw);
  const std::size_t npts = static_cast<std::size_t>(cfg.flux_nodes) * cfg.flux_slices;
  const double dphi = kTwoPi / cfg.flux_slices;

  double mass = 0.0, flux = 0.0;
  for (std::size_t s = 0; s < snaps.size(); ++s) {
    const FieldSnapshot& snap = h.at(snaps[s]);
    const VecField vort = snap.vorticity();
    mass = std::max(mass, annulus_mass(cache, snaps[s], q.center, collar, &vort));

    const VecField vel = snap.velocity();
    const double f = block_sum_fn(npts, [&](std::size_t t) {
      const int it = static_cast<int>(t / cfg.flux_slices);
      const int ip = static_cast<int>(t % cfg.flux_slices);
      const double c = gx[it], r = std::sqrt(std::max(0.0, 1.0 - c * c));
      const double phi = dphi * (ip + 0.5);
      const Vec3 nh{r * std::cos(phi), r * std::sin(phi), c};
      const Vec3 x = q.center + q.rho * nh;
      double un = 0.0, w2 = 0.0;
      for (int d = 0; d < 3; ++d) {
        un += tricubic(g, vel[d], x) * nh[d];
        const double wd = tricubic(g, vort[d], x);
        w2 += wd * wd;
      }
      return gw[it] * std::abs(un) * w2;
    });
    flux += wts[s] * f * dphi * q.rho * q.rho;
  }
  return std::pow(q.rho, cfg.alpha) * (mass + flux);
}

double shell_defect(QuadCache& cache, const Packet& q, const DefectConfig& cfg) {
  double d = 0.0;
  for (const AnnulusRow& row : annulus_table(cache, q, cfg))
    if (row.j <= cfg.j_shell) d += row.p;
  return d;
}

TailResult tail(QuadCache& cache, const Packet& q, const DefectConfig& cfg) {
  TailResult out;
  out.table = annulus_table(cache, q, cfg);
  for (const AnnulusRow& row : out.table) {
    if (row.j > cfg.j_shell)
      out.p_tail += std::pow(2.0, -cfg.c_tail * row.j) * row.p;
    out.truncated = out.truncated || row.truncated;
  }
  return out;
}

StrainSplit strain_split(const FieldHistory& h, const Packet& q, const ActiveFrameResult& frames,
                         const DefectConfig& cfg) {
  const Grid& g = h.grid;
  const Cutoff chi{q.rho};
  const SupportBox box = make_support(g, q.center, chi);

  StrainSplit out;
  out.idx = box.idx;
  out.chi2 = box.chi2;
  out.xrel = box.xrel;
  out.cell = box.cell;
  out.snaps = cylinder_window(h, q);
  out.weights = cylinder_weights(h, out.snaps, q.rho * q.rho);

  if (frames.outcome == ActiveOutcome::Frames) {
    out.basis = frame_basis(frames.nu);
  }
  out.empty_active = out.basis.empty();

  const double k_lo = cfg.k_low_frac * kPi / q.rho;
  const std::vector<std::uint8_t> mask = region_mask(g, q.center, q.rho, cfg.j_shell);
  const std::size_t ncell = box.idx.size();
  double worst = 0.0;

  for (std::size_t si = 0; si < out.snaps.size(); ++si) {
    const FieldSnapshot& snap = h.at(out.snaps[si]);
    std::array<BoxTensor, StrainSplit::kParts> P;

    const SpecVec u_lo = lowpass(g, snap.u_hat, k_lo);
    P[StrainSplit::kLow] = gather6(box, strain_of(g, u_lo));

    SpecVec u_hi = snap.u_hat;
    for (int c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < u_hi[c].size(); ++i) u_hi[c][i] -= u_lo[c][i];
    const VecField w_hi = to_real(g, curl_hat(g, u_hi));

    BoxTensor core;
    for (std::uint8_t reg = kRegCore; reg <= kRegFar; ++reg) {
      VecField piece;
      for (int c = 0; c < 3; ++c) piece[c].assign(g.real_size(), 0.0);
#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(g.real_size()); ++i)
        if (mask[i] == reg)
          for (int c = 0; c < 3; ++c) piece[c][i] = w_hi[c][i];
      BoxTensor bt = gather6(box, strain_of(g, induced_velocity(g, to_spectral(g, piece))));
      if (reg == kRegCore)
        core = std::move(bt);
      else
        P[reg == kRegCol ? StrainSplit::kCol
          : reg == kRegSh ? StrainSplit::kSh
                          : StrainSplit::kFar] = std::move(bt);
    }

    // project the core strain onto the active channel
    for (int c = 0; c < 6; ++c) {
      P[StrainSplit::kAct].comp[c].assign(ncell, 0.0);
      P[StrainSplit::kPassCore].comp[c].resize(ncell);
    }
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t t = 0; t < static_cast<std::ptrdiff_t>(ncell); ++t) {
      const Sym3 s = core.at(t);
      Sym3 a{};
      for (const Sym3& e : out.basis) a = a + frob_inner(s, e) * e;
      const Sym3 p = s - a;
      for (int c = 0; c < 6; ++c) {
        P[StrainSplit::kAct].comp[c][t] = a.v[c];
        P[StrainSplit::kPassCore].comp[c][t] = p.v[c];
      }
    }

    out.omega.push_back(gather3(box, snap.vorticity()));

    const BoxTensor full = gather6(box, strain_of(g, snap.u_hat));
    const double num = block_sum_fn(ncell, [&](std::size_t t) {
      double acc = 0.0;
      for (int c = 0; c < 6; ++c) {
        double sum = 0.0;
        for (int p = 0; p < StrainSplit::kParts; ++p) sum += P[p].comp[c][t];
        const double d = sum - full.comp[c][t];
        acc += (c < 3 ? 1.0 : 2.0) * d * d;
      }
      return box.chi2[t] * acc;
    });
    const double den = block_sum_fn(ncell, [&](std::size_t t) {
      double acc = 0.0;
      for (int c = 0; c < 6; ++c)
        acc += (c < 3 ? 1.0 : 2.0) * full.comp[c][t] * full.comp[c][t];
      return box.chi2[t] * acc;
    });
    if (den > 0.0) worst = std::max(worst, std::sqrt(num / den));
    out.parts.push_back(std::move(P));
  }
  out.sum_residual = worst;

  // least-squares constant and affine moments of the low part, one shared Gram
  double gram[4][4] = {};
  for (std::size_t t = 0; t < ncell; ++t) {
    const double phi[4] = {1.0, box.xrel[t][0], box.xrel[t][1], box.xrel[t][2]};
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) gram[i][j] += box.chi2[t] * phi[i] * phi[j];
  }
  out.a0.resize(out.snaps.size());
  out.a1.resize(out.snaps.size());
  for (std::size_t si = 0; si < out.snaps.size(); ++si) {
    const BoxTensor& low = out.parts[si][StrainSplit::kLow];
    for (int c = 0; c < 6; ++c) {
      double a[4][4];
      std::copy(&gram[0][0], &gram[0][0] + 16, &a[0][0]);
      double b[4] = {};
      for (std::size_t t = 0; t < ncell; ++t) {
        const double w = box.chi2[t] * low.comp[c][t];
        b[0] += w;
        for (int j = 0; j < 3; ++j) b[1 + j] += w * box.xrel[t][j];
      }
      double sol[4];
      solve4(a, b, sol);
      out.a0[si].v[c] = sol[0];
      for (int j = 0; j < 3; ++j) out.a1[si][j].v[c] = sol[1 + j];
    }
  }
  return out;
}

PassiveChannel passive_channel(const Packet& q, const StrainSplit& split, const DefectConfig& cfg) {
  PassiveChannel out;
  const std::size_t ncell = split.idx.size();
  double t_sum = 0.0, pass2 = 0.0;
  for (std::size_t si = 0; si < split.snaps.size(); ++si) {
    const auto& P = split.parts[si];
    const auto& om = split.omega[si];
    const double contract = block_sum_fn(ncell, [&](std::size_t t) {
      Sym3 s{};
      for (int p = StrainSplit::kPassCore; p < StrainSplit::kParts; ++p)
        for (int c = 0; c < 6; ++c) s.v[c] += P[p].comp[c][t];
      const Vec3 w{om[0][t], om[1][t], om[2][t]};
      return split.chi2[t] * dot(s.apply(w), w);
    });
    const double p2 = block_sum_fn(ncell, [&](std::size_t t) {
      return split.chi2[t] * P[StrainSplit::kPassCore].at(t).frob2();
    });
    t_sum += split.weights[si] * contract;
    pass2 += split.weights[si] * p2;
  }
  out.t_pass_to_core = t_sum * split.cell;
  out.d_pass = std::pow(q.rho, cfg.alpha) * pass2 * split.cell;
  return out;
}

double low_residual(const FieldHistory& h, const Packet& q, const StrainSplit& split,
                    const DefectConfig& cfg, const LpConfig& lp) {
  const std::size_t ncell = split.idx.size();
  double quad = 0.0, low2 = 0.0;
  for (std::size_t si = 0; si < split.snaps.size(); ++si) {
    const BoxTensor& low = split.parts[si][StrainSplit::kLow];
    const Sym3& a0 = split.a0[si];
    const std::array<Sym3, 3>& a1 = split.a1[si];
    const double qs = block_sum_fn(ncell, [&](std::size_t t) {
      Sym3 fit = a0;
      for (int j = 0; j < 3; ++j) fit = fit + split.xrel[t][j] * a1[j];
      const Sym3 d = low.at(t) - fit;
      return split.chi2[t] * d.frob2();
    });
    const double ls = block_sum_fn(ncell, [&](std::size_t t) {
      return split.chi2[t] * low.at(t).frob2();
    });
    quad += split.weights[si] * qs;
    low2 += split.weights[si] * ls;
  }
  const double comm =
      commutator_measure(h.grid, h.at(split.snaps.back()).vorticity_hat(), q.center, q.rho, lp);
  return std::pow(q.rho, cfg.alpha) * (quad + comm * low2) * split.cell;
}

DefectReport assemble(const DefectChannels& ch) {
  DefectReport r;
  bool clamped = false;
  auto clamp = [&](double v) {
    if (v < 0.0) {
      clamped = true;
      return 0.0;
    }
    return v;
  };
  r.d_leak = clamp(ch.d_leak);
  r.d_shell = clamp(ch.d_shell);
  r.p_tail = clamp(ch.p_tail);
  r.d_pass = clamp(ch.d_pass);
  r.d_phase = clamp(ch.d_phase);
  r.d_stall = clamp(ch.d_stall);
  r.d_netpar = clamp(ch.d_netpar);
  r.r_low = clamp(ch.r_low);
  r.clamped = clamped;
  r.e_fin = r.d_leak + r.d_shell + std::sqrt(r.p_tail) + r.p_tail + r.d_pass + r.d_phase +
            r.d_stall + r.d_netpar + r.r_low;
  r.d_final = r.d_shell + r.d_leak + r.d_pass + r.d_phase + r.d_stall + r.d_netpar;
  r.visibility = ch.visibility;
  r.t_pass_to_core = ch.t_pass_to_core;
  r.tail_table = ch.tail_table;
  r.empty_active = ch.empty_active;
  r.truncated = ch.truncated;
  return r;
}

DefectReport defect_report(const FieldHistory& h, const Packet& q, const DefectConfig& cfg,
                           const LpConfig& lp, const RigidityConfig& rig) {
  QuadCache cache(h);
  DefectChannels ch;
  ch.visibility = visibility(cache, q).total();
  ch.d_leak = leakage(cache, q, cfg);
  ch.d_shell = shell_defect(cache, q, cfg);
  const TailResult tr = tail(cache, q, cfg);
  ch.p_tail = tr.p_tail;
  ch.tail_table = tr.table;
  ch.truncated = tr.truncated;

  const TriadDecomposition td = triad_decompose(h, q, lp);
  const ActiveFrameResult af = active_frames(td, h, q, lp);
  if (af.outcome == ActiveOutcome::Frames) {
    const DefectBreakdown db = frame_defects(af.nu, rig);
    ch.d_phase = db.phase;
    ch.d_stall = db.stall;
    ch.d_netpar = db.netpar;
  } else {
    ch.empty_active = true;
  }

  const StrainSplit split = strain_split(h, q, af, cfg);
  ch.empty_active = ch.empty_active || split.empty_active;
  const PassiveChannel pc = passive_channel(q, split, cfg);
  ch.d_pass = pc.d_pass;
  ch.t_pass_to_core = pc.t_pass_to_core;
  ch.r_low = low_residual(h, q, split, cfg, lp);
  return assemble(ch);
}

AuditTable passive_visibility_audit(const DefectReport& report, const std::vector<double>& eps_grid,
                                    double c_eps) {
  AuditTable out;
  out.c_eps = c_eps;
  const double lhs = std::abs(report.t_pass_to_core);
  const double sum8 = report.d_leak + report.d_shell + report.p_tail + report.d_phase +
                      report.d_stall + report.d_netpar + report.d_pass + report.r_low;
  for (double eps : eps_grid) {
    AuditRow row;
    row.eps = eps;
    row.lhs = lhs;
    row.rhs = eps * report.visibility + c_eps * sum8;
    row.residual = row.lhs - row.rhs;
    out.all_pass = out.all_pass && row.residual <= 0.0;
    const double excess = lhs - eps * report.visibility;
    double needed = 0.0;
    if (excess > 0.0)
      needed = sum8 > 0.0 ? excess / sum8 : std::numeric_limits<double>::infinity();
    out.min_c_eps = std::max(out.min_c_eps, needed);
    out.rows.push_back(row);
  }
  return out;
}

static CylindricalDecomposition decompose_impl(const Grid& g, const VecField& vel,
                                               const VecField& vort, const AxisLine& axis,
                                               double r_max, double z_half, const CylConfig& cfg) {
  CylindricalDecomposition out;
  out.axis.point = axis.point;
  out.axis.dir = normalized(axis.dir);
  out.nr = cfg.nr;
  out.ntheta = cfg.ntheta;
  out.nz = cfg.nz;
  out.r_min = cfg.r_min_cells * g.dx();
  out.r_max = r_max;
  out.z_half = z_half;
  if (cfg.nr < 2 || cfg.ntheta < 4 || cfg.nz < 2)
    throw ConfigError("cylindrical: sampling grid too small");
  if (r_max <= out.r_min)
    throw ConfigError("cylindrical: r_max must exceed the inner cutoff");
  if (z_half <= 0.0) throw ConfigError("cylindrical: z_half must be positive");

  // orthonormal frame transverse to the axis
  const Vec3 d = out.axis.dir;
  int least = 0;
  for (int c = 1; c < 3; ++c)
    if (std::abs(d[c]) < std::abs(d[least])) least = c;
  Vec3 seed{0.0, 0.0, 0.0};
  seed[least] = 1.0;
  const Vec3 e1 = normalized(seed - dot(seed, d) * d);
  const Vec3 e2 = cross(d, e1);

  const double dr = (r_max - out.r_min) / cfg.nr;
  const double dz = 2.0 * z_half / cfg.nz;
  const double dth = kTwoPi / cfg.ntheta;
  out.r.resize(cfg.nr);
  for (int ir = 0; ir < cfg.nr; ++ir) out.r[ir] = out.r_min + (ir + 0.5) * dr;
  out.z.resize(cfg.nz);
  for (int iz = 0; iz < cfg.nz; ++iz) out.z[iz] = -z_half + (iz + 0.5) * dz;

  const std::size_t nsamp = static_cast<std::size_t>(cfg.nr) * cfg.ntheta * cfg.nz;
  out.u_r.assign(nsamp, 0.0);
  out.u_theta.assign(nsamp, 0.0);
  out.u_z.assign(nsamp, 0.0);
  const std::size_t nrz = static_cast<std::size_t>(cfg.nr) * cfg.nz;
  out.gamma.assign(nrz, 0.0);
  out.gbig.assign(nrz, 0.0);
  out.gamma_e.assign(nrz, 0.0);
  out.mu5.assign(nrz, 0.0);

  const int mmax = cfg.ntheta / 2;
  out.mode_energies.assign(mmax + 1, 0.0);
  double swirl = 0.0, total = 0.0;

  std::vector<double> ur(cfg.ntheta), ut(cfg.ntheta), uz(cfg.ntheta);
#pragma omp parallel for schedule(static) collapse(2) if (nrz > 64)
  for (int iz = 0; iz < cfg.nz; ++iz)
    for (int ir = 0; ir < cfg.nr; ++ir)
      for (int it = 0; it < cfg.ntheta; ++it) {
        const double th = it * dth;
        const Vec3 er = std::cos(th) * e1 + std::sin(th) * e2;
        const Vec3 et = -std::sin(th) * e1 + std::cos(th) * e2;
        const Vec3 x = out.axis.point + out.z[iz] * d + out.r[ir] * er;
        Vec3 u, w;
        for (int c = 0; c < 3; ++c) {
          u[c] = tricubic(g, vel[c], x);
          w[c] = tricubic(g, vort[c], x);
        }
        const std::size_t s =
            it + static_cast<std::size_t>(cfg.ntheta) * (ir + static_cast<std::size_t>(cfg.nr) * iz);
        out.u_r[s] = dot(u, er);
        out.u_theta[s] = dot(u, et);
        out.u_z[s] = dot(u, d);
        const std::size_t rz = ir + static_cast<std::size_t>(cfg.nr) * iz;
        out.gamma[rz] += out.r[ir] * out.u_theta[s] / cfg.ntheta;
        out.gbig[rz] += dot(w, et) / out.r[ir] / cfg.ntheta;
        out.gamma_e[rz] += out.u_theta[s] / out.r[ir] / cfg.ntheta;
      }

  for (int iz = 0; iz < cfg.nz; ++iz)
    for (int ir = 0; ir < cfg.nr; ++ir) {
      const std::size_t rz = ir + static_cast<std::size_t>(cfg.nr) * iz;
      out.mu5[rz] = out.r[ir] * out.r[ir] * out.r[ir] * dr * dz;
      const double vol = out.r[ir] * dr * dz * kTwoPi;  // full ring volume
      for (int it = 0; it < cfg.ntheta; ++it) {
        const std::size_t s =
            it + static_cast<std::size_t>(cfg.ntheta) * (ir + static_cast<std::size_t>(cfg.nr) * iz);
        ur[it] = out.u_r[s];
        ut[it] = out.u_theta[s];
        uz[it] = out.u_z[s];
        const double sq = ur[it] * ur[it] + ut[it] * ut[it] + uz[it] * uz[it];
        total += vol * sq / cfg.ntheta;
        swirl += vol * ut[it] * ut[it] / cfg.ntheta;
      }
      for (int m = 0; m <= mmax; ++m) {
        const double mult = (m == 0 || 2 * m == cfg.ntheta) ? 1.0 : 2.0;
        double cr = 0.0, ci = 0.0, tr = 0.0, ti = 0.0, zr = 0.0, zi = 0.0;
        for (int it = 0; it < cfg.ntheta; ++it) {
          const double cth = std::cos(m * it * dth), sth = std::sin(m * it * dth);
          cr += ur[it] * cth;
          ci -= ur[it] * sth;
          tr += ut[it] * cth;
          ti -= ut[it] * sth;
          zr += uz[it] * cth;
          zi -= uz[it] * sth;
        }
        const double scale = 1.0 / cfg.ntheta;
        const double e = (cr * cr + ci * ci + tr * tr + ti * ti + zr * zr + zi * zi) * scale * scale;
        out.mode_energies[m] += vol * mult * e;
      }
    }

  out.total_energy = total;
  out.m0_fraction = total > 0.0 ? out.mode_energies[0] / total : 0.0;
  out.swirl_fraction = total > 0.0 ? swirl / total : 0.0;

  // lifted-Laplacian stencil on the averaged swirl moment, interior points
  if (cfg.nr >= 3 && cfg.nz >= 3) {
    double acc = 0.0;
    std::size_t cnt = 0;
    for (int iz = 1; iz + 1 < cfg.nz; ++iz)
      for (int ir = 1; ir + 1 < cfg.nr; ++ir) {
        const std::size_t rz = ir + static_cast<std::size_t>(cfg.nr) * iz;
        const double grr = (out.gamma[rz + 1] - 2.0 * out.gamma[rz] + out.gamma[rz - 1]) / (dr * dr);
        const double gr = (out.gamma[rz + 1] - out.gamma[rz - 1]) / (2.0 * dr);
        const double gzz = (out.gamma[rz + cfg.nr] - 2.0 * out.gamma[rz] + out.gamma[rz - cfg.nr]) /
                           (dz * dz);
        const double lap = grr + 3.0 / out.r[ir] * gr + gzz;
        acc += lap * lap;
        ++cnt;
      }
    out.delta5_residual = cnt ? std::sqrt(acc / cnt) : 0.0;
  }
  return out;
}

CylindricalDecomposition cylindrical_decompose(const FieldSnapshot& snap, const AxisLine& axis,
                                               double r_max, double z_half, const CylConfig& cfg) {
  return decompose_impl(snap.grid, snap.velocity(), snap.vorticity(), axis, r_max, z_half, cfg);
}

Classification classify_endpoint(const FieldHistory& h, const Packet& q,
                                 const DefectReport& report, const FrameMeasure& nu,
                                 const DefectConfig& cfg, const RigidityConfig& rig) {
  const Grid& g = h.grid;
  Classification out;
  out.c0 = cfg.c0_frac * report.visibility;
  out.gate = report.d_final + report.r_low;
  out.channels = {{"d_shell", report.d_shell},   {"d_leak", report.d_leak},
                  {"d_pass", report.d_pass},     {"d_phase", report.d_phase},
                  {"d_stall", report.d_stall},   {"d_netpar", report.d_netpar},
                  {"r_low", report.r_low}};
  std::stable_sort(out.channels.begin(), out.channels.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  if (!nu.atoms.empty()) {
    const PhaseRigidityResult prr = phase_rigidity_check(nu, rig);
    out.frame_family = prr.family;
    out.frame_dist = prr.dist;
  }

  if (out.gate > 0.0 && out.gate >= out.c0) {
    out.outcome = EndpointClass::Defective;
    return out;
  }

  const std::vector<std::size_t> snaps = cylinder_window(h, q);
  const FieldSnapshot& snap = h.at(snaps.back());
  const Cutoff chi{q.rho};
  const SupportBox box = make_support(g, q.center, chi);
  const std::size_t ncell = box.idx.size();

  // directional-invariance quadratic form sum_j int chi^2 (d_a u_j)(d_b u_j)
  const std::array<RealField, 9> grad = gradient_tensor(g, snap.u_hat);
  Sym3 M{};
  for (int a = 0; a < 3; ++a)
    for (int b = a; b < 3; ++b) {
      const double v = block_sum_fn(ncell, [&](std::size_t t) {
        double acc = 0.0;
        for (int j = 0; j < 3; ++j)
          acc += grad[3 * a + j][box.idx[t]] * grad[3 * b + j][box.idx[t]];
        return box.chi2[t] * acc;
      });
      M.v[Sym3::idx(a, b)] = v * box.cell;
    }
  if (M.trace() <= 0.0) return out;  // empty window, nothing to classify
  const EigSym3 meig = eig_sym3(M);
  out.invariance_fraction = std::max(0.0, meig.val[0]) / M.trace();
  const Vec3 axis_2d = canonical_line(meig.vec[0]);

  // chi^2-weighted vorticity second moment seeds the symmetry-axis search
  const VecField vel = snap.velocity();
  const VecField vort = snap.vorticity();
  Sym3 W{};
  for (int a = 0; a < 3; ++a)
    for (int b = a; b < 3; ++b) {
      const double v = block_sum_fn(ncell, [&](std::size_t t) {
        return box.chi2[t] * vort[a][box.idx[t]] * vort[b][box.idx[t]];
      });
      W.v[Sym3::idx(a, b)] = v * box.cell;
    }

  const double r_min = cfg.cyl.r_min_cells * g.dx();
  const double extent =
      std::min(std::max(2.0 * q.rho, r_min + 4.0 * g.dx()), 0.45 * g.box_length);
  CylConfig coarse = cfg.cyl;
  coarse.nr = std::min(cfg.cyl.nr, 10);
  coarse.ntheta = std::min(cfg.cyl.ntheta, 8);
  coarse.nz = std::min(cfg.cyl.nz, 10);

  auto m_other = [&](const Vec3& dir, const Vec3& pt, const CylConfig& cc) {
    const CylindricalDecomposition cd = decompose_impl(g, vel, vort, {pt, dir}, extent, extent, cc);
    return cd.total_energy > 0.0 ? 1.0 - cd.m0_fraction : 1.0;
  };

  std::vector<Vec3> cands;
  if (W.trace() > 0.0) cands.push_back(eig_sym3(W).vec[2]);
  cands.push_back(axis_2d);
  if (!nu.atoms.empty()) {
    const PhaseRigidityResult prr = phase_rigidity_check(nu, rig);
    if (prr.axis) cands.push_back(prr.axis->axis);
  }
  for (const Vec3& v : fib_dirs(cfg.axis_grid)) cands.push_back(v);

  Vec3 best_dir = cands.front();
  Vec3 best_pt = q.center;
  double best = std::numeric_limits<double>::infinity();
  for (const Vec3& c : cands) {
    const double v = m_other(normalized(c), q.center, coarse);
    if (v < best) {
      best = v;
      best_dir = normalized(c);
    }
  }

  // pattern search over axis tilt and transverse offset
  double step_ang = 0.15, step_lat = 0.15 * q.rho;
  int budget = cfg.refine_iters;
  while (budget > 0 && (step_ang > 1e-4 || step_lat > 1e-4 * q.rho)) {
    int least = 0;
    for (int c = 1; c < 3; ++c)
      if (std::abs(best_dir[c]) < std::abs(best_dir[least])) least = c;
    Vec3 seed{0.0, 0.0, 0.0};
    seed[least] = 1.0;
    const Vec3 t1 = normalized(seed - dot(seed, best_dir) * best_dir);
    const Vec3 t2 = cross(best_dir, t1);
    bool improved = false;
    for (int mv = 0; mv < 8 && budget > 0; ++mv) {
      const double sgn = mv % 2 ? -1.0 : 1.0;
      Vec3 dir = best_dir, pt = best_pt;
      if (mv < 2)
        dir = normalized(best_dir + sgn * step_ang * t1);
      else if (mv < 4)
        dir = normalized(best_dir + sgn * step_ang * t2);
      else if (mv < 6)
        pt = best_pt + sgn * step_lat * t1;
      else
        pt = best_pt + sgn * step_lat * t2;
      const double v = m_other(dir, pt, coarse);
      --budget;
      if (v < best) {
        best = v;
        best_dir = dir;
        best_pt = pt;
        improved = true;
        break;
      }
    }
    if (!improved) {
      step_ang *= 0.5;
      step_lat *= 0.5;
    }
  }

  const CylindricalDecomposition fine =
      decompose_impl(g, vel, vort, {best_pt, best_dir}, extent, extent, cfg.cyl);
  out.m0_fraction = fine.m0_fraction;
  out.m_other_fraction = fine.total_energy > 0.0 ? 1.0 - fine.m0_fraction : 1.0;
  out.swirl_fraction = fine.swirl_fraction;

  const bool is_2d = out.invariance_fraction <= cfg.tol_2d;
  const bool is_ax = out.m_other_fraction <= cfg.tol_ax && out.swirl_fraction >= cfg.swirl_floor;
  const bool vote_2d = out.frame_family == RigidFamily::ConstantFrame;
  const bool vote_ax = out.frame_family == RigidFamily::AxisOrbit;

  if (is_2d && is_ax) {
    out.outcome = EndpointClass::Ambiguous;
    out.axis = axis_2d;
  } else if (is_2d) {
    out.outcome = vote_ax ? EndpointClass::Ambiguous : EndpointClass::LocallyTwoD;
    out.axis = axis_2d;
  } else if (is_ax) {
    out.outcome = vote_2d ? EndpointClass::Ambiguous : EndpointClass::AxisymmetricSwirl;
    out.axis = canonical_line(best_dir);
  } else {
    out.outcome = EndpointClass::Defective;
    out.axis = canonical_line(best_dir);
  }
  return out;
}

}  // namespace packetscope
