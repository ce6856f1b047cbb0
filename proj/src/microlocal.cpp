#include "packetscope/microlocal.hpp"

#include <algorithm>
#include <cmath>

#include "packetscope/spectral_ops.hpp"

namespace packetscope {

namespace {

// grid points inside the cutoff support around a center, in fixed scan order
struct WindowBox {
  std::vector<std::uint32_t> idx;
  std::vector<double> chi2;
  double cell = 0.0;
};

WindowBox make_box(const Grid& g, const Vec3& center, const Cutoff& chi) {
  WindowBox box;
  const double h = g.dx();
  box.cell = h * h * h;
  const double reach = 2.0 * chi.rho + 2.0 * h;
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
        }
      }
  return box;
}

std::array<std::vector<double>, 3> gather3(const WindowBox& box, const VecField& f) {
  std::array<std::vector<double>, 3> out;
  for (int c = 0; c < 3; ++c) {
    out[c].resize(box.idx.size());
    for (std::size_t t = 0; t < box.idx.size(); ++t) out[c][t] = f[c][box.idx[t]];
  }
  return out;
}

// T_ij = d_i (-Delta)^{-1} f_j on the grid
std::array<RealField, 9> biot_tensor(const Grid& g, const SpecVec& f_hat) {
  SpecVec inv;
  for (int c = 0; c < 3; ++c) inv[c] = inv_laplacian_hat(g, f_hat[c]);
  return gradient_tensor(g, inv);
}

std::array<std::vector<double>, 9> gather9(const WindowBox& box, const std::array<RealField, 9>& f) {
  std::array<std::vector<double>, 9> out;
  for (int c = 0; c < 9; ++c) {
    out[c].resize(box.idx.size());
    for (std::size_t t = 0; t < box.idx.size(); ++t) out[c][t] = f[c][box.idx[t]];
  }
  return out;
}

// Hilbert partner g of f: ghat = -i sgn_H(k) fhat with H a fixed half-space,
// so that f + i g doubles the H-side modes and cancels the mirror side.
SpecVec hilbert_partner(const Grid& g, const SpecVec& f) {
  SpecVec out;
  for (int c = 0; c < 3; ++c) out[c].assign(g.spec_size(), {0.0, 0.0});
  spec_for_each(g, [&](std::size_t idx, int mx, int my, int mz, int) {
    if (mx == 0 && my == 0 && mz == 0) return;
    const bool upper = mz > 0 || (mz == 0 && my > 0) || (mz == 0 && my == 0 && mx > 0);
    const std::complex<double> rot = upper ? std::complex<double>{0.0, -1.0}
                                           : std::complex<double>{0.0, 1.0};
    for (int c = 0; c < 3; ++c) out[c][idx] = rot * f[c][idx];
  });
  return out;
}

// windowed Riemann sum of w1 . T w3
double box_contract(const WindowBox& box, const std::array<std::vector<double>, 3>& w1,
                    const std::array<std::vector<double>, 9>& T,
                    const std::array<std::vector<double>, 3>& w3) {
  const double s = block_sum_fn(box.idx.size(), [&](std::size_t t) {
    double acc = 0.0;
    for (int i = 0; i < 3; ++i) {
      double v = 0.0;
      for (int j = 0; j < 3; ++j) v += T[3 * i + j][t] * w3[j][t];
      acc += w1[i][t] * v;
    }
    return box.chi2[t] * acc;
  });
  return s * box.cell;
}

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

std::vector<double> cylinder_weights(const FieldHistory& h, const Packet& p,
                                     const std::vector<std::size_t>& idx) {
  std::vector<double> times;
  for (std::size_t i : idx) times.push_back(h.at(i).time);
  return trapezoid_weights(times, p.rho * p.rho);
}

void require_mean_free(const Grid& g, const VecField& f, const char* who) {
  double mean2 = 0.0, rms2 = 0.0;
  for (int c = 0; c < 3; ++c) {
    const double s = block_sum_fn(f[c].size(), [&](std::size_t i) { return f[c][i]; });
    const double q = block_sum_fn(f[c].size(), [&](std::size_t i) { return f[c][i] * f[c][i]; });
    const double m = s / static_cast<double>(f[c].size());
    mean2 += m * m;
    rms2 += q / static_cast<double>(f[c].size());
  }
  if (mean2 > 1e-20 * rms2 && mean2 > 1e-280) throw FieldError(std::string(who) + ": field must be mean-free");
}

int grid_shell_max(const Grid& g) {
  const double max_mode = g.dealias_mode() * std::sqrt(3.0);
  return std::max(0, static_cast<int>(std::ceil(std::log2(max_mode))));
}

}  // namespace

double TriadDecomposition::identity_residual() const {
  const double scale = std::max(std::abs(cubic_full), 1e-300);
  return std::abs(total() - cubic_full) / scale;
}

double cubic_form_slice(const Grid& g, const Vec3& center, const Cutoff& chi,
                        const VecField& w1, const VecField& w2, const VecField& w3) {
  require_mean_free(g, w1, "cubic form");
  require_mean_free(g, w2, "cubic form");
  require_mean_free(g, w3, "cubic form");
  const SpecVec w2h = to_spectral(g, w2);
  const auto T = biot_tensor(g, w2h);
  const WindowBox box = make_box(g, center, chi);
  return box_contract(box, gather3(box, w1), gather9(box, T), gather3(box, w3));
}

double cubic_form(const FieldHistory& h, const Packet& q) {
  const std::vector<std::size_t> idx = cylinder_window(h, q);
  const std::vector<double> wts = cylinder_weights(h, q, idx);
  const Cutoff chi{q.rho};
  const WindowBox box = make_box(h.grid, q.center, chi);
  double acc = 0.0;
  for (std::size_t s = 0; s < idx.size(); ++s) {
    const SpecVec what = h.at(idx[s]).vorticity_hat();
    const VecField w = to_real(h.grid, what);
    const auto wb = gather3(box, w);
    acc += wts[s] * box_contract(box, wb, gather9(box, biot_tensor(h.grid, what)), wb);
  }
  return acc;
}

double cubic_form(const FieldHistory& h, const Packet& q, const VecField& w1,
                  const VecField& w2, const VecField& w3) {
  const std::vector<std::size_t> idx = cylinder_window(h, q);
  const std::vector<double> wts = cylinder_weights(h, q, idx);
  double span = 0.0;
  for (double w : wts) span += w;
  const Cutoff chi{q.rho};
  return span * cubic_form_slice(h.grid, q.center, chi, w1, w2, w3);
}

TriadDecomposition triad_decompose(const FieldHistory& h, const Packet& q, const LpConfig& cfg) {
  const Grid& g = h.grid;
  TriadDecomposition out;
  const std::vector<std::size_t> idx = cylinder_window(h, q);
  const std::vector<double> wts = cylinder_weights(h, q, idx);
  const Cutoff chi{q.rho};
  const WindowBox box = make_box(g, q.center, chi);
  const std::vector<Vec3> axes = icosahedral_axes();
  const int ncaps = static_cast<int>(axes.size());
  const int nshell = grid_shell_max(g) + 1;
  const int ncells = nshell * ncaps;
  const std::size_t nc = static_cast<std::size_t>(ncells);

  std::vector<double> V(nc * nc * nc, 0.0);
  std::vector<std::complex<double>> Z(nc * nc * nc, {0.0, 0.0});
  std::vector<double> interior(nc, 0.0), total_mass(nc, 0.0);
  auto vat = [&](int a, int b, int c) -> std::size_t {
    return (static_cast<std::size_t>(a) * nc + b) * nc + c;
  };

  for (std::size_t s = 0; s < idx.size(); ++s) {
    const double wt = wts[s];
    const SpecVec what = h.at(idx[s]).vorticity_hat();
    {
      const VecField w = to_real(g, what);
      const auto wb = gather3(box, w);
      out.cubic_full += wt * box_contract(box, wb, gather9(box, biot_tensor(g, what)), wb);
    }
    const LpDecomposition ld = lp_decompose(g, what, cfg);
    const std::size_t P = ld.pieces.size();
    std::vector<std::array<std::vector<double>, 3>> re(P), im(P);
    std::vector<int> cellid(P), shell(P);
    for (std::size_t p = 0; p < P; ++p) {
      const SpecVec ps = ld.piece_spectrum(p);
      const VecField pr = to_real(g, ps);
      re[p] = gather3(box, pr);
      im[p] = gather3(box, to_real(g, hilbert_partner(g, ps)));
      shell[p] = ld.pieces[p].shell;
      cellid[p] = ld.pieces[p].shell * ncaps + ld.pieces[p].cap;
      double in = 0.0;
      for (std::size_t t = 0; t < box.idx.size(); ++t)
        in += box.chi2[t] * (re[p][0][t] * re[p][0][t] + re[p][1][t] * re[p][1][t] +
                             re[p][2][t] * re[p][2][t]);
      interior[cellid[p]] += wt * in * box.cell;
      total_mass[cellid[p]] += wt * ld.pieces[p].l2sq;
    }

    const std::size_t B = box.idx.size();
    std::vector<double> y0(B), y1(B), y2(B);
    std::vector<std::complex<double>> c0(B), c1(B), c2(B);
    for (std::size_t b = 0; b < P; ++b) {
      const auto Tb = gather9(box, biot_tensor(g, ld.piece_spectrum(b)));
      for (std::size_t c = 0; c < P; ++c) {
        for (std::size_t t = 0; t < B; ++t) {
          const double r0 = re[c][0][t], r1 = re[c][1][t], r2 = re[c][2][t];
          y0[t] = box.chi2[t] * (Tb[0][t] * r0 + Tb[1][t] * r1 + Tb[2][t] * r2);
          y1[t] = box.chi2[t] * (Tb[3][t] * r0 + Tb[4][t] * r1 + Tb[5][t] * r2);
          y2[t] = box.chi2[t] * (Tb[6][t] * r0 + Tb[7][t] * r1 + Tb[8][t] * r2);
        }
        for (std::size_t a = 0; a < P; ++a) {
          double acc = 0.0;
          for (std::size_t t = 0; t < B; ++t)
            acc += re[a][0][t] * y0[t] + re[a][1][t] * y1[t] + re[a][2][t] * y2[t];
          V[vat(cellid[a], cellid[b], cellid[c])] += wt * box.cell * acc;
        }
        if (std::abs(shell[b] - shell[c]) <= cfg.j_res) {
          for (std::size_t t = 0; t < B; ++t) {
            const std::complex<double> q0{re[c][0][t], -im[c][0][t]};
            const std::complex<double> q1{re[c][1][t], -im[c][1][t]};
            const std::complex<double> q2{re[c][2][t], -im[c][2][t]};
            c0[t] = box.chi2[t] * (Tb[0][t] * q0 + Tb[1][t] * q1 + Tb[2][t] * q2);
            c1[t] = box.chi2[t] * (Tb[3][t] * q0 + Tb[4][t] * q1 + Tb[5][t] * q2);
            c2[t] = box.chi2[t] * (Tb[6][t] * q0 + Tb[7][t] * q1 + Tb[8][t] * q2);
          }
          for (std::size_t a = 0; a < P; ++a) {
            if (std::abs(shell[a] - shell[b]) > cfg.j_res ||
                std::abs(shell[a] - shell[c]) > cfg.j_res)
              continue;
            std::complex<double> acc{0.0, 0.0};
            for (std::size_t t = 0; t < B; ++t) {
              acc += std::complex<double>{re[a][0][t], im[a][0][t]} * c0[t] +
                     std::complex<double>{re[a][1][t], im[a][1][t]} * c1[t] +
                     std::complex<double>{re[a][2][t], im[a][2][t]} * c2[t];
            }
            Z[vat(cellid[a], cellid[b], cellid[c])] += wt * box.cell * acc;
          }
        }
      }
    }
  }

  // classify every cell triple and fold into the class sums
  const double nonres_angle = cfg.nonres_angle_deg * kPi / 180.0;
  std::vector<TriadTerm> terms;
  for (int ca = 0; ca < ncells; ++ca)
    for (int cb = 0; cb < ncells; ++cb)
      for (int cc = 0; cc < ncells; ++cc) {
        const double v = V[vat(ca, cb, cc)];
        out.abs_mass += std::abs(v);
        TriadTerm t;
        t.shell = {ca / ncaps, cb / ncaps, cc / ncaps};
        t.cap = {ca % ncaps, cb % ncaps, cc % ncaps};
        t.contribution = v;
        const int nmin = std::min({t.shell[0], t.shell[1], t.shell[2]});
        const int nmax = std::max({t.shell[0], t.shell[1], t.shell[2]});
        double sep = 0.0;
        for (int i = 0; i < 3; ++i)
          for (int j = i + 1; j < 3; ++j)
            sep = std::max(sep, angle_projective(axes[t.cap[i]], axes[t.cap[j]]));
        bool tailed = false;
        for (int i = 0; i < 3; ++i) {
          const int cell = t.shell[i] * ncaps + t.cap[i];
          if (total_mass[cell] > 0.0 && interior[cell] / total_mass[cell] < 1.0 - cfg.tail_frac)
            tailed = true;
        }
        if (nmin <= nmax - cfg.j_low) {
          t.cls = TriadClass::Low;
          out.b_low += v;
        } else if (tailed) {
          t.cls = TriadClass::Tail;
          out.b_tail += v;
        } else if (sep > nonres_angle || nmax - nmin > cfg.j_res) {
          t.cls = TriadClass::Nonresonant;
          out.b_nonres += v;
        } else {
          t.cls = TriadClass::Resonant;
          out.b_res += v;
          t.pairing_phase = std::fmod(std::arg(Z[vat(ca, cb, cc)]) + 2.0 * kPi, kPi);
        }
        if (v != 0.0) terms.push_back(t);
      }

  out.listing_floor = cfg.listing_cutoff * out.abs_mass;
  for (const TriadTerm& t : terms)
    if (std::abs(t.contribution) >= out.listing_floor && out.listing_floor > 0.0)
      out.listed.push_back(t);
  std::sort(out.listed.begin(), out.listed.end(), [](const TriadTerm& l, const TriadTerm& r) {
    if (std::abs(l.contribution) != std::abs(r.contribution))
      return std::abs(l.contribution) > std::abs(r.contribution);
    if (l.shell != r.shell) return l.shell < r.shell;
    return l.cap < r.cap;
  });
  return out;
}

ActiveFrameResult active_frames(const TriadDecomposition& td, const FieldHistory& h,
                                const Packet& q, const LpConfig& cfg) {
  ActiveFrameResult out;
  const std::vector<Vec3> axes = icosahedral_axes();
  std::vector<const TriadTerm*> res;
  for (const TriadTerm& t : td.listed)
    if (t.cls == TriadClass::Resonant && t.contribution != 0.0) res.push_back(&t);
  if (res.empty()) {
    out.outcome = ActiveOutcome::EmptyActive;
    return out;
  }

  const Grid& g = h.grid;
  const std::vector<std::size_t> idx = cylinder_window(h, q);
  const std::vector<double> wts = cylinder_weights(h, q, idx);
  const Cutoff chi{q.rho};
  const WindowBox box = make_box(g, q.center, chi);
  const double width = cfg.cap_width_deg * kPi / 180.0;

  std::vector<bool> used(axes.size(), false);
  for (const TriadTerm* t : res) used[t->cap[1]] = true;

  // packet-averaged strain, restricted to each used cap
  std::vector<Sym3> avg(axes.size());
  Fft& fft = Fft::plan_for(g.n);
  for (std::size_t s = 0; s < idx.size(); ++s) {
    const double wt = wts[s];
    const SpecVec& uh = h.at(idx[s]).u_hat;
    std::array<SpecField, 6> strain_hat;
    for (int c = 0; c < 6; ++c) strain_hat[c].assign(g.spec_size(), {0.0, 0.0});
    static constexpr int pi_[6] = {0, 1, 2, 0, 0, 1};
    static constexpr int pj_[6] = {0, 1, 2, 1, 2, 2};
    spec_for_each(g, [&](std::size_t id, int mx, int my, int mz, int) {
      const Vec3 k = {g.k_min() * mx, g.k_min() * my, g.k_min() * mz};
      const std::complex<double> iu{0.0, 1.0};
      for (int c = 0; c < 6; ++c)
        strain_hat[c][id] = 0.5 * iu * (k[pi_[c]] * uh[pj_[c]][id] + k[pj_[c]] * uh[pi_[c]][id]);
    });
    for (std::size_t cap = 0; cap < axes.size(); ++cap) {
      if (!used[cap]) continue;
      std::array<SpecField, 6> masked = strain_hat;
      spec_for_each(g, [&](std::size_t id, int mx, int my, int mz, int) {
        if (mx == 0 && my == 0 && mz == 0) return;
        const Vec3 khat = normalized(Vec3{static_cast<double>(mx), static_cast<double>(my),
                                          static_cast<double>(mz)});
        const double w = cap_multiplier(axes, width, static_cast<int>(cap), khat);
        for (int c = 0; c < 6; ++c) masked[c][id] *= w;
      });
      for (int c = 0; c < 6; ++c) {
        RealField sr;
        fft.backward(masked[c], sr);
        double acc = 0.0;
        for (std::size_t t = 0; t < box.idx.size(); ++t) acc += box.chi2[t] * sr[box.idx[t]];
        avg[cap].v[c] += wt * acc * box.cell;
      }
    }
  }

  out.cap_dirs.assign(axes.size(), Vec3{0.0, 0.0, 1.0});
  for (std::size_t cap = 0; cap < axes.size(); ++cap) {
    if (!used[cap]) continue;
    const EigSym3 e = eig_sym3(avg[cap]);
    const Vec3 dir = std::abs(e.val[0]) > std::abs(e.val[2]) ? e.vec[0] : e.vec[2];
    out.cap_dirs[cap] = canonical_line(dir);
  }

  for (const TriadTerm* t : res) {
    FrameAtom a;
    a.label.dir = out.cap_dirs[t->cap[1]];
    a.label.window = t->cap[1];
    a.label.window_center = axes[t->cap[1]];
    a.label.phase = t->pairing_phase;
    a.label.parity = t->contribution >= 0.0 ? 1 : -1;
    a.weight = std::abs(t->contribution);
    out.nu.atoms.push_back(a);
  }
  out.nu.normalize();
  out.outcome = ActiveOutcome::Frames;
  return out;
}

}  // namespace packetscope
