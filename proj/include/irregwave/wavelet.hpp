#pragma once

#include "common.hpp"

#include <complex>
#include <cstddef>
#include <memory>
#include <utility>

#include <Eigen/Dense>

namespace irregwave {

//! Compactly supported orthonormal wavelet family (Daubechies, extremal
//! phase).  `h` is the low-pass filter in the convention
//! phi(x) = sqrt(2) sum_k h_k phi(2x - k), sum_k h_k = sqrt(2).
struct WaveletFamily
{
  int N = 0;                       //!< number of vanishing moments
  std::vector<double> h;           //!< low-pass filter, length 2N
  int L_phi = 0, U_phi = 0;        //!< supp(phi*) = [L_phi, U_phi]
  int L_psi = 0, U_psi = 0;        //!< supp(psi*) = [L_psi, U_psi]

  int support_width_phi() const { return U_phi - L_phi; }
  int support_width_psi() const { return U_psi - L_psi; }
};

namespace detail {

//! Durand-Kerner root finder for a real polynomial given by ascending
//! coefficients.  Degrees here stay below 20 (N <= 10).
inline std::vector<std::complex<double>> poly_roots(const std::vector<double>& coef)
{
  using cplx = std::complex<long double>;
  const int deg = static_cast<int>(coef.size()) - 1;
  std::vector<cplx> c(coef.size());
  for (std::size_t i = 0; i < coef.size(); ++i)
    c[i] = cplx(static_cast<long double>(coef[i]), 0.0L);
  const cplx lead = c[deg];
  for (auto& v : c)
    v /= lead;

  auto eval = [&](cplx z) {
    cplx out = 0.0L;
    for (int i = deg; i >= 0; --i)
      out = out * z + c[i];
    return out;
  };

  std::vector<cplx> r(deg);
  cplx seed(0.4L, 0.9L);
  cplx p = 1.0L;
  for (int i = 0; i < deg; ++i) {
    p *= seed;
    r[i] = p;
  }
  for (int iter = 0; iter < 2000; ++iter) {
    long double shift = 0.0L;
    for (int i = 0; i < deg; ++i) {
      cplx denom = 1.0L;
      for (int j = 0; j < deg; ++j)
        if (j != i)
          denom *= (r[i] - r[j]);
      const cplx delta = eval(r[i]) / denom;
      r[i] -= delta;
      shift = std::max(shift, std::abs(delta));
    }
    if (shift < 1e-30L)
      break;
  }
  std::vector<std::complex<double>> out(deg);
  for (int i = 0; i < deg; ++i)
    out[i] = std::complex<double>(static_cast<double>(r[i].real()),
                                  static_cast<double>(r[i].imag()));
  return out;
}

inline std::vector<double> poly_mul(const std::vector<double>& a, const std::vector<double>& b)
{
  std::vector<double> out(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j)
      out[i + j] += a[i] * b[j];
  return out;
}

} // namespace detail

//! Constructs the Daubechies family with N vanishing moments by spectral
//! factorization of the Bezout polynomial, keeping the roots inside the
//! unit circle (extremal phase).  N = 1 is the Haar family.
inline WaveletFamily build_family(int N)
{
  if (N < 1 || N > 10)
    throw config_error("build_family: vanishing-moment count must be in [1, 10]");

  WaveletFamily fam;
  fam.N = N;
  fam.L_phi = 0;
  fam.U_phi = 2 * N - 1;
  fam.L_psi = 1 - N;
  fam.U_psi = N;

  if (N == 1) {
    const double r = 1.0 / std::sqrt(2.0);
    fam.h = { r, r };
    return fam;
  }

  // Bezout polynomial P(y) = sum_{k<N} C(N-1+k, k) y^k
  std::vector<double> P(N, 0.0);
  double binom = 1.0;
  for (int k = 0; k < N; ++k) {
    P[k] = binom;
    binom = binom * static_cast<double>(N + k) / static_cast<double>(k + 1);
  }

  // L(z) = P((2 - z - 1/z)/4) as a Laurent series, stored with offset N-1,
  // then promoted to the ordinary polynomial A(z) = z^{N-1} L(z).
  const int off = N - 1;
  std::vector<double> A(2 * N - 1, 0.0);
  A[off] = P[N - 1];
  const std::vector<double> B = { -0.25, 0.5, -0.25 }; // (2 - z - 1/z)/4, offset 1
  std::vector<double> acc = A;
  for (int k = N - 2; k >= 0; --k) {
    // acc <- acc * B (Laurent convolution, same offset bookkeeping)
    std::vector<double> next(2 * N - 1, 0.0);
    for (int i = 0; i < 2 * N - 1; ++i) {
      if (acc[i] == 0.0)
        continue;
      for (int j = -1; j <= 1; ++j) {
        const int t = i + j;
        if (t >= 0 && t < 2 * N - 1)
          next[t] += acc[i] * B[j + 1];
      }
    }
    next[off] += P[k];
    acc = std::move(next);
  }
  A = std::move(acc);

  auto roots = detail::poly_roots(A);

  // keep the N-1 roots inside the unit circle, pairing conjugates
  std::vector<std::complex<double>> inside;
  for (const auto& z : roots)
    if (std::abs(z) < 1.0)
      inside.push_back(z);
  if (static_cast<int>(inside.size()) != N - 1)
    throw numeric_error("build_family: spectral factorization failed");

  std::vector<double> b = { 1.0 };
  std::vector<bool> used(inside.size(), false);
  for (std::size_t i = 0; i < inside.size(); ++i) {
    if (used[i])
      continue;
    const auto z = inside[i];
    if (std::abs(z.imag()) < 1e-10) {
      b = detail::poly_mul(b, { -z.real(), 1.0 });
      used[i] = true;
    } else {
      // find the conjugate partner
      std::size_t match = inside.size();
      double best = 1e300;
      for (std::size_t j = i + 1; j < inside.size(); ++j) {
        if (used[j])
          continue;
        const double d = std::abs(inside[j] - std::conj(z));
        if (d < best) {
          best = d;
          match = j;
        }
      }
      if (match == inside.size() || best > 1e-6)
        throw numeric_error("build_family: unpaired complex root");
      b = detail::poly_mul(b, { std::norm(z), -2.0 * z.real(), 1.0 });
      used[i] = used[match] = true;
    }
  }

  std::vector<double> h = b;
  for (int k = 0; k < N; ++k)
    h = detail::poly_mul(h, { 1.0, 1.0 });
  double s = 0.0;
  for (double v : h)
    s += v;
  const double scale = std::sqrt(2.0) / s;
  for (double& v : h)
    v *= scale;
  if (std::abs(h.front()) < std::abs(h.back()))
    std::reverse(h.begin(), h.end());

  // filter orthonormality is the ground truth for the factorization
  for (int m = 0; m < N; ++m) {
    double dot = 0.0;
    for (int k = 0; k + 2 * m < 2 * N; ++k)
      dot += h[k] * h[k + 2 * m];
    const double want = (m == 0) ? 1.0 : 0.0;
    if (std::abs(dot - want) > 1e-10)
      throw numeric_error("build_family: filter fails orthonormality check");
  }

  fam.h = std::move(h);
  return fam;
}

//! Pointwise tables of phi* and psi* on the dyadic grid of step 2^-P.
//! Values are stored on the half-open supports [L, U), which makes
//! 2^-P * sum(phi_vals) an exact Riemann sum of integral(phi*) = 1.
struct DyadicTable
{
  int P = 0;
  std::vector<double> phi_vals; //!< phi*(L_phi + i 2^-P), i = 0 .. (U-L) 2^P - 1
  std::vector<double> psi_vals; //!< psi*(L_psi + i 2^-P)
  double phi_sup = 0.0;         //!< max |phi*|
  double psi_sup = 0.0;         //!< max |psi*|
};

namespace detail {

//! phi at the integers of its support, from the eigenvector of the
//! downsampled filter matrix (eigenvalue 1), normalized to sum 1.
inline std::vector<double> scaling_at_integers(const WaveletFamily& fam)
{
  const int W = fam.support_width_phi(); // 2N-1
  std::vector<double> vals(W + 1, 0.0);  // phi(0..2N-1)
  if (fam.N == 1) {
    vals[0] = 1.0;
    return vals;
  }
  const int dim = W - 1; // interior integers 1 .. 2N-2
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(dim, dim);
  for (int k = 1; k <= dim; ++k)
    for (int l = 1; l <= dim; ++l) {
      const int idx = 2 * k - l;
      if (idx >= 0 && idx < 2 * fam.N)
        M(k - 1, l - 1) = std::sqrt(2.0) * fam.h[idx];
    }
  // solve (M - I)v = 0 with the normalization row sum(v) = 1
  Eigen::MatrixXd S = M - Eigen::MatrixXd::Identity(dim, dim);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dim);
  S.row(dim - 1).setOnes();
  rhs(dim - 1) = 1.0;
  Eigen::VectorXd v = S.fullPivLu().solve(rhs);
  if (!v.allFinite())
    throw numeric_error("tabulate: cascade eigenproblem failed");
  // the refinement matrix of an orthonormal filter has eigenvalue 1 exactly
  const double resid = (M * v - v).lpNorm<Eigen::Infinity>();
  if (resid > 1e-8)
    throw numeric_error("tabulate: filter has no refinable fixed point");
  for (int k = 1; k <= dim; ++k)
    vals[k] = v(k - 1);
  return vals;
}

} // namespace detail

//! Tabulates phi* and psi* at spacing 2^-P via the cascade refinement;
//! the stored values are exact fixed points of the two-scale relation.
inline DyadicTable tabulate(const WaveletFamily& family, int P)
{
  if (P < 8 || P > 16)
    throw config_error("tabulate: grid exponent must be in [8, 16]");

  DyadicTable tab;
  tab.P = P;
  const int N = family.N;
  const int Wphi = family.support_width_phi();
  const std::size_t step = std::size_t{ 1 } << P;

  if (N == 1) {
    tab.phi_vals.assign(step, 1.0);
    tab.psi_vals.assign(step, 1.0);
    for (std::size_t i = step / 2; i < step; ++i)
      tab.psi_vals[i] = -1.0;
    tab.phi_sup = 1.0;
    tab.psi_sup = 1.0;
    return tab;
  }

  // refine level by level: values at odd multiples of 2^-q come from the
  // two-scale relation applied to the coarser grid
  std::vector<double> ints = detail::scaling_at_integers(family);
  std::vector<std::vector<double>> grids(static_cast<std::size_t>(P) + 1);
  grids[0] = ints; // spacing 1, indices 0..Wphi
  for (int q = 1; q <= P; ++q) {
    const std::size_t n = (static_cast<std::size_t>(Wphi) << q) + 1;
    std::vector<double> cur(n, 0.0);
    const auto& prev = grids[q - 1];
    for (std::size_t i = 0; i < n; ++i) {
      if (i % 2 == 0) {
        cur[i] = prev[i / 2];
        continue;
      }
      // t = i 2^-q odd multiple; phi(t) = sqrt(2) sum_l h_l phi(2t - l)
      double acc = 0.0;
      for (int l = 0; l < 2 * N; ++l) {
        // 2t - l = (i - l 2^{q-1}) 2^-(q-1); index on the previous grid
        const long long pidx = static_cast<long long>(i) - (static_cast<long long>(l) << (q - 1));
        if (pidx >= 0 && pidx < static_cast<long long>(prev.size()))
          acc += family.h[l] * prev[static_cast<std::size_t>(pidx)];
      }
      cur[i] = std::sqrt(2.0) * acc;
    }
    grids[q] = std::move(cur);
  }
  const auto& full = grids[P];
  tab.phi_vals.assign(full.begin(), full.end() - 1); // drop the zero at U_phi

  // psi(t) = sqrt(2) sum_{k=2-2N}^{1} (-1)^k h_{1-k} phi(2t - k)
  const int Wpsi = family.support_width_psi();
  const std::size_t npsi = static_cast<std::size_t>(Wpsi) << P;
  tab.psi_vals.assign(npsi, 0.0);
  for (std::size_t i = 0; i < npsi; ++i) {
    // t = L_psi + i 2^-P; 2t - k = (2 L_psi - k) + 2 i 2^-P
    double acc = 0.0;
    for (int k = 2 - 2 * N; k <= 1; ++k) {
      const long long base = static_cast<long long>(2 * family.L_psi - k) << P;
      const long long idx = base + 2 * static_cast<long long>(i); // index of 2t-k on phi grid from L_phi=0
      if (idx >= 0 && idx < static_cast<long long>(full.size())) {
        const double sign = (k % 2 == 0) ? 1.0 : -1.0;
        acc += sign * family.h[1 - k] * full[static_cast<std::size_t>(idx)];
      }
    }
    tab.psi_vals[i] = std::sqrt(2.0) * acc;
  }

  for (double v : tab.phi_vals)
    tab.phi_sup = std::max(tab.phi_sup, std::abs(v));
  for (double v : tab.psi_vals)
    tab.psi_sup = std::max(tab.psi_sup, std::abs(v));
  if (!(tab.phi_sup > 0.0) || !std::isfinite(tab.phi_sup))
    throw numeric_error("tabulate: cascade produced a degenerate table");
  return tab;
}

//! Periodized wavelet basis {phi_mk, psi_jk} on [0, 1].  The minimal
//! level m1 is the smallest one at which periodic and non-periodic
//! supports coincide (2^m1 > support width).
class PeriodizedBasis
{
public:
  PeriodizedBasis(WaveletFamily family, DyadicTable table)
    : family_(std::move(family))
    , table_(std::move(table))
  {
    const int w = std::max(family_.support_width_phi(), family_.support_width_psi());
    // smallest level whose period covers the support (Haar sits exactly
    // on one period, so the non-strict comparison is the right boundary)
    m1_ = 0;
    while ((1 << m1_) < w)
      ++m1_;
  }

  const WaveletFamily& family() const { return family_; }
  const DyadicTable& table() const { return table_; }
  int m1() const { return m1_; }

  //! phi* at an arbitrary point, by linear interpolation of the table
  double phi_star(double t) const
  {
    if (family_.N == 1)
      return (t >= 0.0 && t < 1.0) ? 1.0 : 0.0;
    return interp(table_.phi_vals, family_.L_phi, family_.U_phi, t);
  }

  //! psi* at an arbitrary point
  double psi_star(double t) const
  {
    if (family_.N == 1) {
      if (t >= 0.0 && t < 0.5)
        return 1.0;
      if (t >= 0.5 && t < 1.0)
        return -1.0;
      return 0.0;
    }
    return interp(table_.psi_vals, family_.L_psi, family_.U_psi, t);
  }

  //! phi_mk(x) = sum_i 2^{m/2} phi*(2^m (x+i) - k)
  double eval_scaling(int m, long long k, double x) const
  {
    check_level(m);
    return eval_periodized(true, family_.L_phi, family_.U_phi, m, k, x);
  }

  //! psi_jk(x)
  double eval_wavelet(int j, long long k, double x) const
  {
    check_level(j);
    return eval_periodized(false, family_.L_psi, family_.U_psi, j, k, x);
  }

private:
  void check_level(int m) const
  {
    if (m < m1_)
      throw config_error("level below m1: periodized and non-periodized supports differ");
  }

  double interp(const std::vector<double>& vals, int L, int U, double t) const
  {
    if (t <= L || t >= U)
      return 0.0;
    const double pos = std::ldexp(t - L, table_.P);
    const auto i0 = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(i0);
    const double v0 = vals[i0];
    const double v1 = (i0 + 1 < vals.size()) ? vals[i0 + 1] : 0.0;
    return v0 + frac * (v1 - v0);
  }

  double eval_periodized(bool scaling, int L, int U, int m, long long k, double x) const
  {
    const long long two_m = 1LL << m;
    k = ((k % two_m) + two_m) % two_m;
    x = detail::mod1(x);
    // need L < 2^m (x + i) - k < U
    const double base = std::ldexp(x, m) - static_cast<double>(k);
    const double lo = (static_cast<double>(L) - base) / static_cast<double>(two_m);
    const double hi = (static_cast<double>(U) - base) / static_cast<double>(two_m);
    const auto i_lo = static_cast<long long>(std::ceil(lo - 1e-12));
    const auto i_hi = static_cast<long long>(std::floor(hi + 1e-12));
    double acc = 0.0;
    for (long long i = i_lo; i <= i_hi; ++i) {
      const double t = base + static_cast<double>(i) * static_cast<double>(two_m);
      acc += scaling ? phi_star(t) : psi_star(t);
    }
    return std::sqrt(static_cast<double>(two_m)) * acc;
  }

  WaveletFamily family_;
  DyadicTable table_;
  int m1_ = 0;
};

//! Coefficients of f in the periodized basis: 2^m scaling coefficients
//! at the coarse level plus wavelet levels j = m .. J-1.
struct CoefficientTree
{
  int m = 0;
  int J = 0;
  std::vector<double> a;              //!< scaling coefficients, size 2^m
  std::vector<std::vector<double>> b; //!< b[j - m][k], size 2^j per level

  double energy() const
  {
    double e = 0.0;
    for (double v : a)
      e += v * v;
    for (const auto& lev : b)
      for (double v : lev)
        e += v * v;
    return e;
  }
};

namespace detail {

//! integral of f * (basis function at level m, shift k) by composite
//! trapezoid with nodes aligned to the dyadic breakpoints of the table
template<typename F>
double basis_inner_product(const PeriodizedBasis& basis,
                           const F& f,
                           bool scaling, int m, long long k, int grid_Q)
{
  const auto& fam = basis.family();
  const int L = scaling ? fam.L_phi : fam.L_psi;
  const int U = scaling ? fam.U_phi : fam.U_psi;
  // cells per unit of t: refine past 2^{Q-m} but stay within the table grid
  int q = std::clamp(grid_Q - m + 3, 6, basis.table().P);
  const std::size_t ncells = static_cast<std::size_t>(U - L) << q;
  const double scale = std::pow(2.0, -0.5 * m);
  auto integrand = [&](double t) {
    const double w = scaling ? basis.phi_star(t) : basis.psi_star(t);
    if (w == 0.0)
      return 0.0;
    const double x = detail::mod1((t + static_cast<double>(k)) * std::ldexp(1.0, -m));
    return w * f(x);
  };
  return scale * integrate_cells(integrand, L, U, ncells);
}

} // namespace detail

//! Projects f onto the basis: a_mk = integral f phi_mk, b_jk = integral f psi_jk
//! for j = m .. J-1.  Quadrature nodes refine max(2^J, 2^P).
template<typename F>
CoefficientTree project(const F& f, const PeriodizedBasis& basis, int m, int J)
{
  if (m < basis.m1() || m >= J)
    throw config_error("project: need m1 <= m < J");
  const int Q = std::max(J, basis.table().P);
  CoefficientTree tree;
  tree.m = m;
  tree.J = J;
  tree.a.resize(std::size_t{ 1 } << m);
  for (long long k = 0; k < (1LL << m); ++k)
    tree.a[static_cast<std::size_t>(k)] =
      detail::basis_inner_product(basis, f, true, m, k, Q);
  tree.b.resize(static_cast<std::size_t>(J - m));
  for (int j = m; j < J; ++j) {
    auto& lev = tree.b[static_cast<std::size_t>(j - m)];
    lev.resize(std::size_t{ 1 } << j);
    for (long long k = 0; k < (1LL << j); ++k)
      lev[static_cast<std::size_t>(k)] =
        detail::basis_inner_product(basis, f, false, j, k, Q);
  }
  return tree;
}

//! Pointwise synthesis of a coefficient tree.
inline double reconstruct(const CoefficientTree& tree, const PeriodizedBasis& basis, double x)
{
  double acc = 0.0;
  const auto& fam = basis.family();
  x = detail::mod1(x);
  {
    const int m = tree.m;
    const double xm = std::ldexp(x, m);
    // k with L_phi < 2^m x - k + i 2^m < U_phi for some shift i
    const auto k_lo = static_cast<long long>(std::ceil(xm - fam.U_phi));
    const auto k_hi = static_cast<long long>(std::floor(xm - fam.L_phi));
    for (long long k = k_lo; k <= k_hi; ++k) {
      const long long two_m = 1LL << m;
      const long long kk = ((k % two_m) + two_m) % two_m;
      const double v = tree.a[static_cast<std::size_t>(kk)];
      if (v != 0.0)
        acc += v * basis.eval_scaling(m, kk, x);
    }
  }
  for (int j = tree.m; j < tree.J; ++j) {
    const auto& lev = tree.b[static_cast<std::size_t>(j - tree.m)];
    const double xj = std::ldexp(x, j);
    const auto k_lo = static_cast<long long>(std::ceil(xj - fam.U_psi));
    const auto k_hi = static_cast<long long>(std::floor(xj - fam.L_psi));
    for (long long k = k_lo; k <= k_hi; ++k) {
      const long long two_j = 1LL << j;
      const long long kk = ((k % two_j) + two_j) % two_j;
      const double v = lev[static_cast<std::size_t>(kk)];
      if (v != 0.0)
        acc += v * basis.eval_wavelet(j, kk, x);
    }
  }
  return acc;
}

} // namespace irregwave
