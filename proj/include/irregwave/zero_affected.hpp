#pragma once

#include "coeffs.hpp"
#include "common.hpp"
#include "design.hpp"
#include "wavelet.hpp"

#include <Eigen/Dense>

namespace irregwave {

//! Zero-affected / zero-free index partition at one scaling level plus
//! the wavelet levels above it, and the ring set K* feeding the local
//! system's right-hand side.
struct IndexSets
{
  int level = 0;
  double k0 = 0.0; //!< 2^level x0
  std::vector<long long> K_phi_hit, K_phi_free;
  std::vector<double> k0_psi;                        //!< k0j per wavelet level
  std::vector<std::vector<long long>> K_psi_hit;     //!< per level j = level..j_hi
  std::vector<std::vector<long long>> K_psi_free;
  std::vector<long long> K_star;
};

namespace detail {

//! k in [0, 2^m) with lo < k0 - k < hi for some 2^m-periodic shift of k
inline bool in_window(long long k, double k0, int m, double lo, double hi, bool lo_open, bool hi_open)
{
  const double period = std::ldexp(1.0, m);
  for (int t = -1; t <= 1; ++t) {
    const double delta = k0 - (static_cast<double>(k) + t * period);
    const bool above = lo_open ? delta > lo : delta >= lo;
    const bool below = hi_open ? delta < hi : delta <= hi;
    if (above && below)
      return true;
  }
  return false;
}

} // namespace detail

//! Builds the partition from the strict support inequalities
//! L - 1 < k0 - k < U + 1, modulo the 2-adic wrap.
inline IndexSets build_index_sets(int m, int j_hi, double x0, const WaveletFamily& family)
{
  IndexSets sets;
  sets.level = m;
  sets.k0 = std::ldexp(x0, m);
  const long long two_m = 1LL << m;
  for (long long k = 0; k < two_m; ++k) {
    if (detail::in_window(k, sets.k0, m, family.L_phi - 1.0, family.U_phi + 1.0, true, true))
      sets.K_phi_hit.push_back(k);
    else
      sets.K_phi_free.push_back(k);
  }
  for (int j = m; j <= j_hi; ++j) {
    const double k0j = std::ldexp(x0, j);
    sets.k0_psi.push_back(k0j);
    std::vector<long long> hit, free;
    for (long long k = 0; k < (1LL << j); ++k) {
      if (detail::in_window(k, k0j, j, family.L_psi - 1.0, family.U_psi + 1.0, true, true))
        hit.push_back(k);
      else
        free.push_back(k);
    }
    sets.K_psi_hit.push_back(std::move(hit));
    sets.K_psi_free.push_back(std::move(free));
  }
  // ring set: 2L - U <= k0 - k < L  or  U < k0 - k <= 2U - L.  At the
  // lowest levels the wrapped ring can run onto the hit block; those
  // indices are already unknowns of the system, so they are dropped here.
  for (long long k = 0; k < two_m; ++k) {
    const bool in_ring =
      detail::in_window(k, sets.k0, m, 2.0 * family.L_phi - family.U_phi, family.L_phi, false, true) ||
      detail::in_window(k, sets.k0, m, family.U_phi, 2.0 * family.U_phi - family.L_phi, true, false);
    if (!in_ring)
      continue;
    if (std::find(sets.K_phi_hit.begin(), sets.K_phi_hit.end(), k) == sets.K_phi_hit.end())
      sets.K_star.push_back(k);
  }
  return sets;
}

//! The support-trimming offset delta_b of the indicator window
//! Omega_delta = [L_phi + delta_b, U_phi - delta_b]: zero for polynomial
//! zeros; for exponential zeros the smallest grid value below delta_0
//! at which phi is bounded away from zero at both trimmed endpoints.
inline double pick_delta_b(const PeriodizedBasis& basis, double b, double beta)
{
  if (b == 0.0)
    return 0.0;
  const auto& fam = basis.family();
  const double delta0 = 0.5 * std::pow(3.0, beta + 1.0) /
                        (2.0 * std::pow(3.0, beta + 1.0) +
                         std::pow(static_cast<double>(fam.U_phi + fam.L_phi), beta + 1.0));
  // coarse scan plus a refinement below delta_0 when the coarse grid is
  // entirely excluded
  std::vector<double> grid;
  for (int i = 1; i <= 9; ++i)
    grid.push_back(0.05 * i);
  for (int i = 1; i <= 9; ++i)
    grid.push_back(0.1 * i * delta0);
  std::sort(grid.begin(), grid.end());
  std::erase_if(grid, [&](double delta) { return !(delta > 0.0 && delta < 0.5 && delta < delta0); });
  if (grid.empty())
    throw config_error("pick_delta_b: no admissible trimming offset for this family");
  // Extremal-phase scaling functions are numerically flat at the right
  // support edge, so the nonzero requirement there is relative to the
  // best value attainable on the admissible grid.
  double right_max = 0.0;
  for (double delta : grid)
    right_max = std::max(right_max, std::abs(basis.phi_star(fam.U_phi - delta)));
  const double right_floor = std::max(1e-12, 1e-3 * right_max);
  for (double delta : grid) {
    if (std::abs(basis.phi_star(fam.L_phi + delta)) > 1e-3 &&
        std::abs(basis.phi_star(fam.U_phi - delta)) > right_floor)
      return delta;
  }
  throw config_error("pick_delta_b: no admissible trimming offset for this family");
}

//! Local linear system of the zero-affected block at one level.
struct LocalSystem
{
  int m = 0;
  IndexSets sets;
  Eigen::MatrixXd A; //!< over K_phi_hit x K_phi_hit
  Eigen::MatrixXd B; //!< rows K_phi_hit, cols K_star
  Eigen::VectorXd c_hat;
  Eigen::VectorXd v_hat;
  Eigen::VectorXd u_hat;
  double delta_b = 0.0;
  double cond = 0.0;
  bool neglected_eps = true; //!< the eps^{(m)} remainder is always dropped
};

namespace detail {

//! integral of phi_mk phi_ml g over the trimmed window of l, with the
//! quadrature cells split at the density zero
inline double system_entry(const PeriodizedBasis& basis,
                           const DesignDensity& d,
                           int m, long long k, long long l,
                           double delta_b, int qcells_log2)
{
  const auto& fam = basis.family();
  const double lo = fam.L_phi + delta_b;
  const double hi = fam.U_phi - delta_b;
  // integrate in t = 2^m x - l; x = (t + l) 2^-m; dx = 2^-m dt
  // phi_ml(x) = 2^{m/2} phi*(t); phi_mk(x) = 2^{m/2} phi*(t + l - k + i 2^m)
  // image of the zero in window coordinates, up to the periodic wrap
  double t0 = std::ldexp(d.x0(), m) - static_cast<double>(l);
  for (int s = -1; s <= 1; ++s) {
    const double cand = t0 + s * std::ldexp(1.0, m);
    if (cand > lo && cand < hi) {
      t0 = cand;
      break;
    }
  }
  auto integrand = [&](double t) {
    const double w_l = basis.phi_star(t);
    if (w_l == 0.0)
      return 0.0;
    double w_k = 0.0;
    const double period = std::ldexp(1.0, m);
    for (int s = -1; s <= 1; ++s)
      w_k += basis.phi_star(t + static_cast<double>(l - k) + s * period);
    if (w_k == 0.0)
      return 0.0;
    const double x = detail::mod1(std::ldexp(t + static_cast<double>(l), -m));
    return w_l * w_k * d.eval_g(x);
  };
  const std::size_t ncells = std::size_t{ 1 } << qcells_log2;
  double total = 0.0;
  // split at the zero so the kink (or essential singularity) of g sits
  // on a cell boundary
  if (t0 > lo && t0 < hi) {
    const auto nl = std::max<std::size_t>(8, static_cast<std::size_t>(
                      ncells * (t0 - lo) / (hi - lo)));
    const auto nr = std::max<std::size_t>(8, ncells - std::min(ncells, nl));
    total = integrate_cells(integrand, lo, t0, nl) + integrate_cells(integrand, t0, hi, nr);
  } else {
    total = integrate_cells(integrand, lo, hi, ncells);
  }
  return total; // the 2^{m/2} factors and the dx = 2^-m dt cancel
}

} // namespace detail

//! Quadrature assembly of A^{(m)} and B^{(m)}.  A must come out symmetric
//! positive definite; positive definiteness is verified by factorization.
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd>
assemble_system(const PeriodizedBasis& basis, const DesignDensity& d,
                const IndexSets& sets, double delta_b, int qcells_log2 = 14)
{
  const int m = sets.level;
  const auto& hit = sets.K_phi_hit;
  const auto& star = sets.K_star;
  Eigen::MatrixXd A(hit.size(), hit.size());
  for (std::size_t r = 0; r < hit.size(); ++r)
    for (std::size_t c = 0; c < hit.size(); ++c) {
      if (delta_b == 0.0 && c < r) {
        A(r, c) = A(c, r); // the untrimmed window makes A exactly symmetric
        continue;
      }
      A(r, c) = detail::system_entry(basis, d, m, hit[c], hit[r], delta_b, qcells_log2);
    }
  if (delta_b > 0.0)
    A = 0.5 * (A + A.transpose().eval());
  Eigen::MatrixXd B(hit.size(), star.size());
  for (std::size_t r = 0; r < hit.size(); ++r)
    for (std::size_t c = 0; c < star.size(); ++c)
      B(r, c) = detail::system_entry(basis, d, m, star[c], hit[r], delta_b, qcells_log2);

  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() != Eigen::Success)
    throw numeric_error("assemble_system: A is not positive definite (quadrature too coarse?)");
  return { A, B };
}

//! hat c_l = n^-1 sum_i y_i phi_ml(x_i) 1(2^m x_i - l in Omega_delta);
//! a plain average, finite at the zero because nothing divides by g.
inline Eigen::VectorXd estimate_rhs(const std::vector<double>& xs,
                                    const std::vector<double>& ys,
                                    const PeriodizedBasis& basis,
                                    const IndexSets& sets,
                                    double delta_b)
{
  const int m = sets.level;
  const auto& fam = basis.family();
  const double lo = fam.L_phi + delta_b;
  const double hi = fam.U_phi - delta_b;
  const double period = std::ldexp(1.0, m);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(sets.K_phi_hit.size()));
  const double scale = std::pow(2.0, 0.5 * m);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double xm = std::ldexp(detail::mod1(xs[i]), m);
    for (std::size_t r = 0; r < sets.K_phi_hit.size(); ++r) {
      const auto l = static_cast<double>(sets.K_phi_hit[r]);
      for (int s = -1; s <= 1; ++s) {
        const double t = xm - l + s * period;
        if (t >= lo && t <= hi) {
          const double w = basis.phi_star(t);
          if (w != 0.0)
            c(static_cast<Eigen::Index>(r)) += ys[i] * scale * w;
        }
      }
    }
  }
  c /= static_cast<double>(xs.size());
  return c;
}

//! Solves A u = c - B v by symmetric factorization, with a conditioning
//! report; no regularization is applied.
inline Eigen::VectorXd solve_local(const Eigen::MatrixXd& A,
                                   const Eigen::MatrixXd& B,
                                   const Eigen::VectorXd& c_hat,
                                   const Eigen::VectorXd& v_hat,
                                   double* cond_out = nullptr)
{
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() != Eigen::Success)
    throw numeric_error("solve_local: system matrix is not positive definite");
  Eigen::VectorXd rhs = c_hat;
  if (B.cols() > 0)
    rhs -= B * v_hat;
  const Eigen::VectorXd u = llt.solve(rhs);
  const double resid = (A * u - rhs).norm();
  if (resid > 1e-10 * std::max(1.0, rhs.norm()))
    throw numeric_error("solve_local: residual above tolerance");
  if (cond_out) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    *cond_out = (lo > 0.0) ? hi / lo : std::numeric_limits<double>::infinity();
  }
  return u;
}

//! The linear zero-affected estimator f0_m(x) = sum_{k in K_hit} u_k phi_mk(x).
class ZeroAffectedEstimate
{
public:
  ZeroAffectedEstimate() = default;
  ZeroAffectedEstimate(std::shared_ptr<const PeriodizedBasis> basis,
                       int m, std::vector<long long> ks, Eigen::VectorXd u)
    : basis_(std::move(basis))
    , m_(m)
    , ks_(std::move(ks))
    , u_(std::move(u))
  {
  }

  double operator()(double x) const
  {
    if (!basis_)
      return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < ks_.size(); ++i) {
      const double v = u_(static_cast<Eigen::Index>(i));
      if (v != 0.0)
        acc += v * basis_->eval_scaling(m_, ks_[i], x);
    }
    return acc;
  }

  int level() const { return m_; }
  const std::vector<long long>& indices() const { return ks_; }
  const Eigen::VectorXd& coefficients() const { return u_; }

private:
  std::shared_ptr<const PeriodizedBasis> basis_;
  int m_ = 0;
  std::vector<long long> ks_;
  Eigen::VectorXd u_;
};

} // namespace irregwave
