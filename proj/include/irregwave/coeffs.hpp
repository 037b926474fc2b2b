#pragma once

#include "common.hpp"
#include "design.hpp"
#include "wavelet.hpp"

namespace irregwave {

//! Circular distance |k - k0| on the level-j index ring of size 2^j.
//! k0 is real (2^j x0 is generally irrational), so the result is real.
inline double ring_distance(double k, double k0, int j)
{
  const double period = std::ldexp(1.0, j);
  double d = std::fmod(std::abs(k - k0), period);
  return std::min(d, period - d);
}

//! Coarse and finest resolution levels (m1, J) for a sample of size n.
//! 2^J tracks (n / ln n)^{1/(alpha+1)} for polynomial zeros and
//! (ln n)^{2/beta} for exponential ones; J is floored.
inline std::pair<int, int> levels(double n, const WaveletFamily& family,
                                  double alpha, double b, double beta)
{
  if (n < 3.0)
    throw config_error("levels: need n >= 3");
  const int w = std::max(family.support_width_phi(), family.support_width_psi());
  int m1 = 0;
  while ((1 << m1) < w)
    ++m1;
  const double ln_n = std::log(n);
  double target = 0.0;
  if (b == 0.0) {
    if (alpha <= 0.0)
      throw config_error("levels: polynomial order must be positive when b = 0");
    target = std::pow(n / ln_n, 1.0 / (alpha + 1.0));
  } else {
    target = std::pow(ln_n, 2.0 / beta);
  }
  const int J = static_cast<int>(std::floor(std::log2(target)));
  if (J <= m1)
    throw config_error("levels: sample too small for the two-stage split (J <= m1)");
  return { m1, J };
}

//! Raw empirical coefficients of the zero-free part, with the per-level
//! offsets k0j = 2^j x0 and the surviving index lists.
struct EmpiricalTree
{
  int m = 0;
  int J = 0;
  std::size_t n = 0;
  double k0m = 0.0;                        //!< 2^m x0
  std::vector<long long> a_idx;            //!< zero-free scaling indices
  std::vector<double> a_hat;               //!< matching estimates
  std::vector<double> k0;                  //!< k0j per level j = m..J-1
  std::vector<std::vector<long long>> b_idx; //!< zero-free wavelet indices per level
  std::vector<std::vector<double>> b_tilde;  //!< raw estimates, same layout
};

//! Hard-threshold rule for the wavelet coefficients.
struct ThresholdRule
{
  enum class Kind
  {
    polynomial,       //!< b = 0, alpha >= 1 (two-stage regime)
    exponential_band, //!< b > 0: keep only |k - k0j| > 2^{j-m}
    integrable        //!< b = 0, 0 < alpha < 1 (single-stage regime)
  };
  Kind kind = Kind::polynomial;
  double d = 1.0;        //!< threshold constant, > 0
  double n = 0.0;        //!< sample size
  double alpha = 1.0;
  double sigma = 1.0;    //!< noise level (1 in the canonical model)
  int m = 0;             //!< band reference level (exponential kind only)

  //! universal noise scale sqrt(ln n / n)
  double rho_n() const { return std::sqrt(std::log(n) / n); }
};

//! Applies the hard threshold: returns b_tilde or exactly 0.
inline double apply_threshold(const ThresholdRule& rule, double b_tilde,
                              int j, double dist)
{
  if (rule.kind == ThresholdRule::Kind::exponential_band)
    return dist > std::ldexp(1.0, j - rule.m) ? b_tilde : 0.0;
  // polynomial / integrable: keep iff b^2 > d^2 sigma^2 n^-1 ln n 2^{j alpha} dist^-alpha.
  // Zero-free columns always satisfy dist >= 1; the integrable branch also
  // thresholds the columns containing x0, whose variance scales like the
  // dist = 1 envelope, hence the floor.
  const double dist_eff = std::max(dist, 1.0);
  const double threshold2 = detail::sq(rule.d * rule.sigma) * std::log(rule.n) / rule.n *
                            std::pow(2.0, j * rule.alpha) * std::pow(dist_eff, -rule.alpha);
  return (b_tilde * b_tilde > threshold2) ? b_tilde : 0.0;
}

inline double apply_threshold(const ThresholdRule& rule, double b_tilde,
                              int j, long long k, double k0j)
{
  return apply_threshold(rule, b_tilde, j, ring_distance(static_cast<double>(k), k0j, j));
}

namespace detail {

//! shared core of the zero-free coefficient estimators
template<bool Scaling>
double weighted_coeff_sum(const std::vector<double>& xs,
                          const std::vector<double>& ys,
                          const DesignDensity& d,
                          const PeriodizedBasis& basis,
                          int j, long long k)
{
  double acc = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double w = Scaling ? basis.eval_scaling(j, k, xs[i]) : basis.eval_wavelet(j, k, xs[i]);
    if (w == 0.0)
      continue;
    const double g = d.eval_g(xs[i]);
    if (g <= 0.0)
      throw numeric_error("coefficient estimate: design point sits on the density zero");
    acc += w * ys[i] / g;
  }
  return acc / static_cast<double>(xs.size());
}

} // namespace detail

//! hat a_mk = n^-1 sum_i phi_mk(x_i) y_i / g(x_i), k zero-free.
inline double estimate_scaling_coeff(const std::vector<double>& xs,
                                     const std::vector<double>& ys,
                                     const DesignDensity& d,
                                     const PeriodizedBasis& basis,
                                     int m, long long k,
                                     bool zero_free = true)
{
  if (!zero_free)
    throw config_error("estimate_scaling_coeff: zero-affected index, use the local system");
  return detail::weighted_coeff_sum<true>(xs, ys, d, basis, m, k);
}

//! tilde b_jk, same form with psi_jk.
inline double estimate_wavelet_coeff(const std::vector<double>& xs,
                                     const std::vector<double>& ys,
                                     const DesignDensity& d,
                                     const PeriodizedBasis& basis,
                                     int j, long long k,
                                     bool zero_free = true)
{
  if (!zero_free)
    throw config_error("estimate_wavelet_coeff: zero-affected index, use the local system");
  return detail::weighted_coeff_sum<false>(xs, ys, d, basis, j, k);
}

namespace detail {

//! Estimates all requested coefficients of one level in a single sweep
//! over the sample (each point touches at most support-width indices).
template<bool Scaling>
std::vector<double> estimate_level(const std::vector<double>& xs,
                                   const std::vector<double>& ys,
                                   const DesignDensity& d,
                                   const PeriodizedBasis& basis,
                                   int j, const std::vector<long long>& ks)
{
  const long long two_j = 1LL << j;
  std::vector<long long> slot(static_cast<std::size_t>(two_j), -1);
  for (std::size_t s = 0; s < ks.size(); ++s)
    slot[static_cast<std::size_t>(((ks[s] % two_j) + two_j) % two_j)] = static_cast<long long>(s);
  const auto& fam = basis.family();
  const int L = Scaling ? fam.L_phi : fam.L_psi;
  const int U = Scaling ? fam.U_phi : fam.U_psi;
  std::vector<double> acc(ks.size(), 0.0);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double x = xs[i];
    const double xj = std::ldexp(detail::mod1(x), j);
    const auto k_lo = static_cast<long long>(std::ceil(xj - U));
    const auto k_hi = static_cast<long long>(std::floor(xj - L));
    double g = -1.0;
    for (long long k = k_lo; k <= k_hi; ++k) {
      const long long kk = ((k % two_j) + two_j) % two_j;
      const long long s = slot[static_cast<std::size_t>(kk)];
      if (s < 0)
        continue;
      const double w = Scaling ? basis.eval_scaling(j, kk, x) : basis.eval_wavelet(j, kk, x);
      if (w == 0.0)
        continue;
      if (g < 0.0) {
        g = d.eval_g(x);
        if (g <= 0.0)
          throw numeric_error("coefficient estimate: design point sits on the density zero");
      }
      acc[static_cast<std::size_t>(s)] += w * ys[i] / g;
    }
  }
  for (auto& v : acc)
    v /= static_cast<double>(xs.size());
  return acc;
}

} // namespace detail

} // namespace irregwave
