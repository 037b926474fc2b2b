#pragma once

#include "common.hpp"
#include "wavelet.hpp"

#include <limits>
#include <optional>

#include <Eigen/Dense>

namespace irregwave {

//! Design density with a single well-separated zero:
//!   g(x) = norm * |x - x0|^alpha * exp(-b |x - x0|^-beta)  on [0, 1],
//! normalized to integrate to one.  alpha = 0 with b = 0 gives the
//! uniform density (no zero), kept for tests and the no-zero branch of
//! the zero fitter.
class DesignDensity
{
public:
  DesignDensity(double x0, double alpha, double b = 0.0, double beta = 1.0)
    : x0_(x0)
    , alpha_(alpha)
    , b_(b)
    , beta_(beta)
  {
    check_params();
    normalize();
  }

  //! user-supplied density shape (not necessarily normalized) with
  //! declared zero parameters; the CDF is cached by quadrature
  DesignDensity(std::function<double(double)> g, double x0, double alpha,
                double b = 0.0, double beta = 1.0)
    : x0_(x0)
    , alpha_(alpha)
    , b_(b)
    , beta_(beta)
    , user_g_(std::move(g))
  {
    check_params();
    normalize();
    // limit constant and envelope from probe points
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (int i = 1; i < 1000; ++i) {
      const double x = i / 1000.0;
      const double r = std::abs(x - x0_);
      if (r < 1e-6)
        continue;
      double env = std::pow(r, alpha_);
      if (b_ > 0.0)
        env *= std::exp(-b_ * std::pow(r, -beta_));
      const double ratio = eval_g(x) / env;
      lo = std::min(lo, ratio);
      hi = std::max(hi, ratio);
    }
    for (double r : { 1e-2, 1e-3, 1e-4 }) {
      double acc = 0.0;
      int cnt = 0;
      for (double s : { -1.0, 1.0 }) {
        const double x = x0_ + s * r;
        if (x <= 0.0 || x >= 1.0)
          continue;
        double env = std::pow(r, alpha_);
        if (b_ > 0.0)
          env *= std::exp(-b_ * std::pow(r, -beta_));
        acc += eval_g(x) / env;
        ++cnt;
      }
      if (cnt > 0)
        cg_user_ = acc / cnt;
    }
    // shade the probed extremes so the envelope stays two-sided strict
    cg1_user_ = 0.999 * std::min(lo, cg_user_);
    cg2_user_ = 1.001 * std::max(hi, cg_user_);
  }

  double x0() const { return x0_; }
  double alpha() const { return alpha_; }
  double b() const { return b_; }
  double beta() const { return beta_; }
  //! limit constant of the zero: lim g(x0+x) |x|^-alpha exp(b |x|^-beta)
  double cg() const { return user_g_ ? cg_user_ : norm_; }
  double cg1() const { return user_g_ ? cg1_user_ : norm_; }
  double cg2() const { return user_g_ ? cg2_user_ : norm_; }
  bool has_zero() const { return alpha_ > 0.0 || b_ > 0.0; }
  //! true when 1/g is integrable (the single-stage regime)
  bool inverse_integrable() const { return b_ == 0.0 && alpha_ < 1.0; }

  double eval_g(double x) const
  {
    if (x < 0.0 || x > 1.0)
      return 0.0;
    if (user_g_)
      return norm_ * user_g_(x);
    return norm_ * shape(std::abs(x - x0_));
  }

  //! surrogate CDF; exact at 0, x0 and 1
  double eval_G(double x) const
  {
    if (x <= 0.0)
      return 0.0;
    if (x >= 1.0)
      return 1.0;
    if (b_ == 0.0 && !user_g_) {
      const double p = alpha_ + 1.0;
      const double G0 = norm_ * std::pow(x0_, p) / p;
      if (x < x0_)
        return G0 - norm_ * std::pow(x0_ - x, p) / p;
      return G0 + norm_ * std::pow(x - x0_, p) / p;
    }
    return hermite_G(x);
  }

  //! right inverse of eval_G on [0, 1]
  double invert_G(double u) const
  {
    if (u < 0.0 || u > 1.0)
      throw config_error("invert_G: u must lie in [0, 1]");
    if (u == 0.0)
      return 0.0;
    if (u == 1.0)
      return 1.0;
    if (b_ == 0.0 && !user_g_) {
      const double p = alpha_ + 1.0;
      const double G0 = norm_ * std::pow(x0_, p) / p;
      if (u < G0)
        return x0_ - std::pow((G0 - u) * p / norm_, 1.0 / p);
      return x0_ + std::pow((u - G0) * p / norm_, 1.0 / p);
    }
    // locate the table cell, then bisect the Hermite interpolant (the
    // same polynomial eval_G reads, so the round trip is consistent)
    const auto it = std::upper_bound(cdf_tab_.begin(), cdf_tab_.end(), u,
                                     [](double v, const CdfNode& node) { return v < node.G; });
    if (it == cdf_tab_.begin())
      return cdf_tab_.front().x;
    if (it == cdf_tab_.end())
      return 1.0;
    const auto b = it;
    const auto a = std::prev(it);
    double lo = a->x, hi = b->x;
    for (int k = 0; k < 60 && hi - lo > 1e-15; ++k) {
      const double mid = 0.5 * (lo + hi);
      if (hermite_cell(*a, *b, mid) < u)
        lo = mid;
      else
        hi = mid;
    }
    return 0.5 * (lo + hi);
  }

private:
  double shape(double r) const
  {
    if (alpha_ == 0.0 && b_ == 0.0)
      return 1.0;
    if (r <= 0.0)
      return 0.0;
    double v = std::pow(r, alpha_);
    if (b_ > 0.0)
      v *= std::exp(-b_ * std::pow(r, -beta_));
    return v;
  }

  struct CdfNode
  {
    double x = 0.0;
    double G = 0.0;
    double g = 0.0;
  };

  //! cubic Hermite interpolation of G on one cell (exact derivatives g)
  static double hermite_cell(const CdfNode& a, const CdfNode& b, double x)
  {
    const double h = b.x - a.x;
    if (h <= 0.0)
      return a.G;
    const double t = (x - a.x) / h;
    const double t2 = t * t, t3 = t2 * t;
    return (2.0 * t3 - 3.0 * t2 + 1.0) * a.G + (t3 - 2.0 * t2 + t) * h * a.g +
           (-2.0 * t3 + 3.0 * t2) * b.G + (t3 - t2) * h * b.g;
  }

  double hermite_G(double x) const
  {
    const auto it = std::upper_bound(cdf_tab_.begin(), cdf_tab_.end(), x,
                                     [](double v, const CdfNode& node) { return v < node.x; });
    if (it == cdf_tab_.begin())
      return 0.0;
    if (it == cdf_tab_.end())
      return 1.0;
    return hermite_cell(*std::prev(it), *it, x);
  }

  void check_params() const
  {
    if (x0_ < 0.0 || x0_ > 1.0)
      throw config_error("DesignDensity: zero location must lie in [0, 1]");
    if (b_ < 0.0)
      throw config_error("DesignDensity: exponential coefficient must be >= 0");
    if (b_ == 0.0 && alpha_ < 0.0)
      throw config_error("DesignDensity: polynomial order must be positive when b = 0");
    if (b_ > 0.0 && beta_ <= 0.0)
      throw config_error("DesignDensity: exponential order must be positive when b > 0");
  }

  void normalize()
  {
    norm_ = 1.0;
    if (b_ == 0.0 && !user_g_) {
      const double p = alpha_ + 1.0;
      const double mass = (std::pow(x0_, p) + std::pow(1.0 - x0_, p)) / p;
      norm_ = 1.0 / mass;
      return;
    }
    // cached quadrature table, geometrically refined toward the zero where
    // g collapses; G values at nodes come from adaptive Simpson per cell
    std::vector<double> nodes;
    const int uniform = 4096;
    for (int i = 0; i <= uniform; ++i)
      nodes.push_back(static_cast<double>(i) / uniform);
    for (double r = std::max(x0_, 1.0 - x0_); r > 1e-9; r *= 0.7) {
      if (x0_ - r > 0.0)
        nodes.push_back(x0_ - r);
      if (x0_ + r < 1.0)
        nodes.push_back(x0_ + r);
    }
    nodes.push_back(x0_);
    std::sort(nodes.begin(), nodes.end());
    nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());

    auto raw_g = [&](double x) { return user_g_ ? user_g_(x) : shape(std::abs(x - x0_)); };
    cdf_tab_.clear();
    cdf_tab_.reserve(nodes.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (i > 0)
        acc += detail::adaptive_simpson(raw_g, nodes[i - 1], nodes[i], 1e-15, 30);
      cdf_tab_.push_back({ nodes[i], acc, raw_g(nodes[i]) });
    }
    const double mass = acc;
    if (!(mass > 0.0) || !std::isfinite(mass))
      throw numeric_error("DesignDensity: normalization integral failed");
    norm_ = 1.0 / mass;
    for (auto& node : cdf_tab_) {
      node.G *= norm_;
      node.g *= norm_;
    }
    cdf_tab_.front().G = 0.0;
    cdf_tab_.back().G = 1.0;
  }

  double x0_;
  double alpha_;
  double b_;
  double beta_;
  double norm_ = 1.0;
  std::function<double(double)> user_g_;
  double cg_user_ = 0.0, cg1_user_ = 0.0, cg2_user_ = 0.0;
  std::vector<CdfNode> cdf_tab_; // exponential zeros and user densities
};

//! Sorted design points on [0, 1].
struct DesignSample
{
  enum class Kind
  {
    random,
    fixed
  };
  std::vector<double> xs;
  Kind kind = Kind::random;
  std::uint64_t seed = 0;
};

//! Inverse-CDF sampling of n points, reproducible by seed.
inline DesignSample draw(const DesignDensity& d, std::size_t n, std::uint64_t seed)
{
  if (n < 1)
    throw config_error("draw: need n >= 1");
  DesignSample s;
  s.kind = DesignSample::Kind::random;
  s.seed = seed;
  s.xs.resize(n);
  Rng rng(seed);
  for (auto& x : s.xs)
    x = d.invert_G(rng.uniform());
  std::sort(s.xs.begin(), s.xs.end());
  return s;
}

//! Fixed design x_i = G^{-1}(i/n), i = 1..n.
inline DesignSample fixed_grid(const DesignDensity& d, std::size_t n)
{
  if (n < 1)
    throw config_error("fixed_grid: need n >= 1");
  DesignSample s;
  s.kind = DesignSample::Kind::fixed;
  s.xs.resize(n);
  for (std::size_t i = 1; i <= n; ++i)
    s.xs[i - 1] = d.invert_G(static_cast<double>(i) / static_cast<double>(n));
  std::sort(s.xs.begin(), s.xs.end());
  return s;
}

//! Zero parameters recovered from data.
struct ZeroFit
{
  double alpha_hat = 0.0;
  double cg_hat = 0.0;
  double cg1_hat = 0.0;
  double cg2_hat = 0.0;
  double x0_hat = 0.0;
  bool zero_detected = false;
  double gap_width = 0.0;     //!< width of the widest empty histogram run
  double resid_rms = 0.0;     //!< log-log regression residual RMS
  std::size_t n_z = 0;        //!< usable dyadic z values
};

namespace detail {

//! core of the zero fit: log-log regression of cdf(x0+z) - cdf(x0-z)
//! against z over a dyadic grid, given any CDF evaluator
template<typename Cdf>
void fit_zero_regression(ZeroFit& fit, const Cdf& cdf, double x0,
                         const std::vector<double>& zs)
{
  std::vector<double> lx, ly;
  for (double z : zs) {
    const double mass = cdf(x0 + z) - cdf(x0 - z);
    if (mass <= 0.0)
      continue;
    lx.push_back(std::log(z));
    ly.push_back(std::log(mass));
  }
  if (lx.size() < 4)
    throw config_error("fit_zero: fewer than 4 usable z values");
  const auto ols = detail::ols(lx, ly);
  fit.alpha_hat = ols.slope - 1.0;
  // intercept = log(2 Cg / (alpha + 1))
  fit.cg_hat = 0.5 * (fit.alpha_hat + 1.0) * std::exp(ols.intercept);
  fit.resid_rms = ols.resid_rms;
  fit.n_z = lx.size();
}

} // namespace detail

//! Estimates the zero location and the local parameters (alpha, Cg and
//! the envelope constants) of an unknown design density from a sample.
inline ZeroFit fit_zero(const DesignSample& sample, std::optional<double> x0_hint = std::nullopt)
{
  const auto& xs = sample.xs;
  const std::size_t n = xs.size();
  if (n < 1000)
    throw config_error("fit_zero: need at least 1000 points");

  // zero location: midpoint of the widest run of empty histogram cells
  const auto nbins = static_cast<std::size_t>(std::sqrt(static_cast<double>(n)));
  std::vector<std::size_t> counts(nbins, 0);
  for (double x : xs) {
    auto bin = static_cast<std::size_t>(x * static_cast<double>(nbins));
    if (bin >= nbins)
      bin = nbins - 1;
    counts[bin]++;
  }
  double best_mid = 0.5, best_width = 0.0, best_dist = 2.0;
  std::size_t i = 0;
  while (i < nbins) {
    if (counts[i] != 0) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < nbins && counts[j] == 0)
      ++j;
    const double lo = static_cast<double>(i) / static_cast<double>(nbins);
    const double hi = static_cast<double>(j) / static_cast<double>(nbins);
    const double mid = 0.5 * (lo + hi);
    const double width = hi - lo;
    const double dist = x0_hint ? std::abs(mid - *x0_hint) : 0.0;
    const bool better = x0_hint ? (width > 0.0 && dist < best_dist)
                                : (width > best_width);
    if (better) {
      best_mid = mid;
      best_width = width;
      best_dist = dist;
    }
    i = j;
  }
  ZeroFit fit;
  fit.gap_width = best_width;
  fit.zero_detected = best_width >= 2.0 / std::sqrt(static_cast<double>(n));
  fit.x0_hat = fit.zero_detected ? best_mid : (x0_hint ? *x0_hint : best_mid);
  const double x0 = fit.x0_hat;
  if (x0 * static_cast<double>(nbins) < 1.0 || (1.0 - x0) * static_cast<double>(nbins) < 1.0)
    throw config_error("fit_zero: zero too close to the boundary");

  auto cdf = [&](double t) {
    return static_cast<double>(std::upper_bound(xs.begin(), xs.end(), t) - xs.begin()) /
           static_cast<double>(n);
  };

  // dyadic z grid anchored at the boundary distance, two-sided count floor 30
  const double z_max = std::min(x0, 1.0 - x0);
  std::vector<double> zs;
  for (int k = 0; k < 40; ++k) {
    const double z = std::ldexp(z_max, -k);
    const auto lo = std::lower_bound(xs.begin(), xs.end(), x0 - z);
    const auto mid = std::lower_bound(xs.begin(), xs.end(), x0);
    const auto hi = std::upper_bound(xs.begin(), xs.end(), x0 + z);
    if (mid - lo >= 30 && hi - mid >= 30)
      zs.push_back(z);
  }
  detail::fit_zero_regression(fit, cdf, x0, zs);

  // envelope constants from the min/max ratios over the sample
  const double Gx0 = cdf(x0);
  const double p = fit.alpha_hat + 1.0;
  double cg1 = std::numeric_limits<double>::infinity();
  double cg2 = 0.0;
  for (double x : xs) {
    const double num = std::abs(cdf(x) - Gx0) * p;
    if (num <= 0.0)
      continue;
    const double ratio = num / std::pow(std::abs(x - x0), p);
    cg1 = std::min(cg1, ratio);
    cg2 = std::max(cg2, ratio);
  }
  fit.cg1_hat = cg1;
  fit.cg2_hat = cg2;
  return fit;
}

//! Multi-zero variant: partitions [0, 1] at the midpoints between the
//! declared zeros and runs the single-zero fit per cell, with results
//! mapped back to the original coordinates.
inline std::vector<ZeroFit> fit_zero_multi(const DesignSample& sample,
                                           const std::vector<double>& zero_hints)
{
  if (zero_hints.size() < 2)
    throw config_error("fit_zero_multi: need at least two declared zeros");
  std::vector<double> hints = zero_hints;
  std::sort(hints.begin(), hints.end());
  std::vector<double> cuts = { 0.0 };
  for (std::size_t i = 0; i + 1 < hints.size(); ++i)
    cuts.push_back(0.5 * (hints[i] + hints[i + 1]));
  cuts.push_back(1.0);

  std::vector<ZeroFit> fits;
  for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
    const double lo = cuts[c], hi = cuts[c + 1];
    DesignSample cell;
    cell.kind = sample.kind;
    cell.seed = sample.seed;
    for (double x : sample.xs)
      if (x >= lo && x < hi)
        cell.xs.push_back((x - lo) / (hi - lo));
    const double cell_frac = static_cast<double>(cell.xs.size()) /
                             static_cast<double>(sample.xs.size());
    auto fit = fit_zero(cell, (hints[c] - lo) / (hi - lo));
    fit.x0_hat = lo + fit.x0_hat * (hi - lo);
    fit.gap_width *= hi - lo;
    // alpha is scale-free; Cg undoes the cell rescaling of both axes
    const double scale = cell_frac / std::pow(hi - lo, fit.alpha_hat + 1.0);
    fit.cg_hat *= scale;
    fit.cg1_hat *= scale;
    fit.cg2_hat *= scale;
    fits.push_back(std::move(fit));
  }
  return fits;
}

//! Variant used as an oracle: fits the zero parameters directly from an
//! exact CDF on a supplied z grid.
template<typename Cdf>
ZeroFit fit_zero_from_cdf(const Cdf& cdf, double x0, const std::vector<double>& zs)
{
  ZeroFit fit;
  fit.x0_hat = x0;
  fit.zero_detected = true;
  detail::fit_zero_regression(fit, cdf, x0, zs);
  fit.cg1_hat = fit.cg_hat;
  fit.cg2_hat = fit.cg_hat;
  return fit;
}

//! Unbiased sample estimate of the weighted Gram matrix:
//!   n^-1 sum_i phi_mk(x_i) phi_ml(x_i),  l in rows, k in cols.
//! Pairs with disjoint supports stay exactly zero.
inline Eigen::MatrixXd empirical_gram(const DesignSample& sample,
                                      const PeriodizedBasis& basis,
                                      int m,
                                      const std::vector<long long>& rows,
                                      const std::vector<long long>& cols)
{
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()),
                                              static_cast<Eigen::Index>(cols.size()));
  const std::size_t n = sample.xs.size();
  std::vector<double> rv(rows.size()), cv(cols.size());
  for (double x : sample.xs) {
    bool any = false;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      rv[r] = basis.eval_scaling(m, rows[r], x);
      any = any || rv[r] != 0.0;
    }
    if (!any)
      continue;
    for (std::size_t c = 0; c < cols.size(); ++c)
      cv[c] = basis.eval_scaling(m, cols[c], x);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rv[r] == 0.0)
        continue;
      for (std::size_t c = 0; c < cols.size(); ++c)
        out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) += rv[r] * cv[c];
    }
  }
  out /= static_cast<double>(n);
  return out;
}

} // namespace irregwave
