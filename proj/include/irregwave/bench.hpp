#pragma once

#include "adapt.hpp"
#include "common.hpp"
#include "design.hpp"
#include "wavelet.hpp"

#include <functional>

namespace irregwave {

//! Benchmark target with declared (not certified) Besov labels.
struct TestFunction
{
  std::string name;
  std::function<double(double)> f;
  double s = 1.0;
  double p = 2.0; //!< infinity() for p = inf
  double q = 2.0;
  double radius = 1.0;
  std::string notes;

  double s_prime() const
  {
    const double inv_p = std::isinf(p) ? 0.0 : 1.0 / p;
    return s + 0.5 - inv_p;
  }
};

//! Standard targets: a trigonometric polynomial, a piecewise cubic with
//! one kink, a root-kink aligned with the canonical zero at 1/2, and the
//! constant function.
inline std::vector<TestFunction> catalog()
{
  constexpr double two_pi = 6.283185307179586476925286766559;
  std::vector<TestFunction> out;
  out.push_back({ "constant", [](double) { return 1.0; }, 3.0,
                  std::numeric_limits<double>::infinity(),
                  std::numeric_limits<double>::infinity(), 1.0,
                  "all wavelet coefficients vanish" });
  out.push_back({ "trig3",
                  [two_pi](double x) {
                    return 1.0 + 0.6 * std::cos(two_pi * x) + 0.3 * std::sin(2.0 * two_pi * x) +
                           0.2 * std::cos(3.0 * two_pi * x);
                  },
                  1.0, std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
                  2.5, "degree-3 trigonometric polynomial; label capped at the Haar moment" });
  out.push_back({ "kink_cubic",
                  [](double x) {
                    // secant-adjusted so the periodization sees no jump at 0/1
                    return 0.2 + detail::sq(x * (1.0 - x)) +
                           1.5 * (std::abs(x - 0.37) - 0.37 - 0.26 * x);
                  },
                  1.0, 1.5, 1.5, 3.0, "piecewise cubic with one interior kink at 0.37" });
  out.push_back({ "root_kink",
                  [](double x) { return 1.5 * std::sqrt(std::abs(x - 0.5)); },
                  1.0, 2.0, 2.0, 2.0,
                  "square-root cusp at the canonical zero location" });
  return out;
}

//! Worst-case probe from the lower-bound construction: gamma_j psi_jk
//! with gamma_j = c 2^{-j s'}.
inline TestFunction lower_bound_probe(std::shared_ptr<const PeriodizedBasis> basis,
                                      int j, long long k, double c, double s_prime)
{
  if (c <= 0.0)
    throw config_error("lower_bound_probe: need c > 0");
  const double gamma = c * std::pow(2.0, -static_cast<double>(j) * s_prime);
  TestFunction tf;
  tf.name = "probe_j" + std::to_string(j) + "_k" + std::to_string(k);
  tf.f = [basis, j, k, gamma](double x) { return gamma * basis->eval_wavelet(j, k, x); };
  tf.s = s_prime; // p = 2 makes s = s'
  tf.p = 2.0;
  tf.q = 2.0;
  tf.radius = c;
  tf.notes = "single wavelet bump near the zero column";
  return tf;
}

//! Squared L2 distance by trapezoid on 2^{grid_P} cells.
template<typename F, typename G>
double l2_risk(const F& f_hat, const G& f, int grid_P = 12)
{
  return detail::integrate_cells([&](double x) { return detail::sq(f_hat(x) - f(x)); },
                                 0.0, 1.0, std::size_t{ 1 } << grid_P);
}

//! Theoretical convergence-rate exponent of the L2 risk: the slope of
//! log risk against log n (b = 0) or against log ln n (b > 0).
inline double theoretical_exponent(double s, double p, double alpha, double b, double beta)
{
  const double inv_p = std::isinf(p) ? 0.0 : 1.0 / p;
  const double s_prime = s + 0.5 - inv_p;
  if (b > 0.0)
    return -2.0 * s_prime / beta;
  if (alpha * s < s_prime)
    return -2.0 * s / (2.0 * s + 1.0);
  return -2.0 * s_prime / (2.0 * s_prime + alpha);
}

//! Monte Carlo scenario: one target, one density, one family.
struct Scenario
{
  std::string name;
  TestFunction target;
  double x0 = 0.5;
  double alpha = 1.0;
  double b = 0.0;
  double beta = 1.0;
  int wavelet_N = 1;
  int table_P = 12;
  EstimatorConfig cfg;
  bool integrable_branch = false; //!< route to fit_integrable
  bool fixed_design = false;
  std::vector<std::size_t> n_grid;
  int replicates = 2;
  std::uint64_t seed = 0;
  double slope_tol = 0.15; //!< extra width of the pass band around theory
};

//! Per-n Monte Carlo risks and the fitted log-log slope.
struct RiskReport
{
  std::vector<std::size_t> ns;
  std::vector<double> mean_risk;
  std::vector<double> stderr_risk;
  std::vector<double> mean_m_hat;
  std::size_t failures = 0;
  double slope = 0.0;
  double slope_se = 0.0;
  double intercept = 0.0;
  double theory = 0.0;
  bool pass = false;
};

//! Runs the scenario: per n, `replicates` independent draws, fits and
//! risks; deterministic for a fixed seed (threaded runs aggregate in a
//! fixed order).
inline RiskReport run_monte_carlo(const Scenario& sc)
{
  if (sc.n_grid.empty() || sc.replicates < 2)
    throw config_error("run_monte_carlo: need a nonempty n grid and at least 2 replicates");
  for (std::size_t i = 1; i < sc.n_grid.size(); ++i)
    if (sc.n_grid[i] <= sc.n_grid[i - 1])
      throw config_error("run_monte_carlo: n grid must be strictly increasing");

  const auto family = build_family(sc.wavelet_N);
  auto basis = std::make_shared<const PeriodizedBasis>(family, tabulate(family, sc.table_P));
  const DesignDensity density(sc.x0, sc.alpha, sc.b, sc.beta);

  std::optional<TwoStageFitter> fitter;
  if (!sc.integrable_branch)
    fitter.emplace(basis, density, sc.cfg);

  RiskReport report;
  report.theory = theoretical_exponent(sc.target.s, sc.target.p, sc.alpha, sc.b, sc.beta);

  for (std::size_t ni = 0; ni < sc.n_grid.size(); ++ni) {
    const std::size_t n = sc.n_grid[ni];
    if (fitter)
      fitter->warm(n);
    const int R = sc.replicates;
    std::vector<double> risks(R, std::numeric_limits<double>::quiet_NaN());
    std::vector<double> m_hats(R, 0.0);
    std::vector<char> failed(R, 0);
    detail::parallel_for(static_cast<std::size_t>(R), sc.cfg.threads, [&](std::size_t r) {
      try {
        const std::uint64_t rep_seed = derive_seed(sc.seed, ni + 1, r + 1);
        const auto sample = sc.fixed_design ? fixed_grid(density, n)
                                            : draw(density, n, rep_seed);
        Rng noise(derive_seed(rep_seed, 0xabcdef));
        std::vector<double> ys(n);
        for (std::size_t i = 0; i < n; ++i)
          ys[i] = sc.target.f(sample.xs[i]) + sc.cfg.sigma * noise.normal();
        const FitResult fit = sc.integrable_branch
                                ? fit_integrable(sample.xs, ys, density, basis, sc.cfg)
                                : fitter->fit(sample.xs, ys);
        risks[r] = l2_risk(fit, sc.target.f, sc.cfg.grid_P);
        m_hats[r] = fit.m_hat;
      } catch (const std::exception&) {
        failed[r] = 1;
      }
    });
    double mean = 0.0, m2 = 0.0, mh = 0.0;
    std::size_t ok = 0;
    for (int r = 0; r < R; ++r) {
      if (failed[r]) {
        report.failures++;
        continue;
      }
      ++ok;
      const double delta = risks[r] - mean;
      mean += delta / static_cast<double>(ok);
      m2 += delta * (risks[r] - mean);
      mh += m_hats[r];
    }
    if (ok < static_cast<std::size_t>(0.95 * R))
      throw numeric_error("run_monte_carlo: more than 5% of replicates failed");
    report.ns.push_back(n);
    report.mean_risk.push_back(mean);
    report.stderr_risk.push_back(ok > 1 ? std::sqrt(m2 / static_cast<double>(ok - 1) /
                                                    static_cast<double>(ok))
                                        : 0.0);
    report.mean_m_hat.push_back(mh / static_cast<double>(ok));
  }

  if (report.ns.size() >= 3) {
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < report.ns.size(); ++i) {
      const double nn = static_cast<double>(report.ns[i]);
      lx.push_back(sc.b > 0.0 ? std::log(std::log(nn)) : std::log(nn));
      ly.push_back(std::log(report.mean_risk[i]));
    }
    const auto fit = detail::ols(lx, ly);
    report.slope = fit.slope;
    report.slope_se = fit.slope_se;
    report.intercept = fit.intercept;
    report.pass = std::abs(report.slope - report.theory) <=
                  sc.slope_tol + 2.0 * report.slope_se;
  }
  return report;
}

//! OLS slope of log risk against log n (log ln n when b > 0).
inline double rate_slope(const RiskReport& report)
{
  if (report.ns.size() < 3)
    throw config_error("rate_slope: need at least 3 grid points");
  return report.slope;
}

} // namespace irregwave
