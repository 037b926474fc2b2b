#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace irregwave {

//! Raised for invalid parameters, level/regime mismatches and
//! configurations the estimators cannot run under (CLI exit 3).
struct config_error : std::invalid_argument
{
  using std::invalid_argument::invalid_argument;
};

//! Raised for malformed or missing input data (CLI exit 2).
struct input_error : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

//! Raised when a numeric routine fails (non-convergent cascade,
//! indefinite system matrix, ...) (CLI exit 4).
struct numeric_error : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x)
{
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

} // namespace detail

//! Mixes a base seed with stream indices so that parallel replicates
//! draw from independent, reproducible streams.
inline std::uint64_t derive_seed(std::uint64_t base,
                                 std::uint64_t a,
                                 std::uint64_t b = 0)
{
  return detail::splitmix64(detail::splitmix64(base ^ (a * 0x9e3779b97f4a7c15ULL)) ^ b);
}

//! Seeded generator with portable uniform/normal draws (the standard
//! library distributions are implementation-defined, so we roll our own).
class Rng
{
public:
  explicit Rng(std::uint64_t seed)
    : eng_(seed)
  {
  }

  //! uniform on (0, 1)
  double uniform()
  {
    // 53 random bits, shifted into (0,1); never returns 0 or 1 exactly
    const std::uint64_t r = eng_();
    return (static_cast<double>(r >> 11) + 0.5) * 0x1p-53;
  }

  //! standard normal draw (Box-Muller, no state carried between calls)
  double normal()
  {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

private:
  std::mt19937_64 eng_;
};

namespace detail {

//! Composite trapezoid with per-cell one-sided endpoint evaluation.
//! Evaluating just inside each cell keeps the rule exact for
//! integrands that jump at cell boundaries (Haar products, indicator
//! cutoffs) while behaving like the usual trapezoid rule elsewhere.
template<typename F>
double integrate_cells(F&& f, double a, double b, std::size_t ncells)
{
  if (!(b > a) || ncells == 0)
    return 0.0;
  const double h = (b - a) / static_cast<double>(ncells);
  const double nudge = 1e-9 * h;
  double sum = 0.0;
  for (std::size_t i = 0; i < ncells; ++i) {
    const double lo = a + h * static_cast<double>(i);
    const double hi = (i + 1 == ncells) ? b : a + h * static_cast<double>(i + 1);
    sum += 0.5 * (hi - lo) * (f(lo + nudge) + f(hi - nudge));
  }
  return sum;
}

template<typename F>
double adaptive_simpson_rec(F&& f,
                            double a, double b,
                            double fa, double fm, double fb,
                            double whole, double tol, int depth)
{
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol)
    return left + right + delta / 15.0;
  return adaptive_simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         adaptive_simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

template<typename F>
double adaptive_simpson(F&& f, double a, double b, double tol = 1e-12, int depth = 40)
{
  if (!(b > a))
    return 0.0;
  const double m = 0.5 * (a + b);
  const double fa = f(a), fm = f(m), fb = f(b);
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return adaptive_simpson_rec(f, a, b, fa, fm, fb, whole, tol, depth);
}

struct OlsFit
{
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = 0.0;
  double resid_rms = 0.0;
};

//! ordinary least squares of y on x
inline OlsFit ols(const std::vector<double>& x, const std::vector<double>& y)
{
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n)
    throw config_error("ols: need at least two points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx <= 0.0)
    throw config_error("ols: degenerate abscissae");
  OlsFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y[i] - fit.intercept - fit.slope * x[i];
    ss += r * r;
  }
  fit.resid_rms = std::sqrt(ss / static_cast<double>(n));
  if (n > 2)
    fit.slope_se = std::sqrt(ss / static_cast<double>(n - 2) / sxx);
  return fit;
}

//! minimizes a quasi-convex function on [lo, hi] by golden-section search
template<typename F>
double golden_section_min(F&& f, double lo, double hi, int iters = 200)
{
  const double invphi = 0.6180339887498949;
  double a = lo, b = hi;
  double c = b - invphi * (b - a);
  double d = a + invphi * (b - a);
  double fc = f(c), fd = f(d);
  for (int i = 0; i < iters; ++i) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - invphi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + invphi * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

//! Runs fn(i) for i in [0, n) on up to `threads` workers.  Results must
//! be written to per-index slots so the aggregation order stays fixed.
inline void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn)
{
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i)
      fn(i);
    return;
  }
  const unsigned k = std::min<unsigned>(threads, static_cast<unsigned>(n));
  std::vector<std::thread> pool;
  pool.reserve(k);
  std::exception_ptr err;
  std::mutex err_mtx;
  for (unsigned t = 0; t < k; ++t) {
    pool.emplace_back([&, t]() {
      try {
        for (std::size_t i = t; i < n; i += k)
          fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mtx);
        if (!err)
          err = std::current_exception();
      }
    });
  }
  for (auto& th : pool)
    th.join();
  if (err)
    std::rethrow_exception(err);
}

inline double sq(double x)
{
  return x * x;
}

//! positive part of x mod 1
inline double mod1(double x)
{
  double r = x - std::floor(x);
  if (r >= 1.0)
    r -= 1.0;
  return r;
}

} // namespace detail

} // namespace irregwave
