#pragma once

#include "adapt.hpp"
#include "bench.hpp"
#include "common.hpp"
#include "design.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace irregwave {

namespace detail {

//! 17 significant digits: doubles round-trip and reports diff cleanly
inline std::string fmt17(double v)
{
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line)
{
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ','))
    out.push_back(cell);
  return out;
}

inline double parse_double(const std::string& s, const std::string& path, std::size_t lineno)
{
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos])))
      ++pos;
    if (pos != s.size())
      throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw input_error(path + ":" + std::to_string(lineno) + ": malformed number '" + s + "'");
  }
}

} // namespace detail

//! Reads a two-column CSV with header `x,y`; rows are returned sorted by x.
inline std::pair<std::vector<double>, std::vector<double>> read_xy_csv(const std::string& path)
{
  std::ifstream in(path);
  if (!in)
    throw input_error(path + ": cannot open");
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line) || (line != "x,y" && line != "x,y\r"))
    throw input_error(path + ":1: expected header 'x,y'");
  ++lineno;
  std::vector<std::pair<double, double>> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r")
      continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != 2)
      throw input_error(path + ":" + std::to_string(lineno) + ": expected two columns");
    rows.emplace_back(detail::parse_double(cells[0], path, lineno),
                      detail::parse_double(cells[1], path, lineno));
  }
  if (rows.empty())
    throw input_error(path + ": no data rows");
  std::sort(rows.begin(), rows.end());
  std::vector<double> xs(rows.size()), ys(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    xs[i] = rows[i].first;
    ys[i] = rows[i].second;
  }
  return { xs, ys };
}

//! Reads a one-column CSV with header `x`, sorted ascending.
inline std::vector<double> read_x_csv(const std::string& path)
{
  std::ifstream in(path);
  if (!in)
    throw input_error(path + ": cannot open");
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line) || (line != "x" && line != "x\r"))
    throw input_error(path + ":1: expected header 'x'");
  ++lineno;
  std::vector<double> xs;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r")
      continue;
    xs.push_back(detail::parse_double(line, path, lineno));
  }
  if (xs.empty())
    throw input_error(path + ": no data rows");
  std::sort(xs.begin(), xs.end());
  return xs;
}

inline void write_x_csv(const std::string& path, const std::vector<double>& xs)
{
  std::ofstream out(path);
  if (!out)
    throw input_error(path + ": cannot open for writing");
  out << "x\n";
  for (double x : xs)
    out << detail::fmt17(x) << "\n";
}

//! Samples the fitted curve on the dyadic grid and writes `x,f_hat`.
inline void write_curve_csv(const std::string& path, const FitResult& fit, int grid_P)
{
  std::ofstream out(path);
  if (!out)
    throw input_error(path + ": cannot open for writing");
  out << "x,f_hat\n";
  const std::size_t n = std::size_t{ 1 } << grid_P;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(i) / static_cast<double>(n);
    out << detail::fmt17(x) << "," << detail::fmt17(fit(x)) << "\n";
  }
}

inline void write_risks_csv(const std::string& path, const RiskReport& report)
{
  std::ofstream out(path);
  if (!out)
    throw input_error(path + ": cannot open for writing");
  out << "n,mean_risk,stderr\n";
  for (std::size_t i = 0; i < report.ns.size(); ++i)
    out << report.ns[i] << "," << detail::fmt17(report.mean_risk[i]) << ","
        << detail::fmt17(report.stderr_risk[i]) << "\n";
}

inline nlohmann::ordered_json ledger_json(const ConstantsLedger& led)
{
  nlohmann::ordered_json j;
  j["f_sup"] = led.f_sup;
  j["phi_sup"] = led.phi_sup;
  j["psi_sup"] = led.psi_sup;
  j["C_phi"] = led.C_phi;
  j["C_psi"] = led.C_psi;
  j["C_d"] = led.C_d;
  j["C_tau"] = led.C_tau;
  j["C_kappa"] = led.C_kappa;
  j["C_lambda0"] = led.C_lambda0;
  j["C_lambda1"] = led.C_lambda1;
  j["C_lambda2"] = led.C_lambda2;
  j["C_u"] = led.C_u;
  j["C_lambda"] = led.C_lambda;
  j["M_phi"] = led.M_phi;
  j["norm_Ainv"] = led.norm_Ainv;
  j["norm_AinvB"] = led.norm_AinvB;
  j["d_min_twostage"] = led.d_min_twostage;
  j["d_min_integrable"] = led.d_min_integrable;
  j["lambda_min"] = led.lambda_min;
  return j;
}

//! Serializes a fit (selected level, coefficient tables, local system
//! solution, diagnostics) as ordered JSON.
inline nlohmann::ordered_json fit_json(const FitResult& fit)
{
  nlohmann::ordered_json j;
  j["branch"] = fit.branch == FitResult::Branch::two_stage ? "two-stage" : "integrable";
  j["m_hat"] = fit.m_hat;
  j["m1"] = fit.m1;
  j["J"] = fit.J;
  j["d_used"] = fit.d_used;
  j["lambda_used"] = fit.lambda_used;
  j["calibrated_d"] = fit.calibrated_d;
  j["calibrated_lambda"] = fit.calibrated_lambda;
  j["delta_b"] = fit.delta_b;
  j["neglected_eps"] = true;
  j["cond"] = fit.cond;
  j["cond_warning"] = fit.cond_warning;
  j["m0_clamped"] = fit.m0_clamped;
  j["kept_coeffs"] = fit.kept_coeffs;
  // wall-clock timings stay out of the file so reruns diff clean
  j["local"] = { { "level", fit.local.level() },
                 { "indices", fit.local.indices() },
                 { "u_hat", std::vector<double>(fit.local.coefficients().begin(),
                                                fit.local.coefficients().end()) } };
  j["tree"] = { { "m", fit.tree.m }, { "J", fit.tree.J }, { "a", fit.tree.a }, { "b", fit.tree.b } };
  j["k0"] = fit.raw.k0;
  j["ledger"] = ledger_json(fit.ledger);
  return j;
}

//! JSON diagnostics blob of a local system.
inline nlohmann::ordered_json local_system_json(const LocalSystem& sys)
{
  auto mat = [](const Eigen::MatrixXd& M) {
    std::vector<std::vector<double>> rows;
    for (Eigen::Index r = 0; r < M.rows(); ++r)
      rows.emplace_back(M.row(r).begin(), M.row(r).end());
    return rows;
  };
  nlohmann::ordered_json j;
  j["level"] = sys.m;
  j["indices"] = sys.sets.K_phi_hit;
  j["k_star"] = sys.sets.K_star;
  j["A"] = mat(sys.A);
  j["B"] = mat(sys.B);
  j["c_hat"] = std::vector<double>(sys.c_hat.begin(), sys.c_hat.end());
  j["u_hat"] = std::vector<double>(sys.u_hat.begin(), sys.u_hat.end());
  j["cond"] = sys.cond;
  return j;
}

inline nlohmann::ordered_json report_json(const RiskReport& report)
{
  nlohmann::ordered_json j;
  j["n"] = report.ns;
  j["mean_risk"] = report.mean_risk;
  j["stderr"] = report.stderr_risk;
  j["mean_m_hat"] = report.mean_m_hat;
  j["failures"] = report.failures;
  j["slope"] = report.slope;
  j["slope_se"] = report.slope_se;
  j["intercept"] = report.intercept;
  j["theory"] = report.theory;
  j["pass"] = report.pass;
  return j;
}

inline nlohmann::ordered_json zerofit_json(const ZeroFit& fit)
{
  nlohmann::ordered_json j;
  j["x0_hat"] = fit.x0_hat;
  j["alpha_hat"] = fit.alpha_hat;
  j["cg_hat"] = fit.cg_hat;
  j["cg1_hat"] = fit.cg1_hat;
  j["cg2_hat"] = fit.cg2_hat;
  j["zero_detected"] = fit.zero_detected;
  j["gap_width"] = fit.gap_width;
  j["resid_rms"] = fit.resid_rms;
  j["n_z"] = fit.n_z;
  return j;
}

inline void write_json(const std::string& path, const nlohmann::ordered_json& j)
{
  std::ofstream out(path);
  if (!out)
    throw input_error(path + ": cannot open for writing");
  out << j.dump(2) << "\n";
}

} // namespace irregwave
