#include <irregwave/irregwave.hpp>

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>

namespace {

using namespace irregwave;

unsigned default_threads()
{
  if (const char* env = std::getenv("IRREGWAVE_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1)
      return static_cast<unsigned>(v);
  }
  return 1;
}

struct CommonOpts
{
  double x0 = 0.5;
  double alpha = 1.0;
  double b = 0.0;
  double beta = 1.0;
  int wavelet_N = 3;
  int table_P = 12;
  int grid_P = 12;
  double sigma = 1.0;
  double d = 0.0;      // 0 = ledger default
  double lambda = 0.0; // 0 = ledger default
  double f_sup = 0.0;  // 0 = plugin
  unsigned threads = default_threads();
  std::uint64_t seed = 1;
  std::string out_dir = ".";
};

void add_common(CLI::App* cmd, CommonOpts& o)
{
  cmd->add_option("--x0", o.x0, "zero location of the design density");
  cmd->add_option("--alpha", o.alpha, "polynomial order of the zero");
  cmd->add_option("--b", o.b, "exponential coefficient (0 = polynomial zero)");
  cmd->add_option("--beta", o.beta, "exponential order (b > 0 only)");
  cmd->add_option("--wavelet-n", o.wavelet_N, "vanishing moments of the Daubechies family")
    ->check(CLI::Range(1, 10));
  cmd->add_option("--table-p", o.table_P, "dyadic table resolution exponent")
    ->check(CLI::Range(8, 16));
  cmd->add_option("--grid-p", o.grid_P, "evaluation grid exponent");
  cmd->add_option("--sigma", o.sigma, "noise level");
  cmd->add_option("--d", o.d, "threshold constant (0 = theorem minimum x 1.05)");
  cmd->add_option("--lambda", o.lambda, "Lepski constant (0 = theorem minimum x 1.05)");
  cmd->add_option("--f-sup", o.f_sup, "manual bound on |f|_inf (0 = plugin estimate)");
  cmd->add_option("--threads", o.threads, "parallel replicate pool (IRREGWAVE_THREADS)");
  cmd->add_option("--seed", o.seed, "base seed; all randomness flows from it");
  cmd->add_option("--out-dir", o.out_dir, "output directory");
}

EstimatorConfig make_cfg(const CommonOpts& o)
{
  EstimatorConfig cfg;
  if (o.d > 0.0)
    cfg.d = o.d;
  if (o.lambda > 0.0)
    cfg.lambda = o.lambda;
  cfg.sigma = o.sigma;
  cfg.grid_P = o.grid_P;
  cfg.threads = o.threads;
  if (o.f_sup > 0.0) {
    cfg.mode = EstimatorConfig::FSupMode::manual;
    cfg.f_sup = o.f_sup;
  }
  return cfg;
}

std::string join(const std::string& dir, const std::string& name)
{
  return (std::filesystem::path(dir) / name).string();
}

TestFunction find_target(const std::string& name)
{
  for (auto& tf : catalog())
    if (tf.name == name)
      return tf;
  throw config_error("unknown test function '" + name + "'");
}

int run_estimate(const CommonOpts& o, const std::string& input, bool fit_g, bool estimate_sig)
{
  auto [xs, ys] = read_xy_csv(input);
  double x0 = o.x0, alpha = o.alpha;
  EstimatorConfig cfg = make_cfg(o);
  nlohmann::ordered_json extra;
  if (fit_g) {
    DesignSample sample;
    sample.xs = xs;
    const auto zf = fit_zero(sample);
    x0 = zf.x0_hat;
    alpha = zf.alpha_hat;
    cfg.use_empirical_gram = true;
    extra["zero_fit"] = zerofit_json(zf);
  }
  const DesignDensity density(x0, alpha, o.b, o.beta);
  if (estimate_sig)
    cfg.sigma = estimate_sigma(xs, ys, density);

  const auto family = build_family(o.wavelet_N);
  auto basis = std::make_shared<const PeriodizedBasis>(family, tabulate(family, o.table_P));

  const bool integrable = density.inverse_integrable() && density.has_zero();
  const FitResult fit = integrable ? fit_integrable(xs, ys, density, basis, cfg)
                                   : fit_two_stage(xs, ys, density, basis, cfg);

  auto j = fit_json(fit);
  j["sigma"] = cfg.sigma;
  j["density"] = { { "x0", x0 }, { "alpha", alpha }, { "b", o.b }, { "beta", o.beta } };
  if (!extra.empty())
    j.update(extra);
  if (fit.system)
    j["local_system"] = local_system_json(*fit.system);
  write_json(join(o.out_dir, "fit.json"), j);
  write_curve_csv(join(o.out_dir, "curve.csv"), fit, o.grid_P);
  return 0;
}

Scenario make_scenario(const CommonOpts& o, const std::string& target,
                       const std::vector<std::size_t>& n_grid, int replicates,
                       const std::string& branch, bool fixed_design)
{
  Scenario sc;
  sc.name = target;
  sc.target = find_target(target);
  sc.x0 = o.x0;
  sc.alpha = o.alpha;
  sc.b = o.b;
  sc.beta = o.beta;
  sc.wavelet_N = o.wavelet_N;
  sc.table_P = o.table_P;
  sc.cfg = make_cfg(o);
  sc.fixed_design = fixed_design;
  sc.n_grid = n_grid;
  sc.replicates = replicates;
  sc.seed = o.seed;
  if (branch == "integrable")
    sc.integrable_branch = true;
  else if (branch == "two-stage")
    sc.integrable_branch = false;
  else if (branch == "auto")
    sc.integrable_branch = (o.b == 0.0 && o.alpha > 0.0 && o.alpha < 1.0);
  else
    throw config_error("branch must be auto, two-stage or integrable");
  return sc;
}

int run_simulate(const Scenario& sc, const CommonOpts& o, double s_label, double p_label,
                 double slope_tol, bool with_rates)
{
  Scenario scenario = sc;
  scenario.target.s = s_label;
  scenario.target.p = p_label;
  scenario.slope_tol = slope_tol;
  const auto report = run_monte_carlo(scenario);
  write_risks_csv(join(o.out_dir, "risks.csv"), report);
  auto j = report_json(report);
  j["scenario"] = { { "target", scenario.name },
                    { "x0", scenario.x0 },
                    { "alpha", scenario.alpha },
                    { "b", scenario.b },
                    { "beta", scenario.beta },
                    { "s", s_label },
                    { "p", std::isinf(p_label) ? -1.0 : p_label },
                    { "replicates", scenario.replicates },
                    { "seed", scenario.seed },
                    { "branch", scenario.integrable_branch ? "integrable" : "two-stage" } };
  write_json(join(o.out_dir, "report.json"), j);
  if (with_rates)
    std::cout << "slope " << report.slope << " theory " << report.theory << " "
              << (report.pass ? "PASS" : "FAIL") << "\n";
  return 0;
}

int run_fitg(const CommonOpts& o, const std::string& input, double hint)
{
  DesignSample sample;
  sample.xs = read_x_csv(input);
  const auto zf = hint >= 0.0 ? fit_zero(sample, hint) : fit_zero(sample);
  write_json(join(o.out_dir, "zerofit.json"), zerofit_json(zf));
  return 0;
}

//! Expands `--config FILE` / `--scenario FILE` into ordinary arguments.
//! The file is a flat `key = value` list (see docs/config.md); command
//! line flags placed after the config reference override it, and unknown
//! keys are rejected by the regular argument parser.
std::vector<std::string> expand_config(int argc, char** argv)
{
  std::vector<std::string> args(argv, argv + argc);
  for (std::size_t i = 1; i < args.size(); ++i) {
    std::string file;
    if (args[i] == "--config" || args[i] == "--scenario") {
      if (i + 1 >= args.size())
        throw config_error(args[i] + " requires a file argument");
      file = args[i + 1];
      args.erase(args.begin() + static_cast<long>(i), args.begin() + static_cast<long>(i) + 2);
    } else if (args[i].rfind("--config=", 0) == 0 || args[i].rfind("--scenario=", 0) == 0) {
      file = args[i].substr(args[i].find('=') + 1);
      args.erase(args.begin() + static_cast<long>(i));
    } else {
      continue;
    }
    std::ifstream in(file);
    if (!in)
      throw input_error(file + ": cannot open config");
    std::vector<std::string> expanded;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos)
        line.erase(hash);
      auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        const auto b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
      };
      line = trim(line);
      if (line.empty())
        continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw config_error(file + ":" + std::to_string(lineno) + ": expected key = value");
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
        value = value.substr(1, value.size() - 2);
      if (value == "true") {
        expanded.push_back("--" + key);
        continue;
      }
      if (value == "false")
        continue;
      expanded.push_back("--" + key);
      expanded.push_back(value);
    }
    // insert right after the subcommand so later flags still override
    args.insert(args.begin() + static_cast<long>(i), expanded.begin(), expanded.end());
    break;
  }
  return args;
}

} // namespace

int main(int argc, char** argv)
{
  CLI::App app{ "adaptive wavelet regression for designs with well-separated density zeros" };
  app.require_subcommand(1);

  CommonOpts opt;

  auto* est = app.add_subcommand("estimate", "fit one data set (CSV with header x,y)");
  std::string input;
  bool fit_g = false, est_sigma = false;
  add_common(est, opt);
  est->add_option("--input", input, "input CSV")->required();
  est->add_flag("--fit-g", fit_g, "estimate the zero parameters from the design points");
  est->add_flag("--estimate-sigma", est_sigma, "estimate the noise level from first differences");

  auto* sim = app.add_subcommand("simulate", "Monte Carlo risk measurement");
  std::string target = "trig3", n_grid_str = "1024,4096,16384", branch = "auto";
  int replicates = 20;
  bool fixed_design = false;
  double s_label = 1.0, p_label = 2.0, slope_tol = 0.15;
  add_common(sim, opt);
  sim->add_option("--function", target, "catalog test function");
  sim->add_option("--n-grid", n_grid_str, "comma-separated sample sizes");
  sim->add_option("--replicates", replicates, "replicates per n");
  sim->add_option("--branch", branch, "auto | two-stage | integrable");
  sim->add_flag("--fixed-design", fixed_design, "use the G^{-1}(i/n) design");
  sim->add_option("--s", s_label, "nominal smoothness for the theory exponent");
  sim->add_option("--p", p_label, "nominal p (-1 for infinity)");

  auto* rates = app.add_subcommand("rates", "simulate and test the rate exponent");
  add_common(rates, opt);
  rates->add_option("--function", target, "catalog test function");
  rates->add_option("--n-grid", n_grid_str, "comma-separated sample sizes");
  rates->add_option("--replicates", replicates, "replicates per n");
  rates->add_option("--branch", branch, "auto | two-stage | integrable");
  rates->add_flag("--fixed-design", fixed_design, "use the G^{-1}(i/n) design");
  rates->add_option("--s", s_label, "nominal smoothness for the theory exponent");
  rates->add_option("--p", p_label, "nominal p (-1 for infinity)");
  rates->add_option("--slope-tol", slope_tol, "pass-band half width around the theory slope");

  auto* fitg = app.add_subcommand("fitg", "fit the zero parameters from design points (CSV x)");
  std::string fitg_input;
  double hint = -1.0;
  add_common(fitg, opt);
  fitg->add_option("--input", fitg_input, "input CSV")->required();
  fitg->add_option("--x0-hint", hint, "approximate zero location");

  std::vector<std::string> args;
  try {
    args = expand_config(argc, argv);
  } catch (const input_error& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 3;
  }
  try {
    // CLI11 parses reversed argument vectors
    std::vector<std::string> rev(args.rbegin(), args.rend());
    rev.pop_back(); // program name
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0)
      return app.exit(e); // --help and friends
    std::cerr << e.what() << "\n";
    return 3;
  }

  try {
    if (est->parsed())
      return run_estimate(opt, input, fit_g, est_sigma);
    if (sim->parsed() || rates->parsed()) {
      std::vector<std::size_t> n_grid;
      std::stringstream ss(n_grid_str);
      std::string tok;
      while (std::getline(ss, tok, ','))
        n_grid.push_back(static_cast<std::size_t>(std::stoull(tok)));
      const double p = p_label < 0.0 ? std::numeric_limits<double>::infinity() : p_label;
      const auto sc = make_scenario(opt, target, n_grid, replicates, branch, fixed_design);
      return run_simulate(sc, opt, s_label, p, slope_tol, rates->parsed());
    }
    if (fitg->parsed())
      return run_fitg(opt, fitg_input, hint);
  } catch (const input_error& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 3;
  } catch (const numeric_error& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
