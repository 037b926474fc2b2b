#include <doctest.h>

#include <irregwave/zero_affected.hpp>

#include <cmath>

using namespace irregwave;

namespace {

const PeriodizedBasis& haar()
{
  static PeriodizedBasis b(build_family(1), tabulate(build_family(1), 8));
  return b;
}

const PeriodizedBasis& d6()
{
  static PeriodizedBasis b(build_family(3), tabulate(build_family(3), 12));
  return b;
}

std::shared_ptr<const PeriodizedBasis> d6_ptr()
{
  static auto p = std::make_shared<const PeriodizedBasis>(build_family(3),
                                                          tabulate(build_family(3), 12));
  return p;
}

} // namespace

TEST_CASE("build_index_sets: N=3, m=4, x0=1/2 enumeration")
{
  const auto fam = build_family(3);
  const auto sets = build_index_sets(4, 4, 0.5, fam);
  CHECK(sets.k0 == doctest::Approx(8.0));
  CHECK(sets.K_phi_hit == std::vector<long long>{ 3, 4, 5, 6, 7, 8 });
  REQUIRE(sets.K_psi_hit.size() == 1);
  CHECK(sets.K_psi_hit[0] == std::vector<long long>{ 5, 6, 7, 8, 9, 10 });
  // K* = {9..13} and the wrapped block {14, 15, 0, 1, 2}
  CHECK(sets.K_star == std::vector<long long>{ 0, 1, 2, 9, 10, 11, 12, 13, 14, 15 });
}

TEST_CASE("build_index_sets: partition completeness and zero-free supports")
{
  const auto fam = build_family(3);
  for (double x0 : { 0.5, 0.31, 0.771 }) {
    for (int m : { 3, 4, 6 }) {
      const auto sets = build_index_sets(m, m + 2, x0, fam);
      CHECK(sets.K_phi_hit.size() + sets.K_phi_free.size() == (std::size_t{ 1 } << m));
      // hit set carries at most two indices beyond the support width
      CHECK(sets.K_phi_hit.size() <= static_cast<std::size_t>(fam.support_width_phi()) + 2);
      // zero-free indices exclude x0 from the support
      const auto& b = d6();
      for (long long k : sets.K_phi_free)
        CHECK(b.eval_scaling(m, k, x0) == 0.0);
      for (std::size_t lev = 0; lev < sets.K_psi_free.size(); ++lev)
        for (long long k : sets.K_psi_free[lev])
          CHECK(b.eval_wavelet(m + static_cast<int>(lev), k, x0) == 0.0);
      // K* stays inside the zero-free set
      for (long long k : sets.K_star)
        CHECK(std::find(sets.K_phi_free.begin(), sets.K_phi_free.end(), k) !=
              sets.K_phi_free.end());
    }
  }
}

TEST_CASE("pick_delta_b: zero for polynomial zeros, admissible for exponential ones")
{
  CHECK(pick_delta_b(d6(), 0.0, 1.0) == 0.0);

  const double beta = 1.0;
  const double delta = pick_delta_b(d6(), 1.0, beta);
  const auto& fam = d6().family();
  const double delta0 =
    0.5 * std::pow(3.0, beta + 1.0) /
    (2.0 * std::pow(3.0, beta + 1.0) + std::pow(fam.U_phi + fam.L_phi, beta + 1.0));
  CHECK(delta > 0.0);
  CHECK(delta < 0.5);
  CHECK(delta < delta0);
  CHECK(std::abs(d6().phi_star(fam.L_phi + delta)) > 1e-3);
  CHECK(std::abs(d6().phi_star(fam.U_phi - delta)) > 0.0);

  for (double beta2 : { 0.5, 2.0 }) {
    const double dd = pick_delta_b(d6(), 0.5, beta2);
    CHECK(dd > 0.0);
    CHECK(dd < 0.5);
  }
}

TEST_CASE("assemble_system: Haar under the uniform weight is the identity")
{
  const DesignDensity uniform(0.5, 0.0);
  const auto sets = build_index_sets(2, 2, 0.5, haar().family());
  CHECK(sets.K_phi_hit == std::vector<long long>{ 1, 2 });
  CHECK(sets.K_star == std::vector<long long>{ 0, 3 });
  const auto [A, B] = assemble_system(haar(), uniform, sets, 0.0, 10);
  CHECK(A.rows() == 2);
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c)
      CHECK(std::abs(A(r, c) - (r == c ? 1.0 : 0.0)) < 1e-12);
  // Haar supports at one level are disjoint: B vanishes identically
  for (int r = 0; r < B.rows(); ++r)
    for (int c = 0; c < B.cols(); ++c)
      CHECK(std::abs(B(r, c)) < 1e-12);
}

TEST_CASE("assemble_system: self-convergence under quadrature refinement")
{
  const DesignDensity d(0.5, 1.0); // g = 4|x - 1/2|
  const auto sets = build_index_sets(5, 5, 0.5, d6().family());
  const auto [A1, B1] = assemble_system(d6(), d, sets, 0.0, 14);
  const auto [A2, B2] = assemble_system(d6(), d, sets, 0.0, 15);
  CHECK((A1 - A2).norm() < 1e-7);
  CHECK((B1 - B2).norm() < 1e-7);
  // symmetry and positive definiteness
  CHECK((A1 - A1.transpose()).norm() < 1e-12);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A1);
  CHECK(es.eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("assemble_system: rescaled matrices converge to the level-free limit")
{
  // 2^{m alpha} A^{(m)} stabilizes entrywise as m grows (x0 dyadic keeps
  // the index offsets aligned across levels)
  const DesignDensity d(0.5, 1.0);
  const auto s7 = build_index_sets(7, 7, 0.5, d6().family());
  const auto s8 = build_index_sets(8, 8, 0.5, d6().family());
  const auto [A7, B7] = assemble_system(d6(), d, s7, 0.0, 12);
  const auto [A8, B8] = assemble_system(d6(), d, s8, 0.0, 12);
  REQUIRE(A7.rows() == A8.rows());
  const Eigen::MatrixXd R7 = std::ldexp(1.0, 7) * A7;
  const Eigen::MatrixXd R8 = std::ldexp(1.0, 8) * A8;
  const double scale = R7.cwiseAbs().maxCoeff();
  for (int r = 0; r < R7.rows(); ++r)
    for (int c = 0; c < R7.cols(); ++c)
      CHECK(std::abs(R7(r, c) - R8(r, c)) < 0.05 * scale);
}

TEST_CASE("estimate_rhs: zero responses and unbiasedness for f = 1 + x")
{
  const DesignDensity d(0.5, 1.0);
  const auto sets = build_index_sets(3, 3, 0.5, d6().family());
  const auto sample = draw(d, 4000, 11);
  const std::vector<double> zeros(sample.xs.size(), 0.0);
  const auto c0 = estimate_rhs(sample.xs, zeros, d6(), sets, 0.0);
  CHECK(c0.norm() == 0.0);

  // Monte Carlo mean of hat c against the quadrature right-hand side,
  // 200 replicates, sigma = 1
  auto f = [](double x) { return 1.0 + x; };
  const auto& fam = d6().family();
  Eigen::VectorXd c_quad(static_cast<Eigen::Index>(sets.K_phi_hit.size()));
  for (std::size_t r = 0; r < sets.K_phi_hit.size(); ++r) {
    const auto l = sets.K_phi_hit[r];
    c_quad(static_cast<Eigen::Index>(r)) =
      std::pow(2.0, -0.5 * 3) * detail::integrate_cells(
        [&](double t) {
          const double x = detail::mod1(std::ldexp(t + static_cast<double>(l), -3));
          return d6().phi_star(t) * f(x) * d.eval_g(x);
        },
        fam.L_phi, fam.U_phi, 1 << 14);
  }
  const int R = 200;
  const std::size_t n = 3000;
  Eigen::MatrixXd draws(R, c_quad.size());
  for (int r = 0; r < R; ++r) {
    const auto s = draw(d, n, derive_seed(31337, r));
    Rng noise(derive_seed(909, r));
    std::vector<double> ys(n);
    for (std::size_t i = 0; i < n; ++i)
      ys[i] = f(s.xs[i]) + noise.normal();
    draws.row(r) = estimate_rhs(s.xs, ys, d6(), sets, 0.0).transpose();
  }
  for (Eigen::Index q = 0; q < c_quad.size(); ++q) {
    const double mean = draws.col(q).mean();
    const double var = (draws.col(q).array() - mean).square().sum() / (R - 1);
    const double se = std::sqrt(var / R);
    CHECK(std::abs(mean - c_quad(q)) < 3.0 * se + 1e-10);
  }
}

TEST_CASE("estimate_rhs: noiseless large-sample mean matches the quadrature rhs")
{
  const DesignDensity d(0.5, 1.0);
  const auto sets = build_index_sets(3, 3, 0.5, d6().family());
  auto f = [](double x) { return 1.0 + x; };
  const auto s = draw(d, 1000000, 991);
  std::vector<double> ys(s.xs.size());
  for (std::size_t i = 0; i < ys.size(); ++i)
    ys[i] = f(s.xs[i]);
  const auto c_hat = estimate_rhs(s.xs, ys, d6(), sets, 0.0);
  const auto& fam = d6().family();
  for (std::size_t r = 0; r < sets.K_phi_hit.size(); ++r) {
    const auto l = sets.K_phi_hit[r];
    const double c_quad =
      std::pow(2.0, -0.5 * 3) * detail::integrate_cells(
        [&](double t) {
          const double x = detail::mod1(std::ldexp(t + static_cast<double>(l), -3));
          return d6().phi_star(t) * f(x) * d.eval_g(x);
        },
        fam.L_phi, fam.U_phi, 1 << 14);
    CHECK(std::abs(c_hat(static_cast<Eigen::Index>(r)) - c_quad) < 5e-3);
  }
}

TEST_CASE("solve_local: manufactured solution and degenerate inputs")
{
  const DesignDensity d(0.5, 2.0);
  const auto sets = build_index_sets(4, 4, 0.5, d6().family());
  const auto [A, B] = assemble_system(d6(), d, sets, 0.0, 12);

  Eigen::VectorXd u_star(A.rows());
  for (int i = 0; i < u_star.size(); ++i)
    u_star(i) = std::sin(1.0 + i);
  Eigen::VectorXd v_hat(B.cols());
  for (int i = 0; i < v_hat.size(); ++i)
    v_hat(i) = 0.25 * i - 0.3;
  const Eigen::VectorXd c_hat = A * u_star + B * v_hat;
  double cond = 0.0;
  const Eigen::VectorXd u = solve_local(A, B, c_hat, v_hat, &cond);
  CHECK((u - u_star).norm() < 1e-9);
  CHECK(cond > 0.0);

  const Eigen::VectorXd z = solve_local(A, B, Eigen::VectorXd::Zero(A.rows()),
                                        Eigen::VectorXd::Zero(B.cols()));
  CHECK(z.norm() == 0.0);

  Eigen::MatrixXd indef = Eigen::MatrixXd::Identity(3, 3);
  indef(2, 2) = -1.0;
  CHECK_THROWS_AS(solve_local(indef, Eigen::MatrixXd(3, 0), Eigen::VectorXd::Zero(3),
                              Eigen::VectorXd(0)),
                  numeric_error);
}

TEST_CASE("solve_local: noiseless f in V_m is recovered exactly")
{
  // with eps^{(m)} = 0 the system is exact: quadrature c and exact a_mk
  // reproduce the zero-affected coefficients
  const DesignDensity d(0.5, 1.0);
  const int m = 4;
  const auto sets = build_index_sets(m, m, 0.5, d6().family());
  const auto [A, B] = assemble_system(d6(), d, sets, 0.0, 14);

  // f = sum over all k of known coefficients a_mk
  std::vector<double> a_true(std::size_t{ 1 } << m);
  for (std::size_t k = 0; k < a_true.size(); ++k)
    a_true[k] = std::cos(0.7 * static_cast<double>(k)) + 0.2;
  auto f = [&](double x) {
    double acc = 0.0;
    for (std::size_t k = 0; k < a_true.size(); ++k)
      acc += a_true[k] * d6().eval_scaling(m, static_cast<long long>(k), x);
    return acc;
  };

  const auto& fam = d6().family();
  Eigen::VectorXd c_quad(static_cast<Eigen::Index>(sets.K_phi_hit.size()));
  for (std::size_t r = 0; r < sets.K_phi_hit.size(); ++r) {
    const auto l = sets.K_phi_hit[r];
    c_quad(static_cast<Eigen::Index>(r)) =
      std::pow(2.0, 0.5 * m) * std::ldexp(1.0, -m) *
      detail::integrate_cells(
        [&](double t) {
          const double x = detail::mod1(std::ldexp(t + static_cast<double>(l), -m));
          return d6().phi_star(t) * f(x) * d.eval_g(x);
        },
        fam.L_phi, fam.U_phi, 1 << 14);
  }
  Eigen::VectorXd v(static_cast<Eigen::Index>(sets.K_star.size()));
  for (std::size_t q = 0; q < sets.K_star.size(); ++q)
    v(static_cast<Eigen::Index>(q)) = a_true[static_cast<std::size_t>(sets.K_star[q])];

  const Eigen::VectorXd u = solve_local(A, B, c_quad, v);
  for (std::size_t r = 0; r < sets.K_phi_hit.size(); ++r)
    CHECK(std::abs(u(static_cast<Eigen::Index>(r)) -
                   a_true[static_cast<std::size_t>(sets.K_phi_hit[r])]) < 1e-6);
}

TEST_CASE("zero_affected_estimate: zero vector, single basis element")
{
  const auto basis = d6_ptr();
  const auto sets = build_index_sets(4, 4, 0.5, basis->family());
  Eigen::VectorXd u = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(sets.K_phi_hit.size()));
  const ZeroAffectedEstimate zero(basis, 4, sets.K_phi_hit, u);
  for (double x : { 0.1, 0.45, 0.9 })
    CHECK(zero(x) == 0.0);

  u(2) = 1.0;
  const ZeroAffectedEstimate single(basis, 4, sets.K_phi_hit, u);
  for (double x : { 0.3, 0.5, 0.62 })
    CHECK(single(x) ==
          doctest::Approx(basis->eval_scaling(4, sets.K_phi_hit[2], x)).epsilon(1e-12));
}

TEST_CASE("two-part reconstruction identity")
{
  // splitting a tree between hit and free indices and summing the parts
  // reproduces the full synthesis pointwise
  const auto& b = d6();
  const auto fam = b.family();
  const int m = 4, J = 6;
  const auto sets = build_index_sets(m, J - 1, 0.5, fam);

  CoefficientTree tree;
  tree.m = m;
  tree.J = J;
  Rng rng(5150);
  tree.a.resize(std::size_t{ 1 } << m);
  for (auto& v : tree.a)
    v = rng.normal();
  for (int j = m; j < J; ++j) {
    std::vector<double> lev(std::size_t{ 1 } << j);
    for (auto& v : lev)
      v = rng.normal();
    tree.b.push_back(std::move(lev));
  }

  auto part = [&](bool hit) {
    CoefficientTree t = tree;
    auto keep = [&](const std::vector<long long>& set, long long k) {
      const bool in = std::find(set.begin(), set.end(), k) != set.end();
      return hit ? in : !in;
    };
    for (long long k = 0; k < (1LL << m); ++k)
      if (!keep(sets.K_phi_hit, k))
        t.a[static_cast<std::size_t>(k)] = 0.0;
    for (int j = m; j < J; ++j)
      for (long long k = 0; k < (1LL << j); ++k)
        if (!keep(sets.K_psi_hit[static_cast<std::size_t>(j - m)], k))
          t.b[static_cast<std::size_t>(j - m)][static_cast<std::size_t>(k)] = 0.0;
    return t;
  };
  const auto f0 = part(true);
  const auto fc = part(false);
  for (int i = 0; i <= 64; ++i) {
    const double x = i / 64.0;
    CHECK(std::abs(reconstruct(f0, b, x) + reconstruct(fc, b, x) - reconstruct(tree, b, x)) <
          1e-10);
  }
}
