#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "fringe/lcp.hpp"
#include "fringe/numerics.hpp"

using namespace fringe;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Brute-force oracle: try every complementarity pattern, solve the implied
// linear system, keep feasible solutions.
std::vector<VectorXd> enumerate_lcp(const MatrixXd& M, const VectorXd& q) {
  const int n = static_cast<int>(q.size());
  std::vector<VectorXd> solutions;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    std::vector<int> basic;
    for (int i = 0; i < n; ++i) {
      if (mask & (1u << i)) basic.push_back(i);
    }
    VectorXd z = VectorXd::Zero(n);
    if (!basic.empty()) {
      const int k = static_cast<int>(basic.size());
      MatrixXd Ms(k, k);
      VectorXd qs(k);
      for (int a = 0; a < k; ++a) {
        qs(a) = q(basic[a]);
        for (int b = 0; b < k; ++b) Ms(a, b) = M(basic[a], basic[b]);
      }
      try {
        VectorXd zs = solve_linear(Ms, -qs);
        for (int a = 0; a < k; ++a) z(basic[a]) = zs(a);
      } catch (const SingularMatrix&) {
        continue;
      }
    }
    VectorXd w = q + M * z;
    if (z.minCoeff() < -1e-9 || w.minCoeff() < -1e-9) continue;
    bool complementary = true;
    for (int i = 0; i < n; ++i) {
      if (std::min(z(i), w(i)) > 1e-7) complementary = false;
    }
    if (complementary) solutions.push_back(z);
  }
  return solutions;
}

MatrixXd random_psd(std::mt19937& rng, int n, double reg) {
  std::normal_distribution<double> gauss;
  MatrixXd A(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) A(i, j) = gauss(rng);
  }
  return A * A.transpose() + reg * MatrixXd::Identity(n, n);
}

}  // namespace

TEST_CASE("nonnegative q solves trivially") {
  LcpProblem p;
  p.M = MatrixXd::Identity(3, 3);
  p.q = VectorXd::Constant(3, 0.5);
  LcpSolution sol = lemke_solve(p);
  CHECK(sol.z.cwiseAbs().maxCoeff() == 0.0);
  CHECK((sol.w - p.q).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("two-variable instance against hand enumeration") {
  LcpProblem p;
  p.M.resize(2, 2);
  p.M << 2, 1, 1, 2;
  p.q = VectorXd::Constant(2, -1.0);
  LcpSolution sol = lemke_solve(p);
  // All four patterns enumerated: only z = (1/3, 1/3) is feasible.
  auto oracle = enumerate_lcp(p.M, p.q);
  REQUIRE(!oracle.empty());
  CHECK(sol.z(0) == doctest::Approx(1.0 / 3.0));
  CHECK(sol.z(1) == doctest::Approx(1.0 / 3.0));
  CHECK(sol.comp_residual <= 1e-6);
}

TEST_CASE("lemke matches pattern enumeration on random monotone instances") {
  std::mt19937 rng(123);
  std::normal_distribution<double> gauss;
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 4 + static_cast<int>(rng() % 5);  // 4..8
    LcpProblem p;
    p.M = random_psd(rng, n, 0.5);
    p.q.resize(n);
    for (int i = 0; i < n; ++i) p.q(i) = gauss(rng) * 2.0;
    LemkeOptions opts;
    opts.paranoid_basis_check = true;
    LcpSolution sol = lemke_solve(p, opts);
    LcpResiduals r = residuals(p, sol.z);
    CHECK(r.comp_residual <= 1e-6 * (1.0 + p.q.cwiseAbs().maxCoeff()));
    CHECK(r.bound_violation <= 1e-7 * (1.0 + p.q.cwiseAbs().maxCoeff()));

    auto oracle = enumerate_lcp(p.M, p.q);
    REQUIRE(!oracle.empty());
    // strictly convex: the solution is unique, so the oracle must agree
    double best = 1e30;
    for (const auto& z : oracle) {
      best = std::min(best, (z - sol.z).cwiseAbs().maxCoeff());
    }
    CHECK(best <= 1e-5 * (1.0 + sol.z.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("larger instances stay complementary") {
  std::mt19937 rng(5);
  std::normal_distribution<double> gauss;
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 12;
    LcpProblem p;
    p.M = random_psd(rng, n, 0.2);
    p.q.resize(n);
    for (int i = 0; i < n; ++i) p.q(i) = gauss(rng) * 3.0;
    LcpSolution sol = lemke_solve(p);
    LcpResiduals r = residuals(p, sol.z);
    const double scale = 1.0 + p.q.cwiseAbs().maxCoeff();
    CHECK(r.comp_residual <= 1e-6 * scale);
    CHECK(r.bound_violation <= 1e-7 * scale);
    for (int i = 0; i < n; ++i) {
      CHECK(sol.z(i) * sol.w(i) <= 1e-6 * scale);
    }
  }
}

TEST_CASE("free variables are eliminated through their equality rows") {
  std::mt19937 rng(17);
  std::normal_distribution<double> gauss;
  const int n = 6;
  LcpProblem p;
  p.M = random_psd(rng, n, 0.8);
  p.q.resize(n);
  for (int i = 0; i < n; ++i) p.q(i) = gauss(rng) * 2.0;
  p.free_set = {0, 3};
  LcpSolution sol = lemke_solve(p);
  CHECK(sol.eq_residual <= 1e-6 * (1.0 + p.q.cwiseAbs().maxCoeff()));
  for (int i : {1, 2, 4, 5}) {
    CHECK(sol.z(i) >= -1e-9);
    CHECK(sol.w(i) >= -1e-9 * (1.0 + p.q.cwiseAbs().maxCoeff()));
    CHECK(std::min(sol.z(i), sol.w(i)) <= 1e-6 * (1.0 + p.q.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("residuals reports negative sides as bound violations") {
  LcpProblem p;
  p.M = MatrixXd::Identity(2, 2);
  p.q.resize(2);
  p.q << -0.7, 0.3;
  VectorXd z = VectorXd::Zero(2);
  LcpResiduals r = residuals(p, z);
  CHECK(r.comp_residual == doctest::Approx(0.0));
  CHECK(r.bound_violation == doctest::Approx(0.7));
}

TEST_CASE("residuals equals an independent recomputation") {
  std::mt19937 rng(31);
  std::normal_distribution<double> gauss;
  const int n = 5;
  LcpProblem p;
  p.M = random_psd(rng, n, 0.1);
  p.q.resize(n);
  VectorXd z(n);
  for (int i = 0; i < n; ++i) {
    p.q(i) = gauss(rng);
    z(i) = std::abs(gauss(rng));
  }
  LcpResiduals r = residuals(p, z);
  // duplicate arithmetic, written out independently
  double comp = 0.0, bound = 0.0;
  for (int i = 0; i < n; ++i) {
    double w_i = p.q(i);
    for (int j = 0; j < n; ++j) w_i += p.M(i, j) * z(j);
    comp = std::max(comp, std::max(0.0, std::min(z(i), w_i)));
    bound = std::max(bound, std::max(0.0, -std::min(z(i), w_i)));
  }
  CHECK(r.comp_residual == doctest::Approx(comp));
  CHECK(r.bound_violation == doctest::Approx(bound));
}

TEST_CASE("infeasible instance raises RayTermination") {
  LcpProblem p;
  p.M.resize(2, 2);
  p.M << 0, -1, 0, 0;
  p.q.resize(2);
  p.q << -1.0, 1.0;  // w0 = -1 - z1 can never reach 0 with z1 >= 0
  LemkeOptions opts;
  opts.retry_on_ray = false;
  CHECK_THROWS_AS(lemke_solve(p, opts), RayTermination);
}
