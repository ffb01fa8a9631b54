#include <cmath>
#include <random>
#include <vector>

#include "detail/consensus.hpp"
#include "detail/terms.hpp"
#include "doctest.h"
#include "test_util.hpp"
#include "uavtpc/deployment.hpp"
#include "uavtpc/parallel_tpc.hpp"
#include "uavtpc/sca_tpc.hpp"
#include "uavtpc/trajectory_init.hpp"

using namespace uavtpc;
namespace ud = uavtpc::detail;

namespace {

struct Pipeline {
  Scenario scen;
  DeploymentSolution hover;
  TrajectorySolution init;

  explicit Pipeline(int k_links, double total_time_s = 120) {
    scen = testutil::ring_scenario(k_links, 400, total_time_s);
    hover = solve_deployment(scen);
    const int m = estimate_reduced_horizon(scen, hover.positions, 2);
    init = build_initial_trajectory(scen, hover, m, nullptr);
  }
};

double eval_objective(const ipm::ConvexProgram& prog, const VectorXd& x) {
  double total = 0;
  for (const auto& t : prog.objective) {
    VectorXd local(t.vars.size());
    for (size_t i = 0; i < t.vars.size(); ++i) local[i] = x[t.vars[i]];
    total += t.eval(local, nullptr, nullptr);
  }
  return total;
}

// Central-difference check of one smooth term's gradient and Hessian.
void check_term_derivatives(const ipm::SmoothTerm& term, const VectorXd& x0) {
  const int n = static_cast<int>(x0.size());
  VectorXd grad(n);
  MatrixXd hess(n, n);
  const double f0 = term.eval(x0, &grad, &hess);
  REQUIRE(std::isfinite(f0));
  const double h = 1e-6;
  for (int i = 0; i < n; ++i) {
    VectorXd xp = x0, xm = x0;
    xp[i] += h;
    xm[i] -= h;
    VectorXd gp(n), gm(n);
    const double fp = term.eval(xp, &gp, nullptr);
    const double fm = term.eval(xm, &gm, nullptr);
    const double fd = (fp - fm) / (2 * h);
    CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-5).scale(
                         std::max(1.0, std::abs(grad[i]))));
    for (int j = 0; j < n; ++j) {
      const double hd = (gp[j] - gm[j]) / (2 * h);
      CHECK(hess(j, i) == doctest::Approx(hd).epsilon(2e-4).scale(
                              std::max(1.0, std::abs(hess(j, i)))));
    }
  }
}

}  // namespace

TEST_CASE("pair graph enumerates pairs and knows its spectral norm") {
  const auto g2 = ud::PairGraph::complete(2);
  REQUIRE(g2.num_pairs() == 1);
  CHECK(g2.pairs[0] == std::pair<int, int>(0, 1));
  CHECK(g2.lambda_max == 2.0);

  // Independent oracle: lambda_max(A^T A) for the stacked difference
  // operator on K nodes equals K.
  const int K = 5;
  const auto g = ud::PairGraph::complete(K);
  REQUIRE(g.num_pairs() == K * (K - 1) / 2);
  MatrixXd A = MatrixXd::Zero(g.num_pairs(), K);
  for (int p = 0; p < g.num_pairs(); ++p) {
    A(p, g.pairs[p].first) = 1;
    A(p, g.pairs[p].second) = -1;
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(A.transpose() * A);
  CHECK(es.eigenvalues().maxCoeff() == doctest::Approx(K).epsilon(1e-12));
  CHECK(g.lambda_max == doctest::Approx(K).epsilon(1e-12));
}

TEST_CASE("separation projection lands on or outside the ball") {
  const double d_min = 0.35;
  std::mt19937_64 rng(77);
  for (int s = 0; s < 500; ++s) {
    Vector3d v(testutil::uniform(rng, -1, 1), testutil::uniform(rng, -1, 1),
               testutil::uniform(rng, -1, 1));
    const Vector3d z = ud::project_separation(v, d_min);
    CHECK(z.norm() >= d_min * (1 - 1e-12));
    if (v.norm() >= d_min) {
      CHECK((z - v).norm() == 0.0);  // pass-through
    } else if (v.norm() > 0) {
      // Scaled along the same ray, landing exactly on the sphere.
      CHECK(z.norm() == doctest::Approx(d_min).epsilon(1e-12));
      CHECK(z.cross(v).norm() <= 1e-12 * z.norm() * v.norm() + 1e-15);
    }
    // Idempotent up to one rescale ulp when the norm lands on the sphere.
    CHECK((ud::project_separation(z, d_min) - z).norm() <= 1e-15);
  }
  const Vector3d zero = ud::project_separation(Vector3d::Zero(), d_min);
  CHECK(zero.norm() == doctest::Approx(d_min).epsilon(1e-12));
}

TEST_CASE("mixing weights are floored convex shares of landed power") {
  Pipeline p(3);
  const ud::Scaled sc = ud::Scaled::from(p.scen);
  const ud::HalfState st = ud::to_scaled(p.init, sc);
  const MatrixXd powers = st.a.array().square();
  const auto exp = make_expansion(st.q, powers, sc.gt, 1.0);
  const auto mu = ud::mixing_weights(exp);

  REQUIRE(static_cast<int>(mu.size()) == exp.num_slots);
  for (int n = 0; n < exp.num_slots; ++n) {
    for (int k = 0; k < 3; ++k) {
      CHECK(mu[n].col(k).sum() == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(mu[n].col(k).minCoeff() >= 0.01 / 3 / (1 + 0.01) - 1e-15);
    }
  }

  // Hand oracle on one receiver: raw shares are p_j / d_jk normalized.
  const int n = 0, k = 1;
  VectorXd raw(3);
  for (int j = 0; j < 3; ++j)
    raw[j] = powers(j, n) / exp.sq_distances[n](j, k) + 1e-12;
  raw /= raw.sum();
  VectorXd expect = raw.cwiseMax(0.01 / 3);
  if (expect.sum() > 1.0) expect /= expect.sum();
  CHECK((mu[n].col(k) - expect).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("per-UAV surrogates tile the joint rate") {
  Pipeline p(3);
  const ud::Scaled sc = ud::Scaled::from(p.scen);
  ud::HalfState st = ud::to_scaled(p.init, sc);
  const MatrixXd powers = st.a.array().square();
  const auto exp = make_expansion(st.q, powers, sc.gt, 1.0);
  const auto mu = ud::mixing_weights(exp);

  ud::JointOptions opt;  // constraints are irrelevant here
  std::vector<ipm::ConvexProgram> progs;
  for (int k = 0; k < 3; ++k)
    progs.push_back(
        ud::build_peruav_program(sc, exp, mu, k, st.q[k], 0.0, opt));

  // Tight at the expansion point: the per-UAV objectives sum to the true
  // scaled rate.
  const double truth = ud::joint_objective(sc, st, VectorXd());
  double at_ref = 0;
  for (int k = 0; k < 3; ++k)
    at_ref += eval_objective(progs[k], ud::pack_uav(st, k));
  CHECK(at_ref == doctest::Approx(truth).epsilon(1e-10));

  // Global lower bound: with every UAV moved simultaneously, the sum of the
  // per-UAV surrogates never exceeds the true rate. The perturbation radius
  // is small because the 1/mu inflation shrinks the cross-receiver log
  // domain to a few centimetres; outside it the surrogate is -inf, which
  // satisfies the bound but checks nothing.
  std::mt19937_64 rng(4242);
  int informative = 0;
  for (int s = 0; s < 300; ++s) {
    ud::HalfState moved = st;
    for (int k = 0; k < 3; ++k) {
      for (int n = 0; n < moved.num_slots(); ++n) {
        moved.a(k, n) =
            std::min(sc.a_max,
                     std::max(1e-6, moved.a(k, n) *
                                        testutil::uniform(rng, 0.999, 1.001)));
        for (int c = 0; c < 3; ++c)
          moved.q[k](c, n) += testutil::uniform(rng, -3e-4, 3e-4);
      }
    }
    double bound = 0;
    for (int k = 0; k < 3; ++k)
      bound += eval_objective(progs[k], ud::pack_uav(moved, k));
    const double actual = ud::joint_objective(sc, moved, VectorXd());
    CHECK(bound <= actual + 1e-9);
    if (std::isfinite(bound)) ++informative;
  }
  CHECK(informative >= 250);
}

TEST_CASE("generalized term factories differentiate correctly") {
  // Baseline-shifted log term as emitted for an inflated cross receiver.
  VectorXd alpha(1), beta(1);
  alpha[0] = 0.7;
  beta[0] = 0.31;
  const auto log_term = ud::joint_log_term({0, 1, 2, 3}, alpha, beta,
                                           Vector3d(1.0, 2.0, 3.0), 0.4, 1.3,
                                           2.5);
  VectorXd x0(4);
  x0 << 0.9, 1.4, 1.7, 2.6;
  check_term_derivatives(log_term, x0);

  // Interference penalty with an affine sqrt-power map.
  const auto intf = ud::interference_term({0, 1, 2, 3},
                                          Vector3d(0.2, -0.4, 2.0), 3.0, 0.8,
                                          0.6, 1.7);
  VectorXd x1(4);
  x1 << 0.8, 0.3, -0.2, 0.5;
  check_term_derivatives(intf, x1);
}

// Crossing stress case: both UAVs must swap sides of the arena, so the
// separation constraint binds hard mid-flight.
TEST_CASE("parallel solve tracks the centralized optimum on a ring") {
  Pipeline p(2);
  ParallelTrace trace;
  const auto par = solve_parallel_tpc(p.scen, p.hover.positions,
                                      p.hover.powers_w, p.init,
                                      ParallelConfig{}, &trace);
  const auto central = solve_sca_tpc(p.scen, p.hover.positions,
                                     p.hover.powers_w, p.init, ScaConfig{},
                                     nullptr);

  CHECK(par.rates_bps.sum() >= 0.98 * central.rates_bps.sum());
  CHECK(par.rates_bps.sum() >= p.init.rates_bps.sum() * (1 - 1e-10));
  CHECK(trace.converged);
  CHECK(par.iterations <= 60);

  const auto rep = check_feasibility(par, p.scen);
  CHECK(rep.feasible(p.scen, 1e-6));

  // Anchors are pinned bit-exactly, like the centralized solver.
  const int m = par.num_slots();
  for (int k = 0; k < 2; ++k) {
    for (int c = 0; c < 3; ++c)
      CHECK(par.positions[k](c, m - 1) == p.hover.positions(c, k));
    CHECK(par.powers_w(k, m - 1) == p.hover.powers_w[k]);
  }

  // The consensus residual ends within tolerance.
  REQUIRE(!trace.consensus_residual_m.empty());
  CHECK(trace.consensus_residual_m.back() <=
        1e-3 * p.scen.limits.d_min + 1e-12);
}

// Dispersed geometry: each UAV stays near its own terminal and separation
// never binds, which is the regime the iteration bound is stated for.
TEST_CASE("parallel solve settles fast when separation stays slack") {
  Scenario scen;
  scen.num_links = 2;
  scen.gt_positions.resize(3, 2);
  scen.gt_positions.col(0) << 300, 0, 0;
  scen.gt_positions.col(1) << -300, 0, 0;
  scen.uav_initial.resize(3, 2);
  scen.uav_initial.col(0) << 180, 60, 100;
  scen.uav_initial.col(1) << -180, -60, 100;
  scen.p_max_w = 0.1;
  scen.channel = ChannelParams::make(1e-5, 1e7, 1e-19);
  scen.horizon.total_time_s = 80;
  scen.horizon.finalize(scen.limits);
  scen.validate();

  const auto hover = solve_deployment(scen);
  const int m = estimate_reduced_horizon(scen, hover.positions, 2);
  const auto init = build_initial_trajectory(scen, hover, m, nullptr);

  ParallelTrace trace;
  const auto par = solve_parallel_tpc(scen, hover.positions, hover.powers_w,
                                      init, ParallelConfig{}, &trace);
  const auto central = solve_sca_tpc(scen, hover.positions, hover.powers_w,
                                     init, ScaConfig{}, nullptr);

  CHECK(trace.converged);
  CHECK(par.iterations <= 30);
  CHECK(par.rates_bps.sum() >= 0.98 * central.rates_bps.sum());
  CHECK(trace.repair_iterations == 0);
  CHECK_FALSE(trace.slack_repair);
  CHECK(check_feasibility(par, scen).feasible(scen, 1e-6));

  // Pairwise distance stays far above the floor the whole flight.
  double min_sep = 1e300;
  for (int n = 0; n < par.num_slots(); ++n)
    min_sep = std::min(min_sep,
                       (par.positions[0].col(n) - par.positions[1].col(n))
                           .norm());
  CHECK(min_sep >= 5 * scen.limits.d_min);
}

TEST_CASE("thread count does not change the parallel answer") {
  Pipeline p(3);
  ParallelConfig one, four;
  one.threads = 1;
  four.threads = 4;
  // Determinism does not require convergence; a short run keeps this cheap.
  one.max_iter = four.max_iter = 6;
  const auto a = solve_parallel_tpc(p.scen, p.hover.positions,
                                    p.hover.powers_w, p.init, one, nullptr);
  const auto b = solve_parallel_tpc(p.scen, p.hover.positions,
                                    p.hover.powers_w, p.init, four, nullptr);
  REQUIRE(a.num_slots() == b.num_slots());
  CHECK(a.rates_bps.sum() == b.rates_bps.sum());
  for (int k = 0; k < 3; ++k)
    CHECK((a.positions[k] - b.positions[k]).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.powers_w - b.powers_w).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("single link delegates to the centralized solver") {
  Pipeline p(1);
  ParallelTrace trace;
  const auto par = solve_parallel_tpc(p.scen, p.hover.positions,
                                      p.hover.powers_w, p.init,
                                      ParallelConfig{}, &trace);
  const auto central = solve_sca_tpc(p.scen, p.hover.positions,
                                     p.hover.powers_w, p.init, ScaConfig{},
                                     nullptr);
  // Same code path modulo the config mapping; rates agree tightly.
  CHECK(par.rates_bps.sum() ==
        doctest::Approx(central.rates_bps.sum()).epsilon(1e-6));
  REQUIRE(!trace.objective_bps.empty());
  CHECK(trace.consensus_residual_m.size() == trace.objective_bps.size());
  for (double r : trace.consensus_residual_m) CHECK(r == 0.0);
}
