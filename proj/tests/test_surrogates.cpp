#include <cmath>
#include <random>

#include "detail/joint_solver.hpp"
#include "detail/scaling.hpp"
#include "detail/terms.hpp"
#include "doctest.h"
#include "test_util.hpp"
#include "uavtpc/sca_tpc.hpp"

using namespace uavtpc;
using testutil::uniform;

namespace {

// Two links, one slot, hand-pickable geometry.
struct Fixture {
  Matrix3Xd gt{3, 2};
  std::vector<Matrix3Xd> pos;
  MatrixXd powers{2, 1};
  double gamma = 1e7;

  Fixture() {
    gt.col(0) << 0, 0, 0;
    gt.col(1) << 300, 0, 0;
    pos.assign(2, Matrix3Xd(3, 1));
    pos[0].col(0) << 0, 0, 100;     // directly above GT 0
    pos[1].col(0) << 300, 0, 100;   // directly above GT 1
    powers << 0.5, 0.8;
  }
};

VectorXd sqrtp(const MatrixXd& p, int n) {
  return p.col(n).cwiseSqrt();
}

Matrix3Xd slot_positions(const std::vector<Matrix3Xd>& pos, int n) {
  Matrix3Xd q(3, pos.size());
  for (size_t k = 0; k < pos.size(); ++k) q.col(k) = pos[k].col(n);
  return q;
}

}  // namespace

TEST_CASE("expansion stores distances and interference") {
  Fixture f;
  auto e = make_expansion(f.pos, f.powers, f.gt, f.gamma);
  CHECK(e.num_links == 2);
  CHECK(e.num_slots == 1);
  CHECK(e.sq_distances[0](0, 0) == doctest::Approx(1e4).epsilon(1e-12));
  // |q_1 - s_0|^2 = 300^2 + 100^2 = 1e5
  CHECK(e.sq_distances[0](1, 0) == doctest::Approx(1e5).epsilon(1e-12));
  // I_0 = gamma * p_1 / d_10 = 1e7 * 0.8 / 1e5 = 80
  CHECK(e.interference(0, 0) == doctest::Approx(80.0).epsilon(1e-12));
  CHECK(e.interference(1, 0) == doctest::Approx(1e7 * 0.5 / 1e5).epsilon(1e-12));
}

TEST_CASE("surrogate is tight at the expansion point") {
  Fixture f;
  auto e = make_expansion(f.pos, f.powers, f.gt, f.gamma);
  const Matrix3Xd q = slot_positions(f.pos, 0);
  for (int k = 0; k < 2; ++k) {
    const double truth =
        compute_rate_nats(f.powers.col(0), q, k, f.gt, f.gamma);
    const double sur = surrogate_rate(sqrtp(f.powers, 0), q, e, f.gt, k, 0);
    CHECK(sur == doctest::Approx(truth).epsilon(1e-12));
  }
}

TEST_CASE("surrogate lower-bounds the true rate near the expansion") {
  Fixture f;
  auto e = make_expansion(f.pos, f.powers, f.gt, f.gamma);
  std::mt19937_64 rng(7);
  int checked = 0;
  for (int trial = 0; trial < 400; ++trial) {
    VectorXd a(2);
    Matrix3Xd q(3, 2);
    MatrixXd p(2, 1);
    for (int k = 0; k < 2; ++k) {
      a[k] = uniform(rng, 1e-4, 1.0);
      p(k, 0) = a[k] * a[k];
      for (int c = 0; c < 3; ++c)
        q(c, k) = f.pos[k](c, 0) + uniform(rng, -8, 8);
    }
    double sur;
    try {
      sur = 0;
      for (int k = 0; k < 2; ++k)
        sur += surrogate_rate(a, q, e, f.gt, k, 0);
    } catch (const InvalidArgumentError&) {
      continue;  // left the trust region
    }
    double truth = 0;
    for (int k = 0; k < 2; ++k)
      truth += compute_rate_nats(p.col(0), q, k, f.gt, f.gamma);
    CHECK(sur <= truth + 1e-9);
    ++checked;
  }
  CHECK(checked > 300);
}

TEST_CASE("linearized separation: frozen value and implication") {
  Fixture f;
  auto e = make_expansion(f.pos, f.powers, f.gt, f.gamma);
  const double d_min = 150;  // the pair sits at distance 300 = 2 * d_min
  const double rho =
      linearized_separation(f.pos[0].col(0), f.pos[1].col(0), e, 0, 1, 0,
                            d_min);
  // 2|dr|^2 - |dr|^2 - d_min^2 = 4 d_min^2 - d_min^2
  CHECK(rho == doctest::Approx(3 * d_min * d_min).epsilon(1e-12));

  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    Vector3d qk = f.pos[0].col(0), qj = f.pos[1].col(0);
    for (int c = 0; c < 3; ++c) {
      qk[c] += uniform(rng, -200, 200);
      qj[c] += uniform(rng, -200, 200);
    }
    if (linearized_separation(qk, qj, e, 0, 1, 0, d_min) >= 0)
      CHECK((qk - qj).norm() >= d_min * (1 - 1e-12));
  }
}

namespace {

// Finite-difference check of a smooth term's gradient and Hessian.
void check_derivatives(const ipm::SmoothTerm& term, const VectorXd& x0) {
  const int n = static_cast<int>(term.vars.size());
  VectorXd g(n);
  MatrixXd h(n, n);
  const double f0 = term.eval(x0, &g, &h);
  CHECK(std::isfinite(f0));
  const double step = 1e-6;
  for (int i = 0; i < n; ++i) {
    VectorXd xp = x0, xm = x0;
    xp[i] += step;
    xm[i] -= step;
    VectorXd gp(n), gm(n);
    const double fp = term.eval(xp, &gp, nullptr);
    const double fm = term.eval(xm, &gm, nullptr);
    const double fd = (fp - fm) / (2 * step);
    CHECK(g[i] == doctest::Approx(fd).epsilon(1e-5).scale(
                      std::max(1.0, std::abs(g[i]))));
    for (int j = 0; j < n; ++j) {
      const double hd = (gp[j] - gm[j]) / (2 * step);
      CHECK(h(j, i) == doctest::Approx(hd).epsilon(2e-4).scale(
                           std::max(1.0, std::abs(h(j, i)))));
    }
  }
}

}  // namespace

TEST_CASE("rate term derivatives match finite differences") {
  // Scaled-unit magnitudes: distances O(1..10), sqrt-powers O(10).
  VectorXd alpha(2), beta(2);
  alpha << 0.8, 0.3;
  beta << 0.05, 0.02;
  Vector3d s(1.5, -0.5, 0);
  auto term = detail::joint_log_term({0, 1, 2, 3, 4, 5, 6, 7}, alpha, beta, s,
                                     -0.3, 1.7);
  VectorXd x(8);
  x << 9.0, 2.0, 1.0, 1.2, 11.0, -2.5, 0.5, 1.1;
  check_derivatives(term, x);

  Vector3d m(4.0, -1.0, 2.2);
  auto intf = detail::interference_term({0, 1, 2, 3}, m, 3.0, 0.25);
  VectorXd y(4);
  y << 6.0, 1.0, 0.4, 1.3;
  check_derivatives(intf, y);
}

TEST_CASE("joint program objective equals the sum of surrogates") {
  auto scen = testutil::ring_scenario(2);
  const detail::Scaled sc = detail::Scaled::from(scen);

  // A small strictly feasible two-slot state.
  detail::HalfState st;
  st.a.resize(2, 2);
  st.a << 2.1, 2.3, 1.7, 2.9;  // scaled sqrt-powers (a_max ~ 31.6)
  st.q.assign(2, Matrix3Xd(3, 2));
  st.q[0].col(0) = sc.start.col(0) + Vector3d(0.05, 0.01, 0.02);
  st.q[0].col(1) = st.q[0].col(0) + Vector3d(0.08, 0.0, 0.01);
  st.q[1].col(0) = sc.start.col(1) + Vector3d(-0.04, 0.02, 0.03);
  st.q[1].col(1) = st.q[1].col(0) + Vector3d(-0.07, 0.01, 0.0);

  const MatrixXd powers = st.a.array().square();
  const auto exp = make_expansion(st.q, powers, sc.gt, 1.0);
  detail::JointOptions opt;
  opt.first_level = sc.step_level;
  opt.first_up = sc.step_vert;
  opt.first_down = sc.step_vert;
  opt.chain = true;
  opt.chain_level = sc.step_level;
  opt.chain_up = sc.step_vert;
  opt.chain_down = sc.step_vert;
  auto prog = detail::build_joint_program(sc, exp, opt);

  // Evaluate all objective terms at a point (expansion itself, then a nearby
  // strictly-in-trust-region point) and compare with surrogate_rate sums.
  for (double shift : {0.0, 0.015}) {
    detail::HalfState pt = st;
    for (int k = 0; k < 2; ++k)
      for (int n = 0; n < 2; ++n) {
        pt.a(k, n) += shift;
        pt.q[k](0, n) += shift * (k ? -1 : 1);
      }
    const VectorXd x = detail::pack_state(pt);
    double from_terms = 0;
    for (const auto& term : prog.objective) {
      VectorXd local(term.vars.size());
      for (size_t i = 0; i < term.vars.size(); ++i)
        local[i] = x[term.vars[i]];
      from_terms += term.eval(local, nullptr, nullptr);
    }
    double from_surrogate = 0;
    for (int n = 0; n < 2; ++n) {
      Matrix3Xd qn(3, 2);
      VectorXd an(2);
      for (int k = 0; k < 2; ++k) {
        qn.col(k) = pt.q[k].col(n);
        an[k] = pt.a(k, n);
      }
      for (int k = 0; k < 2; ++k)
        from_surrogate += surrogate_rate(an, qn, exp, sc.gt, k, n);
    }
    CHECK(from_terms ==
          doctest::Approx(from_surrogate).epsilon(1e-10));
  }
}
