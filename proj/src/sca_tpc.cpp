#include "uavtpc/sca_tpc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>

#include "detail/joint_solver.hpp"
#include "detail/terms.hpp"
#include "uavtpc/errors.hpp"

namespace uavtpc {

namespace {
constexpr double kSqFloor = 1e-14;
}

SurrogateExpansion make_expansion(const std::vector<Matrix3Xd>& positions,
                                  const MatrixXd& powers_w,
                                  const Matrix3Xd& gt_positions,
                                  double gamma) {
  const int K = static_cast<int>(positions.size());
  const int M = static_cast<int>(powers_w.cols());
  if (K == 0 || powers_w.rows() != K || gt_positions.cols() != K)
    throw InvalidArgumentError("expansion: inconsistent link count");
  for (const auto& qk : positions)
    if (qk.cols() != M)
      throw InvalidArgumentError("expansion: position horizon mismatch");

  SurrogateExpansion e;
  e.gamma = gamma;
  e.num_links = K;
  e.num_slots = M;
  e.sqrt_powers = powers_w.cwiseMax(0.0).cwiseSqrt();
  e.positions = positions;
  e.sq_distances.resize(M);
  e.interference.setZero(K, M);
  for (int n = 0; n < M; ++n) {
    MatrixXd d2(K, K);
    for (int j = 0; j < K; ++j)
      for (int k = 0; k < K; ++k)
        d2(j, k) = std::max(
            (positions[j].col(n) - gt_positions.col(k)).squaredNorm(),
            kSqFloor);
    for (int k = 0; k < K; ++k) {
      double acc = 0;
      for (int j = 0; j < K; ++j)
        if (j != k) acc += gamma * powers_w(j, n) / d2(j, k);
      e.interference(k, n) = acc;
    }
    e.sq_distances[n] = std::move(d2);
  }
  return e;
}

double surrogate_rate(const VectorXd& a, const Matrix3Xd& q,
                      const SurrogateExpansion& exp, const Matrix3Xd& gt,
                      int k, int n, double trust_frac) {
  const int K = exp.num_links;
  if (a.size() != K || q.cols() != K || k < 0 || k >= K || n < 0 ||
      n >= exp.num_slots)
    throw InvalidArgumentError("surrogate_rate: bad arguments");
  const double ir = exp.interference(k, n);
  double u = 1;
  double penalty = 0;
  for (int j = 0; j < K; ++j) {
    const double dr = exp.sq_distances[n](j, k);
    const double ar = exp.sqrt_powers(j, n);
    const Vector3d dq = q.col(j) - gt.col(k);
    u += exp.gamma *
         (2 * ar * a[j] / dr - ar * ar * dq.squaredNorm() / (dr * dr));
    if (j != k) {
      const Vector3d m = 2.0 * (exp.positions[j].col(n) - gt.col(k));
      const double ell = dr + m.dot(q.col(j) - exp.positions[j].col(n));
      if (ell < trust_frac * dr)
        throw InvalidArgumentError(
            "surrogate_rate: point outside the interference trust region");
      penalty += exp.gamma * a[j] * a[j] / ell;
    }
  }
  if (u <= 0) return -std::numeric_limits<double>::infinity();
  return std::log(u) - std::log1p(ir) + ir / (1 + ir) - penalty / (1 + ir);
}

double linearized_separation(const Vector3d& q_k, const Vector3d& q_j,
                             const SurrogateExpansion& exp, int k, int j,
                             int n, double d_min) {
  const Vector3d dr = exp.positions[k].col(n) - exp.positions[j].col(n);
  return 2.0 * dr.dot(q_k - q_j) - dr.squaredNorm() - d_min * d_min;
}

namespace detail {

VectorXd pack_state(const HalfState& st) {
  const int K = st.num_links(), M = st.num_slots();
  VectorXd x(4 * K * M);
  for (int n = 0; n < M; ++n)
    for (int k = 0; k < K; ++k) {
      x[var_a(K, n, k)] = st.a(k, n);
      for (int c = 0; c < 3; ++c) x[var_q(K, n, k, c)] = st.q[k](c, n);
    }
  return x;
}

HalfState unpack_state(const VectorXd& x, int K, int M) {
  HalfState st;
  st.a.resize(K, M);
  st.q.assign(K, Matrix3Xd(3, M));
  for (int n = 0; n < M; ++n)
    for (int k = 0; k < K; ++k) {
      st.a(k, n) = x[var_a(K, n, k)];
      for (int c = 0; c < 3; ++c) st.q[k](c, n) = x[var_q(K, n, k, c)];
    }
  return st;
}

ipm::ConvexProgram build_joint_program(const Scaled& sc,
                                       const SurrogateExpansion& exp,
                                       const JointOptions& opt) {
  const int K = exp.num_links, M = exp.num_slots;
  ipm::ConvexProgram prog;
  prog.dimension = 4 * K * M;
  prog.block_sizes.assign(M, 4 * K);
  const VectorXd w = opt.slot_weights.size() ? opt.slot_weights
                                             : VectorXd::Ones(M);
  const Matrix3Xd& q0 = opt.q0.cols() ? opt.q0 : sc.start;
  // A collapsed altitude band pins z by equality instead of an (empty)
  // open interval between the two bounds.
  const bool fixed_alt = sc.h_max - sc.h_min < 1e-9;

  for (int n = 0; n < M; ++n) {
    for (int k = 0; k < K; ++k) {
      // Rate surrogate for receiver k.
      std::vector<int> slot_vars(4 * K);
      std::iota(slot_vars.begin(), slot_vars.end(), n * 4 * K);
      VectorXd alpha(K), beta(K);
      for (int j = 0; j < K; ++j) {
        const double dr = exp.sq_distances[n](j, k);
        const double ar = exp.sqrt_powers(j, n);
        alpha[j] = 2 * ar / dr;
        beta[j] = ar * ar / (dr * dr);
      }
      const double ir = exp.interference(k, n);
      const double c0 = -std::log1p(ir) + ir / (1 + ir);
      prog.objective.push_back(joint_log_term(std::move(slot_vars), alpha,
                                              beta, sc.gt.col(k), c0, w[n]));
      for (int j = 0; j < K; ++j) {
        if (j == k) continue;
        const double dr = exp.sq_distances[n](j, k);
        const Vector3d qr = exp.positions[j].col(n);
        const Vector3d m = 2.0 * (qr - sc.gt.col(k));
        const double ell0 = dr - m.dot(qr);
        std::vector<int> jv = {var_a(K, n, j), var_q(K, n, j, 0),
                               var_q(K, n, j, 1), var_q(K, n, j, 2)};
        prog.objective.push_back(
            interference_term(jv, m, ell0, w[n] / (1 + ir)));
        // Trust region keeping the linearized squared distance positive:
        // trust_frac * d^r - (ell0 + m . q_j) <= 0.
        prog.inequalities.push_back(affine_ineq(
            {jv[1], jv[2], jv[3]}, -m, opt.trust_frac * dr - ell0));
      }
    }

    for (int k = 0; k < K; ++k) {
      prog.inequalities.push_back(bound_lower(var_a(K, n, k), 0.0));
      prog.inequalities.push_back(bound_upper(var_a(K, n, k), sc.a_max));
      if (fixed_alt) {
        prog.equalities.push_back(
            {{var_q(K, n, k, 2)}, VectorXd::Ones(1), sc.h_min});
      } else {
        prog.inequalities.push_back(bound_lower(var_q(K, n, k, 2), sc.h_min));
        prog.inequalities.push_back(bound_upper(var_q(K, n, k, 2), sc.h_max));
      }
      if (n == 0) {
        if (opt.first_level > 0) {
          prog.inequalities.push_back(
              disc_fixed(var_q(K, 0, k, 0), var_q(K, 0, k, 1),
                         q0.col(k).head<2>(), opt.first_level));
          if (!fixed_alt) {
            prog.inequalities.push_back(
                bound_upper(var_q(K, 0, k, 2), q0(2, k) + opt.first_up));
            prog.inequalities.push_back(
                bound_lower(var_q(K, 0, k, 2), q0(2, k) - opt.first_down));
          }
        }
      } else if (opt.chain) {
        prog.inequalities.push_back(
            disc_pair({var_q(K, n - 1, k, 0), var_q(K, n - 1, k, 1),
                       var_q(K, n, k, 0), var_q(K, n, k, 1)},
                      opt.chain_level));
        if (!fixed_alt) {
          VectorXd up(2), down(2);
          up << -1, 1;  // z_n - z_{n-1} <= chain_up
          down << 1, -1;
          prog.inequalities.push_back(
              affine_ineq({var_q(K, n - 1, k, 2), var_q(K, n, k, 2)}, up,
                          -opt.chain_up));
          prog.inequalities.push_back(
              affine_ineq({var_q(K, n - 1, k, 2), var_q(K, n, k, 2)}, down,
                          -opt.chain_down));
        }
      }
    }

    if (opt.separation && K > 1) {
      for (int k = 0; k < K; ++k)
        for (int j = k + 1; j < K; ++j) {
          const Vector3d dr =
              exp.positions[k].col(n) - exp.positions[j].col(n);
          VectorXd coef(6);
          coef << -2 * dr, 2 * dr;
          prog.inequalities.push_back(affine_ineq(
              {var_q(K, n, k, 0), var_q(K, n, k, 1), var_q(K, n, k, 2),
               var_q(K, n, j, 0), var_q(K, n, j, 1), var_q(K, n, j, 2)},
              std::move(coef),
              dr.squaredNorm() + sc.d_min * sc.d_min));
        }
    }
  }

  if (opt.anchored) {
    const int n = M - 1;
    for (int k = 0; k < K; ++k) {
      prog.equalities.push_back(
          {{var_a(K, n, k)}, VectorXd::Ones(1), opt.anchor_a[k]});
      for (int c = 0; c < 3; ++c)
        prog.equalities.push_back(
            {{var_q(K, n, k, c)}, VectorXd::Ones(1), opt.anchor_q(c, k)});
    }
  }
  return prog;
}

double joint_objective(const Scaled& sc, const HalfState& st,
                       const VectorXd& weights) {
  const int K = st.num_links(), M = st.num_slots();
  double total = 0;
  Matrix3Xd qn(3, K);
  for (int n = 0; n < M; ++n) {
    for (int k = 0; k < K; ++k) qn.col(k) = st.q[k].col(n);
    const double wn = weights.size() ? weights[n] : 1.0;
    total += wn * slot_rate_nats(st.a.col(n), qn, sc.gt);
  }
  return total;
}

JointResult run_joint_sca(const Scaled& sc, const HalfState& init,
                          const JointOptions& opt, const ScaConfig& cfg) {
  const int K = init.num_links(), M = init.num_slots();
  JointResult res;
  res.state = init;
  if (opt.anchored && M == 1) {
    // Fully pinned: nothing to optimize.
    res.state.a.col(0) = opt.anchor_a;
    for (int k = 0; k < K; ++k) res.state.q[k].col(0) = opt.anchor_q.col(k);
    res.trace.push_back(joint_objective(sc, res.state, opt.slot_weights));
    return res;
  }
  double obj = joint_objective(sc, res.state, opt.slot_weights);
  res.trace.push_back(obj);
  MatrixXd powers(K, M);
  for (int iter = 1; iter <= cfg.max_iter; ++iter) {
    powers = res.state.a.array().square();
    const SurrogateExpansion exp =
        make_expansion(res.state.q, powers, sc.gt, 1.0);
    ipm::ConvexProgram prog = build_joint_program(sc, exp, opt);
    prog.start = pack_state(res.state);
    const ipm::IpmResult sol = ipm::maximize(prog);
    res.state = unpack_state(sol.x, K, M);
    const double next = joint_objective(sc, res.state, opt.slot_weights);
    res.trace.push_back(next);
    res.newton_iters.push_back(sol.diag.newton_iterations);
    res.iterations = iter;
    const bool done =
        next - obj <= cfg.rel_tol * std::max(std::abs(obj), 1e-12);
    obj = next;
    if (done) break;
  }
  return res;
}

}  // namespace detail

TrajectorySolution solve_sca_tpc(const Scenario& scen,
                                 const Matrix3Xd& anchor_positions,
                                 const VectorXd& anchor_powers_w,
                                 const TrajectorySolution& init,
                                 const ScaConfig& cfg, ScaTrace* trace) {
  const auto t0 = std::chrono::steady_clock::now();
  scen.validate();
  const int K = scen.num_links;
  if (anchor_positions.cols() != K || anchor_powers_w.size() != K)
    throw InvalidArgumentError("solve_sca_tpc: anchor size mismatch");
  if (init.num_links() != K || init.num_slots() < 1)
    throw InvalidArgumentError("solve_sca_tpc: bad initial trajectory");

  const detail::Scaled sc = detail::Scaled::from(scen);
  detail::JointOptions opt;
  opt.first_level = sc.step_level;
  opt.first_up = sc.step_vert;
  opt.first_down = sc.step_vert;
  opt.chain = init.num_slots() > 1;
  opt.chain_level = sc.step_level;
  opt.chain_up = sc.step_vert;
  opt.chain_down = sc.step_vert;
  opt.anchored = true;
  opt.anchor_a =
      (anchor_powers_w / sc.power_unit).cwiseMax(0.0).cwiseSqrt();
  opt.anchor_q = anchor_positions / sc.length_unit;

  const detail::HalfState st0 = detail::to_scaled(init, sc);
  const detail::JointResult r = detail::run_joint_sca(sc, st0, opt, cfg);

  TrajectorySolution out = detail::from_scaled(r.state, sc);
  // Re-pin the anchors in SI units: the unit round trip costs an ulp.
  const int last = out.num_slots() - 1;
  for (int k = 0; k < K; ++k) {
    out.positions[k].col(last) = anchor_positions.col(k);
    out.powers_w(k, last) = anchor_powers_w[k];
  }
  fill_rates(out, scen);
  out.iterations = r.iterations;
  out.solve_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  if (trace) {
    trace->objective_bps.assign(r.trace.begin(), r.trace.end());
    for (double& v : trace->objective_bps) v *= sc.rate_unit;
    trace->newton_iterations = r.newton_iters;
  }
  return out;
}

}  // namespace uavtpc
