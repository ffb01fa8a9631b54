#include "uavtpc/parallel_tpc.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <thread>
#include <utility>
#include <vector>

#include "detail/consensus.hpp"
#include "detail/terms.hpp"
#include "uavtpc/errors.hpp"
#include "uavtpc/sca_tpc.hpp"

namespace uavtpc {

namespace detail {

std::vector<MatrixXd> mixing_weights(const SurrogateExpansion& exp) {
  const int K = exp.num_links, M = exp.num_slots;
  const double floor_w = 0.01 / K;
  std::vector<MatrixXd> mu(M, MatrixXd(K, K));
  for (int n = 0; n < M; ++n) {
    for (int k = 0; k < K; ++k) {
      VectorXd share(K);
      for (int j = 0; j < K; ++j) {
        const double p = exp.sqrt_powers(j, n) * exp.sqrt_powers(j, n);
        share[j] = p / exp.sq_distances[n](j, k) + 1e-12;
      }
      share /= share.sum();
      share = share.cwiseMax(floor_w);
      const double total = share.sum();
      if (total > 1.0) share /= total;
      mu[n].col(k) = share;
    }
  }
  return mu;
}

Vector3d project_separation(const Vector3d& v, double d_min) {
  const double norm = v.norm();
  if (norm >= d_min) return v;
  if (norm <= 0) return Vector3d(d_min, 0, 0);
  return v * (d_min / norm);
}

Vector3d project_separation_halfspace(const Vector3d& v, double d_min,
                                      const Vector3d& dr) {
  const double dn = dr.norm();
  if (dn <= 1e-9 * d_min) return project_separation(v, d_min);
  const Vector3d dhat = dr / dn;
  const double offset = 0.5 * (dn * dn + d_min * d_min) / dn;
  const double t = v.dot(dhat);
  if (t >= offset) return v;
  return v + (offset - t) * dhat;
}

VectorXd pack_uav(const HalfState& st, int k) {
  const int M = st.num_slots();
  VectorXd x(4 * M);
  for (int n = 0; n < M; ++n) {
    x[4 * n] = st.a(k, n);
    x.segment<3>(4 * n + 1) = st.q[k].col(n);
  }
  return x;
}

void unpack_uav(const VectorXd& x, int k, HalfState& st) {
  const int M = st.num_slots();
  for (int n = 0; n < M; ++n) {
    st.a(k, n) = x[4 * n];
    st.q[k].col(n) = x.segment<3>(4 * n + 1);
  }
}

ipm::ConvexProgram build_peruav_program(const Scaled& sc,
                                        const SurrogateExpansion& exp,
                                        const std::vector<MatrixXd>& mu, int k,
                                        const Matrix3Xd& q_hat, double prox_c,
                                        const JointOptions& opt) {
  const int K = exp.num_links, M = exp.num_slots;
  ipm::ConvexProgram prog;
  prog.dimension = 4 * M;
  prog.block_sizes.assign(M, 4);
  const VectorXd wslot =
      opt.slot_weights.size() ? opt.slot_weights : VectorXd::Ones(M);
  const Vector3d q0 = opt.q0.cols() ? opt.q0.col(k) : sc.start.col(k);
  const bool fixed_alt = sc.h_max - sc.h_min < 1e-9;

  for (int n = 0; n < M; ++n) {
    const std::vector<int> vars = {4 * n, 4 * n + 1, 4 * n + 2, 4 * n + 3};
    const Vector3d qr = exp.positions[k].col(n);
    const double ar = exp.sqrt_powers(k, n);
    for (int r = 0; r < K; ++r) {
      // UAV k's share of receiver r's surrogate, evaluated at deviations
      // inflated by 1/w. The inflation folds back into the term parameters:
      // alpha / w, beta / w^2, the shifted center s_eff, and a baseline
      // offset in u0, so both factories apply unchanged.
      const double w = mu[n](k, r);
      const double dr = exp.sq_distances[n](k, r);
      const double alpha = 2 * ar / dr;
      const double beta = ar * ar / (dr * dr);
      VectorXd alpha_eff(1), beta_eff(1);
      alpha_eff[0] = alpha / w;
      beta_eff[0] = beta / (w * w);
      const Vector3d s_eff = (1 - w) * qr + w * sc.gt.col(r);
      const double tw = wslot[n] * w;
      if (r == k) {
        const double ir = exp.interference(k, n);
        const double u0 = 1 + ir + alpha * ar * (1 - 1 / w);
        prog.objective.push_back(joint_log_term(vars, alpha_eff, beta_eff,
                                                s_eff, -std::log1p(ir), tw,
                                                u0));
      } else {
        const double ir = exp.interference(r, n);
        const double pr = exp.sqrt_powers(r, n) * exp.sqrt_powers(r, n);
        const double sr = pr / exp.sq_distances[n](r, r);
        const double own = ar * ar / dr;  // k's landed power at receiver r
        const double u0 = 1 + sr + ir - own + alpha * ar * (1 - 1 / w);
        const double c0 = -std::log1p(ir) + own / (1 + ir);
        prog.objective.push_back(
            joint_log_term(vars, alpha_eff, beta_eff, s_eff, c0, tw, u0));
        const Vector3d m = 2.0 * (qr - sc.gt.col(r)) / w;
        const double ell0 = dr - m.dot(qr);
        prog.objective.push_back(interference_term(
            vars, m, ell0, tw / (1 + ir), ar * (1 - 1 / w), 1 / w));
        prog.inequalities.push_back(affine_ineq({vars[1], vars[2], vars[3]},
                                                -m,
                                                opt.trust_frac * dr - ell0));
      }
    }

    if (prox_c > 0 && !(opt.anchored && n == M - 1)) {
      ipm::SmoothTerm prox;
      prox.vars = {vars[1], vars[2], vars[3]};
      const Vector3d center = q_hat.col(n);
      prox.eval = [prox_c, center](const VectorXd& x, VectorXd* g,
                                   MatrixXd* h) -> double {
        const Vector3d d = x - center;
        if (g) *g = -prox_c * d;
        if (h) *h = -prox_c * MatrixXd::Identity(3, 3);
        return -0.5 * prox_c * d.squaredNorm();
      };
      prog.objective.push_back(std::move(prox));
    }

    prog.inequalities.push_back(bound_lower(vars[0], 0.0));
    prog.inequalities.push_back(bound_upper(vars[0], sc.a_max));
    if (fixed_alt) {
      prog.equalities.push_back({{vars[3]}, VectorXd::Ones(1), sc.h_min});
    } else {
      prog.inequalities.push_back(bound_lower(vars[3], sc.h_min));
      prog.inequalities.push_back(bound_upper(vars[3], sc.h_max));
    }
    if (n == 0) {
      if (opt.first_level > 0) {
        prog.inequalities.push_back(
            disc_fixed(vars[1], vars[2], q0.head<2>(), opt.first_level));
        if (!fixed_alt) {
          prog.inequalities.push_back(
              bound_upper(vars[3], q0[2] + opt.first_up));
          prog.inequalities.push_back(
              bound_lower(vars[3], q0[2] - opt.first_down));
        }
      }
    } else if (opt.chain) {
      prog.inequalities.push_back(disc_pair(
          {4 * (n - 1) + 1, 4 * (n - 1) + 2, vars[1], vars[2]},
          opt.chain_level));
      if (!fixed_alt) {
        VectorXd up(2), down(2);
        up << -1, 1;
        down << 1, -1;
        prog.inequalities.push_back(
            affine_ineq({4 * (n - 1) + 3, vars[3]}, up, -opt.chain_up));
        prog.inequalities.push_back(
            affine_ineq({4 * (n - 1) + 3, vars[3]}, down, -opt.chain_down));
      }
    }
  }

  if (opt.anchored) {
    const int n = M - 1;
    prog.equalities.push_back({{4 * n}, VectorXd::Ones(1), opt.anchor_a[k]});
    for (int c = 0; c < 3; ++c)
      prog.equalities.push_back(
          {{4 * n + 1 + c}, VectorXd::Ones(1), opt.anchor_q(c, k)});
  }
  return prog;
}

}  // namespace detail

namespace {

using detail::HalfState;
using detail::JointOptions;
using detail::PairGraph;
using detail::Scaled;

// Worst squared-distance shortfall max(d_min^2 - |q_i - q_j|^2) over pairs
// and slots; <= 0 means separated.
double sq_shortfall(const HalfState& st, const PairGraph& graph,
                    double d_min) {
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& [i, j] : graph.pairs)
    for (int n = 0; n < st.num_slots(); ++n)
      worst = std::max(worst, d_min * d_min -
                                  (st.q[i].col(n) - st.q[j].col(n))
                                      .squaredNorm());
  return worst;
}

// One centralized subproblem with a shared slack on every linearized
// separation row: maximizes the rate surrogate minus a steep linear slack
// cost, so the slack is driven to the barrier floor and the returned point
// is separated to working precision. Used only when the consensus loop ends
// with residual overlap; the slack column couples all slots, so this solve
// runs dense.
HalfState run_slack_repair(const Scaled& sc, const HalfState& state,
                           const JointOptions& opt, const PairGraph& graph) {
  const int K = state.num_links(), M = state.num_slots();
  const MatrixXd powers = state.a.array().square();
  const SurrogateExpansion exp =
      make_expansion(state.q, powers, sc.gt, 1.0);
  JointOptions jopt = opt;
  jopt.separation = false;
  ipm::ConvexProgram prog = detail::build_joint_program(sc, exp, jopt);
  const int s_idx = prog.dimension;
  prog.dimension += 1;
  prog.block_sizes.clear();

  double worst = 0;
  for (const auto& [i, j] : graph.pairs)
    for (int n = 0; n < M; ++n) {
      const Vector3d dr = exp.positions[i].col(n) - exp.positions[j].col(n);
      VectorXd coef(7);
      coef << -2 * dr, 2 * dr, -1;
      prog.inequalities.push_back(detail::affine_ineq(
          {detail::var_q(K, n, i, 0), detail::var_q(K, n, i, 1),
           detail::var_q(K, n, i, 2), detail::var_q(K, n, j, 0),
           detail::var_q(K, n, j, 1), detail::var_q(K, n, j, 2), s_idx},
          std::move(coef), dr.squaredNorm() + sc.d_min * sc.d_min));
      worst = std::max(worst, sc.d_min * sc.d_min - dr.squaredNorm());
    }
  prog.inequalities.push_back(detail::bound_lower(s_idx, 0.0));
  prog.inequalities.push_back(
      detail::bound_upper(s_idx, 2 * (worst + sc.d_min * sc.d_min)));

  ipm::SmoothTerm cost;
  cost.vars = {s_idx};
  cost.eval = [](const VectorXd& x, VectorXd* g, MatrixXd* h) -> double {
    constexpr double kSlackWeight = 1e4;
    if (g) (*g)[0] = -kSlackWeight;
    if (h) h->setZero();
    return -kSlackWeight * x[0];
  };
  prog.objective.push_back(std::move(cost));

  VectorXd x0(prog.dimension);
  x0.head(s_idx) = detail::pack_state(state);
  x0[s_idx] = worst + 1e-6 * sc.d_min * sc.d_min;
  prog.start = x0;
  // The start is a consensus iterate that may hug its bounds; the looser
  // barrier stop keeps the restart well-posed (see the solver loop).
  ipm::IpmConfig icfg;
  icfg.outer_tol = 1e-6;
  const ipm::IpmResult res = ipm::maximize(prog, icfg);
  return detail::unpack_state(res.x.head(s_idx), K, M);
}

}  // namespace

namespace detail {

ConsensusResult run_consensus(const Scaled& sc, const HalfState& init,
                              const JointOptions& opt0,
                              const ParallelConfig& cfg) {
  JointOptions opt = opt0;
  opt.separation = false;  // the consensus variables own this constraint

  ConsensusResult out;
  out.state = init;
  HalfState& state = out.state;
  const int K = state.num_links();
  const int M = state.num_slots();
  const PairGraph graph = PairGraph::complete(K);
  const int P = graph.num_pairs();

  // The consensus target is padded by the stopping tolerance so that a
  // primal residual at tolerance still leaves the true separation intact;
  // without the pad every converged run would end a hair short of d_min
  // and trigger the repair path.
  const double d_eff = sc.d_min * (1 + cfg.consensus_tol);
  std::vector<Matrix3Xd> z(P), lam(P);
  for (int p = 0; p < P; ++p) {
    const auto [i, j] = graph.pairs[p];
    z[p].resize(3, M);
    lam[p] = Matrix3Xd::Zero(3, M);
    for (int n = 0; n < M; ++n)
      z[p].col(n) = project_separation(
          state.q[i].col(n) - state.q[j].col(n), d_eff);
  }

  double b = cfg.penalty;
  int threads = cfg.threads > 0
                    ? cfg.threads
                    : static_cast<int>(
                          std::max(1u, std::thread::hardware_concurrency()));
  threads = std::min(threads, K);

  struct Residuals {
    double primal = 0;  // max |q_i - q_j - z|
    double dual = 0;    // b * max |z - z_prev|
  };

  // One Jacobi round: per-UAV subproblems from the shared expansion, then
  // consensus and dual updates.
  const auto outer_iteration = [&]() -> Residuals {
    const double c = cfg.prox_margin * b * graph.lambda_max;
    const MatrixXd powers = state.a.array().square();
    const SurrogateExpansion exp =
        make_expansion(state.q, powers, sc.gt, 1.0);
    const std::vector<MatrixXd> mu = mixing_weights(exp);

    std::vector<Matrix3Xd> q_hat(state.q);
    for (int p = 0; p < P; ++p) {
      const auto [i, j] = graph.pairs[p];
      for (int n = 0; n < M; ++n) {
        const Vector3d r = state.q[i].col(n) - state.q[j].col(n) -
                           z[p].col(n) + lam[p].col(n) / b;
        q_hat[i].col(n) -= (b / c) * r;
        q_hat[j].col(n) += (b / c) * r;
      }
    }

    // Inexact inner solves: the consensus loop only needs the subproblem
    // optima to 1e-6, and the looser barrier stop leaves the returned point
    // far enough inside the feasible region to restart from.
    ipm::IpmConfig icfg;
    icfg.outer_tol = 1e-6;
    HalfState next = state;
    std::vector<std::exception_ptr> errors(K);
    std::atomic<int> cursor{0};
    const auto work = [&]() {
      for (;;) {
        const int k = cursor.fetch_add(1);
        if (k >= K) return;
        try {
          ipm::ConvexProgram prog =
              build_peruav_program(sc, exp, mu, k, q_hat[k], c, opt);
          prog.start = pack_uav(state, k);
          const ipm::IpmResult res = ipm::maximize(prog, icfg);
          unpack_uav(res.x, k, next);
        } catch (...) {
          errors[k] = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    pool.reserve(threads - 1);
    for (int t = 1; t < threads; ++t) pool.emplace_back(work);
    work();
    for (auto& th : pool) th.join();
    for (int k = 0; k < K; ++k)
      if (errors[k]) std::rethrow_exception(errors[k]);
    state = std::move(next);

    Residuals res;
    for (int p = 0; p < P; ++p) {
      const auto [i, j] = graph.pairs[p];
      for (int n = 0; n < M; ++n) {
        const Vector3d diff = state.q[i].col(n) - state.q[j].col(n);
        const Vector3d z_new = project_separation_halfspace(
            diff + lam[p].col(n) / b, d_eff, diff);
        res.dual = std::max(
            res.dual, b * (z_new - z[p].col(n)).cwiseAbs().maxCoeff());
        z[p].col(n) = z_new;
        const Vector3d gap = diff - z_new;
        lam[p].col(n) += b * gap;
        res.primal = std::max(res.primal, gap.cwiseAbs().maxCoeff());
      }
    }
    return res;
  };

  // Residual balancing: the configured penalty is only a starting point.
  // When the primal residual (unresolved overlap) dominates, the penalty
  // is too weak against the rate gradients and doubles; when the dual
  // residual dominates, it halves. This keeps binding crossings from
  // stalling at a penalty scale tuned for the easy, non-binding case. No
  // adaptation once the primal residual is inside the stopping band.
  const double resid_tol = cfg.consensus_tol * sc.d_min;
  const auto rebalance = [&b, resid_tol](const Residuals& r) {
    if (r.primal <= 0.5 * resid_tol) return;
    if (r.primal > 10 * r.dual)
      b = std::min(b * 2, 1e3);
    else if (r.dual > 10 * r.primal)
      b = std::max(b / 2, 1e-6);
  };

  // The best separated iterate seen so far; a strictly feasible init
  // seeds it, so a fallback always exists.
  double obj = joint_objective(sc, state, VectorXd());
  HalfState best = state;
  double best_obj = sq_shortfall(state, graph, sc.d_min) <= 0
                        ? obj
                        : -std::numeric_limits<double>::infinity();
  const auto consider_best = [&](double value) {
    if (value > best_obj && sq_shortfall(state, graph, sc.d_min) <= 0) {
      best_obj = value;
      best = state;
    }
  };

  out.obj_trace.push_back(obj);
  bool converged = false;
  for (int iter = 1; iter <= cfg.max_iter; ++iter) {
    const Residuals res = outer_iteration();
    const double next = joint_objective(sc, state, VectorXd());
    out.obj_trace.push_back(next);
    out.resid_trace.push_back(res.primal);
    out.iterations = iter;
    consider_best(next);
    const bool settled =
        std::abs(next - obj) <= cfg.rel_tol * std::max(std::abs(obj), 1e-12);
    obj = next;
    if (settled && res.primal <= resid_tol) {
      converged = true;
      break;
    }
    rebalance(res);
  }

  // Repair chain, engaged only if the final point still overlaps: a few
  // rounds with the penalty doubled; then one proximal round tracking
  // consensus targets pushed apart along each offending difference; then a
  // slack-relaxed centralized step plus an exact centralized polish. The
  // best separated iterate is the fallback of last resort.
  for (int round = 0;
       round < 3 && sq_shortfall(state, graph, sc.d_min) > 0; ++round) {
    b = std::min(b * 2, 1e3);
    const Residuals res = outer_iteration();
    const double value = joint_objective(sc, state, VectorXd());
    out.obj_trace.push_back(value);
    out.resid_trace.push_back(res.primal);
    consider_best(value);
    ++out.repair_iterations;
  }
  if (sq_shortfall(state, graph, sc.d_min) > 0) {
    // The push lives in the consensus targets rather than the positions so
    // the subproblem starting points stay strictly feasible.
    for (int p = 0; p < P; ++p) {
      const auto [i, j] = graph.pairs[p];
      for (int n = 0; n < M; ++n) {
        if (opt.anchored && n == M - 1) continue;
        const Vector3d diff = state.q[i].col(n) - state.q[j].col(n);
        if (diff.norm() >= d_eff) continue;
        z[p].col(n) = diff.norm() > 1e-12 * d_eff
                          ? project_separation(diff, d_eff)
                          : Vector3d(d_eff * z[p].col(n).normalized());
      }
    }
    b = std::max(b, 1.0);
    const Residuals res = outer_iteration();
    const double value = joint_objective(sc, state, VectorXd());
    out.obj_trace.push_back(value);
    out.resid_trace.push_back(res.primal);
    consider_best(value);
    ++out.repair_iterations;
  }
  if (sq_shortfall(state, graph, sc.d_min) > 0) {
    out.slack_repair = true;
    state = run_slack_repair(sc, state, opt, graph);
    const double value = joint_objective(sc, state, VectorXd());
    out.obj_trace.push_back(value);
    consider_best(value);
    if (sq_shortfall(state, graph, sc.d_min) <
        -1e-12 * sc.d_min * sc.d_min) {
      JointOptions popt = opt;
      popt.separation = true;
      ScaConfig pcfg;
      pcfg.rel_tol = cfg.rel_tol;
      pcfg.max_iter = 1;
      const JointResult polished = run_joint_sca(sc, state, popt, pcfg);
      state = polished.state;
      out.obj_trace.push_back(polished.trace.back());
      consider_best(polished.trace.back());
    }
  }

  // At the iteration cap the contract is the best separated iterate; it is
  // also the fallback if the repair chain somehow left an overlap.
  const double final_obj = joint_objective(sc, state, VectorXd());
  if (sq_shortfall(state, graph, sc.d_min) > 0 ||
      (!converged && best_obj > final_obj)) {
    state = best;
    out.obj_trace.push_back(best_obj);
  }
  out.converged = converged;
  return out;
}

}  // namespace detail

TrajectorySolution solve_parallel_tpc(const Scenario& scen,
                                      const Matrix3Xd& anchor_positions,
                                      const VectorXd& anchor_powers_w,
                                      const TrajectorySolution& init,
                                      const ParallelConfig& cfg,
                                      ParallelTrace* trace) {
  const auto t0 = std::chrono::steady_clock::now();
  scen.validate();
  const int K = scen.num_links;
  if (anchor_positions.cols() != K || anchor_powers_w.size() != K)
    throw InvalidArgumentError("solve_parallel_tpc: anchor size mismatch");
  if (init.num_links() != K || init.num_slots() < 1)
    throw InvalidArgumentError("solve_parallel_tpc: bad initial trajectory");

  if (K == 1) {
    // No pairs to coordinate: the centralized solver is the same problem.
    ScaConfig scfg;
    scfg.rel_tol = cfg.rel_tol;
    scfg.max_iter = cfg.max_iter;
    ScaTrace inner;
    TrajectorySolution out =
        solve_sca_tpc(scen, anchor_positions, anchor_powers_w, init, scfg,
                      trace ? &inner : nullptr);
    if (trace) {
      trace->objective_bps = std::move(inner.objective_bps);
      trace->consensus_residual_m.assign(trace->objective_bps.size(), 0.0);
      trace->repair_iterations = 0;
      trace->slack_repair = false;
      trace->converged = true;
    }
    return out;
  }

  const Scaled sc = Scaled::from(scen);
  JointOptions opt;
  opt.first_level = sc.step_level;
  opt.first_up = sc.step_vert;
  opt.first_down = sc.step_vert;
  opt.chain = init.num_slots() > 1;
  opt.chain_level = sc.step_level;
  opt.chain_up = sc.step_vert;
  opt.chain_down = sc.step_vert;
  opt.anchored = true;
  opt.anchor_a = (anchor_powers_w / sc.power_unit).cwiseMax(0.0).cwiseSqrt();
  opt.anchor_q = anchor_positions / sc.length_unit;

  HalfState st0 = detail::to_scaled(init, sc);
  detail::ConsensusResult r;
  if (st0.num_slots() == 1) {
    // Fully pinned by the anchors.
    r.state = std::move(st0);
    r.state.a.col(0) = opt.anchor_a;
    for (int k = 0; k < K; ++k) r.state.q[k].col(0) = opt.anchor_q.col(k);
    r.obj_trace.push_back(detail::joint_objective(sc, r.state, VectorXd()));
  } else {
    r = detail::run_consensus(sc, st0, opt, cfg);
  }

  TrajectorySolution out = detail::from_scaled(r.state, sc);
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
    trace->objective_bps.assign(r.obj_trace.begin(), r.obj_trace.end());
    for (double& v : trace->objective_bps) v *= sc.rate_unit;
    trace->consensus_residual_m.assign(r.resid_trace.begin(),
                                       r.resid_trace.end());
    for (double& v : trace->consensus_residual_m) v *= sc.length_unit;
    trace->repair_iterations = r.repair_iterations;
    trace->slack_repair = r.slack_repair;
    trace->converged = r.converged;
  }
  return out;
}

}  // namespace uavtpc
