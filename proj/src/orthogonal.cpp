#include "uavtpc/orthogonal.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>
#include <vector>

#include "detail/joint_solver.hpp"
#include "detail/terms.hpp"
#include "uavtpc/errors.hpp"
#include "uavtpc/ipm.hpp"

namespace uavtpc {

namespace {

using detail::HalfState;
using detail::JointOptions;
using detail::Scaled;
using detail::var_a;
using detail::var_q;

// Shares below this stay out of the barrier's way; the perspective log is
// undefined at 0 for the interior-point kernel. Reported shares keep the
// exact solved values (all >= the floor).
constexpr double kShareFloor = 1e-6;
constexpr double kSqFloor = 1e-6;  // m^2 / scaled, matches compute_rate

double sq_dist(const Vector3d& a, const Vector3d& b) {
  const double d2 = (a - b).squaredNorm();
  return d2 < kSqFloor ? kSqFloor : d2;
}

// True weighted scheme objective in scaled nats. FDMA sums the perspective
// rates with exact shares (0 at a = 0); TDMA evaluates the beta-relaxed
// aggregated log the SCA loop actually ascends.
double orth_objective(const Scaled& sc, OrthogonalScheme scheme,
                      const HalfState& st, const VectorXd& weights) {
  const int K = st.num_links(), M = st.num_slots();
  double total = 0;
  for (int n = 0; n < M; ++n) {
    double slot = 0;
    if (scheme == OrthogonalScheme::fdma) {
      for (int k = 0; k < K; ++k) {
        const double a = st.a(k, n);
        if (a <= 0) continue;
        const double y = sq_dist(st.q[k].col(n), sc.gt.col(k));
        slot += a * std::log1p(sc.p_max / (a * y));
      }
    } else {
      double agg = 0;
      for (int k = 0; k < K; ++k) {
        const double b = st.a(k, n);
        agg += b * b * sc.p_max / sq_dist(st.q[k].col(n), sc.gt.col(k));
      }
      slot = std::log1p(agg);
    }
    total += (weights.size() ? weights[n] : 1.0) * slot;
  }
  return total;
}

// Concave subproblem around `ref`: scheme rate surrogates plus the share
// constraints, with the same kinematic rows as the non-orthogonal builder
// (no power variables — the a-slots of the layout hold the shares).
ipm::ConvexProgram build_orthogonal_program(const Scaled& sc,
                                            OrthogonalScheme scheme,
                                            const HalfState& ref,
                                            const JointOptions& opt) {
  const int K = ref.num_links(), M = ref.num_slots();
  ipm::ConvexProgram prog;
  prog.dimension = 4 * K * M;
  prog.block_sizes.assign(M, 4 * K);
  const VectorXd w = opt.slot_weights.size() ? opt.slot_weights
                                             : VectorXd::Ones(M);
  const Matrix3Xd& q0 = opt.q0.cols() ? opt.q0 : sc.start;
  const bool fixed_alt = sc.h_max - sc.h_min < 1e-9;

  for (int n = 0; n < M; ++n) {
    if (scheme == OrthogonalScheme::fdma) {
      std::vector<int> shares(K);
      for (int k = 0; k < K; ++k) {
        shares[k] = var_a(K, n, k);
        const double d_ref =
            std::sqrt(sq_dist(ref.q[k].col(n), sc.gt.col(k)));
        prog.objective.push_back(detail::fdma_term(
            {var_a(K, n, k), var_q(K, n, k, 0), var_q(K, n, k, 1),
             var_q(K, n, k, 2)},
            sc.gt.col(k), d_ref, sc.p_max, w[n]));
        prog.inequalities.push_back(
            detail::bound_lower(var_a(K, n, k), kShareFloor));
      }
      // Per-slot simplex; the floor above makes the implied upper bound
      // alpha_k <= 1 - (K-1) * floor strict, so no explicit cap is needed.
      prog.equalities.push_back({std::move(shares), VectorXd::Ones(K), 1.0});
    } else {
      // Aggregated log of the E-style bound: beta^2 / y is jointly convex,
      // so its tangent 2(br/yr) b - (br/yr)^2 y underestimates globally and
      // matches at the reference.
      std::vector<int> slot_vars(4 * K);
      std::iota(slot_vars.begin(), slot_vars.end(), n * 4 * K);
      std::vector<int> shares(K);
      VectorXd lin(K), quad(K);
      for (int k = 0; k < K; ++k) {
        shares[k] = var_a(K, n, k);
        const double yr = sq_dist(ref.q[k].col(n), sc.gt.col(k));
        const double br = ref.a(k, n);
        lin[k] = 2.0 * sc.p_max * br / yr;
        quad[k] = sc.p_max * (br / yr) * (br / yr);
        prog.inequalities.push_back(detail::bound_lower(var_a(K, n, k), 0.0));
      }
      prog.objective.push_back(detail::aggregate_log_term(
          std::move(slot_vars), std::move(lin), std::move(quad), sc.gt, 0.0,
          w[n]));
      prog.inequalities.push_back(detail::ball_ineq(std::move(shares), 1.0));
    }

    for (int k = 0; k < K; ++k) {
      if (fixed_alt) {
        prog.equalities.push_back(
            {{var_q(K, n, k, 2)}, VectorXd::Ones(1), sc.h_min});
      } else {
        prog.inequalities.push_back(
            detail::bound_lower(var_q(K, n, k, 2), sc.h_min));
        prog.inequalities.push_back(
            detail::bound_upper(var_q(K, n, k, 2), sc.h_max));
      }
      if (n == 0) {
        if (opt.first_level > 0) {
          prog.inequalities.push_back(
              detail::disc_fixed(var_q(K, 0, k, 0), var_q(K, 0, k, 1),
                                 q0.col(k).head<2>(), opt.first_level));
          if (!fixed_alt) {
            prog.inequalities.push_back(detail::bound_upper(
                var_q(K, 0, k, 2), q0(2, k) + opt.first_up));
            prog.inequalities.push_back(detail::bound_lower(
                var_q(K, 0, k, 2), q0(2, k) - opt.first_down));
          }
        }
      } else if (opt.chain) {
        prog.inequalities.push_back(
            detail::disc_pair({var_q(K, n - 1, k, 0), var_q(K, n - 1, k, 1),
                               var_q(K, n, k, 0), var_q(K, n, k, 1)},
                              opt.chain_level));
        if (!fixed_alt) {
          VectorXd up(2), down(2);
          up << -1, 1;  // z_n - z_{n-1} <= chain_up
          down << 1, -1;
          prog.inequalities.push_back(detail::affine_ineq(
              {var_q(K, n - 1, k, 2), var_q(K, n, k, 2)}, up, -opt.chain_up));
          prog.inequalities.push_back(
              detail::affine_ineq({var_q(K, n - 1, k, 2), var_q(K, n, k, 2)},
                                  down, -opt.chain_down));
        }
      }
    }

    if (opt.separation && K > 1) {
      for (int k = 0; k < K; ++k)
        for (int j = k + 1; j < K; ++j) {
          const Vector3d dr = ref.q[k].col(n) - ref.q[j].col(n);
          VectorXd coef(6);
          coef << -2 * dr, 2 * dr;
          prog.inequalities.push_back(detail::affine_ineq(
              {var_q(K, n, k, 0), var_q(K, n, k, 1), var_q(K, n, k, 2),
               var_q(K, n, j, 0), var_q(K, n, j, 1), var_q(K, n, j, 2)},
              std::move(coef), dr.squaredNorm() + sc.d_min * sc.d_min));
        }
    }
  }
  return prog;
}

struct OrthResult {
  HalfState state;
  int iterations = 0;
  std::vector<double> trace;
  std::vector<int> newton_iters;
};

OrthResult run_orthogonal_sca(const Scaled& sc, OrthogonalScheme scheme,
                              const HalfState& init, const JointOptions& opt,
                              const ScaConfig& cfg) {
  const int K = init.num_links(), M = init.num_slots();
  OrthResult res;
  res.state = init;
  double obj = orth_objective(sc, scheme, res.state, opt.slot_weights);
  res.trace.push_back(obj);
  for (int iter = 1; iter <= cfg.max_iter; ++iter) {
    ipm::ConvexProgram prog =
        build_orthogonal_program(sc, scheme, res.state, opt);
    prog.start = detail::pack_state(res.state);
    const ipm::IpmResult sol = ipm::maximize(prog);
    res.state = detail::unpack_state(sol.x, K, M);
    const double next = orth_objective(sc, scheme, res.state, opt.slot_weights);
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

}  // namespace

double fdma_rate(const Scenario& scen, int k, double alpha,
                 const Vector3d& q) {
  if (k < 0 || k >= scen.num_links)
    throw InvalidArgumentError("fdma_rate: link index out of range");
  if (alpha <= 0) return 0.0;
  const double y = sq_dist(q, scen.gt_positions.col(k));
  const double snr = scen.channel.gamma * scen.p_max_w / (alpha * y);
  return alpha * scen.channel.bandwidth_hz / std::log(2.0) * std::log1p(snr);
}

double fdma_rate_surrogate(const Scenario& scen, int k, double alpha,
                           const Vector3d& q, const Vector3d& q_ref) {
  if (k < 0 || k >= scen.num_links)
    throw InvalidArgumentError("fdma_rate_surrogate: link index out of range");
  if (alpha <= 0) return 0.0;
  const Vector3d s = scen.gt_positions.col(k);
  const double dr = std::sqrt(sq_dist(q_ref, s));
  const double h = 3.0 / (dr * dr) - 2.0 * (q - s).norm() / (dr * dr * dr);
  const double g = scen.channel.gamma * scen.p_max_w * h / alpha;
  if (1.0 + g <= 0) return -std::numeric_limits<double>::infinity();
  return alpha * scen.channel.bandwidth_hz / std::log(2.0) * std::log1p(g);
}

double tdma_rate(const Scenario& scen, int k, double alpha,
                 const Vector3d& q) {
  if (k < 0 || k >= scen.num_links)
    throw InvalidArgumentError("tdma_rate: link index out of range");
  if (alpha <= 0) return 0.0;
  const double y = sq_dist(q, scen.gt_positions.col(k));
  const double snr = scen.channel.gamma * scen.p_max_w / y;
  return alpha * scen.channel.bandwidth_hz / std::log(2.0) * std::log1p(snr);
}

VectorXd tdma_allocate(const Matrix3Xd& uav_pos, const Matrix3Xd& gt_pos) {
  const int K = static_cast<int>(uav_pos.cols());
  if (K < 1 || gt_pos.cols() != K)
    throw InvalidArgumentError("tdma_allocate: need matching 3 x K position sets");
  int best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (int k = 0; k < K; ++k) {
    const double d2 = (uav_pos.col(k) - gt_pos.col(k)).squaredNorm();
    if (d2 < best_d2) {  // strict: ties keep the lowest index
      best_d2 = d2;
      best = k;
    }
  }
  VectorXd a = VectorXd::Zero(K);
  a[best] = 1.0;
  return a;
}

std::pair<TrajectorySolution, OrthogonalAllocation> solve_orthogonal(
    const Scenario& scen, OrthogonalScheme scheme, int reduced_slots,
    const TrajectorySolution& init, const ScaConfig& cfg, ScaTrace* trace) {
  const auto t0 = std::chrono::steady_clock::now();
  scen.validate();
  const int K = scen.num_links;
  const int M = reduced_slots;
  if (M < 1 || 2 * M > scen.horizon.num_slots)
    throw InvalidArgumentError(
        "solve_orthogonal: reduced_slots must lie in [1, N/2]");
  if (init.num_links() != K || init.num_slots() != M)
    throw InvalidArgumentError(
        "solve_orthogonal: init must cover K links over reduced_slots slots");

  const Scaled sc = Scaled::from(scen);
  JointOptions opt;
  opt.first_level = sc.step_level;
  opt.first_up = sc.step_vert;
  opt.first_down = sc.step_vert;
  opt.chain = M > 1;
  opt.chain_level = sc.step_level;
  opt.chain_up = sc.step_vert;
  opt.chain_down = sc.step_vert;
  opt.separation = K > 1;
  // The endpoint holds for the rest of the half mission; folding that stay
  // into the last slot's weight makes the plain slot sum mission-faithful.
  opt.slot_weights = VectorXd::Ones(M);
  opt.slot_weights[M - 1] = sc.half_slots - M + 1;

  HalfState st0;
  st0.a.resize(K, M);
  st0.a.setConstant(scheme == OrthogonalScheme::fdma
                        ? 1.0 / K
                        : 0.999 / std::sqrt(static_cast<double>(K)));
  st0.q.reserve(K);
  for (const auto& qk : init.positions) st0.q.push_back(qk / sc.length_unit);

  const OrthResult r = run_orthogonal_sca(sc, scheme, st0, opt, cfg);

  TrajectorySolution out;
  out.positions.reserve(K);
  for (const auto& qk : r.state.q) out.positions.push_back(qk * sc.length_unit);
  out.rates_bps.resize(K, M);
  OrthogonalAllocation alloc;
  alloc.scheme = scheme;
  if (scheme == OrthogonalScheme::fdma) {
    alloc.alpha = r.state.a;
    out.powers_w = MatrixXd::Constant(K, M, scen.p_max_w);
    for (int n = 0; n < M; ++n)
      for (int k = 0; k < K; ++k)
        out.rates_bps(k, n) =
            fdma_rate(scen, k, alloc.alpha(k, n), out.positions[k].col(n));
  } else {
    alloc.alpha.setZero(K, M);
    out.powers_w.setZero(K, M);
    out.rates_bps.setZero();
    Matrix3Xd slot_pos(3, K);
    for (int n = 0; n < M; ++n) {
      for (int k = 0; k < K; ++k) slot_pos.col(k) = out.positions[k].col(n);
      const VectorXd a = tdma_allocate(slot_pos, scen.gt_positions);
      alloc.alpha.col(n) = a;
      for (int k = 0; k < K; ++k) {
        if (a[k] <= 0) continue;
        out.powers_w(k, n) = scen.p_max_w;
        out.rates_bps(k, n) = tdma_rate(scen, k, a[k], slot_pos.col(k));
      }
    }
  }
  out.iterations = r.iterations;
  out.solve_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  if (trace) {
    trace->objective_bps.assign(r.trace.begin(), r.trace.end());
    for (double& v : trace->objective_bps) v *= sc.rate_unit;
    trace->newton_iterations = r.newton_iters;
  }
  return {std::move(out), std::move(alloc)};
}

}  // namespace uavtpc
