#include "uavtpc/ipm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_map>

namespace uavtpc::ipm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// x_full[i] = constant + sum_j coeffs[j] * x_red[red_vars[j]], produced by
// eliminating the equality rows. Free variables keep an identity entry.
struct AffineExpr {
  double constant = 0;
  std::vector<std::pair<int, double>> terms;  // (index, coefficient)
};

struct Substitution {
  int n_full = 0;
  int n_red = 0;
  std::vector<int> red_of_full;    // -1 for eliminated variables
  std::vector<int> full_of_red;
  std::vector<AffineExpr> expr;    // only meaningful for eliminated vars

  void to_full(const VectorXd& y, VectorXd& x) const {
    x.resize(n_full);
    for (int i = 0; i < n_full; ++i) {
      if (red_of_full[i] >= 0) {
        x[i] = y[red_of_full[i]];
      } else {
        double v = expr[i].constant;
        for (const auto& [j, c] : expr[i].terms) v += c * y[j];
        x[i] = v;
      }
    }
  }
};

// Eliminates the equality rows by Gaussian pivoting. Expressions reference
// full-variable ids during elimination and are remapped to reduced ids at
// the end. Rows that collapse to 0 == 0 are dropped; 0 == c is infeasible.
Substitution build_substitution(const ConvexProgram& prog) {
  const int n = prog.dimension;
  std::vector<bool> pivoted(n, false);
  std::vector<AffineExpr> pivot_expr(n);       // in full ids
  std::vector<int> pivot_order;

  for (size_t r = 0; r < prog.equalities.size(); ++r) {
    const auto& row = prog.equalities[r];
    if (row.vars.size() != static_cast<size_t>(row.coeffs.size()))
      throw InvalidArgumentError("equality row vars/coeffs size mismatch");
    // Accumulate the row with previously pivoted variables substituted out.
    std::unordered_map<int, double> acc;
    double rhs = row.rhs;
    double scale = std::abs(row.rhs);
    for (int t = 0; t < static_cast<int>(row.vars.size()); ++t) {
      int v = row.vars[t];
      double c = row.coeffs[t];
      scale = std::max(scale, std::abs(c));
      if (v < 0 || v >= n)
        throw InvalidArgumentError("equality row references bad variable");
      if (pivoted[v]) {
        rhs -= c * pivot_expr[v].constant;
        for (const auto& [w, cw] : pivot_expr[v].terms) acc[w] += c * cw;
      } else {
        acc[v] += c;
      }
    }
    int pivot = -1;
    double best = 0;
    for (const auto& [v, c] : acc)
      if (std::abs(c) > best) best = std::abs(c), pivot = v;
    if (pivot < 0 || best <= 1e-12 * std::max(1.0, scale)) {
      if (std::abs(rhs) > 1e-9 * std::max(1.0, scale))
        throw InfeasibleError("inconsistent equality constraints (row " +
                              std::to_string(r) + ")");
      continue;  // redundant row
    }
    AffineExpr e;
    double pc = acc[pivot];
    e.constant = rhs / pc;
    for (const auto& [v, c] : acc) {
      if (v == pivot || std::abs(c) <= 1e-14 * best) continue;
      e.terms.emplace_back(v, -c / pc);
    }
    pivoted[pivot] = true;
    pivot_expr[pivot] = std::move(e);
    pivot_order.push_back(pivot);
  }

  // Earlier pivot expressions may reference variables pivoted later;
  // back-substitute in reverse creation order so every expression ends up in
  // terms of free variables only.
  for (int i = static_cast<int>(pivot_order.size()) - 1; i >= 0; --i) {
    AffineExpr& e = pivot_expr[pivot_order[i]];
    bool dirty = true;
    while (dirty) {
      dirty = false;
      AffineExpr out;
      out.constant = e.constant;
      for (const auto& [v, c] : e.terms) {
        if (pivoted[v]) {
          dirty = true;
          out.constant += c * pivot_expr[v].constant;
          for (const auto& [w, cw] : pivot_expr[v].terms)
            out.terms.emplace_back(w, c * cw);
        } else {
          out.terms.emplace_back(v, c);
        }
      }
      if (dirty) {  // merge duplicates introduced by the expansion
        std::unordered_map<int, double> m;
        for (const auto& [v, c] : out.terms) m[v] += c;
        out.terms.assign(m.begin(), m.end());
      }
      e = std::move(out);
    }
  }

  Substitution sub;
  sub.n_full = n;
  sub.red_of_full.assign(n, -1);
  sub.expr.resize(n);
  for (int i = 0; i < n; ++i) {
    if (!pivoted[i]) {
      sub.red_of_full[i] = static_cast<int>(sub.full_of_red.size());
      sub.full_of_red.push_back(i);
    }
  }
  sub.n_red = static_cast<int>(sub.full_of_red.size());
  for (int i = 0; i < n; ++i) {
    if (!pivoted[i]) continue;
    AffineExpr e;
    e.constant = pivot_expr[i].constant;
    for (const auto& [v, c] : pivot_expr[i].terms) {
      int rv = sub.red_of_full[v];
      if (rv < 0)
        throw SolverError("equality elimination left a dangling reference");
      e.terms.emplace_back(rv, c);
    }
    std::sort(e.terms.begin(), e.terms.end());
    sub.expr[i] = std::move(e);
  }
  return sub;
}

// Symmetric block-tridiagonal matrix with a block LDL^T factorization and a
// diagonal damping ladder for near-singular systems.
struct BlockTridiag {
  std::vector<int> sizes, offsets;
  std::vector<MatrixXd> diag;  // sizes[i] x sizes[i]
  std::vector<MatrixXd> sub;   // sizes[i+1] x sizes[i]

  void init(const std::vector<int>& block_sizes) {
    sizes = block_sizes;
    offsets.assign(sizes.size() + 1, 0);
    for (size_t i = 0; i < sizes.size(); ++i)
      offsets[i + 1] = offsets[i] + sizes[i];
    diag.resize(sizes.size());
    sub.resize(sizes.empty() ? 0 : sizes.size() - 1);
    for (size_t i = 0; i < sizes.size(); ++i)
      diag[i].setZero(sizes[i], sizes[i]);
    for (size_t i = 0; i + 1 < sizes.size(); ++i)
      sub[i].setZero(sizes[i + 1], sizes[i]);
  }
  void set_zero() {
    for (auto& d : diag) d.setZero();
    for (auto& s : sub) s.setZero();
  }
};

struct BlockFactor {
  std::vector<Eigen::LLT<MatrixXd>> chol;
  const BlockTridiag* H = nullptr;

  // Factors (A + tau I). Returns false when a pivot fails.
  bool factor(const BlockTridiag& A, double tau) {
    H = &A;
    const size_t B = A.sizes.size();
    chol.resize(B);
    MatrixXd S;
    for (size_t i = 0; i < B; ++i) {
      S = A.diag[i];
      S.diagonal().array() += tau;
      if (i > 0) {
        // S_i = D_i - W_i * S_{i-1}^{-1} * W_i^T
        MatrixXd Y = chol[i - 1].solve(A.sub[i - 1].transpose());
        S.noalias() -= A.sub[i - 1] * Y;
      }
      chol[i].compute(S);
      if (chol[i].info() != Eigen::Success) return false;
      // Eigen's LLT accepts some indefinite matrices silently; verify the
      // pivots are genuinely positive.
      for (int d = 0; d < S.rows(); ++d)
        if (!(chol[i].matrixLLT()(d, d) > 0) ||
            !std::isfinite(chol[i].matrixLLT()(d, d)))
          return false;
    }
    return true;
  }

  VectorXd solve(const VectorXd& b) const {
    const auto& A = *H;
    const size_t B = A.sizes.size();
    std::vector<VectorXd> v(B), x(B);
    for (size_t i = 0; i < B; ++i) {
      v[i] = b.segment(A.offsets[i], A.sizes[i]);
      if (i > 0) v[i].noalias() -= A.sub[i - 1] * chol[i - 1].solve(v[i - 1]);
    }
    VectorXd out(b.size());
    for (size_t ii = B; ii-- > 0;) {
      VectorXd rhs = v[ii];
      if (ii + 1 < B) rhs.noalias() -= A.sub[ii].transpose() * x[ii + 1];
      x[ii] = chol[ii].solve(rhs);
      out.segment(A.offsets[ii], A.sizes[ii]) = x[ii];
    }
    return out;
  }
};

// Per-term plumbing: local gather of the reduced point, chain rule through
// the elimination map, and scatter into the banded Newton system.
struct TermWork {
  const SmoothTerm* term = nullptr;
  bool is_constant = false;   // support fully eliminated
  double constant_value = 0;  // g at the (fixed) support, for validation
  bool identity = true;       // no eliminated variable in the support
  std::vector<int> red_vars;  // strictly increasing reduced indices
  MatrixXd S;                 // full-local x = c_loc + S * red-local y
  VectorXd c_loc;
  int lo_block = 0, hi_block = 0;
  // scratch buffers sized once
  VectorXd xl, gl, gr, yloc;
  MatrixXd Hl, Hr;

  void gather(const VectorXd& y) {
    if (identity) {
      for (size_t i = 0; i < red_vars.size(); ++i) xl[i] = y[red_vars[i]];
    } else {
      for (size_t i = 0; i < red_vars.size(); ++i) yloc[i] = y[red_vars[i]];
      xl = c_loc;
      xl.noalias() += S * yloc;
    }
  }
  double value(const VectorXd& y) {
    gather(y);
    return term->eval(xl, nullptr, nullptr);
  }
  // Evaluates value/grad/hess at y, leaving the REDUCED gradient in gr and
  // Hessian in Hr.
  double derivatives(const VectorXd& y) {
    gather(y);
    double v = term->eval(xl, &gl, &Hl);
    if (identity) {
      gr = gl;
      Hr = Hl;
    } else {
      gr.noalias() = S.transpose() * gl;
      Hr.noalias() = S.transpose() * (Hl * S);
    }
    return v;
  }
};

struct Solver {
  const ConvexProgram& prog;
  const IpmConfig& cfg;
  Substitution sub;
  std::vector<int> red_block_sizes;
  std::vector<int> block_of_red;   // reduced index -> block id
  std::vector<int> offset_of_red;  // reduced index -> offset inside block
  std::vector<TermWork> obj_work;
  std::vector<TermWork> ineq_work;
  int m_barrier = 0;  // inequalities that survive elimination
  BlockTridiag H;
  VectorXd grad;
  IpmDiagnostics diag;
  bool merged = false;

  explicit Solver(const ConvexProgram& p, const IpmConfig& c) : prog(p), cfg(c) {
    if (p.dimension <= 0) throw InvalidArgumentError("program has no variables");
    if (p.start.size() != p.dimension)
      throw InvalidArgumentError("start size != dimension");
    sub = build_substitution(p);
    if (sub.n_red == 0)
      throw InvalidArgumentError("all variables eliminated; nothing to solve");
    setup_blocks();
    obj_work = build_terms(p.objective, /*inequality=*/false);
    ineq_work = build_terms(p.inequalities, /*inequality=*/true);
    for (const auto& w : ineq_work)
      if (!w.is_constant) ++m_barrier;
    H.init(red_block_sizes);
    grad.resize(sub.n_red);
    diag.blocks_merged = merged;
  }

  void setup_blocks() {
    std::vector<int> full_sizes = prog.block_sizes;
    if (full_sizes.empty()) full_sizes = {prog.dimension};
    int total = 0;
    for (int s : full_sizes) total += s;
    if (total != prog.dimension)
      throw InvalidArgumentError("block sizes do not sum to dimension");
    assign_blocks(full_sizes);
  }

  void assign_blocks(const std::vector<int>& full_sizes) {
    // Count surviving variables per full block; empty blocks are dropped.
    std::vector<int> full_block_of(prog.dimension);
    {
      int b = 0, used = 0;
      for (int i = 0; i < prog.dimension; ++i) {
        while (used >= full_sizes[b]) used = 0, ++b;
        full_block_of[i] = b;
        ++used;
      }
    }
    std::vector<int> count(full_sizes.size(), 0);
    for (int r = 0; r < sub.n_red; ++r) count[full_block_of[sub.full_of_red[r]]]++;
    std::vector<int> block_id(full_sizes.size(), -1);
    red_block_sizes.clear();
    for (size_t b = 0; b < full_sizes.size(); ++b) {
      if (count[b] == 0) continue;
      block_id[b] = static_cast<int>(red_block_sizes.size());
      red_block_sizes.push_back(count[b]);
    }
    block_of_red.resize(sub.n_red);
    offset_of_red.resize(sub.n_red);
    std::vector<int> fill(red_block_sizes.size(), 0);
    for (int r = 0; r < sub.n_red; ++r) {
      int b = block_id[full_block_of[sub.full_of_red[r]]];
      block_of_red[r] = b;
      offset_of_red[r] = fill[b]++;
    }
  }

  std::vector<TermWork> build_terms(const std::vector<SmoothTerm>& terms,
                                    bool inequality) {
    std::vector<TermWork> out;
    out.reserve(terms.size());
    VectorXd fixed_x;  // lazily built full vector of expression constants
    for (const auto& t : terms) {
      TermWork w;
      w.term = &t;
      const int nl = static_cast<int>(t.vars.size());
      for (int i = 1; i < nl; ++i)
        if (t.vars[i] <= t.vars[i - 1])
          throw InvalidArgumentError("term vars must be strictly increasing");
      // Union of reduced indices reachable from the support.
      std::vector<int> red;
      bool ident = true;
      for (int v : t.vars) {
        if (v < 0 || v >= prog.dimension)
          throw InvalidArgumentError("term references bad variable");
        if (sub.red_of_full[v] >= 0) {
          red.push_back(sub.red_of_full[v]);
        } else {
          ident = false;
          for (const auto& [rv, c] : sub.expr[v].terms) red.push_back(rv);
        }
      }
      std::sort(red.begin(), red.end());
      red.erase(std::unique(red.begin(), red.end()), red.end());
      w.red_vars = std::move(red);
      w.identity = ident;
      if (w.red_vars.empty()) {
        w.is_constant = true;
        VectorXd xl(nl);
        for (int i = 0; i < nl; ++i) xl[i] = sub.expr[t.vars[i]].constant;
        w.constant_value = t.eval(xl, nullptr, nullptr);
        if (inequality && !(w.constant_value <= 1e-9))
          throw InfeasibleError(
              "an inequality fixed by the equality constraints is violated");
        out.push_back(std::move(w));
        continue;
      }
      if (!w.identity) {
        w.S.setZero(nl, static_cast<int>(w.red_vars.size()));
        w.c_loc.setZero(nl);
        auto col_of = [&](int rv) {
          return static_cast<int>(std::lower_bound(w.red_vars.begin(),
                                                   w.red_vars.end(), rv) -
                                  w.red_vars.begin());
        };
        for (int i = 0; i < nl; ++i) {
          int v = t.vars[i];
          if (sub.red_of_full[v] >= 0) {
            w.S(i, col_of(sub.red_of_full[v])) = 1.0;
          } else {
            w.c_loc[i] = sub.expr[v].constant;
            for (const auto& [rv, c] : sub.expr[v].terms) w.S(i, col_of(rv)) = c;
          }
        }
      }
      const int nr = static_cast<int>(w.red_vars.size());
      w.lo_block = block_of_red[w.red_vars.front()];
      w.hi_block = block_of_red[w.red_vars.back()];
      w.xl.resize(nl);
      w.gl.resize(nl);
      w.Hl.resize(nl, nl);
      w.gr.resize(nr);
      w.yloc.resize(nr);
      w.Hr.resize(nr, nr);
      if (w.hi_block - w.lo_block > 1) merged = true;
      out.push_back(std::move(w));
    }
    return out;
  }

  // Merge everything into one dense block (fallback when some term spans
  // non-adjacent blocks; only small programs do this).
  void merge_blocks() {
    red_block_sizes = {sub.n_red};
    for (int r = 0; r < sub.n_red; ++r) block_of_red[r] = 0, offset_of_red[r] = r;
    for (auto* list : {&obj_work, &ineq_work})
      for (auto& w : *list)
        if (!w.is_constant) {
          w.lo_block = 0;
          w.hi_block = 0;
        }
    H.init(red_block_sizes);
  }

  // phi_t(y) = t * f(y) - sum log(-g_i(y)); -inf outside the domain.
  double eval_phi(const VectorXd& y, double t) {
    double barrier = 0;
    for (auto& w : ineq_work) {
      if (w.is_constant) continue;
      double g = w.value(y);
      if (!(g < 0)) return -kInf;
      barrier += std::log(-g);
    }
    double f = 0;
    for (auto& w : obj_work) f += w.is_constant ? w.constant_value : w.value(y);
    if (!std::isfinite(f)) return -kInf;
    return t * f + barrier;
  }

  double eval_objective(const VectorXd& y) {
    double f = 0;
    for (auto& w : obj_work) f += w.is_constant ? w.constant_value : w.value(y);
    return f;
  }

  void scatter(const TermWork& w, double gw, double hw, double ow) {
    // grad += gw * w.gr ; H += hw * w.Hr + ow * w.gr w.gr^T
    const int nr = static_cast<int>(w.red_vars.size());
    for (int i = 0; i < nr; ++i) grad[w.red_vars[i]] += gw * w.gr[i];
    for (int i = 0; i < nr; ++i) {
      int bi = block_of_red[w.red_vars[i]], oi = offset_of_red[w.red_vars[i]];
      for (int j = 0; j <= i; ++j) {
        double v = hw * w.Hr(i, j) + ow * w.gr[i] * w.gr[j];
        if (v == 0) continue;
        int bj = block_of_red[w.red_vars[j]], oj = offset_of_red[w.red_vars[j]];
        if (bi == bj) {
          H.diag[bi](oi, oj) += v;
          if (i != j) H.diag[bi](oj, oi) += v;
        } else {  // bi == bj + 1 by the adjacency invariant
          H.sub[bj](oi, oj) += v;
        }
      }
    }
  }

  // Assembles grad and H of phi_t at the (feasible) point y.
  void assemble(const VectorXd& y, double t) {
    grad.setZero();
    H.set_zero();
    for (auto& w : obj_work) {
      if (w.is_constant) continue;
      w.derivatives(y);
      scatter(w, t, t, 0);
    }
    for (auto& w : ineq_work) {
      if (w.is_constant) continue;
      double g = w.derivatives(y);
      if (!(g < 0)) throw SolverError("iterate left the feasible region");
      // maximize  -log(-g): grad += g'/g ; hess += -g''/(-g) - g'g'^T/g^2
      scatter(w, 1.0 / g, 1.0 / g, -1.0 / (g * g));
    }
  }

  // Solves (-H) dx = grad with the damping ladder. The ladder is relative to
  // the diagonal scale: near-boundary starts put 1/slack^2 barrier entries on
  // the diagonal, and the Schur chain then needs damping proportional to the
  // roundoff they shed, far beyond any absolute cap.
  VectorXd newton_direction(BlockFactor& fac) {
    BlockTridiag negH = H;
    double scale = 1.0;
    for (auto& d : negH.diag) {
      d = -d;
      scale = std::max(scale, d.diagonal().cwiseAbs().maxCoeff());
    }
    for (auto& s : negH.sub) s = -s;
    if (!std::isfinite(scale))
      throw SolverError("Newton system has non-finite entries");
    double tau = 0;
    for (int attempt = 0; attempt < 80; ++attempt) {
      if (fac.factor(negH, tau)) {
        if (tau > diag.max_damping) diag.max_damping = tau;
        VectorXd dx = fac.solve(grad);
        if (dx.allFinite()) return dx;
      }
      tau = (tau == 0) ? 1e-14 * scale : tau * 2;
    }
    throw SolverError("Newton system factorization failed at maximum damping");
  }

  // Newton centering at fixed barrier weight t. Returns phi at exit.
  double center(VectorXd& y, double t) {
    BlockFactor fac;
    double phi = eval_phi(y, t);
    if (phi == -kInf)
      throw InfeasibleError("centering started outside the feasible region");
    for (int it = 0; it < cfg.newton_max_iter; ++it) {
      assemble(y, t);
      VectorXd dy = newton_direction(fac);
      double dec2 = grad.dot(dy);
      ++diag.newton_iterations;
      if (!(dec2 > 0) || 0.5 * dec2 <= cfg.newton_tol) {
        if (cfg.record_steps)
          diag.steps.push_back({phi, phi, 0.0, dec2});
        break;
      }
      double step = 1.0;
      double phi_new = -kInf;
      bool accepted = false;
      for (int ls = 0; ls < 64; ++ls) {
        phi_new = eval_phi(y + step * dy, t);
        if (phi_new >= phi + cfg.ls_alpha * step * dec2) {
          accepted = true;
          break;
        }
        step *= cfg.ls_beta;
      }
      if (!accepted) {
        ++diag.line_search_stalls;
        break;  // flat to machine precision; the decrement test will re-check
      }
      if (cfg.record_steps) diag.steps.push_back({phi, phi_new, step, dec2});
      y += step * dy;
      phi = phi_new;
    }
    return phi;
  }

  VectorXd reduce_start() {
    // Verify the start satisfies the equality rows, then project it through
    // the substitution so anchors hold bit-exactly.
    for (size_t r = 0; r < prog.equalities.size(); ++r) {
      const auto& row = prog.equalities[r];
      double v = -row.rhs, scale = std::abs(row.rhs);
      for (int t = 0; t < static_cast<int>(row.vars.size()); ++t) {
        v += row.coeffs[t] * prog.start[row.vars[t]];
        scale = std::max(scale, std::abs(row.coeffs[t] * prog.start[row.vars[t]]));
      }
      if (std::abs(v) > 1e-7 * std::max(1.0, scale))
        throw InvalidArgumentError("start violates equality row " +
                                   std::to_string(r));
    }
    VectorXd y(sub.n_red);
    for (int r = 0; r < sub.n_red; ++r) y[r] = prog.start[sub.full_of_red[r]];
    return y;
  }

  void check_strict(const VectorXd& y) {
    double worst = -kInf;
    int worst_i = -1;
    for (size_t i = 0; i < ineq_work.size(); ++i) {
      if (ineq_work[i].is_constant) continue;
      double g = ineq_work[i].value(y);
      if (g > worst) worst = g, worst_i = static_cast<int>(i);
      if (!(g < 0)) {
        std::ostringstream os;
        os << "start is not strictly feasible: inequality " << worst_i
           << " has g = " << worst;
        throw InfeasibleError(os.str());
      }
    }
    if (!std::isfinite(eval_objective(y)))
      throw InfeasibleError("objective is undefined at the start point");
  }
};

}  // namespace

IpmResult maximize(const ConvexProgram& prog, const IpmConfig& cfg) {
  Solver s(prog, cfg);
  if (s.merged) s.merge_blocks();
  VectorXd y = s.reduce_start();
  s.check_strict(y);

  double t = cfg.barrier_init;
  const int m = s.m_barrier;
  // Natural stage bound: ceil(log(m / (s * tol)) / log mu) + 1, plus slack.
  int max_outer =
      m == 0 ? 1
             : static_cast<int>(std::ceil(
                   std::log(m / (cfg.barrier_init * cfg.outer_tol)) /
                   std::log(cfg.barrier_growth))) +
                   2;
  for (int outer = 0; outer < std::max(1, max_outer); ++outer) {
    s.center(y, t);
    ++s.diag.outer_iterations;
    if (m == 0 || static_cast<double>(m) / t <= cfg.outer_tol) break;
    t *= cfg.barrier_growth;
  }

  IpmResult res;
  res.diag = s.diag;
  res.diag.final_barrier_weight = t;
  res.diag.gap_bound = m == 0 ? 0 : static_cast<double>(m) / t;
  s.sub.to_full(y, res.x);
  res.objective = s.eval_objective(y);
  return res;
}

VectorXd newton_centering(const ConvexProgram& prog, double barrier_weight,
                          const VectorXd& start, const IpmConfig& cfg,
                          IpmDiagnostics* diag_out) {
  ConvexProgram local = prog;
  local.start = start;
  Solver s(local, cfg);
  if (s.merged) s.merge_blocks();
  VectorXd y = s.reduce_start();
  s.check_strict(y);
  s.center(y, barrier_weight);
  if (diag_out) {
    *diag_out = s.diag;
    diag_out->final_barrier_weight = barrier_weight;
  }
  VectorXd x;
  s.sub.to_full(y, x);
  return x;
}

}  // namespace uavtpc::ipm
