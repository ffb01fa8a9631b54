#pragma once

// Reusable smooth-term factories for the interior-point kernel: affine and
// quadratic constraint pieces plus the two concave rate surrogates (joint
// SINR log and quadratic-over-linear interference bound). All closures work
// on the local variable slice handed to them by the kernel.

#include <array>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "detail/scaling.hpp"
#include "uavtpc/ipm.hpp"

namespace uavtpc::detail {

using Eigen::Matrix2d;
using Eigen::Vector2d;
using ipm::SmoothTerm;

// g(x) = c0 + coef . x  (affine; zero Hessian)
inline SmoothTerm affine_ineq(std::vector<int> vars, VectorXd coef,
                              double c0) {
  SmoothTerm t;
  t.vars = std::move(vars);
  t.eval = [coef = std::move(coef), c0](const VectorXd& x, VectorXd* grad,
                                        MatrixXd* hess) {
    if (grad) *grad = coef;
    if (hess) hess->setZero();
    return c0 + coef.dot(x);
  };
  return t;
}

inline SmoothTerm bound_upper(int var, double ub) {
  return affine_ineq({var}, VectorXd::Ones(1), -ub);
}

inline SmoothTerm bound_lower(int var, double lb) {
  return affine_ineq({var}, -VectorXd::Ones(1), lb);
}

// g = |xy - c|^2 - r^2 for a 2-D point against a fixed centre.
inline SmoothTerm disc_fixed(int vx, int vy, const Vector2d& c, double r) {
  SmoothTerm t;
  t.vars = {vx, vy};
  t.eval = [c, r2 = r * r](const VectorXd& x, VectorXd* grad, MatrixXd* hess) {
    const Vector2d d(x[0] - c[0], x[1] - c[1]);
    if (grad) *grad = 2.0 * d;
    if (hess) *hess = 2.0 * Matrix2d::Identity();
    return d.squaredNorm() - r2;
  };
  return t;
}

// g = |xy2 - xy1|^2 - r^2 between two 2-D points (vars: x1 y1 x2 y2).
inline SmoothTerm disc_pair(const std::array<int, 4>& vars, double r) {
  SmoothTerm t;
  t.vars = {vars[0], vars[1], vars[2], vars[3]};
  t.eval = [r2 = r * r](const VectorXd& x, VectorXd* grad, MatrixXd* hess) {
    const Vector2d d(x[2] - x[0], x[3] - x[1]);
    if (grad) {
      (*grad)[0] = -2 * d[0];
      (*grad)[1] = -2 * d[1];
      (*grad)[2] = 2 * d[0];
      (*grad)[3] = 2 * d[1];
    }
    if (hess) {
      hess->setZero();
      for (int i = 0; i < 2; ++i) {
        (*hess)(i, i) = 2;
        (*hess)(i + 2, i + 2) = 2;
        (*hess)(i, i + 2) = -2;
        (*hess)(i + 2, i) = -2;
      }
    }
    return d.squaredNorm() - r2;
  };
  return t;
}

// Concave log of an affine-minus-quadratic aggregate: w * (log u + c0) with
//   u = u0 + sum_j (alpha_j a_j - beta_j |q_j - s_j|^2),
// group j measured against its own centre s_j (column j). Local layout:
// [a_0 qx_0 qy_0 qz_0 a_1 ...]. Backs both the joint SINR surrogate (all
// centres equal) and the TDMA aggregated-rate bound (own-terminal centres).
inline SmoothTerm aggregate_log_term(std::vector<int> vars, VectorXd alpha,
                                     VectorXd beta, Matrix3Xd s, double c0,
                                     double w, double u0 = 1.0) {
  SmoothTerm t;
  t.vars = std::move(vars);
  const int K = static_cast<int>(alpha.size());
  t.eval = [alpha = std::move(alpha), beta = std::move(beta),
            s = std::move(s), c0, w, u0,
            K](const VectorXd& x, VectorXd* grad, MatrixXd* hess) -> double {
    double u = u0;
    VectorXd du;
    if (grad || hess) du.setZero(4 * K);
    for (int j = 0; j < K; ++j) {
      const double a = x[4 * j];
      const Vector3d dq(x[4 * j + 1] - s(0, j), x[4 * j + 2] - s(1, j),
                        x[4 * j + 3] - s(2, j));
      u += alpha[j] * a - beta[j] * dq.squaredNorm();
      if (grad || hess) {
        du[4 * j] = alpha[j];
        du.segment<3>(4 * j + 1) = -2.0 * beta[j] * dq;
      }
    }
    if (u <= 0) return -std::numeric_limits<double>::infinity();
    if (grad) *grad = (w / u) * du;
    if (hess) {
      hess->noalias() = (-w / (u * u)) * du * du.transpose();
      for (int j = 0; j < K; ++j)
        for (int c = 1; c <= 3; ++c)
          (*hess)(4 * j + c, 4 * j + c) -= 2.0 * beta[j] * w / u;
    }
    return w * (std::log(u) + c0);
  };
  return t;
}

// Joint SINR log for one receiver at one slot: the aggregate above with a
// single centre s (the receiving terminal), a concave lower bound of
// w * log(1 + S + I) that is exact at the expansion point. The baseline u0
// (default 1) absorbs frozen contributions and affine reparametrizations of
// the per-UAV consensus surrogates.
inline SmoothTerm joint_log_term(std::vector<int> vars, VectorXd alpha,
                                 VectorXd beta, const Vector3d& s, double c0,
                                 double w, double u0 = 1.0) {
  const int K = static_cast<int>(alpha.size());
  return aggregate_log_term(std::move(vars), std::move(alpha),
                            std::move(beta), s.replicate(1, K), c0, w, u0);
}

// Interference penalty for one interferer j seen at ground terminal s_k:
// f = -c a^2 / ell with a = a0 + a1 x[0] and ell = ell0 + m . q, the
// linearized squared distance. The affine sqrt-power map covers the inflated
// variables of the per-UAV consensus surrogates (a0 = 0, a1 = 1 otherwise).
// Concave for ell > 0 (trust region keeps it there); Hessian is the rank-1
// form -(2c/ell) v v^T, v = [1; -(a/ell) m]. Local layout: [a qx qy qz].
inline SmoothTerm interference_term(std::vector<int> vars, const Vector3d& m,
                                    double ell0, double c, double a0 = 0.0,
                                    double a1 = 1.0) {
  SmoothTerm t;
  t.vars = std::move(vars);
  t.eval = [m, ell0, c, a0, a1](const VectorXd& x, VectorXd* grad,
                                MatrixXd* hess) -> double {
    const double a = a0 + a1 * x[0];
    const double ell = ell0 + m.dot(x.segment<3>(1));
    if (ell <= 0) return -std::numeric_limits<double>::infinity();
    if (grad) {
      (*grad)[0] = -2 * c * a * a1 / ell;
      grad->segment<3>(1) = (c * a * a / (ell * ell)) * m;
    }
    if (hess) {
      Eigen::Vector4d v;
      v[0] = a1;
      v.segment<3>(1) = -(a / ell) * m;
      hess->noalias() = (-2 * c / ell) * v * v.transpose();
    }
    return -c * a * a / ell;
  };
  return t;
}

// g = sum_i x_i^2 - r^2: Euclidean ball of radius r about the origin, in any
// number of variables. Relaxes the TDMA simplex through beta = sqrt(alpha):
// sum beta^2 <= 1 is convex and binds at the optimum (rates grow with beta).
inline SmoothTerm ball_ineq(std::vector<int> vars, double r) {
  SmoothTerm t;
  t.vars = std::move(vars);
  t.eval = [r2 = r * r](const VectorXd& x, VectorXd* grad, MatrixXd* hess) {
    if (grad) *grad = 2.0 * x;
    if (hess) {
      hess->setZero();
      hess->diagonal().setConstant(2.0);
    }
    return x.squaredNorm() - r2;
  };
  return t;
}

// FDMA perspective rate for one link at one slot:
//   f = w * a * log(1 + p * h(q) / a),  h(q) = 3/d_r^2 - 2|q - s|/d_r^3,
// where a is the bandwidth share and h is the tangent minorant of the
// inverse-square channel at reference distance d_r (h <= 1/|q-s|^2, equal at
// |q-s| = d_r). Concave on {a > 0, a + p h > 0}: the (a, h) Hessian is the
// rank-1 form -(1/(a(1+g)^2)) (g, -p)(g, -p)^T with g = p h / a, h is
// concave in q, and f is increasing in h. Local layout: [a qx qy qz].
inline SmoothTerm fdma_term(std::vector<int> vars, const Vector3d& s,
                            double d_ref, double p, double w) {
  SmoothTerm t;
  t.vars = std::move(vars);
  t.eval = [s, d_ref, p, w](const VectorXd& x, VectorXd* grad,
                            MatrixXd* hess) -> double {
    const double a = x[0];
    const Vector3d dq(x[1] - s[0], x[2] - s[1], x[3] - s[2]);
    const double r = dq.norm();
    if (!(a > 0) || r <= 1e-9)
      return -std::numeric_limits<double>::infinity();
    const double c3 = 2.0 / (d_ref * d_ref * d_ref);
    const double h = 3.0 / (d_ref * d_ref) - c3 * r;
    if (a + p * h <= 0) return -std::numeric_limits<double>::infinity();
    const double g = p * h / a;
    const double ig = 1.0 / (1.0 + g);
    const double lg = std::log1p(g);
    if (grad || hess) {
      const Vector3d dh = (-c3 / r) * dq;  // grad h = -c3 * unit(q - s)
      if (grad) {
        (*grad)[0] = w * (lg - g * ig);
        grad->segment<3>(1) = (w * p * ig) * dh;
      }
      if (hess) {
        Eigen::Vector4d v;
        v[0] = g;
        v.segment<3>(1) = -p * dh;
        hess->noalias() = (-w * ig * ig / a) * v * v.transpose();
        // + w * f_h * hess h, with hess h = -(c3/r) (I - n n^T), n = unit(q-s)
        const Vector3d n = dq / r;
        hess->block<3, 3>(1, 1) -=
            (w * p * ig * c3 / r) *
            (Eigen::Matrix3d::Identity() - n * n.transpose());
      }
    }
    return w * a * lg;
  };
  return t;
}

}  // namespace uavtpc::detail
