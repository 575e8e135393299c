#pragma once

// Independent reference computations used to freeze expected values in
// tests. Everything here goes through objective/loss evaluations or dense
// Eigen factorizations only, never through the solver or influence paths
// it is used to check.

#include "relinf/model.hpp"
#include "relinf/types.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <functional>
#include <random>

namespace oracles {

using relinf::Dataset;
using relinf::Index;
using relinf::Matrix;
using relinf::ModelSpec;
using relinf::ParamVector;
using relinf::Vector;

// Central finite differences of the single-example loss.
inline Vector fd_grad(const ParamVector& theta, const Vector& x, int y,
                      double h = 1e-5) {
  Vector out(theta.values.size());
  ParamVector t = theta;
  for (Index j = 0; j < t.values.size(); ++j) {
    const double orig = t.values[j];
    t.values[j] = orig + h;
    const double fp = relinf::loss(t, x, y);
    t.values[j] = orig - h;
    const double fm = relinf::loss(t, x, y);
    t.values[j] = orig;
    out[j] = (fp - fm) / (2.0 * h);
  }
  return out;
}

// Central finite differences of the objective gradient along v.
inline Vector fd_hvp(const ParamVector& theta, const Dataset& data, const Vector& v,
                     double h = 1e-5) {
  ParamVector plus = theta, minus = theta;
  plus.values += h * v;
  minus.values -= h * v;
  return (relinf::objective_grad(plus, data) - relinf::objective_grad(minus, data)) /
         (2.0 * h);
}

// Dense damped-inverse influence, straight from the definition.
struct DenseInfluence {
  Matrix hinv;  // (C + lambda I)^{-1}

  DenseInfluence(const Matrix& curvature, double lambda) {
    Matrix damped = curvature;
    damped.diagonal().array() += lambda;
    hinv = Eigen::LLT<Matrix>(damped).solve(
        Matrix::Identity(damped.rows(), damped.cols()));
  }
  double influence(const Vector& g_test, const Vector& g_i) const {
    return g_test.dot(hinv * g_i);
  }
  double theta_denom(const Vector& g_i) const { return (hinv * g_i).norm(); }
  double ell_denom(const Vector& g_i) const {
    return std::sqrt(std::max(0.0, g_i.dot(hinv * g_i)));
  }
};

// Scalar root by bisection; f must change sign on [lo, hi].
inline double bisect(const std::function<double(double)>& f, double lo, double hi,
                     int iters = 200) {
  double flo = f(lo);
  for (int it = 0; it < iters; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double fmid = f(mid);
    if ((flo <= 0 && fmid <= 0) || (flo >= 0 && fmid >= 0)) {
      lo = mid;
      flo = fmid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

// Brute-force constrained reweighting search behind the relative-influence
// criteria: for each i, maximize |infl_i * eps| over a uniform grid of
// eps subject to constraint_scale_i * |eps| <= delta, and return the
// winning index. constraint_scale is |H^-1 g_i| for the theta variant and
// sqrt(Infl(i,i)) for the ell variant.
inline Index brute_force_constrained_argmax(const Vector& infl,
                                            const Vector& constraint_scale,
                                            double delta, int grid_points) {
  double eps_max = 0.0;
  for (Index i = 0; i < infl.size(); ++i)
    if (constraint_scale[i] > 0)
      eps_max = std::max(eps_max, delta / constraint_scale[i]);
  eps_max *= 1.05;  // keep every feasible endpoint interior to the grid

  Index best_i = -1;
  double best_val = -1.0;
  for (Index i = 0; i < infl.size(); ++i) {
    double best_eps_val = 0.0;
    for (int t = 0; t < grid_points; ++t) {
      const double eps =
          -eps_max + 2.0 * eps_max * static_cast<double>(t) / (grid_points - 1);
      if (constraint_scale[i] * std::abs(eps) > delta) continue;
      best_eps_val = std::max(best_eps_val, std::abs(infl[i] * eps));
    }
    if (best_eps_val > best_val) {
      best_val = best_eps_val;
      best_i = i;
    }
  }
  return best_i;
}

}  // namespace oracles
