#pragma once

#include "relinf/curvature.hpp"
#include "relinf/types.hpp"

#include <Eigen/Cholesky>

#include <utility>
#include <vector>

namespace relinf {

enum class SolveMethod { Direct, Cg, Lissa };

struct SolveOptions {
  double cg_tol = 1e-8;
  int cg_max_iters = 0;    // 0 -> 10 * dim
  int lissa_iters = 2000;  // recurrence budget
  double lissa_tol = 1e-8;
  double lissa_scale = 0.0;  // 0 -> auto via estimate_scale
  int lissa_batch = 0;       // 0 -> full batch (deterministic recurrence)
  int lissa_repeats = 1;     // averaged runs in minibatch mode
  std::uint64_t seed = 0;    // minibatch sampling
  int power_iters = 50;
};

struct SolverReport {
  SolveMethod method = SolveMethod::Direct;
  int iterations = 0;
  double residual_norm = 0.0;  // |(C+lambda I)x - v| / |v|
  bool converged = false;
  // Per-iteration residual of the reported iterate (CG keeps the best
  // iterate seen, so this envelope is non-increasing).
  std::vector<double> residual_history;
};

/// x ~= (C + lambda I)^{-1} v.
std::pair<Vector, SolverReport> solve(const CurvatureOperator& op, const Vector& v,
                                      SolveMethod method,
                                      const SolveOptions& opts = {});

/// LiSSA scale: 1.1x a power-iteration estimate of lambda_max(C + lambda I).
double estimate_scale(const CurvatureOperator& op, int iters);

/// Cached Cholesky factorization of C + lambda I for repeated right-hand
/// sides; requires a materialized operator.
class DirectFactor {
 public:
  explicit DirectFactor(const CurvatureOperator& op);
  Vector solve(const Vector& v) const;
  Matrix solve_many(const Matrix& rhs_cols) const;
  Index dim() const { return damped_.rows(); }

 private:
  Matrix damped_;
  Eigen::LLT<Matrix> llt_;
};

/// (C + lambda I)^{-1} grad(theta, z_test), reusable across training points.
struct STestVector {
  Vector values;
  Sha256Digest params_hash{};
  double lambda = 0.0;
  CurvatureOperator::Basis basis = CurvatureOperator::Basis::Hessian;
  SolverReport report;
  int test_id = -1;
};

STestVector s_test(const ParamVector& theta, const CurvatureOperator& op,
                   const Eigen::Ref<const Vector>& x_test, int y_test,
                   SolveMethod method, const SolveOptions& opts = {},
                   int test_id = -1);

const char* to_string(SolveMethod method);

}  // namespace relinf
