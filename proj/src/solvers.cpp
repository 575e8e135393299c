#include "relinf/solvers.hpp"

#include "relinf/hash.hpp"
#include "relinf/model.hpp"

#include <cmath>
#include <random>

namespace relinf {

namespace {

constexpr double kDirectResidualTol = 1e-10;
constexpr int kLissaResidualStride = 10;  // full residual check cadence
constexpr int kLissaDivergenceRun = 10;

double relative_residual(const CurvatureOperator& op, const Vector& x,
                         const Vector& v) {
  const double vn = v.norm();
  if (vn == 0.0) return 0.0;
  return (op.apply_damped(x) - v).norm() / vn;
}

std::pair<Vector, SolverReport> solve_direct(const CurvatureOperator& op,
                                             const Vector& v) {
  DirectFactor factor(op);
  Vector x = factor.solve(v);
  SolverReport report;
  report.method = SolveMethod::Direct;
  report.iterations = 0;
  report.residual_norm = relative_residual(op, x, v);
  report.converged = report.residual_norm <= kDirectResidualTol;
  return {std::move(x), std::move(report)};
}

std::pair<Vector, SolverReport> solve_cg(const CurvatureOperator& op,
                                         const Vector& v, const SolveOptions& opts) {
  SolverReport report;
  report.method = SolveMethod::Cg;
  const double vn = v.norm();
  if (vn == 0.0) {
    report.converged = true;
    return {Vector::Zero(op.dim()), std::move(report)};
  }
  const int max_iters =
      opts.cg_max_iters > 0 ? opts.cg_max_iters : static_cast<int>(10 * op.dim());

  Vector x = Vector::Zero(op.dim());
  Vector r = v;  // residual for x = 0
  Vector p = r;
  double rs = r.squaredNorm();

  Vector best_x = x;
  double best_res = std::sqrt(rs) / vn;
  report.residual_history.push_back(best_res);

  int k = 0;
  while (k < max_iters && best_res > opts.cg_tol) {
    ++k;
    const Vector ap = op.apply_damped(p);
    const double p_ap = p.dot(ap);
    if (p_ap <= 0.0)
      throw SolverError(
          "conjugate gradient detected non-positive curvature; increase the "
          "damping lambda");
    const double alpha = rs / p_ap;
    x += alpha * p;
    r -= alpha * ap;
    const double rs_new = r.squaredNorm();
    const double res = std::sqrt(rs_new) / vn;
    if (res < best_res) {
      best_res = res;
      best_x = x;
    }
    report.residual_history.push_back(best_res);
    p = r + (rs_new / rs) * p;
    rs = rs_new;
  }
  report.iterations = k;
  report.residual_norm = relative_residual(op, best_x, v);
  report.converged = report.residual_norm <= opts.cg_tol;
  return {std::move(best_x), std::move(report)};
}

// One LiSSA recurrence x_j = v + (I - (C+lambda I)/sigma) x_{j-1} against
// the given damped apply; returns the last iterate (un-scaled).
template <typename DampedApply>
Vector lissa_recurrence(const Vector& v, double sigma, int iters,
                        const DampedApply& damped, const CurvatureOperator& op,
                        const SolveOptions& opts, SolverReport& report,
                        bool check_residual) {
  Vector x = v;
  double first_delta = -1.0;
  int growth_run = 0;
  for (int j = 1; j <= iters; ++j) {
    Vector x_next = v + x - damped(x) / sigma;
    const double delta = (x_next - x).norm();
    if (first_delta < 0.0) first_delta = delta;
    // A convergent recurrence keeps update magnitudes below the first one
    // (|I - M| < 1); a sustained run above it means divergence.
    if (delta > first_delta) {
      if (++growth_run >= kLissaDivergenceRun)
        throw SolverError(
            "LiSSA recurrence diverged; increase the scale sigma "
            "(--lissa-scale) or the damping lambda");
    } else {
      growth_run = 0;
    }
    x = std::move(x_next);
    report.iterations = j;
    if (check_residual && (j % kLissaResidualStride == 0 || j == iters)) {
      const double res = relative_residual(op, x / sigma, v);
      report.residual_history.push_back(res);
      if (res <= opts.lissa_tol) break;
    }
  }
  return x;
}

std::pair<Vector, SolverReport> solve_lissa(const CurvatureOperator& op,
                                            const Vector& v,
                                            const SolveOptions& opts) {
  SolverReport report;
  report.method = SolveMethod::Lissa;
  const double vn = v.norm();
  if (vn == 0.0) {
    report.converged = true;
    return {Vector::Zero(op.dim()), std::move(report)};
  }
  const double sigma = opts.lissa_scale > 0.0
                           ? opts.lissa_scale
                           : estimate_scale(op, opts.power_iters);
  if (!(sigma > 0.0))
    throw SolverError("LiSSA scale estimate is not positive; the damped "
                      "operator looks singular, increase the damping lambda");

  if (opts.lissa_batch <= 0) {
    auto damped = [&op](const Vector& x) { return op.apply_damped(x); };
    Vector x = lissa_recurrence(v, sigma, opts.lissa_iters, damped, op, opts,
                                report, /*check_residual=*/true);
    Vector out = x / sigma;
    report.residual_norm = relative_residual(op, out, v);
    report.converged = report.residual_norm <= opts.lissa_tol;
    return {std::move(out), std::move(report)};
  }

  // Minibatch variant: each step applies a sampled-batch estimate of the
  // damped operator; repeats are independent runs averaged at the end.
  if (!op.has_model())
    throw SolverError("minibatch LiSSA requires a model-backed operator");
  const ParamVector& theta = op.model_params();
  const Dataset& data = op.model_data();
  const Index n = data.n();
  const Index batch = std::min<Index>(opts.lissa_batch, n);
  const int repeats = std::max(1, opts.lissa_repeats);

  Vector accum = Vector::Zero(op.dim());
  for (int rep = 0; rep < repeats; ++rep) {
    std::mt19937_64 rng(opts.seed + static_cast<std::uint64_t>(rep) * 0x9e3779b9ULL);
    std::uniform_int_distribution<Index> pick(0, n - 1);
    Dataset sub;
    sub.c = data.c;
    sub.features.resize(batch, data.d());
    sub.labels.resize(batch);
    auto damped = [&](const Vector& x) {
      for (Index b = 0; b < batch; ++b) {
        const Index i = pick(rng);
        sub.features.row(b) = data.features.row(i);
        sub.labels[b] = data.labels[i];
      }
      Vector out = op.basis() == CurvatureOperator::Basis::Hessian
                       ? hvp(theta, sub, x)
                       : fisher_vp(theta, sub, x);
      if (op.damping() != 0.0) out += op.damping() * x;
      return out;
    };
    SolverReport run_report;
    Vector x = lissa_recurrence(v, sigma, opts.lissa_iters, damped, op, opts,
                                run_report, /*check_residual=*/false);
    report.iterations += run_report.iterations;
    accum += x / sigma;
  }
  Vector out = accum / static_cast<double>(repeats);
  report.residual_norm = relative_residual(op, out, v);
  report.converged = report.residual_norm <= opts.lissa_tol;
  return {std::move(out), std::move(report)};
}

}  // namespace

double estimate_scale(const CurvatureOperator& op, int iters) {
  if (iters < 1) throw ConfigError("estimate_scale requires iters >= 1");
  std::mt19937_64 rng(0x9e3779b97f4a7c15ULL);  // fixed start for reproducibility
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(op.dim());
  for (Index i = 0; i < v.size(); ++i) v[i] = normal(rng);
  v /= v.norm();
  double eig = 0.0;
  for (int t = 0; t < iters; ++t) {
    Vector w = op.apply_damped(v);
    eig = v.dot(w);  // Rayleigh quotient
    const double wn = w.norm();
    if (wn == 0.0) return 0.0;  // operator is identically zero
    v = w / wn;
  }
  return 1.1 * eig;
}

std::pair<Vector, SolverReport> solve(const CurvatureOperator& op, const Vector& v,
                                      SolveMethod method, const SolveOptions& opts) {
  if (v.size() != op.dim())
    throw DimensionError("solve right-hand side does not match operator dimension");
  if (!v.allFinite()) throw DataError("solve right-hand side is not finite");
  switch (method) {
    case SolveMethod::Direct:
      return solve_direct(op, v);
    case SolveMethod::Cg:
      return solve_cg(op, v, opts);
    case SolveMethod::Lissa:
      return solve_lissa(op, v, opts);
  }
  throw Error("unreachable solve method");
}

DirectFactor::DirectFactor(const CurvatureOperator& op) {
  if (!op.has_matrix())
    throw SolverError(
        "direct solve requires an exact or projected curvature matrix; use cg "
        "or lissa with matrix-free operators");
  damped_ = op.matrix();
  damped_.diagonal().array() += op.damping();
  llt_.compute(damped_);
  if (llt_.info() != Eigen::Success)
    throw SolverError(
        "damped curvature operator is not positive definite; increase the "
        "damping lambda");
}

Vector DirectFactor::solve(const Vector& v) const {
  Vector x = llt_.solve(v);
  x += llt_.solve(v - damped_ * x);  // one refinement step
  return x;
}

Matrix DirectFactor::solve_many(const Matrix& rhs_cols) const {
  Matrix x = llt_.solve(rhs_cols);
  x += llt_.solve(rhs_cols - damped_ * x);
  return x;
}

STestVector s_test(const ParamVector& theta, const CurvatureOperator& op,
                   const Eigen::Ref<const Vector>& x_test, int y_test,
                   SolveMethod method, const SolveOptions& opts, int test_id) {
  if (op.dim() != theta.spec.param_count())
    throw DimensionError("curvature operator does not match parameter count");
  const Vector g_test = grad(theta, x_test, y_test);
  auto [x, report] = solve(op, g_test, method, opts);
  STestVector out;
  out.values = std::move(x);
  out.params_hash = params_fingerprint(theta);
  out.lambda = op.damping();
  out.basis = op.basis();
  out.report = std::move(report);
  out.test_id = test_id;
  return out;
}

const char* to_string(SolveMethod method) {
  switch (method) {
    case SolveMethod::Direct:
      return "direct";
    case SolveMethod::Cg:
      return "cg";
    case SolveMethod::Lissa:
      return "lissa";
  }
  return "unknown";
}

}  // namespace relinf
