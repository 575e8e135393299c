#include "relinf/curvature.hpp"

#include "relinf/model.hpp"

namespace relinf {

CurvatureOperator CurvatureOperator::exact(Matrix c, double damping, Basis basis) {
  if (c.rows() != c.cols()) throw DimensionError("curvature matrix must be square");
  if (damping < 0) throw ConfigError("damping must be >= 0");
  CurvatureOperator op;
  op.kind_ = Kind::ExactMatrix;
  op.basis_ = basis;
  op.damping_ = damping;
  op.dim_ = c.rows();
  op.matrix_ = std::move(c);
  return op;
}

CurvatureOperator CurvatureOperator::projected(Matrix c, double damping) {
  CurvatureOperator op = exact(std::move(c), damping, Basis::Hessian);
  op.kind_ = Kind::ProjectedMatrix;
  return op;
}

CurvatureOperator CurvatureOperator::closure(
    std::function<Vector(const Vector&)> apply, Index dim, double damping,
    Basis basis) {
  if (damping < 0) throw ConfigError("damping must be >= 0");
  if (dim < 1) throw DimensionError("operator dimension must be >= 1");
  CurvatureOperator op;
  op.kind_ = Kind::HvpClosure;
  op.basis_ = basis;
  op.damping_ = damping;
  op.dim_ = dim;
  op.apply_ = std::move(apply);
  return op;
}

CurvatureOperator CurvatureOperator::from_model(const ParamVector& theta,
                                                const Dataset& data, double damping,
                                                Basis basis, bool materialize,
                                                Index dense_cap) {
  if (damping < 0) throw ConfigError("damping must be >= 0");
  CurvatureOperator op;
  if (materialize) {
    Matrix c = basis == Basis::Hessian
                   ? exact_hessian(theta, data, nullptr, dense_cap)
                   : fisher(theta, data, FisherKind::Model, dense_cap);
    op = exact(std::move(c), damping, basis);
  } else {
    const Index p = theta.spec.param_count();
    std::function<Vector(const Vector&)> apply;
    if (basis == Basis::Hessian)
      apply = [&theta, &data](const Vector& v) { return hvp(theta, data, v); };
    else
      apply = [&theta, &data](const Vector& v) { return fisher_vp(theta, data, v); };
    op = closure(std::move(apply), p, damping, basis);
  }
  op.theta_ = &theta;
  op.data_ = &data;
  return op;
}

Vector CurvatureOperator::apply(const Vector& v) const {
  if (v.size() != dim_) throw DimensionError("operator/vector dimension mismatch");
  if (kind_ == Kind::HvpClosure) return apply_(v);
  return matrix_ * v;
}

Vector CurvatureOperator::apply_damped(const Vector& v) const {
  Vector out = apply(v);
  if (damping_ != 0.0) out += damping_ * v;
  return out;
}

const Matrix& CurvatureOperator::matrix() const {
  if (kind_ == Kind::HvpClosure)
    throw SolverError("operation requires a materialized curvature matrix");
  return matrix_;
}

const ParamVector& CurvatureOperator::model_params() const {
  if (!theta_) throw Error("curvature operator has no model source");
  return *theta_;
}

const Dataset& CurvatureOperator::model_data() const {
  if (!data_) throw Error("curvature operator has no model source");
  return *data_;
}

const char* to_string(CurvatureOperator::Basis basis) {
  return basis == CurvatureOperator::Basis::Hessian ? "hessian" : "fisher";
}

}  // namespace relinf
