#pragma once

#include "relinf/types.hpp"

#include <functional>

namespace relinf {

/// Damped curvature C + lambda*I, exposed either as a dense matrix, a
/// matrix-free apply closure, or a small projected Q x Q matrix.
///
/// Basis::Hessian is the training-objective Hessian (data term + l2*I);
/// Basis::ModelFisher is the model Fisher (no l2). The damping lambda is
/// applied on top of either basis and is recorded in all downstream
/// reports.
class CurvatureOperator {
 public:
  enum class Kind { ExactMatrix, HvpClosure, ProjectedMatrix };
  enum class Basis { Hessian, ModelFisher };

  static CurvatureOperator exact(Matrix c, double damping,
                                 Basis basis = Basis::Hessian);
  static CurvatureOperator projected(Matrix c, double damping);
  static CurvatureOperator closure(std::function<Vector(const Vector&)> apply,
                                   Index dim, double damping,
                                   Basis basis = Basis::Hessian);

  /// Builds the operator from a trained model. Borrows theta and data;
  /// the caller keeps both alive for the operator's lifetime.
  /// materialize=true forms the dense matrix (subject to the dense cap),
  /// otherwise the operator stays matrix-free.
  static CurvatureOperator from_model(const ParamVector& theta, const Dataset& data,
                                      double damping, Basis basis,
                                      bool materialize = false,
                                      Index dense_cap = kDenseCap);

  Vector apply(const Vector& v) const;         // C v
  Vector apply_damped(const Vector& v) const;  // (C + lambda I) v

  Index dim() const { return dim_; }
  double damping() const { return damping_; }
  Kind kind() const { return kind_; }
  Basis basis() const { return basis_; }
  bool has_matrix() const { return kind_ != Kind::HvpClosure; }
  const Matrix& matrix() const;

  bool has_model() const { return theta_ != nullptr; }
  const ParamVector& model_params() const;
  const Dataset& model_data() const;

 private:
  CurvatureOperator() = default;

  Kind kind_ = Kind::ExactMatrix;
  Basis basis_ = Basis::Hessian;
  double damping_ = 0.0;
  Index dim_ = 0;
  Matrix matrix_;
  std::function<Vector(const Vector&)> apply_;
  const ParamVector* theta_ = nullptr;
  const Dataset* data_ = nullptr;
};

const char* to_string(CurvatureOperator::Basis basis);

}  // namespace relinf
