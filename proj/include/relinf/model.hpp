#pragma once

#include "relinf/types.hpp"

namespace relinf {

/// Class probabilities p_theta(.|x); entries in (0,1), summing to 1.
Vector predict_proba(const ParamVector& theta, const Eigen::Ref<const Vector>& x);

/// Cross-entropy loss -log p_theta(y|x) for one example.
double loss(const ParamVector& theta, const Eigen::Ref<const Vector>& x, int y);

/// Per-example loss gradient. Excludes the l2 penalty: the ridge term
/// belongs to the training objective and its Hessian, not to g_i.
Vector grad(const ParamVector& theta, const Eigen::Ref<const Vector>& x, int y);

/// Weighted training objective: sum_i w_i l(z_i) + (l2/2) |theta|^2.
/// weights == nullptr means uniform 1/n.
double objective(const ParamVector& theta, const Dataset& data,
                 const Vector* weights = nullptr);

Vector objective_grad(const ParamVector& theta, const Dataset& data,
                      const Vector* weights = nullptr);

/// Exact Hessian-vector product of the training objective
/// (sum_i w_i H_i + l2 I) v, computed analytically without forming H.
Vector hvp(const ParamVector& theta, const Dataset& data,
           const Eigen::Ref<const Vector>& v, const Vector* weights = nullptr);

/// Dense objective Hessian. Guarded by dense_cap; use the hvp path above
/// the cap.
Matrix exact_hessian(const ParamVector& theta, const Dataset& data,
                     const Vector* weights = nullptr, Index dense_cap = kDenseCap);

enum class FisherKind { Model, Empirical };

/// Fisher information matrix at theta, uniform weights 1/n.
///   Model:     (1/n) sum_i E_{y~p_theta(.|x_i)} g(x_i,y) g(x_i,y)^T
///   Empirical: (1/n) sum_i g_i g_i^T with observed labels
/// Excludes the l2 term.
Matrix fisher(const ParamVector& theta, const Dataset& data, FisherKind kind,
              Index dense_cap = kDenseCap);

/// Model-Fisher (Gauss-Newton) vector product, matrix-free.
Vector fisher_vp(const ParamVector& theta, const Dataset& data,
                 const Eigen::Ref<const Vector>& v);

/// Builds the n x P matrix of per-example gradients at theta and records
/// the parameter fingerprint. Warns on stderr when theta is far from
/// stationary.
GradCache build_grad_cache(const ParamVector& theta, const Dataset& data,
                           double stationarity_warn_tol = 1e-6);

}  // namespace relinf
