#pragma once

#include "relinf/influence.hpp"
#include "relinf/types.hpp"

#include <functional>
#include <string>

namespace relinf {

/// Row-orthonormal projection A (Q x P): rows are the leading eigenvectors
/// of the empirical Fisher (1/N) sum_i g_i g_i^T. With orthonormal rows
/// the pseudoinverse is A^T and A^T A is an orthogonal projector.
struct ProjectionMatrix {
  Matrix a;             // Q x P
  Vector eigvals;       // nonincreasing spectrum of the kept directions
  double total_variance = 0.0;  // trace of the empirical Fisher

  Index q() const { return a.rows(); }
  Index p() const { return a.cols(); }
  double explained_variance() const {
    return total_variance > 0 ? eigvals.sum() / total_variance : 0.0;
  }
};

/// Streaming PCA over row blocks of the gradient cache in dataset order;
/// each block is absorbed through a thin SVD of the re-stacked sketch, so
/// the kept rows stay orthonormal for any batch size.
ProjectionMatrix fit_pca(const GradCache& cache, Index q, Index batch_size = 256);

/// A g; a contraction, with equality iff g lies in the row space.
Vector project_grad(const ProjectionMatrix& proj, const Eigen::Ref<const Vector>& g);

/// A H A^T with damping applied after projection.
struct ProjectedCurvature {
  Matrix h_omega;  // Q x Q, symmetric
  double lambda = 0.0;
};

/// Builds A H A^T from exactly Q calls of the supplied HVP closure and
/// symmetrizes the result.
ProjectedCurvature projected_hessian(const ProjectionMatrix& proj,
                                     const std::function<Vector(const Vector&)>& hvp,
                                     double lambda);

/// scores[i] = (A g_test)^T (h_omega + lambda I)^{-1} (A g_i); one Q x Q
/// solve per test point.
InfluenceScores projected_influence(const ProjectionMatrix& proj,
                                    const ProjectedCurvature& pc,
                                    const Eigen::Ref<const Vector>& g_test,
                                    const GradCache& cache, int test_id = -1);

/// Trace objective tr(G H_A^{-1} G H_A^{-T}) with G the empirical Fisher
/// of the cache and H_A^{-1} = (A'A)^T Hinv (A'A); larger is better.
/// Analysis tool only, dense P x P.
double projection_objective(const Eigen::Ref<const Matrix>& a_candidate,
                            const GradCache& cache,
                            const Eigen::Ref<const Matrix>& damped_hessian_inverse,
                            Index dense_cap = kDenseCap);

// Projection file layout (little-endian): magic "IFPJ", u32 version=1,
// u64 Q, u64 P, Q*P doubles row-major, Q eigenvalues, total_variance.
void save_projection(const std::string& path, const ProjectionMatrix& proj);
ProjectionMatrix load_projection(const std::string& path);

}  // namespace relinf
