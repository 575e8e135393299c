#include "relinf/projection.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <bit>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "artifact formats are little-endian; big-endian hosts are unsupported");

namespace relinf {

ProjectionMatrix fit_pca(const GradCache& cache, Index q, Index batch_size) {
  const Index n = cache.grads.rows();
  const Index p = cache.grads.cols();
  if (q < 1 || q > std::min(n, p))
    throw DimensionError("fit_pca: q must be in [1, min(N, P)]");
  if (batch_size < 1) throw DimensionError("fit_pca: batch_size must be >= 1");

  Matrix components(0, p);  // r x p, orthonormal rows
  Vector sums_of_squares;   // r, singular values squared of seen data
  Index n_seen = 0;
  double sq_norm_total = 0.0;

  for (Index start = 0; start < n; start += batch_size) {
    const Index count = std::min(batch_size, n - start);
    const auto block = cache.grads.middleRows(start, count);
    sq_norm_total += block.squaredNorm();

    const Index r = components.rows();
    Matrix stacked(r + count, p);
    for (Index i = 0; i < r; ++i)
      stacked.row(i) = std::sqrt(sums_of_squares[i]) * components.row(i);
    stacked.bottomRows(count) = block;

    Eigen::BDCSVD<Matrix> svd(stacked, Eigen::ComputeThinV);
    n_seen += count;
    const Index keep = std::min<Index>(q, std::min(n_seen, p));
    components = svd.matrixV().leftCols(keep).transpose();
    sums_of_squares =
        svd.singularValues().head(keep).array().square().matrix();
  }

  ProjectionMatrix proj;
  proj.a = std::move(components);
  proj.eigvals = sums_of_squares / static_cast<double>(n);
  proj.total_variance = sq_norm_total / static_cast<double>(n);
  return proj;
}

Vector project_grad(const ProjectionMatrix& proj, const Eigen::Ref<const Vector>& g) {
  if (g.size() != proj.p())
    throw DimensionError("project_grad: gradient length does not match projection");
  return proj.a * g;
}

ProjectedCurvature projected_hessian(const ProjectionMatrix& proj,
                                     const std::function<Vector(const Vector&)>& hvp,
                                     double lambda) {
  if (lambda < 0) throw ConfigError("damping must be >= 0");
  const Index q = proj.q();
  Matrix h_cols(proj.p(), q);
  for (Index j = 0; j < q; ++j)
    h_cols.col(j) = hvp(proj.a.row(j).transpose());  // exactly Q HVP calls
  Matrix m = proj.a * h_cols;
  ProjectedCurvature pc;
  pc.h_omega = 0.5 * (m + m.transpose());
  pc.lambda = lambda;
  return pc;
}

InfluenceScores projected_influence(const ProjectionMatrix& proj,
                                    const ProjectedCurvature& pc,
                                    const Eigen::Ref<const Vector>& g_test,
                                    const GradCache& cache, int test_id) {
  if (pc.h_omega.rows() != proj.q())
    throw DimensionError("projected curvature does not match projection rank");
  if (cache.grads.cols() != proj.p())
    throw DimensionError("gradient cache width does not match projection");
  Matrix damped = pc.h_omega;
  damped.diagonal().array() += pc.lambda;
  Eigen::LLT<Matrix> llt(damped);
  if (llt.info() != Eigen::Success)
    throw SolverError(
        "projected curvature is not positive definite; increase the damping "
        "lambda");
  const Vector w_test = proj.a * g_test;
  Vector y = llt.solve(w_test);
  y += llt.solve(w_test - damped * y);

  InfluenceScores out;
  out.test_id = test_id;
  out.scores = cache.grads * (proj.a.transpose() * y);
  out.method = SolveMethod::Direct;
  out.lambda = pc.lambda;
  out.basis = CurvatureOperator::Basis::Hessian;
  out.params_hash = cache.params_hash;
  return out;
}

double projection_objective(const Eigen::Ref<const Matrix>& a_candidate,
                            const GradCache& cache,
                            const Eigen::Ref<const Matrix>& damped_hessian_inverse,
                            Index dense_cap) {
  const Index p = cache.grads.cols();
  if (p > dense_cap)
    throw DimensionError("projection_objective: P exceeds the dense cap");
  if (a_candidate.cols() != p)
    throw DimensionError("projection_objective: candidate width mismatch");
  if (damped_hessian_inverse.rows() != p || damped_hessian_inverse.cols() != p)
    throw DimensionError("projection_objective: inverse Hessian size mismatch");

  const Matrix g =
      cache.grads.transpose() * cache.grads / static_cast<double>(cache.grads.rows());

  // A'A via the pseudoinverse; reduces to A^T A for row-orthonormal A.
  Matrix pinv;
  Matrix aat = a_candidate * a_candidate.transpose();
  if ((aat - Matrix::Identity(aat.rows(), aat.cols())).cwiseAbs().maxCoeff() < 1e-10) {
    pinv = a_candidate.transpose();
  } else {
    pinv = a_candidate.completeOrthogonalDecomposition().pseudoInverse();
  }
  const Matrix projector = pinv * a_candidate;  // P x P
  const Matrix h_a_inv =
      projector.transpose() * damped_hessian_inverse * projector;

  // tr(G Ha G Ha^T) = sum((G Ha G) .* Ha)
  const Matrix gh = g * h_a_inv;
  return (gh * g).cwiseProduct(h_a_inv).sum();
}

namespace {

constexpr char kMagic[4] = {'I', 'F', 'P', 'J'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void save_projection(const std::string& path, const ProjectionMatrix& proj) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write projection file: " + path);
  out.write(kMagic, 4);
  out.write(reinterpret_cast<const char*>(&kVersion), sizeof(kVersion));
  const std::uint64_t q = static_cast<std::uint64_t>(proj.q());
  const std::uint64_t p = static_cast<std::uint64_t>(proj.p());
  out.write(reinterpret_cast<const char*>(&q), sizeof(q));
  out.write(reinterpret_cast<const char*>(&p), sizeof(p));
  std::vector<double> row(static_cast<std::size_t>(proj.p()));
  for (Index i = 0; i < proj.q(); ++i) {
    for (Index j = 0; j < proj.p(); ++j) row[static_cast<std::size_t>(j)] = proj.a(i, j);
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(double)));
  }
  out.write(reinterpret_cast<const char*>(proj.eigvals.data()),
            static_cast<std::streamsize>(proj.eigvals.size() * sizeof(double)));
  out.write(reinterpret_cast<const char*>(&proj.total_variance), sizeof(double));
  if (!out) throw DataError("write failed: " + path);
}

ProjectionMatrix load_projection(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open projection file: " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("bad magic in projection file " + path);
  std::uint32_t version = 0;
  if (!in.read(reinterpret_cast<char*>(&version), sizeof(version)) ||
      version != kVersion)
    throw DataError("unsupported projection file version");
  std::uint64_t q = 0, p = 0;
  in.read(reinterpret_cast<char*>(&q), sizeof(q));
  in.read(reinterpret_cast<char*>(&p), sizeof(p));
  if (!in) throw DataError("truncated projection file " + path);
  ProjectionMatrix proj;
  proj.a.resize(static_cast<Index>(q), static_cast<Index>(p));
  std::vector<double> row(static_cast<std::size_t>(p));
  for (std::uint64_t i = 0; i < q; ++i) {
    if (!in.read(reinterpret_cast<char*>(row.data()),
                 static_cast<std::streamsize>(row.size() * sizeof(double))))
      throw DataError("truncated projection payload in " + path);
    for (std::uint64_t j = 0; j < p; ++j)
      proj.a(static_cast<Index>(i), static_cast<Index>(j)) =
          row[static_cast<std::size_t>(j)];
  }
  proj.eigvals.resize(static_cast<Index>(q));
  if (!in.read(reinterpret_cast<char*>(proj.eigvals.data()),
               static_cast<std::streamsize>(proj.eigvals.size() * sizeof(double))))
    throw DataError("truncated projection eigenvalues in " + path);
  if (!in.read(reinterpret_cast<char*>(&proj.total_variance), sizeof(double)))
    throw DataError("truncated projection trailer in " + path);
  return proj;
}

}  // namespace relinf
