#include "relinf/model.hpp"

#include "relinf/hash.hpp"
#include "relinf/parallel.hpp"

#include <iostream>

namespace relinf {

Index ModelSpec::param_count() const {
  if (family == ModelFamily::SoftmaxRegression)
    return Index(c) * d + (bias ? c : 0);
  return Index(hidden) * d + (bias ? hidden : 0) + Index(c) * hidden +
         (bias ? c : 0);
}

void validate(const ModelSpec& spec) {
  if (spec.d < 1) throw DataError("model spec: d must be >= 1");
  if (spec.c < 2) throw DataError("model spec: c must be >= 2");
  if (spec.family == ModelFamily::Mlp1Hidden && spec.hidden < 1)
    throw DataError("model spec: mlp requires hidden width >= 1");
  if (spec.l2 < 0) throw DataError("model spec: l2 must be >= 0");
}

namespace {

using ConstMap = Eigen::Map<const Matrix>;
using ConstVecMap = Eigen::Map<const Vector>;
using MutMap = Eigen::Map<Matrix>;
using MutVecMap = Eigen::Map<Vector>;

void check_params(const ParamVector& theta) {
  if (theta.values.size() != theta.spec.param_count())
    throw DimensionError("parameter vector length does not match spec");
}

void check_example(const ParamVector& theta, const Eigen::Ref<const Vector>& x,
                   int y) {
  if (x.size() != theta.spec.d)
    throw DimensionError("feature dimension mismatch");
  if (y < 0 || y >= theta.spec.c) throw DimensionError("example label out of range");
}

void check_dataset(const ParamVector& theta, const Dataset& data) {
  if (data.d() != theta.spec.d || data.c != theta.spec.c)
    throw DimensionError("dataset dimensions do not match model spec");
}

Vector weight_vector(const Dataset& data, const Vector* weights) {
  if (weights) {
    if (weights->size() != data.n())
      throw DimensionError("weight vector length does not match dataset");
    return *weights;
  }
  return Vector::Constant(data.n(), 1.0 / static_cast<double>(data.n()));
}

struct MlpOffsets {
  Index h, d, c;
  bool bias;
  Index w1, b1, w2, b2, total;
};

MlpOffsets mlp_offsets(const ModelSpec& s) {
  MlpOffsets o;
  o.h = s.hidden;
  o.d = s.d;
  o.c = s.c;
  o.bias = s.bias;
  o.w1 = 0;
  o.b1 = o.h * o.d;
  o.w2 = o.b1 + (s.bias ? o.h : 0);
  o.b2 = o.w2 + o.c * o.h;
  o.total = o.b2 + (s.bias ? o.c : 0);
  return o;
}

struct MlpForwardPass {
  Matrix a1;  // n x h, tanh activations
  Matrix u;   // n x c, logits
};

MlpForwardPass mlp_forward(const ParamVector& theta,
                           const Eigen::Ref<const Matrix>& xs) {
  const auto o = mlp_offsets(theta.spec);
  ConstMap w1(theta.values.data() + o.w1, o.h, o.d);
  ConstMap w2(theta.values.data() + o.w2, o.c, o.h);
  MlpForwardPass f;
  Matrix z1 = xs * w1.transpose();
  if (o.bias)
    z1.rowwise() += ConstVecMap(theta.values.data() + o.b1, o.h).transpose();
  f.a1 = z1.array().tanh().matrix();
  f.u = f.a1 * w2.transpose();
  if (o.bias)
    f.u.rowwise() += ConstVecMap(theta.values.data() + o.b2, o.c).transpose();
  return f;
}

Matrix logits_batch(const ParamVector& theta, const Eigen::Ref<const Matrix>& xs) {
  const auto& s = theta.spec;
  if (s.family == ModelFamily::SoftmaxRegression) {
    ConstMap w(theta.values.data(), s.c, s.d);
    Matrix u = xs * w.transpose();
    if (s.bias)
      u.rowwise() += ConstVecMap(theta.values.data() + Index(s.c) * s.d, s.c)
                         .transpose();
    return u;
  }
  return mlp_forward(theta, xs).u;
}

void require_finite_logits(const Matrix& u) {
  if (!u.allFinite()) throw DataError("non-finite logits");
}

Matrix softmax_rows(Matrix u) {
  Vector rowmax = u.rowwise().maxCoeff();
  u.colwise() -= rowmax;
  u = u.array().exp().matrix();
  Vector rowsum = u.rowwise().sum();
  u.array().colwise() /= rowsum.array();
  return u;
}

Vector loss_rows(const Matrix& u, const IntVector& labels) {
  Vector rowmax = u.rowwise().maxCoeff();
  Matrix shifted = u.colwise() - rowmax;
  Vector lse = shifted.array().exp().rowwise().sum().log().matrix();
  Vector out(u.rows());
  for (Index i = 0; i < u.rows(); ++i) out[i] = lse[i] - shifted(i, labels[i]);
  return out;
}

Matrix onehot_residual(Matrix probs, const IntVector& labels) {
  for (Index i = 0; i < probs.rows(); ++i) probs(i, labels[i]) -= 1.0;
  return probs;
}

Matrix scale_rows(const Matrix& m, const Vector& w) {
  return (m.array().colwise() * w.array()).matrix();
}

// sum_i w_i grad_i of the data term (no l2), both families.
Vector data_grad_batch(const ParamVector& theta, const Eigen::Ref<const Matrix>& xs,
                       const IntVector& labels, const Vector& w) {
  const auto& s = theta.spec;
  Vector out = Vector::Zero(theta.values.size());
  if (s.family == ModelFamily::SoftmaxRegression) {
    Matrix u = logits_batch(theta, xs);
    require_finite_logits(u);
    Matrix delta = onehot_residual(softmax_rows(std::move(u)), labels);
    Matrix weighted = scale_rows(delta, w);
    MutMap gw(out.data(), s.c, s.d);
    gw = weighted.transpose() * xs;
    if (s.bias)
      MutVecMap(out.data() + Index(s.c) * s.d, s.c) =
          weighted.colwise().sum().transpose();
    return out;
  }
  const auto o = mlp_offsets(s);
  ConstMap w2(theta.values.data() + o.w2, o.c, o.h);
  MlpForwardPass f = mlp_forward(theta, xs);
  require_finite_logits(f.u);
  Matrix delta = onehot_residual(softmax_rows(f.u), labels);
  Matrix weighted = scale_rows(delta, w);
  MutMap gw2(out.data() + o.w2, o.c, o.h);
  gw2 = weighted.transpose() * f.a1;
  if (o.bias)
    MutVecMap(out.data() + o.b2, o.c) = weighted.colwise().sum().transpose();
  Matrix da1 = weighted * w2;
  Matrix dz1 = (da1.array() * (1.0 - f.a1.array().square())).matrix();
  MutMap gw1(out.data() + o.w1, o.h, o.d);
  gw1 = dz1.transpose() * xs;
  if (o.bias)
    MutVecMap(out.data() + o.b1, o.h) = dz1.colwise().sum().transpose();
  return out;
}

// Rows of S_i a_i where S_i = diag(p_i) - p_i p_i^T and a_i is row i of ru.
Matrix softmax_curvature_rows(const Matrix& probs, const Matrix& ru) {
  Matrix pru = (probs.array() * ru.array()).matrix();
  Vector rowdot = pru.rowwise().sum();
  return (pru.array() - probs.array().colwise() * rowdot.array()).matrix();
}

// (sum_i w_i H_i) v for the data term; ggn_only selects the Gauss-Newton
// (model Fisher) product instead of the full Hessian product. The two
// coincide for softmax regression, whose loss Hessian is label-free.
Vector data_hvp_batch(const ParamVector& theta, const Eigen::Ref<const Matrix>& xs,
                      const IntVector& labels, const Vector& w,
                      const Eigen::Ref<const Vector>& v, bool ggn_only) {
  const auto& s = theta.spec;
  Vector out = Vector::Zero(theta.values.size());
  if (s.family == ModelFamily::SoftmaxRegression) {
    ConstMap dv(v.data(), s.c, s.d);
    Matrix ru = xs * dv.transpose();
    if (s.bias)
      ru.rowwise() += ConstVecMap(v.data() + Index(s.c) * s.d, s.c).transpose();
    Matrix u = logits_batch(theta, xs);
    require_finite_logits(u);
    Matrix probs = softmax_rows(std::move(u));
    Matrix t = softmax_curvature_rows(probs, ru);
    Matrix weighted = scale_rows(t, w);
    MutMap gw(out.data(), s.c, s.d);
    gw = weighted.transpose() * xs;
    if (s.bias)
      MutVecMap(out.data() + Index(s.c) * s.d, s.c) =
          weighted.colwise().sum().transpose();
    return out;
  }

  const auto o = mlp_offsets(s);
  ConstMap w2(theta.values.data() + o.w2, o.c, o.h);
  ConstMap v1(v.data() + o.w1, o.h, o.d);
  ConstMap v2(v.data() + o.w2, o.c, o.h);
  MlpForwardPass f = mlp_forward(theta, xs);
  require_finite_logits(f.u);
  Matrix probs = softmax_rows(f.u);
  Matrix t1 = (1.0 - f.a1.array().square()).matrix();  // tanh'

  // Forward tangents along v.
  Matrix rz1 = xs * v1.transpose();
  if (o.bias) rz1.rowwise() += ConstVecMap(v.data() + o.b1, o.h).transpose();
  Matrix ra1 = (t1.array() * rz1.array()).matrix();
  Matrix ru = f.a1 * v2.transpose() + ra1 * w2.transpose();
  if (o.bias) ru.rowwise() += ConstVecMap(v.data() + o.b2, o.c).transpose();
  Matrix rp = softmax_curvature_rows(probs, ru);  // rows: S_i (J v)_i

  MutMap gw1(out.data() + o.w1, o.h, o.d);
  MutMap gw2(out.data() + o.w2, o.c, o.h);

  if (ggn_only) {
    Matrix weighted = scale_rows(rp, w);
    gw2 = weighted.transpose() * f.a1;
    if (o.bias)
      MutVecMap(out.data() + o.b2, o.c) = weighted.colwise().sum().transpose();
    Matrix da1 = weighted * w2;
    Matrix dz1 = (da1.array() * t1.array()).matrix();
    gw1 = dz1.transpose() * xs;
    if (o.bias)
      MutVecMap(out.data() + o.b1, o.h) = dz1.colwise().sum().transpose();
    return out;
  }

  Matrix delta = onehot_residual(probs, labels);
  Matrix rp_w = scale_rows(rp, w);
  Matrix delta_w = scale_rows(delta, w);
  gw2 = rp_w.transpose() * f.a1 + delta_w.transpose() * ra1;
  if (o.bias)
    MutVecMap(out.data() + o.b2, o.c) = rp_w.colwise().sum().transpose();
  Matrix rda1 = delta * v2 + rp * w2;  // per-row tangent of W2^T delta_u
  Matrix da1 = delta * w2;             // per-row W2^T delta_u
  Matrix rdz1 = (rda1.array() * t1.array() -
                 2.0 * da1.array() * f.a1.array() * ra1.array())
                    .matrix();
  Matrix rdz1_w = scale_rows(rdz1, w);
  gw1 = rdz1_w.transpose() * xs;
  if (o.bias)
    MutVecMap(out.data() + o.b1, o.h) = rdz1_w.colwise().sum().transpose();
  return out;
}

void check_dense_cap(const ParamVector& theta, Index dense_cap) {
  const Index p = theta.spec.param_count();
  if (p > dense_cap)
    throw DimensionError("parameter count " + std::to_string(p) +
                         " exceeds the dense cap " + std::to_string(dense_cap) +
                         "; use the hvp path instead");
}

}  // namespace

Vector predict_proba(const ParamVector& theta, const Eigen::Ref<const Vector>& x) {
  check_params(theta);
  if (x.size() != theta.spec.d) throw DimensionError("feature dimension mismatch");
  Matrix u = logits_batch(theta, x.transpose());
  require_finite_logits(u);
  return softmax_rows(std::move(u)).row(0).transpose();
}

double loss(const ParamVector& theta, const Eigen::Ref<const Vector>& x, int y) {
  check_params(theta);
  check_example(theta, x, y);
  Matrix u = logits_batch(theta, x.transpose());
  require_finite_logits(u);
  IntVector labels(1);
  labels[0] = y;
  return loss_rows(u, labels)[0];
}

Vector grad(const ParamVector& theta, const Eigen::Ref<const Vector>& x, int y) {
  check_params(theta);
  check_example(theta, x, y);
  IntVector labels(1);
  labels[0] = y;
  Vector one = Vector::Ones(1);
  return data_grad_batch(theta, x.transpose(), labels, one);
}

double objective(const ParamVector& theta, const Dataset& data,
                 const Vector* weights) {
  check_params(theta);
  check_dataset(theta, data);
  const Vector w = weight_vector(data, weights);
  Matrix u = logits_batch(theta, data.features);
  require_finite_logits(u);
  const double data_term = loss_rows(u, data.labels).dot(w);
  return data_term + 0.5 * theta.spec.l2 * theta.values.squaredNorm();
}

Vector objective_grad(const ParamVector& theta, const Dataset& data,
                      const Vector* weights) {
  check_params(theta);
  check_dataset(theta, data);
  const Vector w = weight_vector(data, weights);
  Vector g = data_grad_batch(theta, data.features, data.labels, w);
  g += theta.spec.l2 * theta.values;
  return g;
}

Vector hvp(const ParamVector& theta, const Dataset& data,
           const Eigen::Ref<const Vector>& v, const Vector* weights) {
  check_params(theta);
  check_dataset(theta, data);
  if (v.size() != theta.values.size())
    throw DimensionError("hvp direction length does not match parameters");
  const Vector w = weight_vector(data, weights);
  Vector out = data_hvp_batch(theta, data.features, data.labels, w, v,
                              /*ggn_only=*/false);
  out += theta.spec.l2 * v;
  return out;
}

Vector fisher_vp(const ParamVector& theta, const Dataset& data,
                 const Eigen::Ref<const Vector>& v) {
  check_params(theta);
  check_dataset(theta, data);
  if (v.size() != theta.values.size())
    throw DimensionError("fisher_vp direction length does not match parameters");
  const Vector w = weight_vector(data, nullptr);
  return data_hvp_batch(theta, data.features, data.labels, w, v,
                        /*ggn_only=*/true);
}

Matrix exact_hessian(const ParamVector& theta, const Dataset& data,
                     const Vector* weights, Index dense_cap) {
  check_params(theta);
  check_dataset(theta, data);
  check_dense_cap(theta, dense_cap);
  const auto& s = theta.spec;
  const Index p = theta.values.size();
  const Vector w = weight_vector(data, weights);

  if (s.family == ModelFamily::SoftmaxRegression) {
    // Column-major vec(W)|b is the column-major vec of the augmented
    // weight matrix [W b], so H fills block-wise per class pair from
    // GEMMs on the augmented features.
    const Index daug = s.d + (s.bias ? 1 : 0);
    Matrix uaug(data.n(), daug);
    uaug.leftCols(s.d) = data.features;
    if (s.bias) uaug.col(s.d).setOnes();
    Matrix u = logits_batch(theta, data.features);
    require_finite_logits(u);
    Matrix probs = softmax_rows(std::move(u));
    Matrix h = Matrix::Zero(p, p);
    for (int a = 0; a < s.c; ++a) {
      for (int b = a; b < s.c; ++b) {
        Vector s_ab = (w.array() * probs.col(a).array() *
                       ((a == b ? 1.0 : 0.0) - probs.col(b).array()))
                          .matrix();
        Matrix block = uaug.transpose() * scale_rows(uaug, s_ab);
        for (Index j = 0; j < daug; ++j) {
          for (Index k = 0; k < daug; ++k) {
            h(j * s.c + a, k * s.c + b) = block(j, k);
            if (a != b) h(j * s.c + b, k * s.c + a) = block(j, k);
          }
        }
      }
    }
    h.diagonal().array() += s.l2;
    return h;
  }

  // No closed-form dense expression is kept for the MLP; the dense matrix
  // is assembled from P analytic HVP columns and symmetrized.
  Matrix h(p, p);
  Vector e = Vector::Zero(p);
  for (Index j = 0; j < p; ++j) {
    e[j] = 1.0;
    h.col(j) = hvp(theta, data, e, weights);
    e[j] = 0.0;
  }
  return 0.5 * (h + h.transpose());
}

Matrix fisher(const ParamVector& theta, const Dataset& data, FisherKind kind,
              Index dense_cap) {
  check_params(theta);
  check_dataset(theta, data);
  check_dense_cap(theta, dense_cap);
  const Index p = theta.values.size();
  const double wi = 1.0 / static_cast<double>(data.n());
  Matrix f = Matrix::Zero(p, p);
  if (kind == FisherKind::Empirical) {
    for (Index i = 0; i < data.n(); ++i) {
      Vector g = grad(theta, data.features.row(i).transpose(), data.labels[i]);
      f.selfadjointView<Eigen::Lower>().rankUpdate(g, wi);
    }
  } else {
    for (Index i = 0; i < data.n(); ++i) {
      const Vector x = data.features.row(i).transpose();
      const Vector probs = predict_proba(theta, x);
      for (int y = 0; y < data.c; ++y) {
        Vector g = grad(theta, x, y);
        f.selfadjointView<Eigen::Lower>().rankUpdate(g, wi * probs[y]);
      }
    }
  }
  f.triangularView<Eigen::StrictlyUpper>() =
      f.triangularView<Eigen::StrictlyLower>().transpose();
  return f;
}

GradCache build_grad_cache(const ParamVector& theta, const Dataset& data,
                           double stationarity_warn_tol) {
  check_params(theta);
  check_dataset(theta, data);
  const auto& s = theta.spec;
  const double gn = objective_grad(theta, data).norm();
  if (gn > stationarity_warn_tol)
    std::cerr << "warning: building gradient cache at non-stationary parameters"
              << " (objective gradient norm " << gn << ")\n";

  GradCache cache;
  cache.grads.resize(data.n(), theta.values.size());
  if (s.family == ModelFamily::SoftmaxRegression) {
    Matrix u = logits_batch(theta, data.features);
    require_finite_logits(u);
    Matrix delta = onehot_residual(softmax_rows(std::move(u)), data.labels);
    for (Index j = 0; j < s.d; ++j)
      cache.grads.middleCols(j * s.c, s.c) =
          scale_rows(delta, data.features.col(j));
    if (s.bias) cache.grads.middleCols(Index(s.d) * s.c, s.c) = delta;
  } else {
    par::parallel_for(data.n(), [&](Index i) {
      cache.grads.row(i) =
          grad(theta, data.features.row(i).transpose(), data.labels[i])
              .transpose();
    });
  }
  cache.params_hash = params_fingerprint(theta);
  return cache;
}

}  // namespace relinf
