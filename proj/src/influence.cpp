#include "relinf/influence.hpp"

#include "relinf/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace relinf {

namespace {

void check_consistency(const InfluenceScores& scores, const DenominatorCache& denom,
                       DenomVariant expected) {
  if (denom.variant != expected)
    throw DataError("denominator cache variant mismatch: expected " +
                    std::string(to_string(expected)) + ", got " +
                    std::string(to_string(denom.variant)));
  if (denom.values.size() != scores.scores.size())
    throw DimensionError("denominator cache length does not match scores");
  if (denom.params_hash != scores.params_hash)
    throw StaleCacheError("denominator cache is stale: parameter fingerprint "
                          "does not match the influence scores");
  if (denom.lambda != scores.lambda || denom.basis != scores.basis)
    throw DataError("denominator cache was built under different lambda/basis "
                    "settings than the influence scores");
}

RelatifScores ratio_scores(const InfluenceScores& scores,
                           const DenominatorCache& denom) {
  RelatifScores out;
  out.values.resize(scores.scores.size());
  out.degenerate = denom.degenerate;
  for (Index i = 0; i < scores.scores.size(); ++i)
    out.values[i] = denom.degenerate[static_cast<std::size_t>(i)]
                        ? 0.0
                        : scores.scores[i] / denom.values[i];
  return out;
}

}  // namespace

InfluenceScores influence_all(const STestVector& s, const GradCache& cache) {
  if (cache.grads.cols() != s.values.size())
    throw DimensionError("gradient cache width does not match s_test length");
  if (cache.params_hash != s.params_hash)
    throw StaleCacheError(
        "gradient cache is stale: parameter fingerprint does not match s_test");
  InfluenceScores out;
  out.test_id = s.test_id;
  out.scores = cache.grads * s.values;
  if (!out.scores.allFinite())
    throw DataError("influence scores are not finite");
  out.method = s.report.method;
  out.lambda = s.lambda;
  out.basis = s.basis;
  out.params_hash = s.params_hash;
  return out;
}

DenominatorCache precompute_denominators(const GradCache& cache,
                                         const CurvatureOperator& op,
                                         DenomVariant variant, SolveMethod method,
                                         const SolveOptions& opts) {
  if (cache.grads.cols() != op.dim())
    throw DimensionError("gradient cache width does not match operator dimension");
  const Index n = cache.grads.rows();
  DenominatorCache out;
  out.variant = variant;
  out.values = Vector::Zero(n);
  out.degenerate.assign(static_cast<std::size_t>(n), 0);
  out.lambda = op.damping();
  out.basis = op.basis();
  out.params_hash = cache.params_hash;

  for (Index i = 0; i < n; ++i)
    if (cache.grads.row(i).norm() == 0.0)
      out.degenerate[static_cast<std::size_t>(i)] = 1;

  if (method == SolveMethod::Direct) {
    const DirectFactor factor(op);
    // Solve in column blocks to keep the P x block footprint small.
    constexpr Index kBlock = 1024;
    for (Index start = 0; start < n; start += kBlock) {
      const Index count = std::min(kBlock, n - start);
      Matrix rhs = cache.grads.middleRows(start, count).transpose();
      Matrix solved = factor.solve_many(rhs);
      for (Index j = 0; j < count; ++j) {
        const Index i = start + j;
        if (out.degenerate[static_cast<std::size_t>(i)]) continue;
        if (variant == DenomVariant::Theta) {
          out.values[i] = solved.col(j).norm();
        } else {
          out.values[i] = std::sqrt(std::max(0.0, rhs.col(j).dot(solved.col(j))));
        }
      }
    }
  } else {
    par::parallel_for(n, [&](Index i) {
      if (out.degenerate[static_cast<std::size_t>(i)]) return;
      const Vector g = cache.grads.row(i).transpose();
      try {
        auto [x, report] = solve(op, g, method, opts);
        out.values[i] = variant == DenomVariant::Theta
                            ? x.norm()
                            : std::sqrt(std::max(0.0, g.dot(x)));
      } catch (const SolverError& e) {
        throw SolverError("denominator solve failed at training index " +
                          std::to_string(i) + ": " + e.what());
      }
    });
  }
  return out;
}

double self_influence(Index i, const GradCache& cache, const CurvatureOperator& op,
                      SolveMethod method, const SolveOptions& opts) {
  if (i < 0 || i >= cache.grads.rows())
    throw DimensionError("self_influence index out of range");
  const Vector g = cache.grads.row(i).transpose();
  if (g.norm() == 0.0) return 0.0;
  auto [x, report] = solve(op, g, method, opts);
  return std::max(0.0, g.dot(x));
}

RelatifScores theta_relatif(const InfluenceScores& scores,
                            const DenominatorCache& denom) {
  check_consistency(scores, denom, DenomVariant::Theta);
  return ratio_scores(scores, denom);
}

RelatifScores l_relatif(const InfluenceScores& scores,
                        const DenominatorCache& denom) {
  check_consistency(scores, denom, DenomVariant::Ell);
  return ratio_scores(scores, denom);
}

ExplanationSet top_k(const Eigen::Ref<const Vector>& scores, int k, SignMode sign,
                     int test_id) {
  const Index n = scores.size();
  if (k < 0 || k > n)
    throw DimensionError("top_k: k must be in [0, n]");
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  auto key = [&](Index i) {
    switch (sign) {
      case SignMode::Positive:
        return scores[i];
      case SignMode::Negative:
        return -scores[i];
      case SignMode::Absolute:
        return std::abs(scores[i]);
    }
    return scores[i];
  };
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    const double ka = key(a), kb = key(b);
    if (ka != kb) return ka > kb;
    return a < b;
  });
  ExplanationSet out;
  out.test_id = test_id;
  out.k = k;
  out.sign = sign;
  out.entries.reserve(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j)
    out.entries.push_back({order[static_cast<std::size_t>(j)],
                           scores[order[static_cast<std::size_t>(j)]]});
  return out;
}

const char* to_string(SignMode sign) {
  switch (sign) {
    case SignMode::Positive:
      return "pos";
    case SignMode::Negative:
      return "neg";
    case SignMode::Absolute:
      return "abs";
  }
  return "unknown";
}

const char* to_string(DenomVariant variant) {
  return variant == DenomVariant::Theta ? "theta" : "ell";
}

}  // namespace relinf
