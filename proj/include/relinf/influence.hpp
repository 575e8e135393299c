#pragma once

#include "relinf/curvature.hpp"
#include "relinf/solvers.hpp"
#include "relinf/types.hpp"

#include <vector>

namespace relinf {

/// Infl(test, i) = g_test^T (C + lambda I)^{-1} g_i for every training
/// example; positive influence means upweighting z_i decreases the test
/// loss.
struct InfluenceScores {
  int test_id = -1;
  Vector scores;
  SolveMethod method = SolveMethod::Direct;
  double lambda = 0.0;
  CurvatureOperator::Basis basis = CurvatureOperator::Basis::Hessian;
  Sha256Digest params_hash{};
};

/// One pass over the cache: scores[i] = s_test . g_i.
InfluenceScores influence_all(const STestVector& s, const GradCache& cache);

enum class DenomVariant { Theta, Ell };

/// RelatIF denominators, precomputed once per training set:
///   Theta: |(C+lambda I)^{-1} g_i|
///   Ell:   sqrt(g_i^T (C+lambda I)^{-1} g_i)
/// Rows with g_i = 0 are flagged degenerate and score 0 downstream.
struct DenominatorCache {
  DenomVariant variant = DenomVariant::Theta;
  Vector values;
  std::vector<char> degenerate;
  double lambda = 0.0;
  CurvatureOperator::Basis basis = CurvatureOperator::Basis::Hessian;
  Sha256Digest params_hash{};
};

DenominatorCache precompute_denominators(const GradCache& cache,
                                         const CurvatureOperator& op,
                                         DenomVariant variant, SolveMethod method,
                                         const SolveOptions& opts = {});

/// Infl(i, i) = g_i^T (C + lambda I)^{-1} g_i (>= 0, 0 iff g_i = 0).
double self_influence(Index i, const GradCache& cache, const CurvatureOperator& op,
                      SolveMethod method, const SolveOptions& opts = {});

struct RelatifScores {
  Vector values;
  std::vector<char> degenerate;
};

/// Signed ratios Infl(test,i) / denom_i; callers rank by |.| or by sign
/// via top_k.
RelatifScores theta_relatif(const InfluenceScores& scores,
                            const DenominatorCache& denom);
RelatifScores l_relatif(const InfluenceScores& scores,
                        const DenominatorCache& denom);

enum class SignMode { Positive, Negative, Absolute };

struct ExplanationEntry {
  Index index;
  double score;
};

/// Top-k selection under the sign convention, ties broken by lower index.
struct ExplanationSet {
  int test_id = -1;
  std::vector<ExplanationEntry> entries;
  int k = 0;
  SignMode sign = SignMode::Positive;
};

ExplanationSet top_k(const Eigen::Ref<const Vector>& scores, int k, SignMode sign,
                     int test_id = -1);

const char* to_string(SignMode sign);
const char* to_string(DenomVariant variant);

}  // namespace relinf
