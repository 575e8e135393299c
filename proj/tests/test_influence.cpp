#include "relinf/grad_cache.hpp"
#include "relinf/hash.hpp"
#include "relinf/influence.hpp"
#include "relinf/model.hpp"
#include "relinf/solvers.hpp"

#include "support/oracles.hpp"
#include "support/synthetic.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

using namespace relinf;

namespace {

// Hand-built cache + identity curvature (C = 0, lambda = 1).
struct IdentitySetup {
  GradCache cache;
  CurvatureOperator op;
  Sha256Digest hash{};

  IdentitySetup(std::initializer_list<Vector> rows, Index p)
      : op(CurvatureOperator::exact(Matrix::Zero(p, p), 1.0)) {
    cache.grads.resize(static_cast<Index>(rows.size()), p);
    Index i = 0;
    for (const auto& r : rows) cache.grads.row(i++) = r.transpose();
    hash.fill(7);
    cache.params_hash = hash;
  }

  STestVector stest(const Vector& g_test) const {
    STestVector s;
    s.values = g_test;  // (0 + I)^{-1} g = g
    s.params_hash = hash;
    s.lambda = 1.0;
    s.basis = CurvatureOperator::Basis::Hessian;
    s.report.method = SolveMethod::Direct;
    s.report.converged = true;
    return s;
  }
};

Vector unit(Index p, Index j, double scale = 1.0) {
  Vector v = Vector::Zero(p);
  v[j] = scale;
  return v;
}

std::vector<Index> ranking(const Vector& scores) {
  std::vector<Index> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  return order;
}

}  // namespace

TEST_CASE("influence_all reduces to dot products under identity curvature") {
  IdentitySetup setup({unit(2, 0), unit(2, 1)}, 2);
  const InfluenceScores scores = influence_all(setup.stest(unit(2, 0)), setup.cache);
  CHECK(scores.scores[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(scores.scores[1] == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("influence is symmetric between two examples under a direct solve") {
  auto inst = synthetic::random_softmax_instance(401, 30, 4, 2, 0.05);
  const GradCache cache = build_grad_cache(inst.theta, inst.data);
  const double lambda = 1e-3;
  auto op = CurvatureOperator::from_model(inst.theta, inst.data, lambda,
                                          CurvatureOperator::Basis::Hessian,
                                          /*materialize=*/true);
  for (int a = 0; a < 4; ++a) {
    const int b = a + 7;
    const STestVector sa =
        s_test(inst.theta, op, inst.data.features.row(a).transpose(),
               inst.data.labels[a], SolveMethod::Direct);
    const STestVector sb =
        s_test(inst.theta, op, inst.data.features.row(b).transpose(),
               inst.data.labels[b], SolveMethod::Direct);
    const double infl_ab = influence_all(sa, cache).scores[b];
    const double infl_ba = influence_all(sb, cache).scores[a];
    CHECK(std::abs(infl_ab - infl_ba) <= 1e-8);
  }
}

TEST_CASE("influence_all rejects a stale cache") {
  IdentitySetup setup({unit(2, 0)}, 2);
  STestVector s = setup.stest(unit(2, 0));
  s.params_hash.fill(9);  // different parameters
  CHECK_THROWS_AS(influence_all(s, setup.cache), StaleCacheError);
}

TEST_CASE("self influence basics") {
  IdentitySetup setup({unit(3, 0), Vector::Zero(3)}, 3);
  CHECK(self_influence(0, setup.cache, setup.op, SolveMethod::Direct) ==
        doctest::Approx(1.0).epsilon(1e-14));
  CHECK(self_influence(1, setup.cache, setup.op, SolveMethod::Direct) == 0.0);
}

TEST_CASE("self influence matches the dense quadratic form") {
  const Index p = 10;
  std::mt19937_64 rng(55);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix a(p, p);
  for (Index i = 0; i < p; ++i)
    for (Index j = 0; j < p; ++j) a(i, j) = normal(rng);
  Matrix spd = a * a.transpose() / double(p);
  spd.diagonal().array() += 0.2;
  const double lambda = 0.05;
  auto op = CurvatureOperator::exact(spd, lambda);

  GradCache cache;
  cache.grads.resize(3, p);
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < p; ++j) cache.grads(i, j) = normal(rng);

  oracles::DenseInfluence oracle(spd, lambda);
  for (Index i = 0; i < 3; ++i) {
    const Vector g = cache.grads.row(i).transpose();
    const double expected = g.dot(oracle.hinv * g);
    CHECK(std::abs(self_influence(i, cache, op, SolveMethod::Direct) - expected) <=
          1e-8);
    CHECK(self_influence(i, cache, op, SolveMethod::Direct) >= 0.0);
  }
}

TEST_CASE("theta relatif normalizes away gradient magnitude") {
  IdentitySetup setup({unit(2, 0, 2.0), unit(2, 1, 1.0)}, 2);
  const InfluenceScores scores = influence_all(setup.stest(unit(2, 0)), setup.cache);
  CHECK(scores.scores[0] == doctest::Approx(2.0));  // raw influence

  const DenominatorCache denom = precompute_denominators(
      setup.cache, setup.op, DenomVariant::Theta, SolveMethod::Direct);
  const RelatifScores rel = theta_relatif(scores, denom);
  CHECK(rel.values[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rel.values[1] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("ell relatif equals influence over root self-influence") {
  IdentitySetup setup({unit(2, 0, 2.0)}, 2);
  const InfluenceScores scores = influence_all(setup.stest(unit(2, 0)), setup.cache);
  const DenominatorCache denom = precompute_denominators(
      setup.cache, setup.op, DenomVariant::Ell, SolveMethod::Direct);
  const RelatifScores rel = l_relatif(scores, denom);
  CHECK(rel.values[0] == doctest::Approx(1.0).epsilon(1e-12));  // 2 / sqrt(4)
}

TEST_CASE("relatif values are invariant to positive rescaling of one gradient") {
  auto inst = synthetic::random_softmax_instance(402, 25, 3, 2, 0.05);
  GradCache cache = build_grad_cache(inst.theta, inst.data);
  auto op = CurvatureOperator::from_model(inst.theta, inst.data, 1e-3,
                                          CurvatureOperator::Basis::Hessian,
                                          /*materialize=*/true);
  const STestVector s =
      s_test(inst.theta, op, inst.data.features.row(0).transpose(),
             inst.data.labels[0], SolveMethod::Direct);

  auto compute = [&](const GradCache& c) {
    const InfluenceScores scores = influence_all(s, c);
    const auto denom_t = precompute_denominators(c, op, DenomVariant::Theta,
                                                 SolveMethod::Direct);
    const auto denom_l =
        precompute_denominators(c, op, DenomVariant::Ell, SolveMethod::Direct);
    return std::make_pair(theta_relatif(scores, denom_t).values,
                          l_relatif(scores, denom_l).values);
  };

  const auto [theta_before, ell_before] = compute(cache);
  GradCache scaled = cache;
  scaled.grads.row(5) *= 10.0;
  const auto [theta_after, ell_after] = compute(scaled);

  CHECK((theta_before - theta_after).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK((ell_before - ell_after).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("theta relatif ranking matches cosine similarity ranking") {
  auto inst = synthetic::random_softmax_instance(403, 20, 3, 3, 0.05);
  const GradCache cache = build_grad_cache(inst.theta, inst.data);
  const double lambda = 1e-3;
  auto op = CurvatureOperator::from_model(inst.theta, inst.data, lambda,
                                          CurvatureOperator::Basis::Hessian,
                                          /*materialize=*/true);
  const Vector x_test = inst.data.features.row(3).transpose();
  const int y_test = inst.data.labels[3];
  const STestVector s = s_test(inst.theta, op, x_test, y_test, SolveMethod::Direct);
  const InfluenceScores scores = influence_all(s, cache);
  const auto denom =
      precompute_denominators(cache, op, DenomVariant::Theta, SolveMethod::Direct);
  const RelatifScores rel = theta_relatif(scores, denom);

  // Independent route: cosine between g_test and H^{-1} g_i.
  oracles::DenseInfluence oracle(exact_hessian(inst.theta, inst.data), lambda);
  const Vector g_test = grad(inst.theta, x_test, y_test);
  Vector cosine(cache.grads.rows());
  for (Index i = 0; i < cache.grads.rows(); ++i) {
    const Vector hg = oracle.hinv * cache.grads.row(i).transpose();
    cosine[i] = g_test.dot(hg) / (g_test.norm() * hg.norm());
  }
  Vector abs_rel = rel.values.cwiseAbs();
  Vector abs_cos = cosine.cwiseAbs();
  Index argmax_rel, argmax_cos;
  abs_rel.maxCoeff(&argmax_rel);
  abs_cos.maxCoeff(&argmax_cos);
  CHECK(argmax_rel == argmax_cos);
}

TEST_CASE("hessian and fisher bases agree for ell relatif on softmax") {
  auto inst = synthetic::random_softmax_instance(404, 30, 3, 2, 0.05);
  const GradCache cache = build_grad_cache(inst.theta, inst.data);
  const double lambda = 1e-3;
  // Fisher + l2 I equals the Hessian for softmax regression, so damp the
  // fisher basis by l2 + lambda to line the two operators up exactly.
  auto hop = CurvatureOperator::from_model(inst.theta, inst.data, lambda,
                                           CurvatureOperator::Basis::Hessian,
                                           /*materialize=*/true);
  auto fop = CurvatureOperator::from_model(inst.theta, inst.data,
                                           lambda + inst.spec.l2,
                                           CurvatureOperator::Basis::ModelFisher,
                                           /*materialize=*/true);
  const Vector x_test = inst.data.features.row(2).transpose();
  const int y_test = inst.data.labels[2];
  const STestVector sh = s_test(inst.theta, hop, x_test, y_test, SolveMethod::Direct);
  const STestVector sf = s_test(inst.theta, fop, x_test, y_test, SolveMethod::Direct);
  const InfluenceScores scores_h = influence_all(sh, cache);
  const InfluenceScores scores_f = influence_all(sf, cache);
  const auto denom_h =
      precompute_denominators(cache, hop, DenomVariant::Ell, SolveMethod::Direct);
  const auto denom_f =
      precompute_denominators(cache, fop, DenomVariant::Ell, SolveMethod::Direct);
  const Vector rel_h = l_relatif(scores_h, denom_h).values;
  const Vector rel_f = l_relatif(scores_f, denom_f).values;
  const double scale = rel_h.cwiseAbs().maxCoeff();
  CHECK((rel_h - rel_f).cwiseAbs().maxCoeff() / scale <= 1e-6);
}

TEST_CASE("denominator precompute matches individual solves and flags zeros") {
  IdentitySetup setup({unit(3, 0, 2.0), Vector::Zero(3), unit(3, 2, 0.5)}, 3);
  const auto denom = precompute_denominators(setup.cache, setup.op,
                                             DenomVariant::Theta,
                                             SolveMethod::Direct);
  CHECK(denom.values[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(denom.degenerate[1] == 1);
  CHECK(denom.values[1] == 0.0);
  CHECK(denom.values[2] == doctest::Approx(0.5).epsilon(1e-12));

  // Iterative route gives the same numbers.
  const auto denom_cg = precompute_denominators(
      setup.cache, setup.op, DenomVariant::Theta, SolveMethod::Cg,
      SolveOptions{.cg_tol = 1e-12});
  CHECK((denom.values - denom_cg.values).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("variant and metadata mismatches are rejected") {
  IdentitySetup setup({unit(2, 0)}, 2);
  const InfluenceScores scores = influence_all(setup.stest(unit(2, 0)), setup.cache);
  const auto denom_theta = precompute_denominators(
      setup.cache, setup.op, DenomVariant::Theta, SolveMethod::Direct);
  CHECK_THROWS_AS(l_relatif(scores, denom_theta), DataError);

  auto denom_stale = denom_theta;
  denom_stale.params_hash.fill(1);
  CHECK_THROWS_AS(theta_relatif(scores, denom_stale), StaleCacheError);

  auto denom_lambda = denom_theta;
  denom_lambda.lambda = 0.5;
  CHECK_THROWS_AS(theta_relatif(scores, denom_lambda), DataError);
}

TEST_CASE("top_k sign conventions and tie handling") {
  Vector scores(3);
  scores << 3.0, -5.0, 1.0;
  CHECK(top_k(scores, 1, SignMode::Positive).entries[0].index == 0);
  CHECK(top_k(scores, 1, SignMode::Absolute).entries[0].index == 1);
  CHECK(top_k(scores, 1, SignMode::Negative).entries[0].index == 1);

  Vector tie(2);
  tie << 2.0, 2.0;
  CHECK(top_k(tie, 1, SignMode::Positive).entries[0].index == 0);

  CHECK_THROWS_AS(top_k(scores, 5, SignMode::Positive), DimensionError);

  const auto ordered = top_k(scores, 3, SignMode::Positive);
  CHECK(ordered.entries[0].score == 3.0);
  CHECK(ordered.entries[1].score == 1.0);
  CHECK(ordered.entries[2].score == -5.0);
}

TEST_CASE("scaling one gradient can flip the IF argmax but never the relatif ones") {
  // g_test = e0; row 0 aligned with unit norm, row 1 nearly aligned.
  const Index p = 2;
  Vector g0 = unit(p, 0);
  Vector g1(p);
  g1 << 0.9, 0.4359;  // unit-ish norm, cosine 0.9 with e0
  IdentitySetup before({g0, g1}, p);
  IdentitySetup after({g0, 10.0 * g1}, p);

  auto argmaxes = [&](const IdentitySetup& setup) {
    const InfluenceScores scores =
        influence_all(setup.stest(unit(p, 0)), setup.cache);
    const auto dt = precompute_denominators(setup.cache, setup.op,
                                            DenomVariant::Theta,
                                            SolveMethod::Direct);
    const auto dl = precompute_denominators(setup.cache, setup.op,
                                            DenomVariant::Ell,
                                            SolveMethod::Direct);
    const Vector theta_rel = theta_relatif(scores, dt).values;
    const Vector ell_rel = l_relatif(scores, dl).values;
    Index a_if, a_theta, a_ell;
    scores.scores.maxCoeff(&a_if);
    theta_rel.maxCoeff(&a_theta);
    ell_rel.maxCoeff(&a_ell);
    return std::array<Index, 3>{a_if, a_theta, a_ell};
  };

  const auto base = argmaxes(before);
  const auto scaled = argmaxes(after);
  CHECK(base[0] == 0);
  CHECK(scaled[0] == 1);        // IF argmax flipped by the rescaling
  CHECK(base[1] == scaled[1]);  // theta-relatif argmax unchanged
  CHECK(base[2] == scaled[2]);  // ell-relatif argmax unchanged
  CHECK(base[1] == 0);
  CHECK(base[2] == 0);
}

TEST_CASE("relatif rankings coincide with IF when all denominators are equal") {
  const Index p = 4;
  std::mt19937_64 rng(65);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Vector> rows;
  for (int i = 0; i < 6; ++i) {
    Vector g(p);
    for (Index j = 0; j < p; ++j) g[j] = normal(rng);
    rows.push_back(g / g.norm());  // all unit norm, identity curvature
  }
  IdentitySetup setup({rows[0], rows[1], rows[2], rows[3], rows[4], rows[5]}, p);
  Vector g_test(p);
  for (Index j = 0; j < p; ++j) g_test[j] = normal(rng);
  const InfluenceScores scores = influence_all(setup.stest(g_test), setup.cache);
  const auto dt = precompute_denominators(setup.cache, setup.op,
                                          DenomVariant::Theta, SolveMethod::Direct);
  const auto dl = precompute_denominators(setup.cache, setup.op, DenomVariant::Ell,
                                          SolveMethod::Direct);
  const auto r_if = ranking(scores.scores);
  const auto r_theta = ranking(theta_relatif(scores, dt).values);
  const auto r_ell = ranking(l_relatif(scores, dl).values);
  CHECK(r_if == r_theta);
  CHECK(r_if == r_ell);
}

TEST_CASE("brute-force constrained search agrees with the relatif argmax") {
  for (std::uint64_t seed : {501, 502, 503}) {
    auto inst = synthetic::random_softmax_instance(seed, 30, 4, 2, 0.05);
    REQUIRE(inst.theta.values.size() <= 20);
    const GradCache cache = build_grad_cache(inst.theta, inst.data);
    const double lambda = 1e-3;
    oracles::DenseInfluence oracle(exact_hessian(inst.theta, inst.data), lambda);
    const Vector x_test = inst.data.features.row(0).transpose();
    const Vector g_test = grad(inst.theta, x_test, inst.data.labels[0]);

    const Index n = cache.grads.rows();
    Vector infl(n), theta_den(n), ell_den(n);
    for (Index i = 0; i < n; ++i) {
      const Vector gi = cache.grads.row(i).transpose();
      infl[i] = oracle.influence(g_test, gi);
      theta_den[i] = oracle.theta_denom(gi);
      ell_den[i] = oracle.ell_denom(gi);
    }

    // Parameter-norm constraint (theta variant).
    Vector theta_ratio = (infl.cwiseAbs().array() / theta_den.array()).matrix();
    Index closed_theta;
    theta_ratio.maxCoeff(&closed_theta);
    CHECK(oracles::brute_force_constrained_argmax(infl, theta_den, 0.01, 10000) ==
          closed_theta);

    // Expected squared loss-change constraint (ell variant).
    Vector ell_ratio = (infl.cwiseAbs().array() / ell_den.array()).matrix();
    Index closed_ell;
    ell_ratio.maxCoeff(&closed_ell);
    CHECK(oracles::brute_force_constrained_argmax(infl, ell_den, 0.01, 10000) ==
          closed_ell);
  }
}
