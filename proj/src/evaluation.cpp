#include "relinf/evaluation.hpp"

#include "relinf/model.hpp"
#include "relinf/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

namespace relinf {

namespace {

double pearson_correlation(const Eigen::Ref<const Vector>& a,
                           const Eigen::Ref<const Vector>& b) {
  const Index n = a.size();
  const double ma = a.mean(), mb = b.mean();
  const Vector da = a.array() - ma;
  const Vector db = b.array() - mb;
  const double va = da.squaredNorm(), vb = db.squaredNorm();
  if (vb == 0.0)
    throw DataError("exact scores are constant; correlation is undefined");
  if (va == 0.0)
    throw DataError("approx scores are constant; correlation is undefined");
  (void)n;
  return da.dot(db) / std::sqrt(va * vb);
}

// Average ranks (1-based) with ties sharing the mean rank of their run.
Vector average_ranks(const Eigen::Ref<const Vector>& v) {
  const Index n = v.size();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(),
            [&](Index a, Index b) { return v[a] < v[b]; });
  Vector ranks(n);
  Index i = 0;
  while (i < n) {
    Index j = i;
    while (j + 1 < n && v[order[static_cast<std::size_t>(j + 1)]] ==
                            v[order[static_cast<std::size_t>(i)]])
      ++j;
    const double mean_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Index t = i; t <= j; ++t)
      ranks[order[static_cast<std::size_t>(t)]] = mean_rank;
    i = j + 1;
  }
  return ranks;
}

double ndcg_at_k(const Eigen::Ref<const Vector>& approx,
                 const Eigen::Ref<const Vector>& exact, int k) {
  const Index n = exact.size();
  const double max_abs = exact.cwiseAbs().maxCoeff();
  if (max_abs == 0.0) return 1.0;  // all-zero relevance: any order is ideal
  Vector rel = exact.cwiseAbs() / max_abs;

  auto ordering = [n](const Eigen::Ref<const Vector>& key) {
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
      if (key[a] != key[b]) return key[a] > key[b];
      return a < b;
    });
    return order;
  };
  const std::vector<Index> by_approx = ordering(approx.cwiseAbs());
  const std::vector<Index> by_exact = ordering(rel);

  double dcg = 0.0, idcg = 0.0;
  for (int pos = 0; pos < k; ++pos) {
    const double discount = std::log2(static_cast<double>(pos) + 2.0);
    dcg += rel[by_approx[static_cast<std::size_t>(pos)]] / discount;
    idcg += rel[by_exact[static_cast<std::size_t>(pos)]] / discount;
  }
  return dcg / idcg;
}

}  // namespace

MetricReport approximation_metrics(const Eigen::Ref<const Vector>& approx,
                                   const Eigen::Ref<const Vector>& exact,
                                   const std::vector<int>& ks,
                                   bool self_influence) {
  if (approx.size() != exact.size())
    throw DimensionError("metric inputs must have equal length");
  if (approx.size() < 2)
    throw DimensionError("metrics require at least 2 scores");
  MetricReport report;
  report.n_scored = approx.size();
  report.pearson = pearson_correlation(approx, exact);
  report.spearman =
      pearson_correlation(average_ranks(approx), average_ranks(exact));
  for (int k : ks) {
    if (k < 1 || k > approx.size())
      throw DimensionError("ndcg k out of range: " + std::to_string(k));
    report.ndcg_at_k[k] = ndcg_at_k(approx, exact, k);
  }
  if (self_influence)
    report.self_mse = (approx - exact).squaredNorm() /
                      static_cast<double>(approx.size());
  return report;
}

LOOResult loo_retrain(const Dataset& data, const ModelSpec& spec,
                      const TrainConfig& cfg, const ParamVector& base,
                      Index removed_idx, const Eigen::Ref<const Vector>& x_test,
                      int y_test, double influence_score) {
  const Index n = data.n();
  if (removed_idx < 0 || removed_idx >= n)
    throw DimensionError("loo_retrain: removal index out of range");

  TrainConfig loo_cfg = cfg;  // identical config and seed
  Vector w = cfg.weights ? *cfg.weights
                         : Vector::Constant(n, 1.0 / static_cast<double>(n));
  w[removed_idx] = 0.0;  // drop the example; other weights stay at 1/n
  loo_cfg.weights = w;

  const ParamVector retrained = train_from(data, spec, loo_cfg, base.values);

  LOOResult out;
  out.removed_idx = removed_idx;
  out.delta_test_loss = loss(retrained, x_test, y_test) - loss(base, x_test, y_test);
  out.delta_param_norm = (retrained.values - base.values).norm();
  double rss = 0.0;
  for (Index j = 0; j < n; ++j) {
    const Vector xj = data.features.row(j).transpose();
    const double dl = loss(retrained, xj, data.labels[j]) -
                      loss(base, xj, data.labels[j]);
    rss += dl * dl;
  }
  out.rss_delta_loss = std::sqrt(rss);
  // First-order estimate of the removal effect (epsilon_i = -1/n applied
  // to the -Infl*epsilon loss expansion).
  out.predicted_delta = influence_score / static_cast<double>(n);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  out.ratio_param = out.delta_param_norm > 0.0
                        ? out.delta_test_loss / out.delta_param_norm
                        : nan;
  out.ratio_rss =
      out.rss_delta_loss > 0.0 ? out.delta_test_loss / out.rss_delta_loss : nan;
  return out;
}

SetStats influence_set_stats(const std::vector<ExplanationSet>& sets,
                             const ParamVector& theta, const Dataset& data) {
  if (sets.empty()) throw DataError("influence_set_stats: empty input");
  const int k = sets.front().k;
  const SignMode sign = sets.front().sign;
  std::set<Index> members;
  for (const auto& s : sets) {
    if (s.k != k || s.sign != sign)
      throw DataError("influence_set_stats: sets were produced with different "
                      "k or sign settings");
    for (const auto& e : s.entries) members.insert(e.index);
  }
  SetStats out;
  out.cardinality = static_cast<Index>(members.size());
  if (members.empty()) return out;
  double sum = 0.0, sum_sq = 0.0;
  for (Index idx : members) {
    const Vector probs = predict_proba(theta, data.features.row(idx).transpose());
    const double p = probs[data.labels[idx]];
    sum += p;
    sum_sq += p * p;
  }
  const double m = static_cast<double>(members.size());
  out.mean_prob = sum / m;
  out.std_prob = std::sqrt(std::max(0.0, sum_sq / m - out.mean_prob * out.mean_prob));
  return out;
}

KnnResult knn_overlap(const Dataset& data, const Eigen::Ref<const Vector>& x_test,
                      int k, const ExplanationSet& explanation) {
  if (k < 1 || k > data.n())
    throw DimensionError("knn_overlap: k out of range");
  if (x_test.size() != data.d())
    throw DimensionError("knn_overlap: feature dimension mismatch");
  const Index n = data.n();
  Vector dists(n);
  for (Index i = 0; i < n; ++i)
    dists[i] = (data.features.row(i).transpose() - x_test).squaredNorm();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    if (dists[a] != dists[b]) return dists[a] < dists[b];
    return a < b;
  });
  KnnResult out;
  out.indices.assign(order.begin(), order.begin() + k);
  std::set<Index> expl;
  for (const auto& e : explanation.entries) expl.insert(e.index);
  Index shared = 0;
  for (Index idx : out.indices) shared += expl.count(idx) ? 1 : 0;
  out.overlap = static_cast<double>(shared) / static_cast<double>(k);
  return out;
}

}  // namespace relinf
