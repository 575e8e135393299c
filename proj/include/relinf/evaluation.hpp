#pragma once

#include "relinf/influence.hpp"
#include "relinf/types.hpp"

#include <map>
#include <optional>
#include <vector>

namespace relinf {

/// Approximation quality of one score vector against an exact reference.
struct MetricReport {
  double pearson = 0.0;
  double spearman = 0.0;
  std::map<int, double> ndcg_at_k;
  std::optional<double> self_mse;  // only when both inputs are self-influence
  Index n_scored = 0;
};

/// Pearson/Spearman plus NDCG@k with linear gains rel = |exact|/max|exact|,
/// log2 position discount, and the ideal ordering by |exact|.
MetricReport approximation_metrics(const Eigen::Ref<const Vector>& approx,
                                   const Eigen::Ref<const Vector>& exact,
                                   const std::vector<int>& ks,
                                   bool self_influence = false);

/// Ground truth for one removal: retrain with w_i = 0 (other weights kept
/// at 1/n), warm-started from the base parameters with the same config and
/// seed.
struct LOOResult {
  Index removed_idx = -1;
  double delta_test_loss = 0.0;   // l(z_test, theta_-i) - l(z_test, theta*)
  double delta_param_norm = 0.0;  // |theta_-i - theta*|
  double rss_delta_loss = 0.0;    // sqrt(sum_j (delta l_j)^2) over the train set
  double predicted_delta = 0.0;   // first-order estimate Infl(test,i)/n
  double ratio_param = 0.0;       // delta_test_loss / delta_param_norm
  double ratio_rss = 0.0;         // delta_test_loss / rss_delta_loss
};

LOOResult loo_retrain(const Dataset& data, const ModelSpec& spec,
                      const TrainConfig& cfg, const ParamVector& base,
                      Index removed_idx, const Eigen::Ref<const Vector>& x_test,
                      int y_test, double influence_score);

/// Union statistics over explanation sets: cardinality of the union and
/// the model probability of each member's true class (dispersion reported
/// as population std-dev).
struct SetStats {
  Index cardinality = 0;
  double mean_prob = 0.0;
  double std_prob = 0.0;
};

SetStats influence_set_stats(const std::vector<ExplanationSet>& sets,
                             const ParamVector& theta, const Dataset& data);

/// Exact k-NN by squared Euclidean distance on raw features (ties by
/// lower index) and its overlap fraction with an explanation set.
struct KnnResult {
  std::vector<Index> indices;
  double overlap = 0.0;
};

KnnResult knn_overlap(const Dataset& data, const Eigen::Ref<const Vector>& x_test,
                      int k, const ExplanationSet& explanation);

}  // namespace relinf
