#include "relinf/train.hpp"

#include "relinf/model.hpp"

#include <cmath>
#include <deque>
#include <random>
#include <sstream>

namespace relinf {

namespace {

constexpr double kArmijoC1 = 1e-4;
constexpr int kMaxBacktracks = 60;

struct Objective {
  const Dataset& data;
  const ModelSpec& spec;
  const Vector* weights;

  double value(const Vector& theta) const {
    return objective(ParamVector{theta, spec}, data, weights);
  }
  Vector gradient(const Vector& theta) const {
    return objective_grad(ParamVector{theta, spec}, data, weights);
  }
};

// Backtracking line search; returns the accepted step or 0 on failure.
double armijo_step(const Objective& obj, const Vector& theta, double f,
                   const Vector& g, const Vector& dir, double t0) {
  const double slope = g.dot(dir);
  if (slope >= 0) return 0.0;
  double t = t0;
  for (int back = 0; back < kMaxBacktracks; ++back) {
    const double f_new = obj.value(theta + t * dir);
    if (std::isfinite(f_new) && f_new <= f + kArmijoC1 * t * slope) return t;
    t *= 0.5;
  }
  return 0.0;
}

[[noreturn]] void fail_convergence(const char* why, int iters, double grad_norm) {
  std::ostringstream msg;
  msg << "training did not converge (" << why << ") after " << iters
      << " iterations; final gradient norm " << grad_norm;
  throw TrainError(msg.str(), grad_norm);
}

Vector run_gradient_descent(const Objective& obj, Vector theta,
                            const TrainConfig& cfg) {
  double step = 1.0;
  Vector g = obj.gradient(theta);
  for (int it = 0; it < cfg.max_iters; ++it) {
    const double gn = g.norm();
    if (gn <= cfg.grad_tol) return theta;
    const double f = obj.value(theta);
    const Vector dir = -g;
    const double t = armijo_step(obj, theta, f, g, dir, step);
    if (t == 0.0) fail_convergence("line search failed", it, gn);
    theta += t * dir;
    g = obj.gradient(theta);
    step = std::min(t * 2.0, 1e4);  // carry the accepted step forward
  }
  const double gn = obj.gradient(theta).norm();
  if (gn <= cfg.grad_tol) return theta;
  fail_convergence("max_iters reached", cfg.max_iters, gn);
}

Vector run_lbfgs(const Objective& obj, Vector theta, const TrainConfig& cfg) {
  constexpr int kHistory = 10;
  std::deque<Vector> s_hist, y_hist;
  std::deque<double> rho_hist;

  Vector g = obj.gradient(theta);
  for (int it = 0; it < cfg.max_iters; ++it) {
    const double gn = g.norm();
    if (gn <= cfg.grad_tol) return theta;

    // Two-loop recursion.
    Vector q = g;
    const int m = static_cast<int>(s_hist.size());
    std::vector<double> alpha(static_cast<std::size_t>(m));
    for (int i = m - 1; i >= 0; --i) {
      alpha[i] = rho_hist[i] * s_hist[i].dot(q);
      q -= alpha[i] * y_hist[i];
    }
    if (m > 0) {
      const double gamma =
          s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
      q *= gamma;
    }
    for (int i = 0; i < m; ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(q);
      q += (alpha[i] - beta) * s_hist[i];
    }
    Vector dir = -q;

    const double f = obj.value(theta);
    double t = armijo_step(obj, theta, f, g, dir, 1.0);
    if (t == 0.0) {
      // Quasi-Newton direction rejected; restart from steepest descent.
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      dir = -g;
      t = armijo_step(obj, theta, f, g, dir, 1.0 / std::max(1.0, gn));
      if (t == 0.0) fail_convergence("line search failed", it, gn);
    }

    const Vector theta_new = theta + t * dir;
    const Vector g_new = obj.gradient(theta_new);
    const Vector s = theta_new - theta;
    const Vector y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      s_hist.push_back(s);
      y_hist.push_back(y);
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > kHistory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    theta = theta_new;
    g = g_new;
  }
  const double gn = g.norm();
  if (gn <= cfg.grad_tol) return theta;
  fail_convergence("max_iters reached", cfg.max_iters, gn);
}

void check_config(const Dataset& data, const TrainConfig& cfg) {
  if (cfg.grad_tol <= 0) throw ConfigError("grad_tol must be > 0");
  if (cfg.max_iters < 1) throw ConfigError("max_iters must be >= 1");
  if (cfg.weights && cfg.weights->size() != data.n())
    throw DimensionError("weight vector length does not match dataset");
  if (cfg.weights && (cfg.weights->array() < 0).any())
    throw ConfigError("per-example weights must be non-negative");
}

}  // namespace

Vector default_init(const ModelSpec& spec, std::uint64_t seed) {
  validate(spec);
  const Index p = spec.param_count();
  if (spec.family == ModelFamily::SoftmaxRegression) return Vector::Zero(p);
  // Weights get scaled normal draws, biases start at zero.
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector theta = Vector::Zero(p);
  const Index w1_n = Index(spec.hidden) * spec.d;
  const double w1_scale = 1.0 / std::sqrt(static_cast<double>(spec.d));
  for (Index i = 0; i < w1_n; ++i) theta[i] = w1_scale * normal(rng);
  const Index w2_off = w1_n + (spec.bias ? spec.hidden : 0);
  const Index w2_n = Index(spec.c) * spec.hidden;
  const double w2_scale = 1.0 / std::sqrt(static_cast<double>(spec.hidden));
  for (Index i = 0; i < w2_n; ++i) theta[w2_off + i] = w2_scale * normal(rng);
  return theta;
}

ParamVector train_from(const Dataset& data, const ModelSpec& spec,
                       const TrainConfig& cfg, const Vector& init) {
  validate(spec);
  validate(data);
  check_config(data, cfg);
  if (data.d() != spec.d || data.c != spec.c)
    throw DimensionError("dataset dimensions do not match model spec");
  if (init.size() != spec.param_count())
    throw DimensionError("init length does not match spec");

  const Vector* weights = cfg.weights ? &*cfg.weights : nullptr;
  Objective obj{data, spec, weights};
  Vector theta = cfg.optimizer == Optimizer::GradientDescent
                     ? run_gradient_descent(obj, init, cfg)
                     : run_lbfgs(obj, init, cfg);
  return ParamVector{std::move(theta), spec};
}

ParamVector train(const Dataset& data, const ModelSpec& spec,
                  const TrainConfig& cfg) {
  return train_from(data, spec, cfg, default_init(spec, cfg.seed));
}

}  // namespace relinf
