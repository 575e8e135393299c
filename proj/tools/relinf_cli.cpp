// relinf: training-data influence for small differentiable classifiers.
//
// Pipeline: train -> gradcache -> [project] -> stest/denominators ->
// influence -> evaluate. Artifacts are named {stem}.{kind}.{hash8}.{bin|json}
// where hash8 is the parameter fingerprint prefix, so stale artifacts are
// detectable by name. Every JSON artifact embeds the full resolved config
// and the parameter fingerprint; binary artifacts get a JSON sidecar.
//
// Exit codes: 0 success, 2 config error, 3 missing/stale artifact,
// 4 solver failure, 1 anything else.

#include "relinf/curvature.hpp"
#include "relinf/dataset_io.hpp"
#include "relinf/evaluation.hpp"
#include "relinf/grad_cache.hpp"
#include "relinf/hash.hpp"
#include "relinf/influence.hpp"
#include "relinf/model.hpp"
#include "relinf/parallel.hpp"
#include "relinf/projection.hpp"
#include "relinf/solvers.hpp"
#include "relinf/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace relinf;

namespace {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct RunConfig {
  // data
  std::string train_data;
  std::string test_data;
  std::string train_images, train_labels;
  std::string test_images, test_labels;
  std::string format = "csv";
  int classes = 0;  // 0 = infer from training labels
  std::string weights_file;
  // model
  std::string family = "softmax";
  int hidden = 16;
  bool bias = true;
  double l2 = 1e-3;
  // training
  std::string optimizer = "lbfgs";
  int max_iters = 2000;
  double grad_tol = 1e-8;
  std::uint64_t seed = 0;
  // solver
  std::string solver = "direct";
  double damping = std::numeric_limits<double>::quiet_NaN();  // NaN = family default
  double cg_tol = 1e-8;
  int cg_max_iters = 0;
  int lissa_iters = 2000;
  std::string lissa_scale = "auto";
  int lissa_batch = 0;
  int lissa_repeats = 1;
  std::string basis = "hessian";
  Index dense_cap = kDenseCap;
  // projection
  int q = 0;
  int batch_size = 256;
  bool projected = false;
  std::string projection_file;
  // influence / evaluation
  int test_idx = 0;
  std::string method = "if";
  int k = 5;
  std::string sign = "pos";
  int test_count = 100;
  int loo_count = 20;
  int knn_k = 0;  // 0 = use k
  int remove_idx = 0;
  std::string csv_out;
  // output
  std::string out_dir = "runs";
  std::string stem = "run";
  // explicit artifact overrides
  std::string params_file;
  std::string gradcache_file;
};

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config error: key `" + key + "` expects true/false, got `" +
                    value + "`");
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config error: key `" + key + "` expects a number, got `" +
                      value + "`");
  }
}

int parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config error: key `" + key + "` expects an integer, got `" +
                      value + "`");
  }
}

void apply_config_entry(RunConfig& cfg, const std::string& key,
                        const std::string& value) {
  if (key == "train_data") cfg.train_data = value;
  else if (key == "test_data") cfg.test_data = value;
  else if (key == "train_images") cfg.train_images = value;
  else if (key == "train_labels") cfg.train_labels = value;
  else if (key == "test_images") cfg.test_images = value;
  else if (key == "test_labels") cfg.test_labels = value;
  else if (key == "format") cfg.format = value;
  else if (key == "classes") cfg.classes = parse_int(key, value);
  else if (key == "weights") cfg.weights_file = value;
  else if (key == "family") cfg.family = value;
  else if (key == "hidden") cfg.hidden = parse_int(key, value);
  else if (key == "bias") cfg.bias = parse_bool(key, value);
  else if (key == "l2") cfg.l2 = parse_double(key, value);
  else if (key == "optimizer") cfg.optimizer = value;
  else if (key == "max_iters") cfg.max_iters = parse_int(key, value);
  else if (key == "grad_tol") cfg.grad_tol = parse_double(key, value);
  else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(std::stoull(value));
  else if (key == "solver") cfg.solver = value;
  else if (key == "damping") cfg.damping = parse_double(key, value);
  else if (key == "cg_tol") cfg.cg_tol = parse_double(key, value);
  else if (key == "cg_max_iters") cfg.cg_max_iters = parse_int(key, value);
  else if (key == "lissa_iters") cfg.lissa_iters = parse_int(key, value);
  else if (key == "lissa_scale") cfg.lissa_scale = value;
  else if (key == "lissa_batch") cfg.lissa_batch = parse_int(key, value);
  else if (key == "lissa_repeats") cfg.lissa_repeats = parse_int(key, value);
  else if (key == "basis") cfg.basis = value;
  else if (key == "dense_cap") cfg.dense_cap = parse_int(key, value);
  else if (key == "q") cfg.q = parse_int(key, value);
  else if (key == "batch_size") cfg.batch_size = parse_int(key, value);
  else if (key == "projection") cfg.projection_file = value;
  else if (key == "test_idx") cfg.test_idx = parse_int(key, value);
  else if (key == "method") cfg.method = value;
  else if (key == "k") cfg.k = parse_int(key, value);
  else if (key == "sign") cfg.sign = value;
  else if (key == "test_count") cfg.test_count = parse_int(key, value);
  else if (key == "loo_count") cfg.loo_count = parse_int(key, value);
  else if (key == "knn_k") cfg.knn_k = parse_int(key, value);
  else if (key == "remove_idx") cfg.remove_idx = parse_int(key, value);
  else if (key == "csv") cfg.csv_out = value;
  else if (key == "out_dir") cfg.out_dir = value;
  else if (key == "stem") cfg.stem = value;
  else if (key == "params") cfg.params_file = value;
  else if (key == "gradcache") cfg.gradcache_file = value;
  else
    throw ConfigError("config error: unknown config key `" + key + "`");
}

void load_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config error: cannot open config file " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      if (a == std::string::npos) return std::string();
      const auto b = s.find_last_not_of(" \t");
      return s.substr(a, b - a + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config error: expected key=value at line " +
                        std::to_string(lineno) + " of " + path);
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
      value = value.substr(1, value.size() - 2);
    apply_config_entry(cfg, key, value);
  }
}

ModelFamily parse_family(const RunConfig& cfg) {
  if (cfg.family == "softmax") return ModelFamily::SoftmaxRegression;
  if (cfg.family == "mlp") return ModelFamily::Mlp1Hidden;
  throw ConfigError("config error: family must be softmax or mlp, got `" +
                    cfg.family + "`");
}

SolveMethod parse_solver(const RunConfig& cfg) {
  if (cfg.solver == "direct") return SolveMethod::Direct;
  if (cfg.solver == "cg") return SolveMethod::Cg;
  if (cfg.solver == "lissa") return SolveMethod::Lissa;
  throw ConfigError("config error: solver must be direct, cg, or lissa, got `" +
                    cfg.solver + "`");
}

CurvatureOperator::Basis parse_basis(const RunConfig& cfg) {
  if (cfg.basis == "hessian") return CurvatureOperator::Basis::Hessian;
  if (cfg.basis == "fisher") return CurvatureOperator::Basis::ModelFisher;
  throw ConfigError("config error: basis must be hessian or fisher, got `" +
                    cfg.basis + "`");
}

SignMode parse_sign(const RunConfig& cfg) {
  if (cfg.sign == "pos") return SignMode::Positive;
  if (cfg.sign == "neg") return SignMode::Negative;
  if (cfg.sign == "abs") return SignMode::Absolute;
  throw ConfigError("config error: sign must be pos, neg, or abs, got `" +
                    cfg.sign + "`");
}

double resolved_damping(const RunConfig& cfg) {
  if (std::isnan(cfg.damping)) return default_damping(parse_family(cfg));
  return cfg.damping;
}

double resolved_lissa_scale(const RunConfig& cfg) {
  if (cfg.lissa_scale == "auto") return 0.0;
  const double v = parse_double("lissa_scale", cfg.lissa_scale);
  if (v <= 0)
    throw ConfigError("config error: lissa_scale must be `auto` or > 0");
  return v;
}

void validate_config(const RunConfig& cfg) {
  if (!std::isnan(cfg.damping) && cfg.damping < 0)
    throw ConfigError("config error: damping must be >= 0");
  if (cfg.l2 < 0) throw ConfigError("config error: l2 must be >= 0");
  if (cfg.grad_tol <= 0) throw ConfigError("config error: grad_tol must be > 0");
  if (cfg.max_iters < 1) throw ConfigError("config error: max_iters must be >= 1");
  if (cfg.k < 1) throw ConfigError("config error: k must be >= 1");
  if (cfg.cg_tol <= 0) throw ConfigError("config error: cg_tol must be > 0");
  if (cfg.lissa_iters < 1)
    throw ConfigError("config error: lissa_iters must be >= 1");
  if (cfg.classes < 0) throw ConfigError("config error: classes must be >= 0");
  if (cfg.format != "csv" && cfg.format != "idx")
    throw ConfigError("config error: format must be csv or idx");
  parse_family(cfg);
  parse_solver(cfg);
  parse_basis(cfg);
  parse_sign(cfg);
  resolved_lissa_scale(cfg);
}

json resolved_config_json(const RunConfig& cfg) {
  json j;
  j["train_data"] = cfg.train_data;
  j["test_data"] = cfg.test_data;
  j["train_images"] = cfg.train_images;
  j["train_labels"] = cfg.train_labels;
  j["test_images"] = cfg.test_images;
  j["test_labels"] = cfg.test_labels;
  j["format"] = cfg.format;
  j["classes"] = cfg.classes;
  j["weights"] = cfg.weights_file;
  j["family"] = cfg.family;
  j["hidden"] = cfg.hidden;
  j["bias"] = cfg.bias;
  j["l2"] = cfg.l2;
  j["optimizer"] = cfg.optimizer;
  j["max_iters"] = cfg.max_iters;
  j["grad_tol"] = cfg.grad_tol;
  j["seed"] = cfg.seed;
  j["solver"] = cfg.solver;
  j["damping"] = resolved_damping(cfg);
  j["cg_tol"] = cfg.cg_tol;
  j["cg_max_iters"] = cfg.cg_max_iters;
  j["lissa_iters"] = cfg.lissa_iters;
  j["lissa_scale"] = cfg.lissa_scale;
  j["lissa_batch"] = cfg.lissa_batch;
  j["lissa_repeats"] = cfg.lissa_repeats;
  j["basis"] = cfg.basis;
  j["dense_cap"] = static_cast<std::int64_t>(cfg.dense_cap);
  j["q"] = cfg.q;
  j["batch_size"] = cfg.batch_size;
  j["projection"] = cfg.projection_file;
  j["test_idx"] = cfg.test_idx;
  j["method"] = cfg.method;
  j["k"] = cfg.k;
  j["sign"] = cfg.sign;
  j["test_count"] = cfg.test_count;
  j["loo_count"] = cfg.loo_count;
  j["knn_k"] = cfg.knn_k;
  j["remove_idx"] = cfg.remove_idx;
  j["csv"] = cfg.csv_out;
  j["out_dir"] = cfg.out_dir;
  j["stem"] = cfg.stem;
  return j;
}

// ---------------------------------------------------------------------------
// Artifact plumbing
// ---------------------------------------------------------------------------

std::string hash8(const Sha256Digest& digest) { return to_hex(digest, 4); }

void write_text_atomic(const fs::path& path, const std::string& text) {
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write artifact: " + path.string());
    out << text;
    if (!out) throw DataError("write failed: " + path.string());
  }
  fs::rename(tmp, path);
}

void write_json_atomic(const fs::path& path, const json& j) {
  write_text_atomic(path, j.dump(2) + "\n");
}

json read_json(const fs::path& path, const std::string& what) {
  std::ifstream in(path);
  if (!in) throw StaleCacheError(what + " missing or stale: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw DataError("cannot parse " + what + " " + path.string() + ": " + e.what());
  }
  return j;
}

json vector_to_json(const Vector& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

Vector vector_from_json(const json& j) {
  const auto vals = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(vals.data(), static_cast<Index>(vals.size()));
}

json spec_to_json(const ModelSpec& spec) {
  json j;
  j["family"] = spec.family == ModelFamily::SoftmaxRegression ? "softmax" : "mlp";
  j["d"] = spec.d;
  j["c"] = spec.c;
  j["hidden"] = spec.hidden;
  j["bias"] = spec.bias;
  j["l2"] = spec.l2;
  return j;
}

ModelSpec spec_from_json(const json& j) {
  ModelSpec spec;
  spec.family = j.at("family").get<std::string>() == "softmax"
                    ? ModelFamily::SoftmaxRegression
                    : ModelFamily::Mlp1Hidden;
  spec.d = j.at("d").get<int>();
  spec.c = j.at("c").get<int>();
  spec.hidden = j.at("hidden").get<int>();
  spec.bias = j.at("bias").get<bool>();
  spec.l2 = j.at("l2").get<double>();
  return spec;
}

json report_to_json(const SolverReport& report) {
  json j;
  j["method"] = to_string(report.method);
  j["iterations"] = report.iterations;
  j["residual_norm"] = report.residual_norm;
  j["converged"] = report.converged;
  return j;
}

fs::path params_path(const RunConfig& cfg) {
  if (!cfg.params_file.empty()) return cfg.params_file;
  const fs::path dir = cfg.out_dir;
  std::vector<fs::path> hits;
  const std::string prefix = cfg.stem + ".params.";
  if (fs::exists(dir))
    for (const auto& entry : fs::directory_iterator(dir)) {
      const std::string name = entry.path().filename().string();
      if (name.rfind(prefix, 0) == 0 && name.size() > prefix.size() &&
          entry.path().extension() == ".json")
        hits.push_back(entry.path());
    }
  if (hits.empty())
    throw StaleCacheError("params artifact missing or stale: run `train` first "
                          "(looked for " + (dir / (prefix + "*.json")).string() + ")");
  if (hits.size() > 1)
    throw ConfigError("config error: multiple params artifacts under " +
                      dir.string() + "; pass --params explicitly");
  return hits.front();
}

ParamVector load_params(const RunConfig& cfg, Sha256Digest* hash_out = nullptr) {
  const fs::path path = params_path(cfg);
  const json j = read_json(path, "params artifact");
  ParamVector theta;
  theta.spec = spec_from_json(j.at("spec"));
  theta.values = vector_from_json(j.at("values"));
  const Sha256Digest digest = params_fingerprint(theta);
  if (to_hex(digest) != j.at("params_hash").get<std::string>())
    throw StaleCacheError("params artifact missing or stale: fingerprint does "
                          "not match its contents: " + path.string());
  if (hash_out) *hash_out = digest;
  return theta;
}

Dataset load_role_dataset(const RunConfig& cfg, bool test_role) {
  if (cfg.format == "idx") {
    const std::string& images = test_role ? cfg.test_images : cfg.train_images;
    const std::string& labels = test_role ? cfg.test_labels : cfg.train_labels;
    if (images.empty() || labels.empty())
      throw ConfigError(std::string("config error: key `") +
                        (test_role ? "test_images/test_labels"
                                   : "train_images/train_labels") +
                        "` required for idx format");
    return load_idx(images, labels, cfg.classes);
  }
  const std::string& path = test_role ? cfg.test_data : cfg.train_data;
  if (path.empty())
    throw ConfigError(std::string("config error: key `") +
                      (test_role ? "test_data" : "train_data") + "` is required");
  return load_csv(path, cfg.classes);
}

ModelSpec make_spec(const RunConfig& cfg, const Dataset& data) {
  ModelSpec spec;
  spec.family = parse_family(cfg);
  spec.d = static_cast<int>(data.d());
  spec.c = data.c;
  spec.hidden = spec.family == ModelFamily::Mlp1Hidden ? cfg.hidden : 0;
  spec.bias = cfg.bias;
  spec.l2 = cfg.l2;
  validate(spec);
  return spec;
}

TrainConfig make_train_config(const RunConfig& cfg, const Dataset& data) {
  TrainConfig tc;
  tc.optimizer = cfg.optimizer == "gd" ? Optimizer::GradientDescent
                                       : Optimizer::QuasiNewton;
  if (cfg.optimizer != "gd" && cfg.optimizer != "lbfgs")
    throw ConfigError("config error: optimizer must be lbfgs or gd, got `" +
                      cfg.optimizer + "`");
  tc.max_iters = cfg.max_iters;
  tc.grad_tol = cfg.grad_tol;
  tc.seed = cfg.seed;
  if (!cfg.weights_file.empty()) {
    std::ifstream in(cfg.weights_file);
    if (!in)
      throw ConfigError("config error: cannot open weights file " +
                        cfg.weights_file);
    std::vector<double> w;
    double v;
    while (in >> v) w.push_back(v);
    if (static_cast<Index>(w.size()) != data.n())
      throw ConfigError("config error: weights file has " +
                        std::to_string(w.size()) + " entries for " +
                        std::to_string(data.n()) + " examples");
    Vector weights = Eigen::Map<const Vector>(w.data(), static_cast<Index>(w.size()));
    if (std::abs(weights.sum() - 1.0) > 1e-8)
      throw ConfigError("config error: weights must sum to 1");
    tc.weights = weights;
  }
  return tc;
}

SolveOptions make_solve_options(const RunConfig& cfg) {
  SolveOptions opts;
  opts.cg_tol = cfg.cg_tol;
  opts.cg_max_iters = cfg.cg_max_iters;
  opts.lissa_iters = cfg.lissa_iters;
  opts.lissa_scale = resolved_lissa_scale(cfg);
  opts.lissa_batch = cfg.lissa_batch;
  opts.lissa_repeats = cfg.lissa_repeats;
  opts.seed = cfg.seed;
  return opts;
}

GradCache load_cache_for(const RunConfig& cfg, const Sha256Digest& params_hash) {
  fs::path path;
  if (!cfg.gradcache_file.empty()) {
    path = cfg.gradcache_file;
  } else {
    path = fs::path(cfg.out_dir) /
           (cfg.stem + ".gradcache." + hash8(params_hash) + ".bin");
  }
  if (!fs::exists(path))
    throw StaleCacheError("gradcache missing or stale: " + path.string());
  GradCache cache = load_grad_cache(path.string());
  if (cache.params_hash != params_hash)
    throw StaleCacheError("gradcache missing or stale: fingerprint mismatch in " +
                          path.string());
  return cache;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_train(const RunConfig& cfg) {
  const Dataset data = load_role_dataset(cfg, /*test_role=*/false);
  const ModelSpec spec = make_spec(cfg, data);
  const TrainConfig tc = make_train_config(cfg, data);
  const ParamVector theta = train(data, spec, tc);
  const double grad_norm =
      objective_grad(theta, data, tc.weights ? &*tc.weights : nullptr).norm();
  const Sha256Digest digest = params_fingerprint(theta);

  json j;
  j["kind"] = "params";
  j["params_hash"] = to_hex(digest);
  j["config"] = resolved_config_json(cfg);
  j["spec"] = spec_to_json(spec);
  j["values"] = vector_to_json(theta.values);
  j["final_grad_norm"] = grad_norm;
  const fs::path path =
      fs::path(cfg.out_dir) / (cfg.stem + ".params." + hash8(digest) + ".json");
  write_json_atomic(path, j);
  std::cout << path.string() << "\n";
  return 0;
}

int cmd_gradcache(const RunConfig& cfg) {
  Sha256Digest digest;
  const ParamVector theta = load_params(cfg, &digest);
  const Dataset data = load_role_dataset(cfg, /*test_role=*/false);
  const GradCache cache = build_grad_cache(theta, data, cfg.grad_tol * 100);

  const fs::path path = fs::path(cfg.out_dir) /
                        (cfg.stem + ".gradcache." + hash8(digest) + ".bin");
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  save_grad_cache(tmp.string(), cache);
  fs::rename(tmp, path);

  json sidecar;
  sidecar["kind"] = "gradcache";
  sidecar["params_hash"] = to_hex(digest);
  sidecar["config"] = resolved_config_json(cfg);
  sidecar["n"] = static_cast<std::int64_t>(cache.grads.rows());
  sidecar["p"] = static_cast<std::int64_t>(cache.grads.cols());
  write_json_atomic(fs::path(path.string() + ".json"), sidecar);
  std::cout << path.string() << "\n";
  return 0;
}

// Keeps theta/data alive next to the operator that borrows them.
struct ModelBundle {
  ParamVector theta;
  Dataset data;
  Sha256Digest digest{};
  CurvatureOperator op = CurvatureOperator::exact(Matrix::Identity(1, 1), 0.0);
  double lambda = 0.0;
};

ModelBundle load_model_bundle(const RunConfig& cfg) {
  ModelBundle b;
  b.theta = load_params(cfg, &b.digest);
  b.data = load_role_dataset(cfg, /*test_role=*/false);
  b.lambda = resolved_damping(cfg);
  const bool materialize = parse_solver(cfg) == SolveMethod::Direct;
  b.op = CurvatureOperator::from_model(b.theta, b.data, b.lambda, parse_basis(cfg),
                                       materialize, cfg.dense_cap);
  return b;
}

fs::path stest_path(const RunConfig& cfg, const Sha256Digest& digest) {
  return fs::path(cfg.out_dir) / (cfg.stem + ".stest.t" +
                                  std::to_string(cfg.test_idx) + "." +
                                  hash8(digest) + ".json");
}

json stest_to_json(const RunConfig& cfg, const STestVector& s) {
  json j;
  j["kind"] = "stest";
  j["params_hash"] = to_hex(s.params_hash);
  j["config"] = resolved_config_json(cfg);
  j["test_idx"] = s.test_id;
  j["lambda"] = s.lambda;
  j["basis"] = to_string(s.basis);
  j["solver"] = report_to_json(s.report);
  j["values"] = vector_to_json(s.values);
  return j;
}

std::optional<STestVector> try_load_stest(const RunConfig& cfg,
                                          const ModelBundle& bundle) {
  const fs::path path = stest_path(cfg, bundle.digest);
  if (!fs::exists(path)) return std::nullopt;
  const json j = read_json(path, "stest artifact");
  if (j.at("params_hash").get<std::string>() != to_hex(bundle.digest))
    return std::nullopt;
  if (j.at("lambda").get<double>() != bundle.lambda) return std::nullopt;
  if (j.at("basis").get<std::string>() != to_string(bundle.op.basis()))
    return std::nullopt;
  if (j.at("solver").at("method").get<std::string>() !=
      to_string(parse_solver(cfg)))
    return std::nullopt;
  STestVector s;
  s.values = vector_from_json(j.at("values"));
  s.params_hash = bundle.digest;
  s.lambda = bundle.lambda;
  s.basis = bundle.op.basis();
  s.test_id = j.at("test_idx").get<int>();
  s.report.method = parse_solver(cfg);
  s.report.iterations = j.at("solver").at("iterations").get<int>();
  s.report.residual_norm = j.at("solver").at("residual_norm").get<double>();
  s.report.converged = j.at("solver").at("converged").get<bool>();
  return s;
}

STestVector compute_stest(const RunConfig& cfg, const ModelBundle& bundle,
                          const Dataset& test_data, bool persist) {
  if (cfg.test_idx < 0 || cfg.test_idx >= test_data.n())
    throw ConfigError("config error: test_idx out of range (test set has " +
                      std::to_string(test_data.n()) + " examples)");
  if (auto cached = try_load_stest(cfg, bundle)) return *cached;
  const STestVector s =
      s_test(bundle.theta, bundle.op,
             test_data.features.row(cfg.test_idx).transpose(),
             test_data.labels[cfg.test_idx], parse_solver(cfg),
             make_solve_options(cfg), cfg.test_idx);
  if (persist) write_json_atomic(stest_path(cfg, bundle.digest), stest_to_json(cfg, s));
  return s;
}

int cmd_stest(const RunConfig& cfg) {
  const ModelBundle bundle = load_model_bundle(cfg);
  const Dataset test_data = load_role_dataset(cfg, /*test_role=*/true);
  const STestVector s = compute_stest(cfg, bundle, test_data, /*persist=*/false);
  const fs::path path = stest_path(cfg, bundle.digest);
  write_json_atomic(path, stest_to_json(cfg, s));
  std::cout << path.string() << "\n";
  return 0;
}

fs::path denoms_path(const RunConfig& cfg, const Sha256Digest& digest,
                     DenomVariant variant) {
  return fs::path(cfg.out_dir) /
         (cfg.stem + ".denoms." + std::string(to_string(variant)) + "." +
          cfg.basis + "." + hash8(digest) + ".json");
}

DenominatorCache load_or_build_denoms(const RunConfig& cfg,
                                      const ModelBundle& bundle,
                                      const GradCache& cache,
                                      DenomVariant variant) {
  const fs::path path = denoms_path(cfg, bundle.digest, variant);
  if (fs::exists(path)) {
    const json j = read_json(path, "denominator cache");
    if (j.at("params_hash").get<std::string>() == to_hex(bundle.digest) &&
        j.at("lambda").get<double>() == bundle.lambda &&
        j.at("basis").get<std::string>() == to_string(bundle.op.basis())) {
      DenominatorCache denom;
      denom.variant = variant;
      denom.values = vector_from_json(j.at("values"));
      const auto flags = j.at("degenerate").get<std::vector<int>>();
      denom.degenerate.assign(flags.begin(), flags.end());
      denom.lambda = bundle.lambda;
      denom.basis = bundle.op.basis();
      denom.params_hash = bundle.digest;
      return denom;
    }
  }
  const DenominatorCache denom = precompute_denominators(
      cache, bundle.op, variant, parse_solver(cfg), make_solve_options(cfg));
  json j;
  j["kind"] = "denominators";
  j["params_hash"] = to_hex(bundle.digest);
  j["config"] = resolved_config_json(cfg);
  j["variant"] = to_string(variant);
  j["lambda"] = denom.lambda;
  j["basis"] = to_string(denom.basis);
  j["values"] = vector_to_json(denom.values);
  j["degenerate"] = json(std::vector<int>(denom.degenerate.begin(),
                                          denom.degenerate.end()));
  write_json_atomic(path, j);
  return denom;
}

struct ScoredMethod {
  Vector values;
  std::vector<char> degenerate;
};

ScoredMethod score_method(const RunConfig& cfg, const ModelBundle& bundle,
                          const GradCache& cache, const InfluenceScores& scores,
                          const std::string& method) {
  ScoredMethod out;
  out.degenerate.assign(static_cast<std::size_t>(scores.scores.size()), 0);
  if (method == "if") {
    out.values = scores.scores;
  } else if (method == "theta-relatif") {
    const auto denom = load_or_build_denoms(cfg, bundle, cache, DenomVariant::Theta);
    auto rel = theta_relatif(scores, denom);
    out.values = std::move(rel.values);
    out.degenerate = std::move(rel.degenerate);
  } else if (method == "l-relatif") {
    const auto denom = load_or_build_denoms(cfg, bundle, cache, DenomVariant::Ell);
    auto rel = l_relatif(scores, denom);
    out.values = std::move(rel.values);
    out.degenerate = std::move(rel.degenerate);
  } else {
    throw ConfigError(
        "config error: method must be if, theta-relatif, or l-relatif, got `" +
        method + "`");
  }
  return out;
}

InfluenceScores projected_scores_for(const RunConfig& cfg, const ModelBundle& bundle,
                                     const GradCache& cache,
                                     const Dataset& test_data) {
  if (cfg.projection_file.empty())
    throw ConfigError("config error: --projected requires `projection` (run "
                      "`project` first)");
  const ProjectionMatrix proj = load_projection(cfg.projection_file);
  if (proj.p() != bundle.theta.values.size())
    throw StaleCacheError("projection missing or stale: width does not match "
                          "the model parameters");
  auto hvp_fn = [&](const Vector& v) { return hvp(bundle.theta, bundle.data, v); };
  const ProjectedCurvature pc = projected_hessian(proj, hvp_fn, bundle.lambda);
  const Vector g_test =
      grad(bundle.theta, test_data.features.row(cfg.test_idx).transpose(),
           test_data.labels[cfg.test_idx]);
  return projected_influence(proj, pc, g_test, cache, cfg.test_idx);
}

int cmd_influence(const RunConfig& cfg) {
  const ModelBundle bundle = load_model_bundle(cfg);
  const GradCache cache = load_cache_for(cfg, bundle.digest);
  const Dataset test_data = load_role_dataset(cfg, /*test_role=*/true);

  InfluenceScores scores;
  SolverReport report;
  if (cfg.projected) {
    if (cfg.test_idx < 0 || cfg.test_idx >= test_data.n())
      throw ConfigError("config error: test_idx out of range");
    scores = projected_scores_for(cfg, bundle, cache, test_data);
    report.method = SolveMethod::Direct;
    report.converged = true;
  } else {
    const STestVector s = compute_stest(cfg, bundle, test_data, /*persist=*/true);
    report = s.report;
    scores = influence_all(s, cache);
  }

  const ScoredMethod ranked = score_method(cfg, bundle, cache, scores, cfg.method);
  const ExplanationSet expl =
      top_k(ranked.values, std::min<int>(cfg.k, static_cast<int>(cache.grads.rows())),
            parse_sign(cfg), cfg.test_idx);

  json j;
  j["kind"] = "influence";
  j["params_hash"] = to_hex(bundle.digest);
  j["config"] = resolved_config_json(cfg);
  j["test_id"] = cfg.test_idx;
  j["method"] = cfg.method;
  j["lambda"] = bundle.lambda;
  j["basis"] = cfg.basis;
  j["sign"] = cfg.sign;
  j["projected"] = cfg.projected;
  j["solver"] = report_to_json(report);
  json entries = json::array();
  for (const auto& e : expl.entries) {
    json entry;
    entry["idx"] = static_cast<std::int64_t>(e.index);
    entry["score"] = e.score;
    const Vector probs = predict_proba(
        bundle.theta, bundle.data.features.row(e.index).transpose());
    entry["prob_of_selected_class"] = probs[bundle.data.labels[e.index]];
    entry["degenerate"] =
        static_cast<bool>(ranked.degenerate[static_cast<std::size_t>(e.index)]);
    entries.push_back(entry);
  }
  j["entries"] = entries;

  const fs::path path =
      fs::path(cfg.out_dir) / (cfg.stem + ".influence." + cfg.method + ".t" +
                               std::to_string(cfg.test_idx) + "." +
                               hash8(bundle.digest) + ".json");
  write_json_atomic(path, j);
  std::cout << path.string() << "\n";
  return 0;
}

int cmd_project(const RunConfig& cfg) {
  Sha256Digest digest;
  const ParamVector theta = load_params(cfg, &digest);
  (void)theta;
  const GradCache cache = load_cache_for(cfg, digest);
  if (cfg.q < 1)
    throw ConfigError("config error: q must be >= 1 for `project`");
  const ProjectionMatrix proj =
      fit_pca(cache, cfg.q, std::max(1, cfg.batch_size));

  const fs::path path = fs::path(cfg.out_dir) /
                        (cfg.stem + ".projection.q" + std::to_string(cfg.q) + "." +
                         hash8(digest) + ".bin");
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  save_projection(tmp.string(), proj);
  fs::rename(tmp, path);

  json sidecar;
  sidecar["kind"] = "projection";
  sidecar["params_hash"] = to_hex(digest);
  sidecar["config"] = resolved_config_json(cfg);
  sidecar["q"] = static_cast<std::int64_t>(proj.q());
  sidecar["p"] = static_cast<std::int64_t>(proj.p());
  sidecar["explained_variance"] = proj.explained_variance();
  sidecar["eigvals"] = vector_to_json(proj.eigvals);
  sidecar["total_variance"] = proj.total_variance;
  write_json_atomic(fs::path(path.string() + ".json"), sidecar);
  std::cout << path.string() << "\n";
  return 0;
}

json loo_to_json(const LOOResult& r) {
  json j;
  j["removed_idx"] = static_cast<std::int64_t>(r.removed_idx);
  j["delta_test_loss"] = r.delta_test_loss;
  j["delta_param_norm"] = r.delta_param_norm;
  j["rss_delta_loss"] = r.rss_delta_loss;
  j["predicted_delta"] = r.predicted_delta;
  j["ratio_param"] = r.ratio_param;
  j["ratio_rss"] = r.ratio_rss;
  return j;
}

int cmd_loo(const RunConfig& cfg) {
  const ModelBundle bundle = load_model_bundle(cfg);
  const Dataset test_data = load_role_dataset(cfg, /*test_role=*/true);
  if (cfg.remove_idx < 0 || cfg.remove_idx >= bundle.data.n())
    throw ConfigError("config error: remove_idx out of range");
  const TrainConfig tc = make_train_config(cfg, bundle.data);

  const STestVector s = compute_stest(cfg, bundle, test_data, /*persist=*/false);
  const GradCache cache = build_grad_cache(bundle.theta, bundle.data, 1e9);
  const InfluenceScores scores = influence_all(s, cache);

  const LOOResult r = loo_retrain(
      bundle.data, bundle.theta.spec, tc, bundle.theta, cfg.remove_idx,
      test_data.features.row(cfg.test_idx).transpose(),
      test_data.labels[cfg.test_idx], scores.scores[cfg.remove_idx]);

  json j;
  j["kind"] = "loo";
  j["params_hash"] = to_hex(bundle.digest);
  j["config"] = resolved_config_json(cfg);
  j["test_idx"] = cfg.test_idx;
  j["lambda"] = bundle.lambda;
  j["basis"] = cfg.basis;
  j["solver"] = report_to_json(s.report);
  j["result"] = loo_to_json(r);
  const fs::path path =
      fs::path(cfg.out_dir) / (cfg.stem + ".loo.i" + std::to_string(cfg.remove_idx) +
                               ".t" + std::to_string(cfg.test_idx) + "." +
                               hash8(bundle.digest) + ".json");
  write_json_atomic(path, j);
  std::cout << path.string() << "\n";
  return 0;
}

int cmd_evaluate(const RunConfig& cfg) {
  const ModelBundle bundle = load_model_bundle(cfg);
  const GradCache cache = load_cache_for(cfg, bundle.digest);
  const Dataset test_data = load_role_dataset(cfg, /*test_role=*/true);
  const TrainConfig tc = make_train_config(cfg, bundle.data);
  const SolveOptions opts = make_solve_options(cfg);
  const SolveMethod method = parse_solver(cfg);

  const Index n_test = std::min<Index>(cfg.test_count, test_data.n());
  const int knn_k = cfg.knn_k > 0 ? cfg.knn_k : cfg.k;
  const std::vector<std::string> methods = {"if", "theta-relatif", "l-relatif"};

  // Score every test point once per method.
  std::map<std::string, std::vector<ExplanationSet>> sets;
  std::vector<InfluenceScores> raw_scores(static_cast<std::size_t>(n_test));
  int max_solver_iters = 0;
  double worst_residual = 0.0;
  bool all_converged = true;
  for (Index t = 0; t < n_test; ++t) {
    const STestVector s =
        s_test(bundle.theta, bundle.op, test_data.features.row(t).transpose(),
               test_data.labels[t], method, opts, static_cast<int>(t));
    max_solver_iters = std::max(max_solver_iters, s.report.iterations);
    worst_residual = std::max(worst_residual, s.report.residual_norm);
    all_converged = all_converged && s.report.converged;
    raw_scores[static_cast<std::size_t>(t)] = influence_all(s, cache);
  }
  for (const auto& m : methods) {
    sets[m].reserve(static_cast<std::size_t>(n_test));
    for (Index t = 0; t < n_test; ++t) {
      const ScoredMethod ranked = score_method(
          cfg, bundle, cache, raw_scores[static_cast<std::size_t>(t)], m);
      sets[m].push_back(top_k(ranked.values,
                              std::min<int>(cfg.k,
                                            static_cast<int>(cache.grads.rows())),
                              parse_sign(cfg), static_cast<int>(t)));
    }
  }

  json j;
  j["kind"] = "evaluate";
  j["params_hash"] = to_hex(bundle.digest);
  j["config"] = resolved_config_json(cfg);
  j["n_test_scored"] = static_cast<std::int64_t>(n_test);
  j["lambda"] = bundle.lambda;
  j["basis"] = cfg.basis;
  {
    json s;
    s["method"] = cfg.solver;
    s["max_iterations"] = max_solver_iters;
    s["worst_residual_norm"] = worst_residual;
    s["all_converged"] = all_converged;
    j["solver"] = s;
  }

  // Influence-set statistics (dispersion is a population std-dev).
  json set_stats = json::object();
  for (const auto& m : methods) {
    const SetStats stats = influence_set_stats(sets[m], bundle.theta, bundle.data);
    json s;
    s["cardinality"] = static_cast<std::int64_t>(stats.cardinality);
    s["mean_prob"] = stats.mean_prob;
    s["std_prob"] = stats.std_prob;
    s["dispersion"] = "std-dev";
    set_stats[m] = s;
  }
  j["set_stats"] = set_stats;

  // k-NN overlap against each method's explanations.
  json knn = json::object();
  for (const auto& m : methods) {
    double mean_overlap = 0.0;
    for (Index t = 0; t < n_test; ++t) {
      const auto r = knn_overlap(bundle.data, test_data.features.row(t).transpose(),
                                 knn_k, sets[m][static_cast<std::size_t>(t)]);
      mean_overlap += r.overlap / static_cast<double>(n_test);
    }
    json s;
    s["k"] = knn_k;
    s["mean_overlap"] = mean_overlap;
    knn[m] = s;
  }
  j["knn_overlap"] = knn;

  // Leave-one-out retraining on each method's top-1 selections.
  std::ofstream csv;
  if (!cfg.csv_out.empty()) {
    csv.open(cfg.csv_out, std::ios::trunc);
    if (!csv) throw DataError("cannot write csv: " + cfg.csv_out);
    csv.precision(17);
    csv << "kind,method,test_idx,train_idx,exact,approx,predicted_delta,actual_"
           "delta\n";
  }
  json loo_rows = json::array();
  const Index n_loo = std::min<Index>(cfg.loo_count, n_test);
  json loo_summary = json::object();
  for (const auto& m : methods) {
    double mean_dl = 0, mean_dp = 0, mean_rss = 0;
    std::vector<double> ratio_param, ratio_rss;
    for (Index t = 0; t < n_loo; ++t) {
      const auto& top = sets[m][static_cast<std::size_t>(t)];
      if (top.entries.empty()) continue;
      const Index removed = top.entries.front().index;
      const LOOResult r = loo_retrain(
          bundle.data, bundle.theta.spec, tc, bundle.theta, removed,
          test_data.features.row(t).transpose(), test_data.labels[t],
          raw_scores[static_cast<std::size_t>(t)].scores[removed]);
      json row = loo_to_json(r);
      row["method"] = m;
      row["test_idx"] = static_cast<std::int64_t>(t);
      loo_rows.push_back(row);
      mean_dl += r.delta_test_loss / static_cast<double>(n_loo);
      mean_dp += r.delta_param_norm / static_cast<double>(n_loo);
      mean_rss += r.rss_delta_loss / static_cast<double>(n_loo);
      if (std::isfinite(r.ratio_param)) ratio_param.push_back(r.ratio_param);
      if (std::isfinite(r.ratio_rss)) ratio_rss.push_back(r.ratio_rss);
      if (csv.is_open())
        csv << "loo," << m << "," << t << "," << removed << ",,,"
            << r.predicted_delta << "," << r.delta_test_loss << "\n";
    }
    auto mean_of = [](const std::vector<double>& v) {
      if (v.empty()) return 0.0;
      double s = 0;
      for (double x : v) s += x;
      return s / static_cast<double>(v.size());
    };
    auto stderr_of = [&](const std::vector<double>& v) {
      if (v.size() < 2) return 0.0;
      const double m2 = [&] {
        double s = 0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
      }();
      double ss = 0;
      for (double x : v) ss += (x - m2) * (x - m2);
      return std::sqrt(ss / static_cast<double>(v.size() - 1)) /
             std::sqrt(static_cast<double>(v.size()));
    };
    json s;
    s["mean_delta_test_loss"] = mean_dl;
    s["mean_delta_param_norm"] = mean_dp;
    s["mean_rss_delta_loss"] = mean_rss;
    s["mean_ratio_param"] = mean_of(ratio_param);
    s["mean_ratio_rss"] = mean_of(ratio_rss);
    s["stderr_ratio_param"] = stderr_of(ratio_param);
    s["stderr_ratio_rss"] = stderr_of(ratio_rss);
    s["dispersion"] = "std-err";
    s["n_removals"] = static_cast<std::int64_t>(n_loo);
    loo_summary[m] = s;
  }
  j["loo"] = loo_rows;
  j["loo_summary"] = loo_summary;

  // Projection approximation metrics, averaged over the scored test points.
  if (!cfg.projection_file.empty()) {
    const ProjectionMatrix proj = load_projection(cfg.projection_file);
    if (proj.p() != bundle.theta.values.size())
      throw StaleCacheError("projection missing or stale: width mismatch");
    auto hvp_fn = [&](const Vector& v) {
      return hvp(bundle.theta, bundle.data, v);
    };
    const ProjectedCurvature pc = projected_hessian(proj, hvp_fn, bundle.lambda);
    double mean_pearson = 0, mean_spearman = 0;
    std::map<int, double> mean_ndcg;
    const std::vector<int> ks = {
        std::min<int>(10, static_cast<int>(cache.grads.rows()))};
    for (Index t = 0; t < n_test; ++t) {
      const Vector g_test =
          grad(bundle.theta, test_data.features.row(t).transpose(),
               test_data.labels[t]);
      const InfluenceScores approx =
          projected_influence(proj, pc, g_test, cache, static_cast<int>(t));
      const MetricReport report = approximation_metrics(
          approx.scores, raw_scores[static_cast<std::size_t>(t)].scores, ks);
      mean_pearson += report.pearson / static_cast<double>(n_test);
      mean_spearman += report.spearman / static_cast<double>(n_test);
      for (const auto& [kk, v] : report.ndcg_at_k)
        mean_ndcg[kk] += v / static_cast<double>(n_test);
      if (csv.is_open())
        for (Index i = 0; i < cache.grads.rows(); ++i)
          csv << "projection,if," << t << "," << i << ","
              << raw_scores[static_cast<std::size_t>(t)].scores[i] << ","
              << approx.scores[i] << ",,\n";
    }
    // Self-influence comparison over the training set (exact vs projected).
    const auto denom_ell = load_or_build_denoms(cfg, bundle, cache, DenomVariant::Ell);
    Vector exact_self = denom_ell.values.array().square().matrix();
    Matrix damped = pc.h_omega;
    damped.diagonal().array() += pc.lambda;
    const Matrix w = cache.grads * proj.a.transpose();
    const Matrix solved = Eigen::LLT<Matrix>(damped).solve(w.transpose());
    Vector approx_self(cache.grads.rows());
    for (Index i = 0; i < cache.grads.rows(); ++i)
      approx_self[i] = w.row(i).dot(solved.col(i));
    const MetricReport self_report = approximation_metrics(
        approx_self, exact_self, {}, /*self_influence=*/true);

    json metrics;
    metrics["pearson"] = mean_pearson;
    metrics["spearman"] = mean_spearman;
    json ndcg = json::object();
    for (const auto& [kk, v] : mean_ndcg) ndcg[std::to_string(kk)] = v;
    metrics["ndcg_at_k"] = ndcg;
    metrics["self_mse"] = *self_report.self_mse;
    metrics["self_pearson"] = self_report.pearson;
    metrics["n_scored"] = static_cast<std::int64_t>(cache.grads.rows());
    metrics["averaged_over_test_points"] = static_cast<std::int64_t>(n_test);
    j["metrics"] = metrics;
  } else {
    j["metrics"] = nullptr;
  }

  const fs::path path = fs::path(cfg.out_dir) /
                        (cfg.stem + ".evaluate." + hash8(bundle.digest) + ".json");
  write_json_atomic(path, j);
  std::cout << path.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// Wiring
// ---------------------------------------------------------------------------

void attach_options(CLI::App* sub, RunConfig& cfg) {
  sub->add_option("--config", "config file (key=value lines)")
      ->check(CLI::ExistingFile);
  sub->add_option("--train-data", cfg.train_data);
  sub->add_option("--test-data", cfg.test_data);
  sub->add_option("--train-images", cfg.train_images);
  sub->add_option("--train-labels", cfg.train_labels);
  sub->add_option("--test-images", cfg.test_images);
  sub->add_option("--test-labels", cfg.test_labels);
  sub->add_option("--format", cfg.format);
  sub->add_option("--classes", cfg.classes);
  sub->add_option("--weights", cfg.weights_file);
  sub->add_option("--family", cfg.family);
  sub->add_option("--hidden", cfg.hidden);
  sub->add_option("--bias", cfg.bias);
  sub->add_option("--l2", cfg.l2);
  sub->add_option("--optimizer", cfg.optimizer);
  sub->add_option("--max-iters", cfg.max_iters);
  sub->add_option("--grad-tol", cfg.grad_tol);
  sub->add_option("--seed", cfg.seed);
  sub->add_option("--solver", cfg.solver);
  sub->add_option("--damping", cfg.damping);
  sub->add_option("--cg-tol", cfg.cg_tol);
  sub->add_option("--cg-max-iters", cfg.cg_max_iters);
  sub->add_option("--lissa-iters", cfg.lissa_iters);
  sub->add_option("--lissa-scale", cfg.lissa_scale);
  sub->add_option("--lissa-batch", cfg.lissa_batch);
  sub->add_option("--lissa-repeats", cfg.lissa_repeats);
  sub->add_option("--basis", cfg.basis);
  sub->add_option("--dense-cap", cfg.dense_cap);
  sub->add_option("--q", cfg.q);
  sub->add_option("--batch-size", cfg.batch_size);
  sub->add_flag("--projected", cfg.projected);
  sub->add_option("--projection", cfg.projection_file);
  sub->add_option("--test-idx", cfg.test_idx);
  sub->add_option("--method", cfg.method);
  sub->add_option("--k", cfg.k);
  sub->add_option("--sign", cfg.sign);
  sub->add_option("--test-count", cfg.test_count);
  sub->add_option("--loo-count", cfg.loo_count);
  sub->add_option("--knn-k", cfg.knn_k);
  sub->add_option("--remove-idx", cfg.remove_idx);
  sub->add_option("--csv", cfg.csv_out);
  sub->add_option("--out-dir", cfg.out_dir);
  sub->add_option("--stem", cfg.stem);
  sub->add_option("--params", cfg.params_file);
  sub->add_option("--gradcache", cfg.gradcache_file);
}

std::string find_config_arg(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--config" && i + 1 < argc) return argv[i + 1];
    if (arg.rfind("--config=", 0) == 0) return arg.substr(9);
  }
  return {};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"training-data influence for small differentiable classifiers"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::map<std::string, int (*)(const RunConfig&)> handlers = {
      {"train", cmd_train},       {"gradcache", cmd_gradcache},
      {"stest", cmd_stest},       {"influence", cmd_influence},
      {"relatif", cmd_influence}, {"project", cmd_project},
      {"evaluate", cmd_evaluate}, {"loo", cmd_loo},
  };
  std::map<std::string, std::string> descriptions = {
      {"train", "fit the model and write the params artifact"},
      {"gradcache", "build the per-example gradient cache"},
      {"stest", "precompute (C+lambda I)^{-1} g_test for one test point"},
      {"influence", "score training examples for one test point"},
      {"relatif", "influence with a relative-influence method default"},
      {"project", "fit the gradient-PCA projection"},
      {"evaluate", "metrics, leave-one-out oracle, set stats, k-NN overlap"},
      {"loo", "retrain without one example and report the deltas"},
  };
  std::vector<CLI::App*> subs;
  for (const auto& [name, fn] : handlers) {
    (void)fn;
    CLI::App* sub = app.add_subcommand(name, descriptions[name]);
    attach_options(sub, cfg);
    subs.push_back(sub);
  }

  try {
    const std::string config_path = find_config_arg(argc, argv);
    if (!config_path.empty()) load_config_file(cfg, config_path);
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }

  try {
    validate_config(cfg);
    for (CLI::App* sub : subs) {
      if (sub->parsed()) {
        RunConfig run_cfg = cfg;
        if (sub->get_name() == "relatif" && run_cfg.method == "if")
          run_cfg.method = "l-relatif";
        return handlers.at(sub->get_name())(run_cfg);
      }
    }
    std::cerr << "no subcommand\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const StaleCacheError& e) {
    std::cerr << e.what() << "\n";
    return 3;
  } catch (const SolverError& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
