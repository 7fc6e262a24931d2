#pragma once

// The fit / estimate-bound / sample pipeline behind the command-line tool.
// Every artifact is a pure function of (config, seed, data): thread counts,
// wall time and output locations never enter the files.

#include "csgva/io.hpp"
#include "csgva/optimizer.hpp"
#include "csgva/posterior.hpp"
#include "csgva/serialize.hpp"

#include <chrono>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace csgva {

enum ExitCode : int { exit_ok = 0, exit_failure = 1, exit_config = 2, exit_data = 3, exit_diverged = 4 };

enum class Init { zero, from_gva, from_file };

inline Init parse_init(const std::string& s) {
  if (s == "zero") return Init::zero;
  if (s == "from_gva") return Init::from_gva;
  if (s == "from_file") return Init::from_file;
  throw ConfigError("unknown init '" + s + "' (expected zero, from_gva or from_file)");
}

inline const char* to_string(Init i) {
  switch (i) {
    case Init::zero: return "zero";
    case Init::from_gva: return "from_gva";
    case Init::from_file: return "from_file";
  }
  return "?";
}

/// What is needed to rebuild the model from data.
struct ModelSpec {
  std::string kind;  // glmm-poisson | glmm-bernoulli | svm
  std::filesystem::path data;
  GlmmColumns glmm;
  std::string svm_column;
  bool svm_rates = false;
  double sigma_beta2 = 100.0;
  double sigma_omega2 = 100.0;
  double sigma_alpha2 = 10.0;
  double sigma_kappa2 = 10.0;
  double sigma_psi2 = 10.0;

  bool is_glmm() const { return kind == "glmm-poisson" || kind == "glmm-bernoulli"; }

  void validate() const {
    if (kind != "glmm-poisson" && kind != "glmm-bernoulli" && kind != "svm") {
      throw ConfigError("unknown model '" + kind + "' (expected glmm-poisson, glmm-bernoulli or svm)");
    }
    if (data.empty()) throw ConfigError("no data file given");
    for (double v : {sigma_beta2, sigma_omega2, sigma_alpha2, sigma_kappa2, sigma_psi2}) {
      if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("prior variances must be positive");
    }
  }
};

struct RunConfig {
  ModelSpec model;
  FitConfig fit;
  Init init = Init::zero;
  std::filesystem::path init_file;
  std::filesystem::path out = "csgva_out";
  int posterior_count = 2000;
  int bound_reps = 1000;
  std::optional<unsigned> threads;

  void validate() const {
    model.validate();
    fit.validate();
    if (init == Init::from_file && init_file.empty()) throw ConfigError("init = from_file needs init_file");
    if (posterior_count < 2) throw ConfigError("posterior_count must be at least 2");
    if (bound_reps < 1) throw ConfigError("bound_reps must be positive");
  }

  /// Machine cores capped at K unless set explicitly.
  unsigned worker_threads() const {
    if (threads) return std::max(1u, *threads);
    const unsigned k = static_cast<unsigned>(fit.method == Method::iw ? fit.K : 1);
    return std::min(default_threads(), k);
  }
};

/// Applies config-file settings; unknown keys are errors.
inline void apply_config(const Config& cfg, RunConfig& rc) {
  using Setter = std::function<void(const std::string&)>;
  auto& m = rc.model;
  auto& f = rc.fit;
  const std::map<std::string, Setter> setters{
      {"model", [&](const std::string& k) { m.kind = cfg.get(k); }},
      {"data", [&](const std::string& k) { m.data = cfg.get(k); }},
      {"subject", [&](const std::string& k) { m.glmm.subject = cfg.get(k); }},
      {"response", [&](const std::string& k) { m.glmm.response = cfg.get(k); }},
      {"covariates", [&](const std::string& k) { m.glmm.covariates = split_list(cfg.get(k)); }},
      {"random_cols", [&](const std::string& k) { m.glmm.random = split_list(cfg.get(k)); }},
      {"subject_specific_cols",
       [&](const std::string& k) { m.glmm.subject_specific = split_list(cfg.get(k)); }},
      {"column", [&](const std::string& k) { m.svm_column = cfg.get(k); }},
      {"mean_correct", [&](const std::string& k) { m.svm_rates = cfg.boolean(k); }},
      {"sigma_beta2", [&](const std::string& k) { m.sigma_beta2 = cfg.number<double>(k); }},
      {"sigma_omega2", [&](const std::string& k) { m.sigma_omega2 = cfg.number<double>(k); }},
      {"sigma_alpha2", [&](const std::string& k) { m.sigma_alpha2 = cfg.number<double>(k); }},
      {"sigma_kappa2", [&](const std::string& k) { m.sigma_kappa2 = cfg.number<double>(k); }},
      {"sigma_psi2", [&](const std::string& k) { m.sigma_psi2 = cfg.number<double>(k); }},
      {"method", [&](const std::string& k) { f.method = parse_method(cfg.get(k)); }},
      {"K", [&](const std::string& k) { f.K = cfg.number<int>(k); }},
      {"seed", [&](const std::string& k) { f.seed = cfg.number<std::uint64_t>(k); }},
      {"max_iters", [&](const std::string& k) { f.max_iters = cfg.number<std::int64_t>(k); }},
      {"stop_window", [&](const std::string& k) { f.stop_window = cfg.number<int>(k); }},
      {"kappa", [&](const std::string& k) { f.kappa = cfg.number<int>(k); }},
      {"iw_iters", [&](const std::string& k) { f.iw_iters = cfg.number<int>(k); }},
      {"max_rejections", [&](const std::string& k) { f.max_rejections = cfg.number<int>(k); }},
      {"adam_step", [&](const std::string& k) { f.adam.step = cfg.number<double>(k); }},
      {"adam_tau1", [&](const std::string& k) { f.adam.tau1 = cfg.number<double>(k); }},
      {"adam_tau2", [&](const std::string& k) { f.adam.tau2 = cfg.number<double>(k); }},
      {"adam_eps", [&](const std::string& k) { f.adam.eps = cfg.number<double>(k); }},
      {"init", [&](const std::string& k) { rc.init = parse_init(cfg.get(k)); }},
      {"init_file", [&](const std::string& k) { rc.init_file = cfg.get(k); }},
      {"out", [&](const std::string& k) { rc.out = cfg.get(k); }},
      {"threads", [&](const std::string& k) { rc.threads = cfg.number<unsigned>(k); }},
      {"posterior_count", [&](const std::string& k) { rc.posterior_count = cfg.number<int>(k); }},
      {"bound_reps", [&](const std::string& k) { rc.bound_reps = cfg.number<int>(k); }},
  };
  for (const auto& key : cfg.keys()) {
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError(cfg.where(key) + ": unknown setting '" + key + "'");
    it->second(key);
  }
}

using AnyModel = std::variant<Glmm, Svm>;

inline AnyModel build_model(const ModelSpec& spec) {
  spec.validate();
  if (spec.is_glmm()) {
    const auto family = spec.kind == "glmm-poisson" ? GlmmFamily::poisson_log : GlmmFamily::bernoulli_logit;
    GlmmData data = load_glmm(spec.data, spec.glmm, family);
    data.sigma_beta2 = spec.sigma_beta2;
    data.sigma_omega2 = spec.sigma_omega2;
    return Glmm(std::move(data));
  }
  SvmData data = load_svm(spec.data, spec.svm_column, spec.svm_rates);
  data.sigma_alpha2 = spec.sigma_alpha2;
  data.sigma_kappa2 = spec.sigma_kappa2;
  data.sigma_psi2 = spec.sigma_psi2;
  return Svm(std::move(data));
}

inline nlohmann::json to_json(const ModelSpec& s) {
  nlohmann::json j;
  j["kind"] = s.kind;
  j["data"] = std::filesystem::absolute(s.data).lexically_normal().string();
  if (s.is_glmm()) {
    j["subject"] = s.glmm.subject;
    j["response"] = s.glmm.response;
    j["covariates"] = s.glmm.covariates;
    j["random_cols"] = s.glmm.random;
    j["subject_specific_cols"] = s.glmm.subject_specific;
    j["sigma_beta2"] = s.sigma_beta2;
    j["sigma_omega2"] = s.sigma_omega2;
  } else {
    j["column"] = s.svm_column;
    j["mean_correct"] = s.svm_rates;
    j["sigma_alpha2"] = s.sigma_alpha2;
    j["sigma_kappa2"] = s.sigma_kappa2;
    j["sigma_psi2"] = s.sigma_psi2;
  }
  return j;
}

inline ModelSpec model_spec_from_json(const nlohmann::json& j) {
  try {
    ModelSpec s;
    s.kind = j.at("kind").get<std::string>();
    s.data = j.at("data").get<std::string>();
    if (s.is_glmm()) {
      s.glmm.subject = j.at("subject").get<std::string>();
      s.glmm.response = j.at("response").get<std::string>();
      s.glmm.covariates = j.at("covariates").get<std::vector<std::string>>();
      s.glmm.random = j.at("random_cols").get<std::vector<std::string>>();
      s.glmm.subject_specific = j.at("subject_specific_cols").get<std::vector<std::string>>();
      s.sigma_beta2 = j.at("sigma_beta2").get<double>();
      s.sigma_omega2 = j.at("sigma_omega2").get<double>();
    } else {
      s.svm_column = j.at("column").get<std::string>();
      s.svm_rates = j.at("mean_correct").get<bool>();
      s.sigma_alpha2 = j.at("sigma_alpha2").get<double>();
      s.sigma_kappa2 = j.at("sigma_kappa2").get<double>();
      s.sigma_psi2 = j.at("sigma_psi2").get<double>();
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("fit file: bad model description: ") + e.what());
  }
}

inline std::vector<std::string> global_labels(const AnyModel& m) {
  return std::visit([](const auto& x) { return x.global_labels(); }, m);
}
inline std::vector<std::string> local_labels(const AnyModel& m) {
  return std::visit([](const auto& x) { return x.local_labels(); }, m);
}
inline ModelDims model_dims(const AnyModel& m) {
  return std::visit([](const auto& x) { return x.dims(); }, m);
}

struct StageResult {
  std::string name;
  FitReport report;
};

struct RunResult {
  std::vector<StageResult> stages;
  VariationalParams lambda;
  bool diverged = false;
  std::string message;
};

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

/// Accepts either a fit.json (lambda under "lambda") or a bare lambda object.
inline VariationalParams load_lambda(const std::filesystem::path& path) {
  const auto j = read_json_file(path);
  try {
    return lambda_from_json(j.contains("lambda") ? j.at("lambda") : j);
  } catch (const InvalidArgument& e) {
    throw ConfigError("'" + path.string() + "': " + e.what());
  }
}

/// The stage sequence for (method, init): GVA and CSGVA stages precede an
/// importance-weighted run unless lambda comes from a file.
inline std::vector<Method> stage_plan(Method method, Init init) {
  std::vector<Method> plan;
  if (init == Init::from_gva || method == Method::gva) plan.push_back(Method::gva);
  if (method == Method::gva) return plan;
  if (method == Method::csgva || init != Init::from_file) plan.push_back(Method::csgva);
  if (method == Method::iw) plan.push_back(Method::iw);
  return plan;
}

template <Model M>
RunResult run_stages(const M& model, const RunConfig& rc, unsigned threads) {
  RunResult result;
  VariationalParams lambda;
  if (rc.init == Init::from_file) {
    lambda = load_lambda(rc.init_file);
    if (!(lambda.dims() == model.dims())) {
      throw ConfigError("init_file lambda does not match the model dimensions");
    }
    lambda.gaussian_mode = rc.fit.method == Method::gva;
  } else {
    lambda = VariationalParams::zeros(model.dims());
  }
  for (Method stage : stage_plan(rc.fit.method, rc.init)) {
    FitConfig cfg = rc.fit;
    cfg.method = stage;
    cfg.K = stage == Method::iw ? rc.fit.K : 1;
    cfg.threads = threads;
    lambda.gaussian_mode = stage == Method::gva;
    try {
      result.stages.push_back({to_string(stage), fit(model, lambda, cfg)});
    } catch (const FitDiverged& e) {
      result.stages.push_back({to_string(stage), e.report()});
      result.diverged = true;
      result.message = std::string(to_string(stage)) + " stage: " + e.what();
      result.lambda = e.report().lambda;
      return result;
    }
    lambda = result.stages.back().report.lambda;
  }
  result.lambda = lambda;
  return result;
}

inline nlohmann::json fit_json(const RunConfig& rc, const AnyModel& model, const RunResult& r) {
  nlohmann::json j;
  j["model"] = to_json(rc.model);
  nlohmann::json settings;
  settings["method"] = to_string(rc.fit.method);
  settings["K"] = rc.fit.K;
  settings["seed"] = rc.fit.seed;
  settings["init"] = to_string(rc.init);
  settings["max_iters"] = rc.fit.max_iters;
  settings["stop_window"] = rc.fit.stop_window;
  settings["kappa"] = rc.fit.kappa;
  settings["iw_iters"] = rc.fit.iw_iters;
  settings["max_rejections"] = rc.fit.max_rejections;
  settings["adam"] = {{"step", rc.fit.adam.step},
                      {"tau1", rc.fit.adam.tau1},
                      {"tau2", rc.fit.adam.tau2},
                      {"eps", rc.fit.adam.eps}};
  j["settings"] = settings;
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : r.stages) {
    stages.push_back({{"name", s.name},
                      {"iterations", s.report.iterations},
                      {"rejected", s.report.rejected},
                      {"stop", to_string(s.report.stop)},
                      {"window_averages", s.report.window_averages}});
  }
  j["stages"] = stages;
  j["status"] = r.diverged ? "diverged" : "ok";
  j["global_labels"] = global_labels(model);
  j["lambda"] = to_json(r.lambda);
  return j;
}

inline std::string trace_csv(const RunResult& r) {
  std::string out = "stage,iteration,bound\n";
  for (const auto& s : r.stages) {
    for (std::size_t t = 0; t < s.report.trace.size(); ++t) {
      out += s.name + "," + std::to_string(t + 1) + "," + format_double(s.report.trace[t]) + "\n";
    }
  }
  return out;
}

inline std::string windows_csv(const RunResult& r) {
  std::string out = "stage,window,average\n";
  for (const auto& s : r.stages) {
    for (std::size_t w = 0; w < s.report.window_averages.size(); ++w) {
      out += s.name + "," + std::to_string(w + 1) + "," + format_double(s.report.window_averages[w]) + "\n";
    }
  }
  return out;
}

inline nlohmann::json bound_json(const BoundEstimate& b, const std::string& method) {
  return {{"mean", b.mean}, {"sd", b.sd}, {"K", b.K}, {"reps", b.reps}, {"method", method}};
}

inline void write_posterior(const std::filesystem::path& dir, const AnyModel& model,
                            const VariationalParams& lambda, int count, std::uint64_t seed,
                            unsigned threads, bool keep_samples = false) {
  const auto post = sample_posterior(lambda, count, seed, keep_samples, threads);
  write_text(dir / "posterior_global.csv", summary_csv(global_labels(model), post.global_mean, post.global_sd));
  write_text(dir / "posterior_latent.csv", summary_csv(local_labels(model), post.local_mean, post.local_sd));
  if (keep_samples) {
    auto labels = global_labels(model);
    const auto local = local_labels(model);
    labels.insert(labels.end(), local.begin(), local.end());
    std::string text;
    for (std::size_t k = 0; k < labels.size(); ++k) text += (k ? "," : "") + labels[k];
    text += "\n";
    const Matrix& s = *post.samples;
    for (Index r = 0; r < s.rows(); ++r) {
      for (Index c = 0; c < s.cols(); ++c) text += (c ? "," : "") + format_double(s(r, c));
      text += "\n";
    }
    write_text(dir / "samples.csv", text);
  }
}

inline void prepare_output_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw ConfigError("cannot create output directory '" + dir.string() + "'");
  }
}

/// Fits, then writes fit.json, trace.csv, windows.csv, posterior_global.csv,
/// posterior_latent.csv and bound_estimate.json into rc.out.
inline int run_fit(const RunConfig& rc, std::ostream& log = std::cout) {
  rc.validate();
  const AnyModel model = build_model(rc.model);
  prepare_output_dir(rc.out);
  const unsigned threads = rc.worker_threads();
  const auto start = std::chrono::steady_clock::now();
  const RunResult result = std::visit([&](const auto& m) { return run_stages(m, rc, threads); }, model);
  write_text(rc.out / "fit.json", fit_json(rc, model, result).dump(2) + "\n");
  write_text(rc.out / "trace.csv", trace_csv(result));
  write_text(rc.out / "windows.csv", windows_csv(result));
  for (const auto& s : result.stages) {
    log << s.name << ": " << s.report.iterations << " iterations, " << s.report.rejected
        << " rejected, stop=" << to_string(s.report.stop) << ", " << s.report.wall_seconds << " s\n";
  }
  if (result.diverged) {
    log << "error: " << result.message << "\n";
    return exit_diverged;
  }
  write_posterior(rc.out, model, result.lambda, rc.posterior_count, rc.fit.seed, threads);
  const int K = rc.fit.method == Method::iw ? rc.fit.K : 1;
  const auto bound = std::visit(
      [&](const auto& m) { return estimate_bound(result.lambda, m, K, rc.bound_reps, rc.fit.seed, threads); },
      model);
  write_text(rc.out / "bound_estimate.json",
             bound_json(bound, to_string(rc.fit.method)).dump(2) + "\n");
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  log << "bound estimate (K=" << K << ", reps=" << rc.bound_reps << "): " << format_double(bound.mean)
      << " (sd " << format_double(bound.sd) << ")\n";
  log << "total wall time " << seconds << " s\n";
  return exit_ok;
}

struct FitFile {
  ModelSpec model;
  Method method = Method::csgva;
  int K = 1;
  std::uint64_t seed = 1;
  VariationalParams lambda;
};

inline FitFile load_fit_file(const std::filesystem::path& path) {
  const auto j = read_json_file(path);
  FitFile f;
  try {
    f.model = model_spec_from_json(j.at("model"));
    f.method = parse_method(j.at("settings").at("method").get<std::string>());
    f.K = j.at("settings").at("K").get<int>();
    f.seed = j.at("settings").at("seed").get<std::uint64_t>();
    f.lambda = lambda_from_json(j.at("lambda"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("'" + path.string() + "' is not a fit file: " + e.what());
  } catch (const InvalidArgument& e) {
    throw ConfigError("'" + path.string() + "': " + e.what());
  }
  return f;
}

inline AnyModel model_for(const FitFile& f) {
  AnyModel model = build_model(f.model);
  if (!(model_dims(model) == f.lambda.dims())) {
    throw InvalidData("data no longer matches the dimensions stored in the fit file");
  }
  return model;
}

inline int run_estimate_bound(const std::filesystem::path& fit_path, int reps, std::optional<int> K,
                              std::optional<std::uint64_t> seed, std::optional<unsigned> threads,
                              std::filesystem::path out, std::ostream& log = std::cout) {
  if (reps < 1) throw ConfigError("reps must be positive");
  const FitFile f = load_fit_file(fit_path);
  const int k = K.value_or(f.method == Method::iw ? f.K : 1);
  if (k < 1) throw ConfigError("K must be positive");
  const AnyModel model = model_for(f);
  if (out.empty()) out = fit_path.parent_path().empty() ? "." : fit_path.parent_path();
  prepare_output_dir(out);
  const unsigned t = threads.value_or(std::min(default_threads(), static_cast<unsigned>(k)));
  const auto bound = std::visit(
      [&](const auto& m) { return estimate_bound(f.lambda, m, k, reps, seed.value_or(f.seed), t); }, model);
  const auto j = bound_json(bound, to_string(f.method));
  write_text(out / "bound_estimate.json", j.dump(2) + "\n");
  log << j.dump(2) << "\n";
  return exit_ok;
}

inline int run_sample(const std::filesystem::path& fit_path, int count, std::optional<std::uint64_t> seed,
                      std::optional<unsigned> threads, std::filesystem::path out, bool keep_samples,
                      std::ostream& log = std::cout) {
  if (count < 2) throw ConfigError("count must be at least 2");
  const FitFile f = load_fit_file(fit_path);
  const AnyModel model = model_for(f);
  if (out.empty()) out = fit_path.parent_path().empty() ? "." : fit_path.parent_path();
  prepare_output_dir(out);
  write_posterior(out, model, f.lambda, count, seed.value_or(f.seed), threads.value_or(default_threads()),
                  keep_samples);
  log << "wrote " << count << " posterior draws summary to " << out.string() << "\n";
  return exit_ok;
}

/// Runs fn and maps the library's error types onto exit codes.
inline int guarded(const std::function<int()>& fn, std::ostream& err = std::cerr) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return exit_config;
  } catch (const InvalidData& e) {
    err << "data error: " << e.what() << "\n";
    return exit_data;
  } catch (const FitDiverged& e) {
    err << "fit diverged: " << e.what() << "\n";
    return exit_diverged;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_failure;
  }
}

}  // namespace csgva
