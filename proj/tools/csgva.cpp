// Command-line front end: fit, estimate-bound and sample.

#include "csgva/app.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

namespace {

struct FitFlags {
  std::string config;
  std::optional<std::string> model, data, method, init, init_file, out;
  std::optional<std::string> response, covariates, random_cols, subject_specific_cols, column;
  std::optional<bool> mean_correct;
  std::optional<int> K, kappa, stop_window, iw_iters, posterior_count, bound_reps;
  std::optional<std::int64_t> max_iters;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
};

csgva::RunConfig resolve(const FitFlags& f) {
  using namespace csgva;
  RunConfig rc;
  if (!f.config.empty()) apply_config(Config::load(f.config), rc);
  if (f.model) rc.model.kind = *f.model;
  if (f.data) rc.model.data = *f.data;
  if (f.response) rc.model.glmm.response = *f.response;
  if (f.covariates) rc.model.glmm.covariates = split_list(*f.covariates);
  if (f.random_cols) rc.model.glmm.random = split_list(*f.random_cols);
  if (f.subject_specific_cols) rc.model.glmm.subject_specific = split_list(*f.subject_specific_cols);
  if (f.column) rc.model.svm_column = *f.column;
  if (f.mean_correct) rc.model.svm_rates = *f.mean_correct;
  if (f.method) rc.fit.method = parse_method(*f.method);
  if (f.K) rc.fit.K = *f.K;
  if (f.seed) rc.fit.seed = *f.seed;
  if (f.max_iters) rc.fit.max_iters = *f.max_iters;
  if (f.kappa) rc.fit.kappa = *f.kappa;
  if (f.stop_window) rc.fit.stop_window = *f.stop_window;
  if (f.iw_iters) rc.fit.iw_iters = *f.iw_iters;
  if (f.init) rc.init = parse_init(*f.init);
  if (f.init_file) rc.init_file = *f.init_file;
  if (f.out) rc.out = *f.out;
  if (f.threads) rc.threads = *f.threads;
  if (f.posterior_count) rc.posterior_count = *f.posterior_count;
  if (f.bound_reps) rc.bound_reps = *f.bound_reps;
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditionally structured Gaussian variational inference for GLMMs and stochastic volatility models"};
  app.require_subcommand(1);

  FitFlags ff;
  auto* fit = app.add_subcommand("fit", "fit a variational approximation and write all artifacts");
  fit->add_option("--config", ff.config, "key = value settings file")->check(CLI::ExistingFile);
  fit->add_option("--model", ff.model, "glmm-poisson | glmm-bernoulli | svm");
  fit->add_option("--data", ff.data, "input CSV");
  fit->add_option("--method", ff.method, "gva | csgva | iw");
  fit->add_option("--K", ff.K, "importance samples per iteration (iw)");
  fit->add_option("--seed", ff.seed, "random seed");
  fit->add_option("--init", ff.init, "zero | from_gva | from_file");
  fit->add_option("--init-file", ff.init_file, "fit.json or lambda JSON for init = from_file");
  fit->add_option("--out", ff.out, "output directory");
  fit->add_option("--threads", ff.threads, "worker threads for the K-sample evaluation");
  fit->add_option("--response", ff.response, "GLMM response column");
  fit->add_option("--covariates", ff.covariates, "GLMM covariate columns, comma separated");
  fit->add_option("--random-cols", ff.random_cols, "GLMM random-effect covariates");
  fit->add_option("--subject-specific-cols", ff.subject_specific_cols, "GLMM subject-level covariates");
  fit->add_option("--column", ff.column, "SVM series column");
  fit->add_option("--mean-correct", ff.mean_correct, "SVM column holds raw rates to mean-correct");
  fit->add_option("--max-iters", ff.max_iters, "iteration cap");
  fit->add_option("--stop-window", ff.stop_window, "iterations per averaging window");
  fit->add_option("--kappa", ff.kappa, "window averages in the slope test");
  fit->add_option("--iw-iters", ff.iw_iters, "iterations of the importance-weighted stage");
  fit->add_option("--posterior-count", ff.posterior_count, "posterior draws to summarize");
  fit->add_option("--bound-reps", ff.bound_reps, "replications for the bound estimate");

  std::string fit_path;
  int reps = 1000;
  std::optional<int> bound_K;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::string out;
  auto* bound = app.add_subcommand("estimate-bound", "re-estimate the lower bound of a saved fit");
  bound->add_option("--fit", fit_path, "fit.json")->required()->check(CLI::ExistingFile);
  bound->add_option("--reps", reps, "replications")->capture_default_str();
  bound->add_option("--K", bound_K, "importance samples (default: from the fit)");
  bound->add_option("--seed", seed, "random seed (default: from the fit)");
  bound->add_option("--threads", threads, "worker threads");
  bound->add_option("--out", out, "output directory (default: next to fit.json)");

  int count = 2000;
  bool keep = false;
  auto* sample = app.add_subcommand("sample", "summarize posterior draws from a saved fit");
  sample->add_option("--fit", fit_path, "fit.json")->required()->check(CLI::ExistingFile);
  sample->add_option("--count", count, "number of draws")->capture_default_str();
  sample->add_option("--seed", seed, "random seed (default: from the fit)");
  sample->add_option("--threads", threads, "worker threads");
  sample->add_option("--out", out, "output directory (default: next to fit.json)");
  sample->add_flag("--samples", keep, "also write every draw to samples.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : csgva::exit_config;
  }

  if (*fit) return csgva::guarded([&] { return csgva::run_fit(resolve(ff)); });
  if (*bound) {
    return csgva::guarded([&] { return csgva::run_estimate_bound(fit_path, reps, bound_K, seed, threads, out); });
  }
  return csgva::guarded([&] { return csgva::run_sample(fit_path, count, seed, threads, out, keep); });
}
