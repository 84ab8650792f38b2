#pragma once

// Off-policy estimators, oracle scoring against the synthetic environment
// and the end-to-end benchmark that writes the report CSVs.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpopt/actionopt.hpp"
#include "cpopt/core.hpp"
#include "cpopt/policy.hpp"
#include "cpopt/rewardmodel.hpp"
#include "cpopt/synthenv.hpp"

namespace cpopt {

struct DmEstimate {
  double mean = 0.0;
  std::vector<double> per_context;
};

// Mean over contexts of mu_hat(s, chooser(s)). An invalid chosen action
// raises ValidationError naming the context index.
DmEstimate dm_estimate(const RewardEnsemble& ensemble, const std::vector<Context>& contexts,
                       const ActionChooser& chooser);

struct IpsEstimate {
  double estimate = 0.0;
  double std_error = 0.0;  // sample std of the summands / sqrt(N)
  double max_weight = 0.0;
  std::size_t clipped = 0;
};

using DensityFn = std::function<double(std::span<const double> context, std::span<const double> action)>;

// (1/N) sum pi(a_i|s_i) / pi0_i * r_i. Sentinel or non-positive propensities throw.
IpsEstimate ips_estimate(const DensityFn& target, const Dataset& dataset);
IpsEstimate ips_estimate(const StochasticPolicy& policy, const Dataset& dataset);

// Same with weights min(ratio, M); M may be +infinity.
IpsEstimate clipped_ips_estimate(const DensityFn& target, const Dataset& dataset, double max_weight);
IpsEstimate clipped_ips_estimate(const StochasticPolicy& policy, const Dataset& dataset,
                                 double max_weight);

enum class Profile { kFast, kFull };
std::string to_string(Profile p);
Profile profile_from_string(const std::string& s);

struct EvalSettings {
  std::size_t train_samples = 5000;
  std::size_t heldout = 1000;
  std::vector<std::size_t> restart_grid = {1, 5, 10};
  std::vector<double> beta_grid = {0.0, 0.5, 1.0, 2.0};
  std::size_t beta_restarts = 3;
  std::size_t hybrid_starts = 1;
  std::vector<double> clip_grid = {1.0, 10.0, 100.0};
  // Worker threads for per-context optimization; 0 = hardware concurrency.
  std::size_t threads = 1;
};

struct PolicySettings {
  std::vector<std::size_t> hidden = {64, 64};
  OPPGConfig oppg;
};

struct RunConfig {
  std::uint64_t seed = 1;
  EnvParams env;
  ActionSpace space = ActionSpace::default_benchmark();
  EnsembleConfig reward_model;
  bool augment = true;
  AugmentConfig augmentation;
  GAConfig ga;
  PolicySettings policy;
  EvalSettings eval;
};

RunConfig default_run_config(Profile profile = Profile::kFast);

// INI-style file: sections [env] [space] [reward_model] [augment] [ga]
// [policy] [eval] plus top-level `seed`. Keys absent from the file keep the
// profile default; unknown keys are errors.
RunConfig load_run_config(const std::filesystem::path& path, Profile profile = Profile::kFast);
RunConfig parse_run_config(const std::string& text, Profile profile = Profile::kFast);
std::string run_config_to_ini(const RunConfig& cfg);

struct MethodReport {
  std::string method;
  std::size_t starts = 0;              // GA starts per context, 0 for non-GA methods
  double predicted_mean = 0.0;         // mean over contexts of the method's objective
  double predicted_std = 0.0;          // spread of per-context predictions
  double mean_mu = 0.0;
  double mean_sigma = 0.0;
  double true_mean = 0.0;
  double true_se = 0.0;
  std::size_t total_iterations = 0;
  double median_seconds = 0.0;         // per-context decision time
  std::vector<double> per_context_true;
  std::vector<double> per_context_predicted;
};

struct BetaRow {
  double beta = 0.0;
  MethodReport report;
};

struct ClipRow {
  double clip = 0.0;
  double true_mean = 0.0;
  double true_se = 0.0;
  double ips = 0.0;
  double ips_se = 0.0;
  double clipped_fraction = 0.0;
  double max_weight = 0.0;
};

struct BenchmarkResult {
  MethodReport logging;         // actions sampled from pi0
  MethodReport logged_actions;  // heldout logged actions as recorded
  std::vector<MethodReport> restart_sweep;
  std::vector<BetaRow> beta_sweep;
  MethodReport oppg;
  MethodReport hybrid;
  std::vector<ClipRow> clip_sweep;
  double ensemble_rmse = 0.0;
  std::vector<double> member_rmse;
  double hybrid_p10_gain = 0.0;  // 10th percentile of per-context (hybrid - DM) true values
  nlohmann::json timing;

  const MethodReport& dm(std::size_t restarts) const;
  nlohmann::json summary(const RunConfig& cfg) const;
};

// Pipeline stages, shared by run_benchmark and the CLI subcommands.
struct RunData {
  SyntheticEnvSpec env;
  Dataset all;
  Dataset train;
  Dataset heldout;
};
RunData generate_run_data(const RunConfig& cfg);
RewardEnsemble fit_reward_model(const RunConfig& cfg, const Dataset& train);
StochasticPolicy fit_policy(const RunConfig& cfg, const Dataset& train, double clip,
                            OPPGTrace* trace = nullptr);

// Scores every method on the heldout contexts. `policy` trained with the
// configured clip; the clip sweep retrains for the other grid values.
BenchmarkResult evaluate_methods(const RunConfig& cfg, const RunData& data,
                                 const RewardEnsemble& ensemble, const StochasticPolicy& policy);

// Runs the full pipeline. When `out_dir` is given, writes dataset.csv,
// restart_sweep.csv, beta_sweep.csv, hybrid_comparison.csv,
// per_context_values.csv, clip_sweep.csv, summary.json (all deterministic)
// and timing.json (wall clock).
BenchmarkResult run_benchmark(const RunConfig& cfg,
                              const std::optional<std::filesystem::path>& out_dir = std::nullopt);

void write_benchmark_outputs(const BenchmarkResult& result, const RunConfig& cfg, const Dataset& data,
                             const std::filesystem::path& out_dir);

}  // namespace cpopt
