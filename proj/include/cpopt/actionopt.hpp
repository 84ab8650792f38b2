#pragma once

// Action search on a differentiable reward surrogate: projected gradient
// ascent in normalized action coordinates, with random or policy-sampled
// restarts. Discrete dims are relaxed to their level range during the ascent
// and snapped back to levels at the end.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpopt/core.hpp"
#include "cpopt/policy.hpp"
#include "cpopt/rewardmodel.hpp"

namespace cpopt {

enum class InitSource { kUniform, kPolicy };

std::string to_string(InitSource s);
InitSource init_source_from_string(const std::string& s);

struct GAConfig {
  double step_size = 0.05;  // alpha, in unit-box coordinates
  std::size_t max_iters = 200;
  double improvement_tol = 1e-6;
  std::size_t restarts = 10;
  double beta = 0.0;
  std::uint64_t seed = 0;
  InitSource init_source = InitSource::kUniform;
  std::size_t max_halvings = 20;
  // After snapping, coordinate ascent over the levels of each discrete dim.
  bool refine_discrete = true;
};

struct ObjectiveValue {
  double value = 0.0;
  std::vector<double> grad;  // with respect to the action
};

using Objective = std::function<ObjectiveValue(std::span<const double> action)>;

struct AscentResult {
  std::vector<double> action;
  double value = 0.0;
  std::size_t iterations = 0;
  std::vector<double> accepted_values;  // objective at a0 then after every accepted step
};

// a_{k+1} = P_box(a_k + step * grad) with the step starting at alpha (in
// unit-box units) and halved until the objective improves. Stops when the
// improvement drops below tol, the step underflows, or max_iters is hit.
AscentResult gradient_ascent(const Objective& objective, const ActionSpace& space,
                             std::span<const double> a0, const GAConfig& cfg);

// Continuous dims clamped to the box; discrete dims to the nearest level,
// ties toward the lower level.
std::vector<double> snap_discrete(const ActionSpace& space, std::span<const double> action);

struct RestartRecord {
  std::vector<double> initial;
  std::vector<double> relaxed;  // GA end point before snapping
  std::vector<double> action;   // snapped (and refined) candidate
  double initial_value = 0.0;
  double relaxed_value = 0.0;
  double value = 0.0;           // penalized objective at `action`
  std::size_t iterations = 0;
  double seconds = 0.0;
  bool from_policy = false;
  std::vector<double> accepted_values;
};

struct OptimizeDiagnostics {
  std::vector<RestartRecord> restarts;
  std::size_t best_index = 0;
  std::size_t total_iterations = 0;
  double seconds = 0.0;
};

struct OptimizeResult {
  std::vector<double> action;
  double predicted_value = 0.0;
  OptimizeDiagnostics diagnostics;
};

// Best of `cfg.restarts` GA runs on mu - beta * sigma. Restart r starts from
// derive_seed(cfg.seed, r), so a run with fewer restarts is a prefix of one
// with more.
OptimizeResult optimize_action(const RewardEnsemble& ensemble, std::span<const double> context,
                               const GAConfig& cfg, const StochasticPolicy* policy = nullptr);

// Winner among the first k restarts (ties to the lowest index).
std::size_t best_restart_among_first(const OptimizeDiagnostics& diagnostics, std::size_t k);

nlohmann::json diagnostics_to_json(const OptimizeDiagnostics& diagnostics, bool include_timing = true);

}  // namespace cpopt
