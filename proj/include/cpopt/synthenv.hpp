#pragma once

// Synthetic ground-truth environment: a known smooth reward surface over
// [context; action], a uniform context distribution and a full-support
// logging policy with closed-form propensities. It plays the role of the
// real network when scoring learned policies.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <variant>
#include <vector>

#include "cpopt/core.hpp"
#include "cpopt/rng.hpp"

namespace cpopt {

// Generator knobs; everything else in SyntheticEnvSpec is drawn from `seed`.
struct EnvParams {
  std::size_t context_dim = 20;
  std::size_t bumps = 8;
  double length_scale = 0.8;
  double noise_std = 0.1;
  double logging_mix = 0.1;
  std::uint64_t seed = 7;
  double weight_min = 1.0;
  double weight_max = 3.0;
  // Linear coefficients are drawn uniformly in [-linear_scale, linear_scale].
  double linear_scale = 0.05;
  // Logging truncated-Gaussian width as a fraction of each dim's range.
  double logging_width = 0.15;
  // Maximum context-driven shift of the logging center, as a range fraction.
  double logging_shift = 0.15;
};

struct LoggingContinuousHead {
  double base = 0.0;                // center at s = 0
  std::vector<double> slope;        // center(s) = base + slope . s
  double width = 1.0;               // Gaussian sigma before truncation
};

struct LoggingDiscreteHead {
  std::vector<double> weights;      // level preferences, sum to 1
};

using LoggingHead = std::variant<LoggingContinuousHead, LoggingDiscreteHead>;

// Per-dim density: (1 - mix) * informative + mix * uniform; joint = product.
struct LoggingPolicySpec {
  std::vector<LoggingHead> heads;
  double mix = 0.1;
};

struct SyntheticEnvSpec {
  std::size_t context_dim = 0;
  ActionSpace space;
  double length_scale = 0.8;
  std::vector<double> bump_weights;
  std::vector<std::vector<double>> bump_centers;  // each of size context_dim + |space|
  std::vector<double> linear_term;                // empty or size context_dim + |space|
  double noise_std = 0.0;
  LoggingPolicySpec logging;
  std::uint64_t seed = 0;
};

SyntheticEnvSpec make_synthetic_env(const EnvParams& params, const ActionSpace& space);

// Throws ValidationError if the spec breaks an invariant.
void validate_env(const SyntheticEnvSpec& env);

// Noiseless R*(s, a) = sum_g w_g exp(-|x - c_g|^2 / (2 l^2)) + linear . x, x = [s; a].
double true_reward(const SyntheticEnvSpec& env, std::span<const double> context,
                   std::span<const double> action);

// Same surface, defined on the relaxed box (discrete dims not snapped).
double true_reward_relaxed(const SyntheticEnvSpec& env, std::span<const double> context,
                           std::span<const double> action);

// Gradient of R* with respect to x = [s; a].
std::vector<double> true_reward_gradient(const SyntheticEnvSpec& env,
                                         std::span<const double> context,
                                         std::span<const double> action);

// Sup of |R*| over the context box and relaxed action box.
double true_reward_bound(const SyntheticEnvSpec& env);

// Logging density of one dimension (continuous) or probability (discrete).
double logging_dim_density(const SyntheticEnvSpec& env, std::size_t dim,
                           std::span<const double> context, double value);
// Joint logging density pi0(a | s).
double logging_density(const SyntheticEnvSpec& env, std::span<const double> context,
                       std::span<const double> action);
// Product over dims of mix * uniform density: the lower bound on pi0.
double logging_density_floor(const SyntheticEnvSpec& env);

Context sample_context(const SyntheticEnvSpec& env, Rng& rng);
std::vector<double> sample_logging_action(const SyntheticEnvSpec& env,
                                          std::span<const double> context, Rng& rng);

LoggedInteraction sample_interaction(const SyntheticEnvSpec& env, std::span<const double> context,
                                     std::uint64_t seed);

// Record i is generated from its own stream derive_seed(seed, i).
Dataset generate_dataset(const SyntheticEnvSpec& env, std::size_t n, std::uint64_t seed);

// Maps a context (and its index within the evaluation) to an action.
using ActionChooser =
    std::function<std::vector<double>(std::span<const double> context, std::size_t index)>;

struct ValueEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::vector<double> per_context;
};

ValueEstimate summarize_values(std::vector<double> values);

// Monte-Carlo J(pi) with noiseless rewards over fresh contexts.
ValueEstimate true_value(const SyntheticEnvSpec& env, const ActionChooser& chooser,
                         std::size_t n_contexts, std::uint64_t seed);
// Same, over a fixed context list.
ValueEstimate true_value_on(const SyntheticEnvSpec& env, const std::vector<Context>& contexts,
                            const ActionChooser& chooser);

struct GridOptimum {
  std::vector<double> action;
  double value = 0.0;
};

// Exhaustive argmax of R*(s, .) over `resolution` evenly spaced points per
// continuous dim (endpoints included) times every discrete level.
GridOptimum brute_force_optimum(const SyntheticEnvSpec& env, std::span<const double> context,
                                std::size_t grid_resolution, std::size_t max_grid_points = 2'000'000);

}  // namespace cpopt
