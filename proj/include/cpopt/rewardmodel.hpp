#pragma once

// Bootstrap ensemble of reward networks. Member k is fit on a with-replacement
// resample of the data; the spread of member predictions is the uncertainty
// used to penalize the action search.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cpopt/core.hpp"
#include "cpopt/neural.hpp"

namespace cpopt {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

struct PenalizedValue {
  double value = 0.0;
  double mean = 0.0;
  double std = 0.0;
  std::vector<double> grad_action;
};

class RewardEnsemble {
 public:
  RewardEnsemble(std::vector<FeedforwardNet> members, ActionSpace space, std::size_t context_dim,
                 std::vector<std::uint64_t> member_seeds = {});

  std::size_t size() const { return members_.size(); }
  const std::vector<FeedforwardNet>& members() const { return members_; }
  const ActionSpace& space() const { return space_; }
  std::size_t context_dim() const { return context_dim_; }
  const std::vector<std::uint64_t>& member_seeds() const { return seeds_; }

  // Validated entry points: `action` must be a valid point of the space.
  std::vector<double> member_predictions(std::span<const double> context,
                                         std::span<const double> action) const;
  MeanStd predict(std::span<const double> context, std::span<const double> action) const;
  PenalizedValue penalized_objective(std::span<const double> context,
                                     std::span<const double> action, double beta) const;

  // Same quantities on the relaxed box; used inside the action search where
  // discrete coordinates are temporarily continuous.
  PenalizedValue penalized_relaxed(std::span<const double> context, std::span<const double> action,
                                   double beta) const;
  double penalized_value_relaxed(std::span<const double> context, std::span<const double> action,
                                 double beta) const;
  MeanStd predict_relaxed(std::span<const double> context, std::span<const double> action) const;

 private:
  void check_context(std::span<const double> context) const;
  void check_relaxed(std::span<const double> action) const;

  std::vector<FeedforwardNet> members_;
  ActionSpace space_;
  std::size_t context_dim_;
  std::vector<std::uint64_t> seeds_;
};

// Population (divide by K) mean and standard deviation.
MeanStd mean_std(std::span<const double> values);

struct EnsembleConfig {
  std::size_t members = 10;
  std::vector<std::size_t> hidden = {64, 64};
  TrainConfig train;
  // Worker threads for member training; results do not depend on it.
  std::size_t threads = 0;
};

// Member k: bootstrap stream derive_seed(seed, k), init stream derive_seed(seed, K + k).
RewardEnsemble train_ensemble(const Dataset& dataset, std::size_t members, const TrainConfig& cfg,
                              std::uint64_t seed, std::vector<std::size_t> hidden = {64, 64},
                              std::size_t threads = 0);
RewardEnsemble train_ensemble(const Dataset& dataset, const EnsembleConfig& cfg, std::uint64_t seed);

struct AugmentConfig {
  std::size_t count_per_record = 1;
  double min_distance = 0.25;
  double pessimistic_quantile = 0.1;
  std::size_t max_attempts = 1000;
};

// Linear-interpolation quantile of `values` at q in [0, 1].
double quantile(std::vector<double> values, double q);

// Appends `count_per_record` fictitious records per original record: a
// uniformly drawn action at normalized L-infinity distance > min_distance
// from the logged one, labelled with the q-quantile of the logged rewards.
Dataset augment_counterfactual(const Dataset& dataset, const AugmentConfig& cfg, std::uint64_t seed);

// Directory with manifest.json plus member_XX.net files.
void save_ensemble(const RewardEnsemble& ensemble, const std::filesystem::path& dir);
RewardEnsemble load_ensemble(const std::filesystem::path& dir);

}  // namespace cpopt
