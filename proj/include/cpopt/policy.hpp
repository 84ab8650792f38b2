#pragma once

// Factorized stochastic policy pi_theta(a | s) and its clipped off-policy
// policy-gradient trainer.
//
// A shared tanh trunk embeds the context. One linear head per action dim
// reads the embedding:
//   continuous dim: mean = center + half_range * tanh(head), sigma = exp(log_sigma)
//                   (state independent), Gaussian truncated to the dim's box;
//   discrete dim:   softmax over one logit per level.
// The joint density is the product of the per-dim densities.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cpopt/core.hpp"
#include "cpopt/neural.hpp"

namespace cpopt {

struct ContinuousHeadParams {
  double mean;
  double sigma;
  double lo;
  double hi;
};

struct PolicyDimParams {
  bool discrete = false;
  ContinuousHeadParams continuous{};
  std::vector<double> probabilities;  // discrete only, one per level
};

class StochasticPolicy {
 public:
  StochasticPolicy(ActionSpace space, std::size_t context_dim,
                   std::vector<std::size_t> hidden = {64, 64}, std::uint64_t seed = 0);

  const ActionSpace& space() const { return space_; }
  std::size_t context_dim() const { return context_dim_; }

  // Head biases and widths set to the dataset's per-dim action marginals
  // (mean and spread for continuous dims, smoothed frequencies for discrete).
  void init_from_marginals(const Dataset& dataset);

  std::vector<PolicyDimParams> dim_params(std::span<const double> context) const;

  double log_density(std::span<const double> context, std::span<const double> action) const;
  double density(std::span<const double> context, std::span<const double> action) const;

  // Deterministic given seed; the returned log density is recomputed from
  // the sampled action.
  std::pair<std::vector<double>, double> sample(std::span<const double> context,
                                                std::uint64_t seed) const;

  // Per-dim mode: the continuous mean, the most probable discrete level
  // snapped to the space.
  std::vector<double> mode(std::span<const double> context) const;

  // Parameter access for the trainer and serialization.
  const FeedforwardNet& trunk() const { return trunk_; }
  FeedforwardNet& trunk() { return trunk_; }
  const DenseLayer& head() const { return head_; }
  DenseLayer& head() { return head_; }
  const Eigen::VectorXd& log_sigma() const { return log_sigma_; }
  Eigen::VectorXd& log_sigma() { return log_sigma_; }
  void clamp_log_sigma();

  bool operator==(const StochasticPolicy& other) const;

  // Log densities for a batch and, if requested, their gradients with
  // respect to every parameter weighted by `weights` and summed.
  struct BatchGradient {
    NetGradients trunk;
    Eigen::MatrixXd head_weight;
    Eigen::VectorXd head_bias;
    Eigen::VectorXd log_sigma;
  };
  Eigen::VectorXd batch_log_density(const std::vector<const LoggedInteraction*>& records,
                                    std::span<const double> weights = {},
                                    BatchGradient* grad = nullptr) const;

 private:
  friend void write_policy(const StochasticPolicy&, std::ostream&);
  friend StochasticPolicy read_policy(std::istream&);

  void check_context(std::span<const double> context) const;

  ActionSpace space_;
  std::size_t context_dim_;
  FeedforwardNet trunk_;
  DenseLayer head_;
  Eigen::VectorXd log_sigma_;        // one per continuous dim
  std::vector<std::size_t> offset_;  // first head row of each dim
  std::vector<std::size_t> cont_index_;  // log_sigma slot of each continuous dim
};

double clip_weight(double ratio, double max_weight);

struct OPPGConfig {
  double clip = 10.0;  // M
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double step_size = 0.01;
  double momentum = 0.9;
  std::uint64_t seed = 0;
};

struct OPPGTrace {
  std::vector<double> batch_max_weight;  // largest clipped weight in each update
  std::vector<double> batch_mean_ratio;  // mean unclipped ratio in each update
  std::size_t clipped = 0;               // samples whose ratio exceeded M
  std::size_t samples = 0;
  bool record_weights = false;
  std::vector<double> weights;           // every weight used, when record_weights
};

// Minibatch ascent on (1/|B|) sum_i min(pi(a_i|s_i)/pi0_i, M) r_i grad log pi(a_i|s_i).
// Records with sentinel or non-positive propensity are rejected.
StochasticPolicy oppg_train(const StochasticPolicy& policy, const Dataset& dataset,
                            const OPPGConfig& cfg, OPPGTrace* trace = nullptr);

void write_policy(const StochasticPolicy& policy, std::ostream& out);
StochasticPolicy read_policy(std::istream& in);

}  // namespace cpopt
