#pragma once

// Small dense feedforward networks: evaluation, exact input gradients, and
// minibatch regression training with momentum SGD.
//
// A net maps a raw input x to
//   y = output_mean + output_scale * z,   z = f_L(... f_1((x - input_mean) / input_scale))
// where every hidden layer uses the hidden activation and the last layer uses
// the output activation (identity for reward models).

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cpopt/error.hpp"

namespace cpopt {

enum class Activation { kTanh, kIdentity };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

struct Standardization {
  Eigen::VectorXd input_mean;
  Eigen::VectorXd input_scale;
  double output_mean = 0.0;
  double output_scale = 1.0;

  static Standardization identity(std::size_t input_size);
  // Per-feature mean and standard deviation; near-constant features keep scale 1.
  static Standardization fit(const std::vector<std::vector<double>>& inputs,
                             std::span<const double> targets);
};

struct NetGradients {
  std::vector<Eigen::MatrixXd> weight;
  std::vector<Eigen::VectorXd> bias;
};

class FeedforwardNet {
 public:
  // Post-activation values per layer for a batch; activations[0] is the
  // standardized input and activations.back() the pre-scaling output z.
  struct Trace {
    std::vector<Eigen::MatrixXd> activations;
  };

  FeedforwardNet() = default;
  // All parameters zero, identity standardization.
  FeedforwardNet(std::vector<std::size_t> layer_sizes, Activation hidden,
                 Activation output = Activation::kIdentity);

  // Uniform init in [-s, s], s = init_scale / sqrt(fan_in); biases zero.
  static FeedforwardNet random(std::vector<std::size_t> layer_sizes, Activation hidden,
                               std::uint64_t seed, double init_scale = 1.0,
                               Activation output = Activation::kIdentity);

  const std::vector<std::size_t>& layer_sizes() const { return sizes_; }
  std::size_t input_size() const { return sizes_.front(); }
  std::size_t output_size() const { return sizes_.back(); }
  Activation hidden_activation() const { return hidden_; }
  Activation output_activation() const { return output_; }

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  const Standardization& standardization() const { return standardization_; }
  void set_standardization(Standardization s);

  std::size_t parameter_count() const;
  bool all_finite() const;

  // Scalar output; requires output_size() == 1.
  double forward(std::span<const double> x) const;
  Eigen::VectorXd forward_vector(std::span<const double> x) const;
  // d forward / d x (raw input coordinates).
  std::vector<double> grad_input(std::span<const double> x) const;
  // forward and grad_input in one pass; grad must have input_size() entries.
  double value_and_grad(std::span<const double> x, std::span<double> grad) const;

  // Columns of `inputs` are raw samples.
  Trace forward_batch(const Eigen::MatrixXd& inputs) const;
  // Parameter gradient of sum(d_output .* z) where z is the pre-scaling
  // output held in `trace`. If `d_input` is given it receives the gradient
  // with respect to the standardized input.
  NetGradients backward_batch(const Trace& trace, const Eigen::MatrixXd& d_output,
                              Eigen::MatrixXd* d_input = nullptr) const;

  bool operator==(const FeedforwardNet& other) const;

 private:
  void check_input(std::span<const double> x) const;
  Eigen::VectorXd standardize(std::span<const double> x) const;

  std::vector<std::size_t> sizes_;
  Activation hidden_ = Activation::kTanh;
  Activation output_ = Activation::kIdentity;
  std::vector<DenseLayer> layers_;
  Standardization standardization_;
};

inline double forward(const FeedforwardNet& net, std::span<const double> x) { return net.forward(x); }
inline std::vector<double> grad_input(const FeedforwardNet& net, std::span<const double> x) {
  return net.grad_input(x);
}

NetGradients zero_gradients(const FeedforwardNet& net);

// Heavy-ball update: v <- momentum * v + direction; theta <- theta + step * v.
class MomentumSgd {
 public:
  MomentumSgd(const FeedforwardNet& net, double step_size, double momentum);
  void apply(FeedforwardNet& net, const NetGradients& direction);

 private:
  double step_;
  double momentum_;
  NetGradients velocity_;
};

struct TrainConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 64;
  double step_size = 0.01;
  std::uint64_t seed = 0;
  // Multiplier on 1/sqrt(fan_in) used when members are initialized.
  double init_scale = 1.0;
  double momentum = 0.9;
};

// Mean-squared-error fit of a scalar-output net on its stored
// standardization; returns a trained copy.
FeedforwardNet train_regression(const FeedforwardNet& net,
                                const std::vector<std::vector<double>>& inputs,
                                std::span<const double> targets, const TrainConfig& cfg);

double mean_squared_error(const FeedforwardNet& net, const std::vector<std::vector<double>>& inputs,
                          std::span<const double> targets);

// Text format, see README "Model files".
void write_net(const FeedforwardNet& net, std::ostream& out);
FeedforwardNet read_net(std::istream& in);

}  // namespace cpopt
