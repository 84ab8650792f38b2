#include "cpopt/neural.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "cpopt/rng.hpp"
#include "cpopt/text.hpp"

namespace cpopt {

namespace {

void activate(Activation a, Eigen::Ref<Eigen::MatrixXd> m) {
  if (a == Activation::kTanh) m = m.array().tanh();
}

// Multiplies `d` in place by the activation derivative, given post-activation values.
void activation_backward(Activation a, const Eigen::MatrixXd& post, Eigen::MatrixXd& d) {
  if (a == Activation::kTanh) d.array() *= 1.0 - post.array().square();
}

std::string expect_token(std::istream& in, const std::string& what) {
  std::string tok;
  if (!(in >> tok)) throw Error("model file truncated, expected " + what);
  return tok;
}

double read_value(std::istream& in) {
  const auto tok = expect_token(in, "number");
  const auto v = parse_double(tok);
  if (!v) throw Error("model file: bad number '" + tok + "'");
  return *v;
}

std::size_t read_count(std::istream& in) {
  const double v = read_value(in);
  if (v < 0 || v != std::floor(v)) throw Error("model file: bad count");
  return static_cast<std::size_t>(v);
}

void expect_keyword(std::istream& in, const std::string& keyword) {
  const auto tok = expect_token(in, keyword);
  if (tok != keyword) throw Error("model file: expected '" + keyword + "', found '" + tok + "'");
}

}  // namespace

std::string to_string(Activation a) { return a == Activation::kTanh ? "tanh" : "identity"; }

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "identity") return Activation::kIdentity;
  throw Error("unknown activation '" + s + "'");
}

Standardization Standardization::identity(std::size_t input_size) {
  Standardization s;
  s.input_mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(input_size));
  s.input_scale = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(input_size));
  return s;
}

Standardization Standardization::fit(const std::vector<std::vector<double>>& inputs,
                                     std::span<const double> targets) {
  if (inputs.empty()) throw ValidationError("Standardization::fit: no samples");
  const std::size_t d = inputs.front().size();
  auto s = identity(d);
  const double n = static_cast<double>(inputs.size());
  for (const auto& x : inputs) {
    if (x.size() != d) throw ShapeError("Standardization::fit: ragged inputs");
    for (std::size_t j = 0; j < d; ++j) s.input_mean[static_cast<Eigen::Index>(j)] += x[j] / n;
  }
  Eigen::VectorXd var = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  for (const auto& x : inputs) {
    for (std::size_t j = 0; j < d; ++j) {
      const double c = x[j] - s.input_mean[static_cast<Eigen::Index>(j)];
      var[static_cast<Eigen::Index>(j)] += c * c / n;
    }
  }
  for (Eigen::Index j = 0; j < var.size(); ++j) {
    const double sd = std::sqrt(var[j]);
    s.input_scale[j] = sd > 1e-12 ? sd : 1.0;
  }
  if (!targets.empty()) {
    const double m = std::accumulate(targets.begin(), targets.end(), 0.0) / static_cast<double>(targets.size());
    double v = 0.0;
    for (double t : targets) v += (t - m) * (t - m);
    v /= static_cast<double>(targets.size());
    s.output_mean = m;
    s.output_scale = std::sqrt(v) > 1e-12 ? std::sqrt(v) : 1.0;
  }
  return s;
}

FeedforwardNet::FeedforwardNet(std::vector<std::size_t> layer_sizes, Activation hidden,
                               Activation output)
    : sizes_(std::move(layer_sizes)), hidden_(hidden), output_(output) {
  if (sizes_.size() < 2) throw ShapeError("network needs at least input and output sizes");
  for (auto s : sizes_) {
    if (s == 0) throw ShapeError("layer sizes must be positive");
  }
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    DenseLayer layer;
    layer.weight = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(sizes_[l + 1]),
                                         static_cast<Eigen::Index>(sizes_[l]));
    layer.bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(sizes_[l + 1]));
    layers_.push_back(std::move(layer));
  }
  standardization_ = Standardization::identity(sizes_.front());
}

FeedforwardNet FeedforwardNet::random(std::vector<std::size_t> layer_sizes, Activation hidden,
                                      std::uint64_t seed, double init_scale, Activation output) {
  FeedforwardNet net(std::move(layer_sizes), hidden, output);
  Rng rng = make_rng(seed);
  for (auto& layer : net.layers_) {
    const double s = init_scale / std::sqrt(static_cast<double>(layer.weight.cols()));
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = uniform(rng, -s, s);
    }
  }
  return net;
}

void FeedforwardNet::set_standardization(Standardization s) {
  if (static_cast<std::size_t>(s.input_mean.size()) != input_size() ||
      static_cast<std::size_t>(s.input_scale.size()) != input_size()) {
    throw ShapeError("standardization does not match input size");
  }
  if ((s.input_scale.array() <= 0.0).any() || !(s.output_scale > 0.0)) {
    throw ValidationError("standardization scales must be positive");
  }
  standardization_ = std::move(s);
}

std::size_t FeedforwardNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

bool FeedforwardNet::all_finite() const {
  for (const auto& l : layers_) {
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  }
  return true;
}

void FeedforwardNet::check_input(std::span<const double> x) const {
  if (x.size() != input_size()) {
    throw ShapeError("net input has " + std::to_string(x.size()) + " entries, expected " +
                     std::to_string(input_size()));
  }
}

Eigen::VectorXd FeedforwardNet::standardize(std::span<const double> x) const {
  check_input(x);
  Eigen::Map<const Eigen::VectorXd> raw(x.data(), static_cast<Eigen::Index>(x.size()));
  return (raw - standardization_.input_mean).cwiseQuotient(standardization_.input_scale);
}

Eigen::VectorXd FeedforwardNet::forward_vector(std::span<const double> x) const {
  Eigen::VectorXd h = standardize(x);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Eigen::VectorXd z = layers_[l].weight * h + layers_[l].bias;
    activate(l + 1 == layers_.size() ? output_ : hidden_, z);
    h = std::move(z);
  }
  return (standardization_.output_mean + standardization_.output_scale * h.array()).matrix();
}

double FeedforwardNet::forward(std::span<const double> x) const {
  if (output_size() != 1) throw ShapeError("forward: net has vector output");
  return forward_vector(x)[0];
}

double FeedforwardNet::value_and_grad(std::span<const double> x, std::span<double> grad) const {
  if (output_size() != 1) throw ShapeError("grad_input: net has vector output");
  if (grad.size() != input_size()) throw ShapeError("grad_input: gradient buffer size mismatch");
  const std::size_t L = layers_.size();
  std::vector<Eigen::VectorXd> post(L + 1);
  post[0] = standardize(x);
  for (std::size_t l = 0; l < L; ++l) {
    post[l + 1] = layers_[l].weight * post[l] + layers_[l].bias;
    activate(l + 1 == L ? output_ : hidden_, post[l + 1]);
  }
  Eigen::VectorXd d = Eigen::VectorXd::Constant(1, standardization_.output_scale);
  for (std::size_t l = L; l-- > 0;) {
    const Activation act = l + 1 == L ? output_ : hidden_;
    if (act == Activation::kTanh) d.array() *= 1.0 - post[l + 1].array().square();
    d = layers_[l].weight.transpose() * d;
  }
  for (std::size_t j = 0; j < grad.size(); ++j) {
    grad[j] = d[static_cast<Eigen::Index>(j)] / standardization_.input_scale[static_cast<Eigen::Index>(j)];
  }
  return standardization_.output_mean + standardization_.output_scale * post[L][0];
}

std::vector<double> FeedforwardNet::grad_input(std::span<const double> x) const {
  std::vector<double> g(input_size());
  value_and_grad(x, g);
  return g;
}

FeedforwardNet::Trace FeedforwardNet::forward_batch(const Eigen::MatrixXd& inputs) const {
  if (static_cast<std::size_t>(inputs.rows()) != input_size()) {
    throw ShapeError("forward_batch: input rows do not match input size");
  }
  Trace t;
  t.activations.reserve(layers_.size() + 1);
  t.activations.push_back(
      ((inputs.colwise() - standardization_.input_mean).array().colwise() /
       standardization_.input_scale.array())
          .matrix());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Eigen::MatrixXd z = layers_[l].weight * t.activations.back();
    z.colwise() += layers_[l].bias;
    activate(l + 1 == layers_.size() ? output_ : hidden_, z);
    t.activations.push_back(std::move(z));
  }
  return t;
}

NetGradients FeedforwardNet::backward_batch(const Trace& trace, const Eigen::MatrixXd& d_output,
                                            Eigen::MatrixXd* d_input) const {
  const std::size_t L = layers_.size();
  NetGradients g;
  g.weight.resize(L);
  g.bias.resize(L);
  Eigen::MatrixXd d = d_output;
  for (std::size_t l = L; l-- > 0;) {
    activation_backward(l + 1 == L ? output_ : hidden_, trace.activations[l + 1], d);
    g.weight[l].noalias() = d * trace.activations[l].transpose();
    g.bias[l] = d.rowwise().sum();
    if (l > 0 || d_input) {
      Eigen::MatrixXd prev = layers_[l].weight.transpose() * d;
      d = std::move(prev);
    }
  }
  if (d_input) *d_input = std::move(d);
  return g;
}

bool FeedforwardNet::operator==(const FeedforwardNet& other) const {
  if (sizes_ != other.sizes_ || hidden_ != other.hidden_ || output_ != other.output_) return false;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (layers_[l].weight != other.layers_[l].weight || layers_[l].bias != other.layers_[l].bias) {
      return false;
    }
  }
  const auto& a = standardization_;
  const auto& b = other.standardization_;
  return a.input_mean == b.input_mean && a.input_scale == b.input_scale &&
         a.output_mean == b.output_mean && a.output_scale == b.output_scale;
}

NetGradients zero_gradients(const FeedforwardNet& net) {
  NetGradients g;
  for (const auto& l : net.layers()) {
    g.weight.push_back(Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
    g.bias.push_back(Eigen::VectorXd::Zero(l.bias.size()));
  }
  return g;
}

MomentumSgd::MomentumSgd(const FeedforwardNet& net, double step_size, double momentum)
    : step_(step_size), momentum_(momentum), velocity_(zero_gradients(net)) {}

void MomentumSgd::apply(FeedforwardNet& net, const NetGradients& direction) {
  auto& layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    velocity_.weight[l] = momentum_ * velocity_.weight[l] + direction.weight[l];
    velocity_.bias[l] = momentum_ * velocity_.bias[l] + direction.bias[l];
    layers[l].weight += step_ * velocity_.weight[l];
    layers[l].bias += step_ * velocity_.bias[l];
  }
}

FeedforwardNet train_regression(const FeedforwardNet& net,
                                const std::vector<std::vector<double>>& inputs,
                                std::span<const double> targets, const TrainConfig& cfg) {
  if (inputs.empty()) throw ValidationError("train_regression: empty training data");
  if (inputs.size() != targets.size()) throw ShapeError("train_regression: inputs/targets length mismatch");
  if (net.output_size() != 1) throw ShapeError("train_regression: net must have scalar output");
  if (cfg.batch_size == 0 || !(cfg.step_size > 0.0)) {
    throw ValidationError("train_regression: batch_size and step_size must be positive");
  }

  FeedforwardNet out = net;
  if (cfg.epochs == 0) return out;

  const auto n = static_cast<Eigen::Index>(inputs.size());
  const auto d = static_cast<Eigen::Index>(net.input_size());
  Eigen::MatrixXd x(d, n);
  Eigen::RowVectorXd t(n);
  const auto& st = net.standardization();
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = inputs[static_cast<std::size_t>(i)];
    if (static_cast<Eigen::Index>(row.size()) != d) {
      throw ShapeError("train_regression: sample " + std::to_string(i) + " has wrong size");
    }
    x.col(i) = Eigen::Map<const Eigen::VectorXd>(row.data(), d);
    t[i] = (targets[static_cast<std::size_t>(i)] - st.output_mean) / st.output_scale;
  }

  MomentumSgd sgd(out, cfg.step_size, cfg.momentum);
  Rng rng = make_rng(cfg.seed);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const auto batch = static_cast<Eigen::Index>(cfg.batch_size);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss = 0.0;
    for (Eigen::Index start = 0; start < n; start += batch) {
      const Eigen::Index b = std::min(batch, n - start);
      Eigen::MatrixXd xb(d, b);
      Eigen::RowVectorXd tb(b);
      for (Eigen::Index k = 0; k < b; ++k) {
        const auto idx = order[static_cast<std::size_t>(start + k)];
        xb.col(k) = x.col(idx);
        tb[k] = t[idx];
      }
      const auto trace = out.forward_batch(xb);
      const Eigen::RowVectorXd diff = trace.activations.back().row(0) - tb;
      loss += diff.squaredNorm();
      Eigen::MatrixXd d_out = (2.0 / static_cast<double>(b)) * diff;
      auto grads = out.backward_batch(trace, d_out);
      for (auto& w : grads.weight) w = -w;
      for (auto& v : grads.bias) v = -v;
      sgd.apply(out, grads);
    }
    if (!std::isfinite(loss) || !out.all_finite()) {
      throw NumericalError("train_regression: non-finite loss in epoch " + std::to_string(epoch));
    }
  }
  return out;
}

double mean_squared_error(const FeedforwardNet& net, const std::vector<std::vector<double>>& inputs,
                          std::span<const double> targets) {
  if (inputs.size() != targets.size() || inputs.empty()) {
    throw ShapeError("mean_squared_error: inputs/targets mismatch");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const double e = net.forward(inputs[i]) - targets[i];
    s += e * e;
  }
  return s / static_cast<double>(inputs.size());
}

void write_net(const FeedforwardNet& net, std::ostream& out) {
  const auto& st = net.standardization();
  out << "cpopt-ffn 1\n";
  out << "hidden_activation " << to_string(net.hidden_activation()) << '\n';
  out << "output_activation " << to_string(net.output_activation()) << '\n';
  out << "layers " << net.layer_sizes().size();
  for (auto s : net.layer_sizes()) out << ' ' << s;
  out << '\n';
  auto write_vec = [&out](const char* name, const Eigen::VectorXd& v) {
    out << name;
    for (Eigen::Index i = 0; i < v.size(); ++i) out << ' ' << format_double(v[i]);
    out << '\n';
  };
  write_vec("input_mean", st.input_mean);
  write_vec("input_scale", st.input_scale);
  out << "output_mean " << format_double(st.output_mean) << '\n';
  out << "output_scale " << format_double(st.output_scale) << '\n';
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    const auto& layer = net.layers()[l];
    out << "weight " << l << ' ' << layer.weight.rows() << ' ' << layer.weight.cols() << '\n';
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        out << (c ? " " : "") << format_double(layer.weight(r, c));
      }
      out << '\n';
    }
    out << "bias " << l << ' ' << layer.bias.size() << '\n';
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) {
      out << (r ? " " : "") << format_double(layer.bias[r]);
    }
    out << '\n';
  }
  out << "end\n";
}

FeedforwardNet read_net(std::istream& in) {
  expect_keyword(in, "cpopt-ffn");
  if (read_count(in) != 1) throw Error("model file: unsupported format version");
  expect_keyword(in, "hidden_activation");
  const Activation hidden = activation_from_string(expect_token(in, "activation"));
  expect_keyword(in, "output_activation");
  const Activation output = activation_from_string(expect_token(in, "activation"));
  expect_keyword(in, "layers");
  const std::size_t count = read_count(in);
  std::vector<std::size_t> sizes(count);
  for (auto& s : sizes) s = read_count(in);
  FeedforwardNet net(sizes, hidden, output);

  Standardization st = Standardization::identity(sizes.front());
  expect_keyword(in, "input_mean");
  for (Eigen::Index i = 0; i < st.input_mean.size(); ++i) st.input_mean[i] = read_value(in);
  expect_keyword(in, "input_scale");
  for (Eigen::Index i = 0; i < st.input_scale.size(); ++i) st.input_scale[i] = read_value(in);
  expect_keyword(in, "output_mean");
  st.output_mean = read_value(in);
  expect_keyword(in, "output_scale");
  st.output_scale = read_value(in);
  net.set_standardization(std::move(st));

  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    auto& layer = net.layers()[l];
    expect_keyword(in, "weight");
    if (read_count(in) != l || read_count(in) != static_cast<std::size_t>(layer.weight.rows()) ||
        read_count(in) != static_cast<std::size_t>(layer.weight.cols())) {
      throw Error("model file: weight block " + std::to_string(l) + " has wrong shape");
    }
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = read_value(in);
    }
    expect_keyword(in, "bias");
    if (read_count(in) != l || read_count(in) != static_cast<std::size_t>(layer.bias.size())) {
      throw Error("model file: bias block " + std::to_string(l) + " has wrong shape");
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias[r] = read_value(in);
  }
  expect_keyword(in, "end");
  return net;
}

}  // namespace cpopt
