#include "cpopt/policy.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>

#include "cpopt/io.hpp"
#include "cpopt/rng.hpp"
#include "cpopt/text.hpp"
#include "cpopt/truncnorm.hpp"

namespace cpopt {

namespace {

std::size_t level_index(const std::vector<double>& levels, double v) {
  for (std::size_t l = 0; l < levels.size(); ++l) {
    if (std::abs(levels[l] - v) <= 1e-9 * std::max(1.0, std::abs(levels[l]))) return l;
  }
  throw ValidationError("value is not a level of its discrete dim");
}

double log_sum_exp(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

}  // namespace

StochasticPolicy::StochasticPolicy(ActionSpace space, std::size_t context_dim,
                                   std::vector<std::size_t> hidden, std::uint64_t seed)
    : space_(std::move(space)), context_dim_(context_dim) {
  if (context_dim_ == 0) throw ValidationError("policy: context_dim must be >= 1");
  if (hidden.empty()) throw ValidationError("policy: trunk needs at least one hidden layer");
  std::vector<std::size_t> sizes{context_dim_};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  trunk_ = FeedforwardNet::random(sizes, Activation::kTanh, derive_seed(seed, 0), 1.0,
                                  Activation::kTanh);

  std::size_t rows = 0;
  for (std::size_t i = 0; i < space_.size(); ++i) {
    offset_.push_back(rows);
    rows += space_.is_discrete(i) ? space_.levels(i).size() : 1;
  }
  // Continuous dims own log_sigma slots in dim order.
  std::size_t next = 0;
  cont_index_.assign(space_.size(), 0);
  for (std::size_t i = 0; i < space_.size(); ++i) {
    if (!space_.is_discrete(i)) cont_index_[i] = next++;
  }

  const auto width = static_cast<Eigen::Index>(hidden.back());
  head_.weight = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows), width);
  head_.bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(rows));
  Rng rng = make_rng(derive_seed(seed, 1));
  const double s = 0.1 / std::sqrt(static_cast<double>(width));
  for (Eigen::Index r = 0; r < head_.weight.rows(); ++r) {
    for (Eigen::Index c = 0; c < width; ++c) head_.weight(r, c) = uniform(rng, -s, s);
  }
  log_sigma_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(next));
  for (std::size_t i = 0; i < space_.size(); ++i) {
    if (!space_.is_discrete(i)) {
      log_sigma_[static_cast<Eigen::Index>(cont_index_[i])] = std::log(0.3 * space_.range(i));
    }
  }
}

void StochasticPolicy::init_from_marginals(const Dataset& dataset) {
  if (!(dataset.space() == space_) || dataset.context_dim() != context_dim_) {
    throw ShapeError("policy: dataset does not match the policy's spaces");
  }
  std::vector<const LoggedInteraction*> logged;
  for (const auto& r : dataset.records()) {
    if (!r.is_counterfactual()) logged.push_back(&r);
  }
  if (logged.empty()) throw ValidationError("policy: dataset has no logged records");
  const double n = static_cast<double>(logged.size());
  for (std::size_t i = 0; i < space_.size(); ++i) {
    const auto off = static_cast<Eigen::Index>(offset_[i]);
    if (space_.is_discrete(i)) {
      const auto& levels = space_.levels(i);
      std::vector<double> counts(levels.size(), 1.0);
      for (const auto* r : logged) counts[level_index(levels, r->action[i])] += 1.0;
      for (std::size_t l = 0; l < levels.size(); ++l) {
        head_.bias[off + static_cast<Eigen::Index>(l)] =
            std::log(counts[l] / (n + static_cast<double>(levels.size())));
      }
    } else {
      double mean = 0.0;
      for (const auto* r : logged) mean += r->action[i] / n;
      double var = 0.0;
      for (const auto* r : logged) var += (r->action[i] - mean) * (r->action[i] - mean) / n;
      const double center = 0.5 * (space_.lower(i) + space_.upper(i));
      const double half = 0.5 * space_.range(i);
      head_.bias[off] = std::atanh(std::clamp((mean - center) / half, -0.95, 0.95));
      log_sigma_[static_cast<Eigen::Index>(cont_index_[i])] =
          std::log(std::max(std::sqrt(var), 1e-3 * space_.range(i)));
    }
  }
  clamp_log_sigma();
}

void StochasticPolicy::clamp_log_sigma() {
  for (std::size_t i = 0; i < space_.size(); ++i) {
    if (space_.is_discrete(i)) continue;
    auto& v = log_sigma_[static_cast<Eigen::Index>(cont_index_[i])];
    v = std::clamp(v, std::log(1e-3 * space_.range(i)), std::log(2.0 * space_.range(i)));
  }
}

void StochasticPolicy::check_context(std::span<const double> context) const {
  if (context.size() != context_dim_) {
    throw ShapeError("context has " + std::to_string(context.size()) + " entries, policy expects " +
                     std::to_string(context_dim_));
  }
}

std::vector<PolicyDimParams> StochasticPolicy::dim_params(std::span<const double> context) const {
  check_context(context);
  const Eigen::VectorXd h = trunk_.forward_vector(context);
  const Eigen::VectorXd out = head_.weight * h + head_.bias;
  std::vector<PolicyDimParams> params(space_.size());
  for (std::size_t i = 0; i < space_.size(); ++i) {
    const auto off = static_cast<Eigen::Index>(offset_[i]);
    auto& p = params[i];
    if (space_.is_discrete(i)) {
      p.discrete = true;
      const auto L = static_cast<Eigen::Index>(space_.levels(i).size());
      const Eigen::VectorXd logits = out.segment(off, L);
      const double lse = log_sum_exp(logits);
      for (Eigen::Index l = 0; l < L; ++l) p.probabilities.push_back(std::exp(logits[l] - lse));
    } else {
      const double center = 0.5 * (space_.lower(i) + space_.upper(i));
      const double half = 0.5 * space_.range(i);
      p.continuous = {center + half * std::tanh(out[off]),
                      std::exp(log_sigma_[static_cast<Eigen::Index>(cont_index_[i])]),
                      space_.lower(i), space_.upper(i)};
    }
  }
  return params;
}

double StochasticPolicy::log_density(std::span<const double> context,
                                     std::span<const double> action) const {
  require_valid_action(space_, action);
  const auto params = dim_params(context);
  double lp = 0.0;
  for (std::size_t i = 0; i < space_.size(); ++i) {
    const auto& p = params[i];
    if (p.discrete) {
      lp += std::log(p.probabilities[level_index(space_.levels(i), action[i])]);
    } else {
      const auto& c = p.continuous;
      lp += TruncatedNormal{c.mean, c.sigma, c.lo, c.hi}.log_pdf(action[i]);
    }
  }
  return lp;
}

double StochasticPolicy::density(std::span<const double> context,
                                 std::span<const double> action) const {
  return std::exp(log_density(context, action));
}

std::pair<std::vector<double>, double> StochasticPolicy::sample(std::span<const double> context,
                                                                std::uint64_t seed) const {
  const auto params = dim_params(context);
  Rng rng = make_rng(seed);
  std::vector<double> a(space_.size());
  for (std::size_t i = 0; i < space_.size(); ++i) {
    const auto& p = params[i];
    if (p.discrete) {
      const auto pick = std::discrete_distribution<std::size_t>(p.probabilities.begin(),
                                                                p.probabilities.end())(rng);
      a[i] = space_.levels(i)[pick];
    } else {
      const auto& c = p.continuous;
      a[i] = TruncatedNormal{c.mean, c.sigma, c.lo, c.hi}.quantile(uniform01(rng));
    }
  }
  const double lp = log_density(context, a);
  return {std::move(a), lp};
}

std::vector<double> StochasticPolicy::mode(std::span<const double> context) const {
  const auto params = dim_params(context);
  std::vector<double> a(space_.size());
  for (std::size_t i = 0; i < space_.size(); ++i) {
    const auto& p = params[i];
    if (p.discrete) {
      const auto best = std::max_element(p.probabilities.begin(), p.probabilities.end());
      a[i] = space_.levels(i)[static_cast<std::size_t>(best - p.probabilities.begin())];
    } else {
      a[i] = std::clamp(p.continuous.mean, space_.lower(i), space_.upper(i));
    }
  }
  return a;
}

Eigen::VectorXd StochasticPolicy::batch_log_density(
    const std::vector<const LoggedInteraction*>& records, std::span<const double> weights,
    BatchGradient* grad) const {
  const auto b = static_cast<Eigen::Index>(records.size());
  if (grad && weights.size() != records.size()) throw ShapeError("batch_log_density: weight count");
  Eigen::MatrixXd ctx(static_cast<Eigen::Index>(context_dim_), b);
  for (Eigen::Index k = 0; k < b; ++k) {
    const auto& r = *records[static_cast<std::size_t>(k)];
    if (r.context.size() != context_dim_ || r.action.size() != space_.size()) {
      throw ShapeError("batch_log_density: record shape mismatch");
    }
    ctx.col(k) = Eigen::Map<const Eigen::VectorXd>(r.context.data(), ctx.rows());
  }
  const auto trace = trunk_.forward_batch(ctx);
  const Eigen::MatrixXd& h = trace.activations.back();
  Eigen::MatrixXd out = head_.weight * h;
  out.colwise() += head_.bias;

  Eigen::VectorXd lp = Eigen::VectorXd::Zero(b);
  Eigen::MatrixXd d_out;
  if (grad) {
    d_out = Eigen::MatrixXd::Zero(out.rows(), b);
    grad->log_sigma = Eigen::VectorXd::Zero(log_sigma_.size());
  }
  for (Eigen::Index k = 0; k < b; ++k) {
    const auto& a = records[static_cast<std::size_t>(k)]->action;
    const double w = grad ? weights[static_cast<std::size_t>(k)] : 0.0;
    for (std::size_t i = 0; i < space_.size(); ++i) {
      const auto off = static_cast<Eigen::Index>(offset_[i]);
      if (space_.is_discrete(i)) {
        const auto L = static_cast<Eigen::Index>(space_.levels(i).size());
        const Eigen::VectorXd logits = out.block(off, k, L, 1);
        const double lse = log_sum_exp(logits);
        const auto j = static_cast<Eigen::Index>(level_index(space_.levels(i), a[i]));
        lp[k] += logits[j] - lse;
        if (grad) {
          d_out.block(off, k, L, 1) -= w * (logits.array() - lse).exp().matrix();
          d_out(off + j, k) += w;
        }
      } else {
        const auto ci = static_cast<Eigen::Index>(cont_index_[i]);
        const double half = 0.5 * space_.range(i);
        const double t = std::tanh(out(off, k));
        const TruncatedNormal tn{0.5 * (space_.lower(i) + space_.upper(i)) + half * t,
                                 std::exp(log_sigma_[ci]), space_.lower(i), space_.upper(i)};
        lp[k] += tn.log_pdf(a[i]);
        if (grad) {
          d_out(off, k) += w * tn.dlog_dmean(a[i]) * half * (1.0 - t * t);
          grad->log_sigma[ci] += w * tn.dlog_dlogsigma(a[i]);
        }
      }
    }
  }
  if (grad) {
    grad->head_weight = d_out * h.transpose();
    grad->head_bias = d_out.rowwise().sum();
    const Eigen::MatrixXd d_h = head_.weight.transpose() * d_out;
    grad->trunk = trunk_.backward_batch(trace, d_h);
  }
  return lp;
}

bool StochasticPolicy::operator==(const StochasticPolicy& other) const {
  return space_ == other.space_ && context_dim_ == other.context_dim_ && trunk_ == other.trunk_ &&
         head_.weight == other.head_.weight && head_.bias == other.head_.bias &&
         log_sigma_ == other.log_sigma_;
}

double clip_weight(double ratio, double max_weight) {
  if (!(ratio >= 0.0)) throw ValidationError("clip_weight: ratio must be >= 0");
  return std::min(ratio, max_weight);
}

StochasticPolicy oppg_train(const StochasticPolicy& policy, const Dataset& dataset,
                            const OPPGConfig& cfg, OPPGTrace* trace) {
  if (!(cfg.clip >= 1.0)) throw ValidationError("oppg: clipping threshold M must be >= 1");
  if (cfg.batch_size == 0 || !(cfg.step_size > 0.0)) {
    throw ValidationError("oppg: batch_size and step_size must be positive");
  }
  if (!(dataset.space() == policy.space()) || dataset.context_dim() != policy.context_dim()) {
    throw ShapeError("oppg: dataset does not match the policy's spaces");
  }
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const double p = dataset[i].propensity;
    if (dataset[i].is_counterfactual() || !(p > 0.0)) {
      throw ValidationError("oppg: record " + std::to_string(i) +
                            " has no usable logging propensity (" + format_double(p) + ")");
    }
  }

  StochasticPolicy out = policy;
  if (cfg.epochs == 0) return out;

  MomentumSgd trunk_sgd(out.trunk(), cfg.step_size, cfg.momentum);
  Eigen::MatrixXd v_head_w = Eigen::MatrixXd::Zero(out.head().weight.rows(), out.head().weight.cols());
  Eigen::VectorXd v_head_b = Eigen::VectorXd::Zero(out.head().bias.size());
  Eigen::VectorXd v_sigma = Eigen::VectorXd::Zero(out.log_sigma().size());

  Rng rng = make_rng(cfg.seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t batch_index = 0;
  std::vector<const LoggedInteraction*> batch;
  std::vector<double> coef;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      for (std::size_t k = start; k < end; ++k) batch.push_back(&dataset[order[k]]);
      const double bsize = static_cast<double>(batch.size());

      const Eigen::VectorXd lp = out.batch_log_density(batch, {}, nullptr);
      coef.assign(batch.size(), 0.0);
      double max_w = 0.0;
      double sum_ratio = 0.0;
      for (std::size_t k = 0; k < batch.size(); ++k) {
        const double ratio = std::exp(lp[static_cast<Eigen::Index>(k)] - std::log(batch[k]->propensity));
        const double w = clip_weight(ratio, cfg.clip);
        coef[k] = w * batch[k]->reward / bsize;
        max_w = std::max(max_w, w);
        sum_ratio += ratio;
        if (trace) {
          trace->clipped += ratio > cfg.clip ? 1 : 0;
          ++trace->samples;
          if (trace->record_weights) trace->weights.push_back(w);
        }
      }
      if (trace) {
        trace->batch_max_weight.push_back(max_w);
        trace->batch_mean_ratio.push_back(sum_ratio / bsize);
      }

      StochasticPolicy::BatchGradient g;
      out.batch_log_density(batch, coef, &g);
      bool finite = g.head_weight.allFinite() && g.head_bias.allFinite() && g.log_sigma.allFinite();
      for (std::size_t l = 0; l < g.trunk.weight.size(); ++l) {
        finite = finite && g.trunk.weight[l].allFinite() && g.trunk.bias[l].allFinite();
      }
      if (!finite) {
        throw NumericalError("oppg: non-finite gradient in batch " + std::to_string(batch_index) +
                             " (epoch " + std::to_string(epoch) + ")");
      }
      trunk_sgd.apply(out.trunk(), g.trunk);
      v_head_w = cfg.momentum * v_head_w + g.head_weight;
      v_head_b = cfg.momentum * v_head_b + g.head_bias;
      v_sigma = cfg.momentum * v_sigma + g.log_sigma;
      out.head().weight += cfg.step_size * v_head_w;
      out.head().bias += cfg.step_size * v_head_b;
      out.log_sigma() += cfg.step_size * v_sigma;
      out.clamp_log_sigma();
    }
  }
  return out;
}

void write_policy(const StochasticPolicy& policy, std::ostream& out) {
  out << "cpopt-policy 1\n";
  out << "context_dim " << policy.context_dim_ << '\n';
  out << "dims " << policy.space_.size() << '\n';
  for (const auto& d : policy.space_.dims()) out << "dim " << dim_to_string(d) << '\n';
  out << "log_sigma " << policy.log_sigma_.size();
  for (Eigen::Index i = 0; i < policy.log_sigma_.size(); ++i) out << ' ' << format_double(policy.log_sigma_[i]);
  out << '\n';
  const auto& w = policy.head_.weight;
  out << "head " << w.rows() << ' ' << w.cols() << '\n';
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    for (Eigen::Index c = 0; c < w.cols(); ++c) out << (c ? " " : "") << format_double(w(r, c));
    out << '\n';
  }
  out << "head_bias " << policy.head_.bias.size() << '\n';
  for (Eigen::Index r = 0; r < policy.head_.bias.size(); ++r) {
    out << (r ? " " : "") << format_double(policy.head_.bias[r]);
  }
  out << '\n';
  write_net(policy.trunk_, out);
}

StochasticPolicy read_policy(std::istream& in) {
  auto next_line = [&in](const std::string& key) {
    std::string line;
    while (std::getline(in, line)) {
      if (!trim(line).empty()) break;
    }
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok != key) throw Error("policy file: expected '" + key + "', found '" + tok + "'");
    std::string rest;
    std::getline(ls, rest);
    return std::string(trim(rest));
  };
  auto number = [](const std::string& s) {
    const auto v = parse_double(s);
    if (!v) throw Error("policy file: bad number '" + s + "'");
    return *v;
  };
  auto numbers = [&number](const std::string& s) {
    std::vector<double> out;
    std::istringstream ls(s);
    std::string tok;
    while (ls >> tok) out.push_back(number(tok));
    return out;
  };

  if (next_line("cpopt-policy") != "1") throw Error("policy file: unsupported version");
  const auto context_dim = static_cast<std::size_t>(number(next_line("context_dim")));
  const auto ndims = static_cast<std::size_t>(number(next_line("dims")));
  std::vector<DimSpec> dims;
  for (std::size_t i = 0; i < ndims; ++i) dims.push_back(dim_from_string(next_line("dim")));
  auto sigma = numbers(next_line("log_sigma"));
  if (sigma.empty() || sigma.front() != static_cast<double>(sigma.size() - 1)) {
    throw Error("policy file: log_sigma count");
  }
  sigma.erase(sigma.begin());
  const auto head_shape = numbers(next_line("head"));
  if (head_shape.size() != 2) throw Error("policy file: head shape");
  Eigen::MatrixXd w(static_cast<Eigen::Index>(head_shape[0]), static_cast<Eigen::Index>(head_shape[1]));
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    std::string line;
    std::getline(in, line);
    const auto row = numbers(line);
    if (static_cast<Eigen::Index>(row.size()) != w.cols()) throw Error("policy file: head row width");
    for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = row[static_cast<std::size_t>(c)];
  }
  const auto nbias = static_cast<Eigen::Index>(number(next_line("head_bias")));
  std::string line;
  std::getline(in, line);
  const auto bias = numbers(line);
  if (static_cast<Eigen::Index>(bias.size()) != nbias || nbias != w.rows()) {
    throw Error("policy file: head bias size");
  }
  FeedforwardNet trunk = read_net(in);

  std::vector<std::size_t> hidden(trunk.layer_sizes().begin() + 1, trunk.layer_sizes().end());
  StochasticPolicy policy(ActionSpace(std::move(dims)), context_dim, hidden, 0);
  if (policy.head_.weight.rows() != w.rows() || policy.head_.weight.cols() != w.cols() ||
      static_cast<std::size_t>(policy.log_sigma_.size()) != sigma.size() ||
      trunk.input_size() != context_dim) {
    throw Error("policy file: parameter shapes do not match the action space");
  }
  policy.trunk_ = std::move(trunk);
  policy.head_.weight = w;
  policy.head_.bias = Eigen::Map<const Eigen::VectorXd>(bias.data(), nbias);
  for (std::size_t i = 0; i < sigma.size(); ++i) policy.log_sigma_[static_cast<Eigen::Index>(i)] = sigma[i];
  return policy;
}

}  // namespace cpopt
