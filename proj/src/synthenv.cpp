#include "cpopt/synthenv.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cpopt/truncnorm.hpp"

namespace cpopt {

namespace {

double bump_sum(const SyntheticEnvSpec& env, std::span<const double> context,
                std::span<const double> action, std::vector<double>* grad) {
  const std::size_t ds = env.context_dim;
  const std::size_t n = ds + action.size();
  const double inv2l2 = 1.0 / (2.0 * env.length_scale * env.length_scale);
  auto x_at = [&](std::size_t j) { return j < ds ? context[j] : action[j - ds]; };

  double value = 0.0;
  if (grad) grad->assign(n, 0.0);
  for (std::size_t g = 0; g < env.bump_weights.size(); ++g) {
    const auto& c = env.bump_centers[g];
    double d2 = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = x_at(j) - c[j];
      d2 += d * d;
    }
    const double term = env.bump_weights[g] * std::exp(-d2 * inv2l2);
    value += term;
    if (grad) {
      for (std::size_t j = 0; j < n; ++j) (*grad)[j] -= term * 2.0 * inv2l2 * (x_at(j) - c[j]);
    }
  }
  if (!env.linear_term.empty()) {
    for (std::size_t j = 0; j < n; ++j) {
      value += env.linear_term[j] * x_at(j);
      if (grad) (*grad)[j] += env.linear_term[j];
    }
  }
  return value;
}

void check_context(const SyntheticEnvSpec& env, std::span<const double> context) {
  if (context.size() != env.context_dim) {
    throw ShapeError("context has " + std::to_string(context.size()) + " entries, env expects " +
                     std::to_string(env.context_dim));
  }
}

void check_relaxed(const SyntheticEnvSpec& env, std::span<const double> action) {
  if (action.size() != env.space.size()) {
    throw ShapeError("action has " + std::to_string(action.size()) + " entries, space has " +
                     std::to_string(env.space.size()));
  }
}

double logging_center(const LoggingContinuousHead& head, std::span<const double> context) {
  double c = head.base;
  for (std::size_t k = 0; k < context.size(); ++k) c += head.slope[k] * context[k];
  return c;
}

}  // namespace

SyntheticEnvSpec make_synthetic_env(const EnvParams& params, const ActionSpace& space) {
  SyntheticEnvSpec env;
  env.context_dim = params.context_dim;
  env.space = space;
  env.length_scale = params.length_scale;
  env.noise_std = params.noise_std;
  env.seed = params.seed;
  env.logging.mix = params.logging_mix;

  const std::size_t ds = params.context_dim;
  const std::size_t n = ds + space.size();
  Rng rng = make_rng(derive_seed(params.seed, 0));
  for (std::size_t g = 0; g < params.bumps; ++g) {
    env.bump_weights.push_back(uniform(rng, params.weight_min, params.weight_max));
    std::vector<double> c(n);
    for (std::size_t j = 0; j < ds; ++j) c[j] = uniform01(rng);
    for (std::size_t i = 0; i < space.size(); ++i) {
      c[ds + i] = uniform(rng, space.lower(i), space.upper(i));
    }
    env.bump_centers.push_back(std::move(c));
  }

  Rng lin_rng = make_rng(derive_seed(params.seed, 1));
  if (params.linear_scale > 0.0) {
    env.linear_term.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
      const double scale = j < ds ? 1.0 : space.range(j - ds);
      env.linear_term[j] = uniform(lin_rng, -params.linear_scale, params.linear_scale) / scale;
    }
  }

  // The logging center moves with three context coordinates per dim; the
  // base is placed so the center never leaves the inner part of the box.
  Rng log_rng = make_rng(derive_seed(params.seed, 2));
  const std::size_t driving = std::min<std::size_t>(3, ds);
  for (std::size_t i = 0; i < space.size(); ++i) {
    if (space.is_discrete(i)) {
      LoggingDiscreteHead head;
      for (std::size_t l = 0; l < space.levels(i).size(); ++l) {
        head.weights.push_back(uniform(log_rng, 0.2, 1.0));
      }
      const double total = std::accumulate(head.weights.begin(), head.weights.end(), 0.0);
      for (auto& w : head.weights) w /= total;
      env.logging.heads.emplace_back(std::move(head));
    } else {
      LoggingContinuousHead head;
      const double r = space.range(i);
      head.width = params.logging_width * r;
      head.slope.assign(ds, 0.0);
      double offset = 0.0;
      for (std::size_t k = 0; k < driving; ++k) {
        const std::size_t which = uniform_index(log_rng, ds);
        const double coef = uniform(log_rng, -1.0, 1.0) * params.logging_shift * r / driving;
        head.slope[which] += coef;
        offset += 0.5 * coef;
      }
      const double center = uniform(log_rng, space.lower(i) + 0.3 * r, space.upper(i) - 0.3 * r);
      head.base = center - offset;
      env.logging.heads.emplace_back(std::move(head));
    }
  }
  validate_env(env);
  return env;
}

void validate_env(const SyntheticEnvSpec& env) {
  const std::size_t n = env.context_dim + env.space.size();
  if (env.context_dim == 0) throw ValidationError("env: context_dim must be >= 1");
  if (!(env.length_scale > 0.0)) throw ValidationError("env: length_scale must be > 0");
  if (!(env.noise_std >= 0.0)) throw ValidationError("env: noise_std must be >= 0");
  if (!(env.logging.mix > 0.0 && env.logging.mix <= 1.0)) {
    throw ValidationError("env: logging_mix must lie in (0, 1]");
  }
  if (env.bump_centers.size() != env.bump_weights.size()) {
    throw ValidationError("env: one center per bump weight required");
  }
  for (std::size_t g = 0; g < env.bump_centers.size(); ++g) {
    const auto& c = env.bump_centers[g];
    if (c.size() != n) throw ShapeError("env: bump center " + std::to_string(g) + " has wrong size");
    for (std::size_t j = 0; j < n; ++j) {
      const bool inside = j < env.context_dim
                              ? (c[j] >= 0.0 && c[j] <= 1.0)
                              : (c[j] >= env.space.lower(j - env.context_dim) &&
                                 c[j] <= env.space.upper(j - env.context_dim));
      if (!inside) {
        throw ValidationError("env: bump center " + std::to_string(g) + " leaves the box at coordinate " +
                              std::to_string(j));
      }
    }
  }
  if (!env.linear_term.empty() && env.linear_term.size() != n) {
    throw ShapeError("env: linear_term has wrong size");
  }
  if (env.logging.heads.size() != env.space.size()) {
    throw ShapeError("env: logging policy needs one head per action dim");
  }
  for (std::size_t i = 0; i < env.space.size(); ++i) {
    const auto& head = env.logging.heads[i];
    if (env.space.is_discrete(i)) {
      const auto* d = std::get_if<LoggingDiscreteHead>(&head);
      if (!d || d->weights.size() != env.space.levels(i).size()) {
        throw ValidationError("env: logging head " + std::to_string(i) + " does not match its dim");
      }
    } else {
      const auto* c = std::get_if<LoggingContinuousHead>(&head);
      if (!c || c->slope.size() != env.context_dim || !(c->width > 0.0)) {
        throw ValidationError("env: logging head " + std::to_string(i) + " does not match its dim");
      }
    }
  }
}

double true_reward(const SyntheticEnvSpec& env, std::span<const double> context,
                   std::span<const double> action) {
  check_context(env, context);
  require_valid_action(env.space, action);
  return bump_sum(env, context, action, nullptr);
}

double true_reward_relaxed(const SyntheticEnvSpec& env, std::span<const double> context,
                           std::span<const double> action) {
  check_context(env, context);
  check_relaxed(env, action);
  return bump_sum(env, context, action, nullptr);
}

std::vector<double> true_reward_gradient(const SyntheticEnvSpec& env,
                                         std::span<const double> context,
                                         std::span<const double> action) {
  check_context(env, context);
  check_relaxed(env, action);
  std::vector<double> grad;
  bump_sum(env, context, action, &grad);
  return grad;
}

double true_reward_bound(const SyntheticEnvSpec& env) {
  double bound = 0.0;
  for (double w : env.bump_weights) bound += std::abs(w);
  if (!env.linear_term.empty()) {
    double hi = 0.0, lo = 0.0;
    for (std::size_t j = 0; j < env.linear_term.size(); ++j) {
      const double l = env.linear_term[j];
      const double a = j < env.context_dim ? 0.0 : env.space.lower(j - env.context_dim);
      const double b = j < env.context_dim ? 1.0 : env.space.upper(j - env.context_dim);
      hi += std::max(l * a, l * b);
      lo += std::min(l * a, l * b);
    }
    bound += std::max(std::abs(hi), std::abs(lo));
  }
  return bound;
}

double logging_dim_density(const SyntheticEnvSpec& env, std::size_t dim,
                           std::span<const double> context, double value) {
  const double mix = env.logging.mix;
  const auto& head = env.logging.heads[dim];
  if (env.space.is_discrete(dim)) {
    const auto& levels = env.space.levels(dim);
    const auto& w = std::get<LoggingDiscreteHead>(head).weights;
    for (std::size_t l = 0; l < levels.size(); ++l) {
      if (std::abs(levels[l] - value) <= 1e-9 * std::max(1.0, std::abs(levels[l]))) {
        return (1.0 - mix) * w[l] + mix / static_cast<double>(levels.size());
      }
    }
    return 0.0;
  }
  const auto& h = std::get<LoggingContinuousHead>(head);
  const double lo = env.space.lower(dim);
  const double hi = env.space.upper(dim);
  if (value < lo || value > hi) return 0.0;
  const TruncatedNormal tn{logging_center(h, context), h.width, lo, hi};
  return (1.0 - mix) * tn.pdf(value) + mix / (hi - lo);
}

double logging_density(const SyntheticEnvSpec& env, std::span<const double> context,
                       std::span<const double> action) {
  check_context(env, context);
  require_valid_action(env.space, action);
  double p = 1.0;
  for (std::size_t i = 0; i < env.space.size(); ++i) {
    p *= logging_dim_density(env, i, context, action[i]);
  }
  return p;
}

double logging_density_floor(const SyntheticEnvSpec& env) {
  double p = 1.0;
  for (std::size_t i = 0; i < env.space.size(); ++i) {
    const double uniform_density = env.space.is_discrete(i)
                                       ? 1.0 / static_cast<double>(env.space.levels(i).size())
                                       : 1.0 / env.space.range(i);
    p *= env.logging.mix * uniform_density;
  }
  return p;
}

Context sample_context(const SyntheticEnvSpec& env, Rng& rng) {
  Context s(env.context_dim);
  for (auto& v : s) v = uniform01(rng);
  return s;
}

std::vector<double> sample_logging_action(const SyntheticEnvSpec& env,
                                          std::span<const double> context, Rng& rng) {
  check_context(env, context);
  std::vector<double> a(env.space.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool explore = uniform01(rng) < env.logging.mix;
    if (env.space.is_discrete(i)) {
      const auto& levels = env.space.levels(i);
      std::size_t pick;
      if (explore) {
        pick = uniform_index(rng, levels.size());
      } else {
        const auto& w = std::get<LoggingDiscreteHead>(env.logging.heads[i]).weights;
        pick = std::discrete_distribution<std::size_t>(w.begin(), w.end())(rng);
      }
      a[i] = levels[pick];
    } else {
      const double lo = env.space.lower(i);
      const double hi = env.space.upper(i);
      if (explore) {
        a[i] = uniform(rng, lo, hi);
      } else {
        const auto& h = std::get<LoggingContinuousHead>(env.logging.heads[i]);
        const TruncatedNormal tn{logging_center(h, context), h.width, lo, hi};
        a[i] = tn.quantile(uniform01(rng));
      }
    }
  }
  return a;
}

LoggedInteraction sample_interaction(const SyntheticEnvSpec& env, std::span<const double> context,
                                     std::uint64_t seed) {
  Rng rng = make_rng(seed);
  LoggedInteraction rec;
  rec.context.assign(context.begin(), context.end());
  rec.action = sample_logging_action(env, context, rng);
  rec.propensity = logging_density(env, context, rec.action);
  rec.reward = true_reward(env, context, rec.action);
  if (env.noise_std > 0.0) rec.reward += env.noise_std * standard_normal(rng);
  return rec;
}

Dataset generate_dataset(const SyntheticEnvSpec& env, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ValidationError("generate_dataset: N must be >= 1");
  std::vector<LoggedInteraction> records;
  records.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t rec_seed = derive_seed(seed, i);
    Rng ctx_rng = make_rng(derive_seed(rec_seed, 0));
    const Context s = sample_context(env, ctx_rng);
    records.push_back(sample_interaction(env, s, derive_seed(rec_seed, 1)));
  }
  return Dataset(env.space, env.context_dim, std::move(records));
}

ValueEstimate summarize_values(std::vector<double> values) {
  ValueEstimate est;
  const double n = static_cast<double>(values.size());
  if (values.empty()) return est;
  est.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - est.mean) * (v - est.mean);
    est.std_error = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  est.per_context = std::move(values);
  return est;
}

ValueEstimate true_value_on(const SyntheticEnvSpec& env, const std::vector<Context>& contexts,
                            const ActionChooser& chooser) {
  if (contexts.empty()) throw ValidationError("true_value: need at least one context");
  std::vector<double> values;
  values.reserve(contexts.size());
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    const auto a = chooser(contexts[i], i);
    const auto verdict = validate_action(env.space, a);
    if (!verdict.valid()) {
      throw ValidationError("true_value: chooser returned an invalid action for context " +
                            std::to_string(i) + ": " + verdict.describe());
    }
    values.push_back(bump_sum(env, contexts[i], a, nullptr));
  }
  return summarize_values(std::move(values));
}

ValueEstimate true_value(const SyntheticEnvSpec& env, const ActionChooser& chooser,
                         std::size_t n_contexts, std::uint64_t seed) {
  if (n_contexts == 0) throw ValidationError("true_value: n_contexts must be >= 1");
  std::vector<Context> contexts;
  contexts.reserve(n_contexts);
  for (std::size_t i = 0; i < n_contexts; ++i) {
    Rng rng = make_rng(derive_seed(seed, i));
    contexts.push_back(sample_context(env, rng));
  }
  return true_value_on(env, contexts, chooser);
}

GridOptimum brute_force_optimum(const SyntheticEnvSpec& env, std::span<const double> context,
                                std::size_t grid_resolution, std::size_t max_grid_points) {
  check_context(env, context);
  const auto& space = env.space;
  if (space.continuous_count() > 0 && grid_resolution < 2) {
    throw ValidationError("brute_force_optimum: resolution must be >= 2");
  }
  std::vector<std::vector<double>> axes(space.size());
  double total = 1.0;
  for (std::size_t i = 0; i < space.size(); ++i) {
    if (space.is_discrete(i)) {
      axes[i] = space.levels(i);
    } else {
      for (std::size_t k = 0; k < grid_resolution; ++k) {
        axes[i].push_back(space.from_unit(i, static_cast<double>(k) /
                                                 static_cast<double>(grid_resolution - 1)));
      }
      axes[i].back() = space.upper(i);
    }
    total *= static_cast<double>(axes[i].size());
  }
  if (total > static_cast<double>(max_grid_points)) {
    throw ValidationError("brute_force_optimum: grid of " + std::to_string(total) +
                          " points exceeds cap " + std::to_string(max_grid_points));
  }

  std::vector<std::size_t> idx(space.size(), 0);
  std::vector<double> a(space.size());
  GridOptimum best;
  best.value = -INFINITY;
  while (true) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = axes[i][idx[i]];
    const double v = bump_sum(env, context, a, nullptr);
    if (v > best.value) {
      best.value = v;
      best.action = a;
    }
    std::size_t d = 0;
    while (d < idx.size() && ++idx[d] == axes[d].size()) idx[d++] = 0;
    if (d == idx.size()) break;
  }
  return best;
}

}  // namespace cpopt
