#include "cpopt/actionopt.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "cpopt/rng.hpp"
#include "cpopt/text.hpp"

namespace cpopt {

namespace {

std::string dump(std::span<const double> v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + format_double(v[i]);
  return s + "]";
}

void require_finite(const ObjectiveValue& ov, std::span<const double> at, std::size_t iter) {
  bool ok = std::isfinite(ov.value);
  for (double g : ov.grad) ok = ok && std::isfinite(g);
  if (!ok) {
    throw NumericalError("gradient ascent: non-finite objective or gradient at iteration " +
                         std::to_string(iter) + ", iterate " + dump(at));
  }
}

double unit_to_action(const ActionSpace& space, std::size_t i, double u) {
  if (u <= 0.0) return space.lower(i);
  if (u >= 1.0) return space.upper(i);
  return space.from_unit(i, u);
}

}  // namespace

std::string to_string(InitSource s) { return s == InitSource::kPolicy ? "policy" : "uniform"; }

InitSource init_source_from_string(const std::string& s) {
  if (s == "uniform") return InitSource::kUniform;
  if (s == "policy") return InitSource::kPolicy;
  throw ValidationError("init_source must be 'uniform' or 'policy', got '" + s + "'");
}

AscentResult gradient_ascent(const Objective& objective, const ActionSpace& space,
                             std::span<const double> a0, const GAConfig& cfg) {
  if (a0.size() != space.size()) throw ShapeError("gradient ascent: start point has wrong length");
  if (!(cfg.step_size > 0.0) || !(cfg.improvement_tol > 0.0)) {
    throw ValidationError("gradient ascent: step_size and improvement_tol must be positive");
  }
  const std::size_t n = space.size();
  std::vector<double> u(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double slack = 1e-12 * std::max(1.0, space.range(i));
    if (!(a0[i] >= space.lower(i) - slack && a0[i] <= space.upper(i) + slack)) {
      throw ValidationError("gradient ascent: start point leaves the relaxed box in dim " +
                            std::to_string(i));
    }
    u[i] = std::clamp(space.to_unit(i, a0[i]), 0.0, 1.0);
  }

  AscentResult res;
  res.action.assign(a0.begin(), a0.end());
  ObjectiveValue current = objective(res.action);
  if (current.grad.size() != n) throw ShapeError("gradient ascent: objective gradient has wrong length");
  require_finite(current, res.action, 0);
  res.accepted_values.push_back(current.value);

  std::vector<double> g(n), cand_u(n), cand_a(n);
  while (res.iterations < cfg.max_iters) {
    ++res.iterations;
    bool zero = true;
    for (std::size_t i = 0; i < n; ++i) {
      g[i] = current.grad[i] * space.range(i);
      zero = zero && g[i] == 0.0;
    }
    if (zero) break;

    double step = cfg.step_size;
    bool accepted = false;
    ObjectiveValue next;
    for (std::size_t h = 0; h <= cfg.max_halvings; ++h, step *= 0.5) {
      bool moved = false;
      for (std::size_t i = 0; i < n; ++i) {
        cand_u[i] = std::clamp(u[i] + step * g[i], 0.0, 1.0);
        moved = moved || cand_u[i] != u[i];
        cand_a[i] = unit_to_action(space, i, cand_u[i]);
      }
      if (!moved) break;
      next = objective(cand_a);
      require_finite(next, cand_a, res.iterations);
      if (next.value > current.value) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;

    const double improvement = next.value - current.value;
    u = cand_u;
    res.action = cand_a;
    current = std::move(next);
    res.accepted_values.push_back(current.value);
    if (improvement < cfg.improvement_tol) break;
  }
  res.value = current.value;
  return res;
}

std::vector<double> snap_discrete(const ActionSpace& space, std::span<const double> action) {
  if (action.size() != space.size()) throw ShapeError("snap_discrete: length mismatch");
  std::vector<double> out(action.begin(), action.end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (space.is_discrete(i)) {
      const auto& levels = space.levels(i);
      double best = levels.front();
      double best_d = std::abs(out[i] - best);
      for (double l : levels) {
        const double d = std::abs(out[i] - l);
        if (d < best_d) {
          best = l;
          best_d = d;
        }
      }
      out[i] = best;
    } else {
      out[i] = std::clamp(out[i], space.lower(i), space.upper(i));
    }
  }
  return out;
}

OptimizeResult optimize_action(const RewardEnsemble& ensemble, std::span<const double> context,
                               const GAConfig& cfg, const StochasticPolicy* policy) {
  using Clock = std::chrono::steady_clock;
  if (context.size() != ensemble.context_dim()) throw ShapeError("optimize_action: context length");
  if (cfg.restarts == 0) throw ValidationError("optimize_action: restarts must be >= 1");
  if (!(cfg.beta >= 0.0)) throw ValidationError("optimize_action: beta must be >= 0");
  if (cfg.init_source == InitSource::kPolicy && policy == nullptr) {
    throw ValidationError("optimize_action: hybrid initialization requires a policy");
  }
  const auto& space = ensemble.space();
  const Objective objective = [&](std::span<const double> a) {
    auto pv = ensemble.penalized_relaxed(context, a, cfg.beta);
    return ObjectiveValue{pv.value, std::move(pv.grad_action)};
  };
  auto value_at = [&](std::span<const double> a) {
    return ensemble.penalized_value_relaxed(context, a, cfg.beta);
  };

  OptimizeResult result;
  auto& diag = result.diagnostics;
  const auto all_start = Clock::now();
  for (std::size_t r = 0; r < cfg.restarts; ++r) {
    const auto start = Clock::now();
    const std::uint64_t seed = derive_seed(cfg.seed, r);
    RestartRecord rec;
    if (cfg.init_source == InitSource::kPolicy) {
      rec.initial = policy->sample(context, seed).first;
      rec.from_policy = true;
    } else {
      Rng rng = make_rng(seed);
      rec.initial.resize(space.size());
      for (std::size_t i = 0; i < space.size(); ++i) {
        rec.initial[i] = uniform(rng, space.lower(i), space.upper(i));
      }
    }
    auto ascent = gradient_ascent(objective, space, rec.initial, cfg);
    rec.initial_value = ascent.accepted_values.front();
    rec.relaxed = ascent.action;
    rec.relaxed_value = ascent.value;
    rec.iterations = ascent.iterations;
    rec.accepted_values = std::move(ascent.accepted_values);

    rec.action = snap_discrete(space, rec.relaxed);
    rec.value = value_at(rec.action);
    if (cfg.refine_discrete && space.discrete_count() > 0) {
      for (int sweep = 0; sweep < 10; ++sweep) {
        bool improved = false;
        for (std::size_t i = 0; i < space.size(); ++i) {
          if (!space.is_discrete(i)) continue;
          const double keep = rec.action[i];
          double best_level = keep;
          for (double level : space.levels(i)) {
            if (level == keep) continue;
            rec.action[i] = level;
            const double v = value_at(rec.action);
            if (v > rec.value) {
              rec.value = v;
              best_level = level;
              improved = true;
            }
          }
          rec.action[i] = best_level;
        }
        if (!improved) break;
      }
    }
    rec.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    diag.total_iterations += rec.iterations;
    diag.restarts.push_back(std::move(rec));
  }
  diag.best_index = best_restart_among_first(diag, diag.restarts.size());
  diag.seconds = std::chrono::duration<double>(Clock::now() - all_start).count();
  result.action = diag.restarts[diag.best_index].action;
  result.predicted_value = diag.restarts[diag.best_index].value;
  return result;
}

std::size_t best_restart_among_first(const OptimizeDiagnostics& diagnostics, std::size_t k) {
  if (k == 0 || k > diagnostics.restarts.size()) {
    throw ValidationError("best_restart_among_first: k out of range");
  }
  std::size_t best = 0;
  for (std::size_t r = 1; r < k; ++r) {
    if (diagnostics.restarts[r].value > diagnostics.restarts[best].value) best = r;
  }
  return best;
}

nlohmann::json diagnostics_to_json(const OptimizeDiagnostics& diagnostics, bool include_timing) {
  nlohmann::json j;
  j["best_index"] = diagnostics.best_index;
  j["total_iterations"] = diagnostics.total_iterations;
  if (include_timing) j["seconds"] = diagnostics.seconds;
  nlohmann::json restarts = nlohmann::json::array();
  for (std::size_t r = 0; r < diagnostics.restarts.size(); ++r) {
    const auto& rec = diagnostics.restarts[r];
    nlohmann::json e;
    e["restart"] = r;
    e["init"] = rec.from_policy ? "policy" : "uniform";
    e["initial"] = rec.initial;
    e["initial_value"] = rec.initial_value;
    e["relaxed_value"] = rec.relaxed_value;
    e["value"] = rec.value;
    e["action"] = rec.action;
    e["iterations"] = rec.iterations;
    if (include_timing) e["seconds"] = rec.seconds;
    restarts.push_back(std::move(e));
  }
  j["restarts"] = std::move(restarts);
  return j;
}

}  // namespace cpopt
