#include "cpopt/evaluate.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "cpopt/io.hpp"
#include "cpopt/parallel.hpp"
#include "cpopt/rng.hpp"
#include "cpopt/text.hpp"

namespace cpopt {

using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

// ---------------------------------------------------------------- estimators

DmEstimate dm_estimate(const RewardEnsemble& ensemble, const std::vector<Context>& contexts,
                       const ActionChooser& chooser) {
  if (contexts.empty()) throw ValidationError("dm_estimate: need at least one context");
  DmEstimate est;
  est.per_context.reserve(contexts.size());
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    const auto a = chooser(contexts[i], i);
    const auto verdict = validate_action(ensemble.space(), a);
    if (!verdict.valid()) {
      throw ValidationError("dm_estimate: invalid action for context " + std::to_string(i) + ": " +
                            verdict.describe());
    }
    est.per_context.push_back(ensemble.predict(contexts[i], a).mean);
  }
  est.mean = mean_of(est.per_context);
  return est;
}

IpsEstimate clipped_ips_estimate(const DensityFn& target, const Dataset& dataset, double max_weight) {
  if (!(max_weight >= 1.0)) throw ValidationError("clipped_ips_estimate: M must be >= 1");
  if (dataset.size() == 0) throw ValidationError("ips_estimate: empty dataset");
  std::vector<double> terms;
  terms.reserve(dataset.size());
  IpsEstimate est;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& rec = dataset[i];
    if (rec.is_counterfactual() || !(rec.propensity > 0.0)) {
      throw ValidationError("ips_estimate: record " + std::to_string(i) +
                            " has no usable propensity (" + format_double(rec.propensity) + ")");
    }
    const double ratio = target(rec.context, rec.action) / rec.propensity;
    const double w = clip_weight(ratio, max_weight);
    if (ratio > max_weight) ++est.clipped;
    est.max_weight = std::max(est.max_weight, w);
    terms.push_back(w * rec.reward);
  }
  est.estimate = mean_of(terms);
  est.std_error = sample_std(terms) / std::sqrt(static_cast<double>(terms.size()));
  return est;
}

IpsEstimate ips_estimate(const DensityFn& target, const Dataset& dataset) {
  return clipped_ips_estimate(target, dataset, std::numeric_limits<double>::infinity());
}

IpsEstimate ips_estimate(const StochasticPolicy& policy, const Dataset& dataset) {
  return clipped_ips_estimate(policy, dataset, std::numeric_limits<double>::infinity());
}

IpsEstimate clipped_ips_estimate(const StochasticPolicy& policy, const Dataset& dataset,
                                 double max_weight) {
  return clipped_ips_estimate(
      [&](std::span<const double> s, std::span<const double> a) { return policy.density(s, a); },
      dataset, max_weight);
}

// ---------------------------------------------------------------- run config

std::string to_string(Profile p) { return p == Profile::kFull ? "full" : "fast"; }

Profile profile_from_string(const std::string& s) {
  if (s == "fast") return Profile::kFast;
  if (s == "full") return Profile::kFull;
  throw ValidationError("profile must be 'fast' or 'full', got '" + s + "'");
}

RunConfig default_run_config(Profile profile) {
  RunConfig cfg;
  if (profile == Profile::kFull) {
    cfg.eval.train_samples = 50000;
    cfg.eval.heldout = 10000;
  }
  return cfg;
}

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& want) {
  throw ValidationError("config " + key + ": expected " + want + ", got '" + value + "'");
}

double to_real(const std::string& key, const std::string& v) {
  if (v == "inf") return std::numeric_limits<double>::infinity();
  auto d = parse_double(trim(v));
  if (!d) bad_value(key, v, "a number");
  return *d;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  const auto t = trim(v);
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  if (ec != std::errc() || p != t.data() + t.size() || t.empty()) bad_value(key, v, "a non-negative integer");
  return out;
}

std::size_t to_size(const std::string& key, const std::string& v) {
  return static_cast<std::size_t>(to_u64(key, v));
}

bool to_bool(const std::string& key, const std::string& v) {
  const auto t = std::string(trim(v));
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  bad_value(key, v, "a boolean");
}

template <class T, class F>
std::vector<T> to_list(const std::string& key, const std::string& v, F item) {
  std::vector<T> out;
  for (auto part : split(v, ',')) {
    const std::string p(trim(part));
    if (!p.empty()) out.push_back(item(key, p));
  }
  if (out.empty()) bad_value(key, v, "a comma-separated list");
  return out;
}

std::string from_real(double v) { return std::isinf(v) ? "inf" : format_double(v); }

template <class T>
std::string join(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    if constexpr (std::is_floating_point_v<T>) {
      s += from_real(v[i]);
    } else {
      s += std::to_string(v[i]);
    }
  }
  return s;
}

struct KeySpec {
  std::string section;
  std::string name;
  std::string doc;
  std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define CPOPT_REAL(sec, nm, field, doc)                                                     \
  KeySpec{sec, nm, doc, [](RunConfig& c, const std::string& k, const std::string& v) {     \
            c.field = to_real(k, v);                                                        \
          },                                                                                \
          [](const RunConfig& c) { return from_real(c.field); }}
#define CPOPT_SIZE(sec, nm, field, doc)                                                     \
  KeySpec{sec, nm, doc, [](RunConfig& c, const std::string& k, const std::string& v) {     \
            c.field = to_size(k, v);                                                        \
          },                                                                                \
          [](const RunConfig& c) { return std::to_string(c.field); }}
#define CPOPT_U64(sec, nm, field, doc)                                                      \
  KeySpec{sec, nm, doc, [](RunConfig& c, const std::string& k, const std::string& v) {     \
            c.field = to_u64(k, v);                                                         \
          },                                                                                \
          [](const RunConfig& c) { return std::to_string(c.field); }}
#define CPOPT_BOOL(sec, nm, field, doc)                                                     \
  KeySpec{sec, nm, doc, [](RunConfig& c, const std::string& k, const std::string& v) {     \
            c.field = to_bool(k, v);                                                        \
          },                                                                                \
          [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); }}
#define CPOPT_SIZES(sec, nm, field, doc)                                                    \
  KeySpec{sec, nm, doc, [](RunConfig& c, const std::string& k, const std::string& v) {     \
            c.field = to_list<std::size_t>(k, v, to_size);                                  \
          },                                                                                \
          [](const RunConfig& c) { return join(c.field); }}
#define CPOPT_REALS(sec, nm, field, doc)                                                    \
  KeySpec{sec, nm, doc, [](RunConfig& c, const std::string& k, const std::string& v) {     \
            c.field = to_list<double>(k, v, to_real);                                       \
          },                                                                                \
          [](const RunConfig& c) { return join(c.field); }}

const std::vector<KeySpec>& key_table() {
  static const std::vector<KeySpec> table = {
      CPOPT_U64("", "seed", seed, "master seed; every stage derives its own stream from it"),

      CPOPT_SIZE("env", "context_dim", env.context_dim, "context dimension, contexts uniform on [0,1]^d"),
      CPOPT_SIZE("env", "bumps", env.bumps, "Gaussian bumps in the true reward surface"),
      CPOPT_REAL("env", "length_scale", env.length_scale, "bump length scale"),
      CPOPT_REAL("env", "noise_std", env.noise_std, "std of the Gaussian reward noise"),
      CPOPT_REAL("env", "logging_mix", env.logging_mix, "uniform mixture weight of the logging policy"),
      CPOPT_U64("env", "seed", env.seed, "seed of the environment itself (surface and logging policy)"),
      CPOPT_REAL("env", "weight_min", env.weight_min, "smallest bump weight"),
      CPOPT_REAL("env", "weight_max", env.weight_max, "largest bump weight"),
      CPOPT_REAL("env", "linear_scale", env.linear_scale, "magnitude of the linear reward term"),
      CPOPT_REAL("env", "logging_width", env.logging_width, "logging Gaussian width, fraction of dim range"),
      CPOPT_REAL("env", "logging_shift", env.logging_shift, "max context shift of the logging center, fraction of range"),

      CPOPT_SIZE("reward_model", "members", reward_model.members, "ensemble size K"),
      CPOPT_SIZES("reward_model", "hidden", reward_model.hidden, "hidden layer widths"),
      CPOPT_SIZE("reward_model", "epochs", reward_model.train.epochs, "training epochs per member"),
      CPOPT_SIZE("reward_model", "batch_size", reward_model.train.batch_size, "minibatch size"),
      CPOPT_REAL("reward_model", "step_size", reward_model.train.step_size, "SGD step size"),
      CPOPT_REAL("reward_model", "momentum", reward_model.train.momentum, "SGD momentum"),
      CPOPT_REAL("reward_model", "init_scale", reward_model.train.init_scale, "init range multiplier on 1/sqrt(fan_in)"),
      CPOPT_SIZE("reward_model", "threads", reward_model.threads, "member training threads, 0 = all cores"),

      CPOPT_BOOL("augment", "enabled", augment, "append pessimistic counterfactual samples before training"),
      CPOPT_SIZE("augment", "count_per_record", augmentation.count_per_record, "fictitious samples per record"),
      CPOPT_REAL("augment", "min_distance", augmentation.min_distance, "normalized L-inf distance threshold tau"),
      CPOPT_REAL("augment", "quantile", augmentation.pessimistic_quantile, "reward quantile q used as the label"),
      CPOPT_SIZE("augment", "max_attempts", augmentation.max_attempts, "rejection-sampling retry cap"),

      CPOPT_REAL("ga", "step_size", ga.step_size, "initial step alpha in unit-box coordinates"),
      CPOPT_SIZE("ga", "max_iters", ga.max_iters, "iteration cap per restart"),
      CPOPT_REAL("ga", "improvement_tol", ga.improvement_tol, "stop when an accepted step improves less"),
      CPOPT_SIZE("ga", "restarts", ga.restarts, "restarts used by the optimize command"),
      CPOPT_REAL("ga", "beta", ga.beta, "uncertainty penalty outside the beta sweep"),
      CPOPT_SIZE("ga", "max_halvings", ga.max_halvings, "backtracking halvings per iteration"),
      CPOPT_BOOL("ga", "refine_discrete", ga.refine_discrete, "coordinate ascent over discrete levels after snapping"),

      CPOPT_SIZES("policy", "hidden", policy.hidden, "policy trunk hidden widths"),
      CPOPT_REAL("policy", "clip", policy.oppg.clip, "importance weight clip M"),
      CPOPT_SIZE("policy", "epochs", policy.oppg.epochs, "OPPG epochs"),
      CPOPT_SIZE("policy", "batch_size", policy.oppg.batch_size, "OPPG minibatch size"),
      CPOPT_REAL("policy", "step_size", policy.oppg.step_size, "OPPG step size"),
      CPOPT_REAL("policy", "momentum", policy.oppg.momentum, "OPPG momentum"),

      CPOPT_SIZE("eval", "train_samples", eval.train_samples, "logged samples used for training"),
      CPOPT_SIZE("eval", "heldout", eval.heldout, "heldout samples used for evaluation"),
      CPOPT_SIZES("eval", "restart_grid", eval.restart_grid, "restart counts of the restart sweep"),
      CPOPT_REALS("eval", "beta_grid", eval.beta_grid, "penalties of the beta sweep"),
      CPOPT_SIZE("eval", "beta_restarts", eval.beta_restarts, "restarts per context in the beta sweep"),
      CPOPT_SIZE("eval", "hybrid_starts", eval.hybrid_starts, "policy-sampled starts of the hybrid method"),
      CPOPT_REALS("eval", "clip_grid", eval.clip_grid, "clip values M of the clip sweep"),
      CPOPT_SIZE("eval", "threads", eval.threads, "threads for per-context optimization, 0 = all cores"),
  };
  return table;
}

#undef CPOPT_REAL
#undef CPOPT_SIZE
#undef CPOPT_U64
#undef CPOPT_BOOL
#undef CPOPT_SIZES
#undef CPOPT_REALS

void validate_run_config(const RunConfig& c) {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ValidationError("config: " + what);
  };
  need(c.env.context_dim >= 1, "env.context_dim must be >= 1");
  need(c.space.size() >= 1, "space must have at least one dim");
  need(c.reward_model.members >= 1, "reward_model.members must be >= 1");
  need(c.augmentation.min_distance > 0.0, "augment.min_distance must be > 0");
  need(c.augmentation.pessimistic_quantile >= 0.0 && c.augmentation.pessimistic_quantile <= 0.5,
       "augment.quantile must lie in [0, 0.5]");
  need(c.ga.step_size > 0.0 && c.ga.improvement_tol > 0.0, "ga.step_size and ga.improvement_tol must be > 0");
  need(c.ga.restarts >= 1, "ga.restarts must be >= 1");
  need(c.ga.beta >= 0.0, "ga.beta must be >= 0");
  need(c.policy.oppg.clip >= 1.0, "policy.clip must be >= 1");
  need(c.eval.train_samples >= 1 && c.eval.heldout >= 1, "eval sample counts must be >= 1");
  need(c.eval.beta_restarts >= 1 && c.eval.hybrid_starts >= 1, "eval restart counts must be >= 1");
  for (auto r : c.eval.restart_grid) need(r >= 1, "eval.restart_grid entries must be >= 1");
  need(std::is_sorted(c.eval.restart_grid.begin(), c.eval.restart_grid.end()),
       "eval.restart_grid must be increasing");
  need(std::is_sorted(c.eval.beta_grid.begin(), c.eval.beta_grid.end()), "eval.beta_grid must be increasing");
  for (double b : c.eval.beta_grid) need(b >= 0.0, "eval.beta_grid entries must be >= 0");
  for (double m : c.eval.clip_grid) need(m >= 1.0, "eval.clip_grid entries must be >= 1");
}

}  // namespace

RunConfig parse_run_config(const std::string& text, Profile profile) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ParseError(e.line(), "", "config: " + e.message());
  }
  RunConfig cfg = default_run_config(profile);
  std::map<std::string, const KeySpec*> index;
  for (const auto& k : key_table()) index[k.section.empty() ? k.name : k.section + "." + k.name] = &k;

  for (const auto& [name, node] : tree) {
    if (node.empty()) {
      auto it = index.find(name);
      if (it == index.end() || !it->second->section.empty()) {
        throw ValidationError("config: unknown top-level key '" + name + "'");
      }
      it->second->set(cfg, name, node.data());
      continue;
    }
    if (name == "space") {
      std::map<std::size_t, DimSpec> dims;
      for (const auto& [key, value] : node) {
        if (key.rfind("dim_", 0) != 0) throw ValidationError("config: unknown key [space] " + key);
        const std::size_t i = to_size("space." + key, key.substr(4));
        try {
          dims.emplace(i, dim_from_string(value.data()));
        } catch (const Error& e) {
          throw ValidationError("config [space] " + key + ": " + e.what());
        }
      }
      std::vector<DimSpec> ordered;
      for (const auto& [i, d] : dims) {
        if (i != ordered.size()) throw ValidationError("config [space]: dims must be numbered 0..n-1");
        ordered.push_back(d);
      }
      if (!ordered.empty()) cfg.space = ActionSpace(std::move(ordered));
      continue;
    }
    for (const auto& [key, value] : node) {
      const std::string full = name + "." + key;
      auto it = index.find(full);
      if (it == index.end()) throw ValidationError("config: unknown key [" + name + "] " + key);
      it->second->set(cfg, full, value.data());
    }
  }
  validate_run_config(cfg);
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path, Profile profile) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), profile);
}

std::string run_config_to_ini(const RunConfig& cfg) {
  std::ostringstream os;
  std::string section;
  for (const auto& k : key_table()) {
    if (k.section != section) {
      section = k.section;
      os << "\n[" << section << "]\n";
    }
    os << "; " << k.doc << "\n" << k.name << " = " << k.get(cfg) << "\n";
    if (k.section == "env" && k.name == "logging_shift") {
      os << "\n[space]\n; one line per action dim: continuous <lo> <hi> | discrete <level> <level> ...\n";
      for (std::size_t i = 0; i < cfg.space.size(); ++i) {
        os << "dim_" << i << " = " << dim_to_string(cfg.space.dim(i)) << "\n";
      }
    }
  }
  return os.str();
}

// ---------------------------------------------------------------- pipeline

namespace {

template <class Fn>
auto stage(const char* name, std::uint64_t seed, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const std::exception& e) {
    throw Error(std::string("stage '") + name + "' failed (seed " + std::to_string(seed) + "): " + e.what());
  }
}

}  // namespace

RunData generate_run_data(const RunConfig& cfg) {
  auto env = make_synthetic_env(cfg.env, cfg.space);
  auto all = generate_dataset(env, cfg.eval.train_samples + cfg.eval.heldout, stream_seed(cfg.seed, Stream::kData));
  auto [train, heldout] = split_dataset(all, cfg.eval.heldout, stream_seed(cfg.seed, Stream::kSplit));
  return RunData{std::move(env), std::move(all), std::move(train), std::move(heldout)};
}

RewardEnsemble fit_reward_model(const RunConfig& cfg, const Dataset& train) {
  if (!cfg.augment) return train_ensemble(train, cfg.reward_model, stream_seed(cfg.seed, Stream::kEnsemble));
  const Dataset augmented =
      augment_counterfactual(train, cfg.augmentation, stream_seed(cfg.seed, Stream::kAugment));
  return train_ensemble(augmented, cfg.reward_model, stream_seed(cfg.seed, Stream::kEnsemble));
}

StochasticPolicy fit_policy(const RunConfig& cfg, const Dataset& train, double clip, OPPGTrace* trace) {
  StochasticPolicy policy(cfg.space, cfg.env.context_dim, cfg.policy.hidden,
                          stream_seed(cfg.seed, Stream::kPolicyInit));
  policy.init_from_marginals(train);
  OPPGConfig oc = cfg.policy.oppg;
  oc.clip = clip;
  oc.seed = stream_seed(cfg.seed, Stream::kPolicyTrain);
  return oppg_train(policy, train, oc, trace);
}

namespace {

// Fills the aggregate fields of a report from its per-context vectors.
void finish_report(MethodReport& r, const std::vector<double>& mu, const std::vector<double>& sigma,
                   const std::vector<double>& seconds) {
  const auto tv = summarize_values(r.per_context_true);
  r.true_mean = tv.mean;
  r.true_se = tv.std_error;
  r.predicted_mean = mean_of(r.per_context_predicted);
  r.predicted_std = sample_std(r.per_context_predicted);
  r.mean_mu = mean_of(mu);
  r.mean_sigma = mean_of(sigma);
  r.median_seconds = median(seconds);
}

struct Scored {
  std::vector<double> predicted, mu, sigma, truth, seconds;
  std::size_t iterations = 0;

  explicit Scored(std::size_t n) : predicted(n), mu(n), sigma(n), truth(n), seconds(n) {}

  MethodReport report(std::string method, std::size_t starts) const {
    MethodReport r;
    r.method = std::move(method);
    r.starts = starts;
    r.per_context_true = truth;
    r.per_context_predicted = predicted;
    r.total_iterations = iterations;
    finish_report(r, mu, sigma, seconds);
    return r;
  }
};

// Scores fixed actions (one per context) with the ensemble and the oracle.
void score_action(Scored& s, std::size_t i, const RunData& data, const RewardEnsemble& ensemble,
                  std::span<const double> context, std::span<const double> action, double beta) {
  const MeanStd ms = ensemble.predict(context, action);
  s.mu[i] = ms.mean;
  s.sigma[i] = ms.std;
  s.predicted[i] = ms.mean - beta * ms.std;
  s.truth[i] = true_reward(data.env, context, action);
}

}  // namespace

BenchmarkResult evaluate_methods(const RunConfig& cfg, const RunData& data,
                                 const RewardEnsemble& ensemble, const StochasticPolicy& policy) {
  BenchmarkResult out;
  const auto contexts = data.heldout.contexts();
  const std::size_t n = contexts.size();
  const std::size_t threads = cfg.eval.threads;
  const std::uint64_t seed = cfg.seed;
  nlohmann::json& timing = out.timing;

  // Model fit on the heldout log.
  {
    std::vector<double> se(ensemble.size(), 0.0);
    double se_ens = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& rec = data.heldout[i];
      const auto preds = ensemble.member_predictions(rec.context, rec.action);
      const double mu = mean_std(preds).mean;
      se_ens += (mu - rec.reward) * (mu - rec.reward);
      for (std::size_t k = 0; k < preds.size(); ++k) se[k] += (preds[k] - rec.reward) * (preds[k] - rec.reward);
    }
    out.ensemble_rmse = std::sqrt(se_ens / static_cast<double>(n));
    for (double v : se) out.member_rmse.push_back(std::sqrt(v / static_cast<double>(n)));
  }

  // Logging policy (fresh draws from pi0) and the recorded heldout actions.
  {
    Scored logging(n), logged(n);
    const std::uint64_t s0 = stream_seed(seed, Stream::kLoggingEval);
    for (std::size_t i = 0; i < n; ++i) {
      const auto t0 = Clock::now();
      Rng rng = make_rng(derive_seed(s0, i));
      const auto a = sample_logging_action(data.env, contexts[i], rng);
      logging.seconds[i] = seconds_since(t0);
      score_action(logging, i, data, ensemble, contexts[i], a, 0.0);
      score_action(logged, i, data, ensemble, contexts[i], data.heldout[i].action, 0.0);
    }
    out.logging = logging.report("logging", 0);
    out.logged_actions = logged.report("logged_actions", 0);
  }

  // Restart sweep: the largest restart count once, prefixes give the rest.
  std::vector<OptimizeDiagnostics> dm_diag(n);
  {
    const auto t0 = Clock::now();
    const std::size_t max_r = cfg.eval.restart_grid.empty() ? 1 : cfg.eval.restart_grid.back();
    GAConfig ga = cfg.ga;
    ga.restarts = max_r;
    ga.init_source = InitSource::kUniform;
    const std::uint64_t s0 = stream_seed(seed, Stream::kGa);
    parallel_for(n, threads, [&](std::size_t i) {
      GAConfig g = ga;
      g.seed = derive_seed(s0, i);
      dm_diag[i] = optimize_action(ensemble, contexts[i], g).diagnostics;
    });
    for (std::size_t k : cfg.eval.restart_grid) {
      Scored s(n);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t b = best_restart_among_first(dm_diag[i], k);
        score_action(s, i, data, ensemble, contexts[i], dm_diag[i].restarts[b].action, ga.beta);
        for (std::size_t r = 0; r < k; ++r) {
          s.seconds[i] += dm_diag[i].restarts[r].seconds;
          s.iterations += dm_diag[i].restarts[r].iterations;
        }
      }
      out.restart_sweep.push_back(s.report("dm_" + std::to_string(k), k));
    }
    timing["stage_seconds"]["restart_sweep"] = seconds_since(t0);
  }

  // Uncertainty penalty sweep.
  {
    const auto t0 = Clock::now();
    const std::uint64_t s0 = stream_seed(seed, Stream::kGa);
    for (double beta : cfg.eval.beta_grid) {
      Scored s(n);
      std::vector<std::size_t> iters(n);
      GAConfig ga = cfg.ga;
      ga.beta = beta;
      ga.restarts = cfg.eval.beta_restarts;
      ga.init_source = InitSource::kUniform;
      parallel_for(n, threads, [&](std::size_t i) {
        GAConfig g = ga;
        g.seed = derive_seed(s0, i);
        const auto res = optimize_action(ensemble, contexts[i], g);
        score_action(s, i, data, ensemble, contexts[i], res.action, beta);
        s.seconds[i] = res.diagnostics.seconds;
        iters[i] = res.diagnostics.total_iterations;
      });
      s.iterations = std::accumulate(iters.begin(), iters.end(), std::size_t{0});
      out.beta_sweep.push_back({beta, s.report("dm_beta", ga.restarts)});
    }
    timing["stage_seconds"]["beta_sweep"] = seconds_since(t0);
  }

  // Trained policy alone: one sample per context.
  {
    Scored s(n);
    const std::uint64_t s0 = stream_seed(seed, Stream::kPolicyEval);
    for (std::size_t i = 0; i < n; ++i) {
      const auto t0 = Clock::now();
      const auto a = policy.sample(contexts[i], derive_seed(s0, i)).first;
      s.seconds[i] = seconds_since(t0);
      score_action(s, i, data, ensemble, contexts[i], a, 0.0);
    }
    out.oppg = s.report("oppg", 0);
  }

  // Hybrid: GA from policy samples.
  {
    const auto t0 = Clock::now();
    Scored s(n);
    std::vector<std::size_t> iters(n);
    GAConfig ga = cfg.ga;
    ga.restarts = cfg.eval.hybrid_starts;
    ga.init_source = InitSource::kPolicy;
    const std::uint64_t s0 = stream_seed(seed, Stream::kHybrid);
    parallel_for(n, threads, [&](std::size_t i) {
      GAConfig g = ga;
      g.seed = derive_seed(s0, i);
      const auto res = optimize_action(ensemble, contexts[i], g, &policy);
      score_action(s, i, data, ensemble, contexts[i], res.action, ga.beta);
      s.seconds[i] = res.diagnostics.seconds;
      iters[i] = res.diagnostics.total_iterations;
    });
    s.iterations = std::accumulate(iters.begin(), iters.end(), std::size_t{0});
    out.hybrid = s.report("hybrid", ga.restarts);
    timing["stage_seconds"]["hybrid"] = seconds_since(t0);
  }

  if (!out.restart_sweep.empty()) {
    const auto& dm = out.restart_sweep.back();
    std::vector<double> diff(n);
    for (std::size_t i = 0; i < n; ++i) diff[i] = out.hybrid.per_context_true[i] - dm.per_context_true[i];
    out.hybrid_p10_gain = quantile(diff, 0.1);
  }

  // Clip sweep: retrain the policy for each M.
  {
    const auto t0 = Clock::now();
    const std::uint64_t s0 = stream_seed(seed, Stream::kPolicyEval);
    for (double m : cfg.eval.clip_grid) {
      OPPGTrace trace;
      const StochasticPolicy p = fit_policy(cfg, data.train, m, &trace);
      std::vector<double> truth(n);
      for (std::size_t i = 0; i < n; ++i) {
        truth[i] = true_reward(data.env, contexts[i], p.sample(contexts[i], derive_seed(s0, i)).first);
      }
      const auto tv = summarize_values(truth);
      const auto ips = ips_estimate(p, data.heldout);
      ClipRow row;
      row.clip = m;
      row.true_mean = tv.mean;
      row.true_se = tv.std_error;
      row.ips = ips.estimate;
      row.ips_se = ips.std_error;
      row.clipped_fraction = trace.samples ? static_cast<double>(trace.clipped) / static_cast<double>(trace.samples) : 0.0;
      row.max_weight = trace.batch_max_weight.empty()
                           ? 0.0
                           : *std::max_element(trace.batch_max_weight.begin(), trace.batch_max_weight.end());
      out.clip_sweep.push_back(row);
    }
    timing["stage_seconds"]["clip_sweep"] = seconds_since(t0);
  }

  auto method_time = [&](const MethodReport& r) { timing["median_seconds_per_context"][r.method] = r.median_seconds; };
  method_time(out.logging);
  for (const auto& r : out.restart_sweep) method_time(r);
  method_time(out.oppg);
  method_time(out.hybrid);
  return out;
}

const MethodReport& BenchmarkResult::dm(std::size_t restarts) const {
  for (const auto& r : restart_sweep) {
    if (r.starts == restarts) return r;
  }
  throw ValidationError("no restart-sweep row with " + std::to_string(restarts) + " restarts");
}

namespace {

nlohmann::json method_json(const MethodReport& r) {
  return {{"method", r.method},
          {"starts", r.starts},
          {"predicted_mean", r.predicted_mean},
          {"predicted_std", r.predicted_std},
          {"mean_mu", r.mean_mu},
          {"mean_sigma", r.mean_sigma},
          {"true_mean", r.true_mean},
          {"true_se", r.true_se},
          {"total_iterations", r.total_iterations}};
}

double relative_gain(double value, double base) { return (value - base) / std::abs(base); }

}  // namespace

nlohmann::json BenchmarkResult::summary(const RunConfig& cfg) const {
  nlohmann::json j;
  j["seed"] = cfg.seed;
  j["config"] = run_config_to_ini(cfg);
  j["reward_model"] = {{"heldout_rmse", ensemble_rmse}, {"member_heldout_rmse", member_rmse}};
  nlohmann::json methods = nlohmann::json::array();
  methods.push_back(method_json(logging));
  methods.push_back(method_json(logged_actions));
  for (const auto& r : restart_sweep) methods.push_back(method_json(r));
  methods.push_back(method_json(oppg));
  methods.push_back(method_json(hybrid));
  j["methods"] = std::move(methods);
  nlohmann::json betas = nlohmann::json::array();
  for (const auto& b : beta_sweep) {
    auto e = method_json(b.report);
    e["beta"] = b.beta;
    betas.push_back(std::move(e));
  }
  j["beta_sweep"] = std::move(betas);

  nlohmann::json checks;
  bool monotone = true;
  for (std::size_t i = 1; i < restart_sweep.size(); ++i) {
    monotone = monotone && restart_sweep[i].predicted_mean >= restart_sweep[i - 1].predicted_mean;
  }
  if (!restart_sweep.empty()) {
    monotone = monotone && restart_sweep.front().predicted_mean >= logged_actions.predicted_mean;
  }
  checks["restart_sweep_monotone"] = monotone;
  if (!restart_sweep.empty()) {
    const auto& dm = restart_sweep.back();
    const double dm_gain = dm.true_mean - logging.true_mean;
    const double hy_gain = hybrid.true_mean - logging.true_mean;
    checks["dm_true_gain"] = relative_gain(dm.true_mean, logging.true_mean);
    checks["oppg_true_gain"] = relative_gain(oppg.true_mean, logging.true_mean);
    checks["hybrid_true_gain"] = relative_gain(hybrid.true_mean, logging.true_mean);
    checks["hybrid_gain_fraction_of_dm"] = dm_gain != 0.0 ? hy_gain / dm_gain : 0.0;
    checks["hybrid_iteration_ratio"] =
        hybrid.total_iterations ? static_cast<double>(dm.total_iterations) / static_cast<double>(hybrid.total_iterations) : 0.0;
  }
  checks["hybrid_p10_gain_vs_dm"] = hybrid_p10_gain;
  j["checks"] = std::move(checks);
  return j;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
}

std::string fmt(double v) { return format_double(v); }

}  // namespace

void write_benchmark_outputs(const BenchmarkResult& r, const RunConfig& cfg, const Dataset& data,
                             const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_dataset(data, dir / "dataset.csv");

  {
    std::ostringstream os;
    os << "method,restarts,predicted_mean,predicted_std,mean_mu,mean_sigma,true_mean,true_se,total_iterations\n";
    auto row = [&](const MethodReport& m) {
      os << m.method << "," << m.starts << "," << fmt(m.predicted_mean) << "," << fmt(m.predicted_std) << ","
         << fmt(m.mean_mu) << "," << fmt(m.mean_sigma) << "," << fmt(m.true_mean) << "," << fmt(m.true_se)
         << "," << m.total_iterations << "\n";
    };
    row(r.logging);
    row(r.logged_actions);
    for (const auto& m : r.restart_sweep) row(m);
    write_text(dir / "restart_sweep.csv", os.str());
  }
  {
    std::ostringstream os;
    os << "beta,restarts,mean_mu,mean_sigma,predicted_mean,true_mean,true_se,total_iterations\n";
    for (const auto& b : r.beta_sweep) {
      const auto& m = b.report;
      os << fmt(b.beta) << "," << m.starts << "," << fmt(m.mean_mu) << "," << fmt(m.mean_sigma) << ","
         << fmt(m.predicted_mean) << "," << fmt(m.true_mean) << "," << fmt(m.true_se) << ","
         << m.total_iterations << "\n";
    }
    write_text(dir / "beta_sweep.csv", os.str());
  }
  {
    std::ostringstream os;
    os << "method,starts,predicted_mean,mean_sigma,true_mean,true_se,true_gain_vs_logging,total_iterations\n";
    auto row = [&](const MethodReport& m) {
      os << m.method << "," << m.starts << "," << fmt(m.predicted_mean) << "," << fmt(m.mean_sigma) << ","
         << fmt(m.true_mean) << "," << fmt(m.true_se) << "," << fmt(m.true_mean - r.logging.true_mean) << ","
         << m.total_iterations << "\n";
    };
    row(r.logging);
    if (!r.restart_sweep.empty()) row(r.restart_sweep.back());
    row(r.oppg);
    row(r.hybrid);
    write_text(dir / "hybrid_comparison.csv", os.str());
  }
  {
    std::vector<const MethodReport*> cols = {&r.logging, &r.logged_actions};
    for (const auto& m : r.restart_sweep) cols.push_back(&m);
    cols.push_back(&r.oppg);
    cols.push_back(&r.hybrid);
    std::ostringstream os;
    os << "context";
    for (const auto* m : cols) os << "," << m->method << "_true," << m->method << "_predicted";
    os << "\n";
    for (std::size_t i = 0; i < r.logging.per_context_true.size(); ++i) {
      os << i;
      for (const auto* m : cols) os << "," << fmt(m->per_context_true[i]) << "," << fmt(m->per_context_predicted[i]);
      os << "\n";
    }
    write_text(dir / "per_context_values.csv", os.str());
  }
  {
    std::ostringstream os;
    os << "clip,true_mean,true_se,ips_estimate,ips_se,clipped_fraction,max_weight\n";
    for (const auto& c : r.clip_sweep) {
      os << fmt(c.clip) << "," << fmt(c.true_mean) << "," << fmt(c.true_se) << "," << fmt(c.ips) << ","
         << fmt(c.ips_se) << "," << fmt(c.clipped_fraction) << "," << fmt(c.max_weight) << "\n";
    }
    write_text(dir / "clip_sweep.csv", os.str());
  }
  write_text(dir / "summary.json", r.summary(cfg).dump(2) + "\n");
  write_text(dir / "timing.json", r.timing.dump(2) + "\n");
}

BenchmarkResult run_benchmark(const RunConfig& cfg, const std::optional<std::filesystem::path>& out_dir) {
  validate_run_config(cfg);
  const auto t0 = Clock::now();
  auto data = stage("generate", cfg.seed, [&] { return generate_run_data(cfg); });
  const double t_data = seconds_since(t0);
  auto t1 = Clock::now();
  auto ensemble = stage("train-reward", cfg.seed, [&] { return fit_reward_model(cfg, data.train); });
  const double t_ens = seconds_since(t1);
  t1 = Clock::now();
  auto policy = stage("train-policy", cfg.seed, [&] { return fit_policy(cfg, data.train, cfg.policy.oppg.clip); });
  const double t_pol = seconds_since(t1);
  auto result = stage("evaluate", cfg.seed, [&] { return evaluate_methods(cfg, data, ensemble, policy); });
  result.timing["stage_seconds"]["generate"] = t_data;
  result.timing["stage_seconds"]["train_reward"] = t_ens;
  result.timing["stage_seconds"]["train_policy"] = t_pol;
  result.timing["total_seconds"] = seconds_since(t0);
  if (out_dir) stage("report", cfg.seed, [&] { write_benchmark_outputs(result, cfg, data.all, *out_dir); });
  return result;
}

}  // namespace cpopt
