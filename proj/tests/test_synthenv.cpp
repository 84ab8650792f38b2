#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <numbers>
#include <sstream>

#include "cpopt/synthenv.hpp"
#include "cpopt/truncnorm.hpp"

using namespace cpopt;

namespace {

// One context dim, one continuous action dim, a single bump.
SyntheticEnvSpec one_bump_env(std::vector<double> center, double length_scale = 0.5,
                              std::vector<double> linear = {}) {
  SyntheticEnvSpec env;
  env.context_dim = 1;
  env.space = ActionSpace({ContinuousDim{0.0, 1.0}});
  env.length_scale = length_scale;
  env.bump_weights = {1.0};
  env.bump_centers = {std::move(center)};
  env.linear_term = std::move(linear);
  env.noise_std = 0.0;
  env.logging.mix = 0.1;
  env.logging.heads = {LoggingContinuousHead{0.5, {0.2}, 0.2}};
  validate_env(env);
  return env;
}

SyntheticEnvSpec discrete_env() {
  SyntheticEnvSpec env;
  env.context_dim = 1;
  env.space = ActionSpace({DiscreteDim{{0.0, 0.5, 1.0}}, DiscreteDim{{0.0, 1.0, 2.0}}});
  env.length_scale = 0.6;
  env.bump_weights = {1.0, 2.0};
  env.bump_centers = {{0.2, 0.0, 2.0}, {0.9, 1.0, 0.0}};
  env.noise_std = 0.0;
  env.logging.mix = 0.2;
  env.logging.heads = {LoggingDiscreteHead{{0.2, 0.3, 0.5}}, LoggingDiscreteHead{{0.6, 0.3, 0.1}}};
  validate_env(env);
  return env;
}

SyntheticEnvSpec default_env() { return make_synthetic_env(EnvParams{}, ActionSpace::default_benchmark()); }

double phi_cdf(double z) { return 0.5 * (1.0 + std::erf(z / std::sqrt(2.0))); }

// Truncated normal density written out from scratch.
double tn_density(double x, double mean, double sigma, double lo, double hi) {
  const double z = (x - mean) / sigma;
  const double pdf = std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * std::numbers::pi));
  return pdf / (phi_cdf((hi - mean) / sigma) - phi_cdf((lo - mean) / sigma));
}

double oracle_logging_density(const SyntheticEnvSpec& env, std::span<const double> s,
                              std::span<const double> a) {
  double p = 1.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double eps = env.logging.mix;
    if (env.space.is_discrete(i)) {
      const auto& levels = env.space.levels(i);
      const auto& w = std::get<LoggingDiscreteHead>(env.logging.heads[i]).weights;
      const auto l = static_cast<std::size_t>(std::find(levels.begin(), levels.end(), a[i]) - levels.begin());
      p *= (1.0 - eps) * w.at(l) + eps / static_cast<double>(levels.size());
    } else {
      const auto& h = std::get<LoggingContinuousHead>(env.logging.heads[i]);
      double center = h.base;
      for (std::size_t k = 0; k < s.size(); ++k) center += h.slope[k] * s[k];
      const double lo = env.space.lower(i), hi = env.space.upper(i);
      p *= (1.0 - eps) * tn_density(a[i], center, h.width, lo, hi) + eps / (hi - lo);
    }
  }
  return p;
}

}  // namespace

TEST_CASE("true_reward at a bump center") {
  const auto env = one_bump_env({0.3, 0.6}, 0.5, {0.1, 0.2});
  const std::vector<double> s{0.3}, a{0.6};
  CHECK(true_reward(env, s, a) == doctest::Approx(1.0 + 0.1 * 0.3 + 0.2 * 0.6).epsilon(1e-14));
}

TEST_CASE("true_reward decays away from the bump") {
  const auto env = one_bump_env({0.0, 0.0}, 0.01);
  CHECK(true_reward(env, std::vector<double>{1.0}, std::vector<double>{1.0}) < 1e-300);
}

TEST_CASE("true_reward rejects invalid actions") {
  const auto env = discrete_env();
  CHECK_THROWS_AS(true_reward(env, std::vector<double>{0.5}, std::vector<double>{0.25, 1.0}), ValidationError);
  CHECK_THROWS_AS(true_reward(env, std::vector<double>{0.5}, std::vector<double>{0.5}), ShapeError);
}

TEST_CASE("analytic gradient of the true reward matches central differences") {
  const auto env = default_env();
  Rng rng = make_rng(99);
  const double h = 1e-5;
  for (int trial = 0; trial < 20; ++trial) {
    const auto s = sample_context(env, rng);
    std::vector<double> a(env.space.size());
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = uniform(rng, env.space.lower(i), env.space.upper(i));
    const auto g = true_reward_gradient(env, s, a);
    REQUIRE(g.size() == s.size() + a.size());
    for (std::size_t j = 0; j < g.size(); ++j) {
      auto sp = s, sm = s;
      auto ap = a, am = a;
      if (j < s.size()) {
        sp[j] += h;
        sm[j] -= h;
      } else {
        ap[j - s.size()] += h;
        am[j - s.size()] -= h;
      }
      const double fd = (true_reward_relaxed(env, sp, ap) - true_reward_relaxed(env, sm, am)) / (2 * h);
      const double scale = std::max(std::abs(fd), 1e-3);
      CHECK(std::abs(fd - g[j]) / scale < 1e-6);
    }
  }
}

TEST_CASE("true reward stays within its bound") {
  const auto env = default_env();
  const double bound = true_reward_bound(env);
  const auto data = generate_dataset(env, 2000, 4);
  for (const auto& r : data.records()) CHECK(std::abs(true_reward(env, r.context, r.action)) <= bound);
}

TEST_CASE("sample_interaction") {
  auto env = default_env();
  Rng rng = make_rng(1);
  const auto s = sample_context(env, rng);

  SUBCASE("no noise means the reward is the true reward") {
    env.noise_std = 0.0;
    const auto rec = sample_interaction(env, s, 3);
    CHECK(rec.reward == true_reward(env, rec.context, rec.action));
  }
  SUBCASE("propensity respects the mixture floor and the closed form") {
    const double floor = logging_density_floor(env);
    for (std::uint64_t seed = 0; seed < 500; ++seed) {
      const auto rec = sample_interaction(env, s, seed);
      CHECK(rec.propensity >= floor);
      const double oracle = oracle_logging_density(env, rec.context, rec.action);
      CHECK(std::abs(rec.propensity - oracle) / oracle < 1e-12);
    }
  }
  SUBCASE("same seed, same record") { CHECK(sample_interaction(env, s, 8) == sample_interaction(env, s, 8)); }
}

TEST_CASE("discrete logging frequencies match the configured probabilities") {
  const auto env = discrete_env();
  const std::vector<double> s{0.4};
  const std::size_t n = 100000;
  std::vector<std::size_t> counts(3, 0);
  Rng rng = make_rng(2024);
  for (std::size_t t = 0; t < n; ++t) {
    const auto a = sample_logging_action(env, s, rng);
    ++counts[static_cast<std::size_t>(std::lround(a[0] / 0.5))];
  }
  const double eps = env.logging.mix;
  const std::vector<double> w{0.2, 0.3, 0.5};
  for (std::size_t l = 0; l < 3; ++l) {
    const double p = (1 - eps) * w[l] + eps / 3.0;
    const double se = std::sqrt(p * (1 - p) / static_cast<double>(n));
    CHECK(std::abs(static_cast<double>(counts[l]) / static_cast<double>(n) - p) < 3 * se);
    CHECK(logging_dim_density(env, 0, s, 0.5 * static_cast<double>(l)) == doctest::Approx(p).epsilon(1e-14));
  }
}

TEST_CASE("continuous logging density integrates to one") {
  const auto env = default_env();
  Rng rng = make_rng(5);
  const auto s = sample_context(env, rng);
  for (std::size_t i = 0; i < env.space.size(); ++i) {
    if (env.space.is_discrete(i)) {
      double total = 0.0;
      for (double l : env.space.levels(i)) total += logging_dim_density(env, i, s, l);
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
      continue;
    }
    // Composite Simpson on the box.
    const double lo = env.space.lower(i), hi = env.space.upper(i);
    const int m = 20000;
    const double h = (hi - lo) / m;
    double acc = logging_dim_density(env, i, s, lo) + logging_dim_density(env, i, s, hi);
    for (int k = 1; k < m; ++k) acc += (k % 2 ? 4.0 : 2.0) * logging_dim_density(env, i, s, lo + k * h);
    CHECK(acc * h / 3.0 == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("importance ratio of the uniform policy is bounded by 1/eps per dim") {
  const auto env = default_env();
  const auto data = generate_dataset(env, 3000, 12);
  double uniform_density = 1.0;
  for (std::size_t i = 0; i < env.space.size(); ++i) {
    uniform_density /= env.space.is_discrete(i) ? static_cast<double>(env.space.levels(i).size()) : env.space.range(i);
  }
  const double bound = std::pow(1.0 / env.logging.mix, static_cast<double>(env.space.size()));
  for (const auto& r : data.records()) {
    CHECK(uniform_density / r.propensity <= bound * (1 + 1e-12));
    for (std::size_t i = 0; i < env.space.size(); ++i) {
      const double u = env.space.is_discrete(i) ? 1.0 / static_cast<double>(env.space.levels(i).size())
                                                 : 1.0 / env.space.range(i);
      CHECK(u / logging_dim_density(env, i, r.context, r.action[i]) <= (1.0 / env.logging.mix) * (1 + 1e-12));
    }
  }
}

TEST_CASE("generate_dataset") {
  const auto env = default_env();
  const auto d = generate_dataset(env, 5, 77);
  CHECK(d.size() == 5);
  for (const auto& r : d.records()) {
    CHECK(validate_action(env.space, r.action).valid());
    CHECK(r.propensity > 0.0);
  }
  std::ostringstream a, b;
  write_dataset_csv(generate_dataset(env, 200, 77), a);
  write_dataset_csv(generate_dataset(env, 200, 77), b);
  CHECK(a.str() == b.str());
  // Record i depends only on (seed, i).
  CHECK(generate_dataset(env, 3, 77).records() ==
        std::vector<LoggedInteraction>(d.records().begin(), d.records().begin() + 3));
}

TEST_CASE("mean logged reward matches an independent Monte-Carlo oracle") {
  const auto env = default_env();
  const auto d = generate_dataset(env, 100000, 31);
  const auto rewards = d.rewards();
  const double logged = std::accumulate(rewards.begin(), rewards.end(), 0.0) / static_cast<double>(rewards.size());
  // Oracle: 10^6 fresh (s, a ~ pi0) draws on a separate stream, noiseless.
  Rng rng = make_rng(0xfeed);
  double acc = 0.0;
  const int m = 1000000;
  for (int t = 0; t < m; ++t) {
    const auto s = sample_context(env, rng);
    const auto a = sample_logging_action(env, s, rng);
    acc += true_reward(env, s, a);
  }
  CHECK(logged == doctest::Approx(acc / m).epsilon(0.01));
}

TEST_CASE("true_value") {
  const auto env = default_env();
  Rng rng = make_rng(4);
  const auto s = sample_context(env, rng);
  const auto a = sample_logging_action(env, s, rng);
  SUBCASE("one context gives the true reward exactly") {
    const auto v = true_value_on(env, {s}, [&](std::span<const double>, std::size_t) { return a; });
    CHECK(v.mean == true_reward(env, s, a));
    CHECK(v.std_error == 0.0);
  }
  SUBCASE("deterministic") {
    auto chooser = [&](std::span<const double>, std::size_t) { return a; };
    CHECK(true_value(env, chooser, 300, 9).mean == true_value(env, chooser, 300, 9).mean);
  }
  SUBCASE("invalid choice names the context") {
    auto bad = [&](std::span<const double>, std::size_t i) {
      auto out = a;
      if (i == 7) out[2] = 0.25;
      return out;
    };
    try {
      true_value(env, bad, 20, 1);
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("context 7") != std::string::npos);
    }
  }
}

TEST_CASE("optimal chooser on a single-bump env reaches the analytic maximum") {
  // R*(s, a) = exp(-|[s;a] - c|^2 / (2 l^2)) with c inside the box; the best
  // action is c_a for every s, so J* = prod_j E exp(-(s_j - c_j)^2 / (2 l^2)).
  SyntheticEnvSpec env;
  env.context_dim = 3;
  env.space = ActionSpace({ContinuousDim{0.0, 1.0}, ContinuousDim{-1.0, 1.0}});
  env.length_scale = 0.4;
  env.bump_weights = {1.0};
  env.bump_centers = {{0.2, 0.5, 0.9, 0.3, -0.4}};
  env.logging.mix = 0.5;
  env.logging.heads = {LoggingContinuousHead{0.5, {0, 0, 0}, 0.3}, LoggingContinuousHead{0.0, {0, 0, 0}, 0.5}};
  validate_env(env);
  double analytic = 1.0;
  const double l = env.length_scale;
  for (std::size_t j = 0; j < 3; ++j) {
    const double c = env.bump_centers[0][j];
    analytic *= l * std::sqrt(2 * std::numbers::pi) * (phi_cdf((1 - c) / l) - phi_cdf(-c / l));
  }
  const auto v = true_value(env, [](std::span<const double>, std::size_t) { return std::vector<double>{0.3, -0.4}; },
                            20000, 3);
  CHECK(std::abs(v.mean - analytic) < 3 * v.std_error);
}

TEST_CASE("brute_force_optimum") {
  SUBCASE("single bump in one continuous dim") {
    const auto env = one_bump_env({0.5, 0.37}, 0.3);
    const std::vector<double> s{0.5};
    const std::size_t res = 101;
    const auto opt = brute_force_optimum(env, s, res);
    CHECK(std::abs(opt.action[0] - 0.37) <= 1.0 / (res - 1));
  }
  SUBCASE("pure discrete space equals max over enumeration") {
    const auto env = discrete_env();
    const std::vector<double> s{0.7};
    double best = -1e300;
    for (double a0 : {0.0, 0.5, 1.0}) {
      for (double a1 : {0.0, 1.0, 2.0}) best = std::max(best, true_reward(env, s, std::vector<double>{a0, a1}));
    }
    CHECK(brute_force_optimum(env, s, 2).value == best);
  }
  SUBCASE("finer nested grids never lose value") {
    SyntheticEnvSpec env = one_bump_env({0.1, 0.77}, 0.2);
    env.space = ActionSpace({ContinuousDim{0.0, 1.0}, DiscreteDim{{0.0, 1.0}}});
    env.bump_centers = {{0.1, 0.77, 0.3}};
    env.logging.heads.push_back(LoggingDiscreteHead{{0.5, 0.5}});
    validate_env(env);
    const std::vector<double> s{0.4};
    double prev = -1e300;
    for (std::size_t r : {3u, 5u, 9u, 17u, 33u}) {
      const double v = brute_force_optimum(env, s, r).value;
      CHECK(v >= prev);
      prev = v;
    }
  }
  SUBCASE("grid cap") {
    const auto env = default_env();
    Rng rng = make_rng(1);
    CHECK_THROWS_AS(brute_force_optimum(env, sample_context(env, rng), 5), ValidationError);
  }
}
