#include <doctest.h>

#include <cmath>
#include <sstream>

#include "cpopt/policy.hpp"
#include "cpopt/rng.hpp"
#include "cpopt/truncnorm.hpp"

using namespace cpopt;

namespace {

StochasticPolicy uniform_discrete_policy() {
  StochasticPolicy p(ActionSpace({DiscreteDim{{0.0, 1.0, 2.0, 3.0}}}), 1, {4}, 1);
  p.head().weight.setZero();
  p.head().bias.setZero();
  return p;
}

// One constant context, one discrete dim with 3 levels, each level logged
// once under a uniform logging policy; reward = level index + 1.
Dataset toy_log(std::size_t copies = 1) {
  std::vector<LoggedInteraction> recs;
  for (std::size_t c = 0; c < copies; ++c) {
    for (int l = 0; l < 3; ++l) recs.push_back({{1.0}, {static_cast<double>(l)}, l + 1.0, 1.0 / 3.0});
  }
  return Dataset(ActionSpace({DiscreteDim{{0.0, 1.0, 2.0}}}), 1, std::move(recs));
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

}  // namespace

TEST_CASE("clip_weight") {
  CHECK(clip_weight(0.5, 10) == 0.5);
  CHECK(clip_weight(50, 10) == 10);
  CHECK(clip_weight(1, 1) == 1);
  CHECK_THROWS_AS(clip_weight(-0.1, 10), ValidationError);
}

TEST_CASE("uniform categorical head") {
  const auto p = uniform_discrete_policy();
  const std::vector<double> s{0.3};
  CHECK(p.log_density(s, std::vector<double>{2.0}) == doctest::Approx(std::log(0.25)).epsilon(1e-14));
  CHECK_THROWS_AS(p.log_density(s, std::vector<double>{2.5}), ValidationError);

  std::vector<std::size_t> counts(4, 0);
  const std::size_t n = 100000;
  for (std::size_t t = 0; t < n; ++t) ++counts[static_cast<std::size_t>(p.sample(s, derive_seed(5, t)).first[0])];
  const double se = std::sqrt(0.25 * 0.75 / static_cast<double>(n));
  for (auto c : counts) CHECK(std::abs(static_cast<double>(c) / static_cast<double>(n) - 0.25) < 3 * se);
}

TEST_CASE("joint log density is the sum of per-dim terms") {
  const ActionSpace space({ContinuousDim{0.0, 2.0}, DiscreteDim{{0.0, 1.0, 5.0}}});
  const StochasticPolicy p(space, 2, {8, 8}, 4);
  const std::vector<double> s{0.1, 0.8}, a{1.3, 5.0};
  const auto params = p.dim_params(s);
  const auto& c = params[0].continuous;
  const TruncatedNormal tn{c.mean, c.sigma, c.lo, c.hi};
  const double expected = tn.log_pdf(1.3) + std::log(params[1].probabilities[2]);
  CHECK(p.log_density(s, a) == doctest::Approx(expected).epsilon(1e-13));
}

TEST_CASE("per-dim densities normalize") {
  const ActionSpace space({ContinuousDim{-0.5, 1.5}, ContinuousDim{0.0, 1.0}, DiscreteDim{{0.0, 0.5, 1.0}}});
  StochasticPolicy p(space, 3, {8}, 6);
  p.log_sigma()[1] = std::log(0.02);  // narrow head near an edge
  p.head().bias[1] = 2.0;
  Rng rng = make_rng(2);
  for (int t = 0; t < 5; ++t) {
    const std::vector<double> s{uniform01(rng), uniform01(rng), uniform01(rng)};
    const auto params = p.dim_params(s);
    for (std::size_t i = 0; i < 2; ++i) {
      const auto& c = params[i].continuous;
      const TruncatedNormal tn{c.mean, c.sigma, c.lo, c.hi};
      const int m = 200000;
      const double h = (c.hi - c.lo) / m;
      double acc = tn.pdf(c.lo) + tn.pdf(c.hi);
      for (int k = 1; k < m; ++k) acc += (k % 2 ? 4.0 : 2.0) * tn.pdf(c.lo + k * h);
      CHECK(acc * h / 3.0 == doctest::Approx(1.0).epsilon(1e-6));
    }
    double total = 0.0;
    for (double q : params[2].probabilities) total += q;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("sample") {
  const auto space = ActionSpace::default_benchmark();
  const StochasticPolicy p(space, 4, {16, 16}, 9);
  const std::vector<double> s{0.1, 0.2, 0.3, 0.4};
  CHECK(p.sample(s, 3) == p.sample(s, 3));
  for (std::uint64_t seed = 0; seed < 2000; ++seed) {
    const auto [a, lp] = p.sample(s, seed);
    REQUIRE(validate_action(space, a).valid());
    CHECK(std::abs(lp - p.log_density(s, a)) <= 1e-12 * std::max(1.0, std::abs(lp)));
  }
}

TEST_CASE("mode picks the continuous mean and the most likely level") {
  const auto space = ActionSpace({ContinuousDim{0.0, 1.0}, DiscreteDim{{0.0, 1.0, 2.0}}});
  StochasticPolicy p(space, 1, {4}, 2);
  p.head().weight.setZero();
  p.head().bias << 0.0, 0.1, 2.0, -1.0;
  const auto m = p.mode(std::vector<double>{0.5});
  CHECK(m[0] == doctest::Approx(0.5));
  CHECK(m[1] == 1.0);
}

TEST_CASE("batch log density and its parameter gradient") {
  const ActionSpace space({ContinuousDim{0.0, 1.0}, DiscreteDim{{0.0, 1.0, 2.0}}, ContinuousDim{-1.0, 1.0}});
  StochasticPolicy p(space, 2, {5, 4}, 12);
  Rng rng = make_rng(3);
  std::vector<LoggedInteraction> recs;
  for (int k = 0; k < 6; ++k) {
    const std::vector<double> s{uniform01(rng), uniform01(rng)};
    recs.push_back({s, p.sample(s, derive_seed(1, k)).first, 1.0, 1.0});
  }
  std::vector<const LoggedInteraction*> ptrs;
  std::vector<double> w;
  for (const auto& r : recs) {
    ptrs.push_back(&r);
    w.push_back(uniform(rng, -1.0, 2.0));
  }
  StochasticPolicy::BatchGradient g;
  const auto lp = p.batch_log_density(ptrs, w, &g);
  for (std::size_t k = 0; k < recs.size(); ++k) CHECK(lp[static_cast<Eigen::Index>(k)] == doctest::Approx(p.log_density(recs[k].context, recs[k].action)).epsilon(1e-12));

  auto objective = [&](const StochasticPolicy& q) {
    const auto v = q.batch_log_density(ptrs);
    double acc = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) acc += w[k] * v[static_cast<Eigen::Index>(k)];
    return acc;
  };
  const double h = 1e-6;
  auto check_param = [&](auto&& access, double analytic) {
    StochasticPolicy plus = p, minus = p;
    access(plus) += h;
    access(minus) -= h;
    const double fd = (objective(plus) - objective(minus)) / (2 * h);
    CHECK(rel_err(fd, analytic) < 1e-5);
  };
  for (Eigen::Index r = 0; r < p.head().bias.size(); ++r) {
    check_param([r](StochasticPolicy& q) -> double& { return q.head().bias[r]; }, g.head_bias[r]);
    check_param([r](StochasticPolicy& q) -> double& { return q.head().weight(r, 1); }, g.head_weight(r, 1));
  }
  for (Eigen::Index r = 0; r < p.log_sigma().size(); ++r) {
    check_param([r](StochasticPolicy& q) -> double& { return q.log_sigma()[r]; }, g.log_sigma[r]);
  }
  check_param([](StochasticPolicy& q) -> double& { return q.trunk().layers()[0].weight(2, 1); }, g.trunk.weight[0](2, 1));
  check_param([](StochasticPolicy& q) -> double& { return q.trunk().layers()[1].bias[3]; }, g.trunk.bias[1][3]);
}

TEST_CASE("init_from_marginals follows the logged action marginals") {
  const auto d = toy_log(10);
  StochasticPolicy p(d.space(), 1, {4}, 1);
  p.head().weight.setZero();
  p.init_from_marginals(d);
  const auto params = p.dim_params(std::vector<double>{1.0});
  for (double q : params[0].probabilities) CHECK(q == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("oppg_train") {
  const auto d = toy_log();
  const StochasticPolicy init(d.space(), 1, {8}, 5);

  SUBCASE("zero epochs leave the policy unchanged") {
    OPPGConfig cfg;
    cfg.epochs = 0;
    CHECK(oppg_train(init, d, cfg) == init);
  }
  SUBCASE("toy problem: the modal action is the best level") {
    OPPGConfig cfg;
    cfg.epochs = 300;
    cfg.batch_size = 3;
    cfg.step_size = 0.05;
    const auto copy = init;
    const auto trained = oppg_train(init, d, cfg);
    CHECK(init == copy);
    CHECK(trained.mode(std::vector<double>{1.0})[0] == 2.0);
    CHECK(trained.density(std::vector<double>{1.0}, std::vector<double>{2.0}) > 0.9);
  }
  SUBCASE("every weight respects the clip") {
    const auto d_many = toy_log(20);
    for (double m : {1.0, 1.5, 10.0}) {
      OPPGConfig cfg;
      cfg.clip = m;
      cfg.epochs = 20;
      cfg.batch_size = 7;
      cfg.step_size = 0.1;
      OPPGTrace trace;
      trace.record_weights = true;
      oppg_train(init, d_many, cfg, &trace);
      CHECK(trace.weights.size() == 20 * d_many.size());
      for (double w : trace.weights) CHECK(w <= m);
      for (double w : trace.batch_max_weight) CHECK(w <= m);
    }
  }
  SUBCASE("deterministic") {
    OPPGConfig cfg;
    cfg.epochs = 5;
    CHECK(oppg_train(init, toy_log(4), cfg) == oppg_train(init, toy_log(4), cfg));
  }
  SUBCASE("fictitious records are rejected by index") {
    auto recs = d.records();
    recs.push_back({{1.0}, {0.0}, 0.1, kCounterfactualPropensity});
    const Dataset aug(d.space(), 1, recs);
    try {
      oppg_train(init, aug, OPPGConfig{});
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("record 3") != std::string::npos);
    }
  }
  SUBCASE("clip below one is rejected") {
    OPPGConfig cfg;
    cfg.clip = 0.5;
    CHECK_THROWS_AS(oppg_train(init, d, cfg), ValidationError);
  }
}

TEST_CASE("policy text format round trips") {
  StochasticPolicy p(ActionSpace::default_benchmark(), 3, {6, 5}, 8);
  p.log_sigma()[2] = -1.234567890123;
  std::stringstream ss;
  write_policy(p, ss);
  const auto back = read_policy(ss);
  CHECK(back == p);
  const std::vector<double> s{0.1, 0.5, 0.9};
  CHECK(back.sample(s, 4) == p.sample(s, 4));
}
