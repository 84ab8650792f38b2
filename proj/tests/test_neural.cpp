#include <doctest.h>

#include <cmath>
#include <sstream>

#include <Eigen/Dense>

#include "cpopt/neural.hpp"
#include "cpopt/rng.hpp"

using namespace cpopt;

namespace {

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

std::vector<double> random_vec(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = scale * standard_normal(rng);
  return v;
}

}  // namespace

TEST_CASE("single affine layer") {
  FeedforwardNet net({2, 1}, Activation::kTanh, Activation::kIdentity);
  net.layers()[0].weight << 2.0, 3.0;
  net.layers()[0].bias << 1.0;
  CHECK(forward(net, std::vector<double>{1.0, 0.0}) == 3.0);
  const auto g = grad_input(net, std::vector<double>{-4.0, 7.5});
  CHECK(g == std::vector<double>{2.0, 3.0});
}

TEST_CASE("zero net outputs zero with zero gradient") {
  FeedforwardNet net({3, 5, 1}, Activation::kTanh);
  const std::vector<double> x{0.3, -2.0, 9.0};
  CHECK(forward(net, x) == 0.0);
  CHECK(grad_input(net, x) == std::vector<double>(3, 0.0));
}

TEST_CASE("zero output layer gives zero input gradient") {
  auto net = FeedforwardNet::random({3, 4, 1}, Activation::kTanh, 5);
  net.layers()[1].weight.setZero();
  CHECK(grad_input(net, std::vector<double>{0.1, 0.2, 0.3}) == std::vector<double>(3, 0.0));
}

TEST_CASE("two-layer net matches a hand evaluation") {
  FeedforwardNet net({2, 2, 1}, Activation::kTanh);
  net.layers()[0].weight << 0.5, -1.0, 2.0, 0.25;
  net.layers()[0].bias << 0.1, -0.2;
  net.layers()[1].weight << 1.5, -0.7;
  net.layers()[1].bias << 0.3;
  const double x0 = 0.4, x1 = -1.2;
  const double h0 = std::tanh(0.5 * x0 - 1.0 * x1 + 0.1);
  const double h1 = std::tanh(2.0 * x0 + 0.25 * x1 - 0.2);
  const double expected = 1.5 * h0 - 0.7 * h1 + 0.3;
  CHECK(std::abs(forward(net, std::vector<double>{x0, x1}) - expected) < 1e-12);
}

TEST_CASE("standardization is applied to inputs and outputs") {
  FeedforwardNet net({1, 1}, Activation::kTanh);
  net.layers()[0].weight << 1.0;
  Standardization st = Standardization::identity(1);
  st.input_mean << 2.0;
  st.input_scale << 4.0;
  st.output_mean = 10.0;
  st.output_scale = 3.0;
  net.set_standardization(st);
  CHECK(forward(net, std::vector<double>{6.0}) == doctest::Approx(10.0 + 3.0 * 1.0));
  CHECK(grad_input(net, std::vector<double>{6.0})[0] == doctest::Approx(3.0 / 4.0));
}

TEST_CASE("shape errors") {
  auto net = FeedforwardNet::random({3, 4, 1}, Activation::kTanh, 1);
  CHECK_THROWS_AS(forward(net, std::vector<double>{1.0}), ShapeError);
  CHECK_THROWS_AS(grad_input(net, std::vector<double>{1.0, 2.0, 3.0, 4.0}), ShapeError);
  CHECK_THROWS_AS(FeedforwardNet({3}, Activation::kTanh), ShapeError);
}

TEST_CASE("grad_input matches central differences on 100 random nets") {
  Rng rng = make_rng(123);
  const double h = 1e-5;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t in = 1 + uniform_index(rng, 8);
    const std::size_t w1 = 1 + uniform_index(rng, 12), w2 = 1 + uniform_index(rng, 12);
    auto net = FeedforwardNet::random({in, w1, w2, 1}, Activation::kTanh, derive_seed(7, trial), 1.5);
    Standardization st = Standardization::identity(in);
    for (std::size_t j = 0; j < in; ++j) {
      st.input_mean[static_cast<Eigen::Index>(j)] = standard_normal(rng);
      st.input_scale[static_cast<Eigen::Index>(j)] = 0.5 + uniform01(rng);
    }
    st.output_mean = standard_normal(rng);
    st.output_scale = 0.5 + uniform01(rng);
    net.set_standardization(st);
    const auto x = random_vec(rng, in);
    const auto g = grad_input(net, x);
    for (std::size_t j = 0; j < in; ++j) {
      auto xp = x, xm = x;
      xp[j] += h;
      xm[j] -= h;
      const double fd = (forward(net, xp) - forward(net, xm)) / (2 * h);
      CHECK(rel_err(fd, g[j]) < 1e-4);
    }
  }
}

TEST_CASE("forward respects the layer-norm Lipschitz bound") {
  Rng rng = make_rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    auto net = FeedforwardNet::random({4, 16, 16, 1}, Activation::kTanh, derive_seed(3, trial), 2.0);
    double bound = 1.0;  // tanh is 1-Lipschitz; identity standardization
    for (const auto& layer : net.layers()) bound *= layer.weight.norm();  // Frobenius >= operator norm
    for (int k = 0; k < 200; ++k) {
      std::vector<double> x(4), y(4);
      double d2 = 0.0;
      for (std::size_t j = 0; j < 4; ++j) {
        x[j] = uniform(rng, -1, 1);
        y[j] = uniform(rng, -1, 1);
        d2 += (x[j] - y[j]) * (x[j] - y[j]);
      }
      CHECK(std::abs(forward(net, x) - forward(net, y)) <= bound * std::sqrt(d2) + 1e-12);
    }
  }
}

TEST_CASE("train_regression") {
  Rng rng = make_rng(55);
  const std::size_t n = 200, d = 4;
  const std::vector<double> w{1.5, -2.0, 0.5, 3.0};
  std::vector<std::vector<double>> xs;
  std::vector<double> ys;
  for (std::size_t i = 0; i < n; ++i) {
    auto x = random_vec(rng, d);
    double y = 0.7;
    for (std::size_t j = 0; j < d; ++j) y += w[j] * x[j];
    ys.push_back(y + 0.1 * standard_normal(rng));
    xs.push_back(std::move(x));
  }
  auto init = FeedforwardNet::random({d, 1}, Activation::kTanh, 3);
  init.set_standardization(Standardization::fit(xs, ys));

  SUBCASE("zero epochs leave the net unchanged") {
    TrainConfig cfg;
    cfg.epochs = 0;
    CHECK(train_regression(init, xs, ys, cfg) == init);
  }
  SUBCASE("linear net approaches the least-squares fit") {
    Eigen::MatrixXd a(n, d + 1);
    Eigen::VectorXd b(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = xs[i][j];
      a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = 1.0;
      b[static_cast<Eigen::Index>(i)] = ys[i];
    }
    const Eigen::VectorXd coef = a.colPivHouseholderQr().solve(b);
    const double oracle_mse = (a * coef - b).squaredNorm() / static_cast<double>(n);
    TrainConfig cfg;
    cfg.epochs = 300;
    cfg.batch_size = 20;
    cfg.step_size = 0.01;
    cfg.seed = 4;
    const auto trained = train_regression(init, xs, ys, cfg);
    CHECK(mean_squared_error(trained, xs, ys) <= 1.1 * oracle_mse);
    CHECK(mean_squared_error(init, xs, ys) > 10 * oracle_mse);
  }
  SUBCASE("deterministic given seed, original untouched") {
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.seed = 9;
    const auto copy = init;
    const auto a = train_regression(init, xs, ys, cfg);
    const auto b = train_regression(init, xs, ys, cfg);
    CHECK(a == b);
    CHECK(init == copy);
    cfg.seed = 10;
    CHECK(!(train_regression(init, xs, ys, cfg) == a));
  }
  SUBCASE("errors") {
    TrainConfig cfg;
    CHECK_THROWS_AS(train_regression(init, {}, std::vector<double>{}, cfg), ValidationError);
    CHECK_THROWS_AS(train_regression(init, xs, std::vector<double>(3, 0.0), cfg), ShapeError);
    auto deep = FeedforwardNet::random({d, 8, 1}, Activation::kTanh, 3);
    cfg.step_size = 1e6;
    try {
      train_regression(deep, xs, ys, cfg);
      FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
      CHECK(std::string(e.what()).find("epoch") != std::string::npos);
    }
  }
}

TEST_CASE("net text format round trips exactly") {
  auto net = FeedforwardNet::random({5, 7, 3, 1}, Activation::kTanh, 77, 1.3);
  std::vector<std::vector<double>> xs;
  std::vector<double> ys;
  Rng rng = make_rng(1);
  for (int i = 0; i < 30; ++i) {
    xs.push_back(random_vec(rng, 5, 10.0));
    ys.push_back(standard_normal(rng));
  }
  net.set_standardization(Standardization::fit(xs, ys));
  std::stringstream ss;
  write_net(net, ss);
  const auto back = read_net(ss);
  CHECK(back == net);
  CHECK(forward(back, xs[3]) == forward(net, xs[3]));

  std::istringstream bad("cpopt-ffn 2\n");
  CHECK_THROWS(read_net(bad));
}
