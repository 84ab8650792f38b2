#include <doctest.h>

#include <algorithm>
#include <sstream>

#include "cpopt/core.hpp"
#include "cpopt/io.hpp"
#include "cpopt/rng.hpp"

using namespace cpopt;

namespace {

ActionSpace small_space() { return ActionSpace({ContinuousDim{0.0, 1.0}, DiscreteDim{{0.0, 2.0, 4.0}}}); }

// N records with reward = index so records are distinguishable.
Dataset indexed_dataset(std::size_t n) {
  std::vector<LoggedInteraction> recs;
  for (std::size_t i = 0; i < n; ++i) {
    recs.push_back({{static_cast<double>(i) / static_cast<double>(n)}, {0.5, 2.0}, static_cast<double>(i), 0.5});
  }
  return Dataset(small_space(), 1, std::move(recs));
}

std::vector<double> rewards_of(const Dataset& d) { return d.rewards(); }

}  // namespace

TEST_CASE("action space construction rejects malformed dims") {
  CHECK_THROWS_AS(ActionSpace({ContinuousDim{1.0, 1.0}}), ValidationError);
  CHECK_THROWS_AS(ActionSpace({DiscreteDim{{1.0}}}), ValidationError);
  CHECK_THROWS_AS(ActionSpace({DiscreteDim{{0.0, 2.0, 1.0}}}), ValidationError);
}

TEST_CASE("default benchmark space has 14 mixed dims") {
  const auto s = ActionSpace::default_benchmark();
  CHECK(s.size() == 14);
  CHECK(s.continuous_count() == 8);
  CHECK(s.discrete_count() == 6);
}

TEST_CASE("validate_action examples") {
  const auto s = small_space();
  CHECK(validate_action(s, std::vector<double>{0.5, 2.0}).valid());

  const auto out_of_box = validate_action(s, std::vector<double>{1.5, 2.0});
  REQUIRE(out_of_box.violations.size() == 1);
  CHECK(out_of_box.violations[0].dim == 0);
  CHECK(out_of_box.violations[0].kind == ViolationKind::kOutOfBox);

  const auto not_level = validate_action(s, std::vector<double>{0.5, 3.0});
  REQUIRE(not_level.violations.size() == 1);
  CHECK(not_level.violations[0].dim == 1);
  CHECK(not_level.violations[0].kind == ViolationKind::kNotALevel);

  CHECK_THROWS_AS(validate_action(s, std::vector<double>{0.5}), ShapeError);
  CHECK_THROWS_AS(require_valid_action(s, std::vector<double>{0.5, 3.0}), ValidationError);
}

TEST_CASE("dataset rejects non-positive propensity and bad shapes") {
  CHECK_THROWS_AS(Dataset(small_space(), 1, {{{0.1}, {0.5, 2.0}, 1.0, 0.0}}), ValidationError);
  CHECK_THROWS_AS(Dataset(small_space(), 1, {{{0.1, 0.2}, {0.5, 2.0}, 1.0, 1.0}}), ShapeError);
  CHECK_THROWS_AS(Dataset(small_space(), 1, {}), ValidationError);
  // Sentinel propensity marks fictitious records and is allowed.
  Dataset d(small_space(), 1, {{{0.1}, {0.5, 2.0}, 1.0, kCounterfactualPropensity}});
  CHECK(d.has_counterfactual());
}

TEST_CASE("CSV load keeps file order") {
  std::istringstream in(
      "ctx_0,act_0,act_1,reward,propensity\n"
      "0.1,0.2,0,1.5,0.3\n"
      "0.2,0.4,2,2.5,0.4\n"
      "0.3,0.6,4,3.5,0.5\n");
  const auto d = read_dataset_csv(in, small_space());
  REQUIRE(d.size() == 3);
  CHECK(d.context_dim() == 1);
  CHECK(d[0].reward == 1.5);
  CHECK(d[1].action[1] == 2.0);
  CHECK(d[2].propensity == 0.5);
}

TEST_CASE("CSV load cites the row of a zero propensity") {
  std::istringstream in(
      "ctx_0,act_0,act_1,reward,propensity\n"
      "0.1,0.2,0,1.5,0.3\n"
      "0.2,0.4,2,2.5,0\n");
  try {
    read_dataset_csv(in, small_space());
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.row() == 2);
    CHECK(e.field() == "propensity");
  }
}

TEST_CASE("CSV load names malformed fields") {
  std::istringstream bad_number(
      "ctx_0,act_0,act_1,reward,propensity\n"
      "0.1,abc,0,1.5,0.3\n");
  try {
    read_dataset_csv(bad_number, small_space());
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.row() == 1);
    CHECK(e.field() == "act_0");
  }
  std::istringstream bad_level(
      "ctx_0,act_0,act_1,reward,propensity\n"
      "0.1,0.5,3,1.5,0.3\n");
  CHECK_THROWS_AS(read_dataset_csv(bad_level, small_space()), ParseError);
  std::istringstream short_row(
      "ctx_0,act_0,act_1,reward,propensity\n"
      "0.1,0.5,2,1.5\n");
  CHECK_THROWS_AS(read_dataset_csv(short_row, small_space()), ParseError);
  std::istringstream bad_header("ctx_0,act_0,reward,propensity\n0.1,0.5,1.5,0.3\n");
  CHECK_THROWS_AS(read_dataset_csv(bad_header, small_space()), ParseError);
}

TEST_CASE("CSV round trip is exact") {
  Rng rng = make_rng(3);
  std::vector<LoggedInteraction> recs;
  for (int i = 0; i < 50; ++i) {
    recs.push_back({{uniform01(rng), uniform01(rng) * 1e-7},
                    {uniform01(rng), 2.0 * static_cast<double>(uniform_index(rng, 3))},
                    standard_normal(rng) * 1e6,
                    uniform01(rng) + 1e-300});
  }
  recs.push_back({{0.0, 1.0}, {1.0, 0.0}, -0.0, kCounterfactualPropensity});
  const Dataset d(small_space(), 2, recs);
  std::stringstream ss;
  write_dataset_csv(d, ss);
  const auto back = read_dataset_csv(ss, small_space());
  CHECK(back.records() == d.records());
}

TEST_CASE("bootstrap_sample") {
  SUBCASE("single record is repeated") {
    const auto d = indexed_dataset(1);
    const auto b = bootstrap_sample(d, 11);
    CHECK(b.size() == 1);
    CHECK(b[0] == d[0]);
  }
  SUBCASE("deterministic and size preserving") {
    const auto d = indexed_dataset(1000);
    const auto a = bootstrap_sample(d, 5);
    const auto b = bootstrap_sample(d, 5);
    CHECK(a.size() == 1000);
    CHECK(a.records() == b.records());
  }
  SUBCASE("different seeds give different index sequences") {
    const auto d = indexed_dataset(1000);
    CHECK(rewards_of(bootstrap_sample(d, 5)) != rewards_of(bootstrap_sample(d, 6)));
  }
  SUBCASE("draws are roughly uniform over records") {
    // Each record appears Binomial(N, 1/N) times; about 1 - 1/e distinct.
    const auto d = indexed_dataset(2000);
    auto r = rewards_of(bootstrap_sample(d, 9));
    std::sort(r.begin(), r.end());
    const auto distinct = static_cast<double>(std::unique(r.begin(), r.end()) - r.begin());
    CHECK(distinct / 2000.0 == doctest::Approx(1.0 - std::exp(-1.0)).epsilon(0.05));
  }
}

TEST_CASE("split_dataset") {
  const auto d = indexed_dataset(10);
  const auto [train, heldout] = split_dataset(d, 3, 17);
  CHECK(train.size() == 7);
  CHECK(heldout.size() == 3);
  auto all = rewards_of(train);
  const auto h = rewards_of(heldout);
  all.insert(all.end(), h.begin(), h.end());
  std::sort(all.begin(), all.end());
  CHECK(all == rewards_of(d));  // disjoint and covering

  const auto [train2, heldout2] = split_dataset(d, 3, 17);
  CHECK(train2.records() == train.records());
  CHECK(heldout2.records() == heldout.records());

  CHECK_THROWS_AS(split_dataset(d, 0, 1), ValidationError);
  CHECK_THROWS_AS(split_dataset(d, 10, 1), ValidationError);
}

TEST_CASE("split then concatenate is a permutation, property over seeds") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const std::size_t n = 5 + seed % 40;
    const auto [tr, he] = split_indices(n, 1 + seed % (n - 1), seed);
    std::vector<std::size_t> all = tr;
    all.insert(all.end(), he.begin(), he.end());
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < n; ++i) REQUIRE(all[i] == i);
    CHECK(std::is_sorted(tr.begin(), tr.end()));
    CHECK(std::is_sorted(he.begin(), he.end()));
  }
}

TEST_CASE("unit distance is normalized L-infinity") {
  const auto s = small_space();
  CHECK(s.unit_distance(std::vector<double>{0.0, 0.0}, std::vector<double>{0.5, 4.0}) == 1.0);
  CHECK(s.unit_distance(std::vector<double>{0.0, 2.0}, std::vector<double>{0.3, 2.0}) ==
        doctest::Approx(0.3));
}

TEST_CASE("space text and json forms round trip") {
  const auto s = ActionSpace::default_benchmark();
  CHECK(space_from_json(space_to_json(s)) == s);
  for (const auto& dim : s.dims()) CHECK(dim_from_string(dim_to_string(dim)) == dim);
  CHECK_THROWS(dim_from_string("discrete 1"));
  CHECK_THROWS(dim_from_string("ordinal 0 1"));
}

TEST_CASE("derived seeds are distinct across indices and streams") {
  std::vector<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 1000; ++i) seen.push_back(derive_seed(42, i));
  for (std::uint64_t k = 1; k <= 11; ++k) seen.push_back(stream_seed(42, static_cast<Stream>(k)));
  std::sort(seen.begin(), seen.end());
  CHECK(std::adjacent_find(seen.begin(), seen.end()) == seen.end());
}
