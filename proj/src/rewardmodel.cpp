#include "cpopt/rewardmodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "cpopt/io.hpp"
#include "cpopt/parallel.hpp"
#include "cpopt/rng.hpp"

namespace cpopt {

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) throw ValidationError("mean_std: no values");
  // Welford keeps identical inputs at exactly zero spread.
  double mean = 0.0;
  double m2 = 0.0;
  double k = 0.0;
  for (double v : values) {
    k += 1.0;
    const double delta = v - mean;
    mean += delta / k;
    m2 += delta * (v - mean);
  }
  return {mean, std::sqrt(std::max(0.0, m2 / k))};
}

RewardEnsemble::RewardEnsemble(std::vector<FeedforwardNet> members, ActionSpace space,
                               std::size_t context_dim, std::vector<std::uint64_t> member_seeds)
    : members_(std::move(members)),
      space_(std::move(space)),
      context_dim_(context_dim),
      seeds_(std::move(member_seeds)) {
  if (members_.empty()) throw ValidationError("ensemble needs at least one member");
  const auto& sizes = members_.front().layer_sizes();
  if (sizes.front() != context_dim_ + space_.size() || sizes.back() != 1) {
    throw ShapeError("ensemble members must map context+action to a scalar");
  }
  for (const auto& m : members_) {
    if (m.layer_sizes() != sizes) throw ShapeError("ensemble members must share an architecture");
  }
  if (!seeds_.empty() && seeds_.size() != members_.size()) {
    throw ShapeError("one seed per ensemble member expected");
  }
}

void RewardEnsemble::check_context(std::span<const double> context) const {
  if (context.size() != context_dim_) {
    throw ShapeError("context has " + std::to_string(context.size()) + " entries, model expects " +
                     std::to_string(context_dim_));
  }
}

void RewardEnsemble::check_relaxed(std::span<const double> action) const {
  if (action.size() != space_.size()) {
    throw ShapeError("action has " + std::to_string(action.size()) + " entries, space has " +
                     std::to_string(space_.size()));
  }
}

std::vector<double> RewardEnsemble::member_predictions(std::span<const double> context,
                                                       std::span<const double> action) const {
  check_context(context);
  require_valid_action(space_, action);
  const auto x = concat(context, action);
  std::vector<double> out;
  out.reserve(members_.size());
  for (const auto& m : members_) out.push_back(m.forward(x));
  return out;
}

MeanStd RewardEnsemble::predict(std::span<const double> context,
                                std::span<const double> action) const {
  const auto preds = member_predictions(context, action);
  return mean_std(preds);
}

MeanStd RewardEnsemble::predict_relaxed(std::span<const double> context,
                                        std::span<const double> action) const {
  check_context(context);
  check_relaxed(action);
  const auto x = concat(context, action);
  std::vector<double> preds;
  preds.reserve(members_.size());
  for (const auto& m : members_) preds.push_back(m.forward(x));
  return mean_std(preds);
}

PenalizedValue RewardEnsemble::penalized_objective(std::span<const double> context,
                                                   std::span<const double> action,
                                                   double beta) const {
  require_valid_action(space_, action);
  return penalized_relaxed(context, action, beta);
}

PenalizedValue RewardEnsemble::penalized_relaxed(std::span<const double> context,
                                                 std::span<const double> action,
                                                 double beta) const {
  if (!(beta >= 0.0)) throw ValidationError("penalty coefficient beta must be >= 0");
  check_context(context);
  check_relaxed(action);
  const auto x = concat(context, action);
  const std::size_t k = members_.size();
  const std::size_t na = action.size();
  std::vector<double> values(k);
  std::vector<std::vector<double>> grads(k, std::vector<double>(x.size()));
  for (std::size_t m = 0; m < k; ++m) values[m] = members_[m].value_and_grad(x, grads[m]);

  const MeanStd ms = mean_std(values);
  PenalizedValue out;
  out.mean = ms.mean;
  out.std = ms.std;
  out.value = ms.mean - beta * ms.std;
  out.grad_action.assign(na, 0.0);
  const double kd = static_cast<double>(k);
  for (std::size_t m = 0; m < k; ++m) {
    // d sigma / d a = sum_m (y_m - mu) g_m / (K sigma); defined as 0 at sigma = 0.
    const double w = 1.0 / kd - (ms.std > 0.0 ? beta * (values[m] - ms.mean) / (kd * ms.std) : 0.0);
    for (std::size_t j = 0; j < na; ++j) out.grad_action[j] += w * grads[m][context_dim_ + j];
  }
  return out;
}

double RewardEnsemble::penalized_value_relaxed(std::span<const double> context,
                                               std::span<const double> action, double beta) const {
  const MeanStd ms = predict_relaxed(context, action);
  return ms.mean - beta * ms.std;
}

RewardEnsemble train_ensemble(const Dataset& dataset, std::size_t members, const TrainConfig& cfg,
                              std::uint64_t seed, std::vector<std::size_t> hidden,
                              std::size_t threads) {
  if (members == 0) throw ValidationError("train_ensemble: K must be >= 1");
  std::vector<std::vector<double>> inputs;
  inputs.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) inputs.push_back(dataset.input(i));
  const auto rewards = dataset.rewards();
  const Standardization shared = Standardization::fit(inputs, rewards);

  std::vector<std::size_t> sizes;
  sizes.push_back(dataset.input_dim());
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);

  std::vector<FeedforwardNet> nets(members);
  std::vector<std::uint64_t> seeds(members);
  parallel_for(members, threads, [&](std::size_t k) {
    try {
      const Dataset boot = bootstrap_sample(dataset, derive_seed(seed, k));
      std::vector<std::vector<double>> x;
      x.reserve(boot.size());
      for (std::size_t i = 0; i < boot.size(); ++i) x.push_back(boot.input(i));
      const auto y = boot.rewards();
      auto net = FeedforwardNet::random(sizes, Activation::kTanh, derive_seed(seed, members + k),
                                        cfg.init_scale);
      net.set_standardization(shared);
      TrainConfig member_cfg = cfg;
      member_cfg.seed = derive_seed(seed, 2 * members + k);
      nets[k] = train_regression(net, x, y, member_cfg);
      seeds[k] = derive_seed(seed, k);
    } catch (const std::exception& e) {
      throw Error("ensemble member " + std::to_string(k) + ": " + e.what());
    }
  });
  return RewardEnsemble(std::move(nets), dataset.space(), dataset.context_dim(), std::move(seeds));
}

RewardEnsemble train_ensemble(const Dataset& dataset, const EnsembleConfig& cfg, std::uint64_t seed) {
  return train_ensemble(dataset, cfg.members, cfg.train, seed, cfg.hidden, cfg.threads);
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ValidationError("quantile: no values");
  if (!(q >= 0.0 && q <= 1.0)) throw ValidationError("quantile: q must lie in [0, 1]");
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
  const double vlo = values[lo];
  if (hi == lo) return vlo;
  const double vhi = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(hi), values.end());
  return vlo + (pos - static_cast<double>(lo)) * (vhi - vlo);
}

Dataset augment_counterfactual(const Dataset& dataset, const AugmentConfig& cfg, std::uint64_t seed) {
  if (!(cfg.min_distance > 0.0)) throw ValidationError("augment: min_distance must be > 0");
  if (!(cfg.pessimistic_quantile >= 0.0 && cfg.pessimistic_quantile <= 0.5)) {
    throw ValidationError("augment: pessimistic_quantile must lie in [0, 0.5]");
  }
  if (cfg.count_per_record == 0) return dataset;

  std::vector<double> logged_rewards;
  for (const auto& r : dataset.records()) {
    if (!r.is_counterfactual()) logged_rewards.push_back(r.reward);
  }
  if (logged_rewards.empty()) throw ValidationError("augment: dataset has no logged records");
  const double pessimistic = quantile(logged_rewards, cfg.pessimistic_quantile);

  const auto& space = dataset.space();
  std::vector<LoggedInteraction> out = dataset.records();
  out.reserve(dataset.size() * (1 + cfg.count_per_record));
  std::size_t attempts = 0;
  std::size_t accepted = 0;
  std::vector<double> candidate(space.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    Rng rng = make_rng(derive_seed(seed, i));
    const auto& rec = dataset[i];
    for (std::size_t c = 0; c < cfg.count_per_record; ++c) {
      bool ok = false;
      for (std::size_t t = 0; t < cfg.max_attempts && !ok; ++t) {
        ++attempts;
        for (std::size_t d = 0; d < space.size(); ++d) {
          candidate[d] = space.is_discrete(d)
                             ? space.levels(d)[uniform_index(rng, space.levels(d).size())]
                             : uniform(rng, space.lower(d), space.upper(d));
        }
        ok = space.unit_distance(candidate, rec.action) > cfg.min_distance;
      }
      if (!ok) {
        std::ostringstream msg;
        msg << "augment: no action farther than " << cfg.min_distance << " from record " << i
            << " after " << cfg.max_attempts << " attempts (acceptance rate "
            << static_cast<double>(accepted) / static_cast<double>(attempts) << ")";
        throw ValidationError(msg.str());
      }
      ++accepted;
      out.push_back({rec.context, candidate, pessimistic, kCounterfactualPropensity});
    }
  }
  return Dataset(space, dataset.context_dim(), std::move(out));
}

void save_ensemble(const RewardEnsemble& ensemble, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto& st = ensemble.members().front().standardization();
  nlohmann::json manifest;
  manifest["format"] = "cpopt-ensemble";
  manifest["version"] = 1;
  manifest["members"] = ensemble.size();
  manifest["context_dim"] = ensemble.context_dim();
  manifest["space"] = space_to_json(ensemble.space());
  manifest["seeds"] = ensemble.member_seeds();
  manifest["standardization"] = {
      {"input_mean", std::vector<double>(st.input_mean.data(), st.input_mean.data() + st.input_mean.size())},
      {"input_scale", std::vector<double>(st.input_scale.data(), st.input_scale.data() + st.input_scale.size())},
      {"output_mean", st.output_mean},
      {"output_scale", st.output_scale}};
  nlohmann::json files = nlohmann::json::array();
  for (std::size_t k = 0; k < ensemble.size(); ++k) {
    std::ostringstream name;
    name << "member_" << std::setw(2) << std::setfill('0') << k << ".net";
    std::ofstream out(dir / name.str());
    if (!out) throw Error("cannot write " + (dir / name.str()).string());
    write_net(ensemble.members()[k], out);
    files.push_back(name.str());
  }
  manifest["files"] = files;
  std::ofstream out(dir / "manifest.json");
  if (!out) throw Error("cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

RewardEnsemble load_ensemble(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error("no manifest.json in " + dir.string());
  const auto manifest = nlohmann::json::parse(in);
  if (manifest.at("format") != "cpopt-ensemble" || manifest.at("version") != 1) {
    throw Error("unsupported ensemble manifest in " + dir.string());
  }
  std::vector<FeedforwardNet> members;
  for (const auto& f : manifest.at("files")) {
    std::ifstream net_in(dir / f.get<std::string>());
    if (!net_in) throw Error("missing ensemble member " + f.get<std::string>());
    members.push_back(read_net(net_in));
  }
  if (members.size() != manifest.at("members").get<std::size_t>()) {
    throw Error("ensemble manifest member count does not match files");
  }
  return RewardEnsemble(std::move(members), space_from_json(manifest.at("space")),
                        manifest.at("context_dim").get<std::size_t>(),
                        manifest.at("seeds").get<std::vector<std::uint64_t>>());
}

}  // namespace cpopt
