// cpopt: command-line front end for the data / train / optimize / evaluate pipeline.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "cpopt/evaluate.hpp"
#include "cpopt/text.hpp"

namespace fs = std::filesystem;
using namespace cpopt;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "cpopt_out";
  std::string profile = "fast";

  RunConfig load() const {
    const Profile p = profile_from_string(profile);
    RunConfig cfg = config.empty() ? default_run_config(p) : load_run_config(config, p);
    if (seed) cfg.seed = *seed;
    return cfg;
  }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "run-config INI file (defaults when omitted)");
  cmd->add_option("--seed", c.seed, "override the master seed");
  cmd->add_option("--out", c.out, "output directory")->capture_default_str();
  cmd->add_option("--profile", c.profile, "fast or full")
      ->check(CLI::IsMember({"fast", "full"}))
      ->capture_default_str();
}

fs::path in_out(const Common& c, const std::string& given, const char* fallback) {
  return given.empty() ? fs::path(c.out) / fallback : fs::path(given);
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << j.dump(2) << "\n";
}

StochasticPolicy load_policy(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open policy file " + path.string());
  return read_policy(f);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contextual bandit parameter optimization from logged data"};
  app.require_subcommand(1);

  Common gen_c, rew_c, pol_c, opt_c, eval_c, bench_c, cfg_c;

  auto* gen = app.add_subcommand("gen-data", "sample a logged dataset from the synthetic environment");
  add_common(gen, gen_c);

  std::string rew_data;
  auto* rew = app.add_subcommand("train-reward", "train the bootstrap reward ensemble");
  add_common(rew, rew_c);
  rew->add_option("--data", rew_data, "training CSV (default <out>/train.csv)");

  std::string pol_data;
  std::optional<double> pol_clip;
  auto* pol = app.add_subcommand("train-policy", "train the stochastic policy with clipped OPPG");
  add_common(pol, pol_c);
  pol->add_option("--data", pol_data, "training CSV (default <out>/train.csv)");
  pol->add_option("--clip", pol_clip, "importance weight clip M (overrides the config)");

  std::string opt_ens, opt_pol, opt_ctx, opt_init = "uniform";
  std::optional<std::size_t> opt_restarts, opt_limit;
  std::optional<double> opt_beta;
  auto* opt = app.add_subcommand("optimize", "choose actions by gradient ascent on the ensemble");
  add_common(opt, opt_c);
  opt->add_option("--ensemble", opt_ens, "ensemble directory (default <out>/ensemble)");
  opt->add_option("--policy", opt_pol, "policy file, required with --init policy (default <out>/policy.txt)");
  opt->add_option("--contexts", opt_ctx, "dataset CSV whose contexts are optimized (default <out>/heldout.csv)");
  opt->add_option("--init", opt_init, "uniform or policy")->check(CLI::IsMember({"uniform", "policy"}));
  opt->add_option("--restarts", opt_restarts, "GA restarts per context");
  opt->add_option("--beta", opt_beta, "uncertainty penalty");
  opt->add_option("--limit", opt_limit, "only the first N contexts");

  std::string eval_ens, eval_pol;
  auto* ev = app.add_subcommand("evaluate", "score saved models on the heldout split and write reports");
  add_common(ev, eval_c);
  ev->add_option("--ensemble", eval_ens, "ensemble directory (default <out>/ensemble)");
  ev->add_option("--policy", eval_pol, "policy file (default <out>/policy.txt)");

  auto* bench = app.add_subcommand("benchmark", "run the whole pipeline and write every report");
  add_common(bench, bench_c);

  auto* cfgcmd = app.add_subcommand("config", "print the effective run config");
  add_common(cfgcmd, cfg_c);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const auto cfg = gen_c.load();
      const auto data = generate_run_data(cfg);
      fs::create_directories(gen_c.out);
      save_dataset(data.all, fs::path(gen_c.out) / "dataset.csv");
      save_dataset(data.train, fs::path(gen_c.out) / "train.csv");
      save_dataset(data.heldout, fs::path(gen_c.out) / "heldout.csv");
      std::cout << "wrote " << data.all.size() << " records (" << data.train.size() << " train, "
                << data.heldout.size() << " heldout) to " << gen_c.out << "\n";
    } else if (*rew) {
      const auto cfg = rew_c.load();
      const auto train = load_dataset(in_out(rew_c, rew_data, "train.csv"), cfg.space);
      const auto ens = fit_reward_model(cfg, train);
      save_ensemble(ens, fs::path(rew_c.out) / "ensemble");
      std::cout << "trained " << ens.size() << " members on " << train.size() << " records\n";
    } else if (*pol) {
      const auto cfg = pol_c.load();
      const auto train = load_dataset(in_out(pol_c, pol_data, "train.csv"), cfg.space);
      OPPGTrace trace;
      const double clip = pol_clip.value_or(cfg.policy.oppg.clip);
      const auto policy = fit_policy(cfg, train, clip, &trace);
      fs::create_directories(pol_c.out);
      std::ofstream f(fs::path(pol_c.out) / "policy.txt");
      write_policy(policy, f);
      write_json(fs::path(pol_c.out) / "oppg_trace.json",
                 {{"clip", clip},
                  {"samples", trace.samples},
                  {"clipped", trace.clipped},
                  {"batch_max_weight", trace.batch_max_weight}});
      std::cout << "trained policy, " << trace.clipped << " of " << trace.samples << " weights clipped at M="
                << format_double(clip) << "\n";
    } else if (*opt) {
      auto cfg = opt_c.load();
      const auto ens = load_ensemble(in_out(opt_c, opt_ens, "ensemble"));
      const auto ctx = load_dataset(in_out(opt_c, opt_ctx, "heldout.csv"), ens.space());
      GAConfig ga = cfg.ga;
      ga.init_source = init_source_from_string(opt_init);
      if (opt_restarts) ga.restarts = *opt_restarts;
      if (opt_beta) ga.beta = *opt_beta;
      std::optional<StochasticPolicy> policy;
      if (ga.init_source == InitSource::kPolicy) policy = load_policy(in_out(opt_c, opt_pol, "policy.txt"));
      const std::size_t n = std::min(ctx.size(), opt_limit.value_or(ctx.size()));
      const std::uint64_t s0 = stream_seed(cfg.seed, ga.init_source == InitSource::kPolicy ? Stream::kHybrid : Stream::kGa);
      fs::create_directories(opt_c.out);
      std::ofstream csv(fs::path(opt_c.out) / "actions.csv");
      csv << "context";
      for (std::size_t j = 0; j < ens.space().size(); ++j) csv << ",act_" << j;
      csv << ",predicted_value,mean,std,iterations\n";
      nlohmann::json diags = nlohmann::json::array();
      for (std::size_t i = 0; i < n; ++i) {
        GAConfig g = ga;
        g.seed = derive_seed(s0, i);
        const auto res = optimize_action(ens, ctx[i].context, g, policy ? &*policy : nullptr);
        const auto ms = ens.predict(ctx[i].context, res.action);
        csv << i;
        for (double v : res.action) csv << "," << format_double(v);
        csv << "," << format_double(res.predicted_value) << "," << format_double(ms.mean) << ","
            << format_double(ms.std) << "," << res.diagnostics.total_iterations << "\n";
        diags.push_back(diagnostics_to_json(res.diagnostics));
      }
      write_json(fs::path(opt_c.out) / "optimize_diagnostics.json", diags);
      std::cout << "optimized " << n << " contexts\n";
    } else if (*ev) {
      const auto cfg = eval_c.load();
      const auto data = generate_run_data(cfg);
      const auto ens = load_ensemble(in_out(eval_c, eval_ens, "ensemble"));
      const auto policy = load_policy(in_out(eval_c, eval_pol, "policy.txt"));
      const auto result = evaluate_methods(cfg, data, ens, policy);
      write_benchmark_outputs(result, cfg, data.all, eval_c.out);
      std::cout << result.summary(cfg)["checks"].dump(2) << "\n";
    } else if (*bench) {
      const auto cfg = bench_c.load();
      const auto result = run_benchmark(cfg, fs::path(bench_c.out));
      std::cout << result.summary(cfg)["checks"].dump(2) << "\n";
    } else if (*cfgcmd) {
      std::cout << run_config_to_ini(cfg_c.load());
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
