import math

import pytest

import cpopt

SMALL_INI = """
seed = 2
[env]
context_dim = 3
[reward_model]
members = 2
hidden = 8
epochs = 2
[ga]
max_iters = 10
[policy]
hidden = 8
epochs = 1
[eval]
train_samples = 200
heldout = 20
restart_grid = 1, 2
beta_grid = 0, 1
beta_restarts = 1
clip_grid = 1, 10
"""


@pytest.fixture(scope="module")
def env():
    params = cpopt.EnvParams()
    params.context_dim = 3
    return cpopt.SyntheticEnv(params, cpopt.ActionSpace.default_benchmark())


@pytest.fixture(scope="module")
def data(env):
    return env.generate(300, 5)


def test_space_round_trip():
    space = cpopt.ActionSpace(["continuous 0 1", "discrete 0 0.5 1"])
    assert len(space) == 2
    assert space.is_discrete(1) and not space.is_discrete(0)
    assert cpopt.ActionSpace(space.dims()) == space
    assert space.validate([0.2, 0.5])
    assert not space.validate([0.2, 0.4])
    with pytest.raises(ValueError):
        cpopt.ActionSpace(["discrete 1"])


def test_dataset_and_propensities(env, data):
    assert len(data) == 300
    rec = data[0]
    assert rec.propensity == pytest.approx(env.logging_density(rec.context, rec.action), rel=1e-12)
    assert all(p > 0 for p in data.propensities())
    assert data.rewards() == env.generate(300, 5).rewards()


def test_ensemble_optimize_and_policy(env, data):
    cfg = cpopt.TrainConfig()
    cfg.epochs = 2
    ens = cpopt.train_ensemble(data, members=3, config=cfg, seed=1, hidden=[16])
    s = data[0].context
    mu, sigma = ens.predict(s, data[0].action)
    assert sigma >= 0 and math.isfinite(mu)

    ga = cpopt.GAConfig()
    ga.restarts = 2
    ga.max_iters = 10
    action, value, diag = cpopt.optimize_action(ens, s, ga)
    assert env.space.validate(action)
    assert len(diag["restarts"]) == 2
    assert value == pytest.approx(ens.penalized_objective(s, action, 0.0)[0])

    pol = cpopt.StochasticPolicy(env.space, env.context_dim, [8], 3)
    pol.init_from_marginals(data)
    oc = cpopt.OPPGConfig()
    oc.epochs = 1
    trained = cpopt.oppg_train(pol, data, oc)
    a, lp = trained.sample(s, 4)
    assert lp == pytest.approx(trained.log_density(s, a), abs=1e-12)
    assert cpopt.StochasticPolicy.from_text(trained.to_text()).sample(s, 4) == (a, lp)

    ga.init_source = "policy"
    ga.restarts = 1
    action, _, diag = cpopt.optimize_action(ens, s, ga, trained)
    assert diag["restarts"][0]["init"] == "policy"


def test_ips_of_logging_policy_is_mean_reward(env, data):
    est, se = cpopt.ips_estimate(lambda s, a: env.logging_density(s, a), data)
    rewards = data.rewards()
    assert est == pytest.approx(sum(rewards) / len(rewards), rel=1e-12)
    assert se > 0


def test_validation_errors(env):
    with pytest.raises(ValueError):
        cpopt.clip_weight(-1.0, 10.0)
    pol = cpopt.StochasticPolicy(env.space, env.context_dim, [4])
    bad = cpopt.Dataset(env.space, env.context_dim,
                        [cpopt.LoggedInteraction([0.1] * 3, pol.mode([0.1] * 3), 1.0, cpopt.COUNTERFACTUAL_PROPENSITY)])
    with pytest.raises(ValueError):
        cpopt.ips_estimate(pol, bad)


def test_small_benchmark_is_deterministic(tmp_path):
    a = cpopt.run_benchmark(SMALL_INI, out_dir=str(tmp_path / "a"))
    b = cpopt.run_benchmark(SMALL_INI, out_dir=str(tmp_path / "b"))
    assert a == b
    assert a["checks"]["restart_sweep_monotone"]
    for name in ["restart_sweep.csv", "beta_sweep.csv", "clip_sweep.csv", "summary.json"]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
