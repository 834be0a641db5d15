import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distlab.cb_algorithms import (
    ExpWeightsCBOracle,
    GammaSchedule,
    LogLossOracle,
    SquareLossOracle,
    TabularCBEnvironment,
    gamma_theorem,
    igw_weights,
    reigw_weights,
    run_distcb,
    run_fastcb,
    run_squarecb,
    run_uniform,
    sample_action,
)
from distlab.mle_oracle import CondDistClass
from distlab.rng import make_rng


def test_reigw_examples():
    assert np.allclose(reigw_weights([0.5, 0.5], 4), [0.5, 0.5])
    p = reigw_weights([0.2, 0.4], 10)
    assert p[1] == pytest.approx(1 / 12, abs=1e-15)
    assert p[0] == pytest.approx(11 / 12, abs=1e-15)
    p = reigw_weights([0.0, 0.3], 10)
    assert p[1] == pytest.approx(1e-6 / (2e-6 + 10 * (0.3 - 1e-6)), rel=1e-12)
    assert p[1] == pytest.approx(3.33e-7, rel=1e-2)


def test_reigw_errors():
    with pytest.raises(ValueError):
        reigw_weights([0.1, 0.2], 3.9)
    with pytest.raises(ValueError):
        reigw_weights([0.1, float("nan")], 10)
    with pytest.raises(ValueError):
        reigw_weights([0.1, 0.2], float("inf"))


def test_reigw_ties_go_to_lowest_index():
    p = reigw_weights([0.3, 0.1, 0.1], 100)
    assert p[1] > p[2]


@settings(max_examples=300, deadline=None)
@given(
    st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=8),
    st.floats(1.0, 1e4),
)
def test_reigw_is_a_distribution_favoring_the_best_arm(fhat, scale):
    A = len(fhat)
    p = reigw_weights(fhat, 2 * A * scale)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(p >= 0) and np.all(p <= 1)
    b = int(np.argmin(np.maximum(fhat, 1e-6)))
    assert p[b] >= p.max() - 1e-12


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(0, 1, allow_nan=False), min_size=2, max_size=6),
    st.integers(0, 5),
    st.floats(0, 1),
)
def test_reigw_weight_shrinks_as_predicted_mean_grows(fhat, arm, bump):
    arm %= len(fhat)
    gamma = 4 * len(fhat)
    higher = list(fhat)
    higher[arm] = min(1.0, fhat[arm] + bump)
    assert reigw_weights(higher, gamma)[arm] <= reigw_weights(fhat, gamma)[arm] + 1e-12


def test_gamma_theorem_examples():
    for A in (1, 3, 7):
        assert math.sqrt(40 * A / 112) < 10 * A
        assert gamma_theorem(A, 0.0, 0.0, 0.5) == 10 * A
    lg = math.log(10)
    assert math.sqrt(80 * (100 + lg) / (112 * (3 + lg))) == pytest.approx(3.712, abs=1e-3)
    assert gamma_theorem(2, 100, 3, 0.1) == 20
    g = gamma_theorem(1, 1e6, 1, 0.1)
    assert g == pytest.approx(math.sqrt(40 * (1e6 + lg) / (112 * (1 + lg))), rel=1e-14)
    assert g == pytest.approx(328.85, abs=0.01)
    with pytest.raises(ValueError):
        gamma_theorem(2, 1, 1, 1.0)


def test_gamma_schedule():
    s = GammaSchedule(10, 0.5)
    assert s(4) == 20.0
    assert GammaSchedule(fixed=7)(100) == 7.0
    assert GammaSchedule.theorem(2, 100, 3, 0.1)(5) == 20


def bandit(n_actions=3, m=11, seed=0):
    rng = np.random.default_rng(seed)
    dists = np.zeros((2, n_actions, m))
    dists[..., : m // 2] = rng.dirichlet(np.ones(m // 2), size=(2, n_actions))
    return TabularCBEnvironment(dists)


def singleton_oracle(env):
    keys = env.as_class_keys()
    cls_ = CondDistClass(keys, env.dists.reshape(1, len(keys), -1))
    return ExpWeightsCBOracle(cls_, env.n_contexts, env.n_actions)


def test_single_action_has_no_regret():
    env = bandit(n_actions=1)
    trace = run_distcb(env, singleton_oracle(env), GammaSchedule(), 200, seed=1)
    assert trace.total_regret == 0.0
    for runner, oracle in ((run_squarecb, SquareLossOracle(2, 1, 0.1, 11)), (run_fastcb, LogLossOracle(2, 1, 0.1, 11))):
        assert runner(env, oracle, GammaSchedule(), 200, seed=1).total_regret == 0.0


def test_zero_episodes_give_an_empty_trace():
    env = bandit()
    trace = run_distcb(env, singleton_oracle(env), GammaSchedule(), 0, seed=0)
    assert len(trace) == 0
    assert trace.to_csv().strip() == "episode,action,cost,inst_regret,cum_regret,c_star_running"


def test_informed_oracle_beats_uniform_play():
    env = bandit(seed=4)
    trace = run_distcb(env, singleton_oracle(env), GammaSchedule(fixed=1e4), 1000, seed=2)
    assert trace.total_regret < run_uniform(env, 1000, seed=2).total_regret


def test_trace_accounting():
    env = bandit(seed=5)
    trace = run_distcb(env, singleton_oracle(env), GammaSchedule(), 300, seed=3)
    assert np.all(trace.inst_regret >= 0)
    assert np.all(np.diff(trace.cum_regret) >= 0)
    assert trace.cum_regret[-1] == pytest.approx(math.fsum(trace.inst_regret), abs=1e-12)
    rows = list(csv.DictReader(io.StringIO(trace.to_csv())))
    assert len(rows) == 300
    assert float(rows[-1]["cum_regret"]) == trace.cum_regret[-1]
    # every cost is an atom of the 11-point grid
    atoms = np.array([float(r["cost"]) for r in rows]) * 10
    assert np.allclose(atoms, np.round(atoms))


def test_runs_are_reproducible():
    env = bandit(seed=6)
    a = run_distcb(env, singleton_oracle(env), GammaSchedule(), 100, seed=9).to_csv()
    b = run_distcb(env, singleton_oracle(env), GammaSchedule(), 100, seed=9).to_csv()
    assert a == b


def test_huge_gamma_plays_greedy():
    fhat = np.array([0.4, 0.2, 0.6])
    rng = make_rng(0, "test.greedy")
    for weights in (igw_weights(fhat, 1e6), reigw_weights(fhat, 1e6)):
        draws = np.array([sample_action(weights, rng) for _ in range(10_000)])
        assert np.mean(draws == 1) >= 0.999


def test_batch_defers_updates_within_an_episode():
    env = bandit(seed=8)
    trace = run_distcb(env, singleton_oracle(env), GammaSchedule(), 10, seed=0, batch=4)
    assert len(trace) == 40
    assert list(trace.episodes[:5]) == [1, 1, 1, 1, 2]
