import json

import numpy as np
import pytest

from distlab.dist_core import tv_arrays
from distlab.errors import AlgorithmFailure
from distlab.function_class import DistFunctionClass, build_suffix_class, mirror_class
from distlab.mdp_core import (
    MarkovPolicy,
    TabularMDP,
    mirror_mdp,
    optimal_policy,
    random_mdp,
    return_distribution,
    sample_trajectory,
    value,
)
from distlab.odisco import (
    OnlineDataset,
    confidence_set,
    default_beta,
    optimistic_select,
    run_odisco,
    td_targets,
)
from distlab.rng import make_rng


def det_policies(rng, mdp, n):
    return [MarkovPolicy.deterministic(rng.integers(mdp.A, size=(mdp.H, mdp.X)), mdp.A) for _ in range(n)]


def setup(seed=0, X=2, A=2, H=2, m=9, n_pol=3):
    rng = make_rng(seed, "test")
    mdp = random_mdp(rng, X, A, H, m)
    pi_star, _ = optimal_policy(mdp)
    pols = det_policies(rng, mdp, n_pol) + [pi_star]
    return mdp, build_suffix_class(mdp, pols), pi_star


def test_terminal_targets_are_the_costs():
    mdp, F, _ = setup()
    tuples = [(0, 1, 3, 1), (1, 0, 0, 0), (1, 1, 4, 1)]
    z = td_targets(F, 0, mdp.H - 1, tuples, False, make_rng(0, "test"))
    assert list(z) == [3, 0, 4]


def test_dirac_targets_are_deterministic():
    t1 = np.zeros((2, 2, 7))
    t1[..., 2] = 1.0
    t1[1, 1, 2], t1[1, 1, 3] = 0.0, 1.0
    t0 = np.zeros((2, 2, 7))
    t0[..., 0] = 1.0
    F = DistFunctionClass.from_members([[t0, t1]])
    tuples = [(0, 0, 1, 0), (0, 1, 2, 1)]
    for seed in range(5):
        assert list(td_targets(F, 0, 0, tuples, False, make_rng(seed, "test"))) == [3, 4]
    # small_return picks the larger-mean successor action at state 1
    assert list(td_targets(F, 0, 0, tuples, True, make_rng(0, "test"))) == [3, 5]


def test_target_law_matches_the_exact_shifted_table():
    mdp, F, _ = setup(seed=1)
    f = len(F) - 1
    nxt = F.tables(f)[1]
    a_next = int(np.argmin(nxt[1] @ mdp.grid.atoms))
    n = 100_000
    z = td_targets(F, f, 0, [(0, 0, 2, 1)] * n, False, make_rng(1, "test"))
    emp = np.bincount(z, minlength=mdp.grid.m) / n
    exact = np.zeros(mdp.grid.m)
    exact[2:] = nxt[1, a_next, :-2]
    assert tv_arrays(emp, exact) <= 0.02


def test_confidence_set_trivial_cases():
    mdp, F, pi_star = setup()
    data = OnlineDataset(mdp.H, mdp.X, mdp.A, mdp.grid.m)
    assert confidence_set(F, data, 0.0, rng=make_rng(0, "test")) == set(range(len(F)))
    rng = make_rng(2, "test")
    for _ in range(50):
        for h, step in enumerate(sample_trajectory(mdp, pi_star, rng)):
            data.add(h, *step)
    assert confidence_set(F, data, 1e9, rng=rng) == set(range(len(F)))
    single = DistFunctionClass.from_members([return_distribution(mdp, pi_star)])
    assert confidence_set(single, data, 0.0, rng=rng) == {0}


def test_optimal_member_survives_on_collected_data():
    mdp, F, pi_star = setup(seed=3)
    truth = F.find(return_distribution(mdp, pi_star))
    K = 500
    beta = default_beta(mdp.H, K, len(F), 0.1)
    behavior = MarkovPolicy.uniform(mdp.H, mdp.X, mdp.A)
    hits = 0
    for run in range(100):
        rng = make_rng(run, "test.collect")
        data = OnlineDataset(mdp.H, mdp.X, mdp.A, mdp.grid.m)
        for _ in range(K):
            for h, step in enumerate(sample_trajectory(mdp, behavior, rng)):
                data.add(h, *step)
        hits += truth in confidence_set(F, data, beta, rng=make_rng(run, "test.targets"))
    assert hits >= 85


def test_optimistic_select_examples():
    t = np.zeros((3, 1, 2, 11))
    for i, (lo, hi) in enumerate([(4, 9), (2, 10), (7, 8)]):
        t[i, 0, 0, lo] = 1.0
        t[i, 0, 1, hi] = 1.0
    F = DistFunctionClass.product([t])
    assert optimistic_select(F, {0, 1, 2}, 0) == 1
    assert optimistic_select(F, {2}, 0) == 2
    assert optimistic_select(F, {0, 1, 2}, 0, small_return=True) == 1
    assert optimistic_select(F, {0, 2}, 0, small_return=True) == 0
    with pytest.raises(AlgorithmFailure):
        optimistic_select(F, set(), 0)


def test_singleton_class_has_linear_regret():
    rng = make_rng(4, "test")
    mdp = random_mdp(rng, 3, 2, 2, 9)
    pi = det_policies(rng, mdp, 1)[0]
    F = DistFunctionClass.from_members([return_distribution(mdp, pi)])
    res = run_odisco(mdp, F, 30, seed=0, check_training_error=False)
    _, v_star = optimal_policy(mdp)
    assert len(set(res.members.tolist())) == 1
    assert res.cum_regret[-1] == pytest.approx(30 * (value(mdp, res.mixture.policies[0]) - v_star), abs=1e-12)


def test_optimal_singleton_has_no_regret():
    rng = make_rng(5, "test")
    mdp = random_mdp(rng, 3, 2, 3, 10)
    pi_star, _ = optimal_policy(mdp)
    F = build_suffix_class(mdp, [pi_star])
    res = run_odisco(mdp, F, 50, seed=1)
    assert np.all(res.inst_regret <= 1e-12)
    assert res.diagnostics["contained_throughout"]


def test_run_outputs_are_reproducible_and_well_formed():
    mdp, F, _ = setup(seed=6)
    a = run_odisco(mdp, F, 60, seed=3)
    b = run_odisco(mdp, F, 60, seed=3)
    assert a.to_csv() == b.to_csv() and a.to_jsonl() == b.to_jsonl()
    rows = [json.loads(line) for line in a.to_jsonl().splitlines()]
    assert set(rows[0]) == {"episode", "member", "value", "optimism_gap", "survivors"}
    assert a.mixture_value == pytest.approx(a.mixture.value(mdp), abs=1e-12)


def test_uae_run():
    mdp, F, _ = setup(seed=7)
    res = run_odisco(mdp, F, 100, uae=True, seed=0)
    assert res.diagnostics["training_error_ok"]


def test_small_return_on_the_mirror_reproduces_the_actions():
    rng = make_rng(8, "test")
    H, s, m = 3, 2, 7
    C = np.zeros((H, 3, 2, m))
    idx = rng.integers(0, s + 1, size=(H, 3, 2))
    np.put_along_axis(C, idx[..., None], 1.0, axis=-1)
    mdp = TabularMDP(rng.dirichlet(np.ones(3), size=(H, 3, 2)), C)
    pi_star, _ = optimal_policy(mdp)
    F = build_suffix_class(mdp, det_policies(rng, mdp, 3) + [pi_star])
    mirrored = mirror_mdp(mdp, s)
    G = mirror_class(F, s)
    for seed in range(3):
        a = run_odisco(mdp, F, 80, seed=seed, exact=True, beta=0.3)
        b = run_odisco(mirrored, G, 80, seed=seed, exact=True, beta=0.3, small_return=True)
        assert np.array_equal(a.members, b.members)
        assert [p.key() for p in a.mixture.policies] == [p.key() for p in b.mixture.policies]
