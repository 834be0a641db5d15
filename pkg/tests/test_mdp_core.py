import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distlab.dist_core import NormalizationError, d_triangle_arrays, mean_arrays, tv_arrays
from distlab.mdp_core import (
    MarkovPolicy,
    MixturePolicy,
    TabularMDP,
    coverage_coefficient,
    dist_backup_pi,
    dist_backup_star,
    occupancy,
    optimal_policy,
    policy_evaluation,
    q_values,
    random_mdp,
    return_distribution,
    sample_trajectory,
    sample_uae_tuples,
    value,
)
from distlab.rng import make_rng


def random_policy(rng, mdp, deterministic=False):
    if deterministic:
        return MarkovPolicy.deterministic(rng.integers(mdp.A, size=(mdp.H, mdp.X)), mdp.A)
    return MarkovPolicy(rng.dirichlet(np.ones(mdp.A), size=(mdp.H, mdp.X)))


def chain(H, step_atom, m):
    """One state, one action, a fixed cost of ``step_atom`` grid steps every step."""
    C = np.zeros((H, 1, 1, m))
    C[..., step_atom] = 1.0
    return TabularMDP(np.ones((H, 1, 1, 1)), C)


def enumerate_return(mdp, pi, h, x, a):
    """Loss-to-go law by walking every (cost, next state, next action) branch."""
    law = np.zeros(mdp.grid.m)

    def walk(t, x, a, acc, prob):
        for c in np.flatnonzero(mdp.C[t, x, a]):
            pc = prob * mdp.C[t, x, a, c]
            if t == mdp.H - 1:
                law[acc + c] += pc
                continue
            for xn in np.flatnonzero(mdp.P[t, x, a]):
                for an in np.flatnonzero(pi.probs[t + 1, xn]):
                    walk(t + 1, xn, an, acc + c, pc * mdp.P[t, x, a, xn] * pi.probs[t + 1, xn, an])

    walk(h, x, a, 0, 1.0)
    return law


def scalar_value(mdp, pi):
    """Plain nested-loop policy evaluation."""
    v = [0.0] * mdp.X
    for h in reversed(range(mdp.H)):
        c = mean_arrays(mdp.C[h])
        v = [
            sum(pi.probs[h, x, a] * (c[x, a] + sum(mdp.P[h, x, a, y] * v[y] for y in range(mdp.X))) for a in range(mdp.A))
            for x in range(mdp.X)
        ]
    return v[mdp.x1]


# --- backups ------------------------------------------------------------------


def test_terminal_backup_returns_the_cost_law():
    mdp = random_mdp(make_rng(0, "test"), 3, 2, 2, 9)
    pi = MarkovPolicy.uniform(2, 3, 2)
    assert np.allclose(dist_backup_pi(mdp, 1, mdp.terminal(), pi), mdp.C[1], atol=1e-15)
    assert np.allclose(dist_backup_star(mdp, 1, mdp.terminal()), mdp.C[1], atol=1e-15)


def test_deterministic_chain_shifts_point_masses():
    mdp = chain(3, 2, 7)
    Z = return_distribution(mdp, MarkovPolicy.uniform(3, 1, 1))
    for h in range(3):
        expected = np.zeros(7)
        expected[2 * (3 - h)] = 1.0
        assert np.array_equal(Z[h][0, 0], expected)


def test_two_state_backup_matches_enumeration():
    P = np.zeros((2, 2, 2, 2))
    P[0] = [[[0.5, 0.5], [0.2, 0.8]], [[1.0, 0.0], [0.3, 0.7]]]
    P[1] = 0.5
    C = np.zeros((2, 2, 2, 5))
    C[0, ..., :3] = [[[0.2, 0.5, 0.3], [1, 0, 0]], [[0, 0, 1], [0.5, 0.5, 0]]]
    C[1, ..., 0] = 1.0
    mdp = TabularMDP(P, C)
    d_next = np.zeros((2, 2, 5))
    d_next[..., :3] = [[[0.6, 0.4, 0.0], [0.0, 0.0, 1.0]], [[0.1, 0.8, 0.1], [0.3, 0.3, 0.4]]]
    pi = MarkovPolicy(np.array([[[0.5, 0.5], [0.5, 0.5]], [[0.25, 0.75], [1.0, 0.0]]]))
    out = dist_backup_pi(mdp, 0, d_next, pi)
    for x, a in itertools.product(range(2), range(2)):
        brute = np.zeros(5)
        for c, xn, an, y in itertools.product(range(5), range(2), range(2), range(5)):
            brute[min(c + y, 4)] += C[0, x, a, c] * P[0, x, a, xn] * pi.probs[1, xn, an] * d_next[xn, an, y]
        assert np.allclose(out[x, a], brute, atol=1e-15)


def test_star_backup_picks_the_greedy_successor_action():
    P = np.ones((2, 1, 2, 1))
    C = np.zeros((2, 1, 2, 11))
    C[..., 0] = 1.0
    mdp = TabularMDP(P, C)
    d_next = np.zeros((1, 2, 11))
    d_next[0, 0, 2] = 1.0  # mean 0.2
    d_next[0, 1, 8] = 1.0  # mean 0.8
    assert np.array_equal(dist_backup_star(mdp, 0, d_next)[0, 0], d_next[0, 0])
    assert np.array_equal(dist_backup_star(mdp, 0, d_next, small_return=True)[0, 0], d_next[0, 1])


def test_backup_overflow_is_reported():
    C = np.zeros((1, 1, 1, 3))
    C[..., 2] = 1.0
    mdp = TabularMDP(np.ones((1, 1, 1, 1)), C)
    d_next = np.zeros((1, 1, 3))
    d_next[..., 1] = 1.0
    with pytest.raises(NormalizationError):
        dist_backup_star(mdp, 0, d_next)


def test_cost_overflow_is_rejected_at_construction():
    C = np.zeros((2, 1, 1, 3))
    C[..., 2] = 1.0
    with pytest.raises(NormalizationError):
        TabularMDP(np.ones((2, 1, 1, 1)), C)


# --- return distributions and values --------------------------------------------


def test_return_distribution_examples():
    mdp = random_mdp(make_rng(1, "test"), 3, 2, 1, 6)
    Z = return_distribution(mdp, MarkovPolicy.uniform(1, 3, 2))
    assert np.allclose(Z[0], mdp.C[0])

    rng = make_rng(2, "test")
    mdp = random_mdp(rng, 3, 2, 3, 10)
    pi = random_policy(rng, mdp)
    Z = return_distribution(mdp, pi)
    v = pi.probs[0, mdp.x1] @ mean_arrays(Z[0][mdp.x1])
    assert v == pytest.approx(scalar_value(mdp, pi), abs=1e-12)


def test_value_examples():
    C = np.zeros((3, 2, 2, 4))
    C[..., 0] = 1.0
    mdp = TabularMDP(np.full((3, 2, 2, 2), 0.5), C)
    assert value(mdp, MarkovPolicy.uniform(3, 2, 2)) == 0.0
    H = 4
    assert value(chain(H, 1, H + 1), MarkovPolicy.uniform(H, 1, 1)) == pytest.approx(1.0, abs=1e-15)


def test_optimal_policy_examples():
    mdp = chain(2, 1, 3)
    pi, v = optimal_policy(mdp)
    assert np.array_equal(pi.actions(), [[0], [0]])
    assert v == pytest.approx(1.0)

    C = np.zeros((1, 2, 2, 11))
    C[0, :, 0, 1] = 1.0
    C[0, :, 1, 9] = 1.0
    mdp = TabularMDP(np.full((1, 2, 2, 2), 0.5), C)
    pi, v = optimal_policy(mdp)
    assert np.all(pi.actions() == 0)
    assert v == pytest.approx(0.1)

    rng = make_rng(3, "test")
    mdp = random_mdp(rng, 4, 2, 3, 10)
    _, v_star = optimal_policy(mdp)
    for _ in range(100):
        assert v_star <= value(mdp, random_policy(rng, mdp)) + 1e-12


def test_occupancy_examples():
    rng = make_rng(4, "test")
    mdp = random_mdp(rng, 3, 2, 3, 10, x1=2)
    pi = random_policy(rng, mdp)
    d = occupancy(mdp, pi)
    assert np.allclose(d[0, 2], pi.probs[0, 2])
    assert d[0, :2].sum() == 0.0
    assert np.allclose(d.sum(axis=(1, 2)), 1.0, atol=1e-12)
    c = mean_arrays(mdp.C)
    assert float(np.sum(d * c)) == pytest.approx(value(mdp, pi), abs=1e-12)
    d = occupancy(chain(3, 1, 4), MarkovPolicy.uniform(3, 1, 1))
    assert np.array_equal(d.ravel(), [1.0, 1.0, 1.0])


def test_coverage_examples():
    rng = make_rng(5, "test")
    mdp = random_mdp(rng, 3, 2, 3, 10)
    pi = random_policy(rng, mdp)
    assert coverage_coefficient(mdp, pi, occupancy(mdp, pi)) == pytest.approx(1.0, abs=1e-12)

    det = chain(2, 0, 3)
    uniform = np.full((2, 1, 1), 1.0)
    assert coverage_coefficient(det, MarkovPolicy.uniform(2, 1, 1), uniform) == 1.0
    P = np.zeros((2, 2, 2, 2))
    P[..., 0] = 1.0
    C = np.zeros((2, 2, 2, 3))
    C[..., 0] = 1.0
    mdp = TabularMDP(P, C)
    pi = MarkovPolicy.deterministic(np.zeros((2, 2), dtype=int), 2)
    assert coverage_coefficient(mdp, pi, np.full((2, 2, 2), 0.25)) == pytest.approx(4.0)
    nu = np.full((2, 2, 2), 1 / 3)
    nu[:, 0, 0] = 0.0
    assert coverage_coefficient(mdp, pi, nu) == math.inf


def test_mixture_policy_value_is_the_average():
    rng = make_rng(6, "test")
    mdp = random_mdp(rng, 3, 2, 2, 9)
    pols = [random_policy(rng, mdp, deterministic=True) for _ in range(4)]
    assert MixturePolicy(pols).value(mdp) == pytest.approx(np.mean([value(mdp, p) for p in pols]), abs=1e-15)


def test_mdp_json_roundtrip():
    mdp = random_mdp(make_rng(7, "test"), 2, 2, 2, 5)
    obj = json.loads(json.dumps(mdp.to_json()))
    assert set(obj) == {"X", "A", "H", "m", "x1", "P", "C"}
    assert obj["C"][0][0][0] == {"m": 5, "probs": mdp.C[0, 0, 0].tolist()}
    back = TabularMDP.from_json(obj)
    assert np.array_equal(back.P, mdp.P) and np.array_equal(back.C, mdp.C)


# --- sampling -----------------------------------------------------------------


def test_deterministic_trajectory():
    P = np.zeros((3, 2, 1, 2))
    P[:, 0, 0, 1] = 1.0
    P[:, 1, 0, 0] = 1.0
    C = np.zeros((3, 2, 1, 4))
    C[:, 0, 0, 1] = 1.0
    C[:, 1, 0, 0] = 1.0
    mdp = TabularMDP(P, C)
    traj = sample_trajectory(mdp, MarkovPolicy.uniform(3, 2, 1), make_rng(0, "test"))
    assert traj == [(0, 0, 1, 1), (1, 0, 0, 0), (0, 0, 1, 1)]


def test_trajectory_visitation_matches_occupancy():
    rng = make_rng(8, "test")
    mdp = random_mdp(rng, 3, 2, 3, 10)
    pi = random_policy(rng, mdp)
    n = 100_000
    counts = np.zeros((mdp.H, mdp.X, mdp.A))
    for _ in range(n):
        for h, (x, a, _, _) in enumerate(sample_trajectory(mdp, pi, rng)):
            counts[h, x, a] += 1
    d = occupancy(mdp, pi)
    for h in range(mdp.H):
        assert tv_arrays(counts[h].ravel() / n, d[h].ravel()) <= 0.02


def test_uae_actions_are_uniform():
    rng = make_rng(9, "test")
    mdp = random_mdp(rng, 3, 3, 3, 10)
    pi = random_policy(rng, mdp, deterministic=True)
    n = 100_000
    counts = np.zeros((mdp.H, mdp.A))
    for _ in range(n):
        for h, (_, a, _, _) in enumerate(sample_uae_tuples(mdp, pi, rng)):
            counts[h, a] += 1
    for h in range(mdp.H):
        assert tv_arrays(counts[h] / n, np.full(mdp.A, 1 / mdp.A)) <= 0.02


# --- properties on random instances ---------------------------------------------

small_mdps = st.tuples(
    st.integers(0, 10**6), st.integers(1, 4), st.integers(1, 3), st.integers(1, 3), st.integers(4, 13)
)


def build(params):
    seed, X, A, H, m = params
    m = max(m, H + 1)
    rng = np.random.default_rng(seed)
    return rng, random_mdp(rng, X, A, H, m, x1=int(rng.integers(X)), sparsity=0.3)


def random_tables(rng, mdp):
    """One table per step whose support fits under the costs still to come."""
    s = (mdp.grid.m - 1) // mdp.H
    out = []
    for h in range(mdp.H):
        k = s * (mdp.H - h) + 1
        t = np.zeros((mdp.X, mdp.A, mdp.grid.m))
        t[..., :k] = rng.dirichlet(np.ones(k), size=(mdp.X, mdp.A))
        out.append(t)
    return out


@settings(max_examples=40, deadline=None)
@given(small_mdps)
def test_backups_commute_with_means(params):
    rng, mdp = build(params)
    pi = random_policy(rng, mdp)
    f = random_tables(rng, mdp)
    c = mean_arrays(mdp.C)
    for h in range(mdp.H):
        nxt = f[h + 1] if h + 1 < mdp.H else mdp.terminal()
        nm = mean_arrays(nxt)
        pi_next = pi.probs[h + 1] if h + 1 < mdp.H else np.eye(mdp.A)[np.zeros(mdp.X, dtype=int)]
        expect_pi = c[h] + mdp.P[h] @ np.sum(pi_next * nm, axis=1)
        expect_star = c[h] + mdp.P[h] @ nm.min(axis=1)
        assert np.allclose(mean_arrays(dist_backup_pi(mdp, h, nxt, pi)), expect_pi, atol=1e-12, rtol=0)
        assert np.allclose(mean_arrays(dist_backup_star(mdp, h, nxt)), expect_star, atol=1e-12, rtol=0)


@settings(max_examples=20, deadline=None)
@given(small_mdps)
def test_return_distribution_is_the_bellman_fixed_point(params):
    rng, mdp = build(params)
    pi = random_policy(rng, mdp)
    Z = return_distribution(mdp, pi)
    for h in range(mdp.H):
        nxt = Z[h + 1] if h + 1 < mdp.H else mdp.terminal()
        assert np.array_equal(Z[h], dist_backup_pi(mdp, h, nxt, pi))
        for x, a in itertools.product(range(mdp.X), range(mdp.A)):
            assert np.allclose(Z[h][x, a], enumerate_return(mdp, pi, h, x, a), atol=1e-12, rtol=0)
    Q = q_values(mdp, pi)
    assert np.allclose(mean_arrays(np.stack(Z)), Q, atol=1e-12, rtol=0)


@settings(max_examples=40, deadline=None)
@given(small_mdps)
def test_performance_difference_lemma(params):
    rng, mdp = build(params)
    pi, pi2 = random_policy(rng, mdp), random_policy(rng, mdp)
    f = rng.random((mdp.H, mdp.X, mdp.A))
    c = mean_arrays(mdp.C)
    d = occupancy(mdp, pi)
    rhs = 0.0
    for h in range(mdp.H):
        f_next = np.sum(pi2.probs[h + 1] * f[h + 1], axis=1) if h + 1 < mdp.H else np.zeros(mdp.X)
        backup = c[h] + mdp.P[h] @ f_next
        f_here = np.sum(pi2.probs[h] * f[h], axis=1)
        rhs += float(np.sum(d[h] * (backup - f_here[:, None])))
    lhs = value(mdp, pi) - pi2.probs[0, mdp.x1] @ f[0, mdp.x1]
    assert lhs == pytest.approx(rhs, abs=1e-8)


@settings(max_examples=40, deadline=None)
@given(small_mdps)
def test_self_bounding_lemma(params):
    rng, mdp = build(params)
    pi = random_policy(rng, mdp)
    f = random_tables(rng, mdp)
    delta = np.stack(
        [d_triangle_arrays(f[h], dist_backup_pi(mdp, h, f[h + 1] if h + 1 < mdp.H else mdp.terminal(), pi)) for h in range(mdp.H)]
    )
    future = policy_evaluation(mdp, pi, delta)
    Q = q_values(mdp, pi)
    fbar = mean_arrays(np.stack(f))
    assert np.all(fbar <= math.e * Q + 4 * mdp.H * future + 1e-8)


@settings(max_examples=40, deadline=None)
@given(small_mdps)
def test_self_coverage_is_one(params):
    rng, mdp = build(params)
    pi = random_policy(rng, mdp)
    assert coverage_coefficient(mdp, pi, occupancy(mdp, pi)) == 1.0
