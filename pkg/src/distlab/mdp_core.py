"""Exact finite-horizon tabular MDP machinery.

Steps are 0-indexed in code: layer ``h`` runs over ``0..H-1`` and the
implicit layer ``H`` is the point mass at zero. A conditional distribution
table for one layer is an array of shape ``(X, A, m)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .dist_core import GridCategorical, GridSpec, NormalizationError, convolve_arrays, mean_arrays

ROW_TOL = 1e-12


def _greedy(means: np.ndarray, small_return: bool = False) -> np.ndarray:
    """Lowest-index argmin (argmax under ``small_return``) along the last axis."""
    return np.argmax(means, axis=-1) if small_return else np.argmin(means, axis=-1)


def _worst_cost_index(P: np.ndarray, C: np.ndarray) -> int:
    """Largest reachable cumulative cost index over all start cells and action choices."""
    H, X, A, m = C.shape
    charged = np.where(C > 0, np.arange(m), -1).max(axis=-1)
    best_next = np.zeros(X, dtype=np.int64)
    worst = 0
    for h in reversed(range(H)):
        reach = np.where(P[h] > 0, best_next[None, None, :], -1).max(axis=-1)
        tot = charged[h] + reach
        worst = max(worst, int(tot.max()))
        best_next = tot.max(axis=-1)
    return worst


@dataclass(frozen=True)
class MarkovPolicy:
    """Per-step action distributions, ``probs[h, x, a]``."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=np.float64)
        if p.ndim != 3:
            raise ValueError("policy probs must have shape (H, X, A)")
        if np.any(p < 0) or np.any(np.abs(p.sum(-1) - 1.0) > ROW_TOL):
            raise ValueError("every policy row must be a distribution")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @classmethod
    def deterministic(cls, actions, A: int) -> "MarkovPolicy":
        acts = np.asarray(actions, dtype=np.int64)
        H, X = acts.shape
        p = np.zeros((H, X, A))
        p[np.arange(H)[:, None], np.arange(X)[None, :], acts] = 1.0
        return cls(p)

    @classmethod
    def uniform(cls, H: int, X: int, A: int) -> "MarkovPolicy":
        return cls(np.full((H, X, A), 1.0 / A))

    @property
    def H(self) -> int:
        return self.probs.shape[0]

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all((self.probs == 0) | (self.probs == 1)))

    def actions(self) -> np.ndarray:
        """Action table ``(H, X)``; only meaningful for deterministic policies."""
        return np.argmax(self.probs, axis=-1)

    def key(self) -> bytes:
        return self.probs.tobytes()


@dataclass(frozen=True)
class TabularMDP:
    """Finite MDP with transitions ``P[h, x, a, x']`` and costs ``C[h, x, a, :]``."""

    P: np.ndarray
    C: np.ndarray
    x1: int = 0

    def __post_init__(self):
        P = np.array(self.P, dtype=np.float64)
        C = np.array(self.C, dtype=np.float64)
        if P.ndim != 4 or C.ndim != 4 or P.shape[:3] != C.shape[:3] or P.shape[1] != P.shape[3]:
            raise ValueError("P must be (H, X, A, X) and C must be (H, X, A, m)")
        if np.any(P < 0) or np.any(np.abs(P.sum(-1) - 1.0) > ROW_TOL):
            raise ValueError("transition rows must sum to 1")
        if np.any(C < 0) or np.any(np.abs(C.sum(-1) - 1.0) > 1e-9):
            raise ValueError("cost rows must be distributions")
        if not 0 <= self.x1 < P.shape[1]:
            raise ValueError("initial state out of range")
        top = _worst_cost_index(P, C)
        m = C.shape[-1]
        if top > m - 1:
            raise NormalizationError(
                f"worst-case cumulative cost index {top} exceeds the top atom {m - 1}"
            )
        P.setflags(write=False)
        C.setflags(write=False)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "C", C)

    @property
    def H(self) -> int:
        return self.P.shape[0]

    @property
    def X(self) -> int:
        return self.P.shape[1]

    @property
    def A(self) -> int:
        return self.P.shape[2]

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.C.shape[-1])

    @property
    def mean_costs(self) -> np.ndarray:
        return mean_arrays(self.C)

    def cost(self, h: int, x: int, a: int) -> GridCategorical:
        return GridCategorical(self.grid, self.C[h, x, a])

    def terminal(self) -> np.ndarray:
        """The layer-H table: point mass at zero everywhere."""
        t = np.zeros((self.X, self.A, self.grid.m))
        t[..., 0] = 1.0
        return t

    def to_json(self) -> dict:
        return {
            "X": self.X,
            "A": self.A,
            "H": self.H,
            "m": self.grid.m,
            "x1": self.x1,
            "P": self.P.tolist(),
            "C": [[[{"m": self.grid.m, "probs": self.C[h, x, a].tolist()} for a in range(self.A)]
                   for x in range(self.X)] for h in range(self.H)],
        }

    @classmethod
    def from_json(cls, obj) -> "TabularMDP":
        if isinstance(obj, str):
            obj = json.loads(obj)
        C = np.array([[[GridCategorical.from_json(c).probs for c in row] for row in layer] for layer in obj["C"]])
        mdp = cls(np.array(obj["P"], dtype=np.float64), C, int(obj.get("x1", 0)))
        if (mdp.X, mdp.A, mdp.H, mdp.grid.m) != (obj["X"], obj["A"], obj["H"], obj["m"]):
            raise ValueError("declared shape does not match the arrays")
        return mdp


# --- distributional backups ---------------------------------------------------


def _successor_mixture(mdp: TabularMDP, h: int, next_law: np.ndarray) -> np.ndarray:
    """Mix per-state successor laws ``next_law[x', :]`` through ``P_h``."""
    return np.einsum("xay,ym->xam", mdp.P[h], next_law)


def dist_backup_pi(mdp: TabularMDP, h: int, d_next: np.ndarray, pi: MarkovPolicy) -> np.ndarray:
    """Distributional policy backup of ``d_next`` into layer ``h``."""
    pi_next = pi.probs[h + 1] if h + 1 < mdp.H else np.eye(mdp.A)[np.zeros(mdp.X, dtype=np.int64)]
    next_law = np.einsum("ya,yam->ym", pi_next, d_next)
    return convolve_arrays(mdp.C[h], _successor_mixture(mdp, h, next_law))


def dist_backup_star(mdp: TabularMDP, h: int, d_next: np.ndarray, small_return: bool = False) -> np.ndarray:
    """Optimality backup: the successor action greedily optimizes ``mean(d_next)``."""
    a_next = _greedy(mean_arrays(d_next), small_return)
    next_law = d_next[np.arange(mdp.X), a_next]
    return convolve_arrays(mdp.C[h], _successor_mixture(mdp, h, next_law))


def return_distribution(mdp: TabularMDP, pi: MarkovPolicy) -> list[np.ndarray]:
    """Loss-to-go laws ``Z[h][x, a, :]`` for ``h = 0..H-1``."""
    layers = [None] * mdp.H
    nxt = mdp.terminal()
    for h in reversed(range(mdp.H)):
        nxt = dist_backup_pi(mdp, h, nxt, pi)
        layers[h] = nxt
    return layers


# --- scalar quantities --------------------------------------------------------


def policy_evaluation(mdp: TabularMDP, pi: MarkovPolicy, step_values: np.ndarray) -> np.ndarray:
    """Expected sum of ``step_values[t, x, a]`` over ``t >= h`` given ``(x_h, a_h)``.

    Returns an ``(H, X, A)`` array; with mean costs this is the Q-function.
    """
    H = mdp.H
    Q = np.zeros((H, mdp.X, mdp.A))
    v_next = np.zeros(mdp.X)
    for h in reversed(range(H)):
        Q[h] = step_values[h] + mdp.P[h] @ v_next
        v_next = np.einsum("xa,xa->x", pi.probs[h], Q[h])
    return Q


def q_values(mdp: TabularMDP, pi: MarkovPolicy) -> np.ndarray:
    return policy_evaluation(mdp, pi, mdp.mean_costs)


def value(mdp: TabularMDP, pi: MarkovPolicy) -> float:
    Q = q_values(mdp, pi)
    return float(pi.probs[0, mdp.x1] @ Q[0, mdp.x1])


def optimal_policy(mdp: TabularMDP, small_return: bool = False) -> tuple[MarkovPolicy, float]:
    """Backward induction on means; deterministic, ties to the lowest action."""
    c = mdp.mean_costs
    acts = np.zeros((mdp.H, mdp.X), dtype=np.int64)
    v_next = np.zeros(mdp.X)
    for h in reversed(range(mdp.H)):
        q = c[h] + mdp.P[h] @ v_next
        acts[h] = _greedy(q, small_return)
        v_next = q[np.arange(mdp.X), acts[h]]
    return MarkovPolicy.deterministic(acts, mdp.A), float(v_next[mdp.x1])


def occupancy(mdp: TabularMDP, pi: MarkovPolicy) -> np.ndarray:
    """State-action visitation ``d[h, x, a]`` from the initial state."""
    d = np.zeros((mdp.H, mdp.X, mdp.A))
    s = np.zeros(mdp.X)
    s[mdp.x1] = 1.0
    for h in range(mdp.H):
        d[h] = s[:, None] * pi.probs[h]
        s = np.einsum("xa,xay->y", d[h], mdp.P[h])
    return d


def coverage_coefficient(mdp: TabularMDP, pi_tilde: MarkovPolicy, nu: np.ndarray) -> float:
    """``max_h max_{x,a} d^pi(x,a) / nu_h(x,a)`` with 0/0 = 0 and c/0 = inf."""
    d = occupancy(mdp, pi_tilde)
    nu = np.asarray(nu, dtype=np.float64).reshape(d.shape)
    if np.any((d > 0) & (nu <= 0)):
        return math.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(d > 0, d / np.where(nu > 0, nu, 1.0), 0.0)
    return float(ratio.max())


# --- sampling -----------------------------------------------------------------


def draw_index(p: np.ndarray, rng: np.random.Generator) -> int:
    c = np.cumsum(p)
    return int(min(np.searchsorted(c, rng.random() * c[-1], side="right"), p.size - 1))


def sample_step(mdp: TabularMDP, h: int, x: int, a: int, rng: np.random.Generator) -> tuple[int, int]:
    """Draw ``(cost atom, next state)`` for one transition."""
    c = draw_index(mdp.C[h, x, a], rng)
    x_next = draw_index(mdp.P[h, x, a], rng)
    return c, x_next


def sample_trajectory(mdp: TabularMDP, pi: MarkovPolicy, rng: np.random.Generator) -> list[tuple[int, int, int, int]]:
    """One rollout as ``(x, a, cost atom, x')`` per step."""
    out = []
    x = mdp.x1
    for h in range(mdp.H):
        a = draw_index(pi.probs[h, x], rng)
        c, xn = sample_step(mdp, h, x, a, rng)
        out.append((x, a, c, xn))
        x = xn
    return out


def sample_uae_tuples(mdp: TabularMDP, pi: MarkovPolicy, rng: np.random.Generator) -> list[tuple[int, int, int, int]]:
    """For each step, a fresh partial rollout of ``pi`` then a uniform action."""
    out = []
    for h in range(mdp.H):
        x = mdp.x1
        for t in range(h):
            a = draw_index(pi.probs[t, x], rng)
            x = draw_index(mdp.P[t, x, a], rng)
        a = int(rng.integers(mdp.A))
        c, xn = sample_step(mdp, h, x, a, rng)
        out.append((x, a, c, xn))
    return out


def all_deterministic_policies(mdp: TabularMDP) -> list[MarkovPolicy]:
    """Every deterministic Markov policy; guarded against blow-up."""
    n = mdp.A ** (mdp.H * mdp.X)
    if n > 100_000:
        raise ValueError(f"{n} deterministic policies is too many to enumerate")
    out = []
    for code in range(n):
        digits = np.zeros(mdp.H * mdp.X, dtype=np.int64)
        c = code
        for i in range(digits.size):
            digits[i] = c % mdp.A
            c //= mdp.A
        out.append(MarkovPolicy.deterministic(digits.reshape(mdp.H, mdp.X), mdp.A))
    return out


def random_mdp(rng: np.random.Generator, X: int, A: int, H: int, m: int, x1: int = 0,
               max_step_index: int | None = None, sparsity: float = 0.0) -> TabularMDP:
    """Random MDP whose per-step cost support keeps cumulative cost within [0, 1]."""
    s = (m - 1) // H if max_step_index is None else max_step_index
    if s * H > m - 1:
        raise ValueError("step support too wide for the grid")
    P = rng.dirichlet(np.ones(X), size=(H, X, A))
    if sparsity > 0:
        mask = rng.random(P.shape) < sparsity
        mask[..., 0] = False
        P = np.where(mask, 0.0, P)
        P /= P.sum(-1, keepdims=True)
    C = np.zeros((H, X, A, m))
    C[..., : s + 1] = rng.dirichlet(np.ones(s + 1), size=(H, X, A))
    return TabularMDP(P, C, x1)


def mirror_mdp(mdp: TabularMDP, step_span: int) -> TabularMDP:
    """Reflect every step cost through ``step_span`` atoms: index ``i`` becomes ``step_span - i``.

    Small costs become large ones, so minimizing on ``mdp`` and maximizing on
    the mirror rank policies identically.
    """
    if step_span * mdp.H > mdp.grid.m - 1:
        raise ValueError("reflected costs would not fit on the grid")
    if np.any(mdp.C[..., step_span + 1 :] > 0):
        raise ValueError(f"costs charge atoms beyond the reflection span {step_span}")
    C = np.zeros_like(mdp.C)
    C[..., : step_span + 1] = mdp.C[..., step_span::-1]
    return TabularMDP(mdp.P, C, mdp.x1)


@dataclass(frozen=True)
class MixturePolicy:
    """Uniform mixture over whole policies: one member is drawn per episode."""

    policies: tuple

    def __post_init__(self):
        if len(self.policies) == 0:
            raise ValueError("a mixture needs at least one policy")
        object.__setattr__(self, "policies", tuple(self.policies))

    def value(self, mdp: TabularMDP) -> float:
        cache: dict[bytes, float] = {}
        total = 0.0
        for pi in self.policies:
            k = pi.key()
            if k not in cache:
                cache[k] = value(mdp, pi)
            total += cache[k]
        return total / len(self.policies)
