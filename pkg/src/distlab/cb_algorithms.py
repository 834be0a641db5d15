"""Contextual bandits: ReIGW, DistCB, and the SquareCB / FastCB baselines.

Regret is always measured against the simulator's ground-truth mean costs,
never against realized costs.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .dist_core import GridSpec, mean_arrays
from .mle_oracle import CondDistClass, LikelihoodLedger, SoftmaxOracle, ew_update, log_regret
from .rng import make_rng

MEAN_FLOOR = 1e-6


# --- action distributions -----------------------------------------------------


def _check_predictions(fhat) -> np.ndarray:
    f = np.asarray(fhat, dtype=np.float64)
    if f.ndim != 1 or f.size == 0:
        raise ValueError("predictions must be a non-empty vector")
    if not np.all(np.isfinite(f)):
        raise ValueError("predictions must be finite")
    if np.any(f < 0) or np.any(f > 1):
        raise ValueError("predicted means must lie in [0, 1]")
    return f


def reigw_weights(fhat, gamma: float) -> np.ndarray:
    """Reweighted inverse gap weighting.

    Every non-greedy arm gets ``f_b / (A f_b + gamma (f_a - f_b))`` where ``b`` is
    the lowest-index argmin of the floored predictions; ``b`` takes the rest.
    """
    f = np.maximum(_check_predictions(fhat), MEAN_FLOOR)
    A = f.size
    if not math.isfinite(gamma):
        raise ValueError("gamma must be finite")
    if gamma < 2 * A:
        raise ValueError(f"gamma={gamma} is below 2A={2 * A}")
    b = int(np.argmin(f))
    p = f[b] / (A * f[b] + gamma * (f - f[b]))
    p[b] = 0.0
    p[b] = 1.0 - p.sum()
    return p


def igw_weights(fhat, gamma: float) -> np.ndarray:
    """Unweighted inverse gap weighting used by SquareCB."""
    f = _check_predictions(fhat)
    if not math.isfinite(gamma) or gamma < 0:
        raise ValueError("gamma must be a finite non-negative number")
    A = f.size
    b = int(np.argmin(f))
    p = 1.0 / (A + gamma * (f - f[b]))
    p[b] = 0.0
    p[b] = 1.0 - p.sum()
    return p


def gamma_theorem(A: int, c_star: float, regret_log: float, delta: float) -> float:
    """Exploration parameter that tunes the DistCB regret bound."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if A < 1 or c_star < 0 or regret_log < 0:
        raise ValueError("A must be positive; c_star and regret_log non-negative")
    lg = math.log(1.0 / delta)
    return max(10.0 * A, math.sqrt(40.0 * A * (c_star + lg) / (112.0 * (regret_log + lg))))


def sample_action(p: np.ndarray, rng: np.random.Generator) -> int:
    c = np.cumsum(p)
    return int(min(np.searchsorted(c, rng.random() * c[-1], side="right"), p.size - 1))


@dataclass(frozen=True)
class GammaSchedule:
    """``gamma_k = gamma0 * k**p`` (practical) or a fixed value (theorem mode)."""

    gamma0: float = 10.0
    p: float = 0.5
    fixed: float | None = None

    def __call__(self, k: int) -> float:
        if self.fixed is not None:
            return float(self.fixed)
        return float(self.gamma0 * k**self.p)

    @classmethod
    def theorem(cls, A: int, c_star: float, regret_log: float, delta: float) -> "GammaSchedule":
        return cls(fixed=gamma_theorem(A, c_star, regret_log, delta))


# --- environments -------------------------------------------------------------


class CBEnvironment:
    """Ground-truth contextual bandit. Contexts are integer ids."""

    n_actions: int
    grid: GridSpec

    def sample_context(self, rng: np.random.Generator) -> int:
        raise NotImplementedError

    def features(self, ctx: int) -> np.ndarray:
        raise NotImplementedError

    def cost_probs(self, ctx: int) -> np.ndarray:
        """Array of shape ``(A, m)`` with the cost law of every action."""
        raise NotImplementedError

    def mean_costs(self, ctx: int) -> np.ndarray:
        return mean_arrays(self.cost_probs(ctx))

    def sample_cost(self, ctx: int, action: int, rng: np.random.Generator) -> int:
        p = self.cost_probs(ctx)[action]
        return sample_action(p, rng)


class TabularCBEnvironment(CBEnvironment):
    """Finitely many contexts with full cost distributions ``dists[x, a, :]``."""

    def __init__(self, dists, context_probs=None, feats=None):
        self.dists = np.asarray(dists, dtype=np.float64)
        if self.dists.ndim != 3:
            raise ValueError("dists must have shape (contexts, actions, atoms)")
        if np.any(self.dists < 0) or np.any(np.abs(self.dists.sum(-1) - 1) > 1e-9):
            raise ValueError("every cost law must be a probability vector")
        X, A, m = self.dists.shape
        self.n_actions = A
        self.grid = GridSpec(m)
        self.context_probs = np.full(X, 1.0 / X) if context_probs is None else np.asarray(context_probs, float)
        self._cum = np.cumsum(self.context_probs)
        self._means = mean_arrays(self.dists)
        self._feats = np.eye(X) if feats is None else np.asarray(feats, float)

    @property
    def n_contexts(self) -> int:
        return self.dists.shape[0]

    def sample_context(self, rng):
        return int(min(np.searchsorted(self._cum, rng.random() * self._cum[-1], side="right"), self.n_contexts - 1))

    def features(self, ctx):
        return self._feats[ctx]

    def cost_probs(self, ctx):
        return self.dists[ctx]

    def mean_costs(self, ctx):
        return self._means[ctx]

    def as_class_keys(self):
        return [(x, a) for x in range(self.n_contexts) for a in range(self.n_actions)]


class LabelCBEnvironment(CBEnvironment):
    """Rows of features with a deterministic on-grid cost per action.

    ``cost_index[i, a]`` is the grid index of the cost of action ``a`` on row
    ``i``; contexts are rows drawn uniformly with replacement.
    """

    def __init__(self, feats, cost_index, grid: GridSpec):
        self.feats = np.asarray(feats, dtype=np.float64)
        self.cost_index = np.asarray(cost_index, dtype=np.int64)
        if self.cost_index.ndim != 2 or self.cost_index.shape[0] != self.feats.shape[0]:
            raise ValueError("cost_index must have shape (rows, actions)")
        if np.any(self.cost_index < 0) or np.any(self.cost_index >= grid.m):
            raise ValueError("cost indices must lie on the grid")
        self.grid = grid
        self.n_actions = self.cost_index.shape[1]
        self._means = self.cost_index * grid.spacing

    @property
    def n_rows(self) -> int:
        return self.feats.shape[0]

    def sample_context(self, rng):
        return int(rng.integers(self.n_rows))

    def features(self, ctx):
        return self.feats[ctx]

    def cost_probs(self, ctx):
        p = np.zeros((self.n_actions, self.grid.m))
        p[np.arange(self.n_actions), self.cost_index[ctx]] = 1.0
        return p

    def mean_costs(self, ctx):
        return self._means[ctx]

    def sample_cost(self, ctx, action, rng):
        return int(self.cost_index[ctx, action])


# --- oracles ------------------------------------------------------------------


class ExpWeightsCBOracle:
    """Bayes-mixture forecaster over a finite class keyed by ``(context, action)``."""

    def __init__(self, cls_: CondDistClass, n_contexts: int, n_actions: int):
        self.cls = cls_
        self.ledger = LikelihoodLedger.empty(len(cls_))
        idx = np.array([[cls_.index((x, a)) for a in range(n_actions)] for x in range(n_contexts)])
        self._key_idx = idx
        self._means = mean_arrays(cls_.probs)  # (F, keys)

    def predict(self, ctx, x):
        return self.ledger.weights() @ self._means[:, self._key_idx[ctx]]

    def update(self, ctx, x, action, atom):
        ew_update(self.ledger, self.cls, (ctx, action), atom)

    def log_regret(self, truth_index: int) -> float:
        return log_regret(self.ledger, self.cls, truth_index)


class SoftmaxCBOracle:
    """Per-action linear-softmax density model (the distributional oracle for feature tasks)."""

    def __init__(self, dim: int, n_actions: int, atom_count: int, step_size: float):
        self.model = SoftmaxOracle(dim, atom_count, step_size, n_actions)

    def predict(self, ctx, x):
        return np.clip(self.model.predict_all_means(x), 0.0, 1.0)

    def update(self, ctx, x, action, atom):
        self.model.update(x, action, atom)


class SquareLossOracle:
    """Per-action linear regression of the cost, trained by SGD on squared loss."""

    def __init__(self, dim: int, n_actions: int, step_size: float, atom_count: int):
        self.w = np.zeros((n_actions, dim))
        self.step_size = step_size
        self.spacing = GridSpec(atom_count).spacing

    def predict(self, ctx, x):
        return np.clip(self.w @ x, 0.0, 1.0)

    def update(self, ctx, x, action, atom):
        y = atom * self.spacing
        err = self.w[action] @ x - y
        self.w[action] -= self.step_size * err * x


class LogLossOracle:
    """Per-action sigmoid-linear mean model trained with binary cross-entropy."""

    def __init__(self, dim: int, n_actions: int, step_size: float, atom_count: int):
        self.w = np.zeros((n_actions, dim))
        self.step_size = step_size
        self.spacing = GridSpec(atom_count).spacing

    def predict(self, ctx, x):
        return 1.0 / (1.0 + np.exp(-(self.w @ x)))

    def update(self, ctx, x, action, atom):
        y = atom * self.spacing
        mu = 1.0 / (1.0 + np.exp(-(self.w[action] @ x)))
        self.w[action] -= self.step_size * (mu - y) * x


# --- traces and loops ---------------------------------------------------------


@dataclass
class RegretTrace:
    actions: np.ndarray
    costs: np.ndarray
    inst_regret: np.ndarray
    best_means: np.ndarray
    episodes: np.ndarray = field(default=None)
    seed: int | None = None

    def __post_init__(self):
        if self.episodes is None:
            self.episodes = np.arange(1, len(self.actions) + 1)

    def __len__(self):
        return len(self.actions)

    @property
    def cum_regret(self) -> np.ndarray:
        return np.cumsum(self.inst_regret)

    @property
    def c_star_running(self) -> np.ndarray:
        return np.cumsum(self.best_means)

    @property
    def total_regret(self) -> float:
        return float(self.inst_regret.sum())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["episode", "action", "cost", "inst_regret", "cum_regret", "c_star_running"])
        for row in zip(self.episodes, self.actions, self.costs, self.inst_regret, self.cum_regret, self.c_star_running):
            w.writerow([int(row[0]), int(row[1]), repr(float(row[2])), repr(float(row[3])), repr(float(row[4])), repr(float(row[5]))])
        return buf.getvalue()


def _run_cb(env: CBEnvironment, oracle, schedule, K: int, seed: int, weight_fn, min_gamma: float, batch: int = 1) -> RegretTrace:
    if K < 0 or batch < 1:
        raise ValueError("K must be non-negative and batch at least 1")
    rng_ctx = make_rng(seed, "cb.context")
    rng_act = make_rng(seed, "cb.action")
    rng_cost = make_rng(seed, "cb.cost")
    n = K * batch
    actions = np.zeros(n, dtype=np.int64)
    costs = np.zeros(n)
    inst = np.zeros(n)
    best = np.zeros(n)
    eps = np.zeros(n, dtype=np.int64)
    spacing = env.grid.spacing
    t = 0
    for k in range(1, K + 1):
        gamma = max(min_gamma, schedule(k))
        pending = []
        for _ in range(batch):
            ctx = env.sample_context(rng_ctx)
            x = env.features(ctx)
            p = weight_fn(oracle.predict(ctx, x), gamma)
            a = sample_action(p, rng_act)
            atom = env.sample_cost(ctx, a, rng_cost)
            means = env.mean_costs(ctx)
            actions[t], costs[t], eps[t] = a, atom * spacing, k
            best[t] = means.min()
            inst[t] = max(0.0, means[a] - best[t])
            pending.append((ctx, x, a, atom))
            t += 1
        for ctx, x, a, atom in pending:
            oracle.update(ctx, x, a, atom)
    return RegretTrace(actions, costs, inst, best, eps, seed)


def run_distcb(env: CBEnvironment, oracle, schedule, K: int, seed: int, batch: int = 1) -> RegretTrace:
    """DistCB: ReIGW on the means of a distributional oracle.

    ``schedule(k)`` is floored at ``2A``, the smallest value ReIGW accepts.
    """
    return _run_cb(env, oracle, schedule, K, seed, reigw_weights, 2.0 * env.n_actions, batch)


def run_squarecb(env: CBEnvironment, regression_oracle, schedule, K: int, seed: int, batch: int = 1) -> RegretTrace:
    return _run_cb(env, regression_oracle, schedule, K, seed, igw_weights, 0.0, batch)


def run_fastcb(env: CBEnvironment, regression_oracle, schedule, K: int, seed: int, batch: int = 1) -> RegretTrace:
    return _run_cb(env, regression_oracle, schedule, K, seed, reigw_weights, 2.0 * env.n_actions, batch)


def run_uniform(env: CBEnvironment, K: int, seed: int) -> RegretTrace:
    """Uniform-random baseline sharing DistCB's random streams."""

    class _Flat:
        def predict(self, ctx, x):
            return np.full(env.n_actions, 0.5)

        def update(self, *args):
            pass

    return _run_cb(env, _Flat(), GammaSchedule(fixed=0.0), K, seed, igw_weights, 0.0)
