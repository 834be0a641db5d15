"""Offline distributional RL: per-policy confidence sets and pessimistic selection."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import AlgorithmFailure
from .function_class import DistFunctionClass, likelihood_survivors
from .mdp_core import MarkovPolicy, TabularMDP, coverage_coefficient, value
from .rng import make_rng


@dataclass
class OfflineDataset:
    """``N`` i.i.d. tuples per step as parallel index arrays of shape ``(H, N)``."""

    x: np.ndarray
    a: np.ndarray
    c: np.ndarray
    x_next: np.ndarray
    X: int
    A: int
    m: int
    x1: int = 0
    nu: np.ndarray | None = None

    @property
    def H(self) -> int:
        return self.x.shape[0]

    @property
    def N(self) -> int:
        return self.x.shape[1]

    def counts(self) -> np.ndarray:
        out = np.zeros((self.H, self.X, self.A, self.m, self.X), dtype=np.int64)
        for h in range(self.H):
            np.add.at(out[h], (self.x[h], self.a[h], self.c[h], self.x_next[h]), 1)
        return out

    def tuples(self, h: int) -> list[tuple[int, int, int, int]]:
        return list(zip(self.x[h].tolist(), self.a[h].tolist(), self.c[h].tolist(), self.x_next[h].tolist()))


def generate_offline_data(mdp: TabularMDP, nu: np.ndarray, N: int, seed: int) -> OfflineDataset:
    """Draw ``(x, a) ~ nu_h``, ``c ~ C_h(x, a)``, ``x' ~ P_h(x, a)`` independently per step."""
    nu = np.asarray(nu, dtype=np.float64).reshape(mdp.H, mdp.X, mdp.A)
    if N < 0:
        raise ValueError("N must be non-negative")
    if np.any(nu < 0) or np.any(np.abs(nu.reshape(mdp.H, -1).sum(-1) - 1.0) > 1e-12):
        raise ValueError("every nu layer must be a distribution over (x, a)")
    rng = make_rng(seed, "pdisco.data")
    shape = (mdp.H, N)
    xs, acts, cs, xns = (np.zeros(shape, dtype=np.int64) for _ in range(4))
    for h in range(mdp.H):
        cell = rng.choice(mdp.X * mdp.A, size=N, p=nu[h].ravel())
        xs[h], acts[h] = np.divmod(cell, mdp.A)
        # inverse-CDF draws, row by row of the (x, a) tables
        u = rng.random(N)
        cdf = np.cumsum(mdp.C[h][xs[h], acts[h]], axis=-1)
        cs[h] = np.minimum((u[:, None] * cdf[:, -1:] >= cdf).sum(-1), mdp.grid.m - 1)
        u = rng.random(N)
        cdf = np.cumsum(mdp.P[h][xs[h], acts[h]], axis=-1)
        xns[h] = np.minimum((u[:, None] * cdf[:, -1:] >= cdf).sum(-1), mdp.X - 1)
    return OfflineDataset(xs, acts, cs, xns, mdp.X, mdp.A, mdp.grid.m, mdp.x1, nu)


def policy_next_law(pi: MarkovPolicy):
    """Successor-draw law under the comparator policy's next-step action."""

    def law(h: int, table: np.ndarray) -> np.ndarray:
        return np.einsum("xa,xam->xm", pi.probs[h + 1], table)

    return law


def _survivor_mask(F, pi, counts, beta, rng, exact):
    return likelihood_survivors(F, counts, beta, policy_next_law(pi), rng, exact)


def policy_confidence_set(F: DistFunctionClass, pi: MarkovPolicy, dataset: OfflineDataset, beta: float,
                          rng: np.random.Generator | None = None, exact: bool = False) -> set[int]:
    mask = _survivor_mask(F, pi, dataset.counts(), beta, rng, exact)
    return set(np.flatnonzero(mask).tolist())


def initial_values(F: DistFunctionClass, pi: MarkovPolicy, x1: int) -> np.ndarray:
    """Per-member ``E_{a ~ pi_1(x1)} mean(f_1(x1, a))``."""
    return F.layer_means[0][F.members[:, 0], x1] @ pi.probs[0, x1]


def theorem5_bound(c_cover: float, v_tilde: float, H: int, N: int, beta: float) -> float:
    """Small-loss PAC bound ``9H sqrt(C V beta / N) + 30 H^2 C beta / N``."""
    if N < 1:
        raise ValueError("N must be at least 1")
    if min(c_cover, v_tilde, H, beta) < 0:
        raise ValueError("all arguments must be non-negative")
    return 9.0 * H * math.sqrt(c_cover * v_tilde * beta / N) + 30.0 * H * H * c_cover * beta / N


def default_beta(H: int, n_policies: int, class_size: int, delta: float) -> float:
    """``log(H |Pi| |F| / delta)``."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return math.log(H * n_policies * class_size / delta)


@dataclass
class PdiscoResult:
    chosen: int
    pessimistic_values: np.ndarray
    pessimistic_members: np.ndarray
    survivor_counts: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> str:
        out = {
            "chosen": self.chosen,
            "pessimistic_values": [float(v) for v in self.pessimistic_values],
            "pessimistic_members": [int(v) for v in self.pessimistic_members],
            "survivor_counts": [int(v) for v in self.survivor_counts],
            "diagnostics": self.diagnostics,
        }
        return json.dumps(out, sort_keys=True)


def run_pdisco(dataset: OfflineDataset, F: DistFunctionClass, Pi: Sequence[MarkovPolicy], beta: float,
               small_return: bool = False, seed: int = 0, exact: bool = False,
               mdp: TabularMDP | None = None) -> PdiscoResult:
    """Pessimistic policy selection over ``Pi``.

    Each policy's value estimate is the worst (largest cost, or smallest return
    under ``small_return``) initial value among its survivors; the chosen
    policy has the best such estimate. Passing the generating ``mdp`` adds
    exact values, coverage coefficients and bound checks to the diagnostics.
    """
    if len(Pi) == 0:
        raise ValueError("Pi must be non-empty")
    counts = dataset.counts()
    pess = np.zeros(len(Pi))
    chosen_f = np.zeros(len(Pi), dtype=np.int64)
    n_surv = np.zeros(len(Pi), dtype=np.int64)
    for i, pi in enumerate(Pi):
        rng = make_rng(seed, "pdisco.targets", i)
        mask = _survivor_mask(F, pi, counts, beta, rng, exact)
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            raise AlgorithmFailure(f"confidence set for policy {i} is empty", policy=i)
        vals = initial_values(F, pi, dataset.x1)[idx]
        j = int(np.argmin(vals) if small_return else np.argmax(vals))
        pess[i], chosen_f[i], n_surv[i] = vals[j], idx[j], idx.size
    chosen = int(np.argmax(pess) if small_return else np.argmin(pess))

    diag: dict = {"beta": float(beta)}
    if mdp is not None:
        vals = np.array([value(mdp, pi) for pi in Pi])
        diag["values"] = vals.tolist()
        diag["chosen_value"] = float(vals[chosen])
        if small_return:
            diag["pessimism_holds"] = bool(np.all(vals >= pess - 1e-9))
        else:
            diag["pessimism_holds"] = bool(np.all(vals <= pess + 1e-9))
        if dataset.nu is not None and dataset.N > 0:
            cover = [coverage_coefficient(mdp, pi, dataset.nu) for pi in Pi]
            bounds = [theorem5_bound(c, v, mdp.H, dataset.N, beta) if math.isfinite(c) else math.inf
                      for c, v in zip(cover, vals)]
            gap = (vals[chosen] - vals) if not small_return else (vals - vals[chosen])
            diag["coverage"] = [c if math.isfinite(c) else None for c in cover]
            diag["bounds"] = [b if math.isfinite(b) else None for b in bounds]
            diag["bound_holds"] = [bool(g <= b + 1e-12) for g, b in zip(gap, bounds)]
    return PdiscoResult(chosen, pess, chosen_f, n_surv, diag)
