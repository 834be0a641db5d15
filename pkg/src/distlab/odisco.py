"""Online distributional RL with likelihood confidence sets and global optimism.

Each episode picks the surviving member with the most optimistic initial
value, plays its greedy policy, adds the rollout to the per-step datasets
and refreshes the confidence set with freshly drawn TD targets.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dist_core import NormalizationError, hellinger_sq_arrays, mean_arrays
from .errors import AlgorithmFailure
from .function_class import DistFunctionClass, greedy_actions, greedy_policy, likelihood_survivors
from .mdp_core import (
    MarkovPolicy,
    MixturePolicy,
    TabularMDP,
    draw_index,
    dist_backup_star,
    occupancy,
    optimal_policy,
    return_distribution,
    sample_trajectory,
    sample_uae_tuples,
    value,
)
from .rng import make_rng

OPT_TOL = 1e-9
TRAINING_ERROR_FACTOR = 60.0


def default_beta(H: int, K: int, class_size: int, delta: float) -> float:
    """``log(H K |F| / delta)``."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return math.log(H * max(K, 1) * class_size / delta)


class OnlineDataset:
    """Per-step tuples ``(x, a, c, x')`` with ``c`` a grid index, plus grouped counts."""

    def __init__(self, H: int, X: int, A: int, m: int):
        self.counts = np.zeros((H, X, A, m, X), dtype=np.int64)
        self.tuples: list[list[tuple[int, int, int, int]]] = [[] for _ in range(H)]

    def add(self, h: int, x: int, a: int, c: int, x_next: int) -> None:
        self.counts[h, x, a, c, x_next] += 1
        self.tuples[h].append((x, a, c, x_next))

    def sizes(self) -> list[int]:
        return [len(t) for t in self.tuples]


def star_next_law(small_return: bool = False):
    """Successor-draw law ``(X, m)`` of a next-step table under the greedy action."""

    def law(h: int, table: np.ndarray) -> np.ndarray:
        a = greedy_actions(mean_arrays(table), small_return)
        return table[np.arange(table.shape[0]), a]

    return law


def td_targets(F: DistFunctionClass, f: int, h: int, tuples, small_return: bool,
               rng: np.random.Generator) -> np.ndarray:
    """Target atom indices ``z = c + y`` for one member on one step's tuples."""
    m = F.grid.m
    out = np.zeros(len(tuples), dtype=np.int64)
    if h + 1 < F.H:
        law = star_next_law(small_return)(h, F.layers[h + 1][F.members[f, h + 1]])
    for i, (x, a, c, xn) in enumerate(tuples):
        y = draw_index(law[xn], rng) if h + 1 < F.H else 0
        if c + y >= m:
            raise NormalizationError("a target exceeds the top atom; cumulative costs must stay in [0, 1]")
        out[i] = c + y
    return out


def confidence_set(F: DistFunctionClass, data: OnlineDataset, beta: float, small_return: bool = False,
                   rng: np.random.Generator | None = None, exact: bool = False) -> set[int]:
    mask = likelihood_survivors(F, data.counts, beta, star_next_law(small_return), rng, exact)
    return set(np.flatnonzero(mask).tolist())


def optimistic_values(F: DistFunctionClass, x1: int, small_return: bool = False) -> np.ndarray:
    """Per-member best initial mean: min over actions (max under ``small_return``)."""
    m1 = F.layer_means[0][F.members[:, 0], x1]
    return m1.max(axis=1) if small_return else m1.min(axis=1)


def optimistic_select(F: DistFunctionClass, surviving, x1: int, small_return: bool = False) -> int:
    idx = np.array(sorted(surviving), dtype=np.int64)
    if idx.size == 0:
        raise AlgorithmFailure("confidence set is empty")
    vals = optimistic_values(F, x1, small_return)[idx]
    return int(idx[np.argmax(vals) if small_return else np.argmin(vals)])


@dataclass
class OdiscoResult:
    members: np.ndarray
    values: np.ndarray
    realized: np.ndarray
    inst_regret: np.ndarray
    survivors: np.ndarray
    optimism_gap: np.ndarray
    contained: np.ndarray
    v_star: float
    mixture: MixturePolicy
    mixture_value: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def cum_regret(self) -> np.ndarray:
        return np.cumsum(self.inst_regret)

    @property
    def mixture_suboptimality(self) -> float:
        return abs(self.mixture_value - self.v_star)

    def log_records(self) -> list[dict]:
        return [
            {
                "episode": k + 1,
                "member": int(self.members[k]),
                "value": float(self.values[k]),
                "optimism_gap": float(self.optimism_gap[k]),
                "survivors": int(self.survivors[k]),
            }
            for k in range(len(self.members))
        ]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.log_records())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["episode", "member", "cost", "value", "inst_regret", "cum_regret", "survivors"])
        cum = self.cum_regret
        for k in range(len(self.members)):
            w.writerow([k + 1, int(self.members[k]), repr(float(self.realized[k])), repr(float(self.values[k])),
                        repr(float(self.inst_regret[k])), repr(float(cum[k])), int(self.survivors[k])])
        return buf.getvalue()


def _data_distribution(mdp: TabularMDP, pi: MarkovPolicy, uae: bool) -> np.ndarray:
    d = occupancy(mdp, pi)
    if uae:
        d = np.repeat(d.sum(-1, keepdims=True) / mdp.A, mdp.A, axis=-1)
    return d


def training_errors(F: DistFunctionClass, mdp: TabularMDP, weights: np.ndarray, members,
                    small_return: bool = False) -> np.ndarray:
    """Per-member, per-step ``sum_{x,a} weights[h,x,a] * H^2(f_h, backup_star(f_{h+1}))``."""
    members = np.asarray(sorted(members), dtype=np.int64)
    out = np.zeros((members.size, F.H))
    for h in range(F.H):
        cache: dict[int, np.ndarray] = {}
        for r, f in enumerate(members):
            j = int(F.members[f, h + 1]) if h + 1 < F.H else -1
            if j not in cache:
                nxt = F.layers[h + 1][j] if j >= 0 else mdp.terminal()
                cache[j] = dist_backup_star(mdp, h, nxt, small_return)
            t = F.layers[h][F.members[f, h]]
            out[r, h] = float(np.sum(weights[h] * hellinger_sq_arrays(t, cache[j])))
    return out


def run_odisco(mdp: TabularMDP, F: DistFunctionClass, K: int, beta: float | None = None, uae: bool = False,
               small_return: bool = False, exact: bool = False, seed: int = 0, delta: float = 0.1,
               truth_index: int | None = None, check_training_error: bool = True) -> OdiscoResult:
    """Run ``K`` episodes and return per-episode values, regret and diagnostics.

    Regret is ``|V^{pi_k} - V*|`` with exact values. ``truth_index`` defaults to
    the member equal to the optimal policy's loss-to-go laws, when present.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    F.check_compatible(mdp)
    if beta is None:
        beta = default_beta(mdp.H, K, len(F), delta)
    pi_star, v_star = optimal_policy(mdp, small_return)
    if truth_index is None:
        truth_index = F.find(return_distribution(mdp, pi_star), tol=1e-9)

    rng_roll = make_rng(seed, "odisco.rollout")
    rng_tgt = make_rng(seed, "odisco.targets")
    data = OnlineDataset(mdp.H, mdp.X, mdp.A, mdp.grid.m)
    opt_vals = optimistic_values(F, mdp.x1, small_return)
    spacing = mdp.grid.spacing

    mask = np.ones(len(F), dtype=bool)
    policies: dict[int, MarkovPolicy] = {}
    values: dict[int, float] = {}
    visit = np.zeros((mdp.H, mdp.X, mdp.A))
    dists: dict[int, np.ndarray] = {}

    members = np.zeros(K, dtype=np.int64)
    vals = np.zeros(K)
    realized = np.zeros(K)
    surv = np.zeros(K, dtype=np.int64)
    gaps = np.zeros(K)
    contained = np.zeros(K, dtype=bool)
    played = []

    for k in range(K):
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            raise AlgorithmFailure(f"confidence set is empty at episode {k + 1}", episode=k + 1)
        f = int(idx[np.argmax(opt_vals[idx]) if small_return else np.argmin(opt_vals[idx])])
        if f not in policies:
            policies[f] = greedy_policy(F, f, small_return)
            values[f] = value(mdp, policies[f])
        pi = policies[f]
        played.append(pi)
        members[k], vals[k], surv[k] = f, values[f], idx.size
        gaps[k] = opt_vals[f] - v_star

        if uae:
            steps = sample_uae_tuples(mdp, pi, rng_roll)
        else:
            steps = sample_trajectory(mdp, pi, rng_roll)
        for h, (x, a, c, xn) in enumerate(steps):
            data.add(h, x, a, c, xn)
        realized[k] = sum(s[2] for s in steps) * spacing
        if check_training_error:
            if f not in dists:
                dists[f] = _data_distribution(mdp, pi, uae)
            visit += dists[f]

        mask = likelihood_survivors(F, data.counts, beta, star_next_law(small_return), rng_tgt, exact)
        contained[k] = truth_index is not None and bool(mask[truth_index])

    inst = np.abs(vals - v_star)
    mixture = MixturePolicy(tuple(played))
    mixture_value = float(vals.mean())
    if small_return:
        optimistic = gaps >= -OPT_TOL
    else:
        optimistic = gaps <= OPT_TOL
    diag = {
        "beta": float(beta),
        "v_star": float(v_star),
        "truth_index": truth_index,
        "optimism_rate": float(optimistic.mean()),
        "contained_throughout": bool(truth_index is not None and contained.all()),
        "final_survivors": int(mask.sum()),
    }
    if check_training_error:
        final = np.flatnonzero(mask)
        errs = training_errors(F, mdp, visit, final, small_return)
        worst = float(errs.max()) if errs.size else 0.0
        diag["max_training_error"] = worst
        diag["training_error_ok"] = bool(worst <= TRAINING_ERROR_FACTOR * beta)
    return OdiscoResult(members, vals, realized, inst, surv, gaps, contained, float(v_star),
                        mixture, mixture_value, diag)
