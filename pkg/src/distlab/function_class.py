"""Finite distributional function classes for tabular RL.

A class is stored as a product-like structure: ``layers[h]`` holds the
distinct step-``h`` tables, an array of shape ``(n_h, X, A, m)``, and
``members[f, h]`` indexes the table member ``f`` uses at step ``h``. The
implicit step-``H`` table is the point mass at zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .dist_core import GridSpec, NormalizationError, mean_arrays
from .errors import InstanceTooLarge
from .mdp_core import MarkovPolicy, TabularMDP, dist_backup_pi
from .mle_oracle import VERSION_SPACE_FACTOR, CondDistClass, floored_log

DEDUP_TOL = 1e-12
BC_TOL = 1e-10
SUFFIX_GUARD = 100_000


def _dedup(tables: Sequence[np.ndarray], tol: float = DEDUP_TOL) -> tuple[list[np.ndarray], list[int]]:
    """Distinct tables (first occurrence kept) and the map from input to output index."""
    uniq: list[np.ndarray] = []
    where = []
    for t in tables:
        for i, u in enumerate(uniq):
            if np.max(np.abs(u - t)) <= tol:
                where.append(i)
                break
        else:
            where.append(len(uniq))
            uniq.append(np.asarray(t, dtype=np.float64))
    return uniq, where


class DistFunctionClass:
    def __init__(self, layers: Sequence[np.ndarray], members):
        self.layers = [np.asarray(t, dtype=np.float64) for t in layers]
        self.members = np.asarray(members, dtype=np.int64)
        if not self.layers:
            raise ValueError("a class needs at least one layer")
        shape = self.layers[0].shape[1:]
        for t in self.layers:
            if t.ndim != 4 or t.shape[1:] != shape or t.shape[0] == 0:
                raise ValueError("every layer must be a non-empty (n, X, A, m) array on one shape")
            if np.any(t < 0) or np.any(np.abs(t.sum(-1) - 1.0) > 1e-9):
                raise NormalizationError("every table row must be a distribution")
        if self.members.ndim != 2 or self.members.shape[1] != len(self.layers) or self.members.shape[0] == 0:
            raise ValueError("members must be a non-empty (size, H) index array")
        for h, t in enumerate(self.layers):
            if np.any(self.members[:, h] < 0) or np.any(self.members[:, h] >= t.shape[0]):
                raise ValueError(f"member index out of range at step {h}")
        self.layers_log = [floored_log(t) for t in self.layers]

    @classmethod
    def product(cls, layers: Sequence[np.ndarray]) -> "DistFunctionClass":
        """All combinations of one table per step."""
        sizes = [np.asarray(t).shape[0] for t in layers]
        grids = np.meshgrid(*[np.arange(n) for n in sizes], indexing="ij")
        members = np.stack([g.ravel() for g in grids], axis=1)
        return cls(layers, members)

    @classmethod
    def from_members(cls, members: Sequence[Sequence[np.ndarray]]) -> "DistFunctionClass":
        """Build from explicit members, each a length-``H`` list of ``(X, A, m)`` tables."""
        if not members:
            raise ValueError("class must be non-empty")
        H = len(members[0])
        layers, idx = [], []
        for h in range(H):
            uniq, where = _dedup([f[h] for f in members])
            layers.append(np.stack(uniq))
            idx.append(where)
        return cls(layers, np.array(idx).T)

    def __len__(self) -> int:
        return self.members.shape[0]

    @property
    def H(self) -> int:
        return len(self.layers)

    @property
    def X(self) -> int:
        return self.layers[0].shape[1]

    @property
    def A(self) -> int:
        return self.layers[0].shape[2]

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.layers[0].shape[3])

    @cached_property
    def layer_means(self) -> list[np.ndarray]:
        return [mean_arrays(t) for t in self.layers]

    def tables(self, f: int) -> list[np.ndarray]:
        return [self.layers[h][self.members[f, h]] for h in range(self.H)]

    def check_compatible(self, mdp: TabularMDP) -> None:
        if (self.X, self.A, self.H, self.grid.m) != (mdp.X, mdp.A, mdp.H, mdp.grid.m):
            raise ValueError(
                f"class shape (X, A, H, m)={(self.X, self.A, self.H, self.grid.m)} does not match the MDP "
                f"{(mdp.X, mdp.A, mdp.H, mdp.grid.m)}"
            )

    def find(self, tables: Sequence[np.ndarray], tol: float = DEDUP_TOL) -> int | None:
        """Index of the member matching ``tables`` at every step, if any."""
        per_step = []
        for h, t in enumerate(tables):
            diff = np.abs(self.layers[h] - t[None]).reshape(self.layers[h].shape[0], -1).max(axis=1)
            hits = np.flatnonzero(diff <= tol)
            if hits.size == 0:
                return None
            per_step.append(hits)
        ok = np.ones(len(self), dtype=bool)
        for h, hits in enumerate(per_step):
            ok &= np.isin(self.members[:, h], hits)
        found = np.flatnonzero(ok)
        return int(found[0]) if found.size else None

    def layer_class(self, h: int) -> CondDistClass:
        """The distinct step-``h`` tables as a conditional-distribution class keyed by ``(x, a)``."""
        t = self.layers[h]
        keys = [(x, a) for x in range(self.X) for a in range(self.A)]
        return CondDistClass(keys, t.reshape(t.shape[0], self.X * self.A, -1))

    def to_json(self) -> dict:
        return {
            "layers": [self.layer_class(h).to_json() for h in range(self.H)],
            "members": self.members.tolist(),
        }

    @classmethod
    def from_json(cls, obj) -> "DistFunctionClass":
        if isinstance(obj, str):
            obj = json.loads(obj)
        layers = []
        for layer in obj["layers"]:
            c = CondDistClass.from_json(layer)
            X = 1 + max(k[0] for k in c.keys)
            A = 1 + max(k[1] for k in c.keys)
            t = np.zeros((len(c), X, A, c.grid.m))
            for i, (x, a) in enumerate(c.keys):
                t[:, x, a] = c.probs[:, i]
            layers.append(t)
        return cls(layers, obj["members"])


def greedy_actions(means: np.ndarray, small_return: bool = False) -> np.ndarray:
    """Lowest-index argmin of means along the action axis (argmax under ``small_return``)."""
    return np.argmax(means, axis=-1) if small_return else np.argmin(means, axis=-1)


def greedy_policy(F: DistFunctionClass, f: int, small_return: bool = False) -> MarkovPolicy:
    acts = np.stack([greedy_actions(F.layer_means[h][F.members[f, h]], small_return) for h in range(F.H)])
    return MarkovPolicy.deterministic(acts, F.A)


def build_suffix_class(mdp: TabularMDP, policy_set: Sequence[MarkovPolicy]) -> DistFunctionClass:
    """Loss-to-go laws of every policy suffix drawn from ``policy_set``, as a product class.

    The step-``h`` layer holds ``Z_h`` for every way of choosing the policies
    used from step ``h + 1`` on, so each layer is closed under the backup of
    every policy in the set.
    """
    if not policy_set:
        raise ValueError("policy_set must be non-empty")
    if len(policy_set) ** mdp.H > SUFFIX_GUARD:
        raise InstanceTooLarge(f"{len(policy_set)}^{mdp.H} suffixes exceed the guard of {SUFFIX_GUARD}")
    layers = [None] * mdp.H
    nxt = [mdp.terminal()]
    for h in reversed(range(mdp.H)):
        cands = [dist_backup_pi(mdp, h, d, pi) for d in nxt for pi in policy_set]
        uniq, _ = _dedup(cands)
        layers[h] = np.stack(uniq)
        nxt = uniq
    return DistFunctionClass.product(layers)


@dataclass(frozen=True)
class BCViolation:
    h: int
    next_table: int
    policy: int
    distance: float


@dataclass(frozen=True)
class BCReport:
    ok: bool
    violation: BCViolation | None = None

    def __bool__(self):
        return self.ok


def check_distributional_bc(F: DistFunctionClass, mdp: TabularMDP, policy_set: Sequence[MarkovPolicy],
                            tol: float = BC_TOL) -> BCReport:
    """Check that every backup of a step-``h+1`` table lands within ``tol`` of a step-``h`` table.

    ``next_table = -1`` in a violation refers to the implicit terminal table.
    """
    if tol < 0:
        raise ValueError("tol must be non-negative")
    F.check_compatible(mdp)
    for h in range(F.H):
        here = F.layers[h][np.unique(F.members[:, h])]
        if h + 1 < F.H:
            used = np.unique(F.members[:, h + 1])
            nexts = [(int(j), F.layers[h + 1][j]) for j in used]
        else:
            nexts = [(-1, mdp.terminal())]
        for j, d in nexts:
            for k, pi in enumerate(policy_set):
                b = dist_backup_pi(mdp, h, d, pi)
                dist = float(np.abs(here - b[None]).reshape(here.shape[0], -1).max(axis=1).min())
                if not dist <= tol:
                    return BCReport(False, BCViolation(h, j, k, dist))
    return BCReport(True)


def mirror_class(F: DistFunctionClass, step_span: int) -> DistFunctionClass:
    """Reflect each step-``h`` table's atoms through ``(H - h) * step_span``.

    Paired with :func:`distlab.mdp_core.mirror_mdp` this turns cost minimization
    into return maximization on the same likelihood landscape.
    """
    layers = []
    for h, t in enumerate(F.layers):
        span = (F.H - h) * step_span
        if np.any(t[..., span + 1 :] > 0):
            raise ValueError(f"step {h} tables charge atoms beyond the reflection span {span}")
        out = np.zeros_like(t)
        out[..., : span + 1] = t[..., span::-1]
        layers.append(out)
    return DistFunctionClass(layers, F.members)


# --- likelihood confidence sets -----------------------------------------------


def _target_counts(counts_h: np.ndarray, laws: np.ndarray, rng: np.random.Generator | None,
                   exact: bool) -> np.ndarray:
    """Target histograms ``M[j, x, a, z]`` from grouped tuples and successor laws.

    ``counts_h[x, a, c, x']`` counts observed tuples; ``laws[j, x', :]`` is the
    law of the successor draw under next-step table ``j``. Each tuple gets
    ``z = c + y`` with ``y`` drawn from the law (or its expectation when
    ``exact``).
    """
    X, A, m, _ = counts_h.shape
    J = laws.shape[0]
    x, a, c, xn = np.nonzero(counts_h)
    n = counts_h[x, a, c, xn]
    q = laws[:, xn, :]
    if exact:
        y = n[None, :, None] * q
    else:
        q = q / q.sum(-1, keepdims=True)
        y = rng.multinomial(np.broadcast_to(n, (J, n.size)), q).astype(np.float64)
    z = c[None, :, None] + np.arange(m)[None, None, :]
    spill = np.where(z >= m, y, 0.0)
    if np.any(spill > 0):
        raise NormalizationError("a target exceeds the top atom; cumulative costs must stay in [0, 1]")
    flat = ((np.arange(J)[:, None, None] * X + x[None, :, None]) * A + a[None, :, None]) * m + np.minimum(z, m - 1)
    out = np.bincount(flat.ravel(), weights=y.ravel(), minlength=J * X * A * m)
    return out.reshape(J, X, A, m)


def likelihood_survivors(F: DistFunctionClass, counts: np.ndarray, beta: float,
                         next_law: Callable[[int, np.ndarray], np.ndarray],
                         rng: np.random.Generator | None, exact: bool = False) -> np.ndarray:
    """Boolean mask of members that pass the per-step likelihood test.

    ``counts[h, x, a, c, x']`` holds the grouped data; ``next_law(h, table)``
    maps a step-``h+1`` table to the ``(X, m)`` law of the successor draw.
    Targets are drawn once per distinct next-step table, so members sharing a
    next table share targets. At the last step the targets are the costs.
    """
    if beta < 0:
        raise ValueError("beta must be non-negative")
    threshold = VERSION_SPACE_FACTOR * beta
    keep = np.ones(len(F), dtype=bool)
    for h in range(F.H):
        if h + 1 < F.H:
            used, col = np.unique(F.members[:, h + 1], return_inverse=True)
            laws = np.stack([next_law(h, F.layers[h + 1][j]) for j in used])
        else:
            col = np.zeros(len(F), dtype=np.int64)
            laws = np.zeros((1, F.X, F.grid.m))
            laws[..., 0] = 1.0
        M = _target_counts(counts[h], laws, rng, exact)
        ll = F.layers_log[h].reshape(F.layers[h].shape[0], -1) @ M.reshape(M.shape[0], -1).T
        rows = np.unique(F.members[:, h])
        best = ll[rows].max(axis=0)
        ok = ll >= best[None, :] - threshold
        keep &= ok[F.members[:, h], col.ravel()]
    return keep
