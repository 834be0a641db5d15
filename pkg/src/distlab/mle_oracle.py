"""Maximum-likelihood machinery over finite conditional-distribution classes.

Includes the exponentially weighted (Bayes mixture) online forecaster with
its log-likelihood ledger, batch version spaces, and a linear-softmax density
model trained by SGD for settings without a finite class.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np

from .dist_core import GridCategorical, GridSpec

LOG_FLOOR = 1e-12
VERSION_SPACE_FACTOR = 7.0


def floored_log(p):
    return np.log(np.maximum(p, LOG_FLOOR))


class CondDistClass:
    """A finite class of tables mapping keys to grid distributions.

    Stored densely as ``probs[member, key_index, atom]``. Keys are opaque
    hashables, typically ``(x, a)`` pairs.
    """

    def __init__(self, keys: Sequence[Hashable], probs: np.ndarray):
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim != 3 or probs.shape[0] == 0:
            raise ValueError("probs must have shape (members, keys, atoms) with at least one member")
        if probs.shape[1] != len(keys):
            raise ValueError("one probability row per key is required")
        if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=-1) - 1.0) > 1e-9):
            raise ValueError("every row must be a probability vector")
        self.keys = list(keys)
        self.key_index = {k: i for i, k in enumerate(self.keys)}
        if len(self.key_index) != len(self.keys):
            raise ValueError("duplicate keys")
        self.probs = probs
        self.log_probs = floored_log(probs)
        self.grid = GridSpec(probs.shape[2])

    def __len__(self):
        return self.probs.shape[0]

    def index(self, key) -> int:
        try:
            return self.key_index[key]
        except KeyError:
            raise KeyError(f"unknown key {key!r}") from None

    def member(self, f: int, key) -> GridCategorical:
        return GridCategorical(self.grid, self.probs[f, self.index(key)])

    @classmethod
    def from_members(cls, members: Sequence[dict]) -> "CondDistClass":
        """Build from a list of ``{key: GridCategorical}`` maps sharing one key set."""
        if not members:
            raise ValueError("class must be non-empty")
        keys = list(members[0].keys())
        grid = members[0][keys[0]].grid
        rows = []
        for mem in members:
            if set(mem.keys()) != set(keys):
                raise ValueError("all members must be defined on the same keys")
            for k in keys:
                if mem[k].grid != grid:
                    raise ValueError("all members must share one grid")
            rows.append([mem[k].probs for k in keys])
        return cls(keys, np.array(rows))

    def to_json(self) -> list:
        out = []
        for f in range(len(self)):
            out.append(
                {
                    f"{k[0]}:{k[1]}": {"m": self.grid.m, "probs": self.probs[f, i].tolist()}
                    for i, k in enumerate(self.keys)
                }
            )
        return out

    @classmethod
    def from_json(cls, obj) -> "CondDistClass":
        if isinstance(obj, str):
            obj = json.loads(obj)
        members = []
        for mem in obj:
            parsed = {}
            for skey, dist in mem.items():
                x, a = skey.split(":")
                parsed[(int(x), int(a))] = GridCategorical.from_json(dist)
            members.append(parsed)
        return cls.from_members(members)


@dataclass
class LikelihoodLedger:
    """Running log-likelihood sums plus the forecaster's own log-densities."""

    loglik: np.ndarray
    n: int = 0
    pred_logs: list = field(default_factory=list)

    @classmethod
    def empty(cls, size: int) -> "LikelihoodLedger":
        return cls(loglik=np.zeros(size))

    def weights(self) -> np.ndarray:
        z = self.loglik - self.loglik.max()
        w = np.exp(z)
        return w / w.sum()


def ew_predict(ledger: LikelihoodLedger, cls_: CondDistClass, key) -> GridCategorical:
    """Posterior-weighted mixture prediction at ``key``."""
    k = cls_.index(key)
    p = ledger.weights() @ cls_.probs[:, k, :]
    return GridCategorical(cls_.grid, p / p.sum())


def ew_update(ledger: LikelihoodLedger, cls_: CondDistClass, key, observed: int) -> LikelihoodLedger:
    """Record one observation (an atom index) and return the same ledger.

    The forecaster's floored log-density at the observed atom is stored before
    the member sums move, so :func:`log_regret` needs no replay.
    """
    k = cls_.index(key)
    if not (0 <= int(observed) < cls_.grid.m) or int(observed) != observed:
        raise ValueError(f"observed cost index {observed!r} is not on the {cls_.grid.m}-atom grid")
    dens = np.maximum(cls_.probs[:, k, int(observed)], LOG_FLOOR)
    ledger.pred_logs.append(float(np.log(ledger.weights() @ dens)))
    ledger.loglik += np.log(dens)
    ledger.n += 1
    return ledger


def log_regret(ledger: LikelihoodLedger, cls_: CondDistClass, truth_index: int) -> float:
    if not 0 <= truth_index < len(cls_):
        raise IndexError(f"truth index {truth_index} out of range for a class of size {len(cls_)}")
    return float(ledger.loglik[truth_index] - sum(ledger.pred_logs))


def data_loglik(cls_: CondDistClass, data: Iterable[tuple]) -> np.ndarray:
    """Per-member sum of floored log-densities over ``(key, atom)`` pairs."""
    total = np.zeros(len(cls_))
    for key, atom in data:
        total += cls_.log_probs[:, cls_.index(key), int(atom)]
    return total


def version_space(cls_: CondDistClass, data: Sequence[tuple], beta: float) -> set[int]:
    """Members whose log-likelihood is within ``7 * beta`` of the best member."""
    if beta < 0:
        raise ValueError("beta must be non-negative")
    if len(data) == 0:
        return set(range(len(cls_)))
    ll = data_loglik(cls_, data)
    keep = ll >= ll.max() - VERSION_SPACE_FACTOR * beta
    return set(np.flatnonzero(keep).tolist())


class SoftmaxOracle:
    """Linear-softmax conditional density over grid atoms, fit by online SGD.

    Each action owns a weight matrix of shape ``(atoms, dim)``; the predicted
    law for ``(features, action)`` is ``softmax(W[action] @ features)``.
    """

    def __init__(self, dim: int, atom_count: int, step_size: float, n_actions: int = 1):
        if step_size <= 0:
            raise ValueError("step size must be positive")
        self.dim = dim
        self.grid = GridSpec(atom_count)
        self.step_size = step_size
        self.W = np.zeros((n_actions, atom_count, dim))

    def _check(self, features):
        x = np.asarray(features, dtype=np.float64)
        if x.shape != (self.dim,):
            raise ValueError(f"expected a feature vector of length {self.dim}, got shape {x.shape}")
        return x

    def predict_probs(self, features, action: int = 0) -> np.ndarray:
        x = self._check(features)
        logits = self.W[action] @ x
        logits -= logits.max()
        e = np.exp(logits)
        return e / e.sum()

    def predict(self, features, action: int = 0) -> GridCategorical:
        return GridCategorical(self.grid, self.predict_probs(features, action))

    def predict_all_means(self, features) -> np.ndarray:
        x = self._check(features)
        logits = self.W @ x
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        p = e / e.sum(axis=1, keepdims=True)
        return p @ self.grid.atoms

    def loss(self, features, action: int, atom: int) -> float:
        return float(-np.log(self.predict_probs(features, action)[atom]))

    def grad(self, features, action: int, atom: int) -> np.ndarray:
        """Gradient of the negative log-likelihood w.r.t. ``W[action]``."""
        x = self._check(features)
        p = self.predict_probs(x, action)
        p[atom] -= 1.0
        return np.outer(p, x)

    def update(self, features, action: int, atom: int) -> None:
        self.W[action] -= self.step_size * self.grad(features, action, atom)


def sgd_softmax_oracle(dim: int, step_size: float, atom_count: int, n_actions: int = 1) -> SoftmaxOracle:
    return SoftmaxOracle(dim, atom_count, step_size, n_actions)
