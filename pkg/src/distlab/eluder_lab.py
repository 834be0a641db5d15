"""Brute-force l_p distributional eluder dimensions on small abstract instances.

Only the absolute expectations ``|E_d psi|`` matter, so an instance reduces to
the value matrix ``V[d, psi]``. A sequence ``d_1..d_L`` is admissible at
threshold ``t`` if every step has a witness ``psi`` with
``sum_{i<s} V[d_i, psi]^p <= t^p`` and ``V[d_s, psi] > t``. For each step the
admissible thresholds form a union of half-open intervals
``[prefix^(1/p), V[d_s, psi])``; the search carries their running
intersection, so the existential over thresholds is resolved exactly.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InstanceTooLarge

MAX_DISTS = 6
MAX_FUNCS = 8


@dataclass(frozen=True)
class EluderInstance:
    psi: np.ndarray
    dists: np.ndarray

    def __post_init__(self):
        psi = np.array(self.psi, dtype=np.float64, ndmin=2)
        dists = np.array(self.dists, dtype=np.float64, ndmin=2)
        if psi.shape[1] != dists.shape[1]:
            raise ValueError("functions and distributions must share the point count")
        if np.any(dists < 0) or np.any(np.abs(dists.sum(-1) - 1.0) > 1e-12):
            raise ValueError("each distribution row must sum to 1")
        if not np.all(np.isfinite(psi)):
            raise ValueError("function values must be finite")
        psi.setflags(write=False)
        dists.setflags(write=False)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "dists", dists)

    @property
    def S(self) -> int:
        return self.psi.shape[1]

    def values(self) -> np.ndarray:
        """``|E_d psi|`` with shape ``(|D|, |Psi|)``."""
        return np.abs(self.dists @ self.psi.T)

    @property
    def envelope(self) -> float:
        return float(self.values().max(initial=0.0))

    def to_json(self) -> dict:
        return {"S": self.S, "psi": self.psi.tolist(), "dists": self.dists.tolist()}

    @classmethod
    def from_json(cls, obj) -> "EluderInstance":
        if isinstance(obj, str):
            obj = json.loads(obj)
        inst = cls(obj["psi"], obj["dists"])
        if inst.S != obj["S"]:
            raise ValueError("declared S does not match the arrays")
        return inst


def _intersect(a, b):
    out = []
    for l1, u1 in a:
        for l2, u2 in b:
            lo, hi = max(l1, l2), min(u1, u2)
            if lo < hi:
                out.append((lo, hi))
    if len(out) < 2:
        return out
    out.sort()
    merged = [out[0]]
    for lo, hi in out[1:]:
        if lo <= merged[-1][1]:
            if hi > merged[-1][1]:
                merged[-1] = (merged[-1][0], hi)
        else:
            merged.append((lo, hi))
    return merged


@lru_cache(maxsize=200_000)
def _profile_cached(key: bytes, nd: int, nf: int, p: int) -> tuple:
    V = np.frombuffer(key, dtype=np.float64).reshape(nd, nf)
    Vp = V**p
    rows = [tuple(r) for r in V.tolist()]
    best = [0.0] * (nf + 1)
    best[0] = math.inf

    def rec(depth, S, feas):
        roots = [s ** (1.0 / p) for s in S] if p != 1 else S
        for d in range(nd):
            v = rows[d]
            step = [(roots[f], v[f]) for f in range(nf) if roots[f] < v[f]]
            if not step:
                continue
            new = _intersect(feas, step)
            if not new:
                continue
            top = new[-1][1]
            if top > best[depth + 1]:
                best[depth + 1] = top
            rec(depth + 1, [S[f] + Vp[d, f] for f in range(nf)], new)

    rec(0, [0.0] * nf, [(0.0, math.inf)])
    return tuple(best)


def de_profile(inst: EluderInstance, p: int) -> tuple:
    """``best[L]``: the largest threshold any length-``L`` sequence admits (0 if none)."""
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    nd, nf = inst.dists.shape[0], inst.psi.shape[0]
    if nd > MAX_DISTS or nf > MAX_FUNCS:
        raise InstanceTooLarge(f"search guard is |D| <= {MAX_DISTS} and |Psi| <= {MAX_FUNCS}; got {nd} and {nf}")
    V = np.ascontiguousarray(inst.values())
    return _profile_cached(V.tobytes(), nd, nf, p)


def _dimension_from_profile(best, eps: float) -> int:
    return max(L for L, u in enumerate(best) if L == 0 or u > eps)


def de_dimension(inst: EluderInstance, eps: float, p: int) -> int:
    """Length of the longest sequence admissible at some threshold ``>= eps``.

    Each function can witness at most one step, so the answer never exceeds
    ``|Psi|``; repeated distributions are allowed.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    return _dimension_from_profile(de_profile(inst, p), eps)


def point_eluder_dimension(psi, eps: float, p: int, max_len: int | None = None) -> int:
    """Reference eluder dimension over points, by enumerating sequences and thresholds.

    Candidate thresholds are ``eps`` and every ``p``-th root of a prefix sum,
    because the feasible set, if non-empty, contains its minimum and that
    minimum is one of these.
    """
    V = np.abs(np.array(psi, dtype=np.float64, ndmin=2))
    nf, S = V.shape
    max_len = nf if max_len is None else max_len
    best = 0
    for L in range(1, max_len + 1):
        found = False
        for seq in itertools.product(range(S), repeat=L):
            cands = {eps}
            prefix = np.zeros(nf)
            sums = []
            for s in seq:
                sums.append(prefix.copy())
                prefix = prefix + V[:, s] ** p
            for pre in sums:
                cands.update(float(v) for v in pre ** (1.0 / p) if v >= eps)
            for t in cands:
                if all(np.any((sums[i] <= t**p) & (V[:, s] > t)) for i, s in enumerate(seq)):
                    found = True
                    break
            if found:
                break
        if not found:
            break
        best = L
    return best


class PigeonholePreconditionError(ValueError):
    def __init__(self, k: int, total: float, beta: float):
        super().__init__(f"prefix sum {total!r} at k={k} exceeds beta={beta!r}")
        self.k = k


@dataclass(frozen=True)
class PigeonholeResult:
    lhs: float
    rhs: float
    holds: bool
    lhs_all: tuple = ()
    rhs_all: tuple = ()


def pigeonhole_rhs(inst: EluderInstance, beta: float, k: int) -> float:
    """``inf_{0 < eps <= 1} DE_1(eps) (2C + beta log(C / eps)) + k eps``, computed exactly.

    ``DE_1`` is constant between consecutive achievable values, and on each
    such piece the objective is convex in ``eps``, so the infimum is taken at
    a clipped stationary point or a piece endpoint.
    """
    best = de_profile(inst, 1)
    C = inst.envelope
    vals = inst.values().ravel()
    cuts = sorted({0.0, 1.0} | {float(v) for v in vals if 0 < v < 1})
    out = math.inf
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        D = _dimension_from_profile(best, lo)
        if D == 0:
            out = min(out, k * lo)
            continue
        if beta > 0:
            e = min(max(D * beta / k, lo), hi)
            out = min(out, D * (2 * C + beta * math.log(C / e)) + k * e)
        else:
            out = min(out, D * 2 * C + k * lo)
    # the pieces are half-open, so eps = 1 is its own piece
    D = _dimension_from_profile(best, 1.0)
    out = min(out, D * (2 * C + beta * math.log(C)) + k if D else k)
    return out


def pigeonhole_check(inst: EluderInstance, f_seq, d_seq, beta: float) -> PigeonholeResult:
    """Evaluate both sides of the l_1 pigeonhole inequality for every prefix length."""
    f_seq, d_seq = list(f_seq), list(d_seq)
    if len(f_seq) != len(d_seq) or not f_seq:
        raise ValueError("f_seq and d_seq must be non-empty and of equal length")
    V = inst.values()
    for k in range(len(f_seq)):
        total = float(sum(V[d_seq[i], f_seq[k]] for i in range(k)))
        if total > beta:
            raise PigeonholePreconditionError(k + 1, total, beta)
    diag = np.cumsum([V[d, f] for f, d in zip(f_seq, d_seq)])
    rhs = [pigeonhole_rhs(inst, beta, k + 1) for k in range(len(f_seq))]
    holds = all(l <= r + 1e-9 for l, r in zip(diag, rhs))
    return PigeonholeResult(float(diag[-1]), float(rhs[-1]), bool(holds), tuple(diag.tolist()), tuple(rhs))


def tabular_bound(X: int, A: int, eps: float) -> float:
    """``24 X A log(1 + 4 X A / eps^2)``."""
    return 24.0 * X * A * math.log(1.0 + 4.0 * X * A / eps**2)
