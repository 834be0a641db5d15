"""Categorical distributions on a fixed uniform grid over [0, 1].

A grid with ``m`` atoms places atom ``i`` at ``i / (m - 1)`` (a single atom
sits at 0). Because the spacing is uniform, the grid is closed under addition
as long as the summed index stays below ``m``; :func:`convolve` is therefore
exact and raises :class:`NormalizationError` if mass would spill past 1.

Two layers are exposed. :class:`GridCategorical` is the validated, immutable
value type used at API boundaries. The ``*_arrays`` helpers operate on raw
probability arrays along the last axis and are what the algorithms use in
their inner loops.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SUM_TOL = 1e-9
RENORM_TOL = 1e-12
OVERFLOW_TOL = 1e-12
NEG_TOL = 1e-15


class GridMismatchError(ValueError):
    """Two distributions live on different grids."""


class NormalizationError(ValueError):
    """Masses do not form a distribution, or a sum overflowed the grid."""


@dataclass(frozen=True)
class GridSpec:
    m: int

    def __post_init__(self):
        if not isinstance(self.m, (int, np.integer)) or self.m < 1:
            raise ValueError(f"atom count must be a positive integer, got {self.m!r}")

    @property
    def spacing(self) -> float:
        return 1.0 / (self.m - 1) if self.m > 1 else 0.0

    @property
    def atoms(self) -> np.ndarray:
        if self.m == 1:
            return np.zeros(1)
        return np.arange(self.m) / (self.m - 1)

    def index_of(self, value: float, tol: float = 1e-9) -> int:
        """Grid index of ``value``; raises if the value is not an atom."""
        if self.m == 1:
            if abs(value) > tol:
                raise ValueError(f"value {value} is not on the 1-atom grid")
            return 0
        pos = value * (self.m - 1)
        idx = int(round(pos))
        if idx < 0 or idx >= self.m or abs(pos - idx) > tol * (self.m - 1):
            raise ValueError(f"value {value} is not an atom of the {self.m}-atom grid")
        return idx

    def snap(self, value: float) -> int:
        """Index of the nearest atom (values are clipped into [0, 1])."""
        if self.m == 1:
            return 0
        return int(np.clip(np.rint(value * (self.m - 1)), 0, self.m - 1))


def _validated_probs(probs) -> np.ndarray:
    p = np.array(probs, dtype=np.float64)
    if p.ndim != 1:
        raise NormalizationError("probability vector must be one-dimensional")
    if not np.all(np.isfinite(p)):
        raise NormalizationError("probability vector contains non-finite entries")
    if np.any(p < -NEG_TOL):
        raise NormalizationError(f"negative mass {p.min():.3e}")
    p[p < 0] = 0.0
    total = p.sum()
    drift = abs(total - 1.0)
    if drift > SUM_TOL:
        raise NormalizationError(f"masses sum to {total!r}, not 1")
    if drift > RENORM_TOL:
        p /= total
    return p


@dataclass(frozen=True)
class GridCategorical:
    grid: GridSpec
    probs: np.ndarray = field(repr=False)

    def __post_init__(self):
        p = _validated_probs(self.probs)
        if p.shape[0] != self.grid.m:
            raise NormalizationError(
                f"probability vector has {p.shape[0]} entries for a {self.grid.m}-atom grid"
            )
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_probs(cls, probs) -> "GridCategorical":
        p = np.asarray(probs, dtype=np.float64)
        return cls(GridSpec(int(p.shape[0])), p)

    @classmethod
    def dirac(cls, grid: GridSpec | int, value: float = 0.0) -> "GridCategorical":
        grid = grid if isinstance(grid, GridSpec) else GridSpec(int(grid))
        p = np.zeros(grid.m)
        p[grid.index_of(value)] = 1.0
        return cls(grid, p)

    @property
    def m(self) -> int:
        return self.grid.m

    def mean(self) -> float:
        return mean(self)

    def sample(self, rng: np.random.Generator) -> int:
        """Draw an atom index."""
        return int(rng.choice(self.grid.m, p=self.probs))

    def to_json(self) -> dict:
        return {"m": self.grid.m, "probs": [float(v) for v in self.probs]}

    @classmethod
    def from_json(cls, obj) -> "GridCategorical":
        if isinstance(obj, str):
            obj = json.loads(obj)
        return cls(GridSpec(int(obj["m"])), np.asarray(obj["probs"], dtype=np.float64))

    def __eq__(self, other):
        if not isinstance(other, GridCategorical):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.probs, other.probs)

    def __hash__(self):
        return hash((self.grid.m, self.probs.tobytes()))


def _check_pair(f: GridCategorical, g: GridCategorical):
    if f.grid != g.grid:
        raise GridMismatchError(f"grid with {f.grid.m} atoms vs grid with {g.grid.m} atoms")


# --- array-level kernels (last axis = atoms) ---------------------------------


def mean_arrays(p: np.ndarray) -> np.ndarray:
    m = p.shape[-1]
    return p @ GridSpec(m).atoms


def d_triangle_arrays(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    s = p + q
    d = p - q
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(s > 0, d * d / np.where(s > 0, s, 1.0), 0.0)
    return terms.sum(axis=-1)


def hellinger_sq_arrays(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    diff = np.sqrt(p) - np.sqrt(q)
    return 0.5 * (diff * diff).sum(axis=-1)


def tv_arrays(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return 0.5 * np.abs(p - q).sum(axis=-1)


def convolve_arrays(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Law of the sum of independent draws, batched over leading axes.

    Leading axes broadcast. Raises :class:`NormalizationError` if more than
    ``OVERFLOW_TOL`` mass lands beyond the top atom.
    """
    m = p.shape[-1]
    if q.shape[-1] != m:
        raise GridMismatchError(f"grid with {m} atoms vs grid with {q.shape[-1]} atoms")
    shape = np.broadcast_shapes(p.shape[:-1], q.shape[:-1])
    full = np.zeros(shape + (2 * m - 1,))
    for i in range(m):
        w = p[..., i : i + 1]
        if not np.any(w):
            continue
        full[..., i : i + m] += w * q
    spill = full[..., m:].sum(axis=-1)
    if np.any(spill > OVERFLOW_TOL):
        raise NormalizationError(
            f"sum exceeds the top atom with mass {float(np.max(spill)):.3e}; cumulative costs must stay in [0, 1]"
        )
    return full[..., :m]


# --- public operations on GridCategorical ------------------------------------


def mean(d: GridCategorical) -> float:
    return float(min(1.0, max(0.0, d.probs @ d.grid.atoms)))


def d_triangle(f: GridCategorical, g: GridCategorical) -> float:
    """Triangular discrimination, sum of (f - g)^2 / (f + g) with 0/0 = 0."""
    _check_pair(f, g)
    return float(d_triangle_arrays(f.probs, g.probs))


def hellinger_sq(f: GridCategorical, g: GridCategorical) -> float:
    """Squared Hellinger distance with the 1/2 normalization (range [0, 1])."""
    _check_pair(f, g)
    return float(hellinger_sq_arrays(f.probs, g.probs))


def tv_dist(f: GridCategorical, g: GridCategorical) -> float:
    _check_pair(f, g)
    return float(tv_arrays(f.probs, g.probs))


def kl_div(f: GridCategorical, g: GridCategorical) -> float:
    """KL(f || g); ``math.inf`` when f charges an atom g does not."""
    _check_pair(f, g)
    p, q = f.probs, g.probs
    support = p > 0
    if np.any(q[support] == 0):
        return math.inf
    return float(max(0.0, np.sum(p[support] * (np.log(p[support]) - np.log(q[support])))))


def convolve(f: GridCategorical, g: GridCategorical) -> GridCategorical:
    _check_pair(f, g)
    return GridCategorical(f.grid, convolve_arrays(f.probs, g.probs))


def mixture(weights: Sequence[float], comps: Sequence[GridCategorical]) -> GridCategorical:
    w = np.asarray(weights, dtype=np.float64)
    if len(comps) == 0 or w.shape != (len(comps),):
        raise ValueError("need one weight per component")
    if np.any(w < 0) or abs(w.sum() - 1.0) > SUM_TOL:
        raise NormalizationError(f"mixture weights must be non-negative and sum to 1 (sum={w.sum()!r})")
    grid = comps[0].grid
    for c in comps[1:]:
        _check_pair(comps[0], c)
    stacked = np.stack([c.probs for c in comps])
    return GridCategorical(grid, w @ stacked)
