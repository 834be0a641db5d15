"""Randomized audits of the divergence inequalities, shared by the CLI and the tests."""

from __future__ import annotations

import math

import numpy as np

from ..dist_core import d_triangle_arrays, hellinger_sq_arrays, kl_div, mean_arrays, tv_arrays, GridCategorical

CHECKS = ("sandwich_low", "sandwich_high", "tri1", "tri2", "tv_low", "tv_high", "kl")


def random_pair(rng: np.random.Generator, m_low: int = 2, m_high: int = 51) -> tuple[np.ndarray, np.ndarray]:
    """Two random distributions on a shared grid; some atoms are zeroed to hit support edges."""
    m = int(rng.integers(m_low, m_high + 1))
    out = []
    for _ in range(2):
        p = rng.dirichlet(np.full(m, rng.choice([0.2, 1.0, 5.0])))
        if m > 2 and rng.random() < 0.3:
            p[rng.random(m) < 0.4] = 0.0
            if p.sum() == 0:
                p[rng.integers(m)] = 1.0
        out.append(p / p.sum())
    return out[0], out[1]


def check_pair(f: np.ndarray, g: np.ndarray, tol: float = 1e-9) -> dict:
    """Violation flags for every inequality on one pair."""
    h2 = float(hellinger_sq_arrays(f, g))
    dt = float(d_triangle_arrays(f, g))
    tv = float(tv_arrays(f, g))
    mf, mg = float(mean_arrays(f)), float(mean_arrays(g))
    gap = abs(mf - mg)
    kl = kl_div(GridCategorical.from_probs(f), GridCategorical.from_probs(g))
    return {
        "sandwich_low": 2 * h2 > dt + tol,
        "sandwich_high": dt > 4 * h2 + tol,
        "tri1": gap > math.sqrt((mf + mg) * dt) + tol,
        "tri2": gap > math.sqrt(4 * mg + dt) * math.sqrt(dt) + tol,
        "tv_low": h2 > tv + tol,
        "tv_high": tv > math.sqrt(2 * h2) + tol,
        "kl": math.isfinite(kl) and math.sqrt(h2) > math.sqrt(kl) + tol,
    }


def divergence_audit(rng: np.random.Generator, n_pairs: int, m_low: int = 2, m_high: int = 51) -> dict:
    """Violation counts per inequality over ``n_pairs`` random pairs."""
    counts = dict.fromkeys(CHECKS, 0)
    for _ in range(n_pairs):
        f, g = random_pair(rng, m_low, m_high)
        for k, bad in check_pair(f, g).items():
            counts[k] += int(bad)
    return counts
