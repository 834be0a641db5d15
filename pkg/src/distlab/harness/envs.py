"""Environment construction: the three labelled-data cost rules, synthetic tasks, CSV ingestion."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from ..cb_algorithms import LabelCBEnvironment, TabularCBEnvironment
from ..dist_core import GridSpec
from ..mdp_core import MarkovPolicy, TabularMDP
from ..mle_oracle import CondDistClass
from ..rng import make_rng

HOUSING_ACTIONS = 100
HOUSING_ATOMS = 101
INSURANCE_LEVELS = 8
INSURANCE_ATOMS = 11


@dataclass
class TaskData:
    """Feature rows with one label per row; ``superclass_of`` maps class id to superclass id."""

    features: np.ndarray
    labels: np.ndarray
    superclass_of: np.ndarray | None = None


@dataclass
class CsvTaskSpec:
    path: str
    feature_columns: list
    label_column: str
    construction: str
    superclass_column: str | None = None
    extra: dict = field(default_factory=dict)


def _with_bias(features) -> np.ndarray:
    f = np.asarray(features, dtype=np.float64)
    return np.hstack([f, np.ones((f.shape[0], 1))])


def housing_prices(n_actions: int = HOUSING_ACTIONS) -> np.ndarray:
    """Evenly spaced prices ``1/n, 2/n, ..., 1``."""
    return np.arange(1, n_actions + 1) / n_actions


def housing_cost(price: float, label: float) -> float:
    """Full cost when the price overshoots the label, else one minus the price."""
    return 1.0 if price > label else 1.0 - price


def build_housing_env(spec: TaskData, n_actions: int = HOUSING_ACTIONS) -> LabelCBEnvironment:
    labels = np.asarray(spec.labels, dtype=np.float64)
    if np.any(labels < 0) or np.any(labels > 1):
        raise ValueError("housing labels must be normalized to [0, 1]")
    grid = GridSpec(HOUSING_ATOMS)
    prices = housing_prices(n_actions)
    cost = np.where(prices[None, :] > labels[:, None], 1.0, 1.0 - prices[None, :])
    idx = np.rint(cost * (grid.m - 1)).astype(np.int64)
    return LabelCBEnvironment(_with_bias(spec.features), idx, grid)


def insurance_cost(pred: int, label: int) -> float:
    return 1.0 if pred > label else 0.1 * (label - pred)


def build_insurance_env(spec: TaskData) -> LabelCBEnvironment:
    labels = np.asarray(spec.labels)
    if np.any(labels != np.round(labels)) or np.any(labels < 1) or np.any(labels > INSURANCE_LEVELS):
        raise ValueError(f"insurance labels must be integers in 1..{INSURANCE_LEVELS}")
    labels = labels.astype(np.int64)
    preds = np.arange(1, INSURANCE_LEVELS + 1)
    # grid step 0.1: index (label - pred) when not overpredicting, else the top atom
    idx = np.where(preds[None, :] > labels[:, None], INSURANCE_ATOMS - 1, labels[:, None] - preds[None, :])
    return LabelCBEnvironment(_with_bias(spec.features), idx, GridSpec(INSURANCE_ATOMS))


def build_superclass_env(spec: TaskData) -> LabelCBEnvironment:
    labels = np.asarray(spec.labels, dtype=np.int64)
    sup = np.asarray(spec.superclass_of, dtype=np.int64)
    if sup.ndim != 1 or np.any(labels < 0) or np.any(labels >= sup.size):
        raise ValueError("every label needs an entry in the class-to-superclass map")
    idx = np.where(
        np.arange(sup.size)[None, :] == labels[:, None],
        0,
        np.where(sup[None, :] == sup[labels][:, None], 1, 2),
    )
    return LabelCBEnvironment(_with_bias(spec.features), idx, GridSpec(3))


def superclass_map_from_rows(labels, superclasses) -> np.ndarray:
    """Class-to-superclass map from per-row pairs; raises on inconsistent rows."""
    labels = np.asarray(labels, dtype=np.int64)
    superclasses = np.asarray(superclasses, dtype=np.int64)
    out = np.full(labels.max() + 1, -1, dtype=np.int64)
    for c, s in zip(labels, superclasses):
        if out[c] not in (-1, s):
            raise ValueError(f"class {c} is assigned to superclasses {out[c]} and {s}")
        out[c] = s
    return out


# --- synthetic generators -----------------------------------------------------


def synthetic_housing(n_rows: int, dim: int, seed: int) -> TaskData:
    rng = make_rng(seed, "harness.housing")
    X = rng.normal(size=(n_rows, dim))
    w = rng.normal(size=dim) / np.sqrt(dim)
    latent = X @ w + 0.3 * rng.normal(size=n_rows)
    y = 0.05 + 0.9 / (1.0 + np.exp(-1.5 * latent))
    return TaskData(X, y)


def synthetic_insurance(n_rows: int, dim: int, seed: int) -> TaskData:
    rng = make_rng(seed, "harness.insurance")
    X = rng.normal(size=(n_rows, dim))
    w = rng.normal(size=dim) / np.sqrt(dim)
    latent = X @ w + 0.3 * rng.normal(size=n_rows)
    cuts = np.quantile(latent, np.linspace(0, 1, INSURANCE_LEVELS + 1)[1:-1])
    return TaskData(X, 1 + np.searchsorted(cuts, latent))


def synthetic_superclass(n_rows: int, dim: int, n_classes: int, n_super: int, seed: int) -> TaskData:
    if n_classes % n_super:
        raise ValueError("classes must split evenly into superclasses")
    rng = make_rng(seed, "harness.superclass")
    sup = np.repeat(np.arange(n_super), n_classes // n_super)
    centers = rng.normal(size=(n_super, dim))[sup] + 0.5 * rng.normal(size=(n_classes, dim))
    labels = rng.integers(n_classes, size=n_rows)
    X = centers[labels] + 0.7 * rng.normal(size=(n_rows, dim))
    return TaskData(X, labels, sup)


def small_loss_env(offset_index: int = 0, n_contexts: int = 2, n_actions: int = 4, m: int = 101):
    """Tabular bandit whose arms share shapes and differ only by a common cost shift.

    The best arm per context costs 0 w.p. 0.98 and 0.5 otherwise; the rest cost
    0 or 0.5 with equal odds. ``offset_index`` shifts every atom up by that
    many grid steps. Returns the environment and the matching finite class.
    """
    half = (m - 1) // 2
    if offset_index < 0 or offset_index + half > m - 1:
        raise ValueError("offset pushes costs off the grid")
    good = np.zeros(m)
    good[offset_index], good[offset_index + half] = 0.98, 0.02
    bad = np.zeros(m)
    bad[offset_index], bad[offset_index + half] = 0.5, 0.5
    best = np.arange(n_contexts) % n_actions

    def table(best_arms):
        t = np.tile(bad, (n_contexts, n_actions, 1))
        t[np.arange(n_contexts), best_arms] = good
        return t

    members = [table(np.array(c)) for c in np.ndindex(*(n_actions,) * n_contexts)]
    truth = int(np.ravel_multi_index(tuple(best), (n_actions,) * n_contexts))
    keys = [(x, a) for x in range(n_contexts) for a in range(n_actions)]
    cls_ = CondDistClass(keys, np.array([t.reshape(-1, m) for t in members]))
    return TabularCBEnvironment(table(best)), cls_, truth


# --- CSV ingestion ------------------------------------------------------------


def load_csv_task(spec: CsvTaskSpec) -> TaskData:
    with open(spec.path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{spec.path} has no data rows")
    cols = set(rows[0].keys())
    need = set(spec.feature_columns) | {spec.label_column}
    if spec.superclass_column:
        need.add(spec.superclass_column)
    missing = need - cols
    if missing:
        raise ValueError(f"{spec.path} is missing columns {sorted(missing)}")
    X = np.array([[float(r[c]) for c in spec.feature_columns] for r in rows])
    y = np.array([float(r[spec.label_column]) for r in rows])
    sup = None
    if spec.construction == "superclass":
        if not spec.superclass_column:
            raise ValueError("superclass construction needs a superclass column")
        sup = superclass_map_from_rows(y.astype(np.int64), [int(float(r[spec.superclass_column])) for r in rows])
    return TaskData(X, y, sup)


def build_env(task: TaskData, construction: str):
    builders = {"housing": build_housing_env, "insurance": build_insurance_env, "superclass": build_superclass_env}
    if construction not in builders:
        raise ValueError(f"unknown cost construction {construction!r}")
    return builders[construction](task)


# --- shipped fixtures ---------------------------------------------------------


def _fixture(name: str) -> dict:
    return json.loads(resources.files("distlab").joinpath("fixtures", name).read_text())


def acceptance_mdp() -> TabularMDP:
    """The 4-state, 2-action, horizon-3 MDP used by the online and offline acceptance runs."""
    return TabularMDP.from_json(_fixture("acceptance_mdp.json"))


def acceptance_policies(which: str = "online_policy_set") -> list[MarkovPolicy]:
    mdp = acceptance_mdp()
    return [MarkovPolicy.deterministic(np.array(a), mdp.A) for a in _fixture("acceptance_policies.json")[which]]
