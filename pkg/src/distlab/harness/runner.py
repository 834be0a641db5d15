"""Seeded experiment sweeps and result emission."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..cb_algorithms import (
    ExpWeightsCBOracle,
    GammaSchedule,
    LogLossOracle,
    RegretTrace,
    SoftmaxCBOracle,
    SquareLossOracle,
    TabularCBEnvironment,
    run_distcb,
    run_fastcb,
    run_squarecb,
)
from ..eluder_lab import EluderInstance, de_dimension, pigeonhole_check
from ..errors import AlgorithmFailure
from ..function_class import build_suffix_class
from ..mdp_core import MarkovPolicy, TabularMDP, occupancy, optimal_policy, random_mdp
from ..odisco import run_odisco
from ..pdisco import default_beta, generate_offline_data, run_pdisco
from ..rng import make_rng
from . import envs
from .config import ConfigError, ExperimentConfig
from .proptest import divergence_audit

LAST_WINDOW = 100


@dataclass
class SeedResult:
    seed: int
    metrics: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)
    failure: str | None = None
    flags: list = field(default_factory=list)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) if not isinstance(v, str) else v for v in r])
    return buf.getvalue()


# --- environment construction -------------------------------------------------


def _cb_env(spec: dict):
    kind = spec.get("type")
    if kind == "small_loss":
        env, cls_, truth = envs.small_loss_env(
            int(spec.get("offset_index", 0)), int(spec.get("n_contexts", 2)), int(spec.get("n_actions", 4))
        )
        return env, cls_
    if kind not in ("housing", "insurance", "superclass"):
        raise ConfigError(f"unknown bandit environment type {kind!r}")
    source = spec.get("source", "synthetic")
    if source == "csv":
        try:
            task_spec = envs.CsvTaskSpec(spec["path"], list(spec["feature_columns"]), spec["label_column"], kind,
                                         spec.get("superclass_column"))
        except KeyError as e:
            raise ConfigError(f"csv environment needs {e.args[0]!r}") from None
        task = envs.load_csv_task(task_spec)
    elif source == "synthetic":
        n, d, s = int(spec.get("n_rows", 2000)), int(spec.get("dim", 5)), int(spec.get("data_seed", 0))
        if kind == "housing":
            task = envs.synthetic_housing(n, d, s)
        elif kind == "insurance":
            task = envs.synthetic_insurance(n, d, s)
        else:
            task = envs.synthetic_superclass(n, d, int(spec.get("n_classes", 20)), int(spec.get("n_super", 5)), s)
    else:
        raise ConfigError(f"unknown data source {source!r}")
    return envs.build_env(task, kind), None


def _mdp(spec: dict) -> TabularMDP:
    kind = spec.get("type")
    if kind == "mdp":
        if spec.get("fixture") == "acceptance":
            return envs.acceptance_mdp()
        if "path" in spec:
            with open(spec["path"]) as fh:
                return TabularMDP.from_json(json.load(fh))
        raise ConfigError("mdp environment needs 'fixture' or 'path'")
    if kind == "random_mdp":
        rng = make_rng(int(spec.get("mdp_seed", 0)), "harness.mdp")
        return random_mdp(rng, int(spec.get("X", 3)), int(spec.get("A", 2)), int(spec.get("H", 3)), int(spec.get("m", 7)))
    raise ConfigError(f"unknown MDP environment type {kind!r}")


def _policies(mdp: TabularMDP, spec, which: str) -> list[MarkovPolicy]:
    if spec in (None, "acceptance"):
        return envs.acceptance_policies(which)
    if isinstance(spec, dict) and "random" in spec:
        rng = make_rng(int(spec.get("seed", 0)), "harness.policies")
        out = [MarkovPolicy.deterministic(rng.integers(0, mdp.A, (mdp.H, mdp.X)), mdp.A) for _ in range(int(spec["random"]))]
        return out + [optimal_policy(mdp)[0]]
    if isinstance(spec, list):
        return [MarkovPolicy.deterministic(np.array(a), mdp.A) for a in spec]
    raise ConfigError(f"cannot interpret policy specification {spec!r}")


# --- per-kind runs ------------------------------------------------------------


def _cb_metrics(trace: RegretTrace, flags: list) -> dict:
    last_ep = trace.episodes.max() if len(trace) else 0
    window = trace.episodes > last_ep - LAST_WINDOW
    if last_ep < LAST_WINDOW:
        flags.append(f"last-{LAST_WINDOW} window covers only {int(last_ep)} episodes")
    return {
        "avg_cost_all": float(trace.costs.mean()) if len(trace) else 0.0,
        "avg_cost_last100": float(trace.costs[window].mean()) if len(trace) else 0.0,
        "total_regret": trace.total_regret,
    }


def _run_cb(cfg: ExperimentConfig, seed: int) -> SeedResult:
    p = cfg.params
    env, cls_ = _cb_env(cfg.env)
    K, batch = int(p.get("K", 1000)), int(p.get("batch", 1))
    sched = GammaSchedule(float(p.get("gamma0", 10.0)), float(p.get("gamma_p", 0.5)), p.get("gamma_fixed"))
    step = float(p.get("step_size", 0.1))
    m = env.grid.m
    dim = env.features(0).shape[0] if not isinstance(env, TabularCBEnvironment) else env.n_contexts
    if cfg.kind == "distcb":
        if cls_ is not None and p.get("oracle", "expweights") == "expweights":
            oracle = ExpWeightsCBOracle(cls_, env.n_contexts, env.n_actions)
        else:
            oracle = SoftmaxCBOracle(dim, env.n_actions, m, step)
        trace = run_distcb(env, oracle, sched, K, seed, batch)
    elif cfg.kind == "squarecb":
        trace = run_squarecb(env, SquareLossOracle(dim, env.n_actions, step, m), sched, K, seed, batch)
    else:
        trace = run_fastcb(env, LogLossOracle(dim, env.n_actions, step, m), sched, K, seed, batch)
    res = SeedResult(seed)
    res.metrics = _cb_metrics(trace, res.flags)
    res.files[f"{cfg.kind}_seed{seed}.csv"] = trace.to_csv()
    return res


def _run_odisco(cfg: ExperimentConfig, seed: int) -> SeedResult:
    p = cfg.params
    mdp = _mdp(cfg.env)
    pset = _policies(mdp, p.get("policy_set"), "online_policy_set")
    F = build_suffix_class(mdp, pset)
    out = run_odisco(mdp, F, int(p.get("K", 100)), p.get("beta"), bool(p.get("uae", False)),
                     bool(p.get("small_return", False)), bool(p.get("exact", False)), seed,
                     float(p.get("delta", 0.1)))
    res = SeedResult(seed)
    d = out.diagnostics
    res.metrics = {
        "mixture_suboptimality": out.mixture_suboptimality,
        "total_regret": float(out.cum_regret[-1]),
        "optimism_rate": d["optimism_rate"],
        "contained_throughout": float(d["contained_throughout"]),
    }
    res.files[f"odisco_seed{seed}.csv"] = out.to_csv()
    res.files[f"odisco_seed{seed}.jsonl"] = out.to_jsonl()
    return res


def _run_pdisco(cfg: ExperimentConfig, seed: int) -> SeedResult:
    p = cfg.params
    mdp = _mdp(cfg.env)
    Pi = _policies(mdp, p.get("policies"), "offline_policies")
    F = build_suffix_class(mdp, Pi)
    nu_spec = p.get("nu", "mixture")
    if nu_spec == "mixture":
        nu = np.mean([occupancy(mdp, pi) for pi in Pi], axis=0)
    elif isinstance(nu_spec, dict) and "cover" in nu_spec:
        nu = occupancy(mdp, Pi[int(nu_spec["cover"])])
    else:
        raise ConfigError(f"cannot interpret nu specification {nu_spec!r}")
    N = int(p.get("N", 1000))
    beta = p.get("beta")
    if beta is None:
        beta = default_beta(mdp.H, len(Pi), len(F), float(p.get("delta", 0.1)))
    data = generate_offline_data(mdp, nu, N, seed)
    out = run_pdisco(data, F, Pi, float(beta), bool(p.get("small_return", False)), seed,
                     bool(p.get("exact", False)), mdp)
    d = out.diagnostics
    vals = np.array(d["values"])
    res = SeedResult(seed)
    res.metrics = {
        "chosen_value": d["chosen_value"],
        "suboptimality": float(d["chosen_value"] - vals.min()),
        "pessimism_holds": float(d["pessimism_holds"]),
        "bound_holds_all": float(all(d.get("bound_holds", [True]))),
    }
    rows = []
    for i in range(len(Pi)):
        cov = d.get("coverage", [None] * len(Pi))[i]
        bnd = d.get("bounds", [None] * len(Pi))[i]
        rows.append([i, out.pessimistic_values[i], out.survivor_counts[i], vals[i],
                     "inf" if cov is None else _fmt(cov), "inf" if bnd is None else _fmt(bnd),
                     d.get("bound_holds", [True] * len(Pi))[i]])
    res.files[f"pdisco_seed{seed}.csv"] = _csv(
        ["policy", "pessimistic_value", "survivors", "value", "coverage", "bound", "bound_holds"], rows)
    res.files[f"pdisco_seed{seed}.json"] = out.to_json() + "\n"
    return res


def random_eluder_instance(rng: np.random.Generator, S: int, n_psi: int, n_dists: int,
                           levels=(0.0, 0.5, 1.0)) -> EluderInstance:
    psi = rng.choice(np.asarray(levels), size=(n_psi, S))
    dists = rng.dirichlet(np.ones(S), size=n_dists)
    return EluderInstance(psi, dists)


def _run_eluder(cfg: ExperimentConfig, seed: int) -> SeedResult:
    p, e = cfg.params, cfg.env
    if e.get("type") == "eluder" and "path" in e:
        with open(e["path"]) as fh:
            inst = EluderInstance.from_json(json.load(fh))
    else:
        rng = make_rng(seed, "harness.eluder")
        inst = random_eluder_instance(rng, int(e.get("S", 3)), int(e.get("n_psi", 3)), int(e.get("n_dists", 3)))
    rows, res = [], SeedResult(seed)
    for eps in p.get("eps", [0.1, 0.3, 0.6]):
        for pp in p.get("p", [1, 2]):
            de = de_dimension(inst, float(eps), int(pp))
            rows.append([_fmt(float(eps)), int(pp), de])
            res.metrics[f"de{pp}_eps{eps}"] = float(de)
    k = int(p.get("sequence_length", 10))
    rng = make_rng(seed, "harness.eluder.sequence")
    f_seq = rng.integers(inst.psi.shape[0], size=k)
    d_seq = rng.integers(inst.dists.shape[0], size=k)
    V = inst.values()
    beta = max(float(sum(V[d_seq[i], f_seq[j]] for i in range(j))) for j in range(k))
    ph = pigeonhole_check(inst, f_seq, d_seq, beta)
    res.metrics["pigeonhole_holds"] = float(ph.holds)
    res.files[f"eluder_seed{seed}.csv"] = _csv(["eps", "p", "de"], rows)
    return res


def _run_proptest(cfg: ExperimentConfig, seed: int) -> SeedResult:
    p = cfg.params
    counts = divergence_audit(make_rng(seed, "harness.proptest"), int(p.get("n_pairs", 1000)),
                              int(p.get("m_low", 2)), int(p.get("m_high", 51)))
    res = SeedResult(seed)
    res.metrics = {"violations": float(sum(counts.values()))}
    res.files[f"proptest_seed{seed}.csv"] = _csv(["check", "violations"], sorted(counts.items()))
    return res


RUNNERS = {
    "distcb": _run_cb,
    "squarecb": _run_cb,
    "fastcb": _run_cb,
    "odisco": _run_odisco,
    "pdisco": _run_pdisco,
    "eluder": _run_eluder,
    "proptest": _run_proptest,
}


def run_seed(cfg: ExperimentConfig, seed: int) -> SeedResult:
    """One seed; an algorithm failure is recorded on the result instead of raised."""
    try:
        return RUNNERS[cfg.kind](cfg, seed)
    except AlgorithmFailure as e:
        return SeedResult(seed, failure=f"{type(e).__name__}: {e}")


# --- aggregation --------------------------------------------------------------


def aggregate_seeds(results: list[SeedResult]) -> list[dict]:
    """Mean and standard error per metric across successful seeds."""
    ok = [r for r in results if r.failure is None]
    names = sorted({k for r in ok for k in r.metrics})
    rows = []
    for name in names:
        vals = [float(r.metrics[name]) for r in ok if name in r.metrics]
        n = len(vals)
        mean = math.fsum(vals) / n
        if n > 1:
            var = math.fsum((v - mean) ** 2 for v in vals) / (n - 1)
            sem = math.sqrt(var / n)
        else:
            sem = 0.0
        rows.append({"metric": name, "mean": mean, "sem": sem, "n": n, "flag": "n=1" if n == 1 else ""})
    return rows


def aggregate_csv(rows: list[dict]) -> str:
    return _csv(["metric", "mean", "sem", "n", "flag"], [[r["metric"], r["mean"], r["sem"], r["n"], r["flag"]] for r in rows])


@dataclass
class RunSummary:
    results: list
    aggregate: list
    out_dir: str
    wall_time: float

    @property
    def failed(self) -> bool:
        return any(r.failure for r in self.results)


def _write(path: str, text: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(text)


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> RunSummary:
    """Run every seed, then write per-seed files, ``aggregate.csv`` and ``metadata.json``."""
    t0 = time.perf_counter()
    if workers > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_seed, [cfg] * len(cfg.seeds), cfg.seeds))
    else:
        results = [run_seed(cfg, s) for s in cfg.seeds]
    agg = aggregate_seeds(results)
    wall = time.perf_counter() - t0
    os.makedirs(cfg.out, exist_ok=True)
    for r in results:
        for name, text in r.files.items():
            _write(os.path.join(cfg.out, name), text)
    _write(os.path.join(cfg.out, "aggregate.csv"), aggregate_csv(agg))
    meta = {
        "config": cfg.to_dict(),
        "config_hash": cfg.digest(),
        "seeds": list(cfg.seeds),
        "wall_time_s": wall,
        "failures": {str(r.seed): r.failure for r in results if r.failure},
        "flags": {str(r.seed): r.flags for r in results if r.flags},
    }
    _write(os.path.join(cfg.out, "metadata.json"), json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return RunSummary(results, agg, cfg.out, wall)
