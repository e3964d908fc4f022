"""Seeded experiment suites: similarity, quantisation, worst case vs step, pruning.

Each suite takes a config dataclass and returns an :class:`ExperimentReport`
whose per-seed rows are enough to recompute every summary statistic.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .network import INITS, NeuralNetwork, random_network
from .qc import Coupling, InputSpec
from .sdp import ObjectiveWeights, SolverOptions, solve
from .transforms import FixedPointFormat, PruneSpec, prune_network, quantize_network
from .verify import finite_stats, input_grid, log_tightness, squared_error

SUITES = ("similarity", "quantisation", "worstcase", "pruning")
TIMING_FIELDS = ("runtime_s",)

_SOLVE_COLUMNS = ("gamma_x", "gamma_x1", "gamma_x2", "gamma", "status", "lmi_max_eigenvalue", "eps", "runtime_s")
_T_COLUMNS = ("mean_T", "max_T", "min_T", "n_neg_inf", "mean_log_gap", "max_excess")
# column order of each suite's rows CSV
ROW_SCHEMA = {
    "similarity": ("layers", "seed", *_SOLVE_COLUMNS, *_T_COLUMNS),
    "quantisation": ("layers", "seed", *_SOLVE_COLUMNS, *_T_COLUMNS),
    "worstcase": ("fraction_bits", "delta", "seed", *_SOLVE_COLUMNS, "max_bound", "error_at_max_bound",
                  "max_error", "bound_at_max_error", "max_excess"),
    "pruning": ("seed", "count", *_SOLVE_COLUMNS, *_T_COLUMNS),
}


class ConfigError(ValueError):
    pass


@dataclass
class _BaseConfig:
    seeds: list = field(default_factory=lambda: list(range(100)))
    width: int = 10
    n_x: int = 1
    n_f: int = 1
    x_bar: float = 1.0
    weights: list = field(default_factory=lambda: [1.0, 1.0, 1.0, 1.0])
    solver: dict = field(default_factory=dict)
    workers: int = 1
    init: str = "unit"  # weight draw for random networks, see random_network

    def validate(self):
        if self.init not in INITS:
            raise ConfigError(f"init must be one of {INITS}, got {self.init!r}")
        if not self.seeds:
            raise ConfigError("seed list is empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("duplicate seeds")
        ObjectiveWeights(*self.weights)
        SolverOptions.from_dict(self.solver)

    @property
    def objective(self) -> ObjectiveWeights:
        return ObjectiveWeights(*self.weights)

    @property
    def solver_options(self) -> SolverOptions:
        return SolverOptions.from_dict(self.solver)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg


@dataclass
class SimilarityConfig(_BaseConfig):
    layers: list = field(default_factory=lambda: [1, 2, 3, 4])
    n_samples: int = 1000  # random admissible input pairs per network pair


@dataclass
class QuantisationConfig(_BaseConfig):
    layers: list = field(default_factory=lambda: [1, 2, 3, 4])
    integer_bits: int = 8
    fraction_bits: int = 2
    grid: int = 100  # evenly spaced x1 values in [-x_bar, x_bar]
    curve_seeds: int = 1  # seeds whose (x, error, bound) curves are kept


@dataclass
class WorstCaseConfig(_BaseConfig):
    layers: int = 2
    fraction_bits: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    integer_bits: int = 8
    grid: int = 100


@dataclass
class PruningConfig(_BaseConfig):
    seeds: list = field(default_factory=lambda: [0])
    layers: int = 4
    width: int = 5
    count: int = 8
    norm: float = 2
    grid: int = 100  # per axis of the (x1, x2) surface


CONFIGS = {"similarity": SimilarityConfig, "quantisation": QuantisationConfig,
           "worstcase": WorstCaseConfig, "pruning": PruningConfig}


@dataclass
class ExperimentReport:
    suite: str
    config: dict
    rows: list[dict]
    summary: list[dict]
    curves: list[dict] = field(default_factory=list)  # plot data rows
    runtime_s: float = 0.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def write(self, out_dir) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"json": out / f"{self.suite}_report.json", "csv": out / f"{self.suite}_rows.csv",
                 "summary": out / f"{self.suite}_summary.csv", "config": out / f"{self.suite}_config.json"}
        paths["json"].write_text(json.dumps(self.to_dict(), indent=1, default=_json_default))
        paths["config"].write_text(json.dumps(self.config, indent=1))
        _write_csv(paths["csv"], self.rows)
        _write_csv(paths["summary"], self.summary)
        if self.curves:
            paths["curves"] = out / f"{self.suite}_curves.csv"
            _write_csv(paths["curves"], self.curves)
        return paths


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o))


def _write_csv(path, rows):
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def strip_timing(report: dict) -> dict:
    """Copy of a report dict without wall-clock fields (for reproducibility comparisons)."""
    def clean(obj):
        if isinstance(obj, dict):
            return {k: clean(v) for k, v in obj.items() if k not in TIMING_FIELDS}
        if isinstance(obj, list):
            return [clean(v) for v in obj]
        return obj
    return clean(report)


def _rng(suite: str, seed: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng([SUITES.index(suite), int(seed), *extra])


def _gamma_fields(cert) -> dict:
    g = cert.gammas
    return {"gamma_x": g.x, "gamma_x1": g.x1, "gamma_x2": g.x2, "gamma": g.affine,
            "status": cert.status, "lmi_max_eigenvalue": cert.lmi_max_eigenvalue, "eps": cert.eps,
            "runtime_s": cert.solve_time}


def _map(fn: Callable, jobs: list, workers: int) -> list:
    if workers <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(workers) as pool:
        return list(pool.map(fn, *zip(*jobs)))


def _summarise(rows: list[dict], by: str, keys: tuple) -> list[dict]:
    out = []
    for val in sorted({r[by] for r in rows}):
        sel = [r for r in rows if r[by] == val]
        ok = [r for r in sel if r["status"] in ("optimal", "near_optimal")]
        entry = {by: val, "n_runs": len(sel), "n_certified": len(ok)}
        for k in keys:
            vals = np.array([r[k] for r in ok], dtype=float)
            vals = vals[np.isfinite(vals)]
            entry[k] = float(vals.mean()) if vals.size else float("nan")
        out.append(entry)
    return out


# ---------------------------------------------------------------- similarity

def similarity_pair(cfg: SimilarityConfig, layers: int, seed: int):
    """Networks, input set and the generator state used for sampling, for one similarity run."""
    rng = _rng("similarity", seed, layers)
    widths = [cfg.width] * layers
    nets = tuple(random_network(rng, cfg.n_x, widths, cfg.n_f, init=cfg.init) for _ in range(2))
    return nets, InputSpec.box(cfg.n_x, -cfg.x_bar, cfg.x_bar), rng


def _similarity_seed(cfg: SimilarityConfig, layers: int, seed: int) -> dict:
    nets, spec, rng = similarity_pair(cfg, layers, seed)
    cert = solve(nets, spec, cfg.objective, cfg.solver_options)
    row = {"layers": layers, "seed": seed, **_gamma_fields(cert)}
    row.update(_tightness_fields(cert, nets, *spec.sample(rng, cfg.n_samples)))
    return row


def _tightness_fields(cert, nets, X1, X2) -> dict:
    if not cert.ok:
        return {"mean_T": np.nan, "max_T": np.nan, "min_T": np.nan, "n_neg_inf": 0, "mean_log_gap": np.nan,
                "max_excess": np.nan}
    err, bound = squared_error(nets, X1, X2), cert.bound(X1, X2)
    T = log_tightness(err, bound)
    stats = finite_stats(T)
    # the positive log-gap ln(bound) - ln(error^2), i.e. -T
    stats["mean_log_gap"] = -stats["mean_T"]
    stats["max_excess"] = float(np.max(err - bound))
    return stats


_STAT_KEYS = ("gamma_x", "gamma_x1", "gamma_x2", "gamma", "mean_T", "max_T", "min_T", "mean_log_gap",
              "runtime_s")


def experiment_similarity(cfg: SimilarityConfig) -> ExperimentReport:
    cfg.validate()
    t0 = time.perf_counter()
    jobs = [(cfg, layers, seed) for layers in cfg.layers for seed in cfg.seeds]
    rows = _map(_similarity_seed, jobs, cfg.workers)
    return ExperimentReport("similarity", cfg.to_dict(), rows, _summarise(rows, "layers", _STAT_KEYS),
                            runtime_s=time.perf_counter() - t0)


# ---------------------------------------------------------------- quantisation

def _quantised_pair(cfg, layers: int, seed: int, fb: int, suite: str):
    fmt = FixedPointFormat(cfg.integer_bits, fb)
    rng = _rng(suite, seed, layers)
    net1 = random_network(rng, cfg.n_x, [cfg.width] * layers, cfg.n_f, init=cfg.init)
    nets = (net1, quantize_network(net1, fmt))
    spec = InputSpec.box(cfg.n_x, -cfg.x_bar, cfg.x_bar, Coupling.QUANTISED, fmt)
    return nets, spec


def _quantisation_seed(cfg: QuantisationConfig, layers: int, seed: int, keep_curve: bool) -> tuple[dict, list]:
    nets, spec = _quantised_pair(cfg, layers, seed, cfg.fraction_bits, "quantisation")
    cert = solve(nets, spec, cfg.objective, cfg.solver_options)
    X1, X2 = input_grid(spec, cfg.grid)
    row = {"layers": layers, "seed": seed, **_gamma_fields(cert), **_tightness_fields(cert, nets, X1, X2)}
    curve = []
    if keep_curve and cert.ok:
        err, bound = squared_error(nets, X1, X2), cert.bound(X1, X2)
        curve = [{"layers": layers, "seed": seed, "x": float(x[0]), "x_quantised": float(q[0]),
                  "error": float(e), "bound": float(b)} for x, q, e, b in zip(X1, X2, err, bound)]
    return row, curve


def experiment_quantisation(cfg: QuantisationConfig) -> ExperimentReport:
    cfg.validate()
    t0 = time.perf_counter()
    jobs = [(cfg, layers, seed, k < cfg.curve_seeds)
            for layers in cfg.layers for k, seed in enumerate(cfg.seeds)]
    out = _map(_quantisation_seed, jobs, cfg.workers)
    rows = [r for r, _ in out]
    curves = [pt for _, c in out for pt in c]
    return ExperimentReport("quantisation", cfg.to_dict(), rows, _summarise(rows, "layers", _STAT_KEYS),
                            curves, time.perf_counter() - t0)


# ---------------------------------------------------------------- worst case vs step

def _worstcase_seed(cfg: WorstCaseConfig, fb: int, seed: int) -> dict:
    nets, spec = _quantised_pair(cfg, cfg.layers, seed, fb, "worstcase")
    cert = solve(nets, spec, cfg.objective, cfg.solver_options)
    row = {"fraction_bits": fb, "delta": 2.0 ** -fb, "seed": seed, **_gamma_fields(cert)}
    X1, X2 = input_grid(spec, cfg.grid)
    err = squared_error(nets, X1, X2)
    bound = cert.bound(X1, X2) if cert.ok else np.full(err.shape, np.nan)
    kb, ke = int(np.nanargmax(bound)) if cert.ok else 0, int(np.argmax(err))
    row.update({"max_bound": float(bound[kb]), "error_at_max_bound": float(err[kb]),
                "max_error": float(err[ke]), "bound_at_max_error": float(bound[ke]),
                "max_excess": float(np.max(err - bound))})
    return row


def experiment_worst_case_vs_delta(cfg: WorstCaseConfig) -> ExperimentReport:
    cfg.validate()
    t0 = time.perf_counter()
    jobs = [(cfg, fb, seed) for fb in cfg.fraction_bits for seed in cfg.seeds]
    rows = _map(_worstcase_seed, jobs, cfg.workers)
    keys = ("max_bound", "error_at_max_bound", "max_error", "bound_at_max_error", "runtime_s")
    summary = _summarise(rows, "fraction_bits", keys)
    for s in summary:
        s["delta"] = 2.0 ** -s["fraction_bits"]
    return ExperimentReport("worstcase", cfg.to_dict(), rows, summary, runtime_s=time.perf_counter() - t0)


# ---------------------------------------------------------------- pruning

def pruned_pair(cfg: PruningConfig, seed: int) -> tuple[NeuralNetwork, NeuralNetwork]:
    rng = _rng("pruning", seed, cfg.layers)
    net = random_network(rng, cfg.n_x, [cfg.width] * cfg.layers, cfg.n_f, init=cfg.init)
    return net, prune_network(net, PruneSpec(count=cfg.count, norm=cfg.norm))


def _pruning_seed(cfg: PruningConfig, seed: int) -> tuple[dict, list]:
    nets = pruned_pair(cfg, seed)
    spec = InputSpec.box(cfg.n_x, -cfg.x_bar, cfg.x_bar)
    cert = solve(nets, spec, cfg.objective, cfg.solver_options)
    row = {"seed": seed, "count": cfg.count, **_gamma_fields(cert)}
    surface = []
    if cfg.n_x == 1:
        X1, X2 = input_grid(spec, cfg.grid)
        row.update(_tightness_fields(cert, nets, X1, X2))
        if cert.ok:
            err, bound = squared_error(nets, X1, X2), cert.bound(X1, X2)
            surface = [{"seed": seed, "x1": float(a[0]), "x2": float(b[0]), "error": float(e), "bound": float(u)}
                       for a, b, e, u in zip(X1, X2, err, bound)]
    else:
        # the (x1, x2) surface is only defined for scalar inputs; sample instead
        X1, X2 = spec.sample(_rng("pruning", seed, cfg.layers, 1), cfg.grid ** 2)
        row.update(_tightness_fields(cert, nets, X1, X2))
    return row, surface


def experiment_pruning(cfg: PruningConfig) -> ExperimentReport:
    cfg.validate()
    if cfg.count >= cfg.layers * cfg.width:
        raise ConfigError("count must be smaller than the number of hidden neurons")
    t0 = time.perf_counter()
    out = _map(_pruning_seed, [(cfg, seed) for seed in cfg.seeds], cfg.workers)
    rows = [r for r, _ in out]
    keys = ("gamma_x", "gamma_x1", "gamma_x2", "gamma", "mean_T", "max_excess", "runtime_s")
    summary = _summarise(rows, "count", keys)
    return ExperimentReport("pruning", cfg.to_dict(), rows, summary, [p for _, s in out for p in s],
                            time.perf_counter() - t0)


RUNNERS = {"similarity": experiment_similarity, "quantisation": experiment_quantisation,
           "worstcase": experiment_worst_case_vs_delta, "pruning": experiment_pruning}


def run_suite(suite: str, config: dict) -> ExperimentReport:
    if suite not in RUNNERS:
        raise ConfigError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    return RUNNERS[suite](CONFIGS[suite].from_dict(config))
