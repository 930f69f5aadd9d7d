"""Monte Carlo harness: configs, baselines, sweeps and result files."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .channel import IQIParams, Network, RISConfig, ScenarioConfig, generate_scenario
from .optimizer import (
    InfeasibleThresholds,
    NumericalFailure,
    OptState,
    Problem,
    SolverSettings,
    TraceRecord,
    ao_loop,
    evaluate,
    initial_ris,
    initial_state,
)
from .rates import CovarianceSet, EEParams

log = logging.getLogger(__name__)

SCHEMES = ("RS", "TIN")
SIGNALING = ("IGS", "ProperIGSOff")
RIS_MODES = ("ES", "MS", "RegularRIS", "RandomRIS", "NoRIS")
T_SETS = ("T_U", "T_I", "T_N")
CSV_HEADER = [
    "scheme",
    "signaling",
    "ris_mode",
    "t_set",
    "seed",
    "sweep_name",
    "sweep_value",
    "objective",
    "iters",
    "wall_ms",
]
TRACE_HEADER = ["outer_iter", "half_step", "objective", "epsilon", "accepted", "projected", "inner_iters", "rejected"]
_EE_FIELDS = {f.name for f in fields(EEParams)}
_SCENARIO_FIELDS = {f.name for f in fields(ScenarioConfig)}


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    seeds: list = field(default_factory=lambda: [0])
    scheme: str = "RS"
    signaling: str = "IGS"
    ris_mode: str = "ES"
    t_set: str = "T_I"
    sweep_name: str = "P_c"
    sweep_values: list = field(default_factory=lambda: [1.0])
    ee: EEParams = field(default_factory=EEParams)
    solver: SolverSettings = field(default_factory=SolverSettings)
    record_wall_time: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}")
        if self.signaling not in SIGNALING:
            raise ConfigError(f"signaling must be one of {SIGNALING}")
        if self.ris_mode not in RIS_MODES:
            raise ConfigError(f"ris_mode must be one of {RIS_MODES}")
        if self.t_set not in T_SETS:
            raise ConfigError(f"t_set must be one of {T_SETS}")
        if self.signaling == "ProperIGSOff" and self.ris_mode not in ("RandomRIS", "NoRIS"):
            raise ConfigError("ProperIGSOff keeps the RIS at random phases; use ris_mode RandomRIS or NoRIS")
        if self.sweep_name not in _EE_FIELDS | _SCENARIO_FIELDS:
            raise ConfigError(f"unknown sweep variable {self.sweep_name!r}")
        vals = [float(v) for v in self.sweep_values]
        if not vals or any(b <= a for a, b in zip(vals, vals[1:])):
            raise ConfigError("sweep grid must be nonempty and strictly increasing")
        try:
            self.scenario.validate()
        except ValueError as err:
            raise ConfigError(str(err)) from err

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            if "scenario" in d:
                d["scenario"] = ScenarioConfig.from_dict(d["scenario"])
            if "ee" in d:
                d["ee"] = EEParams(**d["ee"])
            if "solver" in d:
                d["solver"] = SolverSettings(**d["solver"])
        except (TypeError, ValueError) as err:
            raise ConfigError(str(err)) from err
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        out = asdict(self)
        for key, val in out["ee"].items():
            if isinstance(val, np.ndarray):
                out["ee"][key] = val.tolist()
        return out

    def with_seeds(self, seeds) -> "ExperimentConfig":
        d = self.to_dict()
        d["seeds"] = list(seeds)
        return ExperimentConfig.from_dict(d)


@dataclass
class Instance:
    problem: Problem
    state: OptState


@dataclass
class ResultRow:
    scheme: str
    signaling: str
    ris_mode: str
    t_set: str
    seed: int
    sweep_name: str
    sweep_value: float
    objective: float
    iters: int
    wall_ms: float
    ee: np.ndarray  # (L, K)
    failed: bool = False
    covs: CovarianceSet | None = None
    ris: RISConfig | None = None

    def csv_fields(self):
        vals = [
            self.scheme,
            self.signaling,
            self.ris_mode,
            self.t_set,
            str(self.seed),
            self.sweep_name,
            repr(float(self.sweep_value)),
            repr(float(self.objective)),
            str(self.iters),
            repr(float(self.wall_ms)),
        ]
        return vals + [repr(float(v)) for v in np.asarray(self.ee).ravel()]


def _point_config(cfg: ExperimentConfig, value: float):
    """Scenario and EE constants at one sweep point."""
    scenario, ee = cfg.scenario, cfg.ee
    if cfg.sweep_name in _EE_FIELDS:
        ee = ee.replace(**{cfg.sweep_name: value})
    else:
        kind = type(getattr(scenario, cfg.sweep_name))
        d = asdict(scenario)
        d[cfg.sweep_name] = kind(value)
        scenario = ScenarioConfig.from_dict(d)
    return scenario, ee


def build_baseline(cfg: ExperimentConfig, seed: int, sweep_value: float | None = None) -> Instance:
    """Problem instance and initial state of one trial.

    Channels, the initial RIS draw and the MS mask depend only on ``seed``
    (and the scenario), so different schemes on the same seed are paired.
    """
    value = float(cfg.sweep_values[0] if sweep_value is None else sweep_value)
    scenario, ee = _point_config(cfg, value)
    _, channels = generate_scenario(seed, scenario)
    if cfg.ris_mode == "NoRIS":
        channels = channels.without_ris()
    net = Network(channels, IQIParams.from_config(scenario))
    problem = Problem(
        net,
        ee,
        rate_splitting=cfg.scheme == "RS",
        proper=cfg.signaling == "ProperIGSOff",
        ris_fixed=cfg.ris_mode in ("RandomRIS", "NoRIS"),
    )
    M, N = scenario.M, scenario.N_RIS
    ris_rng = np.random.default_rng([seed, 1])
    if cfg.ris_mode == "MS":
        mask = np.random.default_rng([seed, 2]).random((M, N)) < 0.5
        ris = initial_ris(M, N, cfg.t_set, "MS", mask, ris_rng)
    elif cfg.ris_mode == "RegularRIS":
        ris = initial_ris(M, N, cfg.t_set, "MS", np.ones((M, N), dtype=bool), ris_rng)
    else:
        ris = initial_ris(M, N, cfg.t_set, "ES", None, ris_rng)
    return Instance(problem, initial_state(problem, ris))


def _run_point(cfg_dict: dict, seed: int, value: float) -> ResultRow:
    cfg = ExperimentConfig.from_dict(cfg_dict)
    inst = build_baseline(cfg, seed, value)
    L, K, _ = inst.problem.dims
    t0 = time.perf_counter()
    failed = False
    try:
        state, _ = ao_loop(inst.problem, inst.state, cfg.solver)
    except (InfeasibleThresholds, NumericalFailure, np.linalg.LinAlgError) as err:
        log.warning("seed %d, %s=%g failed: %s", seed, cfg.sweep_name, value, err)
        state, failed = inst.state, True
    wall = (time.perf_counter() - t0) * 1e3 if cfg.record_wall_time else 0.0
    ee = np.full((L, K), np.nan) if failed else state.ee_users
    return ResultRow(
        cfg.scheme,
        cfg.signaling,
        cfg.ris_mode,
        cfg.t_set,
        int(seed),
        cfg.sweep_name,
        value,
        float("nan") if failed else state.objective,
        state.outer_iter,
        wall,
        np.asarray(ee, dtype=float),
        failed,
        state.covs,
        state.ris,
    )


def run_sweep(cfg: ExperimentConfig, threads: int = 1) -> list:
    """One row per (seed, sweep value), ordered by seed then sweep value.

    Failed trials are kept as rows with ``failed=True`` and a NaN objective.
    """
    tasks = [(int(s), float(v)) for s in cfg.seeds for v in cfg.sweep_values]
    cfg_dict = cfg.to_dict()
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = {t: pool.submit(_run_point, cfg_dict, *t) for t in tasks}
            rows = {t: f.result() for t, f in futures.items()}
    else:
        rows = {t: _run_point(cfg_dict, *t) for t in tasks}
    return [rows[t] for t in sorted(rows)]


def reevaluate(cfg: ExperimentConfig, row: ResultRow) -> float:
    """Objective of a row's stored solution recomputed from the rate model."""
    inst = build_baseline(cfg, row.seed, row.sweep_value)
    _, obj, _ = evaluate(inst.problem, row.covs, row.ris)
    return obj


def summarize(rows) -> dict:
    ok = [r for r in rows if not r.failed]
    points = []
    for v in sorted({r.sweep_value for r in ok}):
        vals = np.array([r.objective for r in ok if r.sweep_value == v])
        n = vals.size
        se = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        points.append({"sweep_value": v, "mean": float(vals.mean()), "stderr": se, "count": int(n)})
    first = rows[0]
    return {
        "scheme": first.scheme,
        "signaling": first.signaling,
        "ris_mode": first.ris_mode,
        "t_set": first.t_set,
        "sweep_name": first.sweep_name,
        "failed": len(rows) - len(ok),
        "points": points,
    }


def _atomic_write(path, write):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def emit_results(rows, out_dir) -> tuple:
    """Write ``results.csv`` and ``summary.json`` into ``out_dir``.

    Raises ``ValueError`` (and writes nothing) when ``rows`` is empty.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("no result rows to write")
    os.makedirs(out_dir, exist_ok=True)
    L, K = np.asarray(rows[0].ee).shape
    header = CSV_HEADER + [f"ee_l{l}_k{k}" for l in range(L) for k in range(K)]
    csv_path = os.path.join(out_dir, "results.csv")
    json_path = os.path.join(out_dir, "summary.json")

    def write_csv(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(r.csv_fields())

    summary = summarize(rows)
    _atomic_write(csv_path, write_csv)
    _atomic_write(json_path, lambda fh: json.dump(summary, fh, indent=2, sort_keys=True))
    return csv_path, json_path


def trace(cfg: ExperimentConfig, seed: int, sweep_value: float | None = None) -> list:
    """Per-half-step objective trace of one trial."""
    inst = build_baseline(cfg, seed, sweep_value)
    _, records = ao_loop(inst.problem, inst.state, cfg.solver)
    return records


def write_trace(records, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for r in records:
        w.writerow([
            r.outer_iter,
            r.half_step,
            repr(float(r.objective)),
            repr(float(r.epsilon)),
            int(r.accepted),
            int(r.projected),
            r.inner_iters,
            r.rejected,
        ])


__all__ = [
    "CSV_HEADER",
    "ConfigError",
    "ExperimentConfig",
    "Instance",
    "ResultRow",
    "TRACE_HEADER",
    "TraceRecord",
    "build_baseline",
    "emit_results",
    "reevaluate",
    "run_sweep",
    "summarize",
    "trace",
    "write_trace",
]
