"""Benchmark specifications, learning-curve runs and sample-complexity tables."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Optional

import numpy as np

from .ars import ArsConfig, CurvePoint, TrainResult, train
from .augmented import compute_shaping
from .envs import CartPoleEnv, PointRobotEnv
from .lang import parse_spec
from .monitor import TaskMonitor, compile_spec

logger = logging.getLogger(__name__)

__all__ = [
    "Benchmark",
    "BenchmarkSuite",
    "BenchmarkRun",
    "SUITE",
    "NESTED_SEQUENCE",
    "CSV_HEADER",
    "run_benchmark",
    "write_curve_csv",
    "read_curve_csv",
    "samples_to_threshold",
    "sample_complexity_report",
    "ComplexityReport",
]

CSV_HEADER = ("samples", "satisfaction", "mean_shaped_reward", "iteration", "seed")
OBSTACLE = "avoid(4,6,4,6)"


@dataclass(frozen=True)
class Benchmark:
    name: str
    env_kind: str  # "point" or "cartpole"
    spec_text: str
    budget: int  # sample rollouts
    threshold: float  # satisfaction counted as success
    env_defaults: tuple = ()  # (name, value) pairs applied before caller overrides

    def make_env(self, **params):
        params = {**dict(self.env_defaults), **params}
        if self.env_kind == "point":
            return PointRobotEnv(**params)
        if self.env_kind == "cartpole":
            return CartPoleEnv(**params)
        raise ValueError(f"unknown environment kind {self.env_kind!r}")

    def build(self, **env_params):
        """``(env, spec, monitor)`` for this benchmark."""
        env = self.make_env(**env_params)
        spec = parse_spec(self.spec_text, env.predicates, filename=self.name)
        return env, spec, compile_spec(spec)


class BenchmarkSuite:
    def __init__(self, benchmarks: Iterable[Benchmark]):
        self._items = {b.name: b for b in benchmarks}

    def names(self) -> list[str]:
        return list(self._items)

    def __contains__(self, name) -> bool:
        return name in self._items

    def __iter__(self):
        return iter(self._items.values())

    def __getitem__(self, name: str) -> Benchmark:
        try:
            return self._items[name]
        except KeyError:
            raise KeyError(f"unknown benchmark {name!r}; available: {', '.join(self._items)}") from None


SUITE = BenchmarkSuite(
    [
        Benchmark("phi1", "point", f"achieve reach(5,10) ensuring {OBSTACLE}", 200_000, 0.9),
        Benchmark("phi2", "point", f"achieve reach(5,10) ensuring {OBSTACLE} and fuel_positive", 200_000, 0.9),
        Benchmark("phi3", "point", f"achieve (reach(5,10); reach(5,0)) ensuring {OBSTACLE}", 200_000, 0.9),
        Benchmark(
            "phi4",
            "point",
            f"(achieve reach(5,10) or achieve reach(10,0)); achieve reach(10,10) ensuring {OBSTACLE}",
            200_000,
            0.9,
        ),
        Benchmark("phi5", "point", f"achieve (reach(5,10); reach(5,0); reach(10,0)) ensuring {OBSTACLE}", 500_000, 0.8),
        Benchmark(
            "phi6", "point", f"achieve (reach(5,10); reach(5,0); reach(10,0); reach(10,10)) ensuring {OBSTACLE}",
            1_000_000, 0.8,
        ),
        Benchmark(
            "phi7",
            "point",
            f"achieve (reach(5,10); reach(5,0); reach(10,0); reach(10,10); reach(0,0)) ensuring {OBSTACLE}",
            1_000_000,
            0.8,
            # the five legs need at least 41 steps, so 40 cannot be satisfied
            env_defaults=(("horizon", 50),),
        ),
        Benchmark("cartpole", "cartpole", "achieve (reach(0.5); reach(0.0)) ensuring balance", 500_000, 0.9),
    ]
)

# benchmarks ordered by the number of nested sequencing operators
NESTED_SEQUENCE = ("phi1", "phi3", "phi5", "phi6", "phi7")


# ---------------------------------------------------------------------------
# Curves on disk


def write_curve_csv(curve: Iterable[CurvePoint], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for p in curve:
            writer.writerow([p.samples, repr(p.satisfaction), repr(p.mean_shaped_reward), p.iteration, p.seed])


def read_curve_csv(path) -> list[CurvePoint]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"{path}: expected header {','.join(CSV_HEADER)}")
        return [
            CurvePoint(int(r["samples"]), float(r["satisfaction"]), float(r["mean_shaped_reward"]),
                       int(r["iteration"]), int(r["seed"]))
            for r in reader
        ]


def curve_filename(name: str, mode: str, seed: int) -> str:
    return f"{name}-{mode}-seed{seed}.csv"


# ---------------------------------------------------------------------------
# Runs


@dataclass
class BenchmarkRun:
    benchmark: Benchmark
    mode: str
    seed: int
    result: TrainResult
    csv_path: Optional[Path] = None

    @property
    def curve(self) -> list[CurvePoint]:
        return self.result.curve

    @property
    def final_satisfaction(self) -> float:
        return self.curve[-1].satisfaction if self.curve else float("nan")

    def best_satisfaction(self) -> float:
        return max((p.satisfaction for p in self.curve), default=float("nan"))


def run_benchmark(
    name: str,
    cfg: Optional[ArsConfig] = None,
    seed: Optional[int] = None,
    mode: str = "shaped",
    budget: Optional[int] = None,
    out_dir=None,
    env_params: Optional[dict] = None,
    shaping_overrides: Optional[dict] = None,
    stop_at_threshold: bool = False,
    suite: BenchmarkSuite = SUITE,
) -> BenchmarkRun:
    """Train on a named benchmark and optionally write its curve CSV.

    The iteration count is derived from the sample budget (the benchmark's
    own unless ``budget`` is given).  With ``stop_at_threshold`` training
    ends as soon as an evaluation reaches the benchmark's threshold.
    """
    bench = suite[name]
    cfg = cfg or ArsConfig()
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    budget = bench.budget if budget is None else budget
    cfg = replace(cfg, iterations=budget // cfg.samples_per_iteration)
    if stop_at_threshold:
        cfg = replace(cfg, target=bench.threshold)
    env, spec, monitor = bench.build(**(env_params or {}))
    shaping = compute_shaping(monitor, env, **(shaping_overrides or {}))
    result = train(env, monitor, shaping, cfg, mode, spec=spec)
    run = BenchmarkRun(bench, mode, cfg.seed, result)
    if out_dir is not None:
        run.csv_path = Path(out_dir) / curve_filename(name, mode, cfg.seed)
        write_curve_csv(result.curve, run.csv_path)
    logger.info("%s/%s seed %d: final satisfaction %.3f", name, mode, cfg.seed, run.final_satisfaction)
    return run


# ---------------------------------------------------------------------------
# Sample complexity


def samples_to_threshold(curve: Iterable[CurvePoint], tau: float) -> Optional[int]:
    """Samples at the first curve point with satisfaction >= tau, or None."""
    for p in curve:
        if p.satisfaction >= tau:
            return p.samples
    return None


@dataclass
class ComplexityReport:
    thresholds: list[float]
    trimmed: bool
    # table[name][tau] = (mean samples over uncensored runs or None, n_censored, n_runs)
    table: dict = field(default_factory=dict)

    def format(self) -> str:
        head = ["spec"] + [f"tau={t:g}" for t in self.thresholds]
        lines = ["\t".join(head)]
        for name, row in self.table.items():
            cells = [name]
            for t in self.thresholds:
                mean, censored, runs = row[t]
                cell = "censored" if mean is None else f"{mean:.0f}"
                if censored and mean is not None:
                    cell += f" ({censored}/{runs} censored)"
                cells.append(cell)
            lines.append("\t".join(cells))
        lines.append("aggregation: " + ("best and worst run dropped" if self.trimmed else "all runs"))
        return "\n".join(lines)


def _aggregate(values: list[Optional[int]], trimmed: bool):
    runs = len(values)
    ordered = sorted(values, key=lambda x: math.inf if x is None else x)
    if trimmed and len(ordered) >= 3:
        ordered = ordered[1:-1]
    reached = [x for x in ordered if x is not None]
    censored = len(ordered) - len(reached)
    mean = float(np.mean(reached)) if reached else None
    return mean, censored, len(ordered) if trimmed else runs


def sample_complexity_report(
    thresholds: Iterable[float],
    seeds: Iterable[int] = (0, 1, 2),
    names: Iterable[str] = NESTED_SEQUENCE,
    curves: Optional[dict] = None,
    cfg: Optional[ArsConfig] = None,
    trimmed: bool = False,
    runner: Callable = run_benchmark,
) -> ComplexityReport:
    """Samples needed to reach each satisfaction threshold, averaged over seeds.

    ``curves`` maps ``(name, seed)`` to a learning curve; missing entries
    are produced by training.  Runs that never reach a threshold are
    censored: they are left out of the mean and counted separately.
    """
    thresholds = [float(t) for t in thresholds]
    for t in thresholds:
        if not 0.0 < t < 1.0:
            raise ValueError(f"thresholds must lie in (0, 1), got {t}")
    curves = dict(curves or {})
    seeds = list(seeds)
    report = ComplexityReport(thresholds, trimmed)
    for name in names:
        per_seed = []
        for seed in seeds:
            if (name, seed) not in curves:
                curves[(name, seed)] = runner(name, cfg=cfg, seed=seed).curve
            per_seed.append(curves[(name, seed)])
        report.table[name] = {t: _aggregate([samples_to_threshold(c, t) for c in per_seed], trimmed) for t in thresholds}
    return report


def default_out_dir() -> Path:
    return Path(os.environ.get("SPECLEARN_OUT", "runs"))
