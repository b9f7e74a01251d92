"""Benchmark suites: seeded episode grids, metric rows, aggregation, CSV/JSON.

A suite is a pure function of (scene files, methods, seeds): per-run RNG
streams derive from (scene seed, run seed), so reruns reproduce every result
column exactly.  Wall-clock columns come from an injectable clock; pass a
constant clock to make whole files byte-reproducible.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidInputError, SceneError
from .planner import METHODS, run_episode
from .scenes import Scene, load_scene

METRICS_HEADER = [
    "scene", "method", "seed", "success", "execution_error_rad",
    "training_ms", "planning_ms", "min_clearance_m",
]
SUMMARY_HEADER = [
    "scene", "method", "runs", "success_rate", "execution_error_mean_rad",
    "execution_error_std_rad", "training_ms_mean", "planning_ms_mean",
    "min_clearance_mean_m",
]


@dataclass(frozen=True)
class BenchmarkSuite:
    scenes: Tuple[str, ...]            # scene file paths
    methods: Tuple[str, ...]
    seeds: Tuple[int, ...]
    metrics_out: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "scenes", tuple(str(s) for s in self.scenes))
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.scenes or not self.seeds:
            raise InvalidInputError("suite needs at least one scene and one seed")
        for m in self.methods:
            if m not in METHODS:
                raise InvalidInputError(f"unknown method {m!r}; choose from {METHODS}")


@dataclass(frozen=True)
class MetricsRow:
    scene: str
    method: str
    seed: int
    success: bool
    execution_error: float
    training_ms: float
    planning_ms: float
    min_clearance: float

    def __post_init__(self):
        if self.training_ms < 0 or self.planning_ms < 0:
            raise InvalidInputError("times must be non-negative")
        if not np.isfinite(self.min_clearance):
            raise InvalidInputError("clearance must be finite")


def load_suite(path) -> BenchmarkSuite:
    path = Path(path)
    if not path.exists():
        raise SceneError(f"{path}: suite file not found")
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SceneError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    base = path.parent
    try:
        scenes = tuple(str((base / s)) if not Path(s).is_absolute() else s
                       for s in cfg["scenes"])
        return BenchmarkSuite(
            scenes=scenes,
            methods=tuple(cfg.get("methods", ["dk_rrt", "reactive"])),
            seeds=tuple(cfg["seeds"]) if isinstance(cfg.get("seeds"), list)
            else tuple(range(int(cfg.get("seeds", 10)))),
            metrics_out=cfg.get("metrics_out"),
        )
    except KeyError as exc:
        raise SceneError(f"{path}: missing suite key {exc}") from exc


def run_suite(
    suite: BenchmarkSuite,
    clock: Callable[[], float] = time.perf_counter,
    progress: Optional[Callable[[str], None]] = None,
) -> List[MetricsRow]:
    """One row per (scene, method, seed), in deterministic order."""
    scenes = [load_scene(p) for p in suite.scenes]
    rows: List[MetricsRow] = []
    for scene in scenes:
        for method in suite.methods:
            for seed in suite.seeds:
                report = run_episode(scene, method, seed=seed, clock=clock)
                rows.append(MetricsRow(
                    scene=scene.name, method=method, seed=seed,
                    success=report.success,
                    execution_error=report.execution_error,
                    training_ms=report.training_ms,
                    planning_ms=report.planning_ms,
                    min_clearance=report.min_clearance,
                ))
                if progress is not None:
                    progress(f"{scene.name}/{method}/seed={seed}: "
                             f"{'ok' if report.success else 'fail'}")
    return rows


def aggregate(rows: Sequence[MetricsRow]) -> List[dict]:
    """Per (scene, method): success rate, error mean/std, mean times."""
    if not rows:
        raise InvalidInputError("nothing to aggregate")
    groups: Dict[Tuple[str, str], List[MetricsRow]] = {}
    order: List[Tuple[str, str]] = []
    for r in rows:
        key = (r.scene, r.method)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(r)
    out = []
    for key in order:
        g = groups[key]
        errs = np.array([r.execution_error for r in g])
        out.append({
            "scene": key[0],
            "method": key[1],
            "runs": len(g),
            "success_rate": float(np.mean([r.success for r in g])),
            "execution_error_mean_rad": float(errs.mean()),
            "execution_error_std_rad": float(errs.std()),
            "training_ms_mean": float(np.mean([r.training_ms for r in g])),
            "planning_ms_mean": float(np.mean([r.planning_ms for r in g])),
            "min_clearance_mean_m": float(np.mean([r.min_clearance for r in g])),
        })
    return out


def write_metrics_csv(rows: Sequence[MetricsRow], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_HEADER)
        for r in rows:
            w.writerow([
                r.scene, r.method, r.seed, int(r.success),
                f"{r.execution_error:.9f}", f"{r.training_ms:.3f}",
                f"{r.planning_ms:.3f}", f"{r.min_clearance:.6f}",
            ])


def write_summary(summary: Sequence[dict], csv_path, json_path):
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_HEADER)
        for s in summary:
            w.writerow([
                s["scene"], s["method"], s["runs"],
                f"{s['success_rate']:.4f}",
                f"{s['execution_error_mean_rad']:.9f}",
                f"{s['execution_error_std_rad']:.9f}",
                f"{s['training_ms_mean']:.3f}",
                f"{s['planning_ms_mean']:.3f}",
                f"{s['min_clearance_mean_m']:.6f}",
            ])
    with open(json_path, "w") as fh:
        json.dump(list(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
