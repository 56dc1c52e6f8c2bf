"""Cross-product sweeps over one config parameter and a list of seeds."""

from __future__ import annotations

import copy
import json
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..simulator import ConfigError, ExperimentConfig, MetricsSeries, pulling_stats, run
from .io import atomic_write, export_series

SWEEPABLE = ("ratio", "P", "eta0", "policy")


@dataclass
class SweepSpec:
    base: dict
    parameter: str
    values: list
    seeds: list = field(default_factory=lambda: [0])

    def __post_init__(self):
        if self.parameter not in SWEEPABLE:
            raise ConfigError(f"cannot sweep {self.parameter!r}; choose from {SWEEPABLE}")
        if not self.values or not self.seeds:
            raise ConfigError("a sweep needs at least one value and one seed")
        ExperimentConfig.from_dict(self.base)

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSpec":
        allowed = {"base", "parameter", "values", "seeds"}
        if not isinstance(d, dict) or set(d) - allowed:
            raise ConfigError(f"unknown key(s) in sweep spec: {sorted(set(d) - allowed)}")
        for k in ("base", "parameter", "values"):
            if k not in d:
                raise ConfigError(f"sweep spec is missing {k!r}")
        return cls(**d)

    def cells(self) -> list[tuple[str, object, int, ExperimentConfig]]:
        """``(cell name, value, seed, config)`` for every value x seed."""
        out = []
        for value in self.values:
            for seed in self.seeds:
                d = copy.deepcopy(self.base)
                d["seed"] = seed
                if self.parameter == "ratio":
                    d["policy"]["ratio"] = value
                elif self.parameter == "P":
                    d["P"] = value
                elif self.parameter == "eta0":
                    d.setdefault("eta_schedule", {"kind": "step_decay"})["eta0"] = value
                else:
                    d["policy"] = value if isinstance(value, dict) else {"kind": value}
                label = value["kind"] if isinstance(value, dict) else value
                name = f"{self.parameter}-{label}_seed-{seed}"
                out.append((name, value, seed, ExperimentConfig.from_dict(d)))
        return out


def plateau_sq_grad(series: MetricsSeries) -> float:
    """Mean squared gradient norm over the second half of the first constant-step phase."""
    first_eta = series.records[0].eta
    phase = [r for r in series.records if r.eta == first_eta]
    tail = phase[len(phase) // 2:] or phase
    return statistics.fmean(r.global_sq_grad_norm for r in tail)


def run_cells(cells, parallel: int = 1) -> list[MetricsSeries]:
    configs = [c[-1] for c in cells]
    if parallel > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(run, configs))
    return [run(c) for c in configs]


def write_cells(cells, results, out_dir: Optional[Path], fmt: str = "csv") -> list[Optional[str]]:
    paths = []
    for (name, _, _, cfg), series in zip(cells, results):
        if out_dir is None:
            paths.append(None)
            continue
        path, _ = export_series(series, Path(out_dir) / f"{name}.{fmt}", cfg.to_dict(), fmt)
        paths.append(str(path))
    return paths


def ratio_ordering(rows: list[dict]) -> bool:
    """Plateaus may not rise with the ratio by more than twice the seed spread."""
    ok = True
    for lo, hi in zip(rows, rows[1:]):
        tol = 2.0 * max(lo["plateau_std"], hi["plateau_std"])
        ok &= hi["plateau_mean"] <= lo["plateau_mean"] + tol
    return bool(ok)


def run_sweep(spec: SweepSpec, out_dir: Optional[Path] = None, parallel: int = 1,
              fmt: str = "csv") -> dict:
    cells = spec.cells()
    results = run_cells(cells, parallel)
    paths = write_cells(cells, results, out_dir, fmt)
    rows = []
    for (name, value, seed, cfg), series, path in zip(cells, results, paths):
        rows.append({
            "name": name,
            "value": value,
            "seed": seed,
            "path": path,
            "final_loss": series.records[-1].global_loss,
            "pulls_per_iteration": pulling_stats(series)[1],
            "plateau_sq_grad": plateau_sq_grad(series),
        })
    by_value = []
    for value in spec.values:
        plats = [r["plateau_sq_grad"] for r in rows if r["value"] == value]
        by_value.append({
            "value": value,
            "plateau_mean": statistics.fmean(plats),
            "plateau_std": statistics.stdev(plats) if len(plats) > 1 else 0.0,
        })
    summary = {"parameter": spec.parameter, "cells": rows, "by_value": by_value}
    if spec.parameter == "ratio":
        ordered = sorted(by_value, key=lambda r: r["value"])
        summary["ratio_ordering_holds"] = ratio_ordering(ordered)
    if out_dir is not None:
        atomic_write(Path(out_dir) / "summary.json", json.dumps(summary, indent=1, default=str) + "\n")
    return summary
