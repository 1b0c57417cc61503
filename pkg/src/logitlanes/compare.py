"""Cross-scheme comparison: relative L1 distances, mass drift and cost counters."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Sequence

import numpy as np

from .equilibrium import DEFAULT_SETTINGS, SolverSettings
from .model import GridState, project_to_grid
from .runner import run_scenario
from .scenario import Scenario, ScenarioError, normalize_scheme


@dataclass(frozen=True)
class SchemeConfig:
    """``cells`` doubles as the group size for the Lagrangian scheme."""

    scheme: str
    size: float | None = None
    cfl: float | None = None

    @property
    def label(self) -> str:
        parts = [self.scheme]
        if self.size is not None:
            parts.append(f"{self.size:g}")
        if self.cfl is not None:
            parts.append(f"{self.cfl:g}")
        return ":".join(parts)

    @classmethod
    def parse(cls, text: str) -> "SchemeConfig":
        """``scheme[:cells_or_group_size[:cfl]]``, e.g. ``rusanov:800:0.5``."""
        parts = text.split(":")
        if not 1 <= len(parts) <= 3:
            raise ScenarioError(f"bad scheme config {text!r}; expected scheme[:size[:cfl]]")
        try:
            size = float(parts[1]) if len(parts) > 1 and parts[1] else None
            cfl = float(parts[2]) if len(parts) > 2 and parts[2] else None
        except ValueError:
            raise ScenarioError(f"bad scheme config {text!r}: size and cfl must be numbers") from None
        return cls(normalize_scheme(parts[0]), size, cfl)


def relative_l1(a: GridState, b: GridState) -> np.ndarray:
    """Per-class ||a - b||_1 / ||b||_1 on the finer of the two meshes."""
    cells = max(a.cells, b.cells)
    ra = project_to_grid(a, cells).rho
    rb = project_to_grid(b, cells).rho
    num = np.abs(ra - rb).sum(axis=0)
    den = np.abs(rb).sum(axis=0)
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), num)


@dataclass
class ComparisonReport:
    classes: tuple[str, ...]
    labels: list[str]
    # (label_a, label_b) -> list of (t, {class: distance})
    distances: dict[tuple[str, str], list[tuple[float, dict[str, float]]]] = field(default_factory=dict)
    mass_drift: dict[str, dict[str, float]] = field(default_factory=dict)
    wall_clock: dict[str, float] = field(default_factory=dict)
    flux_evaluations: dict[str, int] = field(default_factory=dict)

    def final_distance(self, a: str, b: str) -> dict[str, float]:
        key = (a, b) if (a, b) in self.distances else (b, a)
        return self.distances[key][-1][1]

    def to_dict(self, include_timing: bool = True) -> dict:
        out = {
            "schemes": self.labels,
            "distances": [
                {"a": a, "b": b, "snapshots": [{"t": t, "relative_l1": dist} for t, dist in rows]}
                for (a, b), rows in self.distances.items()
            ],
            "mass_drift": self.mass_drift,
            "flux_evaluations": self.flux_evaluations,
        }
        if include_timing:
            out["wall_clock_s"] = self.wall_clock
        return out

    def write_csv(self, path: str | Path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scheme_a", "scheme_b", "t", "class", "relative_l1"])
            for (a, b), rows in self.distances.items():
                for t, dist in rows:
                    for d in self.classes:
                        w.writerow([a, b, repr(float(t)), d, repr(float(dist[d]))])


def _nearest(snapshots, t):
    return min(snapshots, key=lambda s: abs(s.t - t))


def compare(
    scenario: Scenario,
    configs: Sequence[SchemeConfig],
    duration: float | None = None,
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> tuple[ComparisonReport, dict]:
    """Run every config and compare all pairs at the first run's snapshot times.

    Lagrangian runs are binned onto the finest Euler mesh. Returns the report
    and the raw results keyed by label.
    """
    if len(configs) < 2:
        raise ScenarioError("compare needs at least two scheme configs")
    euler_cells = [int(c.size) for c in configs if c.scheme != "lagrange" and c.size is not None]
    finest = max(euler_cells + [scenario.run.cells])
    results = {}
    labels = []
    for c in configs:
        label = c.label
        if label in results:
            label = f"{label}#{len(labels)}"
        if c.scheme == "lagrange":
            res = run_scenario(
                scenario, "lagrange", cells=finest, cfl=c.cfl, group_size=c.size,
                duration=duration, output_cells=finest, settings=settings,
            )
        else:
            res = run_scenario(
                scenario, c.scheme, cells=int(c.size) if c.size else None, cfl=c.cfl,
                duration=duration, settings=settings,
            )
        results[label] = res
        labels.append(label)

    classes = scenario.network.classes
    report = ComparisonReport(classes, labels)
    times = [s.t for s in results[labels[0]].snapshots]
    for a, b in combinations(labels, 2):
        rows = []
        for t in times:
            dist = relative_l1(_nearest(results[a].snapshots, t).state, _nearest(results[b].snapshots, t).state)
            rows.append((t, {d: float(dist[k]) for k, d in enumerate(classes)}))
        report.distances[(a, b)] = rows
    for label, res in results.items():
        mass = {}
        for t, d, m in res.mass_audit:
            mass.setdefault(d, []).append(m)
        report.mass_drift[label] = {
            d: float(np.max(np.abs(np.array(ms) - ms[0])) / ms[0]) if ms[0] else 0.0 for d, ms in mass.items()
        }
        report.wall_clock[label] = res.wall_time
        report.flux_evaluations[label] = res.flux_evaluations
    return report, results
