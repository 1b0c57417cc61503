"""Delimited outputs: grid snapshots, mass audit, group trajectories."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .equilibrium import DEFAULT_SETTINGS, BatchSplit, SolverSettings, solve_batch
from .euler import Snapshot
from .lagrange import Groups
from .model import GridState, NetworkSpec


def snapshot_header(spec: NetworkSpec) -> list[str]:
    return (
        ["t", "x"]
        + [f"rho_{d}" for d in spec.classes]
        + [f"v_{d}" for d in spec.classes]
        + [f"rho_lane_{i}" for i in spec.lanes]
        + [f"v_lane_{i}" for i in spec.lanes]
    )


def snapshot_split(spec: NetworkSpec, state: GridState, settings: SolverSettings = DEFAULT_SETTINGS) -> BatchSplit:
    # schemes may leave round-off negatives; report on the clipped state
    return solve_batch(spec, np.maximum(state.rho, 0.0), settings)


def snapshot_rows(spec: NetworkSpec, t: float, state: GridState, split: BatchSplit) -> list[list[float]]:
    block = np.column_stack(
        [
            np.full(state.cells, t),
            state.centers,
            state.rho,
            split.class_speed,
            split.lane_density,
            split.lane_speed,
        ]
    )
    return block.tolist()


def _fmt(row: Iterable) -> list[str]:
    return [repr(float(v)) if isinstance(v, (float, np.floating)) else str(v) for v in row]


def write_snapshots_csv(
    path: str | Path,
    spec: NetworkSpec,
    snapshots: Sequence[Snapshot],
    splits: Sequence[BatchSplit] | None = None,
):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(snapshot_header(spec))
        for n, snap in enumerate(snapshots):
            split = splits[n] if splits is not None else snapshot_split(spec, snap.state)
            for row in snapshot_rows(spec, snap.t, snap.state, split):
                w.writerow(_fmt(row))


def write_mass_csv(path: str | Path, audit: Iterable[tuple[float, str, float]]):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "class", "total_mass"])
        for t, d, m in audit:
            w.writerow([repr(float(t)), d, repr(float(m))])


def write_groups_csv(path: str | Path, spec: NetworkSpec, snapshots: Sequence[tuple[float, Groups]]):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "group_id", "class", "x"] + [f"phi_{i}" for i in spec.lanes] + ["v"])
        for t, g in snapshots:
            order = np.argsort(g.ids, kind="stable")
            for n in order:
                speed = float(g.speed[n]) if g.speed is not None else float("nan")
                w.writerow(
                    [repr(float(t)), int(g.ids[n]), spec.classes[g.cls[n]], repr(float(g.x[n]))]
                    + [repr(float(p)) for p in g.phi[n]]
                    + [repr(speed)]
                )
