"""Scenario files: network, piecewise-constant initial data and run parameters.

Schema (JSON, units km / h / veh/km / km/h)::

    {
      "network": {
        "lanes": ["1", "2"],
        "classes": ["1", "2"],
        "accessible": {"1": ["1"], "2": ["1", "2"]},
        "theta": {"2": {"1": 0.0, "2": 0.0}},
        "nu": 12.5,
        "diagrams": {"1": {"kind": "greenshields", "free_speed": 100, "jam_density": 200}, ...}
      },
      "initial": {
        "ring_length": 10.0,
        "segments": [{"start": 0.0, "end": 5.0, "rho": {"1": 10, "2": 5}}, ...]
      },
      "run": {"scheme": "remap", "cells": 400, "cfl": 0.25, "group_size": 5,
              "duration": 0.0333333, "snapshot_every": 0.0333333}
    }
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Any

from .model import FundamentalDiagram, GridState, NetworkSpec, Segment, ValidationError, grid_from_segments

SCHEMES = ("lax_friedrichs", "rusanov", "remap", "lagrange")
_ALIASES = {
    "lax-friedrichs": "lax_friedrichs",
    "laxfriedrichs": "lax_friedrichs",
    "lf": "lax_friedrichs",
    "euler-lagrange-remap": "remap",
    "euler_lagrange_remap": "remap",
    "eulerlagrangeremap": "remap",
}


class ScenarioError(ValueError):
    pass


def normalize_scheme(name: str) -> str:
    key = str(name).strip().lower()
    key = _ALIASES.get(key, key)
    if key not in SCHEMES:
        raise ScenarioError(f"unknown scheme {name!r}; valid schemes: {', '.join(SCHEMES)}")
    return key


@dataclass(frozen=True)
class RunParams:
    scheme: str = "remap"
    cells: int = 400
    cfl: float = 0.25
    duration: float = 2.0 / 60.0
    snapshot_every: float | None = None
    group_size: float = 5.0

    def __post_init__(self):
        object.__setattr__(self, "scheme", normalize_scheme(self.scheme))
        if int(self.cells) != self.cells or self.cells < 3:
            raise ScenarioError(f"run.cells must be an integer >= 3, got {self.cells}")
        if not (0 < self.cfl <= 1):
            raise ScenarioError(f"run.cfl must be in (0, 1], got {self.cfl}")
        if not (self.duration >= 0 and math.isfinite(self.duration)):
            raise ScenarioError(f"run.duration must be >= 0, got {self.duration}")
        if self.snapshot_every is not None and not self.snapshot_every > 0:
            raise ScenarioError(f"run.snapshot_every must be > 0, got {self.snapshot_every}")
        if not self.group_size > 0:
            raise ScenarioError(f"run.group_size must be > 0, got {self.group_size}")

    def to_dict(self) -> dict:
        out = {
            "scheme": self.scheme,
            "cells": self.cells,
            "cfl": self.cfl,
            "duration": self.duration,
            "group_size": self.group_size,
        }
        if self.snapshot_every is not None:
            out["snapshot_every"] = self.snapshot_every
        return out


@dataclass(frozen=True)
class Scenario:
    network: NetworkSpec
    ring_length: float
    segments: tuple[Segment, ...]
    run: RunParams

    def grid(self, cells: int | None = None) -> GridState:
        return grid_from_segments(self.network, self.ring_length, self.segments, cells or self.run.cells)

    def with_run(self, **changes) -> "Scenario":
        return replace(self, run=replace(self.run, **changes))

    def to_dict(self) -> dict:
        return {
            "network": self.network.to_dict(),
            "initial": {
                "ring_length": self.ring_length,
                "segments": [
                    {"start": s.start, "end": s.end, "rho": dict(s.rho)} for s in self.segments
                ],
            },
            "run": self.run.to_dict(),
        }


def _require(data: dict, key: str, where: str) -> Any:
    if not isinstance(data, dict) or key not in data:
        raise ScenarioError(f"{where}: missing key {key!r}")
    return data[key]


def _as_float(value, where: str) -> float:
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ScenarioError(f"{where}: expected a number, got {value!r}") from None
    if not math.isfinite(out):
        raise ScenarioError(f"{where}: expected a finite number, got {value!r}")
    return out


def parse_network(net: dict) -> NetworkSpec:
    """Build a NetworkSpec from its JSON object; errors name the offending key."""
    if not isinstance(net, dict):
        raise ScenarioError("network: expected an object")
    lanes = [str(i) for i in _require(net, "lanes", "network")]
    classes = [str(d) for d in _require(net, "classes", "network")]
    accessible = {str(d): tuple(map(str, v)) for d, v in _require(net, "accessible", "network").items()}
    for d in classes:
        if not accessible.get(d):
            raise ScenarioError(f"network.accessible[{d!r}]: class has no accessible lane")
    diagrams = {}
    for i, spec in _require(net, "diagrams", "network").items():
        try:
            diagrams[str(i)] = FundamentalDiagram.from_dict(spec)
        except (KeyError, ValueError) as exc:
            raise ScenarioError(f"network.diagrams[{i!r}]: {exc}") from None
    theta = {}
    for d, row in net.get("theta", {}).items():
        for i, val in row.items():
            theta[(str(i), str(d))] = _as_float(val, f"network.theta[{d!r}][{i!r}]")
    nu = _as_float(_require(net, "nu", "network"), "network.nu")
    if nu <= 0:
        raise ScenarioError(f"network.nu: must be > 0, got {nu}")
    try:
        network = NetworkSpec(tuple(lanes), tuple(classes), accessible, diagrams, nu, theta)
    except ValidationError as exc:
        raise ScenarioError(str(exc)) from None
    return network


def parse_scenario(data: dict) -> Scenario:
    network = parse_network(_require(data, "network", "scenario"))
    classes = network.classes
    init = _require(data, "initial", "scenario")
    L = _as_float(_require(init, "ring_length", "initial"), "initial.ring_length")
    if L <= 0:
        raise ScenarioError(f"initial.ring_length: must be > 0, got {L}")
    segments = []
    for k, seg in enumerate(_require(init, "segments", "initial")):
        where = f"initial.segments[{k}]"
        a = _as_float(_require(seg, "start", where), f"{where}.start")
        b = _as_float(_require(seg, "end", where), f"{where}.end")
        if not (0 <= a < b <= L):
            raise ScenarioError(f"{where}: need 0 <= start < end <= ring_length, got [{a}, {b}]")
        rho = {}
        for d, val in _require(seg, "rho", where).items():
            if str(d) not in classes:
                raise ScenarioError(f"{where}.rho: unknown class {d!r}")
            r = _as_float(val, f"{where}.rho[{d!r}]")
            if r < 0:
                raise ScenarioError(f"{where}.rho[{d!r}]: density must be >= 0")
            rho[str(d)] = r
        segments.append(Segment(a, b, rho))
    ordered = sorted(segments, key=lambda s: s.start)
    for s, t in zip(ordered, ordered[1:]):
        if t.start < s.end:
            raise ScenarioError(f"initial.segments: [{s.start}, {s.end}) overlaps [{t.start}, {t.end})")

    run_data = data.get("run", {})
    try:
        run = RunParams(
            scheme=run_data.get("scheme", "remap"),
            cells=int(run_data.get("cells", 400)),
            cfl=_as_float(run_data.get("cfl", 0.25), "run.cfl"),
            duration=_as_float(run_data.get("duration", 2.0 / 60.0), "run.duration"),
            snapshot_every=(
                None
                if run_data.get("snapshot_every") is None
                else _as_float(run_data["snapshot_every"], "run.snapshot_every")
            ),
            group_size=_as_float(run_data.get("group_size", 5.0), "run.group_size"),
        )
    except ScenarioError as exc:
        raise ScenarioError(str(exc)) from None
    return Scenario(network, L, tuple(segments), run)


def _read_json(path: Path):
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc.strerror}") from None


def load_scenario(path: str | Path) -> Scenario:
    return parse_scenario(_read_json(Path(path)))


def load_network(path: str | Path) -> NetworkSpec:
    """Accepts a scenario file or a bare network object."""
    data = _read_json(Path(path))
    if isinstance(data, dict) and "network" in data:
        return parse_network(data["network"])
    return parse_network(data)


def dump_scenario(scenario: Scenario) -> str:
    return json.dumps(scenario.to_dict(), indent=2)


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("logitlanes") / "data" / name))


def riemann_scenario() -> Scenario:
    return load_scenario(bundled_path("riemann.json"))
