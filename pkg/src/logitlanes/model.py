"""Domain types: fundamental diagrams, lane/class network, densities and the ring grid.

Units are km, hours, veh/km and km/h throughout.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np


class ValidationError(ValueError):
    """A value violates a type invariant."""


class DiagramKind(str, enum.Enum):
    GREENSHIELDS = "greenshields"
    TRIANGULAR = "triangular"


@dataclass(frozen=True)
class FundamentalDiagram:
    """Speed-density law V(rho) of one lane.

    Densities outside ``[0, jam_density]`` are clamped, so the speed never
    leaves ``[0, free_speed]``.
    """

    kind: DiagramKind
    free_speed: float
    jam_density: float
    critical_density: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", DiagramKind(self.kind))
        if not (self.free_speed > 0 and math.isfinite(self.free_speed)):
            raise ValidationError(f"free_speed must be positive, got {self.free_speed}")
        if not (self.jam_density > 0 and math.isfinite(self.jam_density)):
            raise ValidationError(f"jam_density must be positive, got {self.jam_density}")
        if self.kind is DiagramKind.TRIANGULAR:
            c = self.critical_density
            if c is None or not (0 < c < self.jam_density):
                raise ValidationError(
                    f"triangular diagram needs 0 < critical_density < jam_density, got {c}"
                )

    @classmethod
    def greenshields(cls, free_speed: float, jam_density: float) -> "FundamentalDiagram":
        return cls(DiagramKind.GREENSHIELDS, float(free_speed), float(jam_density))

    @classmethod
    def triangular(
        cls, free_speed: float, jam_density: float, critical_density: float
    ) -> "FundamentalDiagram":
        return cls(
            DiagramKind.TRIANGULAR, float(free_speed), float(jam_density), float(critical_density)
        )

    def speed(self, rho):
        r = np.clip(rho, 0.0, self.jam_density)
        vf, jam = self.free_speed, self.jam_density
        if self.kind is DiagramKind.GREENSHIELDS:
            return vf * (1.0 - r / jam)
        c = self.critical_density
        with np.errstate(divide="ignore", invalid="ignore"):
            cong = vf * c * (jam - r) / (np.maximum(r, c) * (jam - c))
        return np.where(r <= c, vf, cong)

    def speed_derivative(self, rho):
        """dV/drho; zero on the clamped regions."""
        rho = np.asarray(rho, dtype=float)
        inside = (rho >= 0.0) & (rho <= self.jam_density)
        vf, jam = self.free_speed, self.jam_density
        if self.kind is DiagramKind.GREENSHIELDS:
            d = np.full_like(rho, -vf / jam)
        else:
            c = self.critical_density
            r = np.maximum(rho, c)
            d = np.where(rho <= c, 0.0, -vf * c * jam / (r * r * (jam - c)))
        return np.where(inside, d, 0.0)

    def speed_integral(self, rho):
        """Integral of V from 0 to rho (clamped like ``speed``)."""
        r = np.clip(np.asarray(rho, dtype=float), 0.0, self.jam_density)
        vf, jam = self.free_speed, self.jam_density
        if self.kind is DiagramKind.GREENSHIELDS:
            return vf * (r - r * r / (2.0 * jam))
        c = self.critical_density
        rc = np.maximum(r, c)
        cong = vf * c + vf * c / (jam - c) * (jam * np.log(rc / c) - (rc - c))
        return np.where(r <= c, vf * r, cong)

    def to_dict(self) -> dict:
        out = {"kind": self.kind.value, "free_speed": self.free_speed, "jam_density": self.jam_density}
        if self.kind is DiagramKind.TRIANGULAR:
            out["critical_density"] = self.critical_density
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "FundamentalDiagram":
        return cls(
            DiagramKind(str(data["kind"]).lower()),
            float(data["free_speed"]),
            float(data["jam_density"]),
            None if data.get("critical_density") is None else float(data["critical_density"]),
        )


def eval_diagram(fd: FundamentalDiagram, rho: float) -> float:
    return float(fd.speed(rho))


def total_density(cd: Mapping[str, float]) -> float:
    return float(sum(cd.values()))


@dataclass(frozen=True)
class NetworkSpec:
    """Lanes, destination classes, accessibility, preferences and Logit sensitivity.

    ``theta`` is keyed by ``(lane, class)`` and only meaningful for accessible
    pairs; missing accessible entries default to 0.
    """

    lanes: tuple[str, ...]
    classes: tuple[str, ...]
    accessible: Mapping[str, tuple[str, ...]]
    diagrams: Mapping[str, FundamentalDiagram]
    nu: float
    theta: Mapping[tuple[str, str], float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "lanes", tuple(str(i) for i in self.lanes))
        object.__setattr__(self, "classes", tuple(str(d) for d in self.classes))
        if not self.lanes:
            raise ValidationError("network.lanes: at least one lane required")
        if not self.classes:
            raise ValidationError("network.classes: at least one class required")
        if len(set(self.lanes)) != len(self.lanes) or len(set(self.classes)) != len(self.classes):
            raise ValidationError("network: duplicate lane or class identifier")
        acc = {}
        for d in self.classes:
            lanes = tuple(str(i) for i in self.accessible.get(d, ()))
            if not lanes:
                raise ValidationError(f"network.accessible[{d!r}]: class has no accessible lane")
            unknown = [i for i in lanes if i not in self.lanes]
            if unknown:
                raise ValidationError(f"network.accessible[{d!r}]: unknown lanes {unknown}")
            acc[d] = lanes
        object.__setattr__(self, "accessible", acc)
        missing = [i for i in self.lanes if i not in self.diagrams]
        if missing:
            raise ValidationError(f"network.diagrams: missing diagram for lanes {missing}")
        if not (isinstance(self.nu, (int, float)) and math.isfinite(self.nu) and self.nu > 0):
            raise ValidationError(f"network.nu must be finite and > 0, got {self.nu}")
        theta = {}
        for (i, d), val in self.theta.items():
            i, d = str(i), str(d)
            if d not in acc or i not in acc[d]:
                raise ValidationError(f"network.theta[{d!r}][{i!r}]: lane not accessible to class")
            if not math.isfinite(val):
                raise ValidationError(f"network.theta[{d!r}][{i!r}]: must be finite")
            theta[(i, d)] = float(val)
        object.__setattr__(self, "theta", theta)

    # array views used by the vectorised solvers; shapes are (lanes, classes)
    @cached_property
    def mask(self) -> np.ndarray:
        m = np.zeros((len(self.lanes), len(self.classes)), dtype=bool)
        for k, d in enumerate(self.classes):
            for i in self.accessible[d]:
                m[self.lanes.index(i), k] = True
        m.flags.writeable = False
        return m

    @cached_property
    def theta_array(self) -> np.ndarray:
        t = np.zeros((len(self.lanes), len(self.classes)))
        for (i, d), val in self.theta.items():
            t[self.lanes.index(i), self.classes.index(d)] = val
        t.flags.writeable = False
        return t

    @cached_property
    def _diagram_list(self) -> list[FundamentalDiagram]:
        return [self.diagrams[i] for i in self.lanes]

    @cached_property
    def free_speeds(self) -> np.ndarray:
        return np.array([fd.free_speed for fd in self._diagram_list])

    @cached_property
    def jam_densities(self) -> np.ndarray:
        return np.array([fd.jam_density for fd in self._diagram_list])

    @property
    def max_free_speed(self) -> float:
        return float(self.free_speeds.max())

    def with_nu(self, nu: float) -> "NetworkSpec":
        return replace(self, nu=float(nu))

    def classes_on_lane(self, lane: str) -> tuple[str, ...]:
        return tuple(d for d in self.classes if lane in self.accessible[d])

    def lane_speeds(self, lane_rho: np.ndarray) -> np.ndarray:
        """Vectorised V_i over the last axis (one column per lane)."""
        lane_rho = np.asarray(lane_rho, dtype=float)
        out = np.empty_like(lane_rho)
        for k, fd in enumerate(self._diagram_list):
            out[..., k] = fd.speed(lane_rho[..., k])
        return out

    def lane_speed_derivatives(self, lane_rho: np.ndarray) -> np.ndarray:
        lane_rho = np.asarray(lane_rho, dtype=float)
        out = np.empty_like(lane_rho)
        for k, fd in enumerate(self._diagram_list):
            out[..., k] = fd.speed_derivative(lane_rho[..., k])
        return out

    def lane_speed_integrals(self, lane_rho: np.ndarray) -> np.ndarray:
        lane_rho = np.asarray(lane_rho, dtype=float)
        out = np.empty_like(lane_rho)
        for k, fd in enumerate(self._diagram_list):
            out[..., k] = fd.speed_integral(lane_rho[..., k])
        return out

    def to_dict(self) -> dict:
        return {
            "lanes": list(self.lanes),
            "classes": list(self.classes),
            "accessible": {d: list(self.accessible[d]) for d in self.classes},
            "theta": {
                d: {i: self.theta.get((i, d), 0.0) for i in self.accessible[d]} for d in self.classes
            },
            "nu": self.nu,
            "diagrams": {i: self.diagrams[i].to_dict() for i in self.lanes},
        }


def densities_vector(spec: NetworkSpec, cd: Mapping[str, float]) -> np.ndarray:
    """Class-density mapping -> array ordered like ``spec.classes``."""
    unknown = set(map(str, cd)) - set(spec.classes)
    if unknown:
        raise ValidationError(f"unknown classes {sorted(unknown)}")
    vec = np.array([float(cd.get(d, 0.0)) for d in spec.classes])
    if not np.all(np.isfinite(vec)) or np.any(vec < 0):
        raise ValidationError(f"class densities must be finite and >= 0, got {dict(cd)}")
    return vec


@dataclass(frozen=True)
class GridState:
    """Cell-averaged class densities on a ring; ``rho`` has shape (cells, classes)."""

    ring_length: float
    rho: np.ndarray

    def __post_init__(self):
        rho = np.array(self.rho, dtype=float)
        if rho.ndim != 2:
            raise ValidationError("grid densities must be a (cells, classes) array")
        if rho.shape[0] < 3:
            raise ValidationError(f"grid needs at least 3 cells, got {rho.shape[0]}")
        if not np.all(np.isfinite(rho)):
            raise ValidationError("grid densities must be finite")
        if not (self.ring_length > 0):
            raise ValidationError(f"ring_length must be > 0, got {self.ring_length}")
        rho.flags.writeable = False
        object.__setattr__(self, "rho", rho)

    @property
    def cells(self) -> int:
        return self.rho.shape[0]

    @property
    def dx(self) -> float:
        return self.ring_length / self.cells

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.cells) + 0.5) * self.dx

    def class_mass(self) -> np.ndarray:
        return self.rho.sum(axis=0) * self.dx

    def cell(self, spec: NetworkSpec, k: int) -> dict[str, float]:
        return {d: float(self.rho[k % self.cells, j]) for j, d in enumerate(spec.classes)}


@dataclass(frozen=True)
class Segment:
    """Constant class densities on ``[start, end)``."""

    start: float
    end: float
    rho: Mapping[str, float]


def grid_from_segments(
    spec: NetworkSpec, ring_length: float, segments: Sequence[Segment], cells: int
) -> GridState:
    """Exact cell averages of piecewise-constant data (zero outside the segments)."""
    edges = np.linspace(0.0, ring_length, cells + 1)
    rho = np.zeros((cells, len(spec.classes)))
    for seg in segments:
        vec = densities_vector(spec, seg.rho)
        overlap = np.clip(
            np.minimum(seg.end, edges[1:]) - np.maximum(seg.start, edges[:-1]), 0.0, None
        )
        rho += overlap[:, None] * vec[None, :]
    return GridState(ring_length, rho / np.diff(edges)[:, None])


def project_to_grid(state: GridState, cells: int) -> GridState:
    """Conservative overlap projection of a piecewise-constant field onto another uniform mesh."""
    if cells == state.cells:
        return state
    L = state.ring_length
    src = np.linspace(0.0, L, state.cells + 1)
    dst = np.linspace(0.0, L, cells + 1)
    # mass below each destination edge from the cumulative source mass (piecewise linear)
    cum = np.concatenate([np.zeros((1, state.rho.shape[1])), np.cumsum(state.rho * np.diff(src)[:, None], axis=0)])
    cum_dst = np.stack([np.interp(dst, src, cum[:, k]) for k in range(cum.shape[1])], axis=1)
    return GridState(L, np.diff(cum_dst, axis=0) / np.diff(dst)[:, None])
