"""Vehicle-group (Lagrangian) integrator.

Each group carries a fixed number of vehicles of one class. Per step the
lane split of every group is solved against its lane headways, the group
moves at the split-weighted lane speed, and the ring order is restored.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .equilibrium import DEFAULT_SETTINGS, EvalCounter, SolverSettings
from .euler import SchemeError, Snapshot, snapshot_steps, time_grid
from .model import GridState, NetworkSpec, ValidationError

PHI_MIN = 1e-6


@dataclass(frozen=True)
class VehicleGroup:
    cls: str
    size: float
    position: float
    phi: Mapping[str, float]


@dataclass(frozen=True)
class Groups:
    """All groups on the ring, sorted by position (ties keep previous order).

    ``cls`` holds class indices into ``spec.classes``; ``phi`` is (groups, lanes).
    """

    ring_length: float
    ids: np.ndarray
    cls: np.ndarray
    size: np.ndarray
    x: np.ndarray
    phi: np.ndarray
    speed: np.ndarray | None = None

    def __len__(self):
        return len(self.x)

    def group(self, spec: NetworkSpec, n: int) -> VehicleGroup:
        d = spec.classes[self.cls[n]]
        return VehicleGroup(
            d,
            float(self.size[n]),
            float(self.x[n]),
            {i: float(self.phi[n, spec.lanes.index(i)]) for i in spec.accessible[d]},
        )

    def class_totals(self, n_classes: int) -> np.ndarray:
        return np.bincount(self.cls, weights=self.size, minlength=n_classes)


def make_groups(spec: NetworkSpec, ring_length: float, groups: list[VehicleGroup]) -> Groups:
    """Build a sorted ``Groups`` from explicit groups, validating the simplex invariant."""
    n_lanes = len(spec.lanes)
    cls = np.array([spec.classes.index(str(g.cls)) for g in groups], dtype=int)
    size = np.array([g.size for g in groups], dtype=float)
    x = np.array([g.position for g in groups], dtype=float)
    phi = np.zeros((len(groups), n_lanes))
    for n, g in enumerate(groups):
        for i, val in g.phi.items():
            if str(i) not in spec.accessible[spec.classes[cls[n]]]:
                raise ValidationError(f"group {n}: lane {i!r} not accessible to class {g.cls!r}")
            phi[n, spec.lanes.index(str(i))] = val
    if np.any(size <= 0):
        raise ValidationError("group sizes must be > 0")
    if np.any((x < 0) | (x >= ring_length)):
        raise ValidationError("group positions must lie in [0, ring_length)")
    if np.any(phi < 0) or np.any(np.abs(phi.sum(axis=1) - 1.0) > 1e-9):
        raise ValidationError("split coefficients must be >= 0 and sum to 1")
    order = np.argsort(x, kind="stable")
    return Groups(ring_length, np.arange(len(groups))[order], cls[order], size[order], x[order], phi[order])


def groups_from_grid(spec: NetworkSpec, state: GridState, group_size: float = 5.0) -> Groups:
    """Walk the ring accumulating each class's mass, emitting a group every ``group_size`` vehicles.

    A group sits at the point where its first vehicle is accumulated (its
    rear); a final remainder smaller than ``group_size`` forms its own group.
    """
    L = state.ring_length
    edges = np.linspace(0.0, L, state.cells + 1)
    ids, cls, size, xs = [], [], [], []
    for k in range(len(spec.classes)):
        rho = state.rho[:, k]
        cum = np.concatenate([[0.0], np.cumsum(rho * state.dx)])
        total = cum[-1]
        if total <= 0:
            continue
        count = max(1, math.ceil(total / group_size - 1e-9))
        targets = np.arange(count) * group_size
        j = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, state.cells - 1)
        x = edges[j] + (targets - cum[j]) / np.where(rho[j] > 0, rho[j], 1.0)
        sizes = np.full(count, float(group_size))
        sizes[-1] = total - group_size * (count - 1)
        xs.append(np.mod(x, L))
        size.append(sizes)
        cls.append(np.full(count, k))
    x = np.concatenate(xs)
    cls = np.concatenate(cls)
    size = np.concatenate(size)
    phi = spec.mask[:, cls].T / spec.mask[:, cls].sum(axis=0)[:, None]
    order = np.lexsort((cls, x))
    return Groups(L, np.arange(len(x))[order], cls[order], size[order], x[order], phi[order])


def headways(spec: NetworkSpec, groups: Groups) -> np.ndarray:
    """Distance from each group to the nearest downstream occupant of each lane, (groups, lanes).

    An occupant of lane i is any group (any class) with phi_i > PHI_MIN. Groups
    at the same position do not constrain each other; a group with no other
    occupant ahead gets the full ring length.
    """
    L = groups.ring_length
    out = np.full((len(groups), len(spec.lanes)), L)
    for a in range(len(spec.lanes)):
        occ = groups.x[groups.phi[:, a] > PHI_MIN]
        if occ.size == 0:
            continue
        occ = np.sort(occ)
        j = np.searchsorted(occ, groups.x, side="right")
        ahead = np.where(j < occ.size, occ[np.minimum(j, occ.size - 1)], occ[0] + L)
        out[:, a] = ahead - groups.x
    return out


def leader_headways(spec: NetworkSpec, groups: Groups, n: int) -> dict[str, float]:
    d = spec.classes[groups.cls[n]]
    h = headways(spec, groups)[n]
    return {i: float(h[spec.lanes.index(i)]) for i in spec.accessible[d]}


def _phi_two_lanes(spec, lanes, theta, size, dx, base, tol, max_iter):
    """Safeguarded Newton on phi - logistic((u_a(phi) - u_b(phi)) / nu) = 0.

    phi is the share on lane ``lanes[0]``; the lane densities seen by the group
    are size * phi / dx + base. The left side is increasing with slope >= 1,
    negative at 0 and positive at 1, so the root is bracketed.
    """
    fa, fb = (spec.diagrams[spec.lanes[a]] for a in lanes)
    nu = spec.nu
    ka, kb = size / dx[:, 0], size / dx[:, 1]
    ba, bb = base[:, 0], base[:, 1]

    def f(phi):
        ra, rb = ka * phi + ba, kb * (1 - phi) + bb
        z = (fa.speed(ra) + theta[0] - fb.speed(rb) - theta[1]) / nu
        sig = 0.5 * (1.0 + np.tanh(0.5 * z))
        dz = (fa.speed_derivative(ra) * ka + fb.speed_derivative(rb) * kb) / nu
        return phi - sig, 1.0 - sig * (1.0 - sig) * dz

    lo, hi = np.zeros_like(size), np.ones_like(size)
    phi = np.full_like(size, 0.5)
    for _ in range(max_iter):
        val, der = f(phi)
        if np.all(np.abs(val) <= tol):
            return phi, True
        lo = np.where(val < 0, phi, lo)
        hi = np.where(val > 0, phi, hi)
        nxt = phi - val / der
        outside = (nxt <= lo) | (nxt >= hi)
        phi = np.where(np.abs(val) <= tol, phi, np.where(outside, 0.5 * (lo + hi), nxt))
    return phi, bool(np.all(np.abs(f(phi)[0]) <= tol))


def _phi_general(spec, lanes, theta, size, dx, base, tol, max_iter, damping):
    """Damped fixed-point iteration on the softmax relation, damping halved on residual increase."""
    fds = [spec.diagrams[spec.lanes[a]] for a in lanes]

    def image(phi):
        u = np.stack(
            [fd.speed(size * phi[:, c] / dx[:, c] + base[:, c]) for c, fd in enumerate(fds)], axis=1
        )
        u = (u + theta[None]) / spec.nu
        e = np.exp(u - u.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    phi = np.full((len(size), len(lanes)), 1.0 / len(lanes))
    omega = np.full(len(size), damping)
    R = image(phi) - phi
    res = np.abs(R).max(axis=1)
    for _ in range(max_iter):
        act = res > tol
        if not act.any():
            break
        trial = phi[act] + omega[act, None] * R[act]
        Rt = image(trial) - trial
        rt = np.abs(Rt).max(axis=1)
        better = rt < res[act]
        idx = np.flatnonzero(act)
        ok = idx[better]
        phi[ok], R[ok], res[ok] = trial[better], Rt[better], rt[better]
        bad = idx[~better]
        omega[bad] *= 0.5
        omega[ok] = np.minimum(1.0, omega[ok] * 1.5)
    return phi / phi.sum(axis=1, keepdims=True), bool(np.all(res <= tol))


def solve_phi_batch(
    spec: NetworkSpec,
    cls: np.ndarray,
    size: np.ndarray,
    dx: np.ndarray,
    settings: SolverSettings = DEFAULT_SETTINGS,
    base: np.ndarray | None = None,
) -> np.ndarray:
    """Split coefficients for many groups.

    ``dx`` is (groups, lanes) headways; the lane densities seen by a group are
    size * phi / dx, plus ``base`` (other traffic on the lane) when given.
    """
    phi = np.zeros((len(cls), len(spec.lanes)))
    if base is None:
        base = np.zeros_like(dx)
    for k, d in enumerate(spec.classes):
        sel = np.flatnonzero(cls == k)
        if sel.size == 0:
            continue
        lanes = [spec.lanes.index(i) for i in spec.accessible[d]]
        theta = spec.theta_array[lanes, k]
        if len(lanes) == 1:
            phi[sel, lanes[0]] = 1.0
            continue
        if np.any(dx[np.ix_(sel, lanes)] <= 0):
            raise SchemeError("non-positive headway")
        if len(lanes) == 2:
            p, ok = _phi_two_lanes(
                spec, lanes, theta, size[sel], dx[np.ix_(sel, lanes)], base[np.ix_(sel, lanes)],
                settings.residual_tol, settings.max_iterations,
            )
            phi[sel, lanes[0]], phi[sel, lanes[1]] = p, 1.0 - p
        else:
            p, ok = _phi_general(
                spec, lanes, theta, size[sel], dx[np.ix_(sel, lanes)], base[np.ix_(sel, lanes)],
                settings.residual_tol, 20 * settings.max_iterations, settings.damping,
            )
            phi[np.ix_(sel, lanes)] = p
        if not ok:
            raise SchemeError(f"split coefficients for class {d!r} did not converge")
    return phi


def solve_phi(
    spec: NetworkSpec,
    group: VehicleGroup,
    headways: Mapping[str, float],
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> dict[str, float]:
    d = str(group.cls)
    k = spec.classes.index(d)
    dx = np.ones((1, len(spec.lanes)))
    for i in spec.accessible[d]:
        dx[0, spec.lanes.index(i)] = float(headways[i])
    phi = solve_phi_batch(spec, np.array([k]), np.array([float(group.size)]), dx, settings)[0]
    return {i: float(phi[spec.lanes.index(i)]) for i in spec.accessible[d]}


def class_spans(groups: Groups) -> np.ndarray:
    """Distance from each group to the next group of its own class (ring length if alone)."""
    L = groups.ring_length
    span = np.full(len(groups), L)
    for k in np.unique(groups.cls):
        sel = np.flatnonzero(groups.cls == k)
        if sel.size > 1:
            x = groups.x[sel]
            gap = np.mod(np.roll(x, -1) - x, L)
            span[sel] = np.where(gap > 0, gap, 0.0)
    return span


def _arc_overlap(s1, l1, s2, l2, L):
    """Overlap length of ring arcs [s1, s1 + l1) and [s2, s2 + l2), lengths <= L."""
    total = 0.0
    for shift in (-L, 0.0, L):
        total = total + np.clip(
            np.minimum(s1 + l1, s2 + l2 + shift) - np.maximum(s1, s2 + shift), 0.0, None
        )
    return total


def shared_lane_loads(spec: NetworkSpec, groups: Groups, span: np.ndarray | None = None) -> np.ndarray:
    """Vehicles of *other* classes on each lane inside each group's own-class span, (groups, lanes).

    Every group spreads its lane-i vehicles (size * phi_i) uniformly over its
    own span; the load is the overlap-weighted sum over groups of other classes.
    """
    if span is None:
        span = class_spans(groups)
    L = groups.ring_length
    with np.errstate(divide="ignore", invalid="ignore"):
        dens = np.where(span[:, None] > 0, groups.size[:, None] * groups.phi / span[:, None], 0.0)
    ov = _arc_overlap(groups.x[:, None], span[:, None], groups.x[None, :], span[None, :], L)
    ov = np.where(groups.cls[:, None] == groups.cls[None, :], 0.0, ov)
    return ov @ dens


DENSITY_RULES = ("shared", "predecessor")


def step_lagrange(
    spec: NetworkSpec,
    groups: Groups,
    dt: float,
    settings: SolverSettings = DEFAULT_SETTINGS,
    counter: EvalCounter | None = None,
    density_rule: str = "shared",
) -> Groups:
    """Advance all groups by ``dt`` and restore the ring order.

    ``density_rule`` picks the lane density a group sees:

    * ``"predecessor"``: size * phi_i / (headway to the nearest lane-i occupant).
    * ``"shared"``: (size * phi_i + other classes' lane-i vehicles) / own-class
      span. With a single class both rules coincide.
    """
    if density_rule not in DENSITY_RULES:
        raise ValidationError(f"unknown density rule {density_rule!r}; valid: {DENSITY_RULES}")
    if counter is not None:
        counter.solves += len(groups)
    if density_rule == "predecessor":
        dx = headways(spec, groups)
        base = np.zeros_like(dx)
    else:
        span = class_spans(groups)
        if np.any(span <= 0):
            raise SchemeError("two groups of the same class coincide")
        dx = np.repeat(span[:, None], len(spec.lanes), axis=1)
        base = shared_lane_loads(spec, groups, span) / span[:, None]
    phi = solve_phi_batch(spec, groups.cls, groups.size, dx, settings, base)
    lane_rho = groups.size[:, None] * phi / dx + base
    lane_v = spec.lane_speeds(lane_rho)
    v = (phi * lane_v).sum(axis=1)
    x = np.mod(groups.x + dt * v, groups.ring_length)
    x = np.where(x >= groups.ring_length, 0.0, x)
    order = np.argsort(x, kind="stable")
    return Groups(
        groups.ring_length,
        groups.ids[order],
        groups.cls[order],
        groups.size[order],
        x[order],
        phi[order],
        v[order],
    )


def groups_to_grid(groups: Groups, cells: int, n_classes: int) -> GridState:
    """Spread each group uniformly up to the next group of its class and average over cells."""
    L = groups.ring_length
    edges = np.linspace(0.0, L, cells + 1)
    dx = L / cells
    lo, hi = edges[:-1], edges[1:]
    rho = np.zeros((cells, n_classes))
    for k in range(n_classes):
        sel = np.flatnonzero(groups.cls == k)
        if sel.size == 0:
            continue
        x = groups.x[sel]
        m = groups.size[sel]
        nxt = np.roll(x, -1)
        length = np.mod(nxt - x, L)
        length = np.where(sel.size == 1, L, length)
        for a, ln, mass in zip(x, length, m):
            # gaps at round-off scale are deposited as point masses
            if ln <= 1e-12 * L:
                rho[min(int(a / dx), cells - 1), k] += mass / dx
                continue
            dens = mass / ln
            b = a + ln
            # the interval may wrap past L once
            for s, e in ((a, min(b, L)), (0.0, b - L)):
                if e > s:
                    rho[:, k] += dens * np.clip(np.minimum(e, hi) - np.maximum(s, lo), 0.0, None) / dx
    return GridState(L, rho)


@dataclass(frozen=True)
class LagrangeRunConfig:
    duration: float
    group_size: float = 5.0
    cfl: float = 0.25
    cells: int = 400
    snapshot_every: float | None = None
    density_rule: str = "shared"

    def __post_init__(self):
        if self.density_rule not in DENSITY_RULES:
            raise ValidationError(f"unknown density rule {self.density_rule!r}")
        if not self.group_size > 0:
            raise ValidationError("group_size must be > 0")
        if not 0 < self.cfl <= 1:
            raise ValidationError("cfl must be in (0, 1]")
        if not self.duration >= 0:
            raise ValidationError("duration must be >= 0")


@dataclass
class LagrangeRunResult:
    dt: float
    steps: int
    group_snapshots: list[tuple[float, Groups]]
    snapshots: list[Snapshot]
    mass_audit: list[tuple[float, str, float]] = field(default_factory=list)
    flux_evaluations: int = 0
    wall_time: float = 0.0
    scheme: str = "lagrange"

    @property
    def final(self) -> Snapshot:
        return self.snapshots[-1]


def lagrange_dt(spec: NetworkSpec, groups: Groups, cfl: float) -> float:
    """cfl times the mean spacing of the most numerous class, over the top free speed."""
    counts = np.bincount(groups.cls, minlength=len(spec.classes))
    spacing = groups.ring_length / max(int(counts.max()), 1)
    return cfl * spacing / spec.max_free_speed


def run_lagrange(
    spec: NetworkSpec,
    initial: GridState,
    cfg: LagrangeRunConfig,
    settings: SolverSettings = DEFAULT_SETTINGS,
    groups: Groups | None = None,
) -> LagrangeRunResult:
    counter = EvalCounter()
    if groups is None:
        groups = groups_from_grid(spec, initial, cfg.group_size)
    D = len(spec.classes)
    n_steps, dt = time_grid(cfg.duration, lagrange_dt(spec, groups, cfg.cfl), cfg.snapshot_every)
    keep = snapshot_steps(n_steps, dt, cfg.snapshot_every)
    if groups.speed is None:
        # a zero step keeps the order and fills in the t=0 split and speeds
        groups = step_lagrange(spec, groups, 0.0, settings, density_rule=cfg.density_rule)
    result = LagrangeRunResult(dt, n_steps, [(0.0, groups)], [Snapshot(0.0, groups_to_grid(groups, cfg.cells, D))])
    _audit(result, spec, 0.0, groups)
    t0 = time.perf_counter()
    for n in range(1, n_steps + 1):
        groups = step_lagrange(spec, groups, dt, settings, counter, cfg.density_rule)
        t = n * dt
        _audit(result, spec, t, groups)
        if n in keep:
            result.group_snapshots.append((t, groups))
            result.snapshots.append(Snapshot(t, groups_to_grid(groups, cfg.cells, D)))
    result.flux_evaluations = counter.solves
    result.wall_time = time.perf_counter() - t0
    return result


def _audit(result, spec, t, groups):
    totals = groups.class_totals(len(spec.classes))
    for k, d in enumerate(spec.classes):
        result.mass_audit.append((t, d, float(totals[k])))
