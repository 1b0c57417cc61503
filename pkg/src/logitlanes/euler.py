"""Fixed-mesh integrators on the ring: Lax-Friedrichs, Rusanov and Euler-Lagrange remap.

All three are conservative and use a fixed time step dt = cfl * dx / V_max,
V_max being the largest lane free speed.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .equilibrium import DEFAULT_SETTINGS, BatchSplit, EvalCounter, SolverSettings, solve_batch, wave_speeds
from .model import GridState, NetworkSpec, ValidationError

EULER_SCHEMES = ("lax_friedrichs", "rusanov", "remap")
POSITIVITY_FLOOR = -1e-9
CFL_SLACK = 1e-6


class SchemeError(RuntimeError):
    pass


class CFLViolation(SchemeError):
    pass


class HeadwayCollapse(SchemeError):
    """A stretched marker headway became non-positive; dt must be reduced."""


@dataclass(frozen=True)
class EulerRunConfig:
    scheme: str
    cells: int
    cfl: float
    duration: float
    snapshot_every: float | None = None
    check_cfl: bool = True

    def __post_init__(self):
        if self.scheme not in EULER_SCHEMES:
            raise ValidationError(f"unknown scheme {self.scheme!r}; valid: {', '.join(EULER_SCHEMES)}")
        if self.cells < 3:
            raise ValidationError("cells must be >= 3")
        if not 0 < self.cfl <= 1:
            raise ValidationError("cfl must be in (0, 1]")
        if not self.duration >= 0:
            raise ValidationError("duration must be >= 0")


def _equilibrium(spec, rho, settings, counter) -> BatchSplit:
    # schemes may leave round-off negatives; the flux sees the clipped state
    split = solve_batch(spec, np.maximum(rho, 0.0), settings, counter)
    if not split.converged.all():
        raise SchemeError(f"equilibrium failed to converge (residual {split.residual.max():.3e})")
    return split


def _check_cfl(lam, a):
    worst = lam * float(np.max(a))
    if worst > 1.0 + CFL_SLACK:
        raise CFLViolation(f"CFL condition violated: dt/dx * max wave speed = {worst:.6f} > 1")


def step_lax_friedrichs(
    spec: NetworkSpec,
    state: GridState,
    dt: float,
    settings: SolverSettings = DEFAULT_SETTINGS,
    counter: EvalCounter | None = None,
    check_cfl: bool = True,
) -> GridState:
    rho = state.rho
    lam = dt / state.dx
    split = _equilibrium(spec, rho, settings, counter)
    if check_cfl:
        _check_cfl(lam, wave_speeds(spec, split.rho_bar, settings, counter, base=split))
    F = split.class_flux
    new = 0.5 * (np.roll(rho, 1, axis=0) + np.roll(rho, -1, axis=0)) - 0.5 * lam * (
        np.roll(F, -1, axis=0) - np.roll(F, 1, axis=0)
    )
    return GridState(state.ring_length, new)


def step_rusanov(
    spec: NetworkSpec,
    state: GridState,
    dt: float,
    settings: SolverSettings = DEFAULT_SETTINGS,
    counter: EvalCounter | None = None,
    wave_speed: float | np.ndarray | None = None,
) -> GridState:
    """Local Lax-Friedrichs update.

    ``wave_speed`` overrides the per-cell speeds (scalar or one per cell);
    forcing it to dx/dt recovers the Lax-Friedrichs scheme.
    """
    rho = state.rho
    lam = dt / state.dx
    split = _equilibrium(spec, rho, settings, counter)
    if wave_speed is None:
        a = wave_speeds(spec, split.rho_bar, settings, counter, base=split)
        _check_cfl(lam, a)
    else:
        a = np.broadcast_to(np.asarray(wave_speed, dtype=float), (state.cells,))
    F = split.class_flux
    a_face = np.maximum(a, np.roll(a, -1))
    rho_next = np.roll(rho, -1, axis=0)
    face = 0.5 * (F + np.roll(F, -1, axis=0)) - 0.5 * a_face[:, None] * (rho_next - rho)
    new = rho - lam * (face - np.roll(face, 1, axis=0))
    return GridState(state.ring_length, new)


def step_remap(
    spec: NetworkSpec,
    state: GridState,
    dt: float,
    settings: SolverSettings = DEFAULT_SETTINGS,
    counter: EvalCounter | None = None,
) -> GridState:
    """Advect the cell-edge markers one step, stretch, then remap onto the mesh.

    The marker at the upstream edge of cell l moves at the class speed of
    cell l. Cell l gains v_l dt rhohat_{l-1} through its upstream face and
    loses v_{l+1} dt rhohat_l through its downstream face.
    """
    rho = state.rho
    h = state.dx
    split = _equilibrium(spec, rho, settings, counter)
    v = split.class_speed
    v_next = np.roll(v, -1, axis=0)
    h_hat = h + dt * (v_next - v)
    if np.any(h_hat <= 0):
        raise HeadwayCollapse(f"stretched headway collapsed (min {h_hat.min():.3e} km); reduce dt")
    rho_hat = rho * h / h_hat
    new = rho + dt / h * (v * np.roll(rho_hat, 1, axis=0) - v_next * rho_hat)
    return GridState(state.ring_length, new)


_STEPPERS = {
    "lax_friedrichs": step_lax_friedrichs,
    "rusanov": step_rusanov,
    "remap": step_remap,
}


@dataclass(frozen=True)
class Snapshot:
    t: float
    state: GridState


@dataclass
class RunResult:
    scheme: str
    dt: float
    steps: int
    snapshots: list[Snapshot]
    mass_audit: list[tuple[float, str, float]] = field(default_factory=list)
    flux_evaluations: int = 0
    wall_time: float = 0.0

    @property
    def final(self) -> Snapshot:
        return self.snapshots[-1]


def time_grid(duration: float, dt_max: float, every: float | None = None) -> tuple[int, float]:
    """Number of steps and the uniform dt <= dt_max that lands exactly on ``duration``.

    When ``duration`` is a whole number of snapshot intervals ``every``, dt
    also divides ``every`` so every snapshot falls on a step.
    """
    if duration == 0:
        return 0, dt_max
    if every and 0 < every < duration:
        blocks = duration / every
        nb = round(blocks)
        if nb >= 1 and abs(blocks - nb) <= 1e-9 * blocks:
            n = nb * max(1, math.ceil(every / dt_max - 1e-9))
            return n, duration / n
    n = max(1, math.ceil(duration / dt_max - 1e-9))
    return n, duration / n


def snapshot_steps(n_steps: int, dt: float, every: float | None) -> set[int]:
    steps = {0, n_steps}
    if every:
        k = max(1, round(every / dt))
        steps.update(range(0, n_steps + 1, k))
    return steps


def run(
    spec: NetworkSpec,
    initial: GridState,
    cfg: EulerRunConfig,
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> RunResult:
    if initial.cells != cfg.cells:
        raise ValidationError(f"initial grid has {initial.cells} cells, config asks for {cfg.cells}")
    counter = EvalCounter()
    n_steps, dt = time_grid(cfg.duration, cfg.cfl * initial.dx / spec.max_free_speed, cfg.snapshot_every)
    keep = snapshot_steps(n_steps, dt, cfg.snapshot_every)
    step = _STEPPERS[cfg.scheme]
    kwargs = {"settings": settings, "counter": counter}
    if cfg.scheme == "lax_friedrichs":
        kwargs["check_cfl"] = cfg.check_cfl

    state = initial
    result = RunResult(cfg.scheme, dt, n_steps, [Snapshot(0.0, initial)])
    _audit(result, spec, 0.0, state)
    t0 = time.perf_counter()
    for n in range(1, n_steps + 1):
        state = step(spec, state, dt, **kwargs)
        t = n * dt
        low = state.rho.min()
        if low < POSITIVITY_FLOOR:
            raise SchemeError(f"{cfg.scheme}: negative density {low:.3e} at t={t:.6f} h")
        _audit(result, spec, t, state)
        if n in keep:
            result.snapshots.append(Snapshot(t, state))
    result.flux_evaluations = counter.solves
    result.wall_time = time.perf_counter() - t0
    return result


def _audit(result: RunResult, spec: NetworkSpec, t: float, state: GridState):
    mass = state.class_mass()
    for k, d in enumerate(spec.classes):
        result.mass_audit.append((t, d, float(mass[k])))
