"""Logit lane-assignment equilibrium at a point, the implicit class flux and wave speeds.

Given class densities rho^d, the partial densities rho_i^d satisfy

    rho_i^d = rho^d * softmax_{i in I^d}((V_i(rho_i) + theta_i^d) / nu)

with rho_i the lane total. The fixed point is solved in the lane densities
(|I| unknowns per point) by a clipped Newton iteration with backtracking on
the residual norm; a damped Picard iteration is kept as a fallback. All
routines are vectorised over a leading batch axis so that a whole grid is
solved at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .model import NetworkSpec, ValidationError, densities_vector


@dataclass(frozen=True)
class SolverSettings:
    residual_tol: float = 1e-10
    max_iterations: int = 200
    damping: float = 0.5

    def __post_init__(self):
        if not self.residual_tol > 0:
            raise ValidationError("residual_tol must be > 0")
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")
        if not 0 < self.damping <= 1:
            raise ValidationError("damping must be in (0, 1]")


DEFAULT_SETTINGS = SolverSettings()


@dataclass
class EvalCounter:
    """Counts pointwise equilibrium solves (one per cell / state evaluated)."""

    solves: int = 0


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


def _shares(spec: NetworkSpec, lane_speed: np.ndarray) -> np.ndarray:
    """Logit shares, shape (N, lanes, classes); zero on inaccessible lanes."""
    u = (lane_speed[:, :, None] + spec.theta_array[None]) / spec.nu
    u = np.where(spec.mask[None], u, -np.inf)
    u = u - u.max(axis=1, keepdims=True)
    e = np.exp(u)
    return e / e.sum(axis=1, keepdims=True)


def logit_shares(spec: NetworkSpec, lane_speeds: Mapping[str, float], d: str) -> dict[str, float]:
    """Shares of class ``d`` over its accessible lanes for given lane speeds."""
    d = str(d)
    if d not in spec.classes:
        raise ValidationError(f"unknown class {d!r}")
    speeds = np.array(
        [[float(lane_speeds[i]) if i in spec.accessible[d] else 0.0 for i in spec.lanes]]
    )
    s = _shares(spec, speeds)[0, :, spec.classes.index(d)]
    return {i: float(s[spec.lanes.index(i)]) for i in spec.accessible[d]}


@dataclass(frozen=True)
class BatchSplit:
    """Equilibrium for N points. Arrays are indexed (point, lane, class)."""

    rho_bar: np.ndarray
    partial: np.ndarray
    lane_density: np.ndarray
    lane_speed: np.ndarray
    class_flux: np.ndarray
    class_speed: np.ndarray
    residual: np.ndarray
    converged: np.ndarray
    iterations: int


@dataclass(frozen=True)
class EquilibriumSplit:
    partial: dict[tuple[str, str], float]
    lane_density: dict[str, float]
    lane_speed: dict[str, float]
    class_flux: dict[str, float]
    class_speed: dict[str, float]
    residual: float
    converged: bool
    iterations: int

    def to_dict(self) -> dict:
        classes = list(self.class_flux)
        lanes = list(self.lane_density)
        return {
            "partial": {d: {i: self.partial[(i, d)] for i in lanes} for d in classes},
            "lane_density": self.lane_density,
            "lane_speed": self.lane_speed,
            "class_flux": self.class_flux,
            "class_speed": self.class_speed,
            "residual": self.residual,
            "converged": self.converged,
            "iterations": self.iterations,
        }


def _lane_residual(spec, lane, rb):
    v = spec.lane_speeds(lane)
    s = _shares(spec, v)
    g = np.einsum("nid,nd->ni", s, rb)
    return lane - g, v, s


def _newton(spec, lane, rb, cap, tol, max_iter):
    """Clipped Newton on R(lane) = lane - sum_d rho^d s^d(V(lane)).

    Returns updated lanes, a done mask and the iteration count.
    """
    n_lanes = lane.shape[1]
    eye = np.eye(n_lanes)
    done = np.zeros(lane.shape[0], dtype=bool)
    it = 0
    R, v, s = _lane_residual(spec, lane, rb)
    rnorm = np.abs(R).max(axis=1)
    done |= rnorm <= tol
    while it < max_iter and not done.all():
        it += 1
        act = np.flatnonzero(~done)
        la, ra, sa, ca = lane[act], R[act], s[act], rb[act]
        dv = spec.lane_speed_derivatives(la)
        # A = sum_d rho^d (diag(s_d) - s_d s_d^T) / nu, positive semidefinite
        w = sa * ca[:, None, :]
        A = np.einsum("nid,ij->nij", w, eye) - np.einsum("nid,njd->nij", w, sa)
        J = eye[None] - (A / spec.nu) * dv[:, None, :]
        step = np.linalg.solve(J, -ra[..., None])[..., 0]

        norm0 = np.sqrt((ra * ra).sum(axis=1))
        alpha = np.ones(len(act))
        pending = np.ones(len(act), dtype=bool)
        new_lane, new_R = la.copy(), ra.copy()
        new_v, new_s = v[act].copy(), sa.copy()
        for _ in range(50):
            p = np.flatnonzero(pending)
            if p.size == 0:
                break
            trial = np.clip(la[p] + alpha[p, None] * step[p], 0.0, cap[act][p])
            Rt, vt, st = _lane_residual(spec, trial, ca[p])
            ok = np.sqrt((Rt * Rt).sum(axis=1)) <= (1.0 - 1e-4 * alpha[p]) * norm0[p]
            acc = p[ok]
            new_lane[acc], new_R[acc], new_v[acc], new_s[acc] = trial[ok], Rt[ok], vt[ok], st[ok]
            pending[acc] = False
            alpha[p[~ok]] *= 0.5
        lane[act], R[act], v[act], s[act] = new_lane, new_R, new_v, new_s
        rnorm = np.abs(R).max(axis=1)
        stalled = act[pending]  # no decrease possible: at machine precision or stuck
        done[act[rnorm[act] <= tol]] = True
        done[stalled] = True
    return lane, it


def _picard(spec, lane, rb, tol, max_iter, damping):
    omega = np.full(lane.shape[0], damping)
    R, _, _ = _lane_residual(spec, lane, rb)
    rnorm = np.abs(R).max(axis=1)
    for _ in range(max_iter):
        act = np.flatnonzero(rnorm > tol)
        if act.size == 0:
            break
        trial = lane[act] - omega[act, None] * R[act]
        Rt, _, _ = _lane_residual(spec, trial, rb[act])
        nt = np.abs(Rt).max(axis=1)
        better = nt < rnorm[act]
        ok = act[better]
        lane[ok], R[ok], rnorm[ok] = trial[better], Rt[better], nt[better]
        omega[act[~better]] *= 0.5
    return lane


def solve_batch(
    spec: NetworkSpec,
    rho_bar: np.ndarray,
    settings: SolverSettings = DEFAULT_SETTINGS,
    counter: EvalCounter | None = None,
) -> BatchSplit:
    """Solve the equilibrium for every row of ``rho_bar`` (shape (N, classes))."""
    rb = np.array(rho_bar, dtype=float, ndmin=2)
    if rb.shape[1] != len(spec.classes):
        raise ValidationError(f"expected {len(spec.classes)} class densities, got {rb.shape[1]}")
    if np.any(~np.isfinite(rb)) or np.any(rb < 0):
        raise ValidationError("class densities must be finite and >= 0")
    if counter is not None:
        counter.solves += rb.shape[0]
    mask = spec.mask
    n_acc = mask.sum(axis=0)
    # uniform split over accessible lanes
    lane = (rb[:, None, :] * mask[None] / n_acc).sum(axis=2)
    cap = (rb[:, None, :] * mask[None]).sum(axis=2)

    inner_tol = 1e-2 * settings.residual_tol
    lane, iters = _newton(spec, lane, rb, cap, inner_tol, settings.max_iterations)

    split = _finish(spec, rb, lane, iters, settings.residual_tol)
    if not split.converged.all():
        bad = np.flatnonzero(~split.converged)
        lane[bad] = _picard(
            spec, lane[bad], rb[bad], inner_tol, 20 * settings.max_iterations, settings.damping
        )
        split = _finish(spec, rb, lane, iters, settings.residual_tol)
    return split


def _finish(spec, rb, lane, iters, tol) -> BatchSplit:
    s = _shares(spec, spec.lane_speeds(lane))
    partial = s * rb[:, None, :]
    lane_density = partial.sum(axis=2)
    lane_speed = spec.lane_speeds(lane_density)
    s_new = _shares(spec, lane_speed)
    scale = np.maximum(rb, 1.0)
    residual = (np.abs(partial - rb[:, None, :] * s_new) / scale[:, None, :]).max(axis=(1, 2))
    flux = np.einsum("nid,ni->nd", partial, lane_speed)
    # share-weighted lane speed; equals flux / rho^d whenever rho^d > 0
    speed = np.einsum("nid,ni->nd", s_new, lane_speed)
    with np.errstate(divide="ignore", invalid="ignore"):
        speed = np.where(rb > 0, flux / np.where(rb > 0, rb, 1.0), speed)
    return BatchSplit(
        rho_bar=rb,
        partial=partial,
        lane_density=lane_density,
        lane_speed=lane_speed,
        class_flux=flux,
        class_speed=speed,
        residual=residual,
        converged=residual <= tol,
        iterations=iters,
    )


def solve_split(
    spec: NetworkSpec,
    rho_bar: Mapping[str, float],
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> EquilibriumSplit:
    """Equilibrium partial densities for one point.

    Non-convergence is reported through ``converged``/``residual``; the caller
    decides whether that is fatal.
    """
    b = solve_batch(spec, densities_vector(spec, rho_bar)[None], settings)
    return _split_from_batch(spec, b, 0)


def _split_from_batch(spec: NetworkSpec, b: BatchSplit, n: int) -> EquilibriumSplit:
    L, D = spec.lanes, spec.classes
    return EquilibriumSplit(
        partial={(i, d): float(b.partial[n, a, k]) for a, i in enumerate(L) for k, d in enumerate(D)},
        lane_density={i: float(b.lane_density[n, a]) for a, i in enumerate(L)},
        lane_speed={i: float(b.lane_speed[n, a]) for a, i in enumerate(L)},
        class_flux={d: float(b.class_flux[n, k]) for k, d in enumerate(D)},
        class_speed={d: float(b.class_speed[n, k]) for k, d in enumerate(D)},
        residual=float(b.residual[n]),
        converged=bool(b.converged[n]),
        iterations=b.iterations,
    )


def split_rows(spec: NetworkSpec, b: BatchSplit) -> list[EquilibriumSplit]:
    return [_split_from_batch(spec, b, n) for n in range(b.partial.shape[0])]


def assignment_objective(
    spec: NetworkSpec,
    partial: Mapping[tuple[str, str], float],
    rho_bar: Mapping[str, float],
    feasibility_tol: float = 1e-9,
) -> float:
    """Value of the concave program whose maximiser is the Logit split.

        sum_i int_0^{rho_i} V_i + sum rho_i^d theta_i^d - nu sum rho^d H(rho_i^d / rho^d)

    with H(x) = x (ln x - 1) and 0 ln 0 = 0.
    """
    rb = densities_vector(spec, rho_bar)
    P = np.zeros((len(spec.lanes), len(spec.classes)))
    for (i, d), val in partial.items():
        i, d = str(i), str(d)
        if d not in spec.classes or i not in spec.lanes:
            raise ValidationError(f"unknown lane/class pair {(i, d)}")
        if val != 0 and i not in spec.accessible[d]:
            raise ValidationError(f"lane {i!r} not accessible to class {d!r}")
        P[spec.lanes.index(i), spec.classes.index(d)] = float(val)
    return float(objective_array(spec, P[None], rb[None], feasibility_tol)[0])


def objective_array(spec, partial, rho_bar, feasibility_tol=1e-9) -> np.ndarray:
    """Vectorised objective; ``partial`` is (N, lanes, classes)."""
    P = np.asarray(partial, dtype=float)
    rb = np.asarray(rho_bar, dtype=float)
    if np.any(P < 0):
        raise ValidationError("partial densities must be >= 0")
    sums = P.sum(axis=1)
    if np.any(np.abs(sums - rb) > feasibility_tol * np.maximum(rb, 1.0)):
        raise ValidationError("partial densities do not sum to the class densities")
    lane = P.sum(axis=2)
    value = spec.lane_speed_integrals(lane).sum(axis=1)
    value = value + (P * spec.theta_array[None]).sum(axis=(1, 2))
    with np.errstate(divide="ignore", invalid="ignore"):
        x = P / rb[:, None, :]
        H = np.where(P > 0, x * (np.log(np.where(P > 0, x, 1.0)) - 1.0), 0.0)
    # x = 0 contributes 0 via the 0 ln 0 limit; H(0) itself is 0
    value = value - spec.nu * (rb[:, None, :] * H).sum(axis=(1, 2))
    return value


def class_flux(
    spec: NetworkSpec,
    rho_bar: Mapping[str, float],
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> tuple[dict[str, float], dict[str, float]]:
    """Class flows q^d and class mean speeds v^d at one point."""
    split = solve_split(spec, rho_bar, settings)
    if not split.converged:
        raise ConvergenceError("equilibrium did not converge", split.residual)
    return split.class_flux, split.class_speed


def flux_jacobian(
    spec: NetworkSpec,
    rho_bar: np.ndarray,
    settings: SolverSettings = DEFAULT_SETTINGS,
    counter: EvalCounter | None = None,
    base: BatchSplit | None = None,
    rel_step: float = 1e-4,
    min_step: float = 1e-3,
) -> np.ndarray:
    """Finite-difference Jacobian dF^e/drho^d, shape (N, classes, classes).

    Central differences, switching to second-order one-sided stencils at
    vacuum (rho^d < step) and next to jam (where the clamped speed law has a
    kink).
    """
    rb = np.array(rho_bar, dtype=float, ndmin=2)
    N, D = rb.shape
    if base is None:
        base = solve_batch(spec, rb, settings, counter)
    F0 = base.class_flux
    h = np.maximum(rel_step * rb, min_step)
    lane0 = base.lane_density
    near_jam = np.zeros((N, D), dtype=bool)
    for k in range(D):
        lanes = spec.mask[:, k]
        near_jam[:, k] = np.any(lane0[:, lanes] + 2 * h[:, k : k + 1] >= spec.jam_densities[lanes], axis=1)
    forward = rb < h
    backward = near_jam & ~forward & (rb >= 2 * h)
    # offsets in units of h for the two perturbed evaluations per class
    off_a = np.where(forward, 1.0, np.where(backward, -1.0, 1.0))
    off_b = np.where(forward, 2.0, np.where(backward, -2.0, -1.0))
    states = []
    for k in range(D):
        for off in (off_a, off_b):
            s = rb.copy()
            s[:, k] += off[:, k] * h[:, k]
            states.append(s)
    F = solve_batch(spec, np.concatenate(states), settings, counter).class_flux
    F = F.reshape(D, 2, N, D)
    J = np.empty((N, D, D))
    for k in range(D):
        Fa, Fb = F[k, 0], F[k, 1]
        hk = h[:, k : k + 1]
        central = (Fa - Fb) / (2 * hk)
        fwd = (-3 * F0 + 4 * Fa - Fb) / (2 * hk)
        bwd = (3 * F0 - 4 * Fa + Fb) / (2 * hk)
        J[:, :, k] = np.where(forward[:, k : k + 1], fwd, np.where(backward[:, k : k + 1], bwd, central))
    return J


def wave_speeds(
    spec: NetworkSpec,
    rho_bar: np.ndarray,
    settings: SolverSettings = DEFAULT_SETTINGS,
    counter: EvalCounter | None = None,
    base: BatchSplit | None = None,
    rel_step: float = 1e-4,
    min_step: float = 1e-3,
) -> np.ndarray:
    """Spectral radius of the flux Jacobian at each row of ``rho_bar``."""
    J = flux_jacobian(spec, rho_bar, settings, counter, base, rel_step, min_step)
    if J.shape[1] == 1:
        return np.abs(J[:, 0, 0])
    return np.abs(np.linalg.eigvals(J)).max(axis=1)


def max_wave_speed(
    spec: NetworkSpec,
    rho_bar: Mapping[str, float],
    settings: SolverSettings = DEFAULT_SETTINGS,
    cap_at_free_speed: bool = False,
    rel_step: float = 1e-4,
    min_step: float = 1e-3,
) -> float:
    """Largest |eigenvalue| of the flux Jacobian at one point.

    With ``cap_at_free_speed`` the result is floored at the largest lane free
    speed, which is the bound used for time-step selection.
    """
    vec = densities_vector(spec, rho_bar)[None]
    a = float(wave_speeds(spec, vec, settings, rel_step=rel_step, min_step=min_step)[0])
    if cap_at_free_speed:
        a = max(a, spec.max_free_speed)
    return a
