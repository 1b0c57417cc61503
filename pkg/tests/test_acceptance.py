"""Acceptance suite: one test per criterion, each reported as a pass/fail line.

Run with ``pytest tests/test_acceptance.py -v``; the summary section
"acceptance criteria" lists every criterion with its measured values.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

import scalar_reference as ref
from helpers import greenshields_spec, random_spec
from logitlanes.compare import relative_l1
from logitlanes.equilibrium import max_wave_speed, objective_array, solve_batch
from logitlanes.estimation import estimate_nu_grid, estimate_nu_regression, nu_grid, synthetic_samples
from logitlanes.euler import step_lax_friedrichs, step_remap, step_rusanov
from logitlanes.lagrange import VehicleGroup, make_groups, step_lagrange
from logitlanes.model import GridState
from logitlanes.runner import run_scenario
from logitlanes.scenario import riemann_scenario

TWO_MINUTES = 2.0 / 60.0


@pytest.fixture(scope="module")
def scenario():
    s = riemann_scenario()
    assert math.isclose(s.run.duration, TWO_MINUTES)
    return s


@pytest.fixture(scope="module")
def converged_runs(scenario):
    """The configurations used by the convergence and efficiency checks."""
    t0 = time.perf_counter()
    runs = {
        "rusanov800": run_scenario(scenario, "rusanov", cells=800, cfl=0.5),
        "remap400": run_scenario(scenario, "remap", cells=400, cfl=0.25),
        "remap800": run_scenario(scenario, "remap", cells=800, cfl=0.25),
    }
    runs["elapsed"] = time.perf_counter() - t0
    return runs


def _drift(audit):
    by_class = {}
    for _, d, m in audit:
        by_class.setdefault(d, []).append(m)
    return {d: max(abs(m - ms[0]) for m in ms) / ms[0] for d, ms in by_class.items()}


@pytest.mark.criterion("1", "equilibrium correctness on 50 random instances")
def test_criterion_1_equilibrium_oracle(record_property):
    rng = np.random.default_rng(20240101)
    t0 = time.perf_counter()
    worst_residual, worst_gain, checked = 0.0, -math.inf, 0
    for _ in range(50):
        spec = random_spec(rng)
        rho_bar = rng.uniform(0.0, 60.0, size=len(spec.classes))
        split = solve_batch(spec, rho_bar[None])
        worst_residual = max(worst_residual, float(split.residual[0]))
        P = split.partial[0]
        best = objective_array(spec, P[None], rho_bar[None])[0]
        # every feasible move of 0.1 veh/km between two accessible lanes of one class
        moves = []
        for k, d in enumerate(spec.classes):
            acc = [spec.lanes.index(i) for i in spec.accessible[d]]
            for a in acc:
                for b in acc:
                    if a != b and P[a, k] >= 0.1:
                        Q = P.copy()
                        Q[a, k] -= 0.1
                        Q[b, k] += 0.1
                        moves.append(Q)
        if moves:
            vals = objective_array(spec, np.array(moves), np.repeat(rho_bar[None], len(moves), axis=0))
            worst_gain = max(worst_gain, float((vals - best).max()))
            checked += len(moves)
    elapsed = time.perf_counter() - t0
    record_property(
        "detail",
        f"max residual {worst_residual:.2e}, best perturbation gain {worst_gain:.3e} over {checked} moves, {elapsed:.2f} s",
    )
    assert worst_residual <= 1e-10
    assert worst_gain < 0.0
    assert elapsed <= 10.0


@pytest.mark.criterion("2", "per-class mass conservation over the 2-minute Riemann run")
def test_criterion_2_conservation(scenario, converged_runs, record_property):
    runs = {
        "lax_friedrichs": run_scenario(scenario, "lax_friedrichs", cells=400, cfl=0.5),
        "rusanov": converged_runs["rusanov800"],
        "remap": converged_runs["remap400"],
    }
    drifts = {name: max(_drift(r.mass_audit).values()) for name, r in runs.items()}
    lag = run_scenario(scenario, "lagrange", group_size=5)
    totals = {}
    for _, d, m in lag.mass_audit:
        totals.setdefault(d, set()).add(m)
    lagrange_exact = all(len(v) == 1 for v in totals.values())
    record_property(
        "detail",
        ", ".join(f"{k} {v:.1e}" for k, v in drifts.items()) + f", lagrange exact={lagrange_exact}",
    )
    assert all(v <= 1e-10 for v in drifts.values())
    assert lagrange_exact


@pytest.mark.criterion("3", "Rusanov(800, 0.5) vs remap(400, 0.25) <= 5%; remap 400 vs 800 <= 2%")
def test_criterion_3_scheme_agreement(scenario, converged_runs, record_property):
    rus = converged_runs["rusanov800"].final
    r400 = converged_runs["remap400"].final
    r800 = converged_runs["remap800"].final
    assert math.isclose(rus.t, TWO_MINUTES) and math.isclose(r400.t, TWO_MINUTES)
    cross = relative_l1(r400.state, rus.state)
    refine = relative_l1(r400.state, r800.state)
    elapsed = converged_runs["elapsed"]
    record_property(
        "detail",
        "rusanov vs remap "
        + "/".join(f"{v:.2%}" for v in cross)
        + ", remap 400 vs 800 "
        + "/".join(f"{v:.2%}" for v in refine)
        + f", {elapsed:.1f} s",
    )
    assert np.all(cross <= 0.05)
    assert np.all(refine <= 0.02)
    assert elapsed <= 120.0


@pytest.mark.criterion("4", "Lagrangian groups of 5 vs remap <= 20%")
def test_criterion_4_lagrangian_agreement(scenario, converged_runs, record_property):
    remap = converged_runs["remap400"].final
    lag = run_scenario(scenario, "lagrange", cells=400, group_size=5).final
    assert math.isclose(lag.t, TWO_MINUTES)
    dist = relative_l1(lag.state, remap.state)
    record_property("detail", "per class " + "/".join(f"{v:.2%}" for v in dist))
    assert np.all(dist <= 0.20)


@pytest.mark.criterion("5", "one lane, one class: all integrators match scalar references over 100 steps")
def test_criterion_5_scalar_reduction(record_property):
    vf, jam, L, cells = 100.0, 200.0, 5.0, 50
    spec = greenshields_spec(lanes=1, classes=1, free_speeds=[vf], jam=jam)
    dx = L / cells
    x = (np.arange(cells) + 0.5) * dx
    rho0 = 60.0 + 40.0 * np.sin(2 * np.pi * x / L) + np.where(x < 2.0, 50.0, 0.0)
    dt = 0.5 * dx / vf
    errors = {}
    for name, step, oracle in (
        ("lax_friedrichs", step_lax_friedrichs, ref.lax_friedrichs),
        ("rusanov", step_rusanov, ref.rusanov),
        ("remap", step_remap, ref.remap),
    ):
        state, expect = GridState(L, rho0[:, None]), list(rho0)
        for _ in range(100):
            state = step(spec, state, dt)
            expect = oracle(expect, dt, dx, vf, jam)
        errors[name] = float(np.abs(state.rho[:, 0] - np.array(expect)).max() / np.abs(expect).max())

    rng = np.random.default_rng(5)
    n = 40
    xs = np.sort(rng.uniform(0, L, n))
    sizes = rng.uniform(2.0, 8.0, n)
    groups = make_groups(spec, L, [VehicleGroup("1", s, p, {"1": 1.0}) for s, p in zip(sizes, xs)])
    expect = list(xs)
    dt_lag = 0.25 * (L / n) / vf
    for _ in range(100):
        groups = step_lagrange(spec, groups, dt_lag)
        expect = ref.follow_the_leader(expect, list(sizes), dt_lag, L, vf, jam)
    got = np.empty(n)
    got[groups.ids] = groups.x
    diff = np.abs(got - np.array(expect))
    diff = np.minimum(diff, L - diff)
    errors["lagrange"] = float(diff.max() / L)
    record_property("detail", ", ".join(f"{k} {v:.1e}" for k, v in errors.items()))
    assert all(v <= 1e-10 for v in errors.values())


@pytest.mark.criterion("6", "nu = 1e9 gives uniform shares; nu = 1e-3 concentrates >= 99.9%")
def test_criterion_6_limits(record_property):
    flat = greenshields_spec(lanes=3, classes=2, nu=1e9, free_speeds=[120.0, 100.0, 80.0],
                             accessible={"1": ("1", "2", "3"), "2": ("2", "3")},
                             theta={("1", "1"): 5.0, ("3", "2"): -3.0})
    b = solve_batch(flat, np.array([[30.0, 20.0]]))
    shares = b.partial[0] / b.rho_bar[0]
    dev = max(
        float(np.abs(shares[:, 0] - 1 / 3).max()),
        float(np.abs(shares[1:, 1] - 0.5).max()),
        float(shares[0, 1]),
    )
    # lane 1 stays fastest even when it carries all 20 veh/km
    sharp = greenshields_spec(lanes=2, classes=1, nu=1e-3, free_speeds=[120.0, 100.0])
    s = solve_batch(sharp, np.array([[20.0]]))
    top = float(s.partial[0, 0, 0] / 20.0)
    record_property("detail", f"max deviation from uniform {dev:.1e}, top-lane share {top:.6f}")
    assert b.converged.all() and s.converged.all()
    assert dev <= 1e-6
    assert top >= 0.999


@pytest.mark.criterion("7", "single-lane wave speed equals |vf (1 - 2 rho / jam)|")
def test_criterion_7_wave_speed(record_property):
    vf, jam = 100.0, 200.0
    spec = greenshields_spec(lanes=1, classes=1, free_speeds=[vf], jam=jam)
    worst = 0.0
    for rho in (0.0, 50.0, 100.0, 150.0, 200.0):
        got = max_wave_speed(spec, {"1": rho})
        exact = abs(vf * (1 - 2 * rho / jam))
        assert math.isclose(got, exact, rel_tol=1e-3, abs_tol=1e-12), (rho, got, exact)
        if exact:
            worst = max(worst, abs(got - exact) / exact)
    record_property("detail", f"max relative error {worst:.1e}")


@pytest.mark.criterion("8", "nu recovery: grid within one step, regression within 2%, noisy within 25%")
def test_criterion_8_estimators(record_property):
    grid = nu_grid()
    step = grid[1] / grid[0]
    worst = {"grid": 0.0, "regression": 0.0, "grid_noisy": 0.0, "regression_noisy": 0.0}
    for nu in (17.0, 30.0, 100.0, 500.0):
        clean = synthetic_samples(nu, count=1000, seed=int(nu))
        noisy = synthetic_samples(nu, count=1000, seed=int(nu) + 1, speed_noise=0.10)
        g = estimate_nu_grid(clean).nu
        assert math.isfinite(g) and g / nu <= step * (1 + 1e-12) and nu / g <= step * (1 + 1e-12), (nu, g)
        worst["grid"] = max(worst["grid"], abs(math.log(g / nu)) / math.log(step))
        for est in estimate_nu_regression(clean).values():
            worst["regression"] = max(worst["regression"], abs(est.nu / nu - 1))
        gn = estimate_nu_grid(noisy).nu
        worst["grid_noisy"] = max(worst["grid_noisy"], abs(gn / nu - 1))
        for est in estimate_nu_regression(noisy).values():
            worst["regression_noisy"] = max(worst["regression_noisy"], abs(est.nu / nu - 1))
    record_property(
        "detail",
        f"grid {worst['grid']:.2f} steps, regression {worst['regression']:.1e}, "
        f"noisy grid {worst['grid_noisy']:.1%}, noisy regression {worst['regression_noisy']:.1%}",
    )
    assert worst["regression"] <= 0.02
    assert worst["grid_noisy"] <= 0.25
    assert worst["regression_noisy"] <= 0.25


@pytest.mark.criterion("9", "remap needs fewer flux evaluations than Rusanov")
def test_criterion_9_efficiency(converged_runs, record_property):
    remap = converged_runs["remap400"].flux_evaluations
    rus = converged_runs["rusanov800"].flux_evaluations
    record_property("detail", f"remap {remap}, rusanov {rus}")
    assert 0 < remap < rus


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
