"""Run a scenario with any of the four integrators."""

from __future__ import annotations

from .equilibrium import DEFAULT_SETTINGS, SolverSettings
from .euler import EulerRunConfig, RunResult, run
from .lagrange import LagrangeRunConfig, LagrangeRunResult, run_lagrange
from .scenario import Scenario, normalize_scheme


def run_scenario(
    scenario: Scenario,
    scheme: str | None = None,
    cells: int | None = None,
    cfl: float | None = None,
    group_size: float | None = None,
    duration: float | None = None,
    output_cells: int | None = None,
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> RunResult | LagrangeRunResult:
    """Overrides fall back to the scenario's ``run`` section.

    For the Lagrangian scheme the initial groups are built from the scenario
    sampled on ``cells`` cells, and snapshots are binned onto ``output_cells``
    (default ``cells``).
    """
    p = scenario.run
    scheme = normalize_scheme(scheme or p.scheme)
    cells = int(cells or p.cells)
    cfl = float(cfl if cfl is not None else p.cfl)
    duration = float(duration if duration is not None else p.duration)
    every = p.snapshot_every
    if scheme == "lagrange":
        cfg = LagrangeRunConfig(
            duration=duration,
            group_size=float(group_size if group_size is not None else p.group_size),
            cfl=cfl,
            cells=int(output_cells or cells),
            snapshot_every=every,
        )
        return run_lagrange(scenario.network, scenario.grid(cells), cfg, settings)
    cfg = EulerRunConfig(scheme, cells, cfl, duration, every)
    return run(scenario.network, scenario.grid(cells), cfg, settings)
