"""Estimating the Logit sensitivity nu from per-lane detector records.

Two estimators, both for homogeneous traffic (no lane preferences):

* grid search minimising the mean squared gap between observed lane shares
  rho_i / rho and the Logit shares softmax(v / nu);
* regression through the origin of v_i - v_j on ln(rho_i / rho_j), whose
  slope is nu.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DEFAULT_BANDS: tuple[tuple[float, float], ...] = ((5, 10), (10, 20), (20, 30), (30, 40))
GRID_MIN, GRID_MAX, GRID_SIZE = 17.0, 2500.0, 60
INFINITE_TOL = 1e-6


class EstimationError(ValueError):
    pass


@dataclass(frozen=True)
class DetectorSample:
    station: str
    timestamp: str
    lanes: tuple[str, ...]
    density: tuple[float, ...]
    speed: tuple[float, ...]

    def __post_init__(self):
        if not (len(self.lanes) == len(self.density) == len(self.speed)):
            raise EstimationError("lanes, density and speed must have equal length")
        if any(r < 0 or not math.isfinite(r) for r in self.density):
            raise EstimationError(f"{self.station}@{self.timestamp}: densities must be finite and >= 0")

    @property
    def total_density(self) -> float:
        return float(sum(self.density))

    @property
    def mean_lane_density(self) -> float:
        return self.total_density / len(self.lanes)

    @property
    def usable(self) -> bool:
        return sum(r > 0 for r in self.density) >= 2


@dataclass(frozen=True)
class NuEstimate:
    nu: float
    sse: float
    sample_count: int
    density_band: tuple[float, float] | None = None

    @property
    def infinite(self) -> bool:
        return math.isinf(self.nu)

    def to_dict(self) -> dict:
        return {
            "nu": "infinite" if self.infinite else self.nu,
            "sse": self.sse,
            "sample_count": self.sample_count,
            "density_band": None if self.density_band is None else list(self.density_band),
        }


def nu_grid(size: int = GRID_SIZE, low: float = GRID_MIN, high: float = GRID_MAX) -> np.ndarray:
    return np.geomspace(low, high, size)


def in_band(sample: DetectorSample, band: tuple[float, float] | None) -> bool:
    """Bands apply to the mean density per lane, in [low, high)."""
    if band is None:
        return True
    return band[0] <= sample.mean_lane_density < band[1]


def _padded(samples: Sequence[DetectorSample]):
    k = max(len(s.lanes) for s in samples)
    p = np.zeros((len(samples), k))
    v = np.zeros((len(samples), k))
    mask = np.zeros((len(samples), k), dtype=bool)
    for n, s in enumerate(samples):
        m = len(s.lanes)
        p[n, :m] = np.asarray(s.density) / s.total_density
        v[n, :m] = s.speed
        mask[n, :m] = True
    return p, v, mask


def sse_curve(samples: Sequence[DetectorSample], grid: np.ndarray) -> np.ndarray:
    """Mean over samples of sum_i (observed share - Logit share)^2, one value per nu."""
    p, v, mask = _padded(samples)
    out = np.empty(len(grid))
    for g, nu in enumerate(grid):
        u = np.where(mask, v / nu, -np.inf)
        e = np.exp(u - u.max(axis=1, keepdims=True))
        theo = e / e.sum(axis=1, keepdims=True)
        out[g] = (((p - theo) ** 2) * mask).sum() / len(samples)
    return out


def estimate_nu_grid(
    samples: Iterable[DetectorSample],
    band: tuple[float, float] | None = None,
    grid: np.ndarray | None = None,
) -> NuEstimate:
    """Grid-search estimate of nu over the usable samples in ``band``.

    Reported as infinite when the largest grid value fits within
    ``INFINITE_TOL`` of the best one.
    """
    grid = nu_grid() if grid is None else np.asarray(grid, dtype=float)
    chosen = [s for s in samples if s.usable and in_band(s, band)]
    if not chosen:
        raise EstimationError(f"no usable samples in density band {band}")
    curve = sse_curve(chosen, grid)
    best = int(np.argmin(curve))
    nu = float(grid[best])
    if curve[-1] - curve[best] <= INFINITE_TOL:
        nu = math.inf
    return NuEstimate(nu, float(curve[best]), len(chosen), band)


def estimate_nu_regression(
    samples: Iterable[DetectorSample], min_variance: float = 1e-12
) -> dict[tuple[str, str], NuEstimate]:
    """Per lane pair (i, j): least-squares slope of v_i - v_j on ln(rho_i / rho_j) through the origin."""
    pairs = _pair_data(samples)
    if not pairs:
        raise EstimationError("insufficient data: no lane pair with positive densities")
    out = {}
    for key, (x, y) in pairs.items():
        sxx = float(x @ x)
        if sxx <= min_variance * len(x):
            out[key] = NuEstimate(math.inf, float(np.mean(y * y)), len(x))
            continue
        slope = float(x @ y) / sxx
        out[key] = NuEstimate(slope, float(np.mean((y - slope * x) ** 2)), len(x))
    return out


def regression_with_intercept(samples: Iterable[DetectorSample]) -> dict[tuple[str, str], tuple[float, float]]:
    """Diagnostic (slope, intercept) fits per lane pair."""
    out = {}
    for key, (x, y) in _pair_data(samples).items():
        if len(x) < 2 or np.ptp(x) == 0:
            out[key] = (math.inf, float(np.mean(y)))
            continue
        slope, intercept = np.polyfit(x, y, 1)
        out[key] = (float(slope), float(intercept))
    return out


def _pair_data(samples):
    data = defaultdict(lambda: ([], []))
    for s in samples:
        idx = {lane: n for n, lane in enumerate(s.lanes)}
        for a, b in combinations(sorted(idx), 2):
            ra, rb = s.density[idx[a]], s.density[idx[b]]
            if ra > 0 and rb > 0:
                xs, ys = data[(a, b)]
                xs.append(math.log(ra / rb))
                ys.append(s.speed[idx[a]] - s.speed[idx[b]])
    return {k: (np.array(x), np.array(y)) for k, (x, y) in sorted(data.items())}


def read_samples(path: str | Path) -> list[DetectorSample]:
    """Long-format CSV ``station,timestamp,lane,density,speed`` -> samples per (station, timestamp)."""
    path = Path(path)
    rows = defaultdict(list)
    order = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"station", "timestamp", "lane", "density", "speed"}
        if reader.fieldnames is None:
            raise EstimationError(f"{path}: empty file")
        missing = need - set(reader.fieldnames)
        if missing:
            raise EstimationError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                density, speed = float(row["density"]), float(row["speed"])
            except (TypeError, ValueError):
                raise EstimationError(f"{path}:{lineno}: density and speed must be numbers") from None
            if not (math.isfinite(density) and math.isfinite(speed)) or density < 0:
                raise EstimationError(f"{path}:{lineno}: density must be >= 0 and values finite")
            key = (row["station"], row["timestamp"])
            if key not in rows:
                order.append(key)
            if any(r[0] == row["lane"] for r in rows[key]):
                raise EstimationError(f"{path}:{lineno}: duplicate lane {row['lane']!r} for {key}")
            rows[key].append((row["lane"], density, speed))
    if not rows:
        raise EstimationError(f"{path}: no data rows")
    samples = []
    for key in order:
        recs = sorted(rows[key])
        samples.append(
            DetectorSample(
                key[0], key[1], tuple(r[0] for r in recs), tuple(r[1] for r in recs), tuple(r[2] for r in recs)
            )
        )
    if not any(len(s.lanes) >= 2 for s in samples):
        raise EstimationError(f"{path}: insufficient lanes (every record has a single lane)")
    return samples


def write_samples(path: str | Path, samples: Iterable[DetectorSample]):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["station", "timestamp", "lane", "density", "speed"])
        for s in samples:
            for lane, r, v in zip(s.lanes, s.density, s.speed):
                w.writerow([s.station, s.timestamp, lane, repr(float(r)), repr(float(v))])


def synthetic_samples(
    nu: float,
    count: int = 1000,
    lanes: int = 3,
    seed: int = 0,
    speed_noise: float = 0.0,
    speed_range: tuple[float, float] = (20.0, 120.0),
    lane_density_range: tuple[float, float] = (5.0, 40.0),
    station: str = "SYN",
) -> list[DetectorSample]:
    """Records drawn from the homogeneous Logit split.

    Lane speeds are uniform on ``speed_range``; lane densities follow
    rho * softmax(v / nu). With ``speed_noise`` the recorded speeds are
    multiplied by 1 + N(0, speed_noise).
    """
    rng = np.random.default_rng(seed)
    names = tuple(str(i + 1) for i in range(lanes))
    out = []
    for n in range(count):
        v = rng.uniform(*speed_range, size=lanes)
        rho = lanes * rng.uniform(*lane_density_range)
        u = v / nu
        share = np.exp(u - u.max())
        share /= share.sum()
        recorded = v * (1.0 + speed_noise * rng.standard_normal(lanes)) if speed_noise else v
        out.append(DetectorSample(station, f"{n:06d}", names, tuple(rho * share), tuple(recorded)))
    return out


def band_label(band: tuple[float, float]) -> str:
    return f"{band[0]:g}-{band[1]:g}"


def estimate_report(
    samples: Sequence[DetectorSample],
    bands: Sequence[tuple[float, float]] = DEFAULT_BANDS,
    grid: np.ndarray | None = None,
) -> tuple[dict, list[tuple[str, str, float, float]]]:
    """Per-station, per-band grid estimates plus per-pair regressions.

    Returns the JSON-ready report and the sse-vs-nu rows
    ``(station, band, nu, sse)``.
    """
    grid = nu_grid() if grid is None else np.asarray(grid, dtype=float)
    by_station = defaultdict(list)
    for s in samples:
        by_station[s.station].append(s)
    report, curve_rows = {}, []
    for station in sorted(by_station):
        ss = by_station[station]
        entry = {"bands": {}, "regression": {}}
        for band in bands:
            label = band_label(band)
            chosen = [s for s in ss if s.usable and in_band(s, band)]
            if not chosen:
                entry["bands"][label] = None
                continue
            entry["bands"][label] = estimate_nu_grid(chosen, band, grid).to_dict()
            for nu, val in zip(grid, sse_curve(chosen, grid)):
                curve_rows.append((station, label, float(nu), float(val)))
        usable = [s for s in ss if s.usable]
        if usable:
            for (a, b), est in estimate_nu_regression(usable).items():
                entry["regression"][f"{a}-{b}"] = est.to_dict()
        report[station] = entry
    return report, curve_rows
