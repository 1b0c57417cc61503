"""Network builders shared by the tests."""

from __future__ import annotations

import math

import numpy as np

from logitlanes.model import FundamentalDiagram, NetworkSpec


def greenshields_spec(lanes=2, classes=1, nu=12.5, free_speeds=None, jam=200.0, accessible=None, theta=None):
    lane_ids = tuple(str(i + 1) for i in range(lanes))
    class_ids = tuple(str(d + 1) for d in range(classes))
    free_speeds = free_speeds or [100.0] * lanes
    diagrams = {i: FundamentalDiagram.greenshields(v, jam) for i, v in zip(lane_ids, free_speeds)}
    accessible = accessible or {d: lane_ids for d in class_ids}
    return NetworkSpec(lane_ids, class_ids, accessible, diagrams, nu, theta or {})


def random_spec(rng: np.random.Generator, lanes=None, classes=None, nu=None) -> NetworkSpec:
    """Random network: Greenshields or triangular lanes, random access sets and preferences."""
    n_lanes = int(lanes or rng.integers(2, 5))
    n_classes = int(classes or rng.integers(1, 4))
    lane_ids = tuple(str(i + 1) for i in range(n_lanes))
    class_ids = tuple(str(d + 1) for d in range(n_classes))
    diagrams = {}
    for i in lane_ids:
        vf = float(rng.uniform(60, 130))
        jam = float(rng.uniform(120, 220))
        if rng.random() < 0.5:
            diagrams[i] = FundamentalDiagram.greenshields(vf, jam)
        else:
            diagrams[i] = FundamentalDiagram.triangular(vf, jam, float(rng.uniform(0.15, 0.35) * jam))
    accessible, theta = {}, {}
    for d in class_ids:
        size = int(rng.integers(1, n_lanes + 1))
        acc = tuple(sorted(rng.choice(lane_ids, size=size, replace=False), key=lane_ids.index))
        accessible[d] = acc
        for i in acc:
            theta[(i, d)] = float(rng.uniform(-10, 10))
    return NetworkSpec(lane_ids, class_ids, accessible, diagrams, float(nu or rng.uniform(5, 100)), theta)


def bisect(f, lo, hi, tol=1e-15):
    flo = f(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def riemann_oracle(rho1, rho2, nu=12.5, vf=100.0, jam=200.0):
    """Class 1 is confined to lane 1; class 2 splits by a scalar Logit equation solved by bisection."""

    def V(r):
        return vf * (1 - min(max(r, 0.0), jam) / jam)

    def g(phi):
        z = (V(rho1 + rho2 * phi) - V(rho2 * (1 - phi))) / nu
        return phi - 1 / (1 + math.exp(-z))

    phi = bisect(g, 0.0, 1.0)
    lane1, lane2 = rho1 + rho2 * phi, rho2 * (1 - phi)
    return {
        "phi": phi,
        "lane": (lane1, lane2),
        "flux": (rho1 * V(lane1), rho2 * (phi * V(lane1) + (1 - phi) * V(lane2))),
    }


def riemann_flux(rho):
    o = riemann_oracle(*rho)
    return np.array(o["flux"])
