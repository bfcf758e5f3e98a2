"""Reference answers computed without the package's solvers."""

from __future__ import annotations

import itertools

import numpy as np


def lcp_enumerate(A: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Solve ``u >= 0, Au + q >= 0, u.(Au+q) = 0`` by trying every free set.

    Exponential in ``len(q)``; fine up to a dozen unknowns.
    """
    A = np.asarray(A, dtype=float)
    n = len(q)
    found = []
    for mask in itertools.product((False, True), repeat=n):
        free = np.array(mask)
        u = np.zeros(n)
        if free.any():
            u[free] = np.linalg.solve(A[np.ix_(free, free)], -q[free])
        w = A @ u + q
        if u.min() >= -1e-12 and w.min() >= -1e-12:
            found.append(u)
    if not found:
        raise AssertionError("no complementary solution found")
    return found[0]


def dense_laplacian_1d(n: int, h: float):
    """``A`` and ``B`` for the 3-point Laplacian on n interior nodes (two boundary values)."""
    A = (2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)) / h**2
    B = np.zeros((n, 2))
    B[0, 0] = B[-1, 1] = 1 / h**2
    return A, B


def obstacle_1d(x, g: float, psi: float):
    """Symmetric obstacle solution on (-1, 1) with constant g and boundary value psi."""
    r = 1.0 - np.sqrt(2 * psi / g)
    return 0.5 * g * np.maximum(np.abs(x) - r, 0.0) ** 2, r


def obstacle_radial(r, g: float, a: float):
    """Radial solution on the unit disk whose contact set is the disk of radius ``a``."""
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        u = g / 4 * (r**2 - a**2) - g * a**2 / 2 * np.log(r / a)
    return np.where(r > a, u, 0.0)


def green_interval(x, y, a: float, b: float):
    """Green's function of ``u''`` on (a, b) with zero end values (non-positive)."""
    lo, hi = np.minimum(x, y), np.maximum(x, y)
    return (lo - a) * (hi - b) / (b - a)


def green_disk(x, y):
    """Green's function of the unit disk, ``laplacian G = delta``."""
    x, y = np.atleast_2d(x), np.asarray(y, dtype=float)
    ny = np.linalg.norm(y)
    d = np.linalg.norm(x - y, axis=1)
    if ny == 0:
        return np.log(d) / (2 * np.pi)
    ystar = y / ny**2
    return (np.log(d) - np.log(ny * np.linalg.norm(x - ystar, axis=1))) / (2 * np.pi)


def poisson_disk(y, x):
    """Poisson kernel of the unit disk from interior point ``y`` to boundary points ``x``."""
    y = np.asarray(y, dtype=float)
    return (1 - y @ y) / (2 * np.pi * np.sum((np.atleast_2d(x) - y) ** 2, axis=1))


def lattice_points_in_union(rects, h: float):
    """Lattice points strictly inside a union of closed boxes, by brute force.

    With box corners on the lattice, a lattice point is interior exactly when
    the eight points at distance h/4 around it all lie in the closed union.
    """
    lo = min(min(r[0][0], r[1][0]) for r in rects)
    hi = max(max(r[0][1], r[1][1]) for r in rects)
    ticks = np.arange(np.floor(lo / h), np.ceil(hi / h) + 1) * h
    probes = [(dx, dy) for dx in (-h / 4, 0, h / 4) for dy in (-h / 4, 0, h / 4) if dx or dy]
    pts = []
    for x in ticks:
        for y in ticks:
            if all(_inside_closed(x + dx, y + dy, rects) for dx, dy in probes):
                pts.append((round(x / h), round(y / h)))
    return sorted(pts)


def _inside_closed(x, y, rects):
    return any(x0 <= x <= x1 and y0 <= y <= y1 for (x0, x1), (y0, y1) in rects)
