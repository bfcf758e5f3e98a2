"""Discrete Green's function, Poisson kernel and their uniform bounds.

Sign convention: ``laplacian(G(., y)) = delta_y`` with zero boundary values, so
``G <= 0`` in the interior.  The discrete delta is ``1/h^n`` at the pole.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .elliptic import ScalarField, SolverSettings, solve_interior, system_matrices
from .grid_domain import GridDomain, eroded_mask

__all__ = [
    "KernelBundle",
    "KernelError",
    "greens_column",
    "represent",
    "harmonic_measure",
    "poisson_kernel_row",
    "kernel_bounds",
    "uniform_kernel_bounds",
]


class KernelError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class KernelBundle:
    pole: int
    G_field: ScalarField
    K_boundary: np.ndarray
    G_lower: float
    G_upper: float
    K_lower: float
    K_upper: float
    delta: float
    eta: float

    @property
    def ybar(self) -> np.ndarray:
        return self.G_field.domain.interior_coords[self.pole]


def _check_pole(domain: GridDomain, pole: int) -> int:
    pole = int(pole)
    if not 0 <= pole < domain.n_interior:
        raise KernelError(f"pole {pole} is not an interior node")
    return pole


def greens_column(domain: GridDomain, pole: int, settings: SolverSettings | None = None) -> ScalarField:
    """``G(., pole)``: the Dirichlet solution for a unit point source at ``pole``."""
    pole = _check_pole(domain, pole)
    cache = domain._cache.setdefault("green", {})
    if pole not in cache:
        e = np.zeros(domain.n_interior)
        e[pole] = 1.0
        z = solve_interior(domain, e, settings or SolverSettings())
        g = -z / domain.cell_volume
        g.setflags(write=False)
        cache[pole] = ScalarField(domain, g, np.zeros(domain.n_boundary))
    return cache[pole]


def represent(domain: GridDomain, f, x: int, settings: SolverSettings | None = None) -> float:
    """``h^n * sum_y G(x, y) f(y)``, the Riemann sum of the Green representation at node ``x``."""
    f = np.broadcast_to(np.asarray(f, dtype=float), (domain.n_interior,))
    G = greens_column(domain, x, settings).interior
    return float(domain.cell_volume * (G @ f))


def harmonic_measure(domain: GridDomain, pole: int, settings: SolverSettings | None = None) -> np.ndarray:
    """Discrete harmonic measure of each boundary node seen from ``pole``.

    Entry ``b`` is the value at the pole of the harmonic function with boundary
    data equal to the indicator of ``b``.  By symmetry of the system matrix
    this is ``-h^n * (B^T G(., pole))_b``, so one solve serves every ``b``.
    """
    _, B = system_matrices(domain)
    G = greens_column(domain, pole, settings).interior
    return -domain.cell_volume * (B.T @ G)


def poisson_kernel_row(domain: GridDomain, pole: int, settings: SolverSettings | None = None) -> np.ndarray:
    """``K(pole, b)``: harmonic measure per unit surface weight at each boundary node.

    Boundary nodes that no stencil arm reaches (convex polygon corners) carry
    zero harmonic measure and get ``K = 0``.
    """
    return harmonic_measure(domain, pole, settings) / domain.boundary_weights


def _reached(domain: GridDomain) -> np.ndarray:
    reached = np.zeros(domain.n_boundary, dtype=bool)
    reached[domain.boundary_neighbors[domain.boundary_neighbors >= 0]] = True
    return reached


def kernel_bounds(domain: GridDomain, pole: int, delta: float, eta: float,
                  settings: SolverSettings | None = None) -> KernelBundle:
    """Extremes of ``-G(., pole)`` and ``K(pole, .)`` used by the contact-set bounds.

    ``G_lower`` is the minimum of ``-G`` over nodes at least ``eta`` from the
    boundary, ``G_upper`` its maximum outside the open ball of radius
    ``delta`` about the pole.  ``K_lower``/``K_upper`` range over boundary
    nodes reached by the stencil.
    """
    pole = _check_pole(domain, pole)
    if eta <= 0:
        raise KernelError(f"eta must be positive, got {eta}")
    if domain.dist_to_boundary[pole] < delta - 1e-9 * domain.spacing:
        raise KernelError(
            f"pole-too-close-to-boundary: distance {domain.dist_to_boundary[pole]:.4g} < delta {delta:.4g}"
        )
    y = domain.interior_coords[pole]
    in_ball = np.linalg.norm(domain.interior_coords - y, axis=1) < delta
    if not in_ball.any():
        raise KernelError("the ball about the pole contains no node")
    core = eroded_mask(domain, eta).members
    if not core.any():
        raise KernelError(f"no node lies at distance >= eta = {eta} from the boundary")
    if in_ball.all():
        raise KernelError("the ball about the pole covers every node")

    G = greens_column(domain, pole, settings)
    K = poisson_kernel_row(domain, pole, settings)
    negG = -G.interior
    Kr = K[_reached(domain)]
    return KernelBundle(
        pole=pole,
        G_field=G,
        K_boundary=K,
        G_lower=float(negG[core].min()),
        G_upper=float(negG[~in_ball].max()),
        K_lower=float(Kr.min()),
        K_upper=float(Kr.max()),
        delta=float(delta),
        eta=float(eta),
    )


def uniform_kernel_bounds(domain: GridDomain, delta: float, eta: float, stride: int = 8,
                          settings: SolverSettings | None = None) -> dict:
    """Bounds made uniform over poles on a coarse subsample of the ``delta``-eroded domain.

    Takes every ``stride``-th eligible node in lexicographic order and returns
    the worst case of each bound (smallest lower bounds, largest upper bounds).
    """
    poles = np.flatnonzero(eroded_mask(domain, delta).members)[::stride]
    if len(poles) == 0:
        raise KernelError(f"no pole at distance >= {delta} from the boundary")
    out = {"G_lower": np.inf, "G_upper": 0.0, "K_lower": np.inf, "K_upper": 0.0, "poles": len(poles)}
    for p in poles:
        b = kernel_bounds(domain, p, delta, eta, settings)
        out["G_lower"] = min(out["G_lower"], b.G_lower)
        out["G_upper"] = max(out["G_upper"], b.G_upper)
        out["K_lower"] = min(out["K_lower"], b.K_lower)
        out["K_upper"] = max(out["K_upper"], b.K_upper)
    return out
