"""Discrete Laplacian and Dirichlet solvers.

The stencil at an interior node ``i`` is

    (1/h^2) * sum_a c_a (u_a - u_i),    c_a = h / arm_a,

where ``a`` runs over the 2n stencil arms.  Full arms have weight one; an arm
cut short by a curved boundary of length ``theta*h`` has weight ``1/theta``.
Couplings between interior nodes are all ``1/h^2`` so the system matrix is a
symmetric M-matrix, and the discrete Green's function is symmetric.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid_domain import GridDomain

__all__ = [
    "SolverError",
    "SolverSettings",
    "ScalarField",
    "system_matrices",
    "laplacian",
    "solve_dirichlet",
    "solve_interior",
    "maximum_principle_check",
]

log = logging.getLogger(__name__)

DIRECT_LIMIT = 300_000


class SolverError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class SolverSettings:
    """Tolerances and method choices shared by the linear and obstacle solvers.

    ``method`` picks the linear solver ("direct-sparse", "conjugate-gradient",
    or None to choose by problem size).  ``obstacle_method`` is "active-set"
    (primal-dual active set) or "psor"; ``relaxation`` is the PSOR factor.
    """

    tolerance: float = 1e-10
    max_iterations: int = 20_000
    method: str | None = None
    obstacle_method: str = "active-set"
    relaxation: float = 1.5

    def __post_init__(self):
        if not 0 < self.tolerance <= 1e-6:
            raise ValueError(f"tolerance must lie in (0, 1e-6], got {self.tolerance}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.method not in (None, "direct-sparse", "conjugate-gradient"):
            raise ValueError(f"unknown linear method {self.method!r}")
        if self.obstacle_method not in ("active-set", "psor"):
            raise ValueError(f"unknown obstacle method {self.obstacle_method!r}")
        if not 0 < self.relaxation < 2:
            raise ValueError("relaxation must lie in (0, 2)")

    def linear_method(self, n: int) -> str:
        if self.method is not None:
            return self.method
        return "direct-sparse" if n <= DIRECT_LIMIT else "conjugate-gradient"


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Values on the interior and boundary nodes of one domain."""

    domain: GridDomain
    interior: np.ndarray
    boundary: np.ndarray

    def __post_init__(self):
        if self.interior.shape != (self.domain.n_interior,):
            raise ValueError("interior values do not match the domain")
        if self.boundary.shape != (self.domain.n_boundary,):
            raise ValueError("boundary values do not match the domain")

    @classmethod
    def from_function(cls, domain, fn):
        return cls(domain, *domain.evaluate(fn))

    @classmethod
    def zeros(cls, domain):
        return cls(domain, np.zeros(domain.n_interior), np.zeros(domain.n_boundary))

    def __add__(self, other):
        return ScalarField(self.domain, self.interior + other.interior, self.boundary + other.boundary)

    def __sub__(self, other):
        return ScalarField(self.domain, self.interior - other.interior, self.boundary - other.boundary)

    def __neg__(self):
        return ScalarField(self.domain, -self.interior, -self.boundary)

    def laplacian(self) -> np.ndarray:
        return laplacian(self)


def system_matrices(domain: GridDomain):
    """Return ``(A, B)`` with ``laplacian(u) = -A @ u_int + B @ u_bdry``.

    ``A`` is the (N, N) symmetric M-matrix, ``B`` the non-negative (N, M)
    boundary coupling.  Cached on the domain.
    """
    cached = domain._cache.get("matrices")
    if cached is not None:
        return cached
    h2 = domain.spacing**2
    n, m = domain.n_interior, domain.n_boundary
    weights = domain.spacing / domain.arms
    rows = np.repeat(np.arange(n), domain.neighbors.shape[1])
    nb = domain.neighbors.ravel()
    bn = domain.boundary_neighbors.ravel()
    w = weights.ravel()
    inner = nb >= 0
    diag = weights.sum(axis=1)
    A = sp.coo_matrix(
        (np.concatenate([diag, -w[inner]]), (np.concatenate([np.arange(n), rows[inner]]),
                                               np.concatenate([np.arange(n), nb[inner]]))),
        shape=(n, n),
    ).tocsr() / h2
    outer = bn >= 0
    B = sp.coo_matrix((w[outer], (rows[outer], bn[outer])), shape=(n, m)).tocsr() / h2
    domain._cache["matrices"] = (A, B)
    return A, B


def laplacian(field: ScalarField, domain: GridDomain | None = None) -> np.ndarray:
    """Discrete Laplacian at every interior node."""
    if domain is not None and domain is not field.domain:
        raise ValueError("field does not belong to the given domain")
    A, B = system_matrices(field.domain)
    return B @ field.boundary - A @ field.interior


def _factor(domain: GridDomain):
    lu = domain._cache.get("lu")
    if lu is None:
        A, _ = system_matrices(domain)
        lu = spla.splu(A.tocsc())
        domain._cache["lu"] = lu
    return lu


def solve_interior(domain: GridDomain, rhs: np.ndarray, settings: SolverSettings) -> np.ndarray:
    """Solve ``A x = rhs`` with the domain's system matrix."""
    A, _ = system_matrices(domain)
    rhs = np.asarray(rhs, dtype=float)
    norm = np.linalg.norm(rhs)
    if norm == 0:
        return np.zeros(domain.n_interior)
    if settings.linear_method(domain.n_interior) == "direct-sparse":
        lu = _factor(domain)
        x = lu.solve(rhs)
        for _ in range(3):
            r = rhs - A @ x
            if np.linalg.norm(r) <= settings.tolerance * norm:
                break
            x += lu.solve(r)
    else:
        precond = spla.LinearOperator(A.shape, matvec=lambda v, d=1.0 / A.diagonal(): d * v)
        x, info = spla.cg(A, rhs, rtol=settings.tolerance, atol=0.0,
                          maxiter=settings.max_iterations, M=precond)
        if info > 0:
            res = np.linalg.norm(rhs - A @ x) / norm
            raise SolverError(f"conjugate gradient did not converge (residual {res:.3e})", res)
    res = np.linalg.norm(rhs - A @ x) / norm
    if res > settings.tolerance:
        raise SolverError(f"linear solve residual {res:.3e} exceeds tolerance", res)
    return x


def solve_dirichlet(domain: GridDomain, f, phi, settings: SolverSettings | None = None) -> ScalarField:
    """Solve ``laplacian(u) = f`` in the interior with ``u = phi`` on the boundary.

    ``f`` and ``phi`` may be arrays on the interior/boundary nodes or scalars.
    """
    settings = settings or SolverSettings()
    f = np.broadcast_to(np.asarray(f, dtype=float), (domain.n_interior,))
    phi = np.broadcast_to(np.asarray(phi, dtype=float), (domain.n_boundary,)).copy()
    _, B = system_matrices(domain)
    u = solve_interior(domain, B @ phi - f, settings)
    return ScalarField(domain, u, phi)


def maximum_principle_check(u: ScalarField, f, phi=None, tolerance: float = 1e-10) -> bool:
    """Check that the extrema of ``u`` sit on the boundary as the sign of ``f`` demands."""
    f = np.broadcast_to(np.asarray(f, dtype=float), u.interior.shape)
    phi = u.boundary if phi is None else np.broadcast_to(np.asarray(phi, dtype=float), u.boundary.shape)
    scale = max(1.0, np.abs(phi).max(initial=0.0), np.abs(u.interior).max(initial=0.0))
    slack = 10 * tolerance * scale
    ok = True
    if np.all(f >= 0):
        ok &= u.interior.max() <= phi.max() + slack
    if np.all(f <= 0):
        ok &= u.interior.min() >= phi.min() - slack
    return bool(ok)
