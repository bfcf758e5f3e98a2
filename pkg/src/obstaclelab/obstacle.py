"""The zero-obstacle problem ``laplacian(u) = g * 1{u > 0}``, ``u >= 0``, ``u = psi`` on the boundary.

Discretely this is the linear complementarity problem

    u >= 0,   w = A u + q >= 0,   u * w = 0,    q = g - B psi,

with ``A``, ``B`` from :func:`obstaclelab.elliptic.system_matrices`; ``w`` equals
``g - laplacian(u)``.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numba
import numpy as np
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree

from .elliptic import ScalarField, SolverError, SolverSettings, laplacian, system_matrices
from .grid_domain import DomainError, GridDomain, NodeMask, build_domain, eroded_mask

__all__ = [
    "ObstacleData",
    "ObstacleSolution",
    "solve_obstacle",
    "contact_threshold",
    "envelopes",
    "upper_data",
    "lower_data",
    "contact_symmetric_difference",
    "free_boundary_layer",
    "psor",
    "active_set",
]

log = logging.getLogger(__name__)

# active-set iterations before handing over to PSOR; the method is finite for
# M-matrices, so hitting this means a cycle caused by round-off
ACTIVE_SET_MAX_ITER = 500

# below this many unknowns the active set iteration starts cold
COARSE_START_MIN_NODES = 2_000


@dataclass(frozen=True, eq=False)
class ObstacleData:
    """Right-hand side ``g`` on interior nodes and boundary values ``psi``.

    ``lam`` and ``mu`` bound ``g`` from below and above; they default to the
    extreme values of ``g``.
    """

    g: np.ndarray
    psi: np.ndarray
    lam: float | None = None
    mu: float | None = None

    def __post_init__(self):
        g = np.array(self.g, dtype=float).ravel()
        psi = np.array(self.psi, dtype=float).ravel()
        if g.size == 0 or not (np.all(np.isfinite(g)) and np.all(np.isfinite(psi))):
            raise ValueError("obstacle data must be finite and non-empty")
        lam = float(g.min()) if self.lam is None else float(self.lam)
        mu = float(g.max()) if self.mu is None else float(self.mu)
        if not lam > 0:
            raise ValueError(f"lower bound lambda must be positive, got {lam}")
        if g.min() < lam * (1 - 1e-12) or g.max() > mu * (1 + 1e-12):
            raise ValueError(f"g leaves [{lam}, {mu}]: range is [{g.min()}, {g.max()}]")
        if psi.size and psi.min() < 0:
            raise ValueError(f"boundary data must be non-negative, min is {psi.min()}")
        g.setflags(write=False)
        psi.setflags(write=False)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "mu", mu)

    @classmethod
    def on(cls, domain: GridDomain, g, psi, lam=None, mu=None) -> ObstacleData:
        """Build data from callables of the coordinates or constants."""
        gi = domain.evaluate(g)[0] if callable(g) else np.broadcast_to(np.asarray(g, float), (domain.n_interior,))
        pb = domain.evaluate(psi)[1] if callable(psi) else np.broadcast_to(np.asarray(psi, float), (domain.n_boundary,))
        return cls(gi, pb, lam, mu)

    def fingerprint(self) -> str:
        return hashlib.sha1(self.g.tobytes() + b"|" + self.psi.tobytes()).hexdigest()

    def same_rhs(self, other: ObstacleData) -> bool:
        return bool(np.array_equal(self.g, other.g))

    def same_boundary(self, other: ObstacleData) -> bool:
        return bool(np.array_equal(self.psi, other.psi))


def upper_data(d1: ObstacleData, d2: ObstacleData) -> ObstacleData:
    """Data of the upper envelope: smaller ``g``, larger ``psi``."""
    return ObstacleData(np.minimum(d1.g, d2.g), np.maximum(d1.psi, d2.psi),
                        min(d1.lam, d2.lam), max(d1.mu, d2.mu))


def lower_data(d1: ObstacleData, d2: ObstacleData) -> ObstacleData:
    """Data of the lower envelope: larger ``g``, smaller ``psi``."""
    return ObstacleData(np.maximum(d1.g, d2.g), np.minimum(d1.psi, d2.psi),
                        min(d1.lam, d2.lam), max(d1.mu, d2.mu))


@dataclass(frozen=True, eq=False)
class ObstacleSolution:
    u: ScalarField
    contact: NodeMask
    noncontact: NodeMask
    complementarity_residual: float
    iterations: int
    threshold: float
    data: ObstacleData

    @property
    def domain(self) -> GridDomain:
        return self.u.domain

    @property
    def support(self) -> NodeMask:
        """Nodes where ``u`` is strictly positive (no threshold)."""
        return NodeMask(self.domain, self.u.interior > 0)


def contact_threshold(settings: SolverSettings, mu: float, spacing: float) -> float:
    return max(100 * settings.tolerance, 1e-2 * mu * spacing**2)


@numba.njit(cache=True)
def _psor_kernel(indptr, indices, data, diag, q, u, omega, tol, maxit):
    n = len(q)
    scale = 0.0
    for i in range(n):
        scale = max(scale, abs(q[i]) / diag[i])
    scale = max(scale, 1e-300)
    for it in range(maxit):
        for i in range(n):
            s = q[i]
            for k in range(indptr[i], indptr[i + 1]):
                s += data[k] * u[indices[k]]
            u[i] = max(0.0, u[i] - omega * s / diag[i])
        res = 0.0
        for i in range(n):
            s = q[i]
            for k in range(indptr[i], indptr[i + 1]):
                s += data[k] * u[indices[k]]
            res = max(res, abs(min(u[i], s / diag[i])))
        if res <= tol * scale:
            return it + 1, res / scale
    return -maxit, res / scale


def psor(A, q, omega=1.5, tol=1e-10, maxit=20_000, u0=None):
    """Projected SOR with lexicographic sweeps for ``LCP(A, q)``.

    Returns ``(u, sweeps, residual)``; raises :class:`SolverError` when the
    scaled natural residual stays above ``tol``.
    """
    A = A.tocsr()
    u = np.zeros(len(q)) if u0 is None else np.maximum(np.array(u0, dtype=float), 0.0)
    its, res = _psor_kernel(A.indptr, A.indices, A.data.astype(float), A.diagonal(),
                            np.asarray(q, float), u, float(omega), float(tol), int(maxit))
    if its < 0:
        raise SolverError(f"PSOR stalled after {maxit} sweeps (residual {res:.3e})", res)
    return u, its, res


def active_set(A, q, tol=1e-10, maxit=ACTIVE_SET_MAX_ITER, active=None):
    """Primal-dual active set iteration for ``LCP(A, q)`` with ``A`` an M-matrix.

    Returns ``(u, iterations)``; raises :class:`SolverError` on a cycle.
    """
    A = A.tocsr()
    n = len(q)
    diag = A.diagonal()
    active = (q > 0) if active is None else np.asarray(active, dtype=bool)
    for it in range(1, maxit + 1):
        free = ~active
        u = np.zeros(n)
        if free.any():
            Aff = A[free][:, free].tocsc()
            u[free] = spla.splu(Aff).solve(-q[free])
        w = A @ u + q
        w[free] = 0.0
        new_active = w - diag * u > 0
        if np.array_equal(new_active, active):
            return np.maximum(u, 0.0), it
        active = new_active
    raise SolverError(f"active set iteration did not settle in {maxit} steps")


def _natural_residual(A, q, u):
    d = A.diagonal()
    w = A @ u + q
    scale = max(np.abs(q / d).max(initial=0.0), np.abs(u).max(initial=0.0), 1e-300)
    return float(np.abs(np.minimum(u, w / d)).max(initial=0.0) / scale)


def solve_obstacle(domain: GridDomain, data: ObstacleData, settings: SolverSettings | None = None) -> ObstacleSolution:
    """Solve the discrete obstacle problem; results are memoised per domain."""
    settings = settings or SolverSettings()
    if data.g.shape != (domain.n_interior,) or data.psi.shape != (domain.n_boundary,):
        raise ValueError("obstacle data does not match the domain")
    cache = domain._cache.setdefault("obstacle", {})
    key = (data.fingerprint(), data.mu, settings)
    hit = cache.get(key)
    if hit is not None:
        return hit

    A, B = system_matrices(domain)
    q = data.g - B @ data.psi
    if settings.obstacle_method == "psor":
        u, its, _ = psor(A, q, settings.relaxation, settings.tolerance, settings.max_iterations)
    else:
        try:
            u, its = active_set(A, q, settings.tolerance, active=_initial_active(domain, data, settings))
        except SolverError:
            log.warning("active set cycled; finishing with PSOR")
            u, its, _ = psor(A, q, settings.relaxation, settings.tolerance, settings.max_iterations)
    res = _natural_residual(A, q, u)
    if res > settings.tolerance:
        raise SolverError(f"complementarity residual {res:.3e} exceeds tolerance", res)

    u.setflags(write=False)
    thr = contact_threshold(settings, data.mu, domain.spacing)
    contact = u <= thr
    sol = ObstacleSolution(
        u=ScalarField(domain, u, data.psi),
        contact=NodeMask(domain, contact),
        noncontact=NodeMask(domain, ~contact),
        complementarity_residual=res,
        iterations=its,
        threshold=thr,
        data=data,
    )
    cache[key] = sol
    return sol


def _coarse_domain(domain: GridDomain) -> GridDomain | None:
    if "coarse" not in domain._cache:
        try:
            coarse = build_domain(domain.spec.with_spacing(2 * domain.spacing))
        except DomainError:
            coarse = None
        domain._cache["coarse"] = coarse
    return domain._cache["coarse"]


def _initial_active(domain: GridDomain, data: ObstacleData, settings: SolverSettings) -> np.ndarray | None:
    """Contact set of the problem on the doubled grid, carried to this grid.

    Nested iteration: without it the active set front moves about one cell
    per iteration.
    """
    if domain.n_interior < COARSE_START_MIN_NODES:
        return None
    coarse = _coarse_domain(domain)
    if coarse is None:
        return None
    _, gi = cKDTree(domain.interior_coords).query(coarse.interior_coords)
    _, bi = cKDTree(domain.boundary_coords).query(coarse.boundary_coords)
    cdata = ObstacleData(data.g[gi], data.psi[bi], data.lam, data.mu)
    csol = solve_obstacle(coarse, cdata, settings)
    dist, ci = cKDTree(coarse.interior_coords).query(domain.interior_coords)
    return (csol.u.interior[ci] <= 0) & (dist < coarse.spacing)


def lcp_slack(solution: ObstacleSolution) -> np.ndarray:
    """``g - laplacian(u)`` at the interior nodes."""
    return solution.data.g - laplacian(solution.u)


def envelopes(domain: GridDomain, data1: ObstacleData, data2: ObstacleData,
              settings: SolverSettings | None = None):
    """Solutions for the upper and lower envelope data, in that order."""
    upper = solve_obstacle(domain, upper_data(data1, data2), settings)
    lower = solve_obstacle(domain, lower_data(data1, data2), settings)
    return upper, lower


def contact_symmetric_difference(s1: ObstacleSolution, s2: ObstacleSolution, eta: float = 0.0) -> NodeMask:
    """``(contact(s1) ^ contact(s2))`` restricted to nodes at least ``eta`` from the boundary."""
    if s1.domain is not s2.domain:
        raise ValueError("solutions live on different domains")
    diff = s1.contact ^ s2.contact
    if eta > 0:
        diff = diff & eroded_mask(s1.domain, eta)
    return diff


def _straddles(domain: GridDomain, classes: np.ndarray) -> np.ndarray:
    """Nodes whose closed stencil sees more than one value of ``classes``."""
    nb = domain.neighbors
    own = classes[:, None]
    other = np.where(nb >= 0, classes[np.maximum(nb, 0)], own)
    return np.any(other != own, axis=1)


def free_boundary_layer(*solutions: ObstacleSolution) -> NodeMask:
    """Nodes next to the free boundary of any of ``solutions``.

    A node is in the layer when its stencil touches both the contact and the
    non-contact set, by threshold or by exact sign.
    """
    domain = solutions[0].domain
    layer = np.zeros(domain.n_interior, dtype=bool)
    for s in solutions:
        layer |= _straddles(domain, s.contact.members)
        layer |= _straddles(domain, s.u.interior > 0)
    return NodeMask(domain, layer)
