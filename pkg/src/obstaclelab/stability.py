"""Linear stability and non-degeneracy of contact sets under data perturbations.

For two data sets ``(g1, psi1)``, ``(g2, psi2)`` with solutions ``u1``, ``u2``:

* stability:  |(C(u1) ^ C(u2)) n D_eta| <= C1 |psi1-psi2|_{L1(bdry)} + C2 |g1-g2|_{L1(N(v_up))}
* non-degeneracy (psi1 >= psi2, g1 <= g2):
  |C(u1) ^ C(u2)| >= C3 |psi1-psi2|_{L1(bdry)} + C4 |g1-g2|_{L1(N(u1) n D_eta)}

where ``C`` and ``N`` are contact and non-contact sets, ``D_eta`` the nodes at
distance >= eta from the boundary, and

    C1 = K_up / (lam G_lo),  C2 = G_up / (lam G_lo),
    C3 = K_lo / (mu G_up),   C4 = G_lo / (mu G_up)

with the Green's and Poisson-kernel bounds taken at a pole deep inside the
relevant contact set.  Discrete contact sets are resolved to one cell, so each
inequality is checked with an allowance equal to the measure of the
free-boundary cell layer.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .elliptic import ScalarField, SolverSettings, laplacian, solve_dirichlet
from .grid_domain import GridDomain, NodeMask, eroded_mask, inscribed_ball, mask_depth
from .kernels import KernelError, kernel_bounds
from .obstacle import (
    ObstacleData,
    ObstacleSolution,
    contact_symmetric_difference,
    free_boundary_layer,
    lower_data,
    solve_obstacle,
    upper_data,
)

__all__ = [
    "Scenario",
    "AuxiliaryBundle",
    "BoundReport",
    "DecompositionReport",
    "SweepReport",
    "l1_boundary",
    "l1_interior",
    "build_auxiliaries",
    "identity_residual",
    "identity_checks",
    "verify_stability",
    "verify_nondegeneracy",
    "decomposition_check",
    "sweep",
]

log = logging.getLogger(__name__)

MIN_RESOLVED_CELLS = 10


@dataclass(frozen=True, eq=False)
class Scenario:
    """Two admissible data sets on one domain.

    Both data sets are given the common bounds ``lam = min`` and ``mu = max``
    so that every solution derived from them uses the same contact threshold.
    ``eta`` defaults to four grid spacings.
    """

    domain: GridDomain
    data1: ObstacleData
    data2: ObstacleData
    eta: float | None = None
    pole: int | None = None
    delta: float | None = None
    label: str = ""

    def __post_init__(self):
        for d in (self.data1, self.data2):
            if d.g.shape != (self.domain.n_interior,) or d.psi.shape != (self.domain.n_boundary,):
                raise ValueError(f"scenario {self.label!r}: data does not match the domain")
        lam = min(self.data1.lam, self.data2.lam)
        mu = max(self.data1.mu, self.data2.mu)
        object.__setattr__(self, "data1", ObstacleData(self.data1.g, self.data1.psi, lam, mu))
        object.__setattr__(self, "data2", ObstacleData(self.data2.g, self.data2.psi, lam, mu))
        eta = 4 * self.domain.spacing if self.eta is None else float(self.eta)
        if not eta > 0:
            raise ValueError(f"scenario {self.label!r}: eta must be positive")
        object.__setattr__(self, "eta", eta)

    @property
    def lam(self) -> float:
        return self.data1.lam

    @property
    def mu(self) -> float:
        return self.data1.mu

    @property
    def monotone(self) -> bool:
        """psi1 >= psi2 on the boundary and g1 <= g2 in the interior."""
        return bool(np.all(self.data1.psi >= self.data2.psi) and np.all(self.data1.g <= self.data2.g))

    def solve(self, data: ObstacleData, settings: SolverSettings) -> ObstacleSolution:
        return solve_obstacle(self.domain, data, settings)

    def intermediate(self, settings: SolverSettings) -> ObstacleSolution:
        """The solution for (max g, max psi) that splits the stability proof in two."""
        d1, d2 = self.data1, self.data2
        data = ObstacleData(np.maximum(d1.g, d2.g), np.maximum(d1.psi, d2.psi), self.lam, self.mu)
        return self.solve(data, settings)


@dataclass(frozen=True, eq=False)
class AuxiliaryBundle:
    """Harmonic lift ``upsilon``, source lift ``Phi`` and the two ``h`` combinations."""

    upsilon: ScalarField
    Phi: ScalarField
    h_boundary: ScalarField
    h_rhs: ScalarField
    L_mask: NodeMask
    upper: ObstacleSolution
    lower: ObstacleSolution
    data1: ObstacleData
    data2: ObstacleData


@dataclass
class BoundReport:
    scenario_label: str
    mode: str
    status: str
    lhs: float | None = None
    boundary_term: float | None = None
    interior_term: float | None = None
    rhs: float | None = None
    c1: float | None = None
    c2: float | None = None
    c3: float | None = None
    c4: float | None = None
    g_lower: float | None = None
    g_upper: float | None = None
    k_lower: float | None = None
    k_upper: float | None = None
    lam: float | None = None
    mu: float | None = None
    eta: float | None = None
    delta: float | None = None
    ybar: list | None = None
    allowance: float | None = None
    slack: float | None = None
    holds: bool | None = None
    message: str = ""

    @property
    def applicable(self) -> bool:
        return self.status == "ok"

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["lambda"] = rec.pop("lam")
        return rec


@dataclass
class DecompositionReport:
    scenario_label: str
    status: str
    lhs: float = 0.0
    upper_part: float = 0.0
    lower_part: float = 0.0
    triangle_holds: bool | None = None
    contained: bool | None = None
    disjoint: bool | None = None
    union_exact: bool | None = None

    @property
    def holds(self) -> bool:
        flags = [f for f in (self.triangle_holds, self.contained, self.disjoint, self.union_exact) if f is not None]
        return all(flags)


@dataclass
class SweepReport:
    rows: list[dict] = field(default_factory=list)
    slope: float | None = None
    intercept: float | None = None
    slope_band: tuple[float, float] | None = None
    n_fitted: int = 0
    status: str = "ok"

    @property
    def all_hold(self) -> bool:
        return all(r["holds"] is not False for r in self.rows)


def l1_boundary(domain: GridDomain, phi1, phi2) -> float:
    """Surface-weighted L1 distance of two sets of boundary values."""
    diff = np.abs(np.asarray(phi1, dtype=float) - np.asarray(phi2, dtype=float))
    return float(np.broadcast_to(diff, (domain.n_boundary,)) @ domain.boundary_weights)


def l1_interior(domain: GridDomain, f1, f2, mask: NodeMask | None = None) -> float:
    """``h^n`` times the sum of ``|f1 - f2|`` over ``mask`` (all interior nodes by default)."""
    diff = np.broadcast_to(np.abs(np.asarray(f1, dtype=float) - np.asarray(f2, dtype=float)),
                           (domain.n_interior,))
    members = np.ones(domain.n_interior, dtype=bool) if mask is None else mask.members
    return float(domain.cell_volume * diff[members].sum())


def build_auxiliaries(domain: GridDomain, data1: ObstacleData, data2: ObstacleData,
                      upper: ObstacleSolution, lower: ObstacleSolution,
                      settings: SolverSettings | None = None) -> AuxiliaryBundle:
    settings = settings or SolverSettings()
    upsilon = solve_dirichlet(domain, 0.0, np.abs(data1.psi - data2.psi), settings)
    source = np.where(upper.noncontact.members, np.abs(data1.g - data2.g), 0.0)
    Phi = solve_dirichlet(domain, source, 0.0, settings)
    spread = upper.u - lower.u
    return AuxiliaryBundle(
        upsilon=upsilon,
        Phi=Phi,
        h_boundary=spread - upsilon,
        h_rhs=spread + Phi,
        L_mask=lower.contact ^ upper.contact,
        upper=upper,
        lower=lower,
        data1=data1,
        data2=data2,
    )


def _eligible(bundle: AuxiliaryBundle) -> np.ndarray:
    """Nodes whose stencil does not cross a free boundary of either envelope."""
    dom = bundle.upper.domain
    code = (bundle.upper.contact.members.astype(int)
            + 2 * bundle.lower.contact.members
            + 4 * (bundle.upper.u.interior > 0)
            + 8 * (bundle.lower.u.interior > 0))
    nb = dom.neighbors
    other = np.where(nb >= 0, code[np.maximum(nb, 0)], code[:, None])
    return np.all(other == code[:, None], axis=1)


def identity_residual(bundle: AuxiliaryBundle) -> tuple[float, float]:
    """Largest residuals of the two ``h`` identities over eligible nodes.

    ``laplacian(h_boundary) = 1_L * g`` applies when both data sets share ``g``;
    ``laplacian(h_rhs) = 1_L * max(g1, g2)`` applies when they share ``psi``.
    An identity that does not apply is reported as NaN.
    """
    d1, d2 = bundle.data1, bundle.data2
    ok = _eligible(bundle)
    L = bundle.L_mask.members
    res_b = res_r = float("nan")
    if d1.same_rhs(d2):
        r = laplacian(bundle.h_boundary) - np.where(L, d1.g, 0.0)
        res_b = float(np.abs(r[ok]).max(initial=0.0))
    if d1.same_boundary(d2):
        r = laplacian(bundle.h_rhs) - np.where(L, np.maximum(d1.g, d2.g), 0.0)
        res_r = float(np.abs(r[ok]).max(initial=0.0))
    return res_b, res_r


def identity_checks(scenario: Scenario, settings: SolverSettings | None = None) -> dict:
    """Run both auxiliary identities along the two sub-steps of the stability argument.

    The boundary step compares (max g, max psi) with (max g, min psi); the
    right-hand-side step compares (min g, max psi) with (max g, max psi).
    Also reports ``|h(ybar) + upsilon(ybar)|`` and ``|h(ybar) - Phi(ybar)|``
    at the deepest contact node of the upper envelope, and the largest
    ``|h + upsilon|`` over nodes where both envelopes vanish.
    """
    settings = settings or SolverSettings()
    d1, d2 = scenario.data1, scenario.data2
    lam, mu = scenario.lam, scenario.mu
    gmax = np.maximum(d1.g, d2.g)
    psimax = np.maximum(d1.psi, d2.psi)
    steps = {
        "boundary": (ObstacleData(gmax, psimax, lam, mu), ObstacleData(gmax, np.minimum(d1.psi, d2.psi), lam, mu)),
        "rhs": (ObstacleData(np.minimum(d1.g, d2.g), psimax, lam, mu), ObstacleData(gmax, psimax, lam, mu)),
    }
    out = {}
    for name, (a, b) in steps.items():
        upper = scenario.solve(upper_data(a, b), settings)
        lower = scenario.solve(lower_data(a, b), settings)
        bundle = build_auxiliaries(scenario.domain, a, b, upper, lower, settings)
        res_b, res_r = identity_residual(bundle)
        out[f"{name}_residual"] = res_b if name == "boundary" else res_r
        if name == "boundary":
            both = (upper.u.interior == 0) & (lower.u.interior == 0)
            gap = np.abs(bundle.h_boundary.interior + bundle.upsilon.interior)[both]
            out["boundary_contact_gap"] = float(gap.max(initial=0.0))
        if upper.contact:
            y, _ = inscribed_ball(upper.contact)
            if name == "boundary":
                gap = abs(bundle.h_boundary.interior[y] + bundle.upsilon.interior[y])
            else:
                gap = abs(bundle.h_rhs.interior[y] - bundle.Phi.interior[y])
            out[f"{name}_pole_gap"] = float(gap)
        else:
            out[f"{name}_pole_gap"] = float("nan")
    return out


def _ball(scenario: Scenario, contact: NodeMask) -> tuple[int, float]:
    if scenario.pole is None:
        pole, delta = inscribed_ball(contact)
    else:
        pole = int(scenario.pole)
        delta = float(max(mask_depth(contact)[pole] - scenario.domain.spacing, 0.0))
    if scenario.delta is not None:
        delta = float(scenario.delta)
    return pole, delta


def _hypothesis_ball(report: BoundReport, scenario: Scenario, contact: NodeMask):
    """Pick the pole and radius, or mark the report and return None."""
    h = scenario.domain.spacing
    if not contact:
        report.status = "inapplicable"
        report.message = "contact set is empty"
        return None
    pole, delta = _ball(scenario, contact)
    report.ybar = scenario.domain.interior_coords[pole].tolist()
    report.delta = delta
    if not contact.members[pole]:
        report.status = "inapplicable"
        report.message = "pole is not a contact node"
        return None
    if delta <= 2 * h:
        report.status = "under-resolved"
        report.message = f"ball radius {delta:.4g} <= 2 spacings"
        return None
    return pole, delta


def _bounds(report: BoundReport, scenario: Scenario, pole: int, delta: float, settings):
    try:
        kb = kernel_bounds(scenario.domain, pole, delta, scenario.eta, settings)
    except KernelError as exc:
        report.status = "inapplicable"
        report.message = str(exc)
        return None
    report.g_lower, report.g_upper = kb.G_lower, kb.G_upper
    report.k_lower, report.k_upper = kb.K_lower, kb.K_upper
    return kb


def verify_stability(scenario: Scenario, settings: SolverSettings | None = None) -> BoundReport:
    """Check the stability inequality on one scenario."""
    settings = settings or SolverSettings()
    dom = scenario.domain
    d1, d2 = scenario.data1, scenario.data2
    report = BoundReport(scenario.label, "stability", "ok", lam=scenario.lam, mu=scenario.mu, eta=scenario.eta)

    u1, u2 = scenario.solve(d1, settings), scenario.solve(d2, settings)
    upper = scenario.solve(upper_data(d1, d2), settings)
    lower = scenario.solve(lower_data(d1, d2), settings)
    report.lhs = contact_symmetric_difference(u1, u2, scenario.eta).measure
    report.boundary_term = l1_boundary(dom, d1.psi, d2.psi)
    report.interior_term = l1_interior(dom, d1.g, d2.g, upper.noncontact)

    ball = _hypothesis_ball(report, scenario, upper.contact)
    if ball is None:
        return report
    kb = _bounds(report, scenario, *ball, settings)
    if kb is None:
        return report
    lam = scenario.lam
    report.c1 = kb.K_upper / (lam * kb.G_lower)
    report.c2 = kb.G_upper / (lam * kb.G_lower)
    report.rhs = report.c1 * report.boundary_term + report.c2 * report.interior_term
    w = scenario.intermediate(settings)
    report.allowance = free_boundary_layer(u1, u2, upper, lower, w).measure
    report.slack = report.rhs - report.lhs
    report.holds = bool(report.lhs <= report.rhs + report.allowance)
    return report


def verify_nondegeneracy(scenario: Scenario, settings: SolverSettings | None = None) -> BoundReport:
    """Check the non-degeneracy inequality on one monotone scenario."""
    settings = settings or SolverSettings()
    dom = scenario.domain
    d1, d2 = scenario.data1, scenario.data2
    report = BoundReport(scenario.label, "nondegeneracy", "ok", lam=scenario.lam, mu=scenario.mu, eta=scenario.eta)
    if not scenario.monotone:
        report.status = "monotonicity-violated"
        report.message = "needs psi1 >= psi2 and g1 <= g2"
        return report

    u1, u2 = scenario.solve(d1, settings), scenario.solve(d2, settings)
    report.lhs = contact_symmetric_difference(u1, u2).measure
    report.boundary_term = l1_boundary(dom, d1.psi, d2.psi)
    report.interior_term = l1_interior(dom, d1.g, d2.g, u1.noncontact & eroded_mask(dom, scenario.eta))

    ball = _hypothesis_ball(report, scenario, u1.contact)
    if ball is None:
        return report
    kb = _bounds(report, scenario, *ball, settings)
    if kb is None:
        return report
    mu = scenario.mu
    report.c3 = kb.K_lower / (mu * kb.G_upper)
    report.c4 = kb.G_lower / (mu * kb.G_upper)
    report.rhs = report.c3 * report.boundary_term + report.c4 * report.interior_term
    w = scenario.solve(ObstacleData(d2.g, d1.psi, scenario.lam, mu), settings)
    report.allowance = free_boundary_layer(u1, u2, w).measure
    report.slack = report.lhs - report.rhs
    report.holds = bool(report.lhs >= report.rhs - report.allowance)
    return report


def decomposition_check(scenario: Scenario, settings: SolverSettings | None = None,
                        part: str = "a") -> DecompositionReport:
    """Set-level checks behind the two halves of the main argument.

    Part "a": the eroded symmetric difference of ``u1``, ``u2`` sits inside
    the envelopes' difference and is bounded by the two pieces split at the
    intermediate solution.  Part "b" (monotone data): with ``w`` solving
    (g2, psi1), the pieces ``C(u1) ^ C(w)`` and ``C(w) ^ C(u2)`` are disjoint
    and their union is ``C(u1) ^ C(u2)``.
    """
    settings = settings or SolverSettings()
    d1, d2 = scenario.data1, scenario.data2
    u1, u2 = scenario.solve(d1, settings), scenario.solve(d2, settings)
    report = DecompositionReport(scenario.label, "ok")
    if part == "a":
        upper = scenario.solve(upper_data(d1, d2), settings)
        lower = scenario.solve(lower_data(d1, d2), settings)
        w = scenario.intermediate(settings)
        eta = scenario.eta
        diff = contact_symmetric_difference(u1, u2, eta)
        first = contact_symmetric_difference(upper, w, eta)
        second = contact_symmetric_difference(w, lower, eta)
        report.lhs = diff.measure
        report.upper_part = first.measure
        report.lower_part = second.measure
        report.contained = diff.issubset(contact_symmetric_difference(upper, lower, eta))
        report.triangle_holds = bool(report.lhs <= report.upper_part + report.lower_part)
    elif part == "b":
        if not scenario.monotone:
            report.status = "monotonicity-violated"
            return report
        w = scenario.solve(ObstacleData(d2.g, d1.psi, scenario.lam, scenario.mu), settings)
        diff = contact_symmetric_difference(u1, u2)
        first = contact_symmetric_difference(u1, w)
        second = contact_symmetric_difference(w, u2)
        report.lhs = diff.measure
        report.upper_part = first.measure
        report.lower_part = second.measure
        report.disjoint = not (first & second)
        report.union_exact = (first | second) == diff
    else:
        raise ValueError(f"part must be 'a' or 'b', got {part!r}")
    return report


def sweep(family: Callable[[float], Scenario], eps_values: Sequence[float],
          settings: SolverSettings | None = None, threads: int = 1) -> SweepReport:
    """Evaluate a one-parameter family of scenarios and fit log(lhs) against log(eps).

    Each row carries the full symmetric-difference measure ``lhs``, the eroded
    one ``lhs_eta``, the stability bound ``rhs_term`` and, for monotone
    instances, the non-degeneracy bound ``lower_rhs``.  ``holds`` means
    ``lower_rhs <= lhs`` and ``lhs_eta <= rhs_term + allowance``.  Instances
    whose symmetric difference covers fewer than ten cells are left out of
    the fit.
    """
    settings = settings or SolverSettings()
    eps_values = [float(e) for e in eps_values]
    if len(eps_values) < 4:
        raise ValueError("sweep requires >= 4 points")

    def run(eps):
        sc = family(eps)
        st = verify_stability(sc, settings)
        nd = verify_nondegeneracy(sc, settings)
        lhs = contact_symmetric_difference(sc.solve(sc.data1, settings), sc.solve(sc.data2, settings)).measure
        cells = lhs / sc.domain.cell_volume
        upper_ok = st.holds if st.applicable else None
        lower_ok = bool(nd.rhs <= lhs) if nd.applicable else None
        checks = [c for c in (upper_ok, lower_ok) if c is not None]
        return {
            "eps": eps,
            "lhs": lhs,
            "lhs_eta": st.lhs,
            "boundary_term": st.boundary_term,
            "interior_term": st.interior_term,
            "rhs_term": st.rhs,
            "lower_rhs": nd.rhs if nd.applicable else None,
            "allowance": st.allowance,
            "holds": all(checks) if checks else None,
            "resolved": bool(eps > 0 and cells >= MIN_RESOLVED_CELLS),
            "status": st.status if st.status != "ok" else nd.status,
        }

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            rows = list(pool.map(run, eps_values))
    else:
        rows = [run(e) for e in eps_values]

    report = SweepReport(rows=rows)
    fit = [r for r in rows if r["resolved"]]
    report.n_fitted = len(fit)
    if len(fit) < 2:
        report.status = "insufficient resolution"
        return report
    x = np.log([r["eps"] for r in fit])
    y = np.log([r["lhs"] for r in fit])
    reg = stats.linregress(x, y)
    report.slope, report.intercept = float(reg.slope), float(reg.intercept)
    if len(fit) > 2:
        t = stats.t.ppf(0.975, len(fit) - 2)
        report.slope_band = (float(reg.slope - t * reg.stderr), float(reg.slope + t * reg.stderr))
    return report
