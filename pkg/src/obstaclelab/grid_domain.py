"""Finite-difference grids on bounded Lipschitz domains in one and two dimensions.

Polygonal domains (intervals, rectangles, unions of axis-aligned rectangles)
must have their corners on the lattice ``spacing * Z^n``; every stencil arm then
has full length.  Disks use fractional arms ending on the true circle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import shapely
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from shapely.geometry import box
from shapely.ops import unary_union

__all__ = [
    "DomainError",
    "DomainSpec",
    "GridDomain",
    "NodeMask",
    "build_domain",
    "eroded_mask",
    "mask_measure",
    "inscribed_ball",
    "mask_depth",
]

SHAPES = ("interval", "rectangle", "rect_union", "disk")

# interior nodes closer than this fraction of a cell to the circle are dropped,
# which bounds every arm from below and keeps the system matrix well conditioned
MIN_ARM_FRACTION = 1e-3

_ALIGN_TOL = 1e-9


class DomainError(ValueError):
    """Raised when a domain specification cannot be turned into a usable grid."""


@dataclass(frozen=True)
class DomainSpec:
    """Geometry and resolution of a domain.

    Use the named constructors rather than filling the fields by hand.
    """

    shape: str
    spacing: float
    bounds: tuple[float, float] | None = None
    rects: tuple[tuple[tuple[float, float], tuple[float, float]], ...] = ()
    center: tuple[float, float] | None = None
    radius: float | None = None

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise DomainError(f"unknown shape {self.shape!r}; expected one of {SHAPES}")
        if not np.isfinite(self.spacing) or self.spacing <= 0:
            raise DomainError(f"spacing must be positive, got {self.spacing}")
        if self.shape == "interval":
            if self.bounds is None or not self.bounds[0] < self.bounds[1]:
                raise DomainError(f"interval needs a < b, got {self.bounds}")
        elif self.shape in ("rectangle", "rect_union"):
            if not self.rects:
                raise DomainError(f"{self.shape} needs at least one rectangle")
            for (x0, x1), (y0, y1) in self.rects:
                if not (x0 < x1 and y0 < y1):
                    raise DomainError(f"degenerate rectangle {((x0, x1), (y0, y1))}")
        else:
            if self.center is None or self.radius is None or self.radius <= 0:
                raise DomainError("disk needs a center and a positive radius")

    @classmethod
    def interval(cls, a: float, b: float, spacing: float) -> DomainSpec:
        return cls("interval", float(spacing), bounds=(float(a), float(b)))

    @classmethod
    def rectangle(cls, extents, spacing: float) -> DomainSpec:
        """``extents`` is ``((x0, x1), (y0, y1))``."""
        return cls("rectangle", float(spacing), rects=(_as_rect(extents),))

    @classmethod
    def unit_square(cls, spacing: float) -> DomainSpec:
        return cls.rectangle(((0.0, 1.0), (0.0, 1.0)), spacing)

    @classmethod
    def rect_union(cls, rects: Sequence, spacing: float) -> DomainSpec:
        return cls("rect_union", float(spacing), rects=tuple(_as_rect(r) for r in rects))

    @classmethod
    def l_shape(cls, spacing: float) -> DomainSpec:
        """The L-shaped domain [0,1]^2 minus [0.5,1]x[0.5,1]."""
        return cls.rect_union([((0.0, 1.0), (0.0, 0.5)), ((0.0, 0.5), (0.5, 1.0))], spacing)

    @classmethod
    def disk(cls, center, radius: float, spacing: float) -> DomainSpec:
        cx, cy = center
        return cls("disk", float(spacing), center=(float(cx), float(cy)), radius=float(radius))

    @property
    def dimension(self) -> int:
        return 1 if self.shape == "interval" else 2

    def with_spacing(self, spacing: float) -> DomainSpec:
        return DomainSpec(self.shape, float(spacing), self.bounds, self.rects, self.center, self.radius)


def _as_rect(r):
    (x0, x1), (y0, y1) = r
    return ((float(x0), float(x1)), (float(y0), float(y1)))


@dataclass(frozen=True, eq=False)
class GridDomain:
    """A classified lattice with Dirichlet boundary points.

    Interior nodes are numbered in lexicographic lattice order.  Stencil
    directions are ordered ``(-x, +x)`` in 1D and ``(-x, +x, -y, +y)`` in 2D;
    for each interior node and direction exactly one of ``neighbors`` (an
    interior index) and ``boundary_neighbors`` (a boundary index) is
    non-negative, and ``arms`` holds the distance to it.
    """

    spec: DomainSpec
    lattice_index: np.ndarray
    lattice_offset: tuple[int, ...]
    interior_coords: np.ndarray
    neighbors: np.ndarray
    boundary_neighbors: np.ndarray
    arms: np.ndarray
    boundary_coords: np.ndarray
    boundary_weights: np.ndarray
    dist_to_boundary: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def spacing(self) -> float:
        return self.spec.spacing

    @property
    def dimension(self) -> int:
        return self.spec.dimension

    @property
    def n_interior(self) -> int:
        return len(self.interior_coords)

    @property
    def n_boundary(self) -> int:
        return len(self.boundary_coords)

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dimension

    @property
    def interior_lattice(self) -> np.ndarray:
        """Lattice indices (relative to ``lattice_index``) of the interior nodes."""
        return np.argwhere(self.lattice_index >= 0)

    def full_mask(self) -> NodeMask:
        return NodeMask(self, np.ones(self.n_interior, dtype=bool))

    def empty_mask(self) -> NodeMask:
        return NodeMask(self, np.zeros(self.n_interior, dtype=bool))

    def mask(self, members) -> NodeMask:
        return NodeMask(self, np.asarray(members, dtype=bool))

    def nearest_node(self, point) -> int:
        """Index of the interior node closest to ``point``."""
        p = np.atleast_1d(np.asarray(point, dtype=float))
        return int(np.argmin(np.sum((self.interior_coords - p) ** 2, axis=1)))

    def ball_mask(self, center, radius: float) -> NodeMask:
        """Interior nodes in the open ball of ``radius`` about ``center``."""
        d = np.linalg.norm(self.interior_coords - np.asarray(center, dtype=float), axis=1)
        return NodeMask(self, d < radius)

    def evaluate(self, fn):
        """Evaluate ``fn(*coords)`` on interior and boundary nodes."""
        fi = np.broadcast_to(np.asarray(fn(*self.interior_coords.T), dtype=float), (self.n_interior,))
        fb = np.broadcast_to(np.asarray(fn(*self.boundary_coords.T), dtype=float), (self.n_boundary,))
        return fi.copy(), fb.copy()

    @property
    def perimeter(self) -> float:
        """Exact surface measure of the continuum boundary."""
        s = self.spec
        if s.shape == "interval":
            return 2.0
        if s.shape == "disk":
            return 2 * np.pi * s.radius
        return _polygon(s).length


@dataclass(frozen=True, eq=False)
class NodeMask:
    """A set of interior nodes of one domain, stored as a boolean vector."""

    domain: GridDomain
    members: np.ndarray

    def __post_init__(self):
        if self.members.shape != (self.domain.n_interior,):
            raise ValueError(
                f"mask has shape {self.members.shape}, domain has {self.domain.n_interior} interior nodes"
            )

    def _check(self, other: NodeMask):
        if other.domain is not self.domain:
            raise ValueError("masks belong to different domains")

    def __and__(self, other):
        self._check(other)
        return NodeMask(self.domain, self.members & other.members)

    def __or__(self, other):
        self._check(other)
        return NodeMask(self.domain, self.members | other.members)

    def __xor__(self, other):
        self._check(other)
        return NodeMask(self.domain, self.members ^ other.members)

    def __sub__(self, other):
        self._check(other)
        return NodeMask(self.domain, self.members & ~other.members)

    def __invert__(self):
        return NodeMask(self.domain, ~self.members)

    def __eq__(self, other):
        if not isinstance(other, NodeMask):
            return NotImplemented
        return other.domain is self.domain and bool(np.array_equal(self.members, other.members))

    __hash__ = None

    def __len__(self):
        return int(np.count_nonzero(self.members))

    def __bool__(self):
        return bool(self.members.any())

    def issubset(self, other: NodeMask) -> bool:
        self._check(other)
        return not np.any(self.members & ~other.members)

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.members)

    @property
    def coords(self) -> np.ndarray:
        return self.domain.interior_coords[self.members]

    @property
    def measure(self) -> float:
        return mask_measure(self)


def _polygon(spec: DomainSpec):
    return unary_union([box(x0, y0, x1, y1) for (x0, x1), (y0, y1) in spec.rects])


def _lattice_index(value: float, h: float) -> int:
    k = value / h
    if abs(k - round(k)) > _ALIGN_TOL * max(1.0, abs(k)):
        raise DomainError(f"coordinate {value} is not a multiple of the spacing {h}")
    return int(round(k))


def _check_rects_connected(rects):
    boxes = [box(x0, y0, x1, y1) for (x0, x1), (y0, y1) in rects]
    n = len(boxes)
    rows, cols = [], []
    for i in range(n):
        for j in range(i + 1, n):
            inter = boxes[i].intersection(boxes[j])
            if inter.area > 0 or inter.length > 0:
                rows.append(i)
                cols.append(j)
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    ncomp, _ = connected_components(graph, directed=False)
    if ncomp > 1:
        raise DomainError("rect_union is disconnected: components must overlap or share an edge")


def _directions(dim: int) -> np.ndarray:
    return np.vstack([s * e for e in np.eye(dim, dtype=int) for s in (-1, 1)])


def build_domain(spec: DomainSpec) -> GridDomain:
    """Classify lattice points of ``spec`` and compute stencil geometry."""
    if spec.shape == "interval":
        return _build_interval(spec)
    if spec.shape == "disk":
        return _build_disk(spec)
    return _build_polygon(spec)


def _finish(spec, inside, offset, coords_of, boundary_of, dist_fn) -> GridDomain:
    """Shared assembly: number interior nodes and resolve each stencil arm.

    ``boundary_of(node_coord, direction)`` returns ``(point, arm, weight)`` for
    an arm that leaves the interior.
    """
    h = spec.spacing
    dim = spec.dimension
    lattice_index = np.full(inside.shape, -1, dtype=np.int64)
    ijk = np.argwhere(inside)
    if len(ijk) == 0:
        raise DomainError(f"no interior node at spacing {h}")
    lattice_index[tuple(ijk.T)] = np.arange(len(ijk))
    coords = coords_of(ijk)

    dirs = _directions(dim)
    n = len(ijk)
    neighbors = np.full((n, 2 * dim), -1, dtype=np.int64)
    bnbrs = np.full((n, 2 * dim), -1, dtype=np.int64)
    arms = np.full((n, 2 * dim), h)

    bpoints: list[np.ndarray] = []
    bweights: list[float] = []
    bkeys: dict[tuple, int] = {}

    def add_boundary(point, weight):
        key = tuple(np.round(np.asarray(point) / h * 1e6).astype(np.int64))
        if key in bkeys:
            idx = bkeys[key]
            bweights[idx] += weight
            return idx
        bkeys[key] = len(bpoints)
        bpoints.append(np.asarray(point, dtype=float))
        bweights.append(weight)
        return bkeys[key]

    padded = np.pad(lattice_index, 1, constant_values=-1)
    for d, step in enumerate(dirs):
        shifted = ijk + 1 + step
        nb = padded[tuple(shifted.T)]
        neighbors[:, d] = nb
        for i in np.flatnonzero(nb < 0):
            point, arm, weight = boundary_of(coords[i], step.astype(float))
            arms[i, d] = arm
            bnbrs[i, d] = add_boundary(point, weight)

    extra = getattr(boundary_of, "unreached", None)
    if extra is not None:
        for point, weight in extra():
            add_boundary(point, weight)

    adjacency = _adjacency(neighbors)
    ncomp, _ = connected_components(adjacency, directed=False)
    if ncomp > 1:
        raise DomainError(f"interior nodes split into {ncomp} components at spacing {h}")

    bcoords = np.array(bpoints).reshape(-1, dim)
    order = np.lexsort(bcoords.T[::-1])
    remap = np.empty(len(order), dtype=np.int64)
    remap[order] = np.arange(len(order))
    bnbrs = np.where(bnbrs >= 0, remap[np.maximum(bnbrs, 0)], -1)

    return GridDomain(
        spec=spec,
        lattice_index=lattice_index,
        lattice_offset=tuple(int(o) for o in offset),
        interior_coords=coords,
        neighbors=neighbors,
        boundary_neighbors=bnbrs,
        arms=arms,
        boundary_coords=bcoords[order],
        boundary_weights=np.asarray(bweights)[order],
        dist_to_boundary=dist_fn(coords),
    )


def _adjacency(neighbors):
    rows = np.repeat(np.arange(len(neighbors)), neighbors.shape[1])
    cols = neighbors.ravel()
    keep = cols >= 0
    n = len(neighbors)
    return coo_matrix((np.ones(keep.sum()), (rows[keep], cols[keep])), shape=(n, n))


def _build_interval(spec):
    h = spec.spacing
    a, b = spec.bounds
    ka, kb = _lattice_index(a, h), _lattice_index(b, h)
    inside = np.zeros(kb - ka + 1, dtype=bool)
    inside[1:-1] = True

    def coords_of(ijk):
        return (ijk + ka) * h

    def boundary_of(x, step):
        return (np.array([a if step[0] < 0 else b]), h, 1.0)

    def dist_fn(c):
        return np.minimum(c[:, 0] - a, b - c[:, 0])

    return _finish(spec, inside, (ka,), coords_of, boundary_of, dist_fn)


def _build_polygon(spec):
    h = spec.spacing
    if spec.shape == "rect_union":
        _check_rects_connected(spec.rects)
    poly = _polygon(spec)
    xmin, ymin, xmax, ymax = poly.bounds
    for (x0, x1), (y0, y1) in spec.rects:
        for v in (x0, x1, y0, y1):
            _lattice_index(v, h)
    kx0, kx1 = _lattice_index(xmin, h), _lattice_index(xmax, h)
    ky0, ky1 = _lattice_index(ymin, h), _lattice_index(ymax, h)
    xs = np.arange(kx0, kx1 + 1) * h
    ys = np.arange(ky0, ky1 + 1) * h
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    inside = shapely.contains_xy(poly, X, Y)
    on_boundary = shapely.distance(poly.boundary, shapely.points(X, Y)) < _ALIGN_TOL * h
    inside &= ~on_boundary

    def coords_of(ijk):
        return np.column_stack([xs[ijk[:, 0]], ys[ijk[:, 1]]])

    def boundary_of(x, step):
        # edges lie on lattice lines, so a missing neighbour is a boundary node
        return (x + h * step, h, h)

    def unreached():
        # boundary lattice points no arm reaches (convex corners) still carry weight
        for i, j in np.argwhere(on_boundary):
            yield np.array([xs[i], ys[j]]), 0.0

    boundary_of.unreached = unreached

    def dist_fn(c):
        return shapely.distance(poly.boundary, shapely.points(c[:, 0], c[:, 1]))

    dom = _finish(spec, inside, (kx0, ky0), coords_of, boundary_of, dist_fn)
    # every boundary lattice point gets the full spacing, corners included
    dom.boundary_weights[:] = h
    return dom


def _build_disk(spec):
    h = spec.spacing
    c = np.asarray(spec.center)
    R = spec.radius
    lo = np.floor((c - R) / h).astype(int) - 1
    hi = np.ceil((c + R) / h).astype(int) + 1
    xs = np.arange(lo[0], hi[0] + 1) * h
    ys = np.arange(lo[1], hi[1] + 1) * h
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    inside = R - np.hypot(X - c[0], Y - c[1]) > MIN_ARM_FRACTION * h

    def coords_of(ijk):
        return np.column_stack([xs[ijk[:, 0]], ys[ijk[:, 1]]])

    def boundary_of(x, step):
        p = x - c
        pe = p @ step
        t = -pe + np.sqrt(pe * pe - (p @ p - R * R))
        t = min(max(t, MIN_ARM_FRACTION * h), h)
        point = x + t * step
        ne = float((point - c) @ step) / np.linalg.norm(point - c)
        # face width projected on the normal, less the curvature term of the
        # one-sided flux; keeps grazing arms consistent with the normal derivative
        return point, t, h * ne - 0.5 * t * h * (1.0 - 2.0 * ne * ne) / R

    def dist_fn(coords):
        return R - np.linalg.norm(coords - c, axis=1)

    return _finish(spec, inside, tuple(lo), coords_of, boundary_of, dist_fn)


def eroded_mask(domain: GridDomain, eta: float) -> NodeMask:
    """Interior nodes at distance at least ``eta`` from the boundary."""
    if eta < 0:
        raise ValueError(f"eta must be non-negative, got {eta}")
    slack = _ALIGN_TOL * domain.spacing
    return NodeMask(domain, domain.dist_to_boundary >= eta - slack)


def mask_measure(mask: NodeMask) -> float:
    """Lebesgue measure of the cells of ``mask``: count times spacing^n."""
    return len(mask) * mask.domain.cell_volume


def inscribed_ball(mask: NodeMask) -> tuple[int, float]:
    """Deepest node of ``mask`` and a conservative radius of a ball inside it.

    The depth of a node is its distance to the nearest lattice point outside
    the mask; the returned radius is that depth minus one spacing.  Ties go to
    the first node in lexicographic order.
    """
    if not mask:
        raise ValueError("inscribed_ball of an empty mask")
    depth = np.where(mask.members, mask_depth(mask), -np.inf)
    center = int(np.argmax(depth))
    return center, float(max(depth[center] - mask.domain.spacing, 0.0))


def mask_depth(mask: NodeMask) -> np.ndarray:
    """Distance from each interior node to the nearest lattice point outside ``mask``."""
    dom = mask.domain
    grid = np.zeros(dom.lattice_index.shape, dtype=bool)
    ijk = dom.interior_lattice
    grid[tuple(ijk.T)] = mask.members
    depth = ndimage.distance_transform_edt(np.pad(grid, 1)) * dom.spacing
    return depth[tuple((ijk + 1).T)]
