"""Discrete geometry on regular grids.

A :class:`DiscreteDomain` is a box of nodes with spacing ``h`` and one role
code per node.  The open set ``O`` of a condenser is ``INTERIOR | OBSTACLE``,
the compact set ``E`` is the union of OBSTACLE node cells, DIRICHLET nodes
carry boundary data and EXTERIOR nodes are ignored by every computation.

Node coordinates are ``origin + h * index``.  Cell ``c`` is the hypercube whose
low corner is node ``c``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage


class Role(IntEnum):
    INTERIOR = 0
    OBSTACLE = 1
    EXTERIOR = 2
    DIRICHLET = 3


ROLE_CODES = "IOED"


class InvalidShapeError(ValueError):
    """Raised for degenerate shape parameters."""


class InvalidDomainError(ValueError):
    """Raised when role codes violate a domain invariant."""


class NoBoundaryError(ValueError):
    """Raised when a distance is requested on a domain without boundary."""


class DecompositionError(RuntimeError):
    """Raised when no Whitney cube can be certified at the grid resolution."""


class ParseError(ValueError):
    """Malformed grid file; ``line`` is 1-based."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Shape:
    """Parameters of a library shape.

    Use the helper constructors (:func:`ball`, :func:`annulus`, ...) rather
    than filling the fields by hand.
    """

    kind: str
    center: tuple[float, ...] = (0.0, 0.0)
    radius: float = 1.0
    inner_radius: float = 0.0
    lo: tuple[float, ...] = ()
    hi: tuple[float, ...] = ()
    points: tuple[tuple[float, ...], ...] = ()

    @property
    def dim(self) -> int:
        if self.kind == "box":
            return len(self.lo)
        return len(self.center)


def ball(center: Sequence[float], r: float) -> Shape:
    return Shape("ball", center=tuple(float(c) for c in center), radius=float(r))


def annulus(center: Sequence[float], r_in: float, r_out: float) -> Shape:
    """Condenser ``B(c, r_in)`` closed (obstacle) inside ``B(c, r_out)``."""
    return Shape("annulus", center=tuple(float(c) for c in center),
                 radius=float(r_out), inner_radius=float(r_in))


def box(lo: Sequence[float], hi: Sequence[float]) -> Shape:
    return Shape("box", lo=tuple(float(v) for v in lo), hi=tuple(float(v) for v in hi))


def ball_minus_segment(center: Sequence[float], r: float,
                       start: Sequence[float], end: Sequence[float]) -> Shape:
    return Shape("ball_minus_segment", center=tuple(float(c) for c in center),
                 radius=float(r), points=(tuple(map(float, start)), tuple(map(float, end))))


def ball_minus_point_cluster(center: Sequence[float], r: float,
                             points: Sequence[Sequence[float]] = ()) -> Shape:
    return Shape("ball_minus_point_cluster", center=tuple(float(c) for c in center),
                 radius=float(r), points=tuple(tuple(map(float, p)) for p in points))


def complement_halfspace(dim: int = 2, extent: float = 1.0) -> Shape:
    """Open half space ``{x_1 > 0}`` truncated to a box of the given extent."""
    return Shape("halfspace", center=(0.0,) * dim, radius=float(extent))


def _neighbourhood(mask: np.ndarray) -> np.ndarray:
    """Nodes within one step (including diagonals) of ``mask``."""
    structure = np.ones((3,) * mask.ndim, dtype=bool)
    return ndimage.binary_dilation(mask, structure=structure)


@dataclass(frozen=True, eq=False)
class DiscreteDomain:
    """Regular node grid with role codes.

    Attributes:
        roles: integer array of :class:`Role` values, one per node.
        spacing: grid spacing ``h``.
        origin: coordinates of node ``(0, ..., 0)``.
        shape_spec: library shape the roles came from, if any.  Only used to
            select analytic distance formulas.
    """

    roles: np.ndarray
    spacing: float
    origin: tuple[float, ...]
    shape_spec: Shape | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        roles = np.ascontiguousarray(self.roles, dtype=np.int8)
        roles.setflags(write=False)
        object.__setattr__(self, "roles", roles)
        object.__setattr__(self, "spacing", float(self.spacing))
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        if not 1 <= roles.ndim <= 3:
            raise InvalidDomainError(f"dimension {roles.ndim} not in 1..3")
        if len(self.origin) != roles.ndim:
            raise InvalidDomainError("origin length does not match dimension")
        if not self.spacing > 0:
            raise InvalidDomainError("spacing must be positive")
        if roles.size and (roles.min() < 0 or roles.max() > 3):
            raise InvalidDomainError("role codes must lie in 0..3")
        obstacle = roles == Role.OBSTACLE
        if obstacle.any():
            # obstacle cells must stay inside the box and away from exterior nodes
            padded = np.pad(roles == Role.EXTERIOR, 1, constant_values=True)
            touching = _neighbourhood(padded)[tuple(slice(1, -1) for _ in range(roles.ndim))]
            if (touching & obstacle).any():
                raise InvalidDomainError("obstacle node touches exterior or box edge")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DiscreteDomain):
            return NotImplemented
        return (self.roles.shape == other.roles.shape and self.spacing == other.spacing
                and self.origin == other.origin and np.array_equal(self.roles, other.roles))

    __hash__ = None

    @property
    def dim(self) -> int:
        return self.roles.ndim

    @property
    def shape(self) -> tuple[int, ...]:
        return self.roles.shape

    @property
    def cell_shape(self) -> tuple[int, ...]:
        return tuple(s - 1 for s in self.shape)

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.dim

    def mask(self, *roles: Role) -> np.ndarray:
        out = np.zeros(self.shape, dtype=bool)
        for role in roles:
            out |= self.roles == role
        return out

    @property
    def interior(self) -> np.ndarray:
        return self.roles == Role.INTERIOR

    @property
    def obstacle(self) -> np.ndarray:
        return self.roles == Role.OBSTACLE

    @property
    def open_set(self) -> np.ndarray:
        """Nodes of ``O = INTERIOR | OBSTACLE``."""
        return self.mask(Role.INTERIOR, Role.OBSTACLE)

    def axes(self) -> list[np.ndarray]:
        return [self.origin[k] + self.spacing * np.arange(self.shape[k]) for k in range(self.dim)]

    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``(*shape, dim)``."""
        if "coords" not in self._cache:
            grids = np.meshgrid(*self.axes(), indexing="ij")
            self._cache["coords"] = np.stack(grids, axis=-1)
        return self._cache["coords"]

    def cell_centers(self) -> np.ndarray:
        """Cell center coordinates, shape ``(*cell_shape, dim)``."""
        if "centers" not in self._cache:
            axes = [a[:-1] + 0.5 * self.spacing for a in self.axes()]
            self._cache["centers"] = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        return self._cache["centers"]

    def active_cells(self) -> np.ndarray:
        """Cells with no EXTERIOR corner; energies are summed over these."""
        if "active" not in self._cache:
            ext = self.roles == Role.EXTERIOR
            bad = np.zeros(self.cell_shape, dtype=bool)
            for corner in _corners(self.dim):
                bad |= ext[_corner_slice(corner)]
            self._cache["active"] = ~bad
        return self._cache["active"]

    def open_cells(self) -> np.ndarray:
        """Cells with at least one corner in ``O``; their union measures ``|O|``."""
        if "open_cells" not in self._cache:
            inside = self.open_set
            hit = np.zeros(self.cell_shape, dtype=bool)
            for corner in _corners(self.dim):
                hit |= inside[_corner_slice(corner)]
            self._cache["open_cells"] = hit & self.active_cells()
        return self._cache["open_cells"]

    def closure_nodes(self) -> np.ndarray:
        """Corner nodes of the cells in :meth:`open_cells`."""
        cells = self.open_cells()
        out = np.zeros(self.shape, dtype=bool)
        for corner in _corners(self.dim):
            out[_corner_slice(corner)] |= cells
        return out

    def with_roles(self, roles: np.ndarray) -> DiscreteDomain:
        return DiscreteDomain(roles, self.spacing, self.origin)

    def crop(self, slices: tuple[slice, ...]) -> DiscreteDomain:
        starts = [s.start or 0 for s in slices]
        origin = tuple(self.origin[k] + self.spacing * starts[k] for k in range(self.dim))
        return DiscreteDomain(self.roles[slices], self.spacing, origin)

    def nearest_index(self, point: Sequence[float]) -> tuple[int, ...]:
        idx = np.rint((np.asarray(point, float) - np.asarray(self.origin)) / self.spacing)
        return tuple(int(i) for i in idx)

    def contains_index(self, index: Sequence[int]) -> bool:
        return all(0 <= i < s for i, s in zip(index, self.shape))


def _corners(n: int) -> list[tuple[int, ...]]:
    return [tuple((j >> k) & 1 for k in range(n)) for j in range(2 ** n)]


def _corner_slice(corner: tuple[int, ...]) -> tuple[slice, ...]:
    return tuple(slice(1, None) if c else slice(0, -1) for c in corner)


def _assign_collar(roles: np.ndarray) -> np.ndarray:
    """Mark non-``O`` nodes adjacent to ``O`` as DIRICHLET, the rest EXTERIOR."""
    inside = (roles == Role.INTERIOR) | (roles == Role.OBSTACLE)
    collar = _neighbourhood(inside) & ~inside
    out = roles.copy()
    out[~inside] = Role.EXTERIOR
    out[collar] = Role.DIRICHLET
    return out


def _lattice(lo: np.ndarray, hi: np.ndarray, resolution: int, margin: int):
    lo_idx = np.floor(lo * resolution).astype(int) - margin
    hi_idx = np.ceil(hi * resolution).astype(int) + margin
    axes = [np.arange(a, b + 1) / resolution for a, b in zip(lo_idx, hi_idx)]
    origin = tuple(float(a[0]) for a in axes)
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return pts, origin


def make_shape(shape: Shape | np.ndarray, resolution: int) -> DiscreteDomain:
    """Build a domain realizing a library shape with ``resolution`` nodes per unit.

    A raw integer role array is accepted as a custom mask with origin 0.
    """
    if resolution < 8:
        raise InvalidShapeError("resolution must be at least 8 nodes per unit")
    h = 1.0 / resolution
    if isinstance(shape, np.ndarray):
        return DiscreteDomain(shape, h, (0.0,) * shape.ndim)
    kind = shape.kind
    if kind == "box":
        lo, hi = np.asarray(shape.lo), np.asarray(shape.hi)
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise InvalidShapeError("box needs lo < hi on every axis")
        counts = np.rint((hi - lo) * resolution).astype(int)
        if not np.allclose(counts * h, hi - lo, rtol=0, atol=1e-12):
            raise InvalidShapeError("box extent must be a multiple of the spacing")
        roles = np.full(tuple(counts + 1), Role.INTERIOR, dtype=np.int8)
        for k in range(roles.ndim):
            idx = [slice(None)] * roles.ndim
            idx[k] = 0
            roles[tuple(idx)] = Role.DIRICHLET
            idx[k] = -1
            roles[tuple(idx)] = Role.DIRICHLET
        return DiscreteDomain(roles, h, tuple(float(v) for v in lo), shape)

    c = np.asarray(shape.center, float)
    r = shape.radius
    if r <= 0:
        raise InvalidShapeError("radius must be positive")
    if kind == "halfspace":
        lo = np.full(c.shape, -r / 2)
        lo[0] = 0.0
        hi = np.full(c.shape, r / 2)
        hi[0] = r
        pts, origin = _lattice(lo, hi, resolution, 2)
        roles = np.where(pts[..., 0] > 0, Role.INTERIOR, Role.EXTERIOR).astype(np.int8)
        return DiscreteDomain(_assign_collar(roles), h, origin, shape)

    pts, origin = _lattice(c - r, c + r, resolution, 1)
    rad = np.linalg.norm(pts - c, axis=-1)
    roles = np.where(rad < r, Role.INTERIOR, Role.EXTERIOR).astype(np.int8)
    if kind == "ball":
        pass
    elif kind == "annulus":
        if not 0 < shape.inner_radius < r:
            raise InvalidShapeError("annulus needs 0 < r_in < r_out")
        roles[rad <= shape.inner_radius] = Role.OBSTACLE
    elif kind in ("ball_minus_point_cluster", "ball_minus_segment"):
        pass
    else:
        raise InvalidShapeError(f"unknown shape kind {kind!r}")
    roles = _assign_collar(roles)
    dom_tmp = DiscreteDomain(roles.copy(), h, origin)
    if kind == "ball_minus_point_cluster":
        for p in shape.points:
            idx = dom_tmp.nearest_index(p)
            if not dom_tmp.contains_index(idx):
                raise InvalidShapeError(f"puncture {p} lies outside the grid")
            roles[idx] = Role.DIRICHLET
    elif kind == "ball_minus_segment":
        a, b = (np.asarray(p, float) for p in shape.points)
        seg = b - a
        length2 = float(seg @ seg)
        if length2 == 0:
            raise InvalidShapeError("segment endpoints coincide")
        s = np.clip(((pts - a) @ seg) / length2, 0.0, 1.0)
        dist = np.linalg.norm(pts - (a + s[..., None] * seg), axis=-1)
        roles[(dist <= 0.5 * h * math.sqrt(len(c)) + 1e-12) & (roles == Role.INTERIOR)] = Role.DIRICHLET
        for p in (a, b):
            roles[dom_tmp.nearest_index(p)] = Role.DIRICHLET
    return DiscreteDomain(roles, h, origin, shape)


def make_condenser(center: Sequence[float], r: float, nodes_per_radius: int,
                   inner: Callable[[np.ndarray], np.ndarray] | None = None,
                   inner_points: Sequence[Sequence[float]] = ()) -> DiscreteDomain:
    """Condenser lattice for ``B(center, r)`` with ``center`` as a node.

    Nodes of the open ball are INTERIOR.  Nodes of the closed half ball
    ``B(center, r/2)`` are OBSTACLE when ``inner`` (a vectorized predicate on
    coordinates) is true there; ``inner=None`` makes the whole half ball an
    obstacle.  Each point in ``inner_points`` marks its nearest half-ball node
    as OBSTACLE, which represents sets of measure zero.  Ball membership is
    decided in exact integer arithmetic.
    """
    if r <= 0 or nodes_per_radius < 2:
        raise InvalidShapeError("condenser needs r > 0 and at least 2 nodes per radius")
    z = np.asarray(center, float)
    n, m = len(z), int(nodes_per_radius)
    h = r / m
    idx = np.stack(np.meshgrid(*[np.arange(-m - 1, m + 2)] * n, indexing="ij"), axis=-1)
    sq = (idx ** 2).sum(axis=-1)
    roles = np.where(sq < m * m, Role.INTERIOR, Role.EXTERIOR).astype(np.int8)
    half = 4 * sq <= m * m
    pts = z + h * idx
    if inner is None and not inner_points:
        roles[half] = Role.OBSTACLE
    else:
        if inner is not None:
            roles[half & np.asarray(inner(pts), bool)] = Role.OBSTACLE
        for p in inner_points:
            j = np.rint((np.asarray(p, float) - z) / h).astype(int)
            if 4 * int((j ** 2).sum()) <= m * m:
                roles[tuple(j + m + 1)] = Role.OBSTACLE
    origin = tuple(z - h * (m + 1))
    return DiscreteDomain(_assign_collar(roles), h, origin)


def distance_to_boundary(dom: DiscreteDomain):
    """Distance of each node to the nearest non-INTERIOR node.

    Library balls, annuli and half spaces use closed-form distances to the
    continuous boundary; any other domain uses an exact Euclidean distance
    transform over the node set.  Returns a ``ScalarField``.
    """
    from .field_ops import ScalarField

    interior = dom.interior
    if interior.all():
        raise NoBoundaryError("domain has no non-interior node")
    if not interior.any():
        raise NoBoundaryError("domain has no interior node")
    spec = dom.shape_spec
    if spec is not None and spec.kind in ("ball", "annulus", "halfspace"):
        x = dom.coords()
        if spec.kind == "halfspace":
            d = x[..., 0].copy()
        else:
            rad = np.linalg.norm(x - np.asarray(spec.center), axis=-1)
            d = spec.radius - rad
            if spec.kind == "annulus":
                d = np.minimum(d, rad - spec.inner_radius)
        d = np.where(interior, np.maximum(d, 0.0), 0.0)
    else:
        d = ndimage.distance_transform_edt(interior, sampling=dom.spacing)
    return ScalarField(dom, d)


def distance_to_set(dom: DiscreteDomain, target: np.ndarray) -> np.ndarray:
    """Euclidean distance from every node to the nearest node of ``target``."""
    if not target.any():
        return np.full(dom.shape, np.inf)
    return ndimage.distance_transform_edt(~target, sampling=dom.spacing)


# --------------------------------------------------------------------------
# Whitney decomposition

@dataclass(frozen=True)
class WhitneyCube:
    corner: tuple[int, ...]
    generation: int
    side: float

    @property
    def side_nodes(self) -> int:
        return 2 ** self.generation


@dataclass(frozen=True)
class WhitneyDecomposition:
    """Dyadic cubes of the interior node set.

    Cube ``Q`` with corner index ``a`` and ``2**k`` nodes per side owns the
    nodes ``a .. a + 2**k - 1`` and occupies the half-open box
    ``[a - 1/2, a + 2**k - 1/2)`` in index units, i.e. the union of the dual
    cells of its nodes.  ``uncovered`` holds the interior nodes next to the
    boundary that no cube of side ``>= h`` can certify.
    """

    cubes: list[WhitneyCube]
    covered: bool
    uncovered: np.ndarray
    spacing: float
    distances_sq: np.ndarray  # squared cube-to-boundary distance, index units

    def labels(self, shape: tuple[int, ...]) -> np.ndarray:
        """Cube number per node, -1 where no cube; raises on overlaps."""
        lab = np.full(shape, -1, dtype=np.int64)
        for i, q in enumerate(self.cubes):
            sl = tuple(slice(a, a + q.side_nodes) for a in q.corner)
            if (lab[sl] >= 0).any():
                raise DecompositionError(f"cube {i} overlaps an earlier cube")
            lab[sl] = i
        return lab

    def sandwich_holds(self) -> np.ndarray:
        """Exact integer test of ``diam <= dist <= 4 diam`` per cube."""
        if not self.cubes:
            return np.zeros(0, dtype=bool)
        n = len(self.cubes[0].corner)
        s2 = np.array([q.side_nodes ** 2 for q in self.cubes], dtype=np.int64)
        diam2 = n * s2
        return (diam2 <= self.distances_sq) & (self.distances_sq <= 16 * diam2)

    def max_overlap(self, dilation: int = 5) -> dict[int, int]:
        """Largest number of dilated cubes ``dilation*Q`` sharing a point, per generation."""
        out: dict[int, int] = {}
        gens = sorted({q.generation for q in self.cubes})
        for k in gens:
            cubes = [q for q in self.cubes if q.generation == k]
            s = 2 ** k
            grow = (dilation - 1) * s // 2 if dilation % 2 else (dilation - 1) * s / 2
            grow = int(math.ceil(grow))
            corners = np.array([q.corner for q in cubes])
            lo = corners - grow
            hi = corners + s + grow  # exclusive
            base = lo.min(axis=0)
            size = hi.max(axis=0) - base + 1
            acc = np.zeros(tuple(size), dtype=np.int64)
            n = corners.shape[1]
            for corner in _corners(n):
                sign = (-1) ** sum(corner)
                pos = np.where(np.array(corner, bool), hi, lo) - base
                np.add.at(acc, tuple(pos.T), sign)
            for ax in range(n):
                acc = np.cumsum(acc, axis=ax)
            out[k] = int(acc.max())
        return out


def whitney_decompose(dom: DiscreteDomain) -> WhitneyDecomposition:
    """Dyadic sieve over the interior nodes, stopping at one node per cube.

    A cube is accepted when its distance to the complement lies between one
    and four diameters and subdivided when closer.  The complement is the
    union of the dual cells of all non-interior nodes together with the
    outside of the grid box.  Distances are compared in exact integer
    arithmetic.
    """
    interior = dom.interior
    if not interior.any():
        raise DecompositionError("open set is empty")
    n = dom.dim
    shape = np.array(dom.shape)
    boundary = _neighbourhood(interior) & ~interior
    bnodes = np.argwhere(boundary).astype(np.int64)

    top = int(math.ceil(math.log2(max(shape.max(), 1))))
    padded_size = 2 ** top
    pad = [(0, padded_size - s) for s in shape]
    inside = np.pad(interior, pad, constant_values=False)
    outside = np.pad(~interior, pad, constant_values=True)

    def block_any(arr: np.ndarray, k: int) -> np.ndarray:
        s = 2 ** k
        m = padded_size // s
        view = arr.reshape(sum(([m, s] for _ in range(n)), []))
        return view.any(axis=tuple(range(1, 2 * n, 2)))

    cubes: list[WhitneyCube] = []
    dists: list[int] = []
    uncovered = np.zeros(dom.shape, dtype=bool)
    pending = np.zeros((1, n), dtype=np.int64)
    for k in range(top, -1, -1):
        if len(pending) == 0:
            break
        s = 2 ** k
        has_in = block_any(inside, k)[tuple((pending // s).T)]
        has_out = block_any(outside, k)[tuple((pending // s).T)]
        pending = pending[has_in]
        has_out = has_out[has_in]
        if len(pending) == 0:
            break
        d2 = _cube_boundary_dist_sq(pending, s, bnodes, shape)
        d2[has_out] = 0
        diam2 = n * s * s
        accept = d2 >= diam2
        if np.any(accept & (d2 > 16 * diam2)):
            raise DecompositionError("cube too far from the boundary for its size")
        for a, dd in zip(pending[accept], d2[accept]):
            cubes.append(WhitneyCube(tuple(int(v) for v in a), k, s * dom.spacing))
            dists.append(int(dd))
        rest = pending[~accept]
        if k == 0:
            for a in rest:
                if all(0 <= a[j] < shape[j] for j in range(n)) and interior[tuple(a)]:
                    uncovered[tuple(a)] = True
            break
        half = s // 2
        offsets = np.array(_corners(n), dtype=np.int64) * half
        pending = (rest[:, None, :] + offsets[None, :, :]).reshape(-1, n)
    if not cubes:
        raise DecompositionError(
            f"no cube certified; {int(uncovered.sum())} interior nodes around "
            f"index {tuple(np.argwhere(interior)[0])} are too close to the boundary")
    return WhitneyDecomposition(cubes, not uncovered.any(), uncovered, dom.spacing,
                                np.array(dists, dtype=np.int64))


def _cube_boundary_dist_sq(corners: np.ndarray, s: int, bnodes: np.ndarray,
                           shape: np.ndarray) -> np.ndarray:
    """Squared distance (index units) from cube ``[a-1/2, a+s-1/2]`` to the complement."""
    m = len(corners)
    out = np.empty(m, dtype=np.int64)
    edge = np.minimum(corners, shape - corners - s).min(axis=1)
    edge = np.maximum(edge, 0)
    chunk = max(1, 2_000_000 // max(len(bnodes), 1))
    for i in range(0, m, chunk):
        a = corners[i:i + chunk, None, :]
        if len(bnodes):
            gap = np.maximum(0, np.maximum(bnodes[None] - a - s, a - bnodes[None] - 1))
            d2 = (gap * gap).sum(axis=2).min(axis=1)
        else:
            d2 = np.full(len(a), np.iinfo(np.int64).max)
        e = edge[i:i + chunk]
        out[i:i + chunk] = np.minimum(d2, e * e)
    return out


# --------------------------------------------------------------------------
# Rescaling

@dataclass(frozen=True)
class RescaleMap:
    """The change of variables ``x -> center + r x`` restricted to a crop."""

    center: tuple[float, ...]
    r: float
    crop: tuple[slice, ...]

    def forward(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.center) + self.r * np.asarray(x)

    def backward(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y) - np.asarray(self.center)) / self.r

    def pull_field(self, values: np.ndarray) -> np.ndarray:
        """Transport node values of the parent domain to the unit domain."""
        return np.asarray(values)[self.crop]

    def inverse(self, unit: DiscreteDomain) -> DiscreteDomain:
        origin = tuple(self.forward(np.asarray(unit.origin)))
        return DiscreteDomain(unit.roles, unit.spacing * self.r, origin)


def rescale_to_unit(dom: DiscreteDomain, center: Sequence[float], r: float
                    ) -> tuple[DiscreteDomain, RescaleMap]:
    """Pull back the nodes around ``B(center, r)`` to the unit ball frame.

    The unit domain keeps the parent's nodes (cropped to the ball plus one
    node) so roles and node fields transport exactly.
    """
    if not r > 0:
        raise InvalidShapeError("scale r must be positive")
    z = np.asarray(center, float)
    h = dom.spacing
    org = np.asarray(dom.origin)
    lo = np.floor((z - r - org) / h).astype(int) - 1
    hi = np.ceil((z + r - org) / h).astype(int) + 1
    lo = np.maximum(lo, 0)
    hi = np.minimum(hi, np.array(dom.shape) - 1)
    if np.any(hi < lo):
        raise InvalidShapeError("ball does not meet the domain box")
    crop = tuple(slice(int(a), int(b) + 1) for a, b in zip(lo, hi))
    fmap = RescaleMap(tuple(z), float(r), crop)
    parent = dom.crop(crop)
    unit_origin = tuple(fmap.backward(np.asarray(parent.origin)))
    unit = DiscreteDomain(parent.roles, h / r, unit_origin)
    return unit, fmap


# --------------------------------------------------------------------------
# CAPGRID files

def format_header(shape: Sequence[int], spacing: float, origin: Sequence[float]) -> str:
    return ("CAPGRID 1\n"
            f"dim {len(shape)}\n"
            + " ".join(str(int(s)) for s in shape) + "\n"
            + f"h {float(spacing)!r} origin " + " ".join(repr(float(o)) for o in origin) + "\n")


def parse_header(lines: list[str]) -> tuple[tuple[int, ...], float, tuple[float, ...]]:
    """Parse the four header lines; raises :class:`ParseError`."""
    if len(lines) < 1 or lines[0].strip() != "CAPGRID 1":
        raise ParseError(1, "expected 'CAPGRID 1'")
    if len(lines) < 2:
        raise ParseError(2, "missing 'dim' line")
    parts = lines[1].split()
    if len(parts) != 2 or parts[0] != "dim" or not parts[1].isdigit():
        raise ParseError(2, "expected 'dim <n>'")
    n = int(parts[1])
    if not 1 <= n <= 3:
        raise ParseError(2, f"dimension {n} not in 1..3")
    if len(lines) < 3:
        raise ParseError(3, "missing node counts")
    counts = lines[2].split()
    if len(counts) != n or not all(c.isdigit() for c in counts):
        raise ParseError(3, f"expected {n} node counts")
    shape = tuple(int(c) for c in counts)
    if any(s < 2 for s in shape):
        raise ParseError(3, "every axis needs at least 2 nodes")
    if len(lines) < 4:
        raise ParseError(4, "missing 'h ... origin ...' line")
    parts = lines[3].split()
    if len(parts) != n + 3 or parts[0] != "h" or parts[2] != "origin":
        raise ParseError(4, f"expected 'h <value> origin <{n} values>'")
    try:
        h = float(parts[1])
        origin = tuple(float(v) for v in parts[3:])
    except ValueError as exc:
        raise ParseError(4, str(exc)) from None
    if not h > 0:
        raise ParseError(4, "spacing must be positive")
    return shape, h, origin


def _read_lines(path: str | Path) -> list[str]:
    data = Path(path).read_bytes()
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError:
        raise ParseError(1, "file is not ASCII") from None
    if "\r" in text:
        raise ParseError(1, "line endings must be LF")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def save_mask(dom: DiscreteDomain, path: str | Path) -> Path:
    path = Path(path)
    rows = dom.roles.reshape(-1, dom.shape[-1])
    table = np.frombuffer(ROLE_CODES.encode("ascii"), dtype=np.uint8)
    body = "\n".join(table[row].tobytes().decode("ascii") for row in rows)
    path.write_bytes((format_header(dom.shape, dom.spacing, dom.origin) + body + "\n").encode("ascii"))
    return path


def load_mask(path: str | Path) -> DiscreteDomain:
    lines = _read_lines(path)
    shape, h, origin = parse_header(lines)
    nrows = int(np.prod(shape[:-1])) if len(shape) > 1 else 1
    width = shape[-1]
    lookup = {c: i for i, c in enumerate(ROLE_CODES)}
    roles = np.empty((nrows, width), dtype=np.int8)
    for i in range(nrows):
        lineno = 5 + i
        if 4 + i >= len(lines):
            raise ParseError(lineno, f"file truncated: expected {nrows} role rows, found {i}")
        row = lines[4 + i]
        if len(row) != width:
            raise ParseError(lineno, f"expected {width} role codes, found {len(row)}")
        for j, ch in enumerate(row):
            if ch not in lookup:
                raise ParseError(lineno, f"unknown role code {ch!r} at column {j + 1}")
            roles[i, j] = lookup[ch]
    if len(lines) > 4 + nrows:
        raise ParseError(5 + nrows, "unexpected trailing content")
    try:
        return DiscreteDomain(roles.reshape(shape), h, origin)
    except InvalidDomainError as exc:
        raise ParseError(5, str(exc)) from None
