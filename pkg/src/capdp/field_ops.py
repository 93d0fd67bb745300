"""Discrete calculus on node fields.

Gradients live on cells and use forward differences from the low corner of
each cell.  Every integral is a midpoint rule over cells: ``h**n`` times the
cell value, where node data enter through the average of the cell corners.
A ball ``B(z, r)`` contains the cells whose centers lie in the open ball.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .grid import (DiscreteDomain, ParseError, Role, _corner_slice, _corners, _read_lines,
                   distance_to_boundary, distance_to_set, format_header, parse_header)
from .integrand import DoublePhaseIntegrand, EmptyRegionError


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Node values on a domain."""

    dom: DiscreteDomain
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != self.dom.shape:
            raise ValueError(f"field shape {vals.shape} does not match domain {self.dom.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def with_values(self, values: np.ndarray) -> ScalarField:
        return ScalarField(self.dom, values)

    def __mul__(self, c: float) -> ScalarField:
        return ScalarField(self.dom, self.values * float(c))

    __rmul__ = __mul__


@dataclass(frozen=True)
class EnergyBreakdown:
    total: float
    p_part: float
    q_part: float
    cellwise: np.ndarray


def _values(u) -> np.ndarray:
    return u.values if isinstance(u, ScalarField) else np.asarray(u, dtype=float)


def _same_domain(*fields) -> None:
    doms = [f.dom for f in fields if isinstance(f, ScalarField)]
    if any(d is not doms[0] and d != doms[0] for d in doms[1:]):
        raise ValueError("fields live on different domains")


def corner_average(values: np.ndarray) -> np.ndarray:
    """Average of the ``2**n`` corners of every cell."""
    values = np.asarray(values, dtype=float)
    corners = _corners(values.ndim)
    out = np.zeros(tuple(s - 1 for s in values.shape))
    for c in corners:
        out += values[_corner_slice(c)]
    return out / len(corners)


def forward_differences(values: np.ndarray, h: float) -> list[np.ndarray]:
    """Per-cell difference quotients along each axis from the low corner."""
    n = values.ndim
    low = tuple(slice(0, -1) for _ in range(n))
    base = values[low]
    out = []
    for k in range(n):
        sl = list(low)
        sl[k] = slice(1, None)
        out.append((values[tuple(sl)] - base) / h)
    return out


def scatter_differences(weights: Sequence[np.ndarray], h: float, shape: tuple[int, ...]) -> np.ndarray:
    """Adjoint of :func:`forward_differences`."""
    n = len(shape)
    low = tuple(slice(0, -1) for _ in range(n))
    out = np.zeros(shape)
    for k, w in enumerate(weights):
        sl = list(low)
        sl[k] = slice(1, None)
        out[tuple(sl)] += w / h
        out[low] -= w / h
    return out


def discrete_gradient(u: ScalarField) -> np.ndarray:
    """Cell gradients, shape ``(n, *cell_shape)``; zero on inactive cells."""
    diffs = forward_differences(u.values, u.dom.spacing)
    active = u.dom.active_cells()
    return np.stack([np.where(active, d, 0.0) for d in diffs])


def gradient_norm(u: ScalarField) -> np.ndarray:
    g = discrete_gradient(u)
    return np.sqrt((g * g).sum(axis=0))


def smoothed_norm(sq: np.ndarray, delta: float) -> np.ndarray:
    """``sqrt(|v|**2 + delta**2) - delta`` from ``|v|**2``."""
    if delta == 0:
        return np.sqrt(sq)
    return np.sqrt(sq + delta * delta) - delta


def ball_cells(dom: DiscreteDomain, z: Sequence[float], r: float) -> np.ndarray:
    """Cells whose centers lie in the open ball ``B(z, r)``."""
    c = dom.cell_centers()
    return ((c - np.asarray(z, float)) ** 2).sum(axis=-1) < r * r


def ball_nodes(dom: DiscreteDomain, z: Sequence[float], r: float, closed: bool = False) -> np.ndarray:
    x = dom.coords()
    d2 = ((x - np.asarray(z, float)) ** 2).sum(axis=-1)
    return d2 <= r * r if closed else d2 < r * r


def energy(u: ScalarField, itg: DoublePhaseIntegrand, region: np.ndarray | None = None,
           delta: float = 0.0) -> EnergyBreakdown:
    """Midpoint rule for ``int phi(x, |grad u|)`` over a cell mask.

    ``region`` defaults to the active cells.  ``delta > 0`` replaces the
    gradient norm by its smoothed version.
    """
    dom = u.dom
    if itg.dom is not None and itg.dom.shape != dom.shape:
        raise ValueError("integrand and field live on different domains")
    mask = dom.active_cells() if region is None else np.asarray(region, bool) & dom.active_cells()
    diffs = forward_differences(u.values, dom.spacing)
    g = smoothed_norm(sum(d * d for d in diffs), delta)
    vol = dom.cell_volume
    pden = np.where(mask, g ** itg.p, 0.0) * vol
    qden = np.where(mask, itg.cell_coefficient() * g ** itg.q, 0.0) * vol
    p_part = float(pden.sum())
    q_part = float(qden.sum())
    return EnergyBreakdown(p_part + q_part, p_part, q_part, pden + qden)


def cell_values(u) -> np.ndarray:
    """Cell-center values of a node field (corner average)."""
    return corner_average(_values(u))


def region_mean(cell_data: np.ndarray, region: np.ndarray) -> float:
    """Average of cell data over a cell mask."""
    region = np.asarray(region, bool)
    if not region.any():
        raise EmptyRegionError("mean over an empty region")
    return float(cell_data[region].sum() / region.sum())


def lp_mean(u, region: np.ndarray, m: float = 1.0, signed: bool = False) -> float:
    """``(mean over region of |u|**m)**(1/m)``; ``signed`` with ``m=1`` gives the mean.

    ``u`` is a node field (averaged to cells) or an array of cell values.
    """
    vals = np.asarray(u.values if isinstance(u, ScalarField) else u, dtype=float)
    region = np.asarray(region, bool)
    if vals.shape != region.shape:
        vals = corner_average(vals)
    if signed:
        if m != 1:
            raise ValueError("signed mean needs m = 1")
        return region_mean(vals, region)
    if m < 1:
        raise ValueError("m must be at least 1")
    return region_mean(np.abs(vals) ** m, region) ** (1.0 / m)


def restricted_maximal(f, R, nodes: Sequence[tuple[int, ...]] | None = None,
                       dom: DiscreteDomain | None = None):
    """Centered maximal function with radii capped by ``R``.

    Args:
        f: node field, or cell data together with ``dom``.
        R: node field (or array) of radius caps.
        nodes: optional node indices; when given, an array of the values at
            those nodes is returned instead of a full field.

    At nodes with ``R = 0`` the value is ``|f|``.  Elsewhere it is the largest
    average of ``|f|`` over the balls of radius ``j h < R(x)``, ``j >= 1``.
    """
    if isinstance(f, ScalarField):
        dom = f.dom
        node_vals = np.abs(f.values)
        cell = corner_average(node_vals)
    else:
        if dom is None:
            raise ValueError("cell data needs its domain")
        cell = np.abs(np.asarray(f, dtype=float))
        node_vals = None
    radii = np.broadcast_to(np.asarray(_values(R), dtype=float), dom.shape)
    if np.any(radii < 0):
        raise ValueError("radius caps must be nonnegative")
    h = dom.spacing
    centers = dom.cell_centers()
    x = dom.coords()
    todo = [tuple(i) for i in np.ndindex(*dom.shape)] if nodes is None else [tuple(i) for i in nodes]
    out = np.empty(len(todo))
    for k, idx in enumerate(todo):
        cap = radii[idx]
        if cap == 0:
            if node_vals is not None:
                out[k] = node_vals[idx]
            else:
                out[k] = _node_from_cells(cell, idx)
            continue
        reach = int(np.ceil(cap / h)) + 1
        sl = tuple(slice(max(i - reach, 0), min(i + reach, s)) for i, s in zip(idx, dom.cell_shape))
        d2 = ((centers[sl] - x[idx]) ** 2).sum(axis=-1).ravel()
        vals = cell[sl].ravel()
        order = np.argsort(d2, kind="stable")
        d2, vals = d2[order], vals[order]
        csum = np.cumsum(vals)
        jmax = int(np.ceil(cap / h)) - 1
        best = 0.0
        for j in range(1, jmax + 1):
            rj = j * h
            if rj >= cap:
                break
            cnt = int(np.searchsorted(d2, rj * rj, side="left"))
            if cnt:
                best = max(best, csum[cnt - 1] / cnt)
        out[k] = best
    if nodes is not None:
        return out
    return ScalarField(dom, out.reshape(dom.shape))


def _node_from_cells(cell: np.ndarray, idx: tuple[int, ...]) -> float:
    vals = []
    for c in _corners(len(idx)):
        j = tuple(i - b for i, b in zip(idx, c))
        if all(0 <= a < s for a, s in zip(j, cell.shape)):
            vals.append(cell[j])
    return float(np.mean(vals)) if vals else 0.0


def truncate(u: ScalarField, t: float) -> ScalarField:
    """``min(max(u, 0), t)``."""
    if not t > 0:
        raise ValueError("truncation level must be positive")
    return ScalarField(u.dom, np.clip(u.values, 0.0, t))


def lipschitz_bump_family(dom: DiscreteDomain, count: int, seed: int = 0) -> list[ScalarField]:
    """Deterministic family of Lipschitz fields vanishing off the interior.

    The family cycles through distance wedges ``min(1, d/s)``, radial bumps
    ``(1 - |x - c|/rho)_+`` with ``rho`` below the distance of ``c`` to the
    boundary, and random nonnegative combinations of earlier members.
    """
    rng = np.random.default_rng(seed)
    d = distance_to_boundary(dom).values
    interior = dom.interior
    dmax = float(d.max())
    x = dom.coords()
    pts = np.argwhere(interior & (d >= 2 * dom.spacing))
    if len(pts) == 0:
        pts = np.argwhere(interior)
    out: list[ScalarField] = []
    for i in range(count):
        kind = i % 3
        if kind == 0 or (kind == 2 and len(out) < 2):
            s = dmax * (0.5 ** (i // 3)) if i < 3 else dmax * rng.uniform(0.1, 1.0)
            vals = np.minimum(1.0, d / s)
        elif kind == 1:
            c = pts[rng.integers(len(pts))]
            rho = 0.9 * d[tuple(c)]
            dist = np.linalg.norm(x - x[tuple(c)], axis=-1)
            vals = np.maximum(0.0, 1.0 - dist / rho)
        else:
            w = rng.uniform(0.0, 1.0, size=len(out))
            vals = sum(wi * f.values for wi, f in zip(w, out)) / max(w.sum(), 1e-12)
        vals = np.where(interior, vals, 0.0)
        out.append(ScalarField(dom, vals))
    return out


def log_wedge_family(dom: DiscreteDomain, point: Sequence[float], rho: float,
                     epsilons: Sequence[float]) -> list[ScalarField]:
    """Fields concentrating at ``point``: ``clip(log(|x - point|/eps) / log(rho/eps), 0, 1)``.

    Each wedge is multiplied by ``min(1, D/D0)`` with ``D`` the distance to
    the non-interior nodes farther than ``2 rho`` from ``point`` and ``D0``
    its value at ``point``.  The fields vanish on the rest of the boundary
    and the cutoff spreads its energy over the whole domain, so the energy of
    the family is led by the wedge as ``eps`` shrinks.
    """
    x = dom.coords()
    r = np.linalg.norm(x - np.asarray(point, float), axis=-1)
    far = ~dom.interior & (r > 2 * rho)
    if far.any():
        D = distance_to_set(dom, far)
        D0 = max(float(D[dom.nearest_index(point)]), 2 * rho)
        cutoff = np.minimum(1.0, D / D0)
    else:
        cutoff = np.ones(dom.shape)
    out = []
    for eps in epsilons:
        if not 0 < eps < rho:
            raise ValueError(f"need 0 < eps < rho, got eps = {eps}")
        with np.errstate(divide="ignore"):
            w = np.clip(np.log(r / eps) / np.log(rho / eps), 0.0, 1.0)
        out.append(ScalarField(dom, np.where(dom.interior, w * cutoff, 0.0)))
    return out


def save_field(u: ScalarField, path: str | Path) -> Path:
    path = Path(path)
    rows = u.values.reshape(-1, u.dom.shape[-1])
    body = "\n".join(" ".join(repr(float(v)) for v in row) for row in rows)
    path.write_bytes((format_header(u.dom.shape, u.dom.spacing, u.dom.origin) + body + "\n").encode("ascii"))
    return path


def load_field(path: str | Path, dom: DiscreteDomain | None = None) -> ScalarField | np.ndarray:
    """Read a field file; returns a :class:`ScalarField` when ``dom`` is given."""
    lines = _read_lines(path)
    shape, h, origin = parse_header(lines)
    nrows = int(np.prod(shape[:-1])) if len(shape) > 1 else 1
    rows = []
    for i in range(nrows):
        lineno = 5 + i
        if 4 + i >= len(lines):
            raise ParseError(lineno, f"file truncated: expected {nrows} value rows, found {i}")
        parts = lines[4 + i].split()
        if len(parts) != shape[-1]:
            raise ParseError(lineno, f"expected {shape[-1]} values, found {len(parts)}")
        try:
            rows.append([float(v) for v in parts])
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from None
    if len(lines) > 4 + nrows:
        raise ParseError(5 + nrows, "unexpected trailing content")
    vals = np.array(rows).reshape(shape)
    if dom is None:
        return vals
    if dom.shape != shape or dom.spacing != h or dom.origin != origin:
        raise ParseError(3, "field header does not match the domain")
    return ScalarField(dom, vals)


def zero_set(u: ScalarField, rel: float = 1e-12) -> np.ndarray:
    """Nodes where ``|u| < rel * max |u|`` (all nodes if ``u`` vanishes)."""
    vals = np.abs(u.values)
    top = vals.max()
    return vals <= 0 if top == 0 else vals < rel * top


def support_nodes(dom: DiscreteDomain) -> np.ndarray:
    """Nodes allowed to carry nonzero values of a compactly supported field."""
    return dom.roles == Role.INTERIOR
