"""The double-phase integrand ``phi(x, t) = t**p + a(x) * t**q``.

The coefficient ``a`` lives on the nodes of one :class:`DiscreteDomain`.
Cell quantities use the average of the cell corners.  A
:class:`Coefficient` is the position-dependent recipe behind the samples, so
an integrand can be resampled on the many small grids used by multi-scale
checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .grid import DiscreteDomain, distance_to_set


class EmptyRegionError(ValueError):
    """Raised when a statistic is requested over an empty node or cell set."""


def phi(t, a, p: float, q: float):
    """Vectorized ``t**p + a * t**q``."""
    t = np.asarray(t, dtype=float)
    return t ** p + np.asarray(a, dtype=float) * t ** q


@dataclass(frozen=True)
class Coefficient:
    """Nonnegative coefficient recipe ``a(x)``.

    Attributes:
        func: maps coordinates of shape ``(..., n)`` to values of shape ``(...)``.
        seminorm: Hölder seminorm of ``func`` for exponent ``alpha`` (analytic).
        alpha: exponent the seminorm refers to.
        label: short description used in reports.
        needs_domain: ``func`` takes ``(coords, dom)`` instead of ``coords``.
    """

    func: Callable
    seminorm: float
    alpha: float = 1.0
    label: str = "custom"
    needs_domain: bool = False

    def sample(self, dom: DiscreteDomain) -> np.ndarray:
        x = dom.coords()
        vals = self.func(x, dom) if self.needs_domain else self.func(x)
        vals = np.broadcast_to(np.asarray(vals, dtype=float), dom.shape).copy()
        return vals

    def seminorm_for(self, alpha: float, diameter: float) -> float:
        """Seminorm for a smaller exponent on a set of the given diameter."""
        if alpha == self.alpha or self.seminorm == 0:
            return self.seminorm
        if alpha < self.alpha:
            return self.seminorm * diameter ** (self.alpha - alpha)
        raise ValueError("cannot raise the Hölder exponent of a coefficient")


def power_coefficient(base: Coefficient, s: float) -> Coefficient:
    """``a(x)**s`` for a base recipe."""
    if base.needs_domain:
        func = lambda x, dom: base.func(x, dom) ** s
    else:
        func = lambda x: base.func(x) ** s
    return Coefficient(func, base.seminorm ** s, base.alpha * s, f"({base.label})^{s}",
                       base.needs_domain)


def constant_coefficient(c: float) -> Coefficient:
    if c < 0:
        raise ValueError("coefficient must be nonnegative")
    return Coefficient(lambda x: np.full(x.shape[:-1], float(c)), 0.0, 1.0, f"const:{c}")


def linear_coefficient(v: Sequence[float]) -> Coefficient:
    """``a(x) = max(0, v . x)``, Lipschitz with constant ``|v|``."""
    vec = np.asarray(v, dtype=float)
    return Coefficient(lambda x: np.maximum(0.0, x @ vec), float(np.linalg.norm(vec)), 1.0,
                       "linear:" + ",".join(repr(float(c)) for c in vec))


def radial_coefficient(center: Sequence[float], scale: float = 1.0) -> Coefficient:
    """``a(x) = scale * |x - center|``."""
    c = np.asarray(center, dtype=float)
    return Coefficient(lambda x: scale * np.linalg.norm(x - c, axis=-1), abs(scale), 1.0,
                       f"radial:{scale}")


def dist_pow_coefficient(beta: float, target: Callable[[DiscreteDomain], np.ndarray] | None = None
                         ) -> Coefficient:
    """``a(x) = dist(x, S)**beta``; ``S`` defaults to the non-interior nodes.

    The distance is 1-Lipschitz, so for ``beta <= 1`` the seminorm with
    exponent ``beta`` is at most 1.
    """
    if beta <= 0:
        raise ValueError("dist_pow exponent must be positive")

    def func(x, dom):
        s = target(dom) if target is not None else ~dom.interior
        return distance_to_set(dom, s) ** beta

    if beta <= 1:
        return Coefficient(func, 1.0, beta, f"dist_pow:{beta}", needs_domain=True)
    return Coefficient(func, math.nan, 1.0, f"dist_pow:{beta}", needs_domain=True)


def parse_coefficient(text: str) -> Coefficient:
    """Parse a coefficient recipe.

    Accepted forms are ``const:c``, ``dist_pow:beta``, ``linear:v1,v2,...``
    and ``radial:scale,c1,c2,...`` (center defaults to the origin of the
    plane when only the scale is given).
    """
    kind, _, arg = text.partition(":")
    try:
        if kind == "const":
            return constant_coefficient(float(arg))
        if kind == "dist_pow":
            return dist_pow_coefficient(float(arg))
        if kind == "linear":
            return linear_coefficient([float(v) for v in arg.split(",")])
        if kind == "radial":
            vals = [float(v) for v in arg.split(",")]
            return radial_coefficient(vals[1:] or (0.0, 0.0), vals[0])
    except ValueError as exc:
        raise ValueError(f"bad coefficient spec {text!r}: {exc}") from None
    raise ValueError(f"unknown coefficient generator {kind!r}")


@dataclass(frozen=True, eq=False)
class DoublePhaseIntegrand:
    """``phi(x,t) = t**p + a(x) t**q`` sampled on a domain.

    Attributes:
        p, q: exponents with ``1 < p <= q``.
        alpha: Hölder exponent of ``a`` in ``(0, 1]``.
        a: node samples of the coefficient.
        holder_seminorm: ``[a]_{0;alpha}``; analytic or measured.
        seminorm_is_lower_bound: True when measured from subsampled pairs.
        gap_strict: None skips the gap invariant, otherwise selects the
            strict or non-strict gap condition to enforce.
        dom: the domain ``a`` is sampled on.
        source: recipe used by :meth:`resample`.
    """

    p: float
    q: float
    alpha: float
    a: np.ndarray
    holder_seminorm: float
    seminorm_is_lower_bound: bool = False
    gap_strict: bool | None = None
    dom: DiscreteDomain | None = None
    source: Coefficient | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        a = np.array(self.a, dtype=float)
        a.setflags(write=False)
        object.__setattr__(self, "a", a)
        if not self.p > 1:
            raise ValueError("p must exceed 1")
        if not self.q >= self.p:
            raise ValueError("q must be at least p")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if not np.all(np.isfinite(a)) or np.any(a < 0):
            raise ValueError("coefficient must be finite and nonnegative")
        if not (self.holder_seminorm >= 0):
            raise ValueError("Hölder seminorm must be a nonnegative number")
        if self.dom is not None and a.shape != self.dom.shape:
            raise ValueError("coefficient shape does not match the domain")
        if self.gap_strict is not None and self.dom is not None:
            rep = validate_gap(self, self.dom.dim, self.gap_strict)
            if not rep.passes:
                raise ValueError(f"gap condition violated: q/p = {rep.ratio:.6g} vs {rep.bound:.6g}")

    @classmethod
    def on(cls, dom: DiscreteDomain, p: float, q: float | None = None,
           coefficient: Coefficient | float | np.ndarray = 0.0, alpha: float | None = None,
           seminorm: float | None = None, gap_strict: bool | None = None) -> DoublePhaseIntegrand:
        """Sample a coefficient on ``dom``.

        A float means a constant coefficient.  A raw array needs either an
        explicit ``seminorm`` or gets a subsampled estimate (flagged).
        """
        q = p if q is None else q
        if isinstance(coefficient, (int, float)):
            coefficient = constant_coefficient(float(coefficient))
        lower = False
        if isinstance(coefficient, Coefficient):
            values = coefficient.sample(dom)
            alpha = coefficient.alpha if alpha is None else alpha
            if seminorm is None:
                diam = float(np.linalg.norm(np.array(dom.shape) - 1)) * dom.spacing
                seminorm = coefficient.seminorm_for(alpha, diam)
            source = coefficient
        else:
            values = np.asarray(coefficient, dtype=float)
            alpha = 1.0 if alpha is None else alpha
            source = None
        if seminorm is None or not math.isfinite(seminorm):
            mode = "exact" if values.size <= 4096 else "subsampled"
            seminorm = holder_seminorm_estimate(values, dom, alpha, mode)
            lower = mode == "subsampled"
        return cls(float(p), float(q), float(alpha), values, float(seminorm), lower,
                   gap_strict, dom, source)

    def resample(self, dom: DiscreteDomain) -> DoublePhaseIntegrand:
        """Same exponents and recipe on another domain."""
        if self.source is None:
            if np.ptp(self.a) == 0 and self.a.size:
                return DoublePhaseIntegrand.on(dom, self.p, self.q, float(self.a.flat[0]),
                                               self.alpha, self.holder_seminorm)
            raise ValueError("integrand has no coefficient recipe to resample")
        return DoublePhaseIntegrand(self.p, self.q, self.alpha, self.source.sample(dom),
                                    self.holder_seminorm, self.seminorm_is_lower_bound,
                                    None, dom, self.source)

    def with_exponents(self, p: float, q: float, coefficient_power: float = 1.0
                       ) -> DoublePhaseIntegrand:
        """Integrand ``t**p + a**s t**q`` with ``s = coefficient_power`` in (0, 1].

        ``|a(x)**s - a(y)**s| <= |a(x) - a(y)|**s``, so ``a**s`` has exponent
        ``s*alpha`` and seminorm at most ``[a]**s``.
        """
        s = coefficient_power
        if s == 1.0:
            return DoublePhaseIntegrand(float(p), float(q), self.alpha, self.a, self.holder_seminorm,
                                        self.seminorm_is_lower_bound, None, self.dom, self.source)
        if not 0 < s <= 1:
            raise ValueError("coefficient power must lie in (0, 1]")
        src = None if self.source is None else power_coefficient(self.source, s)
        return DoublePhaseIntegrand(float(p), float(q), self.alpha * s, self.a ** s,
                                    self.holder_seminorm ** s, self.seminorm_is_lower_bound,
                                    None, self.dom, src)

    def without_coefficient(self, exponent: float | None = None) -> DoublePhaseIntegrand:
        """Pure power ``t**exponent`` on the same domain."""
        e = self.p if exponent is None else exponent
        return DoublePhaseIntegrand(float(e), float(e), self.alpha, np.zeros_like(self.a), 0.0,
                                    False, None, self.dom, constant_coefficient(0.0))

    # -- evaluation ---------------------------------------------------------

    def eval_phi(self, node: Sequence[int], t: float) -> float:
        if t < 0:
            raise ValueError("phi is evaluated at nonnegative t; pass |.|")
        return float(phi(t, self.a[tuple(node)], self.p, self.q))

    def cell_coefficient(self) -> np.ndarray:
        """Coefficient at cell centers (average of corners)."""
        if "cell" not in self._cache:
            from .field_ops import corner_average
            self._cache["cell"] = corner_average(self.a)
        return self._cache["cell"]

    def a_bounds(self, region: np.ndarray) -> tuple[float, float]:
        """``(min, max)`` of ``a`` over a boolean node mask."""
        region = np.asarray(region, dtype=bool)
        if not region.any():
            raise EmptyRegionError("a_bounds over an empty region")
        vals = self.a[region]
        return float(vals.min()), float(vals.max())

    def phi_bounds(self, t, region: np.ndarray):
        """``(phi_minus(t), phi_plus(t))`` with constant coefficients ``a_-``, ``a_+``."""
        lo, hi = self.a_bounds(region)
        return phi(t, lo, self.p, self.q), phi(t, hi, self.p, self.q)


def holder_seminorm_estimate(a: np.ndarray, dom: DiscreteDomain, alpha: float,
                             mode: str = "exact", seed: int = 0, pairs: int = 10_000) -> float:
    """Sup of ``|a(x)-a(y)| / |x-y|**alpha`` over node pairs.

    ``exact`` scans every pair.  ``subsampled`` scans all neighbor pairs plus
    ``pairs`` random pairs and therefore returns a lower bound.
    """
    vals = np.asarray(a, dtype=float).ravel()
    pts = dom.coords().reshape(-1, dom.dim)
    if vals.size < 2:
        raise ValueError("need at least two nodes")
    best = 0.0
    if mode == "exact":
        chunk = max(1, 4_000_000 // vals.size)
        for i in range(0, vals.size, chunk):
            d = np.linalg.norm(pts[i:i + chunk, None, :] - pts[None, :, :], axis=-1)
            diff = np.abs(vals[i:i + chunk, None] - vals[None, :])
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(d > 0, diff / d ** alpha, 0.0)
            best = max(best, float(ratio.max()))
        return best
    if mode != "subsampled":
        raise ValueError(f"unknown mode {mode!r}")
    grid = np.asarray(a, dtype=float)
    h = dom.spacing
    for k in range(dom.dim):
        diff = np.abs(np.diff(grid, axis=k))
        if diff.size:
            best = max(best, float(diff.max()) / h ** alpha)
    rng = np.random.default_rng(seed)
    i = rng.integers(0, vals.size, pairs)
    j = rng.integers(0, vals.size, pairs)
    d = np.linalg.norm(pts[i] - pts[j], axis=-1)
    ok = d > 0
    if ok.any():
        best = max(best, float((np.abs(vals[i] - vals[j])[ok] / d[ok] ** alpha).max()))
    return best


@dataclass(frozen=True)
class GapReport:
    ratio: float
    bound: float
    strict: bool
    passes: bool
    passes_nonstrict: bool
    passes_strict: bool
    sobolev_branch: str
    sobolev_bound: float
    sobolev_ok: bool


def validate_gap(itg: DoublePhaseIntegrand, n: int, strict: bool = False) -> GapReport:
    """Check ``q/p <= 1 + alpha/n`` (or strict) and the Sobolev dichotomy."""
    ratio = itg.q / itg.p
    bound = 1.0 + itg.alpha / n
    nonstrict = ratio <= bound
    strict_ok = ratio < bound
    if itg.p < n:
        sob = n * itg.p / (n - itg.p)
        branch = "q <= np/(n-p)"
    else:
        sob = math.inf
        branch = "q unrestricted (p >= n)"
    return GapReport(ratio, bound, strict, strict_ok if strict else nonstrict, nonstrict,
                     strict_ok, branch, sob, itg.q <= sob)


@dataclass(frozen=True)
class MRange:
    lo: float
    hi: float
    lo_closed: bool
    hi_closed: bool
    empty: bool = False
    note: str = ""

    def __contains__(self, m: float) -> bool:
        if self.empty:
            return False
        above = m >= self.lo if self.lo_closed else m > self.lo
        below = m <= self.hi if self.hi_closed else m < self.hi
        return above and below

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lo + self.hi)


def admissible_m_range(n: int, p: float, q: float, alpha: float) -> MRange:
    """Exponents ``m`` usable in the capacity-weighted Poincaré bound.

    For ``p <= n`` the range is ``[max(1, (p n^2 + p n)/(n^2 + p n + p)), p]``;
    since ``n m/(n-m)`` increases in ``m`` it suffices to certify
    ``q <= n m/(n-m)`` at the lower end.  For ``p > n`` it is ``(n, p]``.
    """
    if q / p > 1 + alpha / n:
        return MRange(math.nan, math.nan, False, False, True,
                      f"gap condition fails: q/p = {q / p:.6g} > {1 + alpha / n:.6g}")
    if p > n:
        return MRange(float(n), float(p), False, True, False, "p > n")
    lo = max(1.0, (p * n * n + p * n) / (n * n + p * n + p))
    if lo < n and q > n * lo / (n - lo) * (1 + 1e-12):
        return MRange(math.nan, math.nan, False, False, True,
                      f"q = {q} exceeds n m/(n-m) = {n * lo / (n - lo):.6g} at m = {lo:.6g}")
    return MRange(lo, float(p), True, True, False, "p <= n")


class Phase(Enum):
    P_PHASE = "P_PHASE"
    PQ_PHASE = "PQ_PHASE"


@dataclass(frozen=True)
class PhaseTag:
    tag: Phase
    a_minus: float
    a_plus: float
    threshold: float  # [a] r**alpha


def classify_phase(itg: DoublePhaseIntegrand, z: Sequence[float], r: float) -> PhaseTag:
    """p-phase iff ``inf_{B(z,r)} a <= [a] r**alpha`` (nodes of the open ball)."""
    if itg.dom is None:
        raise ValueError("integrand is not attached to a domain")
    x = itg.dom.coords()
    region = np.linalg.norm(x - np.asarray(z, float), axis=-1) < r
    lo, hi = itg.a_bounds(region)
    thr = itg.holder_seminorm * r ** itg.alpha
    return PhaseTag(Phase.P_PHASE if lo <= thr else Phase.PQ_PHASE, lo, hi, thr)
