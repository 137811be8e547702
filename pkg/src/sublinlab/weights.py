"""Weight fields m, their positive/negative parts, norms and the H1 nonlinearities."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .expressions import Expression
from .geometry import ON_TOL, Domain, Grid

# even rule: no quadrature point at the node itself, where a weight may be singular
_GAUSS, _GAUSS_W = np.polynomial.legendre.leggauss(4)
_GAUSS_W = _GAUSS_W / 2.0


class WeightError(ValueError):
    pass


@dataclass(frozen=True)
class WeightPiece:
    region: Domain | None
    expr: Expression

    def claims(self, pts, tol):
        if self.region is None:
            return np.ones(len(pts), dtype=bool)
        return self.region.contains(pts, tol)


@dataclass(frozen=True)
class PiecewiseWeight:
    """Analytic weight: the first piece whose (closed) region holds a point defines m there."""

    pieces: tuple
    scale: float = 1.0

    def evaluate(self, pts, tol=1e-12):
        pts = np.atleast_2d(pts)
        out = np.full(len(pts), np.nan)
        free = np.ones(len(pts), dtype=bool)
        for piece in self.pieces:
            take = free & piece.claims(pts, tol)
            if np.any(take):
                out[take] = self.scale * piece.expr.at(pts[take])
                free &= ~take
        return out, free

    def nodal(self, grid: Grid):
        vals, free = self.evaluate(grid.coords, ON_TOL * grid.h)
        if np.any(free):
            bad = grid.coords[np.flatnonzero(free)[0]]
            raise WeightError(f"no weight piece claims the node at {tuple(bad)}")
        return vals

    def cell_average(self, grid: Grid):
        """4-point Gauss-Legendre average per axis over the cell of each node."""
        base = None
        dim = grid.dim
        offs = np.array(np.meshgrid(*([_GAUSS] * dim), indexing="ij")).reshape(dim, -1).T
        wts = np.prod(np.array(np.meshgrid(*([_GAUSS_W] * dim), indexing="ij")).reshape(dim, -1), axis=0)
        total = np.zeros(grid.n_nodes)
        for off, wt in zip(offs, wts):
            pts = grid.coords + 0.5 * grid.h * off
            vals, free = self.evaluate(pts, ON_TOL * grid.h)
            if np.any(free):
                base = self.nodal(grid) if base is None else base
                vals[free] = base[free]
            total += wt * vals
        return total


@dataclass(eq=False)
class WeightField:
    """Nodal weight m on a grid, with integrability exponent r.

    ``source`` (grid -> nodal values) lets the same analytic weight be
    re-sampled on a related grid such as the cut grid of a partition;
    ``pointwise`` evaluates it at arbitrary points.
    """

    grid: Grid
    values: np.ndarray
    r: float = math.inf
    source: Callable | None = field(default=None, repr=False)
    pointwise: Callable | None = field(default=None, repr=False)
    mode: str = "nodal"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_nodes,):
            raise WeightError("weight values do not match the grid")
        if not self.r > self.grid.dim:
            raise WeightError(f"integrability exponent r={self.r} must exceed N={self.grid.dim}")
        if not np.all(np.isfinite(self.values)):
            raise WeightError("weight must be finite at every node")

    @classmethod
    def from_pieces(cls, grid, pieces, r=math.inf, mode="nodal", scale=1.0):
        definition = PiecewiseWeight(tuple(pieces), scale)
        if mode == "nodal":
            source = definition.nodal
        elif mode == "cell-average":
            source = definition.cell_average
        else:
            raise WeightError(f"unknown evaluation mode {mode!r}")

        def pointwise(pts):
            return definition.evaluate(pts, 1e-12)[0]

        return cls(grid, source(grid), r, source, pointwise, mode)

    @classmethod
    def from_function(cls, grid, func, r=math.inf):
        """Weight from a vectorized ``func(coords) -> values``."""
        return cls(grid, func(grid.coords), r, lambda g: func(g.coords), func)

    @classmethod
    def constant(cls, grid, value, r=math.inf):
        return cls.from_function(grid, lambda pts: np.full(len(np.atleast_2d(pts)), float(value)), r)

    def on(self, grid: Grid) -> "WeightField":
        if self.source is None:
            raise WeightError("weight has no analytic source to resample")
        return WeightField(grid, self.source(grid), self.r, self.source, self.pointwise, self.mode)

    def transformed(self, fn) -> "WeightField":
        """Apply a nodal map to the values (and to the analytic source, if any)."""
        src = None if self.source is None else (lambda g, s=self.source: fn(s(g)))
        pw = None if self.pointwise is None else (lambda p, s=self.pointwise: fn(s(p)))
        return WeightField(self.grid, fn(self.values), self.r, src, pw, self.mode)

    def scaled(self, c: float) -> "WeightField":
        return self.transformed(lambda v: c * v)

    def __neg__(self):
        return self.scaled(-1.0)

    @property
    def plus(self):
        return self.transformed(lambda v: np.maximum(v, 0.0))

    @property
    def minus(self):
        return self.transformed(lambda v: np.maximum(-v, 0.0))


def split_pm(m: WeightField):
    """m = m_plus - m_minus with both parts nonnegative."""
    return m.plus, m.minus


def _values(f):
    return np.asarray(getattr(f, "values", f), dtype=float)


def _select(n, region):
    if region is None:
        return np.arange(n)
    region = np.asarray(region)
    if region.dtype == bool:
        return np.flatnonzero(region)
    return region.astype(int)


def lr_norm(field, r, region=None, volume=None) -> float:
    """Discrete L^r norm (sum |v|^r vol)^(1/r) over ``region``; max for r = inf.

    ``region`` is a boolean mask or index array (default: all nodes).
    An empty region gives 0 and a RuntimeWarning.
    """
    v = _values(field)
    grid = getattr(field, "grid", None)
    if grid is not None and not r > grid.dim:
        raise WeightError(f"r={r} must exceed N={grid.dim}")
    if volume is None:
        if grid is None:
            raise WeightError("a volume vector is required for bare arrays")
        volume = grid.volume
    sel = _select(len(v), region)
    if len(sel) == 0:
        warnings.warn("L^r norm over an empty region", RuntimeWarning, stacklevel=2)
        return 0.0
    a = np.abs(v[sel])
    if math.isinf(r):
        return float(a.max())
    return float(np.sum(a**r * np.asarray(volume)[sel]) ** (1.0 / r))


def weighted_delta_integral(m, delta, q, region=None, volume=None) -> float:
    """sum m * delta^q * vol over ``region``."""
    if q < 0:
        raise WeightError("q must be nonnegative")
    v = _values(m)
    d = _values(delta)
    if volume is None:
        volume = m.grid.volume
    sel = _select(len(v), region)
    return float(np.sum(v[sel] * d[sel] ** q * np.asarray(volume)[sel]))


@dataclass(frozen=True)
class NonlinearityH1:
    """Nondecreasing f on [0, inf) with k1*xi^p <= f(xi) <= k2*xi^p, 0 < p < 1.

    ``derivative_bound(lo, hi)`` returns a Lipschitz constant of f on each
    nodal interval [lo, hi]; without it a secant estimate is used.
    """

    p: float
    k1: float
    k2: float
    func: Callable = field(repr=False)
    derivative_bound: Callable | None = field(default=None, repr=False)
    name: str = "custom"

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ValueError("p must lie in (0,1)")
        if not (self.k1 > 0 and self.k2 > 0):
            raise ValueError("k1 and k2 must be positive")
        if self.k1 > self.k2:
            raise ValueError("k1 must not exceed k2")

    @property
    def beta(self):
        return 1.0 / (1.0 - self.p)

    def __call__(self, xi):
        return self.func(np.maximum(np.asarray(xi, dtype=float), 0.0))

    def lipschitz(self, lo, hi):
        lo = np.maximum(np.asarray(lo, dtype=float), 0.0)
        hi = np.maximum(np.asarray(hi, dtype=float), lo)
        if self.derivative_bound is not None:
            return np.asarray(self.derivative_bound(lo, hi), dtype=float)
        t = np.linspace(0.0, 1.0, 17)
        width = np.maximum(hi - lo, 1e-12 * np.maximum(lo, 1e-300))
        pts = lo[..., None] + width[..., None] * t
        with np.errstate(all="ignore"):
            slope = np.diff(self(pts), axis=-1) / np.diff(pts, axis=-1)
        return 2.0 * np.nan_to_num(slope.max(axis=-1), nan=np.inf, posinf=np.inf)

    @classmethod
    def power(cls, p, kappa=1.0, k1=None, k2=None):
        """f = kappa * xi^p."""

        def bound(lo, hi):
            with np.errstate(divide="ignore"):
                return np.where(lo > 0, kappa * p * np.power(np.where(lo > 0, lo, 1.0), p - 1.0), np.inf)

        return cls(p, kappa if k1 is None else k1, kappa if k2 is None else k2,
                   lambda xi: kappa * np.power(xi, p), bound, "power")

    @classmethod
    def power_plus_min(cls, p, kappa=1.0):
        """f = kappa * (xi^p + min(xi, xi^p)); envelope constants kappa and 2*kappa."""

        def bound(lo, hi):
            safe = np.where(lo > 0, lo, 1.0)
            d = p * np.power(safe, p - 1.0)
            out = kappa * (d + np.where(lo < 1.0, 1.0, d))
            return np.where(lo > 0, out, np.inf)

        return cls(p, kappa, 2.0 * kappa,
                   lambda xi: kappa * (np.power(xi, p) + np.minimum(xi, np.power(xi, p))),
                   bound, "power-plus-min")


@dataclass
class H1Report:
    passed: bool
    samples: int
    lattice: str
    violation: str | None = None
    xi: float | None = None


def validate_h1(f: NonlinearityH1, samples: int = 1000) -> H1Report:
    """Sampled check of f(0) = 0, monotonicity and the k1/k2 power envelope.

    The lattice is xi = 0 plus ``samples`` log-spaced points in [1e-8, 1e8].
    A pass is evidence, not proof.
    """
    if samples < 100:
        raise ValueError("sample count must be at least 100")
    xi = np.concatenate([[0.0], np.logspace(-8, 8, samples)])
    fx = f(xi)
    lattice = f"0 + {samples} log-spaced points in [1e-8, 1e8]"
    rep = H1Report(True, samples, lattice)
    if fx[0] != 0.0:
        return H1Report(False, samples, lattice, "f(0) != 0", 0.0)
    if not np.all(np.isfinite(fx)) or np.any(fx < 0):
        i = int(np.flatnonzero(~np.isfinite(fx) | (fx < 0))[0])
        return H1Report(False, samples, lattice, "f not finite and nonnegative", float(xi[i]))
    drop = np.flatnonzero(np.diff(fx) < -1e-12 * np.abs(fx[1:]))
    if drop.size:
        return H1Report(False, samples, lattice, "f decreases", float(xi[drop[0] + 1]))
    env = xi**f.p
    low = np.flatnonzero(fx < f.k1 * env * (1 - 1e-12))
    high = np.flatnonzero(fx > f.k2 * env * (1 + 1e-12))
    first = sorted([(i, "below k1*xi^p") for i in low[:1]] + [(i, "above k2*xi^p") for i in high[:1]])
    if first:
        i, what = first[0]
        return H1Report(False, samples, lattice, what, float(xi[i]))
    return rep


@dataclass
class ConvexityReport:
    passed: bool
    nonpositive: bool
    convex: bool
    pairs: int
    worst_sign: float
    worst_gap: float


def check_convex_nonpositive(m: WeightField, region: Domain, max_nodes: int = 200) -> ConvexityReport:
    """m <= 0 on the closed region and midpoint-convex on sampled node pairs.

    Pairs are taken among up to ``max_nodes`` evenly strided region nodes.
    Midpoints are evaluated analytically when the weight has a pointwise
    form, otherwise only pairs whose midpoint is a lattice node are used.
    """
    grid = m.grid
    tol = ON_TOL * grid.h
    nodes = np.flatnonzero(region.contains(grid.coords, tol) & grid.on_lattice)
    vals = m.values[nodes]
    scale = max(1.0, float(np.max(np.abs(vals)))) if len(vals) else 1.0
    worst_sign = float(vals.max()) if len(vals) else 0.0
    nonpositive = worst_sign <= 1e-12 * scale
    if len(nodes) > max_nodes:
        nodes = nodes[np.linspace(0, len(nodes) - 1, max_nodes).round().astype(int)]
    i, j = np.triu_indices(len(nodes), k=1)
    a, b = nodes[i], nodes[j]
    mid = 0.5 * (grid.coords[a] + grid.coords[b])
    if m.pointwise is not None:
        mval = m.pointwise(mid)
    else:
        d, near = grid._tree.query(mid)
        keep = d <= 1e-7 * grid.h
        a, b, mval = a[keep], b[keep], m.values[near[keep]]
    gap = mval - 0.5 * (m.values[a] + m.values[b])
    worst_gap = float(gap.max()) if gap.size else -math.inf
    convex = worst_gap <= 1e-12 * scale
    return ConvexityReport(nonpositive and convex, nonpositive, convex, int(gap.size), worst_sign, worst_gap)
