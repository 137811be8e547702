"""Discrete Dirichlet Laplacian and the linear tools built on it."""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fields import FieldFunction
from .geometry import Grid, SubdomainPartition

GREEN_FULL_LIMIT = 50_000
_BLOCK = 256


class EllipticError(RuntimeError):
    pass


class Estimate(float):
    """A float that remembers whether it is exact or a sampled bound."""

    def __new__(cls, value, exact=True):
        obj = super().__new__(cls, value)
        obj.exact = exact
        return obj


class DiscreteOperator:
    """-Laplace_h on a set of unknown nodes; every other stencil node is Dirichlet data.

    Rows use the unequal-arm three-point formula per axis,
    2/(a+b) * ((u0-uW)/a + (u0-uE)/b), which is the usual 5-point stencil
    when all arms equal h.
    """

    def __init__(self, grid: Grid, unknowns=None):
        self.grid = grid
        rows_all = np.full(grid.n_nodes, -1)
        rows_all[grid.interior] = np.arange(len(grid.interior))
        unknowns = grid.interior if unknowns is None else np.unique(np.asarray(unknowns, dtype=int))
        if np.any(rows_all[unknowns] < 0):
            raise EllipticError("unknowns must be interior nodes of the grid")
        self.unknowns = unknowns
        st_rows = rows_all[unknowns]
        nb = grid.neighbors[st_rows]
        arm = grid.arms[st_rows]
        n = len(unknowns)
        r_idx, c_idx, vals = [np.arange(n)], [unknowns], [np.zeros(n)]
        diag = np.zeros(n)
        for axis in range(grid.dim):
            a, b = arm[:, 2 * axis], arm[:, 2 * axis + 1]
            ca = 2.0 / (a * (a + b))
            cb = 2.0 / (b * (a + b))
            diag += ca + cb
            r_idx += [np.arange(n), np.arange(n)]
            c_idx += [nb[:, 2 * axis], nb[:, 2 * axis + 1]]
            vals += [-ca, -cb]
        vals[0] = diag
        L = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(r_idx), np.concatenate(c_idx))),
            shape=(n, grid.n_nodes),
        ).tocsc()
        L.sum_duplicates()
        self.L = L
        is_unknown = np.zeros(grid.n_nodes, dtype=bool)
        is_unknown[unknowns] = True
        used = np.unique(np.concatenate(c_idx[1:]))
        self.dirichlet = used[~is_unknown[used]]
        self.A = L[:, unknowns].tocsc()
        self.C = L[:, self.dirichlet].tocsc()
        self.support = np.union1d(unknowns, self.dirichlet)
        self.diag = diag

    @property
    def n(self):
        return len(self.unknowns)

    @cached_property
    def symmetric(self):
        d = abs(self.A - self.A.T)
        return d.nnz == 0 or d.max() <= 1e-12 * abs(self.A).max()

    @cached_property
    def lu(self):
        return spla.splu(self.A.tocsc())

    @cached_property
    def scale(self):
        return float(abs(self.A).sum(axis=1).max())

    def apply(self, values: np.ndarray) -> np.ndarray:
        """(-Laplace_h u) at the unknown nodes; ``values`` covers all grid nodes."""
        return self.L @ np.asarray(values, dtype=float)

    def stencil_magnitude(self, values: np.ndarray) -> np.ndarray:
        """|diag*u0| + sum |offdiag*uj|: the roundoff scale of :meth:`apply`."""
        return abs(self.L) @ np.abs(np.nan_to_num(np.asarray(values, dtype=float)))

    def dirichlet_part(self, data) -> np.ndarray:
        g = _nodal(self.grid, data)
        return self.C @ g[self.dirichlet]

    def solve_unknowns(self, rhs_unknowns, data=None, shift=None) -> np.ndarray:
        b = np.asarray(rhs_unknowns, dtype=float)
        if data is not None:
            b = b - self.dirichlet_part(data)
        if shift is None:
            return self.lu.solve(b)
        K = (self.A + sp.diags(np.asarray(shift, dtype=float))).tocsc()
        return spla.splu(K).solve(b)

    def assemble(self, u_unknowns, data=None) -> np.ndarray:
        out = np.full(self.grid.n_nodes, np.nan)
        g = _nodal(self.grid, data)
        out[self.dirichlet] = g[self.dirichlet]
        out[self.unknowns] = u_unknowns
        return out

    def green_rows(self, rows) -> np.ndarray:
        """G(x, .) for x = unknowns[rows]: u(x) = sum_y G(x,y) f(y) vol(y)."""
        rows = np.asarray(rows)
        E = np.zeros((self.n, len(rows)))
        E[rows, np.arange(len(rows))] = 1.0
        inv_rows = self.lu.solve(E, trans="T").T
        return inv_rows / self.grid.volume[self.unknowns][None, :]


_OPS: "weakref.WeakKeyDictionary[Grid, dict]" = weakref.WeakKeyDictionary()


def operator_for(grid: Grid, name="interior", unknowns=None) -> DiscreteOperator:
    """Cached operator per (grid, name); factorizations are reused across calls."""
    cache = _OPS.setdefault(grid, {})
    if name not in cache:
        cache[name] = DiscreteOperator(grid, unknowns)
    return cache[name]


def partition_operators(part: SubdomainPartition):
    return (operator_for(part.cut, "omega0", part.inner),
            operator_for(part.cut, "omega1", part.outer))


def _nodal(grid, data):
    if data is None:
        return np.zeros(grid.n_nodes)
    if isinstance(data, FieldFunction):
        return np.nan_to_num(data.values)
    arr = np.asarray(data, dtype=float)
    if arr.ndim == 0:
        return np.full(grid.n_nodes, float(arr))
    return arr


def _rhs(op, rhs):
    v = getattr(rhs, "values", rhs)
    v = np.asarray(v, dtype=float)
    if v.ndim == 0:
        return np.full(op.n, float(v))
    if v.shape == (op.grid.n_nodes,):
        return v[op.unknowns]
    if v.shape == (op.n,):
        return v
    raise EllipticError("right-hand side does not match the operator")


def solve_dirichlet(op: DiscreteOperator, rhs, boundary_data=None, tol=1e-10) -> FieldFunction:
    """Solve -Laplace_h u = rhs at the unknowns with u = boundary_data elsewhere."""
    b = _rhs(op, rhs)
    u = op.solve_unknowns(b, boundary_data)
    values = op.assemble(u, boundary_data)
    res = op.apply(np.nan_to_num(values)) - b
    scale = max(1.0, float(np.max(np.abs(b))) if b.size else 0.0,
                float(np.max(op.stencil_magnitude(values))) if b.size else 0.0)
    if res.size and np.max(np.abs(res)) > tol * scale:
        raise EllipticError(f"linear residual {np.max(np.abs(res)):.3e} above tolerance")
    return FieldFunction(op.grid, values, op.grid.mask(op.support))


def mixed_solve(part: SubdomainPartition, rhs, outer_value=0.0, interface_value=0.0) -> FieldFunction:
    """Solve on Omega1 with u = outer_value on the boundary of Omega and interface_value on the interface."""
    _, op1 = partition_operators(part)
    if op1.n == 0:
        raise EllipticError("Omega1 has no unknown nodes")
    data = np.zeros(part.cut.n_nodes)
    data[part.outer_boundary] = outer_value
    data[part.interface] = interface_value
    return solve_dirichlet(op1, rhs, data)


def torsion(op: DiscreteOperator) -> FieldFunction:
    return solve_dirichlet(op, 1.0)


def green_operator_norm(op: DiscreteOperator, r=math.inf, max_nodes=GREEN_FULL_LIMIT) -> Estimate:
    """Norm of the discrete solution map L^r -> L^inf.

    r = inf: max of the torsion function. Finite r: max over x of
    (sum_y G(x,y)^r' vol_y)^(1/r'). Above ``max_nodes`` unknowns only a
    strided subset of rows x is used and the value is a lower bound.
    """
    if not r > op.grid.dim:
        raise EllipticError(f"r={r} must exceed N={op.grid.dim}")
    if math.isinf(r):
        return Estimate(torsion(op).values[op.unknowns].max())
    rp = r / (r - 1.0)
    rows, exact = _row_sample(op.n, max_nodes)
    vol = op.grid.volume[op.unknowns]
    best = 0.0
    for start in range(0, len(rows), _BLOCK):
        G = op.green_rows(rows[start:start + _BLOCK])
        dual = (np.abs(G) ** rp @ vol) ** (1.0 / rp)
        best = max(best, float(dual.max()))
    return Estimate(best, exact)


def _row_sample(n, max_nodes):
    if n <= max_nodes:
        return np.arange(n), True
    stride = int(math.ceil(n / max_nodes))
    return np.arange(0, n, stride), False


def morel_oswald_constant(op: DiscreteOperator, delta=None, max_nodes=GREEN_FULL_LIMIT) -> Estimate:
    """min over unknown pairs (x, y) of G(x,y) / (delta(x) delta(y)).

    This is the best c with u(x) >= c delta(x) sum_y h(y) delta(y) vol(y)
    for every h >= 0. With subsampled rows the value is an upper bound.
    """
    d = op.grid.delta if delta is None else np.asarray(getattr(delta, "values", delta))
    dx = d[op.unknowns]
    if np.any(dx <= 0):
        raise EllipticError("distance must be positive at every unknown")
    rows, exact = _row_sample(op.n, max_nodes)
    best = math.inf
    for start in range(0, len(rows), _BLOCK):
        blk = rows[start:start + _BLOCK]
        G = op.green_rows(blk)
        ratio = G / dx[blk][:, None] / dx[None, :]
        best = min(best, float(ratio.min()))
    return Estimate(best, exact)


@dataclass
class EigenPair:
    lam: float
    phi: FieldFunction
    residual: float
    bracket_steps: int


def _smallest_eig(K, symmetric, v0):
    """Smallest real eigenvalue of a Z-matrix by shift-invert below its Gershgorin bound."""
    n = K.shape[0]
    d = K.diagonal()
    off = np.asarray(abs(K).sum(axis=1)).ravel() - np.abs(d)
    low = float(np.min(d - off))
    sigma = low - 1.0 - 1e-3 * abs(low)
    if n <= 8:
        Kd = K.toarray()
        w, V = (np.linalg.eigh(Kd) if symmetric else np.linalg.eig(Kd))
        i = int(np.argmin(w.real))
        return float(w[i].real), np.real(V[:, i])
    if symmetric:
        w, V = spla.eigsh(K, k=1, sigma=sigma, which="LM", v0=v0)
    else:
        w, V = spla.eigs(K, k=1, sigma=sigma, which="LM", v0=v0)
    return float(w[0].real), np.real(V[:, 0])


def principal_eigenpair(op: DiscreteOperator, m, tol=1e-8, lam_cap=1e12) -> EigenPair:
    """Smallest lambda > 0 with a positive solution of -Laplace_h phi = lambda m phi.

    mu1(lambda) = smallest eigenvalue of (-Laplace_h - lambda diag(m)) is
    concave with mu1(0) > 0; its positive root is bracketed by doubling from
    lambda = 1 and refined by bisection. phi > 0 with max phi = 1.
    """
    mv = _rhs(op, m)
    if not np.any(mv > 0):
        raise EllipticError("m^+ vanishes on the unknowns: no positive principal eigenvalue")
    A = op.A
    D = sp.diags(mv)
    sym = op.symmetric
    v0 = np.ones(op.n)

    def mu(lam):
        nonlocal v0
        val, vec = _smallest_eig((A - lam * D).tocsc(), sym, v0)
        if vec.sum() < 0:
            vec = -vec
        v0 = np.abs(vec) + 1e-300
        return val, vec

    if mu(0.0)[0] <= 0:
        raise EllipticError("operator is not positive definite")
    lo, hi, steps = 0.0, 1.0, 0
    while mu(hi)[0] > 0:
        lo, hi = hi, 2.0 * hi
        steps += 1
        if hi > lam_cap:
            raise EllipticError(f"no sign change of mu1 below lambda cap {lam_cap:g}")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if mu(mid)[0] > 0:
            lo = mid
        else:
            hi = mid
    lam = 0.5 * (lo + hi)
    val, vec = mu(lam)
    # inverse iteration just below mu1 keeps the iterate positive (M-matrix inverse)
    K = (A - lam * D - (val - 1e-6 * op.scale) * sp.identity(op.n)).tocsc()
    lu = spla.splu(K)
    phi = np.abs(vec)
    for _ in range(3):
        phi = lu.solve(phi)
        phi /= np.max(np.abs(phi))
    if phi.sum() < 0:
        phi = -phi
    if np.any(phi <= 0):
        raise EllipticError("principal eigenvector is not positive")
    phi = phi / phi.max()
    res = float(np.max(np.abs(A @ phi - lam * mv * phi)))
    if res > tol * op.scale:
        raise EllipticError(f"eigen residual {res:.3e} above tolerance")
    values = op.assemble(phi, 0.0)
    return EigenPair(lam, FieldFunction(op.grid, values, op.grid.mask(op.support)), res, steps)


def normal_derivative(u: FieldFunction, part: SubdomainPartition, side: str) -> np.ndarray:
    """d u / d nu at each interface entry, nu the outward normal of Omega0.

    Straight interfaces use the one-sided second-order difference through the
    interface node and the two nodes behind it on the requested side;
    circular interfaces use a local least-squares quadratic fit of the
    side's nodes within 2.6h.
    """
    if side not in ("omega0", "omega1"):
        raise ValueError("side must be 'omega0' or 'omega1'")
    cut = part.cut
    h = cut.h
    v = u.values
    pts = cut.coords[part.iface_nodes]
    nus = part.normals
    inward = -1.0 if side == "omega0" else 1.0
    if part.omega0.kind != "disk":
        i1 = cut.locate(pts + inward * h * nus)
        i2 = cut.locate(pts + inward * 2 * h * nus)
        u0, u1, u2 = v[part.iface_nodes], v[i1], v[i2]
        if not np.all(np.isfinite(np.concatenate([u0, u1, u2]))):
            raise EllipticError("field undefined on the one-sided stencil")
        # forward difference along inward*nu, signed back to nu
        return inward * (-3.0 * u0 + 4.0 * u1 - u2) / (2.0 * h)
    allowed = np.zeros(cut.n_nodes, dtype=bool)
    allowed[part.interface] = True
    allowed[part.inner if side == "omega0" else part.outer] = True
    if side == "omega1":
        allowed[part.outer_boundary] = True
    allowed &= np.isfinite(v)
    out = np.empty(len(pts))
    for k, (p, nu) in enumerate(zip(pts, nus)):
        idx = np.array([i for i in cut._tree.query_ball_point(p, 2.6 * h) if allowed[i]])
        d = (cut.coords[idx] - p) / h
        X = np.column_stack([np.ones(len(idx)), d[:, 0], d[:, 1], d[:, 0] ** 2, d[:, 0] * d[:, 1], d[:, 1] ** 2])
        if len(idx) < 6 or np.linalg.matrix_rank(X) < 6:
            raise EllipticError("too few nodes for the interface derivative fit")
        coef = np.linalg.lstsq(X, v[idx], rcond=None)[0]
        out[k] = (coef[1] * nu[0] + coef[2] * nu[1]) / h
    return out
