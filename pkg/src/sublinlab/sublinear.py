"""Monotone iteration for -Laplace_h u = m f(u) between a sub- and a supersolution."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .elliptic import DiscreteOperator, mixed_solve, operator_for, partition_operators
from .fields import FieldFunction
from .geometry import SubdomainPartition
from .weights import NonlinearityH1

LAMBDA_MAX = 1e200  # finite, so the shifted matrix stays factorizable
_INNER = 200
_EPS = np.finfo(float).eps


class IterationError(RuntimeError):
    pass


class BracketError(ValueError):
    pass


@dataclass
class BracketPair:
    sub: FieldFunction
    super: FieldFunction


@dataclass
class IterationReport:
    solution: FieldFunction
    sweeps: int
    residual: float
    converged: bool
    # per sweep, before clipping: (min step, max step, min(u - lower), min(upper - u))
    log: list = field(default_factory=list)
    upper: FieldFunction | None = None  # limit of the run started from the supersolution
    upper_sweeps: int = 0
    capped_nodes: int = 0
    residual_tol: float = 0.0

    @property
    def gap(self) -> float:
        """max(upper - lower) between the two limits (0 when only one run was made)."""
        if self.upper is None:
            return 0.0
        s = self.solution.support & self.upper.support
        return float(np.max(self.upper.values[s] - self.solution.values[s], initial=0.0))


def _weight_at(op, m):
    v = np.asarray(getattr(m, "values", m), dtype=float)
    if v.ndim == 0:
        return np.full(op.n, float(v))
    if v.shape == (op.grid.n_nodes,):
        return v[op.unknowns]
    if v.shape == (op.n,):
        return v
    raise ValueError("weight does not match the operator grid")


def _full(op, field_, name):
    v = np.asarray(getattr(field_, "values", field_), dtype=float)
    if v.ndim == 0:
        v = np.full(op.grid.n_nodes, float(v))
    if v.shape != (op.grid.n_nodes,):
        raise BracketError(f"{name} does not match the operator grid")
    if not np.all(np.isfinite(v[op.support])):
        raise BracketError(f"{name} must be defined on the unknowns and their Dirichlet nodes")
    return v


def nodal_residual(op: DiscreteOperator, mv, f: NonlinearityH1, values) -> np.ndarray:
    """-Laplace_h u - m f(u) at the unknowns, u given on all nodes."""
    return op.apply(np.nan_to_num(values)) - mv * f(values[op.unknowns])


def _roundoff(op, mv, f, values):
    """Per-node scale of the residual roundoff."""
    return op.stencil_magnitude(values) + np.abs(mv * f(values[op.unknowns]))


def check_bracket(op, m, f, bracket: BracketPair, boundary=None, tol=1e-10):
    """Raise BracketError unless (sub, super) is an ordered sub/supersolution pair."""
    mv = _weight_at(op, m)
    lo = _full(op, bracket.sub, "sub")
    hi = _full(op, bracket.super, "super")
    g = _boundary(op, boundary)
    u, d = op.unknowns, op.dirichlet
    slack = tol * np.maximum(1.0, np.maximum(np.abs(lo), np.abs(hi)))
    if np.any(lo[u] > hi[u] + slack[u]):
        raise BracketError("sub exceeds super at an unknown node")
    if np.any(lo[d] > g[d] + slack[d]) or np.any(hi[d] < g[d] - slack[d]):
        raise BracketError("bracket does not enclose the boundary data")
    r_lo = nodal_residual(op, mv, f, lo)
    r_hi = nodal_residual(op, mv, f, hi)
    s_lo = tol * np.maximum(1.0, _roundoff(op, mv, f, lo))
    s_hi = tol * np.maximum(1.0, _roundoff(op, mv, f, hi))
    if np.any(r_lo > s_lo):
        k = int(np.argmax(r_lo - s_lo))
        raise BracketError(f"sub is not a subsolution (excess {r_lo[k]:.3e} at node {u[k]})")
    if np.any(r_hi < -s_hi):
        k = int(np.argmax(-r_hi - s_hi))
        raise BracketError(f"super is not a supersolution (deficit {-r_hi[k]:.3e} at node {u[k]})")


def _boundary(op, boundary):
    g = np.zeros(op.grid.n_nodes)
    if boundary is None:
        return g
    b = np.asarray(getattr(boundary, "values", boundary), dtype=float)
    if b.ndim == 0:
        g[op.dirichlet] = float(b)
    else:
        g[op.dirichlet] = b[op.dirichlet]
    return g


def _secant(f, a, b):
    """(f(b) - f(a)) / (b - a) nodewise, 0 where a == b."""
    d = b - a
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (f(b) - f(a)) / d
    return np.where(d != 0, s, 0.0)


def _shifted_step(op, mv, mminus, f, cur, R, shift, lower, upper):
    """Solve (A + shift) d = -R, raising the shift until shift >= m^- * secant(u, u + d).

    Under that condition the new iterate keeps the sub/supersolution property
    of the old one, since R(u + d) = (m^- s - m^+ s - shift) d. Returns the
    step, the accepted shift and the number of nodes left at the cap.
    """
    shift = shift.copy()
    for _ in range(_INNER):
        if np.any(shift > 0):
            step = spla.splu((op.A + sp.diags(shift)).tocsc()).solve(-R)
        else:
            step = op.lu.solve(-R)
        raw = np.clip(cur + step, lower, upper)
        need = mminus * _secant(f, cur, raw)
        short = need > shift * (1 + 1e-12)
        if not np.any(short):
            return step, shift, 0
        shift[short] = np.minimum(LAMBDA_MAX, 1.25 * need[short])
        if np.all(shift[short] >= LAMBDA_MAX):
            break
    return step, shift, int(np.count_nonzero(short))


def _sweep_run(op, mv, f, start, lower, upper, g, direction, change_tol, residual_tol, max_sweeps):
    u_idx = op.unknowns
    mminus = np.maximum(-mv, 0.0)
    lo_u, hi_u = lower[u_idx], upper[u_idx]
    u = start.copy()
    u[op.dirichlet] = g[op.dirichlet]
    log = []
    capped = 0
    converged = False
    res = np.inf
    res_tol = 0.0
    for sweep in range(1, max_sweeps + 1):
        cur = u[u_idx]
        # first guess: the secant to the far end of the bracket, exact for the limit case
        far = hi_u if direction > 0 else lo_u
        shift = np.minimum(mminus * _secant(f, cur, far), LAMBDA_MAX)
        R = nodal_residual(op, mv, f, u)
        step, shift, left = _shifted_step(op, mv, mminus, f, cur, R, shift, lo_u, hi_u)
        capped = max(capped, left)
        bad = direction * step < 0
        step = np.where(bad & (shift >= LAMBDA_MAX), 0.5 * step, step)
        raw = cur + step
        # logged before clipping, so the monotone and sandwich properties are observed, not imposed
        log.append((float(step.min(initial=0.0)), float(step.max(initial=0.0)),
                    float(np.min(raw - lo_u, initial=0.0)), float(np.min(hi_u - raw, initial=0.0))))
        new = np.clip(raw, lo_u, hi_u)
        change = new - cur
        u[u_idx] = new
        R = nodal_residual(op, mv, f, u)
        res = float(np.max(np.abs(R), initial=0.0))
        scale = max(1.0, float(np.max(np.abs(mv * f(new)), initial=0.0)))
        noise = 64 * _EPS * float(np.max(_roundoff(op, mv, f, u), initial=0.0))
        res_tol = residual_tol * scale + noise
        size = max(1.0, float(np.max(np.abs(new), initial=0.0)))
        if np.max(np.abs(change), initial=0.0) <= change_tol * size and res <= res_tol:
            converged = True
            break
    return u, sweep, res, res_tol, converged, log, capped


def monotone_iterate(op: DiscreteOperator, m, f: NonlinearityH1, bracket: BracketPair, boundary=None,
                     change_tol=1e-10, residual_tol=1e-8, max_sweeps=500, both=True,
                     bracket_tol=1e-10) -> IterationReport:
    """Shifted monotone iteration on the unknowns of ``op``.

    Each sweep solves (A + Lambda) d = -R(u) with a nodal shift Lambda at
    least m^- times the secant slope of f between u and u + d, found by
    raising Lambda until it holds. Then every iterate of the sub-started run
    is again a subsolution and the sequence rises, and the super-started run
    falls through supersolutions. The secant stays finite where f'(0) is
    infinite, so nodes next to a dead core still move. Shifts are capped at
    LAMBDA_MAX; a capped step that goes the wrong way is halved. Iterates are
    clipped to the bracket.
    With ``both`` the supersolution run is made too, bounded below by the
    first limit.
    """
    mv = _weight_at(op, m)
    check_bracket(op, mv, f, bracket, boundary, bracket_tol)
    lo = _full(op, bracket.sub, "sub")
    hi = _full(op, bracket.super, "super")
    g = _boundary(op, boundary)
    lo_c = np.minimum(lo, hi)
    u, sweeps, res, res_tol, ok, log, capped = _sweep_run(
        op, mv, f, lo_c, lo_c, hi, g, +1, change_tol, residual_tol, max_sweeps)
    support = op.grid.mask(op.support)
    report = IterationReport(FieldFunction(op.grid, np.where(support, u, np.nan), support),
                             sweeps, res, ok, log, capped_nodes=capped, residual_tol=res_tol)
    if both:
        floor = np.where(support, u, lo_c)
        v, s2, res2, tol2, ok2, _, cap2 = _sweep_run(
            op, mv, f, hi, floor, hi, g, -1, change_tol, residual_tol, max_sweeps)
        report.upper = FieldFunction(op.grid, np.where(support, v, np.nan), support)
        report.upper_sweeps = s2
        report.converged = ok and ok2
        report.capped_nodes = max(capped, cap2)
    return report


def residual(u: FieldFunction, m, f: NonlinearityH1, op: DiscreteOperator | None = None) -> float:
    """max over the unknowns of |-Laplace_h u - m f(u)|."""
    op = operator_for(u.grid) if op is None else op
    return float(np.max(np.abs(nodal_residual(op, _weight_at(op, m), f, u.values)), initial=0.0))


@dataclass
class WProblem:
    w: FieldFunction
    theta: FieldFunction
    psi: FieldFunction
    report: IterationReport


def solve_w_problem(m_minus, f: NonlinearityH1, M: float, part: SubdomainPartition,
                    full_report=False, **tols):
    """-Laplace_h w = -m^- f(w) on Omega1, w = 0 on the outer boundary, w = M on the interface.

    Bracket: sub = max(0, M theta - k2 M^p psi) with theta the harmonic
    interface potential and psi the m^- torsion; super = M.
    """
    if not M > 0:
        raise ValueError("M must be positive")
    _, op1 = partition_operators(part)
    mm = np.maximum(np.asarray(getattr(m_minus, "values", m_minus), dtype=float), 0.0)
    if mm.ndim == 0:
        mm = np.full(part.cut.n_nodes, float(mm))
    theta = mixed_solve(part, 0.0, 0.0, 1.0)
    psi = mixed_solve(part, mm, 0.0, 0.0)
    sub = np.maximum(0.0, M * theta.values - f.k2 * M**f.p * psi.values)
    data = np.zeros(part.cut.n_nodes)
    data[part.interface] = M
    sub[part.interface] = M
    sub[part.outer_boundary] = 0.0
    sup = np.full(part.cut.n_nodes, float(M))
    sup[part.outer_boundary] = 0.0
    support = part.cut.mask(op1.support)
    bracket = BracketPair(FieldFunction(part.cut, np.where(support, sub, np.nan), support),
                          FieldFunction(part.cut, np.where(support, sup, np.nan), support))
    report = monotone_iterate(op1, -mm, f, bracket, data, both=False, **tols)
    if not report.converged:
        raise IterationError(f"w problem did not converge in {report.sweeps} sweeps")
    if full_report:
        return WProblem(report.solution, theta, psi, report)
    return report.solution


@dataclass
class PositivityReport:
    min_u: float
    min_ratio: float
    passed: bool


def positivity_certificate(u: FieldFunction, delta, nodes=None) -> PositivityReport:
    """Strict positivity proxy: min u and min u/delta over interior nodes."""
    d = np.asarray(getattr(delta, "values", delta), dtype=float)
    idx = u.grid.interior if nodes is None else np.asarray(nodes)
    if len(idx) == 0:
        return PositivityReport(0.0, 0.0, False)
    vals = u.values[idx]
    min_u = float(vals.min())
    min_ratio = float(np.min(vals / d[idx]))
    return PositivityReport(min_u, min_ratio, bool(min_u > 0 and min_ratio > 0))
