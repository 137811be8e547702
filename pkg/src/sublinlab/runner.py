"""Run a scenario end to end and write its report and field dumps."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, Scenario
from .constructions import (CERTIFIED, TRIVIAL, cnp, corollary33_certify, lemma22_bracket, theorem31_certify,
                            theorem32_certify)
from .elliptic import green_operator_norm, morel_oswald_constant, operator_for, principal_eigenpair, solve_dirichlet, torsion
from .fields import FieldFunction, fmt, write_csv
from .geometry import build_grid, make_partition
from .sublinear import BracketPair, monotone_iterate, positivity_certificate, residual
from .weights import NonlinearityH1, WeightField, WeightPiece, lr_norm, validate_h1

SWEEP_PARAMS = ("p", "resolution", "weight_scale", "omega1_amplitude")


@dataclass
class RunReport:
    scenario: Scenario
    sections: dict = field(default_factory=dict)
    fields: dict = field(default_factory=dict)
    wall_time: float = 0.0
    certs: dict = field(default_factory=dict)

    def add(self, section, key, value):
        self.sections.setdefault(section, []).append((key, value))

    def get(self, dotted):
        section, key = dotted.split(".", 1)
        for k, v in self.sections.get(section, []):
            if k == key:
                return v
        raise KeyError(dotted)

    def flat(self):
        return {f"{s}.{k}": v for s, items in self.sections.items() for k, v in items}

    def render(self) -> str:
        lines = []
        for s, items in self.sections.items():
            lines.append(f"[{s}]")
            lines += [f"{k} = {fmt(v)}" for k, v in items]
            lines.append("")
        return "\n".join(lines)

    def write(self, out_dir) -> Path:
        target = Path(out_dir) / self.scenario.name
        (target / "fields").mkdir(parents=True, exist_ok=True)
        for old in (target / "fields").glob("*.csv"):
            old.unlink()
        for name, fld in self.fields.items():
            if isinstance(fld, FieldFunction):
                fld.to_csv(target / "fields" / f"{name}.csv")
            else:
                write_csv(target / "fields" / f"{name}.csv", *fld)
        (target / "report.txt").write_text(self.render())
        (target / "timing.txt").write_text(f"wall_time_seconds = {self.wall_time:.3f}\n")
        return target


def build_nonlinearity(sc: Scenario) -> NonlinearityH1:
    if sc.family == "power-plus-min":
        return NonlinearityH1.power_plus_min(sc.p, sc.kappa)
    return NonlinearityH1.power(sc.p, sc.kappa, sc.k1, sc.k2)


def build_weight(sc: Scenario, grid) -> WeightField:
    pieces = [WeightPiece(region, e) for region, e, _ in sc.pieces]
    m = WeightField.from_pieces(grid, pieces, sc.r, sc.mode, sc.scale)
    if sc.minus_scale != 1.0:
        a = sc.minus_scale
        m = m.transformed(lambda v: np.maximum(v, 0.0) - a * np.maximum(-v, 0.0))
    return m


def _tols(sc):
    t = sc.tolerances
    return dict(change_tol=t.change, residual_tol=t.residual, max_sweeps=t.max_sweeps)


def run(sc: Scenario, resolution: int | None = None) -> RunReport:
    if resolution is not None:
        sc = sc.with_changes(resolution=int(resolution))
    start = time.perf_counter()
    rep = RunReport(sc)
    rep.add("scenario", "name", sc.name)
    rep.add("scenario", "kind", sc.kind)
    rep.add("scenario", "domain", sc.domain.spec())
    rep.add("scenario", "resolution", sc.resolution)
    rep.add("scenario", "version", __version__)
    grid = build_grid(sc.domain, sc.resolution)
    rep.add("geometry", "h", grid.h)
    rep.add("geometry", "nodes", grid.n_nodes)
    rep.add("geometry", "interior_nodes", len(grid.interior))
    rep.add("geometry", "volume", float(grid.volume.sum()))
    if sc.kind == "poisson":
        _poisson(rep, sc, grid)
    else:
        f = build_nonlinearity(sc)
        m = build_weight(sc, grid)
        _weight_section(rep, sc, grid, m, f)
        {"solve": _solve, "certify-existence": _existence, "certify-nonexistence": _nonexistence,
         "corollary33": _corollary, "constants": _constants}[sc.kind](rep, sc, grid, m, f)
        _consistency(rep, sc, grid, m, f)
    rep.wall_time = time.perf_counter() - start
    return rep


def _weight_section(rep, sc, grid, m, f):
    rep.add("weights", "r", m.r)
    rep.add("weights", "mode", m.mode)
    rep.add("weights", "family", f.name)
    rep.add("weights", "p", f.p)
    rep.add("weights", "k1", f.k1)
    rep.add("weights", "k2", f.k2)
    h1 = validate_h1(f)
    rep.add("weights", "h1_valid", h1.passed)
    rep.add("weights", "m_min", float(m.values.min()))
    rep.add("weights", "m_max", float(m.values.max()))
    rep.add("weights", "norm_plus", lr_norm(m.plus, m.r))
    rep.add("weights", "norm_minus", lr_norm(m.minus, m.r))


def _poisson(rep, sc, grid):
    op = operator_for(grid)
    rhs = sc.rhs.at(grid.coords)
    data = sc.exact.at(grid.coords) if sc.exact is not None else 0.0
    u = solve_dirichlet(op, rhs, data, tol=sc.tolerances.linear)
    rep.add("elliptic", "u_max", u.sup_norm())
    if sc.exact is not None:
        err = np.abs(u.values - sc.exact.at(grid.coords))[u.support]
        rep.add("elliptic", "max_error", float(err.max()))
    rep.fields["u"] = u


def _bracket_from_config(sc, grid, op, m, f):
    if sc.sub is not None:
        lo = FieldFunction(grid, sc.sub.at(grid.coords))
        hi = FieldFunction(grid, sc.super.at(grid.coords))
        return BracketPair(lo, hi), "config"
    if np.all(m.values[op.unknowns] >= 0):
        return lemma22_bracket(op, m, f, sc.tolerances.eigen), "positive-weight"
    raise ConfigError(["solve with a sign-changing weight needs [pipeline] sub and super"])


def _solve(rep, sc, grid, m, f):
    op = operator_for(grid)
    bracket, origin = _bracket_from_config(sc, grid, op, m, f)
    rep.add("sublinear", "bracket", origin)
    if origin == "positive-weight":
        rep.add("sublinear", "bracket_eps", bracket.eps)
        rep.add("sublinear", "bracket_k", bracket.k)
        rep.add("sublinear", "lambda1", bracket.eigen.lam)
    it = monotone_iterate(op, m, f, bracket, 0.0, **_tols(sc))
    u = it.solution
    rep.add("sublinear", "converged", it.converged)
    rep.add("sublinear", "sweeps", it.sweeps)
    rep.add("sublinear", "upper_sweeps", it.upper_sweeps)
    rep.add("sublinear", "residual", residual(u, m, f, op))
    rep.add("sublinear", "residual_tol", it.residual_tol)
    rep.add("sublinear", "limit_gap", it.gap)
    rep.add("sublinear", "monotonicity_violation", max(0.0, -min(entry[0] for entry in it.log)))
    rep.add("sublinear", "sandwich_min_margin", min(min(e[2], e[3]) for e in it.log))
    rep.add("sublinear", "capped_nodes", it.capped_nodes)
    rep.add("sublinear", "u_max", u.sup_norm())
    pos = positivity_certificate(u, grid.delta)
    rep.add("sublinear", "min_u", pos.min_u)
    rep.add("sublinear", "min_u_over_delta", pos.min_ratio)
    rep.add("sublinear", "positive", pos.passed)
    if sc.exact is not None:
        err = np.abs(u.values - sc.exact.at(grid.coords))[u.support]
        rep.add("sublinear", "max_error", float(err.max()))
    rep.fields.update(u=u, sub=bracket.sub, super=bracket.super, u_upper=it.upper)
    rep.add("verdict", "solution", "positive" if (it.converged and pos.passed) else "not certified")
    rep.add("verdict", "solution.uses", "sublinear.converged, sublinear.positive")


def _constants(rep, sc, grid, m, f):
    op = operator_for(grid)
    rep.add("constructions", "cnp", cnp(grid.dim, f.p))
    G = green_operator_norm(op, m.r)
    rep.add("elliptic", "green_norm", float(G))
    rep.add("elliptic", "green_norm_exact", G.exact)
    t = torsion(op)
    rep.add("elliptic", "torsion_max", t.sup_norm())
    c = morel_oswald_constant(op)
    rep.add("elliptic", "morel_oswald", float(c))
    rep.add("elliptic", "morel_oswald_exact", c.exact)
    rep.fields["torsion"] = t
    if np.any(m.values[op.unknowns] > 0):
        eig = principal_eigenpair(op, m, sc.tolerances.eigen)
        rep.add("elliptic", "lambda1", eig.lam)
        rep.add("elliptic", "eigen_residual", eig.residual)
        rep.fields["phi"] = eig.phi


def _existence(rep, sc, grid, m, f):
    part = make_partition(grid, sc.omega0)
    rep.add("geometry", "omega0", part.omega0.spec())
    rep.add("geometry", "interface_entries", len(part.iface_nodes))
    cert = theorem31_certify(m, f, part, **_tols(sc))
    _existence_keys(rep, cert)
    rep.fields.update(w=cert.w, theta=cert.theta, psi=cert.psi, v=cert.v, omega=cert.omega)
    pts = part.cut.coords[part.iface_nodes]
    rep.fields["flux_u"] = (pts, cert.flux_u)
    rep.fields["flux_w"] = (pts, cert.flux_w)
    if cert.final is not None:
        rep.fields["u"] = cert.final.solution
    rep.certs["existence"] = cert


def _existence_keys(rep, cert):
    s = "constructions"
    for key in ("r", "norm_minus", "c1", "c2", "c3", "c4", "c5", "M", "J"):
        rep.add(s, key, getattr(cert, key))
    rep.add(s, "w_sweeps", cert.w_sweeps)
    rep.add(s, "w_positive", cert.w_positive)
    rep.add(s, "dw_dnu_max_abs", float(np.max(np.abs(cert.flux_w))))
    rep.add(s, "du_dnu_max", float(np.max(cert.flux_u)))
    rep.add(s, "dw_dnu_min", float(np.min(cert.flux_w)))
    rep.add(s, "corner_entries", cert.corner_entries)
    rep.add(s, "flux_margin", cert.flux_margin)
    rep.add(s, "flux_pass", cert.flux_pass)
    rep.add(s, "v_sweeps", cert.v_sweeps)
    rep.add(s, "v_lower_bound_gap", cert.v_bound_gap)
    rep.add(s, "v_lower_bound_ok", cert.v_bound_ok)
    rep.add(s, "inequality_lhs", cert.inequality_lhs)
    rep.add(s, "inequality_rhs", cert.inequality_rhs)
    rep.add(s, "inequality_pass", cert.inequality_pass)
    rep.add(s, "omega_subsolution", cert.omega_subsolution)
    rep.add(s, "omega_excess", cert.omega_excess)
    rep.add(s, "super_k_doublings", cert.super_k_doublings)
    if cert.final is not None:
        rep.add(s, "final_converged", cert.final.converged)
        rep.add(s, "final_sweeps", cert.final.sweeps)
        rep.add(s, "final_residual", cert.final.residual)
        rep.add(s, "final_u_max", cert.final.solution.sup_norm())
        rep.add(s, "final_min_u", cert.positivity.min_u)
        rep.add(s, "final_min_u_over_delta", cert.positivity.min_ratio)
        rep.add(s, "final_positive", cert.positivity.passed)
    for i, note in enumerate(cert.notes):
        rep.add(s, f"note_{i}", note)
    rep.add("verdict", "existence", "issued" if cert.issued else "not issued")
    rep.add("verdict", "existence.uses",
            "constructions.flux_pass, constructions.omega_subsolution, constructions.final_converged, "
            "constructions.final_positive")
    rep.add("verdict", "sufficient_inequality", "holds" if cert.inequality_pass else "fails")
    rep.add("verdict", "sufficient_inequality.uses", "constructions.inequality_lhs, constructions.inequality_rhs")


def _nonexistence(rep, sc, grid, m, f):
    cert = theorem32_certify(m, f, grid)
    _nonexistence_keys(rep, cert)
    if cert.barrier is not None:
        rep.fields["barrier"] = cert.barrier
    rep.certs["nonexistence"] = cert


def _nonexistence_keys(rep, cert, section="constructions", prefix=""):
    def add(k, v):
        rep.add(section, prefix + k, v)

    add("cnp", cert.cnp)
    add("green_norm", cert.green_norm)
    add("green_norm_exact", cert.green_exact)
    add("norm_plus", cert.norm_plus)
    add("balls", cert.balls)
    if cert.ball is not None:
        add("ball_center", " ".join(fmt(c) for c in cert.ball.center))
        add("ball_radius", cert.ball.radius)
        add("ball_m_R", cert.ball.m_R)
        add("ball_score", cert.ball.score)
        add("barrier_checked", cert.barrier_report.checked)
        add("barrier_max_excess", cert.barrier_report.max_excess)
        add("barrier_max_defect", cert.barrier_report.max_defect)
        add("barrier_pass", cert.barrier_report.passed)
    add("lhs", cert.lhs)
    add("rhs", cert.rhs)
    if prefix:
        return
    rep.add("verdict", "nonexistence", cert.verdict)
    if cert.verdict == TRIVIAL:
        rep.add("verdict", "nonexistence.uses", "weights.m_max")
    else:
        rep.add("verdict", "nonexistence.uses", "constructions.lhs, constructions.rhs")
    rep.add("verdict", "scope", "continuous solutions; grid balls under-estimate the ball supremum")


def _corollary(rep, sc, grid, m, f):
    cr = corollary33_certify(m, f, sc.omega1, grid, samples=sc.samples)
    s = "constructions"
    rep.add(s, "cnp", cr.cnp)
    rep.add(s, "green_norm", cr.green_norm)
    rep.add(s, "omega1_measure", cr.measure)
    rep.add(s, "minus_delta2_integral", cr.integral)
    rep.add(s, "lhs", cr.lhs)
    rep.add(s, "rhs", cr.rhs)
    rep.add(s, "norm_plus_whole_domain", cr.norm_plus_all)
    rep.add(s, "norms_agree", cr.norms_agree)
    rep.add(s, "ingredient_samples", cr.samples)
    rep.add(s, "ingredient_margin", cr.ingredient_margin)
    rep.add(s, "ingredient_pass", cr.ingredient_pass)
    rep.add("verdict", "nonexistence", cr.verdict)
    rep.add("verdict", "nonexistence.uses", "constructions.lhs, constructions.rhs")
    rep.certs["corollary"] = cr


def _consistency(rep, sc, grid, m, f):
    """Run whichever certificate the pipeline did not, and flag a contradiction."""
    exist = rep.certs.get("existence")
    if exist is None and sc.omega0 is not None and sc.kind != "certify-existence":
        try:
            exist = theorem31_certify(m, f, make_partition(grid, sc.omega0), **_tols(sc))
        except Exception as exc:  # recorded, not fatal: the cross-check is advisory
            rep.add("consistency", "existence_error", str(exc))
    non = rep.certs.get("nonexistence")
    if non is None:
        non = theorem32_certify(m, f, grid)
        _nonexistence_keys(rep, non, "consistency", "nonexistence_")
    cor = rep.certs.get("corollary")
    flat = rep.flat()
    solved = bool(flat.get("sublinear.converged") and flat.get("sublinear.positive"))
    existence = bool(exist is not None and exist.issued) or solved
    nonexistence = non.verdict in (CERTIFIED, TRIVIAL) or (cor is not None and cor.verdict == CERTIFIED)
    rep.add("consistency", "existence_certificate", "not run" if exist is None else exist.issued)
    rep.add("consistency", "positive_solution_found", solved)
    rep.add("consistency", "nonexistence_verdict", non.verdict)
    rep.add("consistency", "alarm", existence and nonexistence)


def write_run(sc: Scenario, out_dir, resolution=None) -> tuple[RunReport, Path]:
    rep = run(sc, resolution)
    return rep, rep.write(out_dir)


def _variant(sc: Scenario, param: str, value: float) -> Scenario:
    if param == "p":
        return sc.with_changes(p=value)
    if param == "resolution":
        return sc.with_changes(resolution=int(value))
    if param == "weight_scale":
        return sc.with_changes(scale=value)
    if param == "omega1_amplitude":
        return sc.with_changes(minus_scale=value)
    raise ConfigError([f"sweep parameter must be one of {', '.join(SWEEP_PARAMS)}"])


def sweep(sc: Scenario, param: str, values, out_dir=None):
    """One run per value; returns (columns, rows) and writes sweep_<param>.csv when out_dir is given."""
    if param not in SWEEP_PARAMS:
        raise ConfigError([f"sweep parameter must be one of {', '.join(SWEEP_PARAMS)}"])
    reports = [run(_variant(sc, param, v)) for v in values]
    flats = [r.flat() for r in reports]
    keys = [k for k, v in flats[0].items()
            if all(k in fl for fl in flats) and isinstance(v, (int, float, bool, np.number))]
    rows = [[v] + [fl[k] for k in keys] for v, fl in zip(values, flats)]
    columns = [param] + keys
    if out_dir is not None:
        target = Path(out_dir) / sc.name
        target.mkdir(parents=True, exist_ok=True)
        lines = [",".join(columns)] + [",".join(fmt(x) for x in row) for row in rows]
        (target / f"sweep_{param}.csv").write_text("\n".join(lines) + "\n")
    return columns, rows


def parse_sweep(text: str):
    if "=" not in text:
        raise ConfigError(["--sweep expects <param>=<v1,v2,...>"])
    param, vals = text.split("=", 1)
    param = param.strip()
    if param not in SWEEP_PARAMS:
        raise ConfigError([f"sweep parameter must be one of {', '.join(SWEEP_PARAMS)}"])
    try:
        values = [float(v) for v in vals.split(",") if v.strip()]
    except ValueError:
        raise ConfigError([f"bad sweep values {vals!r}"]) from None
    if not values or any(math.isnan(v) for v in values):
        raise ConfigError(["--sweep needs at least one value"])
    if param == "resolution":
        values = [int(v) for v in values]
    return param, values
