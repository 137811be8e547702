"""Scenario files: INI sections describing one run."""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

from .expressions import Expression, ExpressionError
from .geometry import Domain, GeometryError, parse_shape

KINDS = ("solve", "certify-existence", "certify-nonexistence", "corollary33", "constants", "poisson")
FAMILIES = ("power", "power-plus-min")

_KEYS = {
    "domain": {"shape"},
    "grid": {"resolution"},
    "weight": {"r", "mode", "scale", "minus_scale"},
    "nonlinearity": {"family", "p", "k1", "k2", "kappa"},
    "omega0": {"shape"},
    "omega1": {"shape"},
    "pipeline": {"name", "kind", "exact", "rhs", "sub", "super", "samples"},
    "tolerances": {"linear", "eigen", "residual", "change", "max_sweeps"},
}
_PIECE = re.compile(r"^weight\.piece\.(\w+)$")


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class Tolerances:
    linear: float = 1e-10
    eigen: float = 1e-8
    residual: float = 1e-8
    change: float = 1e-10
    max_sweeps: int = 500


@dataclass(frozen=True)
class Scenario:
    name: str
    kind: str
    domain: Domain
    resolution: int
    pieces: tuple = ()  # (region or None, Expression, label)
    r: float = math.inf
    mode: str = "nodal"
    scale: float = 1.0
    minus_scale: float = 1.0
    family: str = "power"
    p: float = 0.5
    k1: float | None = None
    k2: float | None = None
    kappa: float = 1.0
    omega0: Domain | None = None
    omega1: Domain | None = None
    exact: Expression | None = None
    rhs: Expression | None = None
    sub: Expression | None = None
    super: Expression | None = None
    samples: int = 50
    tolerances: Tolerances = field(default_factory=Tolerances)
    source: str = ""

    def with_changes(self, **kw) -> "Scenario":
        return replace(self, **kw)


def _float(text, key, problems, positive=False):
    try:
        v = float(text)
    except ValueError:
        problems.append(f"{key}: not a number: {text!r}")
        return None
    if math.isnan(v) or (positive and not v > 0):
        problems.append(f"{key}: must be positive")
        return None
    return v


def parse_text(text: str, source: str = "<string>") -> Scenario:
    cp = configparser.ConfigParser(comment_prefixes=("#",), inline_comment_prefixes=("#",),
                                   interpolation=None, delimiters=("=",))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError([f"syntax: {exc}"]) from None
    problems = []
    pieces = []
    for sec in cp.sections():
        mp = _PIECE.match(sec)
        allowed = {"region", "expr"} if mp else _KEYS.get(sec)
        if allowed is None:
            problems.append(f"unknown section [{sec}]")
            continue
        for key in cp[sec]:
            if key not in allowed:
                problems.append(f"unknown key {key!r} in [{sec}]")

    def get(sec, key, default=None):
        return cp.get(sec, key, fallback=default) if cp.has_section(sec) else default

    def shape(sec, required=False):
        text_ = get(sec, "shape")
        if text_ is None:
            if required:
                problems.append(f"[{sec}] shape is required")
            return None
        try:
            return parse_shape(text_)
        except GeometryError as exc:
            problems.append(f"[{sec}] {exc}")
            return None

    def expr(sec, key):
        t = get(sec, key)
        if t is None:
            return None
        try:
            return Expression(t)
        except ExpressionError as exc:
            problems.append(f"[{sec}] {key}: {exc}")
            return None

    domain = shape("domain", required=True)
    res_text = get("grid", "resolution")
    resolution = None
    if res_text is None:
        problems.append("[grid] resolution is required")
    else:
        try:
            resolution = int(res_text)
            if resolution < 4:
                problems.append("[grid] resolution must be >= 4")
        except ValueError:
            problems.append(f"[grid] resolution must be an integer, got {res_text!r}")

    kind = get("pipeline", "kind", "solve")
    if kind not in KINDS:
        problems.append(f"[pipeline] kind must be one of {', '.join(KINDS)}")
    name = get("pipeline", "name") or Path(source).stem

    r_text = get("weight", "r", "inf")
    r = math.inf if r_text.strip().lower() in ("inf", "infinity") else _float(r_text, "[weight] r", problems)
    if r is not None and domain is not None and not r > domain.dim:
        problems.append(f"[weight] r={r_text} must exceed the dimension {domain.dim}")
    mode = get("weight", "mode", "nodal")
    if mode not in ("nodal", "cell-average"):
        problems.append("[weight] mode must be nodal or cell-average")
    scale = _float(get("weight", "scale", "1"), "[weight] scale", problems)
    minus_scale = _float(get("weight", "minus_scale", "1"), "[weight] minus_scale", problems)

    piece_secs = sorted((s for s in cp.sections() if _PIECE.match(s)),
                        key=lambda s: (0, int(_PIECE.match(s).group(1))) if _PIECE.match(s).group(1).isdigit()
                        else (1, s))
    for sec in piece_secs:
        e = expr(sec, "expr")
        if e is None and get(sec, "expr") is None:
            problems.append(f"[{sec}] expr is required")
        reg_text = get(sec, "region", "all")
        region = None
        if reg_text.strip() != "all":
            try:
                region = parse_shape(reg_text)
            except GeometryError as exc:
                problems.append(f"[{sec}] region: {exc}")
        if e is not None:
            pieces.append((region, e, sec))

    family = get("nonlinearity", "family", "power")
    if family not in FAMILIES:
        problems.append(f"[nonlinearity] family must be one of {', '.join(FAMILIES)}")
    p = _float(get("nonlinearity", "p", "0.5"), "[nonlinearity] p", problems)
    if p is not None and not 0.0 < p < 1.0:
        problems.append("p must lie in (0,1)")
    kappa = _float(get("nonlinearity", "kappa", "1"), "[nonlinearity] kappa", problems, positive=True)
    k1 = get("nonlinearity", "k1")
    k2 = get("nonlinearity", "k2")
    k1 = None if k1 is None else _float(k1, "[nonlinearity] k1", problems, positive=True)
    k2 = None if k2 is None else _float(k2, "[nonlinearity] k2", problems, positive=True)
    if family == "power-plus-min" and (k1 is not None or k2 is not None):
        problems.append("[nonlinearity] k1/k2 are fixed by the power-plus-min family")

    omega0 = shape("omega0")
    omega1 = shape("omega1")
    for label, sub in (("omega0", omega0), ("omega1", omega1)):
        if sub is not None and domain is not None and sub.dim != domain.dim:
            problems.append(f"[{label}] dimension differs from the domain")

    if kind == "certify-existence" and omega0 is None:
        problems.append("certify-existence requires an [omega0] shape")
    if kind == "corollary33" and omega1 is None:
        problems.append("corollary33 requires an [omega1] shape")
    if kind == "poisson" and get("pipeline", "rhs") is None:
        problems.append("poisson requires [pipeline] rhs")
    if kind not in ("poisson",) and not pieces:
        problems.append("at least one [weight.piece.K] section is required")
    sub_e, sup_e = expr("pipeline", "sub"), expr("pipeline", "super")
    if (get("pipeline", "sub") is None) != (get("pipeline", "super") is None):
        problems.append("[pipeline] sub and super must be given together")

    tol = Tolerances()
    tkw = {}
    for key in ("linear", "eigen", "residual", "change"):
        t = get("tolerances", key)
        if t is not None:
            v = _float(t, f"[tolerances] {key}", problems, positive=True)
            if v is not None:
                tkw[key] = v
    ms = get("tolerances", "max_sweeps")
    if ms is not None:
        try:
            tkw["max_sweeps"] = int(ms)
            if tkw["max_sweeps"] < 1:
                problems.append("[tolerances] max_sweeps must be positive")
        except ValueError:
            problems.append("[tolerances] max_sweeps must be an integer")
    samples = get("pipeline", "samples", "50")
    try:
        samples = int(samples)
    except ValueError:
        problems.append("[pipeline] samples must be an integer")
        samples = 50

    if problems:
        raise ConfigError(problems)
    return Scenario(
        name=name, kind=kind, domain=domain, resolution=resolution, pieces=tuple(pieces), r=r, mode=mode,
        scale=scale, minus_scale=minus_scale, family=family, p=p, k1=k1, k2=k2, kappa=kappa,
        omega0=omega0, omega1=omega1, exact=expr("pipeline", "exact"), rhs=expr("pipeline", "rhs"),
        sub=sub_e, super=sup_e, samples=samples, tolerances=replace(tol, **tkw), source=source,
    )


def bundled_names() -> list[str]:
    root = resources.files("sublinlab") / "scenarios"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def resolve_path(path: str):
    """A real file wins; otherwise ``name``, ``name.cfg`` or ``scenarios/name.cfg`` name a bundled scenario."""
    p = Path(path)
    if p.is_file():
        return p
    stem = p.name[:-4] if p.name.endswith(".cfg") else p.name
    if p.parent in (Path("."), Path("scenarios")) and stem in bundled_names():
        return resources.files("sublinlab") / "scenarios" / f"{stem}.cfg"
    raise ConfigError([f"scenario file not found: {path}"])


def parse_scenario(path) -> Scenario:
    target = resolve_path(str(path))
    return parse_text(target.read_text(), str(path))
