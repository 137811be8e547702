"""Domains, uniform grids, subdomain partitions and non-positivity balls.

Grids are built on a uniform lattice. Lattice nodes inside the domain are
interior nodes; where a lattice edge leaves the domain (or crosses the
boundary of an inner subdomain) an extra node is placed at the exact
crossing point, so curved boundaries get unequal-arm (Shortley-Weller)
stencils. On intervals and rectangles every crossing is a lattice node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .fields import FieldFunction

# a lattice point within ON_TOL*h of a boundary is a boundary node
ON_TOL = 1e-9

OUT, OMEGA0, OMEGA1, BOUNDARY, INTERFACE = -1, 0, 1, 2, 3


class GeometryError(ValueError):
    pass


class Domain:
    kind = ""
    dim = 0

    def signed_distance(self, pts):
        """Distance to the boundary, positive inside and negative outside."""
        raise NotImplementedError

    def contains(self, pts, tol=0.0):
        return self.signed_distance(np.atleast_2d(pts)) >= -tol

    def ray_hits(self, p, axis, sign):
        """Positive distances at which the ray p + t*sign*e_axis meets the boundary."""
        raise NotImplementedError

    def boundary_samples(self, n=4096):
        raise NotImplementedError


@dataclass(frozen=True)
class Interval(Domain):
    a: float
    b: float

    kind = "interval"
    dim = 1

    def __post_init__(self):
        if not self.b > self.a:
            raise GeometryError(f"interval needs a < b, got ({self.a}, {self.b})")

    @property
    def measure(self):
        return self.b - self.a

    @property
    def char_length(self):
        return self.b - self.a

    def spec(self):
        return f"interval {self.a!r} {self.b!r}"

    def signed_distance(self, pts):
        x = np.atleast_2d(pts)[:, 0]
        return np.minimum(x - self.a, self.b - x)

    def ray_hits(self, p, axis, sign):
        t = [(self.a - p[0]) * sign, (self.b - p[0]) * sign]
        return sorted(v for v in t if v > 0)

    def boundary_samples(self, n=4096):
        return np.array([[self.a], [self.b]])


@dataclass(frozen=True)
class Rectangle(Domain):
    x0: float
    x1: float
    y0: float
    y1: float

    kind = "rectangle"
    dim = 2

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise GeometryError("rectangle needs x0 < x1 and y0 < y1")

    @property
    def measure(self):
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    @property
    def char_length(self):
        return min(self.x1 - self.x0, self.y1 - self.y0)

    @property
    def lo(self):
        return np.array([self.x0, self.y0])

    @property
    def hi(self):
        return np.array([self.x1, self.y1])

    def spec(self):
        return f"rectangle {self.x0!r} {self.x1!r} {self.y0!r} {self.y1!r}"

    def signed_distance(self, pts):
        pts = np.atleast_2d(pts)
        below = self.lo - pts
        above = pts - self.hi
        inside = np.minimum(-below, -above).min(axis=1)
        gap = np.maximum(np.maximum(below, above), 0.0)
        return np.where(inside >= 0, inside, -np.hypot(gap[:, 0], gap[:, 1]))

    def ray_hits(self, p, axis, sign):
        other = 1 - axis
        if not (self.lo[other] <= p[other] <= self.hi[other]):
            return []
        t = [(self.lo[axis] - p[axis]) * sign, (self.hi[axis] - p[axis]) * sign]
        return sorted(v for v in t if v > 0)

    def boundary_samples(self, n=4096):
        k = max(n // 4, 2)
        s = np.linspace(0.0, 1.0, k)
        xs = self.x0 + s * (self.x1 - self.x0)
        ys = self.y0 + s * (self.y1 - self.y0)
        return np.vstack([
            np.column_stack([xs, np.full(k, self.y0)]),
            np.column_stack([xs, np.full(k, self.y1)]),
            np.column_stack([np.full(k, self.x0), ys]),
            np.column_stack([np.full(k, self.x1), ys]),
        ])


@dataclass(frozen=True)
class Disk(Domain):
    cx: float
    cy: float
    radius: float

    kind = "disk"
    dim = 2

    def __post_init__(self):
        if not self.radius > 0:
            raise GeometryError("disk radius must be positive")

    @property
    def measure(self):
        return math.pi * self.radius**2

    @property
    def char_length(self):
        return 2.0 * self.radius

    @property
    def center(self):
        return np.array([self.cx, self.cy])

    def spec(self):
        return f"disk {self.cx!r} {self.cy!r} {self.radius!r}"

    def signed_distance(self, pts):
        pts = np.atleast_2d(pts)
        return self.radius - np.hypot(pts[:, 0] - self.cx, pts[:, 1] - self.cy)

    def ray_hits(self, p, axis, sign):
        q = p - self.center
        other = 1 - axis
        disc = self.radius**2 - q[other] ** 2
        if disc < 0:
            return []
        r = math.sqrt(disc)
        t = [sign * (-q[axis]) - r, sign * (-q[axis]) + r]
        return sorted(v for v in t if v > 0)

    def boundary_samples(self, n=4096):
        th = np.linspace(0.0, 2 * math.pi, n, endpoint=False)
        return self.center + self.radius * np.column_stack([np.cos(th), np.sin(th)])


def parse_shape(text: str) -> Domain:
    """Parse ``interval a b`` / ``rectangle x0 x1 y0 y1`` / ``disk cx cy R``."""
    parts = text.split()
    if not parts:
        raise GeometryError("empty shape specification")
    kind, args = parts[0].lower(), parts[1:]
    sizes = {"interval": 2, "rectangle": 4, "disk": 3}
    if kind not in sizes:
        raise GeometryError(f"unknown shape kind {kind!r}")
    if len(args) != sizes[kind]:
        raise GeometryError(f"{kind} takes {sizes[kind]} numbers, got {len(args)}")
    try:
        vals = [float(a) for a in args]
    except ValueError:
        raise GeometryError(f"non-numeric value in shape {text!r}") from None
    return {"interval": Interval, "rectangle": Rectangle, "disk": Disk}[kind](*vals)


@dataclass(frozen=True, eq=False)
class Grid:
    """Nodes, stencil and quadrature data of a discretized domain.

    ``neighbors[i]`` and ``arms[i]`` describe the stencil of ``interior[i]``
    in the order (-x, +x, -y, +y).
    """

    domain: Domain
    h: float
    coords: np.ndarray
    labels: np.ndarray
    interior: np.ndarray
    boundary: np.ndarray
    volume: np.ndarray
    delta: np.ndarray
    neighbors: np.ndarray
    arms: np.ndarray
    on_lattice: np.ndarray
    origin: np.ndarray
    shape: tuple

    @property
    def dim(self):
        return self.domain.dim

    @property
    def n_nodes(self):
        return len(self.coords)

    @property
    def is_cut(self):
        return bool(np.any(np.abs(self.arms - self.h) > ON_TOL * self.h))

    def mask(self, idx):
        out = np.zeros(self.n_nodes, dtype=bool)
        out[idx] = True
        return out

    def locate(self, points, tol=None):
        """Indices of the nodes sitting at ``points`` (GeometryError if absent)."""
        tol = 1e-7 * self.h if tol is None else tol
        d, i = self._tree.query(np.atleast_2d(points))
        if np.any(d > tol):
            raise GeometryError("point is not a grid node")
        return i

    @property
    def _tree(self):
        tree = self.__dict__.get("_kdtree")
        if tree is None:
            tree = cKDTree(self.coords)
            object.__setattr__(self, "_kdtree", tree)
        return tree


def _lattice(domain: Domain, resolution: int):
    if domain.kind == "interval":
        h = domain.char_length / resolution
        return h, np.array([domain.a]), (resolution + 1,)
    if domain.kind == "rectangle":
        h = domain.char_length / resolution
        nx = (domain.x1 - domain.x0) / h
        ny = (domain.y1 - domain.y0) / h
        if abs(nx - round(nx)) > 1e-9 * nx or abs(ny - round(ny)) > 1e-9 * ny:
            raise GeometryError("rectangle sides must be commensurate with the spacing")
        return h, domain.lo.copy(), (int(round(nx)) + 1, int(round(ny)) + 1)
    h = domain.char_length / resolution
    k = int(math.ceil(domain.radius / h)) + 1
    return h, domain.center - k * h, (2 * k + 1, 2 * k + 1)


def _key(pt, h):
    return tuple(int(v) for v in np.round(np.asarray(pt) / h * 1e6))


def _assemble(domain: Domain, h: float, origin, shape, omega0: Domain | None = None):
    """Classify lattice nodes, add boundary crossings and build the stencil."""
    dim = domain.dim
    ijk = np.indices(shape).reshape(dim, -1).T
    pts = origin + h * ijk
    tol = ON_TOL * h
    sd = domain.signed_distance(pts)
    lab = np.full(len(pts), OUT)
    lab[sd > tol] = OMEGA1
    lab[np.abs(sd) <= tol] = BOUNDARY
    if omega0 is not None:
        sd0 = omega0.signed_distance(pts)
        inner = lab == OMEGA1
        lab[inner & (sd0 > tol)] = OMEGA0
        lab[inner & (np.abs(sd0) <= tol)] = INTERFACE

    kept = np.flatnonzero(lab != OUT)
    node_pts = [pts[kept]]
    node_lab = [lab[kept]]
    new_index = np.full(len(pts), -1)
    new_index[kept] = np.arange(len(kept))
    n = len(kept)
    crossing_at = {}
    extra_pts, extra_lab = [], []

    unknown = np.flatnonzero((lab == OMEGA0) | (lab == OMEGA1))
    nbrs = np.empty((len(unknown), 2 * dim), dtype=int)
    arms = np.full((len(unknown), 2 * dim), h)
    shape_arr = np.array(shape)
    for axis in range(dim):
        for s_i, sign in enumerate((-1, 1)):
            col = 2 * axis + s_i
            nb = ijk[unknown].copy()
            nb[:, axis] += sign
            inbox = np.all((nb >= 0) & (nb < shape_arr), axis=1)
            nb_lin = np.full(len(unknown), -1)
            nb_lin[inbox] = np.ravel_multi_index(nb[inbox].T, shape)
            nb_lab = np.where(nb_lin >= 0, lab[np.maximum(nb_lin, 0)], OUT)
            own = lab[unknown]
            ok = (nb_lab == own) | (nb_lab == BOUNDARY) | (nb_lab == INTERFACE)
            nbrs[ok, col] = new_index[nb_lin[ok]]
            for r in np.flatnonzero(~ok):
                p = pts[unknown[r]]
                cands = []
                if own[r] == OMEGA1:
                    cands += [(t, BOUNDARY) for t in domain.ray_hits(p, axis, sign)]
                if omega0 is not None:
                    cands += [(t, INTERFACE) for t in omega0.ray_hits(p, axis, sign)]
                cands = [c for c in cands if tol < c[0] <= h + tol]
                if not cands:
                    raise GeometryError("stencil arm leaves the domain without a crossing")
                t, kind = min(cands)
                q = p.copy()
                q[axis] += sign * t
                key = _key(q, h)
                if key not in crossing_at:
                    crossing_at[key] = n + len(extra_pts)
                    extra_pts.append(q)
                    extra_lab.append(kind)
                nbrs[r, col] = crossing_at[key]
                arms[r, col] = t

    if extra_pts:
        node_pts.append(np.array(extra_pts))
        node_lab.append(np.array(extra_lab))
    coords = np.vstack(node_pts)
    labels = np.concatenate(node_lab)
    on_lattice = np.zeros(len(coords), dtype=bool)
    on_lattice[:n] = True
    lattice_ijk = np.full((len(coords), dim), -1)
    lattice_ijk[:n] = ijk[kept]

    # lexicographic node order (x first, then y)
    rounded = np.round((coords - origin) / h, 6)
    order = np.lexsort(rounded.T[::-1])
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    coords, labels = coords[order], labels[order]
    on_lattice, lattice_ijk = on_lattice[order], lattice_ijk[order]
    unk_nodes = rank[new_index[unknown]]
    nbrs = rank[nbrs]
    row_order = np.argsort(unk_nodes)
    return dict(
        coords=coords,
        labels=labels,
        interior=unk_nodes[row_order],
        neighbors=nbrs[row_order],
        arms=arms[row_order],
        on_lattice=on_lattice,
        ijk=lattice_ijk,
        shape=tuple(shape),
    )


def _trapezoid_volume(ijk, shape, h, on_lattice):
    w = np.where(on_lattice, 1.0, 0.0)
    for axis, size in enumerate(shape):
        end = (ijk[:, axis] == 0) | (ijk[:, axis] == size - 1)
        w = w * np.where(end, 0.5 * h, h)
    return w


def _dual_cells(volume, interior, arms, h, dim):
    """Nodes with a short arm get the dual cell prod_axis (a- + a+)/2."""
    a = arms[:, : 2 * dim]
    short = np.any(a < h * (1 - ON_TOL), axis=1)
    cells = np.prod(0.5 * (a[:, 0::2] + a[:, 1::2]), axis=1)
    volume = volume.copy()
    volume[interior[short]] = cells[short]
    return volume


def build_grid(domain: Domain, resolution: int) -> Grid:
    """Uniform grid with spacing ``char_length / resolution``.

    Intervals and rectangles use the tensor lattice with trapezoid cell
    volumes (summing exactly to the measure); disks use a lattice centred
    on the disk with crossing nodes on the circle and h^2 cell volumes.
    Nodes next to a curved boundary carry their dual-cell volume.
    """
    if int(resolution) != resolution or resolution < 4:
        raise GeometryError("resolution must be an integer >= 4")
    resolution = int(resolution)
    h, origin, shape = _lattice(domain, resolution)
    parts = _assemble(domain, h, origin, shape)
    if len(parts["interior"]) == 0:
        raise GeometryError("grid has no interior nodes")
    labels = parts["labels"]
    if domain.kind == "disk":
        volume = np.where(parts["on_lattice"] & (labels == OMEGA1), h**domain.dim, 0.0)
    else:
        volume = _trapezoid_volume(parts["ijk"], shape, h, parts["on_lattice"])
    volume = _dual_cells(volume, parts["interior"], parts["arms"], h, domain.dim)
    delta = np.maximum(domain.signed_distance(parts["coords"]), 0.0)
    delta[labels == BOUNDARY] = 0.0
    return Grid(
        domain=domain,
        h=h,
        coords=parts["coords"],
        labels=labels,
        interior=parts["interior"],
        boundary=np.flatnonzero(labels == BOUNDARY),
        volume=volume,
        delta=delta,
        neighbors=parts["neighbors"],
        arms=parts["arms"],
        on_lattice=parts["on_lattice"],
        origin=origin,
        shape=shape,
    )


def distance_field(grid: Grid) -> FieldFunction:
    return FieldFunction(grid, grid.delta.copy())


def clearance(outer: Domain, inner: Domain) -> float:
    """Smallest distance from the boundary of ``inner`` to the boundary of ``outer``."""
    return float(np.min(outer.signed_distance(inner.boundary_samples())))


@dataclass(frozen=True, eq=False)
class SubdomainPartition:
    """Split of a grid into an inner subdomain, its complement and the interface.

    ``cut`` is a grid over the same lattice whose stencils stop at the
    interface, so the interface behaves as a Dirichlet boundary for both
    sides. ``parent[i]`` is the node of ``grid`` coinciding with cut node
    ``i`` (-1 for interface crossings that are not lattice nodes).
    """

    grid: Grid
    cut: Grid
    omega0: Domain
    inner: np.ndarray
    outer: np.ndarray
    interface: np.ndarray
    iface_nodes: np.ndarray
    normals: np.ndarray
    delta0: np.ndarray
    delta1: np.ndarray
    volume0: np.ndarray
    volume1: np.ndarray
    parent: np.ndarray
    outer_boundary: np.ndarray

    @property
    def closure0(self):
        return np.union1d(self.inner, self.interface)

    @property
    def closure1(self):
        return np.union1d(np.union1d(self.outer, self.interface), self.outer_boundary)

    def to_parent(self, values: np.ndarray) -> np.ndarray:
        """Transfer cut-grid nodal values onto the parent grid."""
        out = np.full(self.grid.n_nodes, np.nan)
        on = self.parent >= 0
        out[self.parent[on]] = values[on]
        return out

    def from_parent(self, values: np.ndarray) -> np.ndarray:
        """Transfer parent-grid values to cut nodes (crossings take the nearest parent node)."""
        idx = self.parent.copy()
        miss = idx < 0
        if np.any(miss):
            _, near = self.grid._tree.query(self.cut.coords[miss])
            idx[miss] = near
        return np.asarray(values)[idx]


def _snap(domain: Domain, grid: Grid) -> Domain:
    if domain.kind == "disk":
        return domain
    # disk lattices are centred on the disk centre, so the centre is a grid line crossing
    origin = grid.domain.center if grid.domain.kind == "disk" else grid.origin
    h = grid.h

    def s(v, axis):
        return float(origin[axis] + h * round((v - origin[axis]) / h))

    if domain.kind == "interval":
        return Interval(s(domain.a, 0), s(domain.b, 0))
    return Rectangle(s(domain.x0, 0), s(domain.x1, 0), s(domain.y0, 1), s(domain.y1, 1))


def make_partition(grid: Grid, omega0: Domain) -> SubdomainPartition:
    """Partition ``grid`` into Omega0, Omega1 = Omega minus closure(Omega0) and the interface.

    Interval and rectangle subdomains are snapped to the nearest grid lines;
    disks are used as given. The subdomain boundary must stay at least 2h
    away from the boundary of the domain.
    """
    dom = grid.domain
    if omega0.dim != dom.dim:
        raise GeometryError("subdomain dimension differs from the domain")
    if clearance(dom, omega0) <= 0:
        raise GeometryError("subdomain touches or exits the domain boundary")
    snapped = _snap(omega0, grid)
    h = grid.h
    if clearance(dom, snapped) < 2 * h * (1 - 1e-9):
        raise GeometryError("subdomain clearance from the boundary is below 2h")

    origin, shape = grid.origin, grid.shape
    parts = _assemble(dom, h, origin, shape, omega0=snapped)
    labels = parts["labels"]
    inner = np.flatnonzero(labels == OMEGA0)
    if len(inner) == 0:
        raise GeometryError("subdomain contains no interior node")
    coords = parts["coords"]
    outer = np.flatnonzero(labels == OMEGA1)
    interface = np.flatnonzero(labels == INTERFACE)

    if dom.kind == "disk":
        vol = np.where(parts["on_lattice"] & np.isin(labels, (OMEGA0, OMEGA1, INTERFACE)), h**2, 0.0)
    else:
        vol = _trapezoid_volume(parts["ijk"], shape, h, parts["on_lattice"])
    vol = _dual_cells(vol, parts["interior"], parts["arms"], h, dom.dim)
    sd0 = snapped.signed_distance(coords)
    if snapped.kind == "disk":
        volume0 = np.where(labels == OMEGA0, vol, 0.0) + np.where(labels == INTERFACE, 0.5 * vol, 0.0)
    else:
        w = np.where(parts["on_lattice"], 1.0, 0.0)
        lo = np.atleast_1d(snapped.lo if snapped.kind == "rectangle" else [snapped.a])
        hi = np.atleast_1d(snapped.hi if snapped.kind == "rectangle" else [snapped.b])
        for axis in range(dom.dim):
            x = coords[:, axis]
            on_face = (np.abs(x - lo[axis]) <= ON_TOL * h) | (np.abs(x - hi[axis]) <= ON_TOL * h)
            strict = (x > lo[axis] + ON_TOL * h) & (x < hi[axis] - ON_TOL * h)
            w = w * np.where(strict, h, np.where(on_face, 0.5 * h, 0.0))
        volume0 = w
    volume1 = vol - volume0

    delta = np.maximum(dom.signed_distance(coords), 0.0)
    delta[labels == BOUNDARY] = 0.0
    delta0 = np.where(labels == OMEGA0, np.maximum(sd0, 0.0), 0.0)
    delta1 = np.where(labels == OMEGA1, np.minimum(delta, np.maximum(-sd0, 0.0)), 0.0)

    cut = Grid(
        domain=dom,
        h=h,
        coords=coords,
        labels=labels,
        interior=parts["interior"],
        boundary=np.flatnonzero((labels == BOUNDARY) | (labels == INTERFACE)),
        volume=vol,
        delta=delta,
        neighbors=parts["neighbors"],
        arms=parts["arms"],
        on_lattice=parts["on_lattice"],
        origin=origin,
        shape=shape,
    )

    table = {_key(c, h): i for i, c in enumerate(grid.coords)}
    parent = np.array([table.get(_key(c, h), -1) for c in coords])
    if np.any(parent[parts["on_lattice"]] < 0):
        raise GeometryError("partition lattice does not match the grid")

    iface_nodes, normals = [], []
    for i in interface:
        x = coords[i]
        if snapped.kind == "disk":
            v = x - snapped.center
            iface_nodes.append(i)
            normals.append(v / np.linalg.norm(v))
            continue
        lo = np.atleast_1d(snapped.lo if snapped.kind == "rectangle" else [snapped.a])
        hi = np.atleast_1d(snapped.hi if snapped.kind == "rectangle" else [snapped.b])
        for axis in range(dom.dim):
            for bound, sign in ((lo[axis], -1.0), (hi[axis], 1.0)):
                if abs(x[axis] - bound) <= ON_TOL * h:
                    nu = np.zeros(dom.dim)
                    nu[axis] = sign
                    iface_nodes.append(i)
                    normals.append(nu)
    return SubdomainPartition(
        grid=grid,
        cut=cut,
        omega0=snapped,
        inner=inner,
        outer=outer,
        interface=interface,
        iface_nodes=np.array(iface_nodes, dtype=int),
        normals=np.array(normals),
        delta0=delta0,
        delta1=delta1,
        volume0=volume0,
        volume1=volume1,
        parent=parent,
        outer_boundary=np.flatnonzero(labels == BOUNDARY),
    )


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float
    m_R: float = 0.0

    @property
    def score(self):
        return self.m_R * self.radius**2

    def nodes(self, grid: Grid) -> np.ndarray:
        """Grid nodes in the closed ball."""
        idx = grid._tree.query_ball_point(np.asarray(self.center, dtype=float),
                                          self.radius * (1 + 1e-12))
        return np.array(sorted(idx), dtype=int)


def enumerate_nonpositive_balls(grid: Grid, m, top: int | None = None) -> list[Ball]:
    """Balls B_R(x0) inside the domain on which the weight is nonpositive.

    Centers run over interior nodes and radii over multiples of h up to
    the distance to the boundary. A ball qualifies when m <= 0 at every
    node of the closed ball; its ``m_R`` is the smallest value of m^- there.
    Returned sorted by score m_R*R^2, best first (ties: smaller radius,
    then node order).
    """
    values = np.asarray(getattr(m, "values", m), dtype=float)
    h = grid.h
    minus = np.maximum(-values, 0.0)
    positive = values > 0
    pos_tree = cKDTree(grid.coords[positive]) if np.any(positive) else None
    rows = []
    for c in grid.interior:
        if positive[c]:
            continue
        jmax = int(math.floor(grid.delta[c] / h + 1e-9))
        if jmax < 1:
            continue
        reach = jmax * h
        if pos_tree is not None:
            dpos, _ = pos_tree.query(grid.coords[c])
            if dpos <= reach * (1 + 1e-12):
                jmax = int(math.ceil(dpos / h - 1e-9)) - 1
                if jmax < 1:
                    continue
                reach = jmax * h
        idx = np.array(grid._tree.query_ball_point(grid.coords[c], reach * (1 + 1e-12)))
        d = np.linalg.norm(grid.coords[idx] - grid.coords[c], axis=1)
        order = np.argsort(d, kind="stable")
        d, mins = d[order], np.minimum.accumulate(minus[idx[order]])
        radii = h * np.arange(1, jmax + 1)
        last = np.searchsorted(d, radii * (1 + 1e-12), side="right") - 1
        m_r = mins[last]
        for j in range(jmax):
            rows.append((-(m_r[j] * radii[j] ** 2), radii[j], c, m_r[j]))
    rows.sort(key=lambda t: (t[0], t[1], t[2]))
    if top is not None:
        rows = rows[:top]
    return [Ball(tuple(float(v) for v in grid.coords[c]), float(r), float(mr)) for _, r, c, mr in rows]
