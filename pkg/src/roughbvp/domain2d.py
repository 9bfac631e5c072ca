"""Rough planar domains on a uniform cell grid.

A domain is described by its boundary components (circles and polylines)
and an inside predicate.  Cells are squares of side h; interior cells have
their center in the domain at distance more than h/2 from the boundary.
Boundary samples are spaced uniformly in arclength on every component and
carry their arclength share as weight.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .mspace import MetricMeasureSpace, euclidean_distances


# -- boundary components -----------------------------------------------------

class Circle:
    closed = True

    def __init__(self, center, radius):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)

    @property
    def length(self):
        return 2 * math.pi * self.radius

    def point(self, s):
        th = np.asarray(s) / self.radius
        return self.center + self.radius * np.c_[np.cos(th), np.sin(th)]

    def param(self, pts):
        d = np.atleast_2d(pts) - self.center
        return np.mod(np.arctan2(d[:, 1], d[:, 0]), 2 * math.pi) * self.radius

    def ray_hits(self, P, e, smax):
        """First hit s in (0, smax] of P + s e for unit axis directions e."""
        d = P - self.center
        b = (d * e).sum(1)
        c = (d * d).sum(1) - self.radius ** 2
        disc = b * b - c
        s = np.full(len(P), np.inf)
        ok = disc >= 0
        sq = np.sqrt(np.where(ok, disc, 0))
        for root in (-b - sq, -b + sq):
            good = ok & (root > 1e-14) & (root <= smax) & (root < s)
            s = np.where(good, root, s)
        fin = np.isfinite(s)
        hit = P + np.where(fin, s, 0)[:, None] * e
        param = np.where(fin, self.param(hit), np.nan)
        return s, param

    def dist(self, pts):
        return np.abs(np.linalg.norm(np.atleast_2d(pts) - self.center, axis=1) - self.radius)


class Polyline:
    def __init__(self, vertices, closed=True):
        v = np.asarray(vertices, dtype=float)
        if closed and np.allclose(v[0], v[-1]):
            v = v[:-1]
        self.vertices = v
        self.closed = closed
        a = v
        b = np.roll(v, -1, axis=0) if closed else v[1:]
        a = a if closed else v[:-1]
        self.a, self.b = a, b
        self.seglen = np.linalg.norm(b - a, axis=1)
        self.cum = np.r_[0.0, np.cumsum(self.seglen)]

    @property
    def length(self):
        return float(self.cum[-1])

    def point(self, s):
        s = np.asarray(s, dtype=float)
        if self.closed:
            s = np.mod(s, self.length)
        s = np.clip(s, 0, self.length)
        k = np.clip(np.searchsorted(self.cum, s, side="right") - 1, 0, len(self.seglen) - 1)
        t = (s - self.cum[k]) / self.seglen[k]
        return self.a[k] + t[:, None] * (self.b[k] - self.a[k])

    def ray_hits(self, P, e, smax, chunk=4096):
        """First hit s in (0, smax] of P + s e; e is one unit direction per row."""
        m = len(P)
        s_best = np.full(m, np.inf)
        par = np.full(m, np.nan)
        if m and np.any(np.abs(e).min(axis=1) > 0):
            return self._oblique_hits(P, e, smax, chunk)
        axis = 0 if abs(e[0, 0]) > 0.5 else 1
        other = 1 - axis
        sign = e[:, axis]
        for lo in range(0, m, chunk):
            Pc = P[lo:lo + chunk]
            sg = sign[lo:lo + chunk]
            ay, by = self.a[:, other][None, :], self.b[:, other][None, :]
            py = Pc[:, other][:, None]
            den = by - ay
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (py - ay) / den
            valid = (den != 0) & (t >= 0) & (t <= 1)
            xa = self.a[:, axis][None, :] + t * (self.b[:, axis] - self.a[:, axis])[None, :]
            s = (xa - Pc[:, axis][:, None]) * sg[:, None]
            s = np.where(valid & (s > 1e-14) & (s <= smax), s, np.inf)
            k = np.argmin(s, axis=1)
            sb = s[np.arange(len(Pc)), k]
            tb = t[np.arange(len(Pc)), k]
            s_best[lo:lo + chunk] = sb
            par[lo:lo + chunk] = np.where(np.isfinite(sb), self.cum[k] + tb * self.seglen[k], np.nan)
        return s_best, par

    def _oblique_hits(self, P, e, smax, chunk):
        m = len(P)
        s_best = np.full(m, np.inf)
        par = np.full(m, np.nan)
        d = self.b - self.a
        for lo in range(0, m, chunk):
            Pc, ec = P[lo:lo + chunk], e[lo:lo + chunk]
            # P + s e = a + t d, solved with 2D cross products
            den = ec[:, :1] * d[None, :, 1] - ec[:, 1:] * d[None, :, 0]
            wx = self.a[None, :, 0] - Pc[:, :1]
            wy = self.a[None, :, 1] - Pc[:, 1:]
            with np.errstate(divide="ignore", invalid="ignore"):
                s = (wx * d[None, :, 1] - wy * d[None, :, 0]) / den
                t = (wx * ec[:, 1:] - wy * ec[:, :1]) / den
            valid = (den != 0) & (t >= 0) & (t <= 1) & (s > 1e-14) & (s <= smax)
            s = np.where(valid, s, np.inf)
            k = np.argmin(s, axis=1)
            rows = np.arange(len(Pc))
            sb, tb = s[rows, k], t[rows, k]
            s_best[lo:lo + chunk] = sb
            par[lo:lo + chunk] = np.where(np.isfinite(sb), self.cum[k] + tb * self.seglen[k], np.nan)
        return s_best, par

    def project(self, pts):
        """Nearest point parameter and distance for each point."""
        pts = np.atleast_2d(pts)
        best = np.full(len(pts), np.inf)
        par = np.zeros(len(pts))
        ab = self.b - self.a
        L2 = (ab ** 2).sum(1)
        for lo in range(0, len(pts), 2048):
            P = pts[lo:lo + 2048]
            t = ((P[:, None, :] - self.a[None]) * ab[None]).sum(-1) / L2[None]
            t = np.clip(t, 0, 1)
            q = self.a[None] + t[..., None] * ab[None]
            d = np.linalg.norm(P[:, None, :] - q, axis=-1)
            k = np.argmin(d, axis=1)
            r = np.arange(len(P))
            best[lo:lo + 2048] = d[r, k]
            par[lo:lo + 2048] = self.cum[k] + t[r, k] * self.seglen[k]
        return par, best

    def param(self, pts):
        return self.project(pts)[0]

    def dist(self, pts):
        return self.project(pts)[1]


# -- domain ------------------------------------------------------------------

KINDS = ("disk", "halfspace_box", "sawtooth", "koch", "cantor_complement", "slit")
NOMINAL_DIM = {"koch": math.log(4) / math.log(3)}


@dataclass
class GridDomain:
    kind: str
    h: float
    params: dict
    components: list
    origin: np.ndarray
    shape: tuple
    interior: np.ndarray          # bool grid (nx, ny)
    cells: np.ndarray             # (m, 2) integer grid indices of interior cells
    xy: np.ndarray                # (m, 2) centers
    delta: np.ndarray             # (m,)
    index: np.ndarray             # grid -> interior index or -1
    samples: np.ndarray           # boundary sample points (k, 2)
    sample_comp: np.ndarray
    sample_param: np.ndarray
    sample_weights: np.ndarray
    comp_offsets: list            # per component: (start, count, spacing, offset)
    inside_fn: object = None
    dim: float = 1.0
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def ncells(self) -> int:
        return len(self.delta)

    @property
    def nsamples(self) -> int:
        return len(self.samples)

    def centers_of(self, ij):
        ij = np.asarray(ij)
        return self.origin + (ij + 0.5) * self.h

    def inside(self, pts):
        return self.inside_fn(np.atleast_2d(pts))

    def boundary_distance(self, pts):
        pts = np.atleast_2d(pts)
        if self.cache.get("dist_fn") is not None:
            return self.cache["dist_fn"](pts)
        return np.min([c.dist(pts) for c in self.components], axis=0)

    def project(self, pts):
        """Nearest boundary point as (component id, arclength parameter)."""
        pts = np.atleast_2d(pts)
        best = np.full(len(pts), np.inf)
        comp = np.zeros(len(pts), dtype=int)
        par = np.zeros(len(pts))
        for ci, c in enumerate(self.components):
            if isinstance(c, Circle):
                p, d = c.param(pts), c.dist(pts)
            else:
                p, d = c.project(pts)
            better = d < best
            best = np.where(better, d, best)
            comp = np.where(better, ci, comp)
            par = np.where(better, p, par)
        return comp, par

    def transfer_weights(self, comp, param):
        """Linear interpolation weights from boundary samples to boundary points.

        Returns (rows of two sample indices, two weights) per point.
        """
        comp = np.asarray(comp)
        param = np.asarray(param, dtype=float)
        idx = np.zeros((len(comp), 2), dtype=int)
        wts = np.zeros((len(comp), 2))
        for ci, (start, count, spacing, offset) in enumerate(self.comp_offsets):
            sel = comp == ci
            if not sel.any():
                continue
            c = self.components[ci]
            u = (param[sel] - offset) / spacing
            if c.closed:
                k0 = np.floor(u).astype(int)
                t = u - k0
                a = np.mod(k0, count)
                b = np.mod(k0 + 1, count)
            else:
                u = np.clip(u, 0, count - 1)
                k0 = np.minimum(np.floor(u).astype(int), count - 2)
                t = u - k0
                a, b = k0, k0 + 1
            idx[sel, 0] = start + a
            idx[sel, 1] = start + b
            wts[sel, 0] = 1 - t
            wts[sel, 1] = t
        return idx, wts

    def grid_field(self, values, fill=np.nan):
        out = np.full(self.shape, fill, dtype=float)
        out[self.cells[:, 0], self.cells[:, 1]] = values
        return out

    def spec_string(self) -> str:
        extra = "".join(f", {k}={v}" for k, v in sorted(self.params.items()))
        return f"kind={self.kind}, h={self.h!r}{extra}"

    def export_cells(self, path):
        with open(path, "w") as fh:
            fh.write("i,j,x,y,delta\n")
            for (i, j), (x, y), d in zip(self.cells, self.xy, self.delta):
                fh.write(f"{i},{j},{float(x)!r},{float(y)!r},{float(d)!r}\n")

    def export_boundary(self, path):
        with open(path, "w") as fh:
            fh.write("component,x,y,weight\n")
            for c, (x, y), w in zip(self.sample_comp, self.samples, self.sample_weights):
                fh.write(f"{c},{float(x)!r},{float(y)!r},{float(w)!r}\n")


def koch_vertices(depth: int, side: float = 1.0) -> np.ndarray:
    R = side / math.sqrt(3)
    ang = np.pi / 2 + np.array([0, -2, -4]) * np.pi / 3
    pts = np.c_[R * np.cos(ang), R * np.sin(ang)]
    for _ in range(depth):
        new = []
        for a, b in zip(pts, np.roll(pts, -1, axis=0)):
            d = (b - a) / 3
            p1, p3 = a + d, a + 2 * d
            # outward bump for a clockwise polygon
            rot = np.array([[0.5, -math.sqrt(3) / 2], [math.sqrt(3) / 2, 0.5]])
            p2 = p1 + rot @ d
            new.extend([a, p1, p2, p3])
        pts = np.array(new)
    return pts


def points_in_polygon(P, V, chunk=2048):
    """Even-odd crossing test of points P against the closed polygon V."""
    P = np.atleast_2d(P)
    a = V
    b = np.roll(V, -1, axis=0)
    out = np.zeros(len(P), dtype=bool)
    for lo in range(0, len(P), chunk):
        x = P[lo:lo + chunk, 0][:, None]
        y = P[lo:lo + chunk, 1][:, None]
        straddle = (a[:, 1] > y) != (b[:, 1] > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xc = a[:, 0] + (y - a[:, 1]) * (b[:, 0] - a[:, 0]) / (b[:, 1] - a[:, 1])
        out[lo:lo + chunk] = (straddle & (x < xc)).sum(1) % 2 == 1
    return out


def _cantor_mask(pts, depth):
    """True for points inside the closed depth-level squares of the four-corner set."""
    x, y = pts[:, 0], pts[:, 1]
    ok = (x >= 0) & (x <= 1) & (y >= 0) & (y <= 1)
    for _ in range(depth):
        kx = np.clip(np.floor(x * 4), 0, 3)
        ky = np.clip(np.floor(y * 4), 0, 3)
        # closed squares: a point on the edge between digits 0/1 belongs to 0
        x4, y4 = x * 4, y * 4
        inx = (x4 <= 1) | (x4 >= 3)
        iny = (y4 <= 1) | (y4 >= 3)
        ok &= inx & iny
        x = np.where(x4 <= 1, x4, x4 - 3)
        y = np.where(y4 <= 1, y4, y4 - 3)
    return ok


def _geometry(kind, params):
    """Boundary components, inside predicate, bounding box and exact distance."""
    dist_fn = None
    if kind == "disk":
        R = float(params.get("radius", 1.0))
        comps = [Circle((0, 0), R)]
        inside = lambda P: (P ** 2).sum(1) < R * R
        box = (-R, R, -R, R)
    elif kind == "halfspace_box":
        W = float(params.get("width", 4.0))
        H = float(params.get("height", 2.0))
        V = [(-W / 2, 0), (W / 2, 0), (W / 2, H), (-W / 2, H)]
        comps = [Polyline(V)]
        inside = lambda P: (P[:, 0] > -W / 2) & (P[:, 0] < W / 2) & (P[:, 1] > 0) & (P[:, 1] < H)
        box = (-W / 2, W / 2, 0, H)
    elif kind == "sawtooth":
        L = int(params.get("L", 4))
        amp = float(params.get("amp", 1.0 / L))
        xs = np.linspace(-1, 1, 2 * L + 1)
        ys = np.where(np.arange(2 * L + 1) % 2 == 1, amp, 0.0)
        V = list(zip(xs, ys)) + [(1, 1), (-1, 1)]
        comps = [Polyline(V)]

        def inside(P):
            s = np.interp(P[:, 0], xs, ys)
            return (P[:, 0] > -1) & (P[:, 0] < 1) & (P[:, 1] > s) & (P[:, 1] < 1)
        box = (-1, 1, 0, 1)
    elif kind == "koch":
        depth = int(params.get("depth", 3))
        if not 0 <= depth <= 6:
            raise ValueError("koch depth must be in 0..6")
        side = float(params.get("side", 1.0))
        V = koch_vertices(depth, side)
        comps = [Polyline(V)]
        inside = lambda P: points_in_polygon(P, V)
        r = np.abs(V).max()
        box = (-r, r, -r, r)
    elif kind == "cantor_complement":
        depth = int(params.get("depth", 3))
        if not 1 <= depth <= 6:
            raise ValueError("cantor depth must be in 1..6")
        pad = float(params.get("pad", 0.25))
        from .mspace import cantor4_points
        cen = cantor4_points(depth)
        half = 0.5 * 4.0 ** -depth
        comps = [Polyline([(-pad, -pad), (1 + pad, -pad), (1 + pad, 1 + pad), (-pad, 1 + pad)])]
        for cx, cy in cen:
            comps.append(Polyline([(cx - half, cy - half), (cx - half, cy + half),
                                   (cx + half, cy + half), (cx + half, cy - half)]))

        def inside(P):
            inb = (P[:, 0] > -pad) & (P[:, 0] < 1 + pad) & (P[:, 1] > -pad) & (P[:, 1] < 1 + pad)
            return inb & ~_cantor_mask(P, depth)
        tree = cKDTree(cen)

        def dist_fn(P):
            lo, hi = -pad, 1 + pad
            out = np.minimum.reduce([P[:, 0] - lo, hi - P[:, 0], P[:, 1] - lo, hi - P[:, 1]])
            out = np.abs(out)
            _, k = tree.query(P, k=min(8, len(cen)))
            for col in k.T:
                g = np.abs(P - cen[col]) - half
                d = np.linalg.norm(np.maximum(g, 0), axis=1) + np.minimum(g.max(1), 0)
                out = np.minimum(out, np.abs(d))
            return out
        box = (-pad, 1 + pad, -pad, 1 + pad)
    elif kind == "slit":
        R = float(params.get("radius", 1.0))
        comps = [Circle((0, 0), R), Polyline([(0, 0), (R, 0)], closed=False)]
        inside = lambda P: ((P ** 2).sum(1) < R * R) & ~((P[:, 1] == 0) & (P[:, 0] >= 0))
        box = (-R, R, -R, R)
    else:
        raise ValueError(f"unknown domain kind {kind!r}")
    return comps, inside, box, dist_fn


def build_domain(kind: str, h: float, bspacing: float | None = None, **params) -> GridDomain:
    """Build a grid domain.

    ``bspacing`` is the arclength spacing of the boundary samples (defaults
    to h).  Kind-specific parameters: disk/slit ``radius``; halfspace_box
    ``width``, ``height``; sawtooth ``L`` (teeth), ``amp``; koch ``depth``,
    ``side``; cantor_complement ``depth``, ``pad``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    comps, inside, box, dist_fn = _geometry(kind, params)
    x0, x1, y0, y1 = box
    if x1 - x0 <= 0 or y1 - y0 <= 0:
        raise ValueError("degenerate domain")
    if min(x1 - x0, y1 - y0) < 16 * h:
        raise ValueError("grid too coarse: fewer than 16 cells across the domain")
    origin = np.array([x0 - 2 * h, y0 - 2 * h])
    nx = int(math.ceil((x1 - x0) / h)) + 4
    ny = int(math.ceil((y1 - y0) / h)) + 4
    # snap the origin so that cell edges fall on multiples of h from (x0, y0)
    I, J = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    centers = origin + (np.c_[I.ravel(), J.ravel()] + 0.5) * h
    ins = inside(centers)
    dist = np.full(len(centers), np.inf)
    sel = np.flatnonzero(ins)
    if dist_fn is not None:
        dist[sel] = dist_fn(centers[sel])
    elif len(comps) < 8:
        dist[sel] = np.min([c.dist(centers[sel]) for c in comps], axis=0)
    else:
        dist[sel] = _fine_distance(comps, centers[sel], h)
    interior = (ins & (dist > h / 2)).reshape(nx, ny)
    if not interior.any():
        raise ValueError("degenerate domain: no interior cells")
    cells = np.argwhere(interior)
    index = np.full((nx, ny), -1, dtype=np.int64)
    index[cells[:, 0], cells[:, 1]] = np.arange(len(cells))
    xy = origin + (cells + 0.5) * h
    delta = dist.reshape(nx, ny)[cells[:, 0], cells[:, 1]]
    # boundary samples
    bs = float(bspacing) if bspacing else h
    pts, cid, par, wts, offs = [], [], [], [], []
    start = 0
    for ci, c in enumerate(comps):
        L = c.length
        if c.closed:
            N = max(3, int(round(L / bs)))
            sp = L / N
            off = 0.5 * sp
            s = off + sp * np.arange(N)
            w = np.full(N, sp)
        else:
            N = max(2, int(round(L / bs)) + 1)
            sp = L / (N - 1)
            off = 0.0
            s = sp * np.arange(N)
            w = np.full(N, sp)
            w[0] = w[-1] = sp / 2
        pts.append(c.point(s))
        cid.append(np.full(N, ci))
        par.append(s)
        wts.append(w)
        offs.append((start, N, sp, off))
        start += N
    dom = GridDomain(kind=kind, h=float(h), params=dict(params, bspacing=bs) if bspacing else dict(params),
                     components=comps, origin=origin, shape=(nx, ny), interior=interior, cells=cells,
                     xy=xy, delta=delta, index=index, samples=np.vstack(pts),
                     sample_comp=np.concatenate(cid), sample_param=np.concatenate(par),
                     sample_weights=np.concatenate(wts), comp_offsets=offs, inside_fn=inside,
                     dim=NOMINAL_DIM.get(kind, 1.0))
    dom.cache["dist_fn"] = dist_fn
    return dom


def _fine_distance(comps, pts, h):
    """Distance to many polylines via a KD-tree of dense boundary points.

    Candidates come from the tree; the exact segment distance is then taken
    over the components owning the nearest candidates.
    """
    dense, owner = [], []
    for ci, c in enumerate(comps):
        N = max(8, int(math.ceil(c.length / (h / 8))))
        s = np.linspace(0, c.length, N, endpoint=not c.closed)
        dense.append(c.point(s))
        owner.append(np.full(N, ci))
    dense = np.vstack(dense)
    owner = np.concatenate(owner)
    tree = cKDTree(dense)
    d, k = tree.query(pts, k=4)
    out = d[:, 0].copy()
    cand = owner[k]
    for ci in np.unique(cand):
        rows = np.flatnonzero((cand == ci).any(axis=1))
        out[rows] = np.minimum(out[rows], comps[ci].dist(pts[rows]))
    return out


def parse_domain_spec(text: str) -> GridDomain:
    """Build a domain from ``kind=..., h=..., depth=..., L=...``."""
    fields = {}
    for part in text.replace(";", ",").split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ValueError(f"bad domain spec entry {part!r}")
        k, v = (s.strip() for s in part.split("=", 1))
        fields[k] = v
    if "kind" not in fields or "h" not in fields:
        raise ValueError("domain spec needs kind and h")
    kind = fields.pop("kind")
    h = float(Fraction(fields.pop("h")))
    params = {}
    for k, v in fields.items():
        params[k] = int(v) if k in ("depth", "L") else float(Fraction(v))
    return build_domain(kind, h, **params)


def connected_components(domain: GridDomain) -> int:
    _, n = ndimage.label(domain.interior)
    return int(n)


def corkscrew_check(domain: GridDomain, samples=None, radii=None) -> float:
    """min over (boundary sample, r) of the largest inscribed ball radius in
    B(x, r) n Omega divided by r, searched over all interior cell centers."""
    if samples is None:
        step = max(1, domain.nsamples // 64)
        samples = np.arange(0, domain.nsamples, step)
    if radii is None:
        diam = float(np.ptp(domain.xy, axis=0).max())
        radii = [r for r in 8 * domain.h * 2.0 ** np.arange(0, 20) if r <= diam / 2]
    if len(samples) < 1:
        raise ValueError("need at least one sample")
    worst = math.inf
    for s in samples:
        x = domain.samples[s]
        dx = np.linalg.norm(domain.xy - x, axis=1)
        for r in radii:
            sel = dx < r
            if not sel.any():
                return 0.0
            rho = np.minimum(domain.delta[sel], r - dx[sel]).max()
            worst = min(worst, rho / r)
    return float(worst)


def boundary_space(domain: GridDomain, lam: float = 8.0) -> MetricMeasureSpace:
    """Boundary samples with the Euclidean metric and arclength weights."""
    d = euclidean_distances(domain.samples)
    return MetricMeasureSpace(d, domain.sample_weights, coords=domain.samples, lam=lam,
                              dim=domain.dim, name=f"boundary({domain.kind})", check=False)


def ball_grid_3d(n: int = 48):
    """Cells of a cube grid whose centers lie in the unit ball (3D smoke grid)."""
    h = 2.0 / n
    c = -1 + (np.arange(n) + 0.5) * h
    X, Y, Z = np.meshgrid(c, c, c, indexing="ij")
    r = np.sqrt(X ** 2 + Y ** 2 + Z ** 2)
    inside = (1 - r) > h / 2
    return h, inside, np.stack([X, Y, Z], axis=-1)
