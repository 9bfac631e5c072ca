"""Finite metric measure spaces, regularity diagnostics and Whitney covers."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

TIE_TOL = 1e-12
DEFAULT_LAMBDA = 8.0


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class BallTable:
    """Per-center sorted view of the distance matrix.

    ``order[z]`` lists the points by increasing distance from ``z`` and
    ``dsorted[z]`` the matching distances.  ``pos[z, x]`` is the rank of
    ``x`` in that order.  ``closes[z, k]`` is true when the first ``k+1``
    points of the order form a closed ball, i.e. the next point is strictly
    farther away.
    """

    order: np.ndarray
    dsorted: np.ndarray
    pos: np.ndarray
    closes: np.ndarray


class MetricMeasureSpace:
    """Finite set with a metric and positive point masses.

    Balls are closed, ``B(x, r) = {y : d(x, y) <= r}`` up to ``TIE_TOL``.
    """

    def __init__(self, dist, weights, coords=None, lam=DEFAULT_LAMBDA, dim=None,
                 name="space", check=True):
        dist = np.array(dist, dtype=float)
        weights = np.array(weights, dtype=float)
        n = weights.shape[0]
        if dist.shape != (n, n):
            raise MetricError(f"distance matrix shape {dist.shape} does not match {n} weights")
        if n < 1:
            raise MetricError("empty space")
        if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
            raise MetricError("weights must be finite and strictly positive")
        if lam < 2:
            raise MetricError("lambda must be at least 2")
        if check:
            _check_metric(dist)
        dist.setflags(write=False)
        weights.setflags(write=False)
        self.dist = dist
        self.weights = weights
        self.coords = None if coords is None else np.asarray(coords, dtype=float)
        self.lam = float(lam)
        self.dim = dim
        self.name = name
        self._table: Optional[BallTable] = None
        self._weak11: Optional[float] = None

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    @property
    def diam(self) -> float:
        return float(self.dist.max())

    def mesh(self) -> float:
        """Largest nearest-neighbour distance, the resolved length scale."""
        if self.n == 1:
            return 0.0
        d = self.dist + np.diag(np.full(self.n, np.inf))
        return float(d.min(axis=1).max())

    def ball(self, x: int, r: float) -> np.ndarray:
        return np.flatnonzero(self.dist[x] <= r + TIE_TOL)

    def mass(self, idx) -> float:
        return float(self.weights[idx].sum())

    def table(self) -> BallTable:
        if self._table is None:
            order = np.argsort(self.dist, axis=1, kind="stable")
            dsorted = np.take_along_axis(self.dist, order, axis=1)
            pos = np.empty_like(order)
            rows = np.arange(self.n)[:, None]
            pos[rows, order] = np.arange(self.n)[None, :]
            closes = np.ones_like(dsorted, dtype=bool)
            closes[:, :-1] = dsorted[:, 1:] > dsorted[:, :-1] + TIE_TOL
            for a in (order, dsorted, pos, closes):
                a.setflags(write=False)
            self._table = BallTable(order, dsorted, pos, closes)
        return self._table

    def weak11_constant(self) -> float:
        """Measured weak (1,1) constant of the uncentered maximal operator.

        Evaluated on point masses, which are the extremal inputs for the
        level-set count on a finite space.
        """
        if self._weak11 is None:
            from .maximal import point_mass_maximal
            best = 0.0
            for z in range(self.n):
                v = point_mass_maximal(self, z)
                s = np.sort(v)[::-1]
                cum = np.cumsum(self.weights[np.argsort(v)[::-1]])
                # sup over levels just below each attained value
                best = max(best, float(np.max(s * cum)))
            self._weak11 = best
        return self._weak11

    def __repr__(self):
        return f"MetricMeasureSpace({self.name!r}, n={self.n}, mass={self.total_mass:.6g})"


def _check_metric(dist: np.ndarray, tol: float = TIE_TOL) -> None:
    n = dist.shape[0]
    if not np.all(np.isfinite(dist)):
        raise MetricError("distances must be finite")
    if np.any(dist < 0):
        i, j = np.argwhere(dist < 0)[0]
        raise MetricError(f"negative distance d({i},{j})={dist[i, j]}")
    if np.any(np.abs(np.diag(dist)) > tol):
        i = int(np.argmax(np.abs(np.diag(dist))))
        raise MetricError(f"d({i},{i}) is not zero")
    asym = np.abs(dist - dist.T)
    if asym.max() > tol:
        i, j = np.unravel_index(np.argmax(asym), asym.shape)
        raise MetricError(f"asymmetric distance d({i},{j}) != d({j},{i})")
    off = dist + np.eye(n)
    if n > 1 and np.any(off <= 0):
        i, j = np.argwhere(off <= 0)[0]
        raise MetricError(f"distinct points {i},{j} at zero distance")
    for k in range(n):
        viol = dist - (dist[:, k:k + 1] + dist[k:k + 1, :])
        if viol.max() > tol * max(1.0, dist.max()):
            i, j = np.unravel_index(np.argmax(viol), viol.shape)
            raise MetricError(
                f"triangle inequality fails for triple ({i},{k},{j}): "
                f"d({i},{j})={dist[i, j]:.6g} > d({i},{k})+d({k},{j})={dist[i, k] + dist[k, j]:.6g}")


def euclidean_distances(coords: np.ndarray) -> np.ndarray:
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt((diff ** 2).sum(-1))


def cantor4_points(depth: int) -> np.ndarray:
    """Centers of the 4**depth squares of the four-corner Cantor construction in [0,1]^2."""
    pts = np.array([[0.5, 0.5]])
    side = 1.0
    for _ in range(depth):
        off = 3.0 * side / 8.0
        shifts = np.array([[-off, -off], [off, -off], [-off, off], [off, off]])
        pts = (pts[:, None, :] + shifts[None, :, :]).reshape(-1, 2)
        side /= 4.0
    return pts


def build_space(kind: str, size: int, lam: float = DEFAULT_LAMBDA, **params) -> MetricMeasureSpace:
    """Build one of the reference spaces.

    kind: ``circle`` (size points, arclength metric, ``circumference``),
    ``segment`` (size points on ``[0, length]``), ``cantor4`` (size is the
    depth, 4**depth points in the plane) or ``from_file`` (``path``).
    """
    if kind == "from_file":
        return read_space(params["path"])
    if kind in ("circle", "segment") and size < 2:
        raise ValueError("size must be at least 2")
    if kind == "circle":
        L = float(params.get("circumference", 1.0))
        t = np.arange(size) * (L / size)
        d = np.abs(t[:, None] - t[None, :])
        d = np.minimum(d, L - d)
        R = L / (2 * np.pi)
        coords = np.c_[R * np.cos(2 * np.pi * t / L), R * np.sin(2 * np.pi * t / L)]
        return MetricMeasureSpace(d, np.full(size, L / size), coords=coords, lam=lam, dim=1.0,
                                  name=f"circle-{size}", check=False)
    if kind == "segment":
        L = float(params.get("length", 1.0))
        t = np.linspace(0.0, L, size)
        d = np.abs(t[:, None] - t[None, :])
        return MetricMeasureSpace(d, np.full(size, L / size), coords=t[:, None], lam=lam, dim=1.0,
                                  name=f"segment-{size}", check=False)
    if kind == "cantor4":
        depth = int(params.get("depth", size))
        if depth < 1 or depth > 6:
            raise ValueError("cantor4 depth must be in 1..6")
        pts = cantor4_points(depth)
        return MetricMeasureSpace(euclidean_distances(pts), np.full(len(pts), 4.0 ** -depth),
                                  coords=pts, lam=lam, dim=1.0, name=f"cantor4-{depth}", check=False)
    raise ValueError(f"unknown space kind {kind!r}")


# -- file format -------------------------------------------------------------

def read_space(path) -> MetricMeasureSpace:
    dim = None
    lam = DEFAULT_LAMBDA
    ids, weights, coords, pairs = [], [], [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            tok = raw.split("#", 1)[0].split()
            if not tok:
                continue
            if tok[0] == "d":
                dim = float(tok[1])
                if len(tok) >= 4 and tok[2] == "lambda":
                    lam = float(tok[3])
            elif tok[0] == "point":
                ids.append(tok[1])
                weights.append(float(tok[2]))
                coords.append([float(v) for v in tok[3:]])
            elif tok[0] == "dist":
                pairs.append((tok[1], tok[2], float(tok[3]), lineno))
            else:
                raise MetricError(f"{path}:{lineno}: unknown record {tok[0]!r}")
    index = {pid: k for k, pid in enumerate(ids)}
    n = len(ids)
    if pairs:
        d = np.full((n, n), np.nan)
        np.fill_diagonal(d, 0.0)
        for a, b, v, lineno in pairs:
            if a not in index or b not in index:
                raise MetricError(f"{path}:{lineno}: unknown point id")
            i, j = index[a], index[b]
            if not np.isnan(d[i, j]) and i != j and abs(d[i, j] - v) > TIE_TOL:
                raise MetricError(f"{path}:{lineno}: inconsistent distance for ({a},{b})")
            d[i, j] = d[j, i] = v
        if np.isnan(d).any():
            i, j = np.argwhere(np.isnan(d))[0]
            raise MetricError(f"missing distance between {ids[i]} and {ids[j]}")
        c = np.array(coords) if coords and all(len(c) == len(coords[0]) > 0 for c in coords) else None
    else:
        if not coords or any(len(c) != len(coords[0]) or not c for c in coords):
            raise MetricError("points need coordinates when no dist lines are given")
        c = np.array(coords)
        d = euclidean_distances(c)
    return MetricMeasureSpace(d, weights, coords=c, lam=lam, dim=dim, name=str(path))


def write_space(space: MetricMeasureSpace, path, explicit_dist: bool = False) -> None:
    with open(path, "w") as fh:
        fh.write(f"d {space.dim if space.dim is not None else 1} lambda {space.lam!r}\n")
        for i in range(space.n):
            extra = ""
            if space.coords is not None:
                extra = " " + " ".join(repr(float(v)) for v in space.coords[i])
            fh.write(f"point {i} {float(space.weights[i])!r}{extra}\n")
        if explicit_dist or space.coords is None:
            for i in range(space.n):
                for j in range(i + 1, space.n):
                    fh.write(f"dist {i} {j} {float(space.dist[i, j])!r}\n")


# -- regularity --------------------------------------------------------------

@dataclass
class RegularityReport:
    d: float
    C0: float
    ratio_min: float
    ratio_max: float
    drift: float
    slope: float
    doubling: float
    uniformly_perfect: bool
    radii: np.ndarray
    ahlfors: bool

    def summary(self) -> str:
        return (f"d={self.d:g} C0={self.C0:.4g} drift={self.drift:.4g} slope={self.slope:.4g} "
                f"doubling={self.doubling:.4g} uniformly_perfect={self.uniformly_perfect} "
                f"ahlfors={self.ahlfors}")


def check_regularity(space: MetricMeasureSpace, d: float, min_scale: float = 16.0,
                     slope_tol: float = 0.15) -> RegularityReport:
    """Sweep all centers over a dyadic radius grid.

    The grid runs from ``diam`` down to ``min_scale`` times the mesh of the
    space; below that the discrete masses no longer resolve a dimension.
    C0 is the smallest constant with ``C0^-1 r^d <= sigma(B) <= C0 r^d`` on the
    grid.  ``drift`` is the ratio of the largest to smallest normalized mass
    and ``slope`` the least-squares exponent of the mean mass against r.
    """
    if d <= 0:
        raise ValueError("d must be positive")
    tab = space.table()
    cum = np.cumsum(space.weights[tab.order], axis=1)
    mesh = space.mesh()
    diam = space.diam
    radii = []
    r = diam
    lo = min_scale * mesh
    while r >= lo and len(radii) < 60:
        radii.append(r)
        r /= 2.0
    if len(radii) < 2:
        radii = [diam, diam / 2]
    radii = np.array(radii[::-1])

    def masses(r):
        k = np.array([np.searchsorted(tab.dsorted[z], r + TIE_TOL, side="right") - 1
                      for z in range(space.n)])
        return cum[np.arange(space.n), k]

    ratios = np.array([masses(r) / r ** d for r in radii])
    rmin, rmax = float(ratios.min()), float(ratios.max())
    C0 = max(rmax, 1.0 / rmin)
    logm = np.log(np.array([masses(r).mean() for r in radii]))
    slope = float(np.polyfit(np.log(radii), logm, 1)[0]) if len(radii) > 1 else float("nan")

    # doubling and uniform perfectness on resolved scales
    dr = []
    r = diam
    while r >= mesh and len(dr) < 80:
        dr.append(r)
        r /= 2.0
    doubling = 1.0
    perfect = True
    for r in dr:
        m1 = masses(r)
        m2 = masses(2 * r)
        doubling = max(doubling, float((m2 / m1).max()))
        big = masses(space.lam * r)
        inner = m1
        # lambda*B differs from X but adds nothing beyond B
        bad = (big < space.total_mass * (1 - 1e-12)) & (big <= inner * (1 + 1e-12))
        if bad.any():
            perfect = False
    return RegularityReport(d=d, C0=C0, ratio_min=rmin, ratio_max=rmax, drift=rmax / rmin,
                            slope=slope, doubling=doubling, uniformly_perfect=perfect,
                            radii=radii, ahlfors=abs(slope - d) <= slope_tol)


# -- Whitney covers ----------------------------------------------------------

@dataclass
class WhitneyCover:
    """Balls ``B_i = B(x_i, r_i)`` covering an open set ``U``.

    ``radii`` are the radii of the ``B_i``; the shrunk balls have radius
    ``radii / lam``.  ``pou`` has one row per ball (values on every point).
    """

    U: np.ndarray
    centers: np.ndarray
    radii: np.ndarray
    lam: float
    pou: np.ndarray
    pou_lip: np.ndarray
    overlap_bound: int
    comparability: float
    members: list = field(default_factory=list)

    @property
    def balls(self):
        return list(zip(self.centers.tolist(), self.radii.tolist()))

    @property
    def underline_balls(self):
        return list(zip(self.centers.tolist(), (self.radii / self.lam).tolist()))

    def __len__(self):
        return len(self.centers)


def whitney_decompose(space: MetricMeasureSpace, U) -> WhitneyCover:
    """Greedy Whitney cover of ``U``.

    Points of ``U`` are visited by decreasing ``r(x) = dist(x, X\\U)/(2 lam)``;
    a point becomes a center when no earlier shrunk ball contains it.  The
    shrunk ball at ``x`` has radius ``r(x)`` and the full ball ``lam * r(x)``,
    half the distance to the complement.
    """
    n = space.n
    mask = np.zeros(n, dtype=bool)
    mask[np.asarray(U, dtype=int)] = True
    Uidx = np.flatnonzero(mask)
    lam = space.lam
    if Uidx.size == 0:
        return WhitneyCover(U=Uidx, centers=np.zeros(0, int), radii=np.zeros(0), lam=lam,
                            pou=np.zeros((0, n)), pou_lip=np.zeros(0), overlap_bound=0,
                            comparability=1.0, members=[])
    if Uidx.size == n:
        raise ValueError("decomposition requires nonempty complement")
    comp = np.flatnonzero(~mask)
    dist_c = space.dist[np.ix_(Uidx, comp)].min(axis=1)
    small = dist_c / (2 * lam)
    order = np.lexsort((Uidx, -small))
    covered = np.zeros(n, dtype=bool)
    centers, radii = [], []
    for k in order:
        x = Uidx[k]
        if covered[x]:
            continue
        centers.append(x)
        radii.append(lam * small[k])
        covered |= space.dist[x] <= small[k] + TIE_TOL
    centers = np.array(centers)
    radii = np.array(radii)
    D = space.dist[centers]                     # balls x points
    members = [np.flatnonzero(D[i] <= radii[i] + TIE_TOL) for i in range(len(centers))]
    counts = np.zeros(n, dtype=int)
    for m in members:
        counts[m] += 1
    overlap = int(counts.max())
    # radius comparability over intersecting pairs
    comparab = 1.0
    inb = np.zeros((len(centers), n), dtype=bool)
    for i, m in enumerate(members):
        inb[i, m] = True
    inter = (inb.astype(np.int32) @ inb.T.astype(np.int32)) > 0
    ii, jj = np.nonzero(inter)
    if ii.size:
        comparab = float((radii[ii] / radii[jj]).max())
    psi = np.clip(2.0 - 2.0 * D / radii[:, None], 0.0, 1.0)
    S = psi.sum(axis=0)
    pou = np.zeros_like(psi)
    pou[:, mask] = psi[:, mask] / S[mask]
    lips = np.array([_lip_support(space, pou[i], members[i]) for i in range(len(centers))])
    return WhitneyCover(U=Uidx, centers=centers, radii=radii, lam=lam, pou=pou, pou_lip=lips,
                        overlap_bound=overlap, comparability=comparab, members=members)


def _lip_support(space, phi, supp) -> float:
    """Exact Lipschitz constant of a function vanishing off ``supp``."""
    if len(supp) == 0:
        return 0.0
    d = space.dist[supp]
    diff = np.abs(phi[supp][:, None] - phi[None, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(d > 0, diff / np.where(d > 0, d, 1.0), 0.0)
    return float(q.max())


def lipschitz_constant(space: MetricMeasureSpace, f, rows=None) -> float:
    """max |f(x) - f(y)| / d(x, y) over pairs with x in ``rows`` (all by default)."""
    f = np.asarray(f, dtype=float)
    rows = np.arange(space.n) if rows is None else np.asarray(rows)
    return _lip_support(space, f, rows)
