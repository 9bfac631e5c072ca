"""Finite-volume solver for div(A grad u) = 0 and -div(A grad v) = H - div Xi.

Rows use a flux stencil with face-averaged diagonal coefficients.  Where a
neighbor cell is not interior, the Dirichlet node sits at the exact
crossing of the grid line with the boundary (Shortley-Weller distances),
so linear and quadratic data along grid lines are reproduced exactly.
The symmetric part of A is split by obtuse superbase reduction into
nonnegative weights on lattice offsets; offsets other than the axes get the
same treatment along their own line.  The skew part is a divergence-free
drift with face fluxes taken from corner values, upwinded.  All off-diagonal
entries are then nonpositive, which gives the discrete maximum principle.
Dirichlet data live on boundary samples and reach the nodes by linear
interpolation in arclength; the elliptic measure is the transpose of this
chain applied to one adjoint solve.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .domain2d import GridDomain, Circle

CROSS_REACH = 4.0
DIRS = {"E": (1, 0), "W": (-1, 0), "N": (0, 1), "S": (0, -1)}


class SolverError(RuntimeError):
    def __init__(self, msg, history=()):
        super().__init__(msg)
        self.history = list(history)


class EllipticityError(ValueError):
    pass


@dataclass
class CoefficientField:
    A: np.ndarray                 # (m, 2, 2)
    lambda_ell: float
    label: str = "custom"

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        if not 0 < self.lambda_ell <= 1:
            raise EllipticityError("ellipticity constant must lie in (0, 1]")
        lo, hi = ellipticity_bounds(self.A)
        if lo < self.lambda_ell * (1 - 1e-12) or hi > (1 + 1e-12) / self.lambda_ell:
            raise EllipticityError(f"field violates ellipticity: min {lo:.4g}, norm {hi:.4g}, "
                                   f"lambda {self.lambda_ell}")

    @property
    def symmetric(self) -> bool:
        return bool(np.allclose(self.A[:, 0, 1], self.A[:, 1, 0]))

    def transpose(self) -> "CoefficientField":
        return CoefficientField(np.transpose(self.A, (0, 2, 1)).copy(), self.lambda_ell, self.label + "^T")

    @classmethod
    def identity(cls, domain: GridDomain):
        return cls(np.broadcast_to(np.eye(2), (domain.ncells, 2, 2)).copy(), 1.0, "identity")

    @classmethod
    def constant(cls, domain: GridDomain, M, lam):
        return cls(np.broadcast_to(np.asarray(M, float), (domain.ncells, 2, 2)).copy(), lam)

    @classmethod
    def random(cls, domain: GridDomain, lam=0.5, seed=0, symmetric=False, smooth=False):
        """Random measurable coefficients with the given ellipticity."""
        rng = np.random.default_rng(seed)
        m = domain.ncells
        if smooth:
            x, y = domain.xy[:, 0], domain.xy[:, 1]
            s1 = 0.5 + 0.5 * np.sin(3 * x + 1.3 * y + rng.uniform(0, 6))
            s2 = 0.5 + 0.5 * np.cos(2 * x - 2.7 * y + rng.uniform(0, 6))
            s3 = np.sin(4 * x * y + rng.uniform(0, 6))
        else:
            s1, s2, s3 = rng.uniform(0, 1, m), rng.uniform(0, 1, m), rng.uniform(-1, 1, m)
        # eigenvalues of the symmetric part in [2 lam, 1/(2 lam)] after scaling
        lo, hi = min(1.0, 1.5 * lam), max(1.0, 0.7 / lam)
        e1 = lo + (hi - lo) * s1
        e2 = lo + (hi - lo) * s2
        th = np.pi * s3
        c, s = np.cos(th), np.sin(th)
        R = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)
        D = np.zeros((m, 2, 2))
        D[:, 0, 0], D[:, 1, 1] = e1, e2
        A = R @ D @ np.transpose(R, (0, 2, 1))
        if not symmetric:
            skew = 0.3 * lo * (rng.uniform(-1, 1, m) if not smooth else np.cos(5 * domain.xy[:, 0]))
            A[:, 0, 1] += skew
            A[:, 1, 0] -= skew
        # rescale so that both bounds hold
        a, b = ellipticity_bounds(A)
        A = A * min(1.0, 1 / (lam * b))
        return cls(A, lam)


def ellipticity_bounds(A):
    """(min over cells of the smallest eigenvalue of the symmetric part,
    max over cells of the operator norm)."""
    S = 0.5 * (A + np.transpose(A, (0, 2, 1)))
    lo = np.linalg.eigvalsh(S)[:, 0].min() if len(A) else 1.0
    hi = np.linalg.norm(A, ord=2, axis=(1, 2)).max() if len(A) else 1.0
    return float(lo), float(hi)


@dataclass
class DiscreteField:
    values: np.ndarray
    domain: GridDomain = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field has non-finite values")

    @property
    def is_vector(self) -> bool:
        return self.values.ndim == 2

    def to_csv(self, path):
        with open(path, "w") as fh:
            if self.is_vector:
                fh.write("i,j,vx,vy\n")
                for (i, j), (a, b) in zip(self.domain.cells, self.values):
                    fh.write(f"{i},{j},{float(a)!r},{float(b)!r}\n")
            else:
                fh.write("i,j,value\n")
                for (i, j), v in zip(self.domain.cells, self.values):
                    fh.write(f"{i},{j},{float(v)!r}\n")

    def to_svg(self, path, title=""):
        vals = np.linalg.norm(self.values, axis=1) if self.is_vector else self.values
        write_svg_heatmap(path, self.domain, vals, title=title)


def write_svg_heatmap(path, domain: GridDomain, values, title="", max_side=256):
    grid = domain.grid_field(values)
    nx, ny = grid.shape
    step = max(1, int(math.ceil(max(nx, ny) / max_side)))
    if step > 1:
        g = grid[: nx - nx % step, : ny - ny % step]
        g = np.nanmean(g.reshape(nx // step, step, ny // step, step), axis=(1, 3)) \
            if np.isfinite(g).any() else g[::step, ::step]
        grid = g
    lo, hi = np.nanmin(grid), np.nanmax(grid)
    span = hi - lo if hi > lo else 1.0
    px = 3
    W, H = grid.shape[0] * px, grid.shape[1] * px
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H + 20}">']
    if title:
        out.append(f'<text x="2" y="14" font-size="12">{title}</text>')
    for i in range(grid.shape[0]):
        for j in range(grid.shape[1]):
            v = grid[i, j]
            if not np.isfinite(v):
                continue
            t = (v - lo) / span
            r, b = int(255 * t), int(255 * (1 - t))
            y = 20 + (grid.shape[1] - 1 - j) * px
            out.append(f'<rect x="{i * px}" y="{y}" width="{px}" height="{px}" fill="rgb({r},60,{b})"/>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out))


# -- assembly ----------------------------------------------------------------

@dataclass
class System:
    """K u = B g where g are values at Dirichlet nodes.

    Node values come from boundary samples through T (nodes x samples).
    """
    K: sp.csr_matrix
    B: sp.csr_matrix
    T: sp.csr_matrix
    node_xy: np.ndarray
    node_comp: np.ndarray
    node_param: np.ndarray
    lu: object = None
    lu_t: object = None


def _crossings(domain: GridDomain, P, e, reach=None):
    """Distance along the unit direction e to the first boundary crossing
    within ``reach`` (default 4 h), with its component and parameter; inf
    where there is none.

    The neighbor cell may lie inside the domain but within h/2 of some other
    part of the boundary, so the crossing can lie past it.
    """
    h = domain.h
    E = np.broadcast_to(np.asarray(e, float), P.shape)
    best = np.full(len(P), np.inf)
    comp = np.zeros(len(P), dtype=int)
    par = np.zeros(len(P))
    for ci, c in enumerate(domain.components):
        s, pr = c.ray_hits(P, E, CROSS_REACH * h if reach is None else reach)
        better = s < best
        best = np.where(better, s, best)
        comp = np.where(better, ci, comp)
        par = np.where(better, pr, par)
    return best, comp, par


class _NodeBank:
    def __init__(self, domain):
        self.domain = domain
        self.xy, self.comp, self.par = [], [], []
        self.n = 0
        self.band = {}

    def add(self, xy, comp, par):
        k = len(xy)
        ids = np.arange(self.n, self.n + k)
        self.xy.append(np.asarray(xy))
        self.comp.append(np.asarray(comp))
        self.par.append(np.asarray(par))
        self.n += k
        return ids

    def band_nodes(self, ij):
        """Dirichlet nodes for non-interior cells: the nearest boundary point."""
        keys = [tuple(t) for t in ij]
        new = [k for k in dict.fromkeys(keys) if k not in self.band]
        if new:
            cen = self.domain.centers_of(np.array(new))
            comp, par = self.domain.project(cen)
            pts = np.array([self.domain.components[c].point(np.array([p]))[0]
                            for c, p in zip(comp, par)])
            ids = self.add(pts, comp, par)
            for k, i in zip(new, ids):
                self.band[k] = i
        return np.array([self.band[k] for k in keys], dtype=np.int64)


def selling_decomposition(S, tol=1e-12):
    """Obtuse superbase reduction of symmetric positive definite 2x2 matrices.

    Returns weights (m, 3) >= 0 and integer offsets (m, 3, 2), each offset
    normalized so its first nonzero entry is positive, with
    S = sum_k w_k v_k v_k^T.
    """
    S = np.asarray(S, dtype=float)
    m = len(S)
    base = np.broadcast_to(np.array([[1, 0], [0, 1], [-1, -1]]), (m, 3, 2)).copy()
    pairs = ((0, 1, 2), (0, 2, 1), (1, 2, 0))
    scale = np.abs(S).max(axis=(1, 2))
    for _ in range(100):
        changed = False
        for i, j, k in pairs:
            bi, bj = base[:, i].astype(float), base[:, j].astype(float)
            sij = np.einsum("ma,mab,mb->m", bi, S, bj)
            bad = sij > tol * scale
            if bad.any():
                changed = True
                old_i = base[bad, i].copy()
                base[bad, i] = -old_i
                base[bad, k] = old_i - base[bad, j]
        if not changed:
            break
    else:
        raise EllipticityError("superbase reduction did not terminate")
    w = np.zeros((m, 3))
    off = np.zeros((m, 3, 2), dtype=np.int64)
    for n, (i, j, k) in enumerate(pairs):
        bi, bj = base[:, i].astype(float), base[:, j].astype(float)
        w[:, n] = np.maximum(-np.einsum("ma,mab,mb->m", bi, S, bj), 0.0)
        v = np.c_[-base[:, k, 1], base[:, k, 0]]
        flip = (v[:, 0] < 0) | ((v[:, 0] == 0) & (v[:, 1] < 0))
        v[flip] *= -1
        off[:, n] = v
    return w, off


def _offset_weights(A):
    """Per-cell weights of the symmetric part keyed by lattice offset."""
    S = 0.5 * (A + np.transpose(A, (0, 2, 1)))
    w, off = selling_decomposition(S)
    out = {}
    for n in range(3):
        for key in {tuple(map(int, v)) for v in off[:, n]}:
            sel = (off[:, n, 0] == key[0]) & (off[:, n, 1] == key[1])
            out.setdefault(key, np.zeros(len(A)))[sel] += w[sel, n]
    return out


def assemble(domain: GridDomain, coeff: CoefficientField) -> System:
    h = domain.h
    m = domain.ncells
    A = coeff.A
    cells = domain.cells
    index = domain.index
    nodes = _NodeBank(domain)
    Ki, Kj, Kv = [], [], []
    Bi, Bj, Bv = [], [], []
    diag = np.zeros(m)
    rows = np.arange(m)
    weights = _offset_weights(A)
    zero = np.zeros(m)
    axis_nb = {}

    # axis offsets: nonuniform three-point flux differences, harmonic face averages
    for axis, (pos, neg) in enumerate((("E", "W"), ("N", "S"))):
        a_P = weights.get((1, 0) if axis == 0 else (0, 1), zero)
        dist = {}
        for name in (pos, neg):
            e = np.array(DIRS[name])
            nb = cells + e
            ni = index[nb[:, 0], nb[:, 1]]
            inner = ni >= 0
            d = np.full(m, h)
            node = np.full(m, -1, dtype=np.int64)
            out = np.flatnonzero(~inner)
            if len(out):
                s, comp, par = _crossings(domain, domain.xy[out], e)
                hit = np.isfinite(s)
                if hit.any():
                    o = out[hit]
                    pts = domain.xy[o] + s[hit, None] * e
                    node[o] = nodes.add(pts, comp[hit], par[hit])
                    d[o] = s[hit]
                miss = out[~hit]
                if len(miss):
                    node[miss] = nodes.band_nodes(nb[miss])
            a_face = a_P.copy()
            an = a_P[ni[inner]]
            tot = a_P[inner] + an
            a_face[inner] = np.where(tot > 0, 2 * a_P[inner] * an / np.where(tot > 0, tot, 1), 0.0)
            dist[name] = (d, ni, inner, node, a_face)
            axis_nb[name] = (ni, inner, node)
        dp, dn = dist[pos][0], dist[neg][0]
        scale = 2.0 / (dp + dn)
        for name in (pos, neg):
            d, ni, inner, node, a_face = dist[name]
            c = scale * a_face / d
            diag += c
            Ki.append(rows[inner]); Kj.append(ni[inner]); Kv.append(-c[inner])
            Bi.append(rows[~inner]); Bj.append(node[~inner]); Bv.append(c[~inner])

    # oblique offsets of the symmetric part, with crossings along the offset line
    nx, ny = domain.shape
    for key in sorted(weights):
        W = weights[key]
        if key in ((1, 0), (0, 1)) or not W.any():
            continue
        v = np.array(key)
        L = h * math.hypot(*key)
        t = v / math.hypot(*key)
        dist = {}
        for sgn in (1, -1):
            nb = cells + sgn * v
            ok = (nb[:, 0] >= 0) & (nb[:, 0] < nx) & (nb[:, 1] >= 0) & (nb[:, 1] < ny)
            ni = np.full(m, -1, dtype=np.int64)
            ni[ok] = index[nb[ok, 0], nb[ok, 1]]
            s, comp, par = _crossings(domain, domain.xy, sgn * t, reach=max(L, CROSS_REACH * h))
            cross = np.isfinite(s) & ((s < L * (1 - 1e-12)) | (ni < 0))
            d = np.full(m, L)
            node = np.full(m, -1, dtype=np.int64)
            if cross.any():
                node[cross] = nodes.add(domain.xy[cross] + s[cross, None] * (sgn * t), comp[cross], par[cross])
                d[cross] = s[cross]
            inner = (ni >= 0) & ~cross
            miss = (ni < 0) & ~cross
            if miss.any():
                node[miss] = nodes.band_nodes(nb[miss])
            w_face = W.copy()
            w_face[inner] = 0.5 * (W[inner] + W[ni[inner]])
            dist[sgn] = (d, ni, inner, node, w_face)
        scale = 2.0 / (dist[1][0] + dist[-1][0])
        for sgn in (1, -1):
            d, ni, inner, node, w_face = dist[sgn]
            c = (L / h) ** 2 * scale * w_face / d
            keep = c != 0
            diag += c
            Ki.append(rows[inner & keep]); Kj.append(ni[inner & keep]); Kv.append(-c[inner & keep])
            o = ~inner & keep
            Bi.append(rows[o]); Bj.append(node[o]); Bv.append(c[o])

    # skew part: a divergence-free drift whose face fluxes come from the
    # corner values of the skew entry (a stream function), upwinded
    skew = 0.5 * (A[:, 0, 1] - A[:, 1, 0])
    if np.any(skew != 0):
        i, j = cells[:, 0], cells[:, 1]
        cg = np.zeros((nx + 1, ny + 1))
        cnt = np.zeros((nx + 1, ny + 1))
        for di in (0, 1):
            for dj in (0, 1):
                np.add.at(cg, (i + di, j + dj), skew)
                np.add.at(cnt, (i + di, j + dj), 1)
        cv = cg / np.maximum(cnt, 1)
        flux = {"E": cv[i + 1, j + 1] - cv[i + 1, j], "W": cv[i, j] - cv[i, j + 1],
                "N": cv[i, j + 1] - cv[i + 1, j + 1], "S": cv[i + 1, j] - cv[i, j]}
        for name, phi in flux.items():
            ni, inner, node = axis_nb[name]
            diag += np.maximum(phi, 0) / h ** 2
            inflow = np.minimum(phi, 0) / h ** 2
            keep = inflow != 0
            Ki.append(rows[inner & keep]); Kj.append(ni[inner & keep]); Kv.append(inflow[inner & keep])
            o = ~inner & keep
            Bi.append(rows[o]); Bj.append(node[o]); Bv.append(-inflow[o])

    Ki.append(rows); Kj.append(rows); Kv.append(diag)
    K = sp.csr_matrix((np.concatenate(Kv), (np.concatenate(Ki), np.concatenate(Kj))), shape=(m, m))
    nn = nodes.n
    B = sp.csr_matrix((np.concatenate(Bv), (np.concatenate(Bi), np.concatenate(Bj))), shape=(m, nn))
    node_xy = np.vstack(nodes.xy) if nn else np.zeros((0, 2))
    node_comp = np.concatenate(nodes.comp).astype(int) if nn else np.zeros(0, int)
    node_par = np.concatenate(nodes.par) if nn else np.zeros(0)
    idx, wts = domain.transfer_weights(node_comp, node_par)
    T = sp.csr_matrix((wts.ravel(), (np.repeat(np.arange(nn), 2), idx.ravel())),
                      shape=(nn, domain.nsamples))
    return System(K, B, T, node_xy, node_comp, node_par)


def get_system(domain: GridDomain, coeff: CoefficientField) -> System:
    """Assembled system, cached on the domain per coefficient field."""
    store = domain.cache.setdefault("systems", {})
    hit = store.get(id(coeff))
    if hit is not None and hit[0] is coeff:
        return hit[1]
    if len(store) > 8:
        store.clear()
    sysm = assemble(domain, coeff)
    store[id(coeff)] = (coeff, sysm)
    return sysm


@dataclass
class SolverSettings:
    tol: float = 1e-10
    maxiter: int = 100000
    method: str = "direct"        # direct | krylov


def _solve(sysm: System, rhs, settings: SolverSettings, transpose=False):
    K = sysm.K.T.tocsr() if transpose else sysm.K
    rhs = np.asarray(rhs, dtype=float)
    nb = np.linalg.norm(rhs)
    if nb == 0:
        return np.zeros_like(rhs)
    history = []
    if settings.method == "direct":
        attr = "lu_t" if transpose else "lu"
        lu = getattr(sysm, attr)
        if lu is None:
            lu = spla.splu(K.tocsc())
            setattr(sysm, attr, lu)
        x = lu.solve(rhs)
        for _ in range(3):
            r = rhs - K @ x
            history.append(np.linalg.norm(r) / nb)
            if history[-1] <= settings.tol:
                return x
            x = x + lu.solve(r)
        raise SolverError("direct solve did not reach tolerance", history)
    if settings.method != "krylov":
        raise ValueError(f"unknown solver method {settings.method!r}")
    Dinv = 1.0 / K.diagonal()
    M = spla.LinearOperator(K.shape, matvec=lambda v: Dinv * v)

    def cb(xk):
        history.append(float(np.linalg.norm(rhs - K @ xk) / nb))
    symmetric = abs(K - K.T).max() <= 1e-14 * abs(K).max()
    solver = spla.cg if symmetric else spla.bicgstab
    x, info = solver(K, rhs, rtol=settings.tol * 0.5, atol=0.0, maxiter=settings.maxiter,
                     M=M, callback=cb)
    res = np.linalg.norm(rhs - K @ x) / nb
    if info != 0 or res > settings.tol:
        raise SolverError(f"Krylov solve stopped with relative residual {res:.3e}", history)
    return x


def node_values(domain: GridDomain, sysm: System, f):
    """Dirichlet data at nodes: callables are evaluated at the node points,
    arrays are boundary sample values interpolated along each component."""
    if callable(f):
        return np.asarray(f(sysm.node_xy[:, 0], sysm.node_xy[:, 1]), dtype=float)
    f = np.asarray(f, dtype=float)
    if f.shape != (domain.nsamples,):
        raise ValueError("boundary data must have one value per boundary sample")
    if not np.all(np.isfinite(f)):
        raise ValueError("boundary data must be finite")
    return sysm.T @ f


def solve_dirichlet(domain: GridDomain, coeff: CoefficientField, f, settings=None) -> DiscreteField:
    settings = settings or SolverSettings()
    sysm = get_system(domain, coeff)
    g = node_values(domain, sysm, f)
    return DiscreteField(_solve(sysm, sysm.B @ g, settings), domain)


def face_gradient(domain: GridDomain, w):
    """Forward differences of cell data on the x-faces (nx+1, ny) and
    y-faces (nx, ny+1); cells outside the domain count as zero."""
    g = np.nan_to_num(domain.grid_field(w, fill=0.0))
    nx, ny = g.shape
    fx = np.zeros((nx + 1, ny))
    fy = np.zeros((nx, ny + 1))
    fx[1:-1] = (g[1:] - g[:-1]) / domain.h
    fy[:, 1:-1] = (g[:, 1:] - g[:, :-1]) / domain.h
    return fx, fy


def divergence(domain: GridDomain, Xi, location="cell"):
    """Discrete divergence at interior cells.

    ``location='cell'``: Xi is (m, 2) cell data, face values are averages of
    the two adjacent cells.  ``location='face'``: Xi is the pair of face
    grids returned by :func:`face_gradient`.
    """
    h = domain.h
    if location == "cell":
        Xi = np.asarray(Xi, dtype=float)
        gx = np.nan_to_num(domain.grid_field(Xi[:, 0], fill=0.0))
        gy = np.nan_to_num(domain.grid_field(Xi[:, 1], fill=0.0))
        nx, ny = gx.shape
        fx = np.zeros((nx + 1, ny))
        fy = np.zeros((nx, ny + 1))
        fx[1:-1] = 0.5 * (gx[1:] + gx[:-1])
        fy[:, 1:-1] = 0.5 * (gy[:, 1:] + gy[:, :-1])
    elif location == "face":
        fx, fy = Xi
    else:
        raise ValueError("location must be 'cell' or 'face'")
    i, j = domain.cells[:, 0], domain.cells[:, 1]
    return (fx[i + 1, j] - fx[i, j] + fy[i, j + 1] - fy[i, j]) / h


def solve_poisson(domain: GridDomain, coeff: CoefficientField, H=None, Xi=None,
                  location="cell", settings=None) -> DiscreteField:
    """Zero boundary values, -L v = H - div Xi."""
    settings = settings or SolverSettings()
    sysm = get_system(domain, coeff)
    rhs = np.zeros(domain.ncells)
    if H is not None:
        rhs += np.asarray(H, dtype=float)
    if Xi is not None:
        rhs -= divergence(domain, Xi, location)
    return DiscreteField(_solve(sysm, rhs, settings), domain)


@dataclass
class MeasureEstimate:
    pole: int
    masses: np.ndarray

    def __post_init__(self):
        if np.any(self.masses < -1e-12):
            raise ValueError("negative elliptic measure mass")
        if abs(self.masses.sum() - 1) > 1e-10:
            raise ValueError(f"elliptic measure total {self.masses.sum()!r} differs from 1")

    def of(self, mask) -> float:
        return float(self.masses[np.asarray(mask)].sum())


def pole_cell(domain: GridDomain, point) -> int:
    d = np.linalg.norm(domain.xy - np.asarray(point, float), axis=1)
    return int(np.argmin(d))


def adjoint_solve(domain, coeff, poles, settings=None):
    """Columns K^{-T} e_p for each pole."""
    settings = settings or SolverSettings()
    sysm = get_system(domain, coeff)
    poles = np.atleast_1d(poles)
    out = np.zeros((domain.ncells, len(poles)))
    for k, p in enumerate(poles):
        e = np.zeros(domain.ncells)
        e[p] = 1.0
        out[:, k] = _solve(sysm, e, settings, transpose=True)
    return out


def elliptic_measure(domain: GridDomain, coeff: CoefficientField, pole, settings=None,
                     clip=True) -> MeasureEstimate:
    """Masses on boundary samples with u(pole) = sum f(xi) mass(xi)."""
    pole = int(pole)
    if not 0 <= pole < domain.ncells:
        raise ValueError("pole must be an interior cell")
    sysm = get_system(domain, coeff)
    y = adjoint_solve(domain, coeff, [pole], settings)[:, 0]
    masses = sysm.T.T @ (sysm.B.T @ y)
    if clip:
        # rounding can leave tiny negatives for non M-matrix stencils
        masses = np.where(np.abs(masses) < 1e-15, 0.0, masses)
    return MeasureEstimate(pole, masses)


def green_function(domain: GridDomain, coeff: CoefficientField, pole, settings=None) -> DiscreteField:
    """G(., pole) for the adjoint operator: the delta source e_pole / h^2
    solved with the transposed matrix.  G for L with the pole in the first
    slot is then G_L(pole, x) = this field at x."""
    y = adjoint_solve(domain, coeff, [int(pole)], settings)[:, 0]
    return DiscreteField(y / domain.h ** 2, domain)


def gradient(domain: GridDomain, u, f=None, coeff=None) -> DiscreteField:
    """Cell gradient by centered differences; one-sided next to the boundary.

    With boundary data ``f`` (sample array or callable), the one-sided
    differences use the Dirichlet node values at their true distances.
    """
    u = np.asarray(getattr(u, "values", u), dtype=float)
    h = domain.h
    cells, index = domain.cells, domain.index
    out = np.zeros((domain.ncells, 2))
    sysm = get_system(domain, coeff) if (f is not None and coeff is not None) else None
    gvals = node_values(domain, sysm, f) if sysm is not None else None
    for axis, (pos, neg) in enumerate((("E", "W"), ("N", "S"))):
        vals, dists = [], []
        for name in (pos, neg):
            e = np.array(DIRS[name])
            nb = cells + e
            ni = index[nb[:, 0], nb[:, 1]]
            v = np.where(ni >= 0, u[np.maximum(ni, 0)], np.nan)
            d = np.full(domain.ncells, h)
            if gvals is not None:
                out_rows = np.flatnonzero(ni < 0)
                if len(out_rows):
                    s, _, _ = _crossings(domain, domain.xy[out_rows], e)
                    P = domain.xy[out_rows] + np.where(np.isfinite(s), s, h)[:, None] * e
                    if callable(f):
                        bv = np.asarray(f(P[:, 0], P[:, 1]), float)
                    else:
                        comp, par = domain.project(P)
                        idx, w = domain.transfer_weights(comp, par)
                        bv = (np.asarray(f)[idx] * w).sum(1)
                    v[out_rows] = bv
                    d[out_rows] = np.where(np.isfinite(s), s, h)
            vals.append(v)
            dists.append(d)
        vp, vn = vals
        dp, dn = dists
        both = np.isfinite(vp) & np.isfinite(vn)
        g = np.zeros(domain.ncells)
        # three-point derivative on nonuniform spacing
        g[both] = ((vp[both] - u[both]) * dn[both] / dp[both] + (u[both] - vn[both]) * dp[both] / dn[both]) \
            / (dp[both] + dn[both])
        onlyp = np.isfinite(vp) & ~both
        onlyn = np.isfinite(vn) & ~both
        g[onlyp] = (vp[onlyp] - u[onlyp]) / dp[onlyp]
        g[onlyn] = (u[onlyn] - vn[onlyn]) / dn[onlyn]
        out[:, axis] = g
    return DiscreteField(out, domain)


def solve_smoke_3d(n: int = 48, tol=1e-10):
    """Seven-point Laplacian on the 3D ball grid with data x + 2y - z.

    Returns (number of unknowns, max error); a shape check only.
    """
    from .domain2d import ball_grid_3d
    h, inside, X = ball_grid_3d(n)
    idx = -np.ones(inside.shape, dtype=np.int64)
    cells = np.argwhere(inside)
    idx[inside] = np.arange(len(cells))
    m = len(cells)
    exact = lambda P: P[..., 0] + 2 * P[..., 1] - P[..., 2]
    rows, cols, vals = [np.arange(m)], [np.arange(m)], [np.full(m, 6.0)]
    rhs = np.zeros(m)
    for ax in range(3):
        for sgn in (1, -1):
            nb = cells.copy()
            nb[:, ax] += sgn
            ok = (nb[:, ax] >= 0) & (nb[:, ax] < n)
            ni = np.full(m, -1)
            ni[ok] = idx[nb[ok, 0], nb[ok, 1], nb[ok, 2]]
            inner = ni >= 0
            rows.append(np.flatnonzero(inner)); cols.append(ni[inner]); vals.append(-np.ones(inner.sum()))
            P = -1 + (nb[~inner] + 0.5) * h
            rhs[~inner] += exact(P)
    K = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, m))
    u, info = spla.cg(K, rhs, rtol=tol, atol=0.0, maxiter=100000)
    err = np.abs(u - exact(X[inside])).max()
    return m, float(err)


def coefficient_from_spec(domain: GridDomain, text: str) -> CoefficientField:
    """``identity``, ``constant(a11,a12,a21,a22,lam)``, ``random(lam,seed)``,
    ``random_sym(lam,seed)`` or ``smooth(lam,seed)``."""
    text = text.strip()
    name, _, rest = text.partition("(")
    args = [float(a) for a in rest.rstrip(")").split(",") if a.strip()] if rest else []
    name = name.strip()
    if name == "identity":
        c = CoefficientField.identity(domain)
    elif name == "constant":
        if len(args) != 5:
            raise ValueError("constant coefficients need a11,a12,a21,a22,lam")
        c = CoefficientField.constant(domain, np.array(args[:4]).reshape(2, 2), args[4])
    elif name in ("random", "random_sym", "smooth"):
        lam = args[0] if args else 0.5
        seed = int(args[1]) if len(args) > 1 else 0
        c = CoefficientField.random(domain, lam, seed, symmetric=name == "random_sym",
                                    smooth=name == "smooth")
    else:
        raise ValueError(f"unknown coefficient field {text!r}")
    c.label = text
    return c
