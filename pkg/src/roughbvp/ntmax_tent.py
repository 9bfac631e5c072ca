"""Cones, non-tangential maximal functions, area and Carleson functionals,
and the atomic decomposition of the tent space T^p_2 on a grid domain.

Cones are stored as a sparse table with one row per boundary sample and
one column per interior cell: cell y lies in the cone of aperture a at xi
when |xi - y| < (1 + a) delta(y).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .domain2d import GridDomain, boundary_space
from .maximal import hl_maximal
from .mspace import whitney_decompose, TIE_TOL

DEFAULT_APERTURE = 1.0
DEFAULT_TAU = 0.9


@dataclass
class ConeTable:
    alpha: float
    R: float | None
    M: sp.csr_matrix              # samples x cells, data = |xi - y|

    @property
    def nsamples(self):
        return self.M.shape[0]

    def cone(self, s):
        lo, hi = self.M.indptr[s], self.M.indptr[s + 1]
        return self.M.indices[lo:hi]

    def incidence(self) -> sp.csr_matrix:
        B = self.M.copy()
        B.data = np.ones_like(B.data)
        return B


def cone_table(domain: GridDomain, alpha: float = DEFAULT_APERTURE, R: float | None = None) -> ConeTable:
    if alpha <= 0:
        raise ValueError("aperture must be positive")
    key = ("cone", float(alpha), None if R is None else float(R))
    hit = domain.cache.get(key)
    if hit is not None:
        return hit
    tree = cKDTree(domain.samples)
    reach = (1 + alpha) * domain.delta
    lists = tree.query_ball_point(domain.xy, reach)
    lens = np.fromiter((len(l) for l in lists), dtype=np.int64, count=len(lists))
    cols = np.repeat(np.arange(domain.ncells), lens)
    rows = np.fromiter((i for l in lists for i in l), dtype=np.int64, count=int(lens.sum()))
    d = np.linalg.norm(domain.samples[rows] - domain.xy[cols], axis=1)
    keep = d < reach[cols]
    if R is not None:
        keep &= d < R
    # zero distances cannot occur (cells have delta > h/2); store as is
    M = sp.csr_matrix((d[keep], (rows[keep], cols[keep])), shape=(domain.nsamples, domain.ncells))
    M.sort_indices()
    tab = ConeTable(float(alpha), R, M)
    domain.cache[key] = tab
    return tab


# -- cell ball averages --------------------------------------------------------

@numba.njit(cache=True)
def _ball_avg_kernel(grid, mask, ci, cj, rad, h):
    nx, ny = grid.shape
    # prefix sums along j for each i
    S = np.zeros((nx, ny + 1))
    C = np.zeros((nx, ny + 1))
    for i in range(nx):
        for j in range(ny):
            S[i, j + 1] = S[i, j] + grid[i, j]
            C[i, j + 1] = C[i, j] + mask[i, j]
    m = ci.shape[0]
    out = np.zeros(m)
    for k in range(m):
        r = rad[k] / h * (1 + 1e-12)
        R = int(math.floor(r))
        tot = 0.0
        cnt = 0.0
        for di in range(-R, R + 1):
            i = ci[k] + di
            if i < 0 or i >= nx:
                continue
            w = int(math.floor(math.sqrt(max(r * r - di * di, 0.0))))
            lo = max(cj[k] - w, 0)
            hi = min(cj[k] + w + 1, ny)
            tot += S[i, hi] - S[i, lo]
            cnt += C[i, hi] - C[i, lo]
        out[k] = tot / cnt
    return out


def ball_averages(domain: GridDomain, values, frac: float, q: float = 2.0):
    """(average of |v|^q over interior cells within frac*delta(y) of y)^(1/q)."""
    v = np.asarray(values, dtype=float)
    if v.ndim == 2:
        v = np.linalg.norm(v, axis=1)
    g = np.nan_to_num(domain.grid_field(np.abs(v) ** q, fill=0.0))
    return _ball_avg_kernel(g, domain.interior.astype(np.float64), domain.cells[:, 0],
                            domain.cells[:, 1], frac * domain.delta, domain.h) ** (1.0 / q)


# -- maximal functions and functionals ------------------------------------------

def _row_max(tab: ConeTable, vals, allow_empty=False):
    """Row maxima of vals over the cone table; empty truncated cones give 0."""
    M = tab.M
    out = np.zeros(M.shape[0])
    nz = np.diff(M.indptr) > 0
    if np.any(~nz) and not allow_empty:
        raise ValueError("empty cone at some boundary sample")
    if M.nnz:
        starts = M.indptr[:-1][nz]
        out[nz] = np.maximum.reduceat(vals[M.indices], starts)
    return out


def ntmax(domain: GridDomain, field, alpha: float = DEFAULT_APERTURE, variant: str = "plain",
          R: float | None = None):
    """Non-tangential maximal function on boundary samples.

    variant ``plain`` takes sup |field| over the cone, ``modified`` the sup of
    L2 averages over B(y, delta(y)/4); ``truncated`` is plain restricted to
    |xi - y| < R.  ``modified`` with R given is truncated the same way.
    """
    if alpha <= 0:
        raise ValueError("aperture must be positive")
    v = np.asarray(getattr(field, "values", field), dtype=float)
    if variant == "truncated" and (R is None or R <= 0):
        raise ValueError("truncated variant needs R > 0")
    if R is not None and R <= 0:
        raise ValueError("truncation radius must be positive")
    tab = cone_table(domain, alpha, R)
    if variant in ("plain", "truncated"):
        if v.ndim == 2:
            v = np.linalg.norm(v, axis=1)
        return _row_max(tab, np.abs(v), allow_empty=R is not None)
    if variant == "modified":
        return _row_max(tab, ball_averages(domain, v, 0.25, 2.0), allow_empty=R is not None)
    raise ValueError(f"unknown variant {variant!r}")


def area_functional(domain: GridDomain, g, alpha: float = DEFAULT_APERTURE):
    """(sum over the cone of g(y)^2 h^2 / delta(y)^2)^(1/2)."""
    g = np.asarray(getattr(g, "values", g), dtype=float)
    if g.ndim == 2:
        g = np.linalg.norm(g, axis=1)
    tab = cone_table(domain, alpha)
    w = g * g * domain.h ** 2 / domain.delta ** 2
    return np.sqrt(tab.incidence() @ w)


def carleson_functional(domain: GridDomain, g, q: float = 1.0, return_radius: bool = False):
    """sup over r of r^{-1} sum_{|x - xi| < r} (avg_{B(x, delta/8)} |g|^q)^{1/q} h^2.

    The sup is attained as r decreases to one of the distances |x - xi|
    from above, so it is a max over the sorted distance list.
    """
    if q < 1:
        raise ValueError("q must be at least 1")
    g = np.asarray(getattr(g, "values", g), dtype=float)
    loc = ball_averages(domain, g, 1.0 / 8.0, q) * domain.h ** 2
    out = np.zeros(domain.nsamples)
    arg = np.zeros(domain.nsamples)
    for s in range(domain.nsamples):
        d = np.linalg.norm(domain.xy - domain.samples[s], axis=1)
        o = np.argsort(d, kind="stable")
        ds = d[o]
        cs = np.cumsum(loc[o])
        # group ties: keep the last index of each distinct distance
        last = np.r_[np.diff(ds) > TIE_TOL, True]
        vals = cs[last] / ds[last]
        k = int(np.argmax(vals))
        out[s] = vals[k]
        arg[s] = ds[last][k]
    return (out, arg) if return_radius else out


def tent(domain: GridDomain, O, alpha: float = DEFAULT_APERTURE):
    """Cells of T(O) = Omega minus the union of cones over samples not in O."""
    O = np.asarray(O, dtype=bool)
    tab = cone_table(domain, alpha)
    hits = tab.incidence().T @ (~O).astype(float)
    return hits == 0


def tent_norm(domain: GridDomain, g, p: float, alpha: float = DEFAULT_APERTURE) -> float:
    A = area_functional(domain, g, alpha)
    return float((domain.sample_weights * A ** p).sum() ** (1.0 / p))


# -- tent atoms -----------------------------------------------------------------

@dataclass
class TentAtom:
    center: int                   # boundary sample index
    radius: float                 # support ball radius
    cells: np.ndarray
    values: np.ndarray
    p: float
    sigma: float                  # sigma(B cap boundary)
    generation: int = 0
    is_global: bool = False

    def energy(self, domain: GridDomain) -> float:
        """integral of a^2 dx / delta over the support."""
        return float((self.values ** 2 * domain.h ** 2 / domain.delta[self.cells]).sum())

    def bound(self) -> float:
        return self.sigma ** (1.0 - 2.0 / self.p)

    def full(self, domain: GridDomain):
        out = np.zeros(domain.ncells)
        out[self.cells] = self.values
        return out


def atom_is_valid(domain: GridDomain, a: TentAtom, rtol: float = 1e-9) -> bool:
    d = np.linalg.norm(domain.xy[a.cells] - domain.samples[a.center], axis=1)
    if np.any(d >= a.radius):
        return False
    return a.energy(domain) <= a.bound() * (1 + rtol)


def sigma_ball(domain: GridDomain, center: int, radius: float) -> float:
    d = np.linalg.norm(domain.samples - domain.samples[center], axis=1)
    return float(domain.sample_weights[d < radius].sum())


def random_tent_atom(domain: GridDomain, p: float, rng, radius=None) -> TentAtom:
    """A random function supported in B(xi, R) cap Omega scaled to the bound."""
    diam = float(np.ptp(domain.samples, axis=0).max())
    s = int(rng.integers(domain.nsamples))
    R = radius if radius is not None else float(rng.uniform(8 * domain.h, diam / 3))
    d = np.linalg.norm(domain.xy - domain.samples[s], axis=1)
    cells = np.flatnonzero(d < R)
    vals = rng.normal(size=len(cells))
    a = TentAtom(s, R, cells, vals, p, sigma_ball(domain, s, R))
    a.values = vals * math.sqrt(a.bound() / a.energy(domain))
    return a


def _plain(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


@dataclass
class TentDecomposition:
    coeffs: np.ndarray
    atoms: list
    p: float
    C_enlarge: float
    levels: list
    overlap: dict                 # generation -> max overlap of the regions
    report: dict = field(default_factory=dict)

    def reconstruct(self, domain: GridDomain):
        out = np.zeros(domain.ncells)
        for lam, a in zip(self.coeffs, self.atoms):
            out[a.cells] += lam * a.values
        return out

    def to_text(self) -> str:
        lines = [f"p {self.p}", f"enlargement {float(self.C_enlarge)!r}"]
        for k in self.levels:
            lines.append(f"generation {k} overlap {self.overlap.get(k, 0)}")
            for lam, a in zip(self.coeffs, self.atoms):
                if a.generation == k:
                    lines.append(f"  ball {a.center} {float(a.radius)!r} coeff {float(lam)!r} global {int(a.is_global)}")
        for key, v in self.report.items():
            lines.append(f"{key} {_plain(v)}")
        return "\n".join(lines)


def tent_atomic_decompose(domain: GridDomain, f, p: float = 1.0, alpha: float = DEFAULT_APERTURE,
                          tau: float = DEFAULT_TAU, space=None) -> TentDecomposition:
    """Atomic decomposition of compactly supported cell data in T^p_2.

    Level sets O_k = {A(f) > 2^k} are enlarged to O_k^* = {M(chi_{O_k}) >
    1 - tau} with the centered maximal function and Whitney-covered.  The
    tent layer E_k = T(O_k^*) minus T(O_{k+1}^*) is cut into the regions
    Delta_i = C B_i cap R(B_i) cap E_k, where C is the smallest factor that
    covers every layer; the partition of unity divides by the number of
    regions containing a cell.
    """
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    f = np.asarray(getattr(f, "values", f), dtype=float)
    if not np.any(f):
        return TentDecomposition(np.zeros(0), [], p, 1.0, [], {}, {"sum_coeff_p": 0.0})
    tab = cone_table(domain, alpha)
    inc = tab.incidence()
    A = area_functional(domain, f, alpha)
    space = space or boundary_space(domain)
    supp = np.flatnonzero(f != 0)
    k_top = int(math.floor(math.log2(A.max())))
    while np.any(A > 2.0 ** (k_top + 1)):
        k_top += 1
    while not np.any(A > 2.0 ** k_top):
        k_top -= 1

    def tent_of(O):
        return (inc.T @ (~O).astype(float)) == 0

    Ostar, tents = {}, {}
    k = k_top
    while True:
        O = A > 2.0 ** k
        Ms = hl_maximal(space, O.astype(float), "centered")
        Ostar[k] = Ms > 1 - tau
        tents[k] = tent_of(Ostar[k])
        if Ostar[k].all() or tents[k][supp].all():
            break
        k -= 1
        if k < k_top - 200:
            raise RuntimeError("level sets do not reach the support")
    k_low = k
    levels = list(range(k_low, k_top + 1))
    empty = np.zeros(domain.ncells, dtype=bool)
    covers = {}
    C_need = 1.0
    diam = float(space.diam)
    for k in levels:
        upper = tents[k + 1] if k + 1 in tents else empty
        E = tents[k] & ~upper & (f != 0)
        if not E.any():
            continue
        if Ostar[k].all():
            # whole boundary: one ball, centered to enclose the layer tightly
            far = np.array([np.linalg.norm(domain.xy[E] - x, axis=1).max() for x in domain.samples])
            c = int(np.argmin(far))
            R = float(far[c]) * (1 + 1e-12)
            covers[k] = ("global", c, R, np.flatnonzero(E))
            continue
        W = whitney_decompose(space, np.flatnonzero(Ostar[k]))
        Ecells = np.flatnonzero(E)
        # cells reachable from each ball: some sample of the ball has the cell in its cone
        ball_samples = sp.csr_matrix((np.ones(sum(len(m) for m in W.members)),
                                      (np.repeat(np.arange(len(W)), [len(m) for m in W.members]),
                                       np.concatenate(W.members))), shape=(len(W), domain.nsamples))
        reach = (ball_samples @ inc[:, Ecells]).toarray() > 0          # balls x E-cells
        dxy = np.linalg.norm(domain.xy[Ecells][None, :, :] - domain.samples[W.centers][:, None, :], axis=2)
        factor = np.where(reach, dxy / W.radii[:, None], np.inf)
        best = factor.min(axis=0)
        if not np.all(np.isfinite(best)):
            raise RuntimeError("tent layer cell outside every region")
        C_need = max(C_need, float(best.max()))
        covers[k] = ("whitney", W, Ecells, reach, factor)
    C = C_need * (1 + 1e-9)
    coeffs, atoms, overlap = [], [], {}
    for k in levels:
        if k not in covers:
            continue
        entry = covers[k]
        if entry[0] == "global":
            _, c, R, cells = entry
            regions = [(c, R, cells)]
        else:
            _, W, Ecells, reach, factor = entry
            inside = reach & (factor < C)
            counts = inside.sum(axis=0)
            overlap[k] = int(counts.max())
            regions = []
            for i in range(len(W)):
                sel = np.flatnonzero(inside[i])
                if len(sel) == 0:
                    continue
                cells = Ecells[sel]
                regions.append((int(W.centers[i]), None, cells, counts[sel]))
        for reg in regions:
            if entry[0] == "global":
                c, R, cells = reg
                phi = np.ones(len(cells))
                is_global = True
            else:
                c, _, cells, cnt = reg
                phi = 1.0 / cnt
                is_global = False
                R = float(np.linalg.norm(domain.xy[cells] - domain.samples[c], axis=1).max()) * (1 + 1e-12)
            vals = f[cells] * phi
            mu = float((vals ** 2 * domain.h ** 2 / domain.delta[cells]).sum())
            if mu == 0:
                continue
            sig = sigma_ball(domain, c, R)
            lam = sig ** (1.0 / p - 0.5) * math.sqrt(mu)
            atoms.append(TentAtom(c, R, cells, vals / lam, p, sig, generation=k,
                                  is_global=is_global or R >= diam))
            coeffs.append(lam)
        overlap.setdefault(k, 1)
    coeffs = np.array(coeffs)
    dec = TentDecomposition(coeffs, atoms, p, C, levels, overlap)
    normp = float((domain.sample_weights * A ** p).sum())
    rec = dec.reconstruct(domain)
    dec.report = {
        "sum_coeff_p": float((np.abs(coeffs) ** p).sum()),
        "area_norm_p": normp,
        "ratio": float((np.abs(coeffs) ** p).sum() / normp),
        "reconstruction": float(np.abs(rec - f).max()),
        "n_atoms": len(atoms),
        "n_global": int(sum(a.is_global for a in atoms)),
        "max_overlap": int(max(overlap.values())) if overlap else 0,
    }
    return dec


def atom_area_support_ok(domain: GridDomain, a: TentAtom, alpha: float = DEFAULT_APERTURE) -> bool:
    """The area functional of an atom vanishes outside B(center, 3R)."""
    Aa = area_functional(domain, a.full(domain), alpha)
    d = np.linalg.norm(domain.samples - domain.samples[a.center], axis=1)
    return bool(np.all(Aa[d >= 3 * a.radius] == 0))
