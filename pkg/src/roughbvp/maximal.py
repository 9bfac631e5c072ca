"""Maximal operators, Hajlasz gradients and Poincare constants on finite spaces.

Every supremum over balls is exact: on a finite space a closed ball around
``z`` is a prefix of the points sorted by distance from ``z``, so it is
enough to visit the prefixes that end at a distance jump.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import optimize, sparse

from .mspace import MetricMeasureSpace, TIE_TOL

CERT_TOL = 1e-10
LP_MAX_POINTS = 500


@dataclass
class GradientPair:
    f: np.ndarray
    grad: np.ndarray
    certified: bool
    method: str = ""
    constant: float = float("nan")

    def norm(self, weights, p: float = 1.0) -> float:
        return float((weights * self.grad ** p).sum() ** (1.0 / p))


def _as_values(space, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != (space.n,):
        raise ValueError(f"function has shape {f.shape}, expected ({space.n},)")
    if not np.all(np.isfinite(f)):
        raise ValueError("function values must be finite")
    return f


def _prefix_averages(space, vals):
    """Averages of ``vals`` over every closed ball, -inf at non-closing prefixes."""
    tab = space.table()
    w = space.weights[tab.order]
    num = np.cumsum(w * vals[tab.order], axis=1)
    den = np.cumsum(w, axis=1)
    A = num / den
    return np.where(tab.closes, A, -np.inf)


def _uncentered_from_ball_values(space, V):
    """sup over balls containing x of a per-ball value table ``V[z, k]``."""
    tab = space.table()
    S = np.maximum.accumulate(V[:, ::-1], axis=1)[:, ::-1]
    return np.take_along_axis(S, tab.pos, axis=1).max(axis=0)


def hl_maximal(space: MetricMeasureSpace, f, variant: str = "uncentered", t: float | None = None):
    """Hardy-Littlewood maximal function of ``|f|``.

    variant: ``uncentered``, ``centered`` or ``truncated`` (centered with
    radii ``0 < r < t``).
    """
    f = np.abs(_as_values(space, f))
    A = _prefix_averages(space, f)
    if variant == "uncentered":
        return _uncentered_from_ball_values(space, A)
    if variant == "centered":
        return A.max(axis=1)
    if variant == "truncated":
        if t is None or t <= 0:
            raise ValueError("truncated maximal function needs t > 0")
        tab = space.table()
        ok = tab.dsorted < t
        ok[:, 0] = True
        return np.where(ok, A, -np.inf).max(axis=1)
    raise ValueError(f"unknown variant {variant!r}")


def point_mass_maximal(space: MetricMeasureSpace, z: int) -> np.ndarray:
    """Uncentered maximal function of the unit point mass at ``z``: 1/sigma of
    the lightest ball containing both x and z."""
    tab = space.table()
    cum = np.cumsum(space.weights[tab.order], axis=1)
    n = space.n
    # mass of the smallest closed ball reaching rank k
    closed = np.where(tab.closes, cum, np.inf)
    mclose = np.minimum.accumulate(closed[:, ::-1], axis=1)[:, ::-1]
    k = np.maximum(tab.pos, tab.pos[:, z:z + 1])
    m = np.take_along_axis(mclose, k, axis=1).min(axis=0)
    return 1.0 / m


@njit(cache=True)
def _sharp_kernel(order, dsorted, closes, w, f, rmin):
    n = order.shape[0]
    out = np.zeros(n)
    for x in range(n):
        best = 0.0
        sw = 0.0
        sf = 0.0
        for k in range(n):
            j = order[x, k]
            sw += w[j]
            sf += w[j] * f[j]
            if not closes[x, k] or dsorted[x, k] <= 0.0 or dsorted[x, k] < rmin:
                continue
            m = sf / sw
            dev = 0.0
            for i in range(k + 1):
                jj = order[x, i]
                dev += w[jj] * abs(f[jj] - m)
            v = dev / sw / dsorted[x, k]
            if v > best:
                best = v
        out[x] = best
    return out


def calderon_sharp(space: MetricMeasureSpace, f, rmin: float = 0.0) -> np.ndarray:
    """sup over r of (1/r) times the mean oscillation of f on B(x, r).

    ``rmin`` restricts the supremum to radii at least ``rmin``; the default
    is the full operator.
    """
    f = _as_values(space, f)
    tab = space.table()
    return _sharp_kernel(tab.order, tab.dsorted, tab.closes, space.weights, f, float(rmin))


@njit(cache=True)
def _median_dev_kernel(order, dsorted, closes, w, f):
    """V[z, k] = (1/r) min_c mean |f - c| on each closed ball, -inf elsewhere."""
    n = order.shape[0]
    V = np.full((n, n), -np.inf)
    vals = np.empty(n)
    wts = np.empty(n)
    for z in range(n):
        sw = 0.0
        sf = 0.0
        for k in range(n):
            j = order[z, k]
            sf += w[j] * f[j]
            # insertion into the sorted prefix
            pos = k
            while pos > 0 and vals[pos - 1] > f[j]:
                vals[pos] = vals[pos - 1]
                wts[pos] = wts[pos - 1]
                pos -= 1
            vals[pos] = f[j]
            wts[pos] = w[j]
            sw += w[j]
            if not closes[z, k]:
                continue
            r = dsorted[z, k]
            if r <= 0.0:
                V[z, k] = 0.0
                continue
            # lower weighted median: smallest value whose cumulative mass reaches half
            acc = 0.0
            c = vals[k]
            for i in range(k + 1):
                acc += wts[i]
                if acc >= 0.5 * sw * (1.0 - 1e-14):
                    c = vals[i]
                    break
            dev = 0.0
            for i in range(k + 1):
                dev += wts[i] * abs(vals[i] - c)
            # the mean is also a candidate; summed in the same order as the
            # sharp kernel so that V never exceeds it through rounding
            m = sf / sw
            devm = 0.0
            for i in range(k + 1):
                jj = order[z, i]
                devm += w[jj] * abs(f[jj] - m)
            V[z, k] = min(dev / sw / r, devm / sw / r)
    return V


def grand_maximal_dual(space: MetricMeasureSpace, f, centered: bool = False) -> np.ndarray:
    """sup over balls B containing x of (1/r) min_c mean_B |f - c|.

    The infimum is attained at the lower weighted median.  With
    ``centered=True`` only balls centered at x are used.
    """
    f = _as_values(space, f)
    tab = space.table()
    V = _median_dev_kernel(tab.order, tab.dsorted, tab.closes, space.weights, f)
    if centered:
        return np.maximum(V.max(axis=1), 0.0)
    return np.maximum(_uncentered_from_ball_values(space, V), 0.0)


# -- Hajlasz gradients -------------------------------------------------------

def pair_slopes(space: MetricMeasureSpace, f):
    """Upper-triangle pairs (i, j, |f_i - f_j| / d_ij) with nonzero slope."""
    f = np.asarray(f, dtype=float)
    i, j = np.triu_indices(space.n, k=1)
    s = np.abs(f[i] - f[j]) / space.dist[i, j]
    keep = s > 0
    return i[keep], j[keep], s[keep]


def certify(space: MetricMeasureSpace, f, grad, tol: float = CERT_TOL) -> bool:
    """Exhaustive check of |f(x) - f(y)| <= d(x, y)(g(x) + g(y))."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(grad, dtype=float)
    if np.any(g < 0) or not np.all(np.isfinite(g)):
        return False
    lhs = np.abs(f[:, None] - f[None, :])
    rhs = space.dist * (g[:, None] + g[None, :])
    scale = max(1.0, float(np.abs(f).max()))
    return bool(np.all(lhs <= rhs + tol * scale))


def certify_rows(space, f, grad, rows, tol: float = CERT_TOL) -> bool:
    """Same check restricted to pairs with one point in ``rows``.

    Sufficient when f and grad vanish outside ``rows``.
    """
    rows = np.asarray(rows)
    if rows.size == 0:
        return True
    f = np.asarray(f, dtype=float)
    g = np.asarray(grad, dtype=float)
    lhs = np.abs(f[rows][:, None] - f[None, :])
    rhs = space.dist[rows] * (g[rows][:, None] + g[None, :])
    scale = max(1.0, float(np.abs(f).max()))
    return bool(np.all(lhs <= rhs + tol * scale))


def hajlasz_gradient(space: MetricMeasureSpace, f, p: float = 1.0,
                     method: str = "sharp_surrogate") -> GradientPair:
    """Certified Hajlasz gradient of f.

    ``lp_exact`` solves the linear program minimizing sum sigma_i g_i under
    the pairwise constraints (p = 1, at most 500 points).  ``sharp_surrogate``
    scales the Calderon sharp function by the smallest certifying constant.
    """
    f = _as_values(space, f)
    if method == "lp_exact":
        if p != 1:
            raise ValueError("lp_exact is only defined for p = 1")
        if space.n > LP_MAX_POINTS:
            raise ValueError(f"lp_exact supports at most {LP_MAX_POINTS} points, got {space.n}")
        i, j, s = pair_slopes(space, f)
        if s.size == 0:
            return GradientPair(f, np.zeros(space.n), True, method, 0.0)
        m = s.size
        rows = np.repeat(np.arange(m), 2)
        cols = np.c_[i, j].ravel()
        A = sparse.csr_matrix((-np.ones(2 * m), (rows, cols)), shape=(m, space.n))
        res = optimize.linprog(space.weights, A_ub=A, b_ub=-s, bounds=(0, None), method="highs")
        if res.status != 0:
            raise RuntimeError(f"linear program failed: {res.message}")
        g = np.maximum(res.x, 0.0)
        # lift any solver-level violation so the pair certifies exactly
        viol = np.max(s - g[i] - g[j])
        if viol > 0:
            g = g + viol / 2
        return GradientPair(f, g, certify(space, f, g), method, 1.0)
    if method == "sharp_surrogate":
        lam = calderon_sharp(space, f)
        i, j, s = pair_slopes(space, f)
        if s.size == 0:
            return GradientPair(f, np.zeros(space.n), True, method, 0.0)
        den = lam[i] + lam[j]
        if np.any(den <= 0):
            raise RuntimeError("sharp function vanishes on a pair with distinct values")
        C = float(np.max(s / den))
        g = C * lam
        # guard against rounding in C * lam
        viol = np.max(s - g[i] - g[j])
        if viol > 0:
            C *= 1 + 4 * np.finfo(float).eps
            g = C * lam
        return GradientPair(f, g, certify(space, f, g), method, C)
    raise ValueError(f"unknown method {method!r}")


# -- Poincare ----------------------------------------------------------------

@njit(cache=True)
def _poincare_kernel(order, dsorted, closes, w, f, g, p):
    n = order.shape[0]
    best = 0.0
    for x in range(n):
        sw = 0.0
        sf = 0.0
        sg = 0.0
        for k in range(n):
            j = order[x, k]
            sw += w[j]
            sf += w[j] * f[j]
            sg += w[j] * g[j] ** p
            if not closes[x, k] or dsorted[x, k] <= 0.0:
                continue
            m = sf / sw
            num = 0.0
            for i in range(k + 1):
                jj = order[x, i]
                num += w[jj] * abs(f[jj] - m) ** p
            if num <= 1e-300:
                continue
            den = dsorted[x, k] ** p * sg
            if den <= 0.0:
                return np.inf
            v = num / den
            if v > best:
                best = v
    return best


def poincare_check(space: MetricMeasureSpace, pair: GradientPair, p: float,
                   variant: str = "zero_mean", ball=None) -> float:
    """Smallest constant in the Poincare inequality for the given pair.

    ``zero_mean`` maximizes over every ball; ``compact_support`` uses the
    ball ``(center, radius)`` containing the support of f.
    """
    f = _as_values(space, pair.f)
    g = np.asarray(pair.grad, dtype=float)
    if variant == "zero_mean":
        if p < 1:
            raise ValueError("zero_mean variant needs p >= 1")
        tab = space.table()
        return float(_poincare_kernel(tab.order, tab.dsorted, tab.closes, space.weights, f, g, float(p)))
    if variant == "compact_support":
        if p <= 0:
            raise ValueError("p must be positive")
        c, r = ball
        inside = space.dist[c] <= r + TIE_TOL
        if np.any(f[~inside] != 0):
            raise ValueError("f is not supported in the ball")
        big = space.dist[c] <= space.lam * r + TIE_TOL
        if big.all():
            raise ValueError("lambda*B must not exhaust the space")
        num = float((space.weights[inside] * np.abs(f[inside]) ** p).sum())
        den = r ** p * float((space.weights[big] * g[big] ** p).sum())
        if num == 0:
            return 0.0
        return float("inf") if den == 0 else num / den
    raise ValueError(f"unknown variant {variant!r}")


# -- text IO -----------------------------------------------------------------

def write_function(path, values) -> None:
    with open(path, "w") as fh:
        for i, v in enumerate(np.asarray(values, dtype=float)):
            fh.write(f"{i} {float(v)!r}\n")


def read_function(path, n: int | None = None) -> np.ndarray:
    data = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            tok = raw.split("#", 1)[0].split()
            if not tok:
                continue
            if len(tok) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'id value'")
            data[int(tok[0])] = float(tok[1])
    n = n if n is not None else (max(data) + 1 if data else 0)
    out = np.full(n, np.nan)
    for k, v in data.items():
        out[k] = v
    if np.isnan(out).any():
        raise ValueError(f"{path}: missing values")
    return out
