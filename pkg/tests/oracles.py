"""Brute-force reference implementations used only by the tests.

Everything here is written as plain loops over explicit balls, pairs and
cells so it shares no code path with the library.
"""
import math

import numpy as np

TOL = 1e-12


def radii_at(dist, x):
    return np.unique(dist[x])


def ball(dist, x, r):
    return np.flatnonzero(dist[x] <= r + TOL)


def hl_centered(dist, w, f, x, rmax=math.inf):
    best = -math.inf
    for r in radii_at(dist, x):
        if r >= rmax and r > 0:
            continue
        B = ball(dist, x, r)
        best = max(best, float((w[B] * np.abs(f[B])).sum() / w[B].sum()))
    return best


def hl_uncentered(dist, w, f, x):
    best = -math.inf
    n = len(w)
    for z in range(n):
        for r in radii_at(dist, z):
            if dist[z, x] <= r + TOL:
                B = ball(dist, z, r)
                best = max(best, float((w[B] * np.abs(f[B])).sum() / w[B].sum()))
    return best


def sharp(dist, w, f, x):
    best = 0.0
    for r in radii_at(dist, x):
        if r <= 0:
            continue
        B = ball(dist, x, r)
        m = (w[B] * f[B]).sum() / w[B].sum()
        best = max(best, float((w[B] * np.abs(f[B] - m)).sum() / w[B].sum()) / r)
    return best


def min_deviation(wB, fB):
    """min over c of the weighted mean of |f - c|, by trying every value of f
    (the minimum of a convex piecewise linear function sits at a breakpoint)."""
    return min(float((wB * np.abs(fB - c)).sum() / wB.sum()) for c in fB)


def grand_dual_centered(dist, w, f, x):
    best = 0.0
    for r in radii_at(dist, x):
        if r <= 0:
            continue
        B = ball(dist, x, r)
        best = max(best, min_deviation(w[B], f[B]) / r)
    return best


def hajlasz_ok(dist, f, g, tol=1e-10):
    n = len(f)
    scale = max(1.0, float(np.abs(f).max()))
    for i in range(n):
        for j in range(n):
            if abs(f[i] - f[j]) > dist[i, j] * (g[i] + g[j]) + tol * scale:
                return False
    return True


def lipschitz(dist, f):
    best = 0.0
    n = len(f)
    for i in range(n):
        for j in range(i + 1, n):
            if dist[i, j] > 0:
                best = max(best, abs(f[i] - f[j]) / dist[i, j])
    return best


def cantor_corners(depth):
    """Four-corner Cantor squares built from their lower-left corners and sides."""
    squares = [(0.0, 0.0, 1.0)]
    for _ in range(depth):
        nxt = []
        for (x, y, s) in squares:
            t = s / 4
            for dx in (0.0, 3 * t):
                for dy in (0.0, 3 * t):
                    nxt.append((x + dx, y + dy, t))
        squares = nxt
    return np.array([[x + s / 2, y + s / 2] for (x, y, s) in squares])


def min_pair_distance(P):
    best = math.inf
    for i in range(len(P)):
        d = np.sqrt(((P[i + 1:] - P[i]) ** 2).sum(axis=1))
        if d.size:
            best = min(best, float(d.min()))
    return best


def disk_poisson_kernel(x, theta):
    """Density of harmonic measure of the unit disk with respect to arclength."""
    r2 = x[0] ** 2 + x[1] ** 2
    c = np.c_[np.cos(theta), np.sin(theta)]
    return (1 - r2) / (2 * np.pi * ((c - x) ** 2).sum(axis=1))


def rectangle_poisson_kernel(W, H, x0, y0, s, terms=400):
    """Harmonic measure density of the rectangle [-W/2, W/2] x [0, H] on the
    bottom side, by the sine series for the Dirichlet problem."""
    k = np.arange(1, terms + 1)
    X = (s + W / 2)[:, None]
    a = (x0 + W / 2)
    series = np.sin(k * np.pi * X / W) * np.sin(k * np.pi * a / W) * \
        np.sinh(k * np.pi * (H - y0) / W) / np.sinh(k * np.pi * H / W)
    return (2 / W) * series.sum(axis=1)


def in_cone(xi, y, delta_y, alpha):
    return math.dist(xi, y) < (1 + alpha) * delta_y


def area_functional(xy, delta, h, samples, g, alpha):
    out = np.zeros(len(samples))
    for s, xi in enumerate(samples):
        tot = 0.0
        for k in range(len(xy)):
            if in_cone(xi, xy[k], delta[k], alpha):
                tot += g[k] ** 2 * h ** 2 / delta[k] ** 2
        out[s] = math.sqrt(tot)
    return out


def ntmax_plain(xy, delta, samples, v, alpha):
    out = np.zeros(len(samples))
    for s, xi in enumerate(samples):
        best = 0.0
        for k in range(len(xy)):
            if in_cone(xi, xy[k], delta[k], alpha):
                best = max(best, abs(v[k]))
        out[s] = best
    return out


def carleson_counting(xy, h, xi, weights):
    """sup over r of r^-1 sum_{|x - xi| < r} weight(x) h^2, with r running
    down to each distance from above (so the ball includes that distance)."""
    d = [math.dist(xi, p) for p in xy]
    best = 0.0
    for r in sorted(set(d)):
        tot = sum(w for dk, w in zip(d, weights) if dk <= r)
        best = max(best, tot * h * h / r)
    return best


def lens_area(r, R=1.0):
    """Area of the disk of radius R intersected with a disk of radius r
    centered on its boundary."""
    return (r * r * math.acos(r / (2 * R)) + R * R * math.acos(1 - r * r / (2 * R * R))
            - 0.5 * math.sqrt(max(0.0, (2 * R - r) * r * r * (r + 2 * R))))


def tent_cells(xy, delta, samples, O, alpha):
    """Cells not in the cone of any sample outside O."""
    out = np.ones(len(xy), dtype=bool)
    for k in range(len(xy)):
        for s, xi in enumerate(samples):
            if not O[s] and in_cone(xi, xy[k], delta[k], alpha):
                out[k] = False
                break
    return out
