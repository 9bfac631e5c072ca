"""Measured constants for boundary value problems on grid domains.

Every check reports ratios per case and the sup as the measured constant.
Inequalities with unspecified constants are judged by finiteness and by
stability (drift of the sup across scales or resolutions).
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import elliptic as ell
from .domain2d import GridDomain, boundary_space
from .maximal import GradientPair, hajlasz_gradient, hl_maximal
from .mspace import TIE_TOL, lipschitz_constant
from .ntmax_tent import (area_functional, ntmax, random_tent_atom, sigma_ball)

DRIFT_TOL = 2.0


@dataclass
class ExperimentReport:
    experiment: str
    domain: str
    coeff: str
    cases: list = field(default_factory=list)      # dicts with at least 'case' and 'ratio'
    summary: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    runtime: float = 0.0
    notes: list = field(default_factory=list)
    series: dict = field(default_factory=dict)     # plot data, not serialized

    def add(self, case, ratio, **extra):
        rec = {"case": str(case), "ratio": float(ratio)}
        rec.update(extra)
        self.cases.append(rec)

    def ratios(self, excluded=False):
        r = np.array([c["ratio"] for c in self.cases if excluded or not c.get("excluded")], float)
        return r

    def finish(self, t0=None):
        r = self.ratios()
        r = r[np.isfinite(r)] if r.size else r
        if r.size:
            self.summary.setdefault("max", float(r.max()))
            self.summary.setdefault("min", float(r.min()))
            self.summary.setdefault("median", float(np.median(r)))
        self.summary.setdefault("cases", len(self.cases))
        self.flags.setdefault("finite", bool(all(np.isfinite(c["ratio"]) for c in self.cases
                                                 if not c.get("excluded"))))
        if t0 is not None:
            self.runtime = time.perf_counter() - t0
        return self

    @property
    def passed(self) -> bool:
        return all(bool(v) for v in self.flags.values())

    def record_text(self) -> str:
        lines = [f"experiment {self.experiment}", f"domain {self.domain}", f"coeff {self.coeff}"]
        for k in sorted(self.summary):
            lines.append(f"summary {k} {_fmt(self.summary[k])}")
        for k in sorted(self.flags):
            lines.append(f"flag {k} {int(bool(self.flags[k]))}")
        for note in self.notes:
            lines.append(f"note {note}")
        for c in self.cases:
            extras = " ".join(f"{k}={_fmt(v)}" for k, v in c.items() if k not in ("case", "ratio"))
            lines.append(f"case {c['case']} ratio={_fmt(c['ratio'])} {extras}".rstrip())
        return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


# -- shared helpers --------------------------------------------------------------

def bspace(domain: GridDomain):
    sp_ = domain.cache.get("bspace")
    if sp_ is None:
        sp_ = boundary_space(domain)
        domain.cache["bspace"] = sp_
    return sp_


def sample_distances(domain: GridDomain, x0):
    return np.linalg.norm(domain.samples - np.asarray(x0, float), axis=1)


def cell_distances(domain: GridDomain, x0):
    return np.linalg.norm(domain.xy - np.asarray(x0, float), axis=1)


def random_lipschitz(domain: GridDomain, rng, modes: int = 3, scale: float = 3.0):
    """Sum of a few random plane waves evaluated on the boundary samples."""
    return plane_waves(domain.samples, rng, modes, scale)


def plane_waves(P, rng, modes: int = 3, scale: float = 3.0):
    """Seeded smooth random function of position; the draw does not depend on
    how many points it is evaluated at."""
    f = np.zeros(len(P))
    for _ in range(modes):
        k = rng.normal(size=2) * scale
        f += rng.normal() * np.sin(P @ k + rng.uniform(0, 2 * np.pi))
    return f


def boundary_gradient(domain: GridDomain, f, p: float = 1.0) -> GradientPair:
    """Certified Hajlasz gradient on the boundary samples (sharp-function based)."""
    return hajlasz_gradient(bspace(domain), np.asarray(f, float), p, "sharp_surrogate")


def grad_field(domain, coeff, u, f):
    return ell.gradient(domain, u, f, coeff)


def nt_grad(domain, coeff, u, f, alpha=1.0, R=None):
    """Modified non-tangential maximal function of grad u."""
    g = grad_field(domain, coeff, u, f)
    return ntmax(domain, g.values, alpha, "modified", R=R)


def lp_norm(w, v, p):
    return float((w * np.abs(v) ** p).sum() ** (1.0 / p))


def drift(values) -> float:
    v = np.asarray([x for x in values if np.isfinite(x) and x > 0], float)
    if v.size == 0:
        return math.inf
    return float(v.max() / v.min())


def dyadic_scales(domain: GridDomain, kmin=2, kmax=6, min_cells=4):
    """Radii 2^-k that are resolved by at least ``min_cells`` cells."""
    return [2.0 ** -k for k in range(kmin, kmax + 1) if 2.0 ** -k >= min_cells * domain.h]


def ball_centers(domain: GridDomain, count: int, rng):
    """Sample indices at random arclength fractions, so the same seed picks
    nearby boundary points at every resolution."""
    u = np.sort(rng.uniform(size=count))
    return np.unique(np.minimum((u * domain.nsamples).astype(int), domain.nsamples - 1))


def bump(domain: GridDomain, x0, R):
    """Lipschitz bump max(0, 1 - |xi - x0| / R) on the samples."""
    d = sample_distances(domain, x0)
    return np.clip(1 - d / R, 0, None)


# -- regularity constant ---------------------------------------------------------

def regularity_constant(domain: GridDomain, coeff, p: float, dataset, settings=None,
                        alpha: float = 1.0) -> ExperimentReport:
    """||N~(grad u)||_p / ||f||_{M^{1,p}} over a list of boundary data."""
    if p <= 0:
        raise ValueError("p must be positive")
    t0 = time.perf_counter()
    rep = ExperimentReport("regularity_constant", domain.spec_string(), getattr(coeff, "label", ""))
    w = domain.sample_weights
    for k, item in enumerate(dataset):
        pair = item if isinstance(item, GradientPair) else boundary_gradient(domain, item, p)
        f = pair.f
        if np.ptp(f) == 0:
            rep.add(k, math.nan, excluded=True, reason="constant")
            continue
        u = ell.solve_dirichlet(domain, coeff, f, settings)
        N = nt_grad(domain, coeff, u, f, alpha)
        num = lp_norm(w, N, p)
        den = lp_norm(w, pair.grad, p)
        rep.add(k, num / den, nt=num, sobolev=den, certified=pair.certified)
    rep.summary["C_R"] = float(np.nanmax(rep.ratios())) if rep.ratios().size else math.nan
    rep.flags["certified"] = all(c.get("certified", True) for c in rep.cases)
    return rep.finish(t0)


# -- localization ----------------------------------------------------------------

def localization_check(domain: GridDomain, coeff, p: float, balls, variant: str = "vanishing",
                       seed: int = 0, settings=None) -> ExperimentReport:
    """Ratio of the boundary average of N~_{R/2}(grad u)^p over B(x0, R/2)
    to (average of |grad u| over the annulus A(x0, R, 2R))^p.

    ``variant='vanishing'``: data vanish on B(x0, 2R).  ``'augmented'``:
    general Lipschitz data, with the average of |grad_H f|^p over B(x0, 3R)
    added to the right side.  ``'constant'``: globally constant data.
    """
    t0 = time.perf_counter()
    rep = ExperimentReport(f"localization_{variant}", domain.spec_string(), getattr(coeff, "label", ""))
    rng = np.random.default_rng(seed)
    w = domain.sample_weights
    diam = float(bspace(domain).diam)
    per_scale = {}
    for k, (x0, R) in enumerate(balls):
        s = int(np.argmin(sample_distances(domain, x0)))
        x0 = domain.samples[s]
        if 2 * R > diam:
            rep.notes.append(f"ball {s} R={R!r} exceeds the diameter, skipped")
            continue
        ds = sample_distances(domain, x0)
        if variant == "vanishing":
            wave = 1 + 0.5 * np.sin(domain.samples @ rng.normal(size=2) * 2)
            f = np.clip((ds - 2 * R) / R, 0, 1) * wave
        elif variant == "augmented":
            f = random_lipschitz(domain, rng)
        elif variant == "constant":
            f = np.full(domain.nsamples, 1.7)
        else:
            raise ValueError(f"unknown variant {variant!r}")
        u = ell.solve_dirichlet(domain, coeff, f, settings)
        g = grad_field(domain, coeff, u, f)
        N = ntmax(domain, g.values, 1.0, "modified", R=R / 2)
        inner = ds < R / 2
        lhs = float((w[inner] * N[inner] ** p).sum() / w[inner].sum())
        dc = cell_distances(domain, x0)
        ann = (dc >= R) & (dc < 2 * R)
        rhs = float(np.linalg.norm(g.values[ann], axis=1).mean()) ** p if ann.any() else 0.0
        if variant == "augmented":
            pair = boundary_gradient(domain, f, p)
            big = ds < 3 * R
            rhs += float((w[big] * pair.grad[big] ** p).sum() / w[big].sum())
        if variant == "constant":
            # the discrete gradient of constant data is roundoff
            zero = lhs <= (1e-10 * max(1.0, float(np.abs(f).max()))) ** p
            rep.add(k, 0.0 if zero else math.inf, lhs=lhs, rhs=rhs, R=R)
            continue
        ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf)
        rep.add(k, ratio, lhs=lhs, rhs=rhs, R=R, center=int(s))
        per_scale.setdefault(R, []).append(ratio)
    sups = {R: max(v) for R, v in per_scale.items()}
    for R, v in sorted(sups.items()):
        rep.summary[f"sup_R={R!r}"] = v
    rep.summary["scale_drift"] = drift(list(sups.values())) if sups else 1.0
    return rep.finish(t0)


def localization_balls(domain: GridDomain, scales, per_scale: int = 4, seed: int = 0):
    """(center point, R) pairs; centers are boundary samples at seeded arclength fractions."""
    rng = np.random.default_rng(seed)
    return [(domain.samples[s].copy(), float(R)) for R in scales
            for s in ball_centers(domain, per_scale, rng)]


# -- AGMT decay -------------------------------------------------------------------

def agmt_decay(domain: GridDomain, coeff, x0_index: int, R: float, settings=None):
    """Fit of sup |u| over annuli for data supported in B(x0, R).

    Returns (alpha_hat, distances, sups) with log sup |u| ~ -(n - 1 + alpha) log d,
    n = 1 here, so alpha_hat is minus the fitted slope.
    """
    x0 = domain.samples[x0_index]
    f = bump(domain, x0, R)
    u = ell.solve_dirichlet(domain, coeff, f, settings).values
    dc = cell_distances(domain, x0)
    dists, sups = [], []
    k = 1
    while True:
        lo, hi = 2.0 ** k * R, 2.0 ** (k + 1) * R
        sel = (dc >= lo) & (dc < hi)
        if not sel.any():
            break
        dists.append(math.sqrt(lo * hi))
        sups.append(float(np.abs(u[sel]).max()))
        k += 1
    dists, sups = np.array(dists), np.array(sups)
    ok = sups > 0
    if ok.sum() < 2:
        return math.nan, dists, sups
    slope = np.polyfit(np.log(dists[ok]), np.log(sups[ok]), 1)[0]
    return float(-slope), dists, sups


# -- extrapolation with atoms ---------------------------------------------------------

def hajlasz_atom(domain: GridDomain, x0_index: int, R: float, r: float):
    """Lipschitz bump in B(x0, R) scaled so that Lip/2 = sigma(B)^(-1/r)."""
    sig = sigma_ball(domain, x0_index, R)
    f = bump(domain, domain.samples[x0_index], R)
    # Lipschitz constant of the bump in the ambient metric is 1/R
    c = sig ** (-1.0 / r) * 2 * R
    return c * f, sig


def check_hajlasz_atom(domain: GridDomain, f, x0_index: int, R: float, r: float, rtol=1e-9) -> bool:
    """Support in B(x0, R) and constant Hajlasz gradient Lip/2 <= sigma(B)^(-1/r)."""
    f = np.asarray(f, float)
    ds = sample_distances(domain, domain.samples[x0_index])
    if np.any(f[ds >= R] != 0):
        return False
    if not np.any(f):
        return True
    lip = lipschitz_constant(bspace(domain), f)
    return lip / 2 <= sigma_ball(domain, x0_index, R) ** (-1.0 / r) * (1 + rtol)


def atom_integral(domain: GridDomain, coeff, f, r: float, settings=None):
    """(integral of N~(grad u)^r over the boundary, N~ values, gradient field)."""
    f = np.asarray(f, float)
    if not np.any(f):
        return 0.0, np.zeros(domain.nsamples), None
    u = ell.solve_dirichlet(domain, coeff, f, settings)
    g = grad_field(domain, coeff, u, f)
    N = ntmax(domain, g.values, 1.0, "modified")
    return float((domain.sample_weights * N ** r).sum()), N, g


def atom_extrapolation_check(domain: GridDomain, coeff, r: float = 1.0, scales=None,
                             per_scale: int = 4, seed: int = 0, apertures=(1.0, 2.0, 4.0),
                             atoms=None, settings=None) -> ExperimentReport:
    """Per-atom integral of N~(grad u)^r, annulus decay fit and the good-lambda display.

    ``atoms`` optionally lists (f, center index, R); invalid atoms raise ValueError.
    """
    t0 = time.perf_counter()
    rep = ExperimentReport("atom_extrapolation", domain.spec_string(), getattr(coeff, "label", ""))
    if r <= 0:
        raise ValueError("r must be positive")
    rng = np.random.default_rng(seed)
    w = domain.sample_weights
    if atoms is None:
        scales = scales or dyadic_scales(domain, 2, 4)
        atoms = []
        for R in scales:
            for s in ball_centers(domain, per_scale, rng):
                atoms.append((hajlasz_atom(domain, int(s), R, r)[0], int(s), R))
    else:
        for k, (f, s, R) in enumerate(atoms):
            if not check_hajlasz_atom(domain, f, s, R, r):
                raise ValueError(f"atom {k} is not a valid Hajlasz atom")
    slopes, alphas = [], []
    gl_cases = []
    for f, s, R in atoms:
        x0 = domain.samples[s]
        total, N, g = atom_integral(domain, coeff, f, r, settings)
        ds = sample_distances(domain, x0)
        near = float((w[ds < 8 * R] * N[ds < 8 * R] ** r).sum())
        # annuli A_k = 2^{k+1} B minus 2^k B, k >= 3
        ks, means = [], []
        k = 3
        while g is not None:
            sel = (ds >= 2.0 ** k * R) & (ds < 2.0 ** (k + 1) * R)
            if not sel.any():
                break
            ks.append(k)
            means.append(float((w[sel] * N[sel]).sum() / w[sel].sum()))
            k += 1
        slope = math.nan
        if len(ks) >= 2 and min(means) > 0:
            slope = float(np.polyfit(np.array(ks) * math.log(2) + math.log(R), np.log(means), 1)[0])
            slopes.append(slope)
        a_hat = math.nan
        if g is not None:
            a_hat, _, _ = agmt_decay(domain, coeff, int(s), R, settings)
            if np.isfinite(a_hat):
                alphas.append(a_hat)
        rep.add(f"R={R!r}:xi={int(s)}", total, near=near, slope=slope, alpha_hat=a_hat, R=R)
        if ks:
            rep.series.setdefault("decay", []).append(
                [(2.0 ** (kk + 0.5) * R, m) for kk, m in zip(ks, means)])
        if g is None:
            continue
        # good-lambda data: lambda bounds M(grad_H f) somewhere in B and
        # N~_a(grad u) somewhere in the ring 2B minus B
        Mg = hl_maximal(bspace(domain), boundary_gradient(domain, f, 1.0).grad, "uncentered")
        for a in apertures:
            Na = N if a == 1.0 else ntmax(domain, g.values, a, "modified")
            for rr in (R, 2 * R):
                b1 = ds < rr
                ring = (ds >= rr) & (ds < 2 * rr)
                b3 = ds < 3 * rr
                if not ring.any():
                    continue
                lam = max(float(Mg[b1].min()), float(Na[ring].min()))
                lhs = float((w[b1] * N[b1]).sum() / w[b1].sum())
                mid = float((w[b3] * N[b3]).sum() / w[b3].sum())
                gl_cases.append((a, lhs, mid, lam))
    totals = rep.ratios()
    rep.summary["max_total"] = float(totals.max()) if totals.size else 0.0
    rep.summary["min_total"] = float(totals.min()) if totals.size else 0.0
    for R in sorted({c["R"] for c in rep.cases}):
        rep.summary[f"max_total_R={R!r}"] = max(c["ratio"] for c in rep.cases if c["R"] == R)
    slope = float(np.median(slopes)) if slopes else math.nan
    a_hat = float(np.median(alphas)) if alphas else math.nan
    n = 1.0
    rep.summary["annulus_slope"] = slope
    rep.summary["alpha_hat"] = a_hat
    rep.summary["predicted_slope"] = -(n + a_hat)
    rel = abs(abs(slope) - (n + a_hat)) / (n + a_hat) if np.isfinite(slope) and np.isfinite(a_hat) else math.inf
    rep.summary["slope_rel_error"] = rel
    # the annulus sum behaves like sum_k 2^{k n (1 - r (n + alpha) / n)}
    thr = n / (n + a_hat) if np.isfinite(a_hat) else math.nan
    rep.summary["r_threshold"] = thr
    rep.summary["r"] = r
    rep.flags["slope_negative"] = bool(np.isfinite(slope) and slope < 0)
    rep.flags["slope_matches_decay"] = bool(rel <= 0.3)
    rep.flags["annulus_sum_convergent"] = bool(np.isfinite(thr) and r > thr)
    if not rep.flags["annulus_sum_convergent"]:
        rep.notes.append("divergent annulus sum: r at or below n/(n+alpha_hat)")
    eta, Cgl = fit_good_lambda(gl_cases)
    rep.summary["good_lambda_eta"] = eta
    rep.summary["good_lambda_C"] = Cgl
    return rep.finish(t0)


def fit_good_lambda(cases, etas=np.linspace(0.0, 2.0, 41)):
    """Fit lhs <= C (a^-eta mid + lam) over the aperture family.

    C(eta) is the smallest constant for a given eta and grows with eta.
    eta_hat is the largest eta with C(eta) <= DRIFT_TOL * C(0); returns
    (eta_hat, C(eta_hat)).
    """
    if not cases:
        return math.nan, math.nan
    a, lhs, mid, lam = (np.array(c, float) for c in zip(*cases))

    def const(eta):
        den = a ** (-eta) * mid + lam
        return float(np.max(lhs / den))

    C0 = const(0.0)
    best = (0.0, C0)
    for eta in etas:
        C = const(eta)
        if C <= DRIFT_TOL * C0:
            best = (float(eta), C)
    return best


# -- weak A-infinity ----------------------------------------------------------------

def random_interior_points(domain: GridDomain, count: int, rng, min_delta=None):
    """Uniform points of the bounding box at distance >= min_delta from the
    boundary (rejection sampling), so a seed gives the same points at every h."""
    min_delta = min_delta if min_delta is not None else max(4 * domain.h, 1.0 / 32)
    lo, hi = geometric_box(domain)
    out = []
    for _ in range(1000):
        P = lo + (hi - lo) * rng.uniform(size=(4 * count, 2))
        P = P[domain.inside(P)]
        P = P[domain.boundary_distance(P) >= min_delta]
        out.extend(P)
        if len(out) >= count:
            break
    return np.array(out[:count]).reshape(-1, 2)


def geometric_box(domain: GridDomain):
    """Bounding box of the boundary components (independent of h)."""
    los, his = [], []
    for c in domain.components:
        if hasattr(c, "radius"):
            los.append(np.asarray(c.center) - c.radius)
            his.append(np.asarray(c.center) + c.radius)
        else:
            los.append(c.vertices.min(axis=0))
            his.append(c.vertices.max(axis=0))
    return np.min(los, axis=0), np.max(his, axis=0)


def _poles(domain: GridDomain, count: int, rng, min_delta=None):
    P = random_interior_points(domain, count, rng, min_delta)
    return np.array([ell.pole_cell(domain, x) for x in P], dtype=int)


def dyadic_arc_sets(domain: GridDomain, inside, rng, count=6):
    """Random unions of consecutive-sample runs inside a boundary ball."""
    idx = np.flatnonzero(inside)
    out = []
    if idx.size == 0:
        return out
    for _ in range(count):
        m = max(1, idx.size // (2 ** int(rng.integers(1, 4))))
        starts = rng.choice(idx.size, size=int(rng.integers(1, 4)), replace=True)
        F = np.zeros(domain.nsamples, dtype=bool)
        for s0 in starts:
            F[idx[s0:s0 + m]] = True
        out.append(F)
    return out


def weak_ainfty_check(domain: GridDomain, coeff, npoles: int = 20, scales=None, seed: int = 0,
                      eta: float = 0.1, Cprime: float = 2.0, settings=None) -> ExperimentReport:
    """Weak-A-infinity fit, weak RH_2 constant, (eta, c0) criterion and the
    truncated maximal integral, all from adjoint solves at a set of poles."""
    t0 = time.perf_counter()
    rep = ExperimentReport("weak_ainfty", domain.spec_string(), getattr(coeff, "label", ""))
    rng = np.random.default_rng(seed)
    w = domain.sample_weights
    space = bspace(domain)
    scales = scales or dyadic_scales(domain, 2, 4, min_cells=8)
    poles = _poles(domain, npoles, rng)
    centers = ball_centers(domain, 12, rng)
    adj = coeff.transpose()
    pairs = []            # (sigma ratio, omega ratio) for the weak-A-infinity fit
    rh_by_scale = {R: 0.0 for R in scales}
    c0 = math.inf
    maxint = []
    for pi, x in enumerate(poles):
        om = ell.elliptic_measure(domain, coeff, int(x), settings).masses
        dens = om / w
        xy = domain.xy[x]
        for s in centers:
            ds = sample_distances(domain, domain.samples[s])
            for R in scales:
                if np.linalg.norm(xy - domain.samples[s]) < 4 * R:
                    continue
                B = ds < R
                B2 = ds < 2 * R
                if om[B2].sum() <= 0:
                    continue
                rh = math.sqrt((w[B] * dens[B] ** 2).sum() / w[B].sum()) / ((w[B2] * dens[B2]).sum() / w[B2].sum())
                rh_by_scale[R] = max(rh_by_scale[R], float(rh))
                for F in dyadic_arc_sets(domain, B, rng, 3):
                    pairs.append((w[F].sum() / w[B].sum(), om[F].sum() / om[B2].sum()))
                # superlevel sets of the density inside B
                for qlev in (0.5, 0.8):
                    thr = np.quantile(dens[B], qlev)
                    F = B & (dens >= thr)
                    if F.any():
                        pairs.append((w[F].sum() / w[B].sum(), om[F].sum() / om[B2].sum()))
        # (eta, c0) criterion with the adjoint measure at pole x
        oma = ell.elliptic_measure(domain, adj, int(x), settings).masses
        xhat = int(np.argmin(sample_distances(domain, xy)))
        dx = float(domain.delta[x])
        Dx = sample_distances(domain, domain.samples[xhat]) < 10 * dx
        # worst F: drop the densest samples while the dropped mass stays within eta
        idx = np.flatnonzero(Dx)
        order = idx[np.argsort(-(oma[idx] / w[idx]), kind="stable")]
        budget = eta * w[Dx].sum()
        dropped = np.cumsum(w[order]) <= budget + TIE_TOL
        F = Dx.copy()
        F[order[dropped]] = False
        c0 = min(c0, float(oma[F].sum()))
        # truncated centered maximal integral over Delta_x
        Mt = hl_maximal(space, oma / w, "truncated", t=dx / Cprime)
        maxint.append(float((w[Dx] * Mt[Dx]).sum()))
        rep.add(f"pole={int(x)}", maxint[-1], c0_pole=float(oma[F].sum()), delta=dx)
    for R, v in rh_by_scale.items():
        rep.summary[f"rh2_R={R!r}"] = v
    rh_vals = [v for v in rh_by_scale.values() if v > 0]
    rep.summary["rh2"] = max(rh_vals) if rh_vals else math.nan
    rep.summary["rh2_drift"] = drift(rh_vals)
    rep.series["rh_scatter"] = pairs
    theta, C = fit_weak_ainfty(pairs)
    rep.summary["theta"] = theta
    rep.summary["C_weak"] = C
    rep.summary["c0"] = c0
    rep.summary["max_integral"] = max(maxint) if maxint else math.nan
    rep.flags["rh2_finite"] = bool(np.isfinite(rep.summary["rh2"]))
    rep.flags["rh2_stable"] = rep.summary["rh2_drift"] <= DRIFT_TOL
    rep.flags["weak_ainfty_fit"] = bool(theta > 0)
    rep.flags["joint_consistency"] = rep.flags["rh2_finite"] == rep.flags["weak_ainfty_fit"]
    rep.flags["criterion_c0"] = bool(c0 > 0)
    return rep.finish(t0)


def fit_weak_ainfty(pairs, C_cap: float = 10.0, thetas=np.linspace(0.05, 1.0, 20)):
    """Largest theta on the grid with C(theta) = max w/s^theta <= C_cap."""
    if not pairs:
        return 0.0, math.nan
    s, t = (np.array(v, float) for v in zip(*pairs))
    best = (0.0, float(t.max()))
    for th in thetas:
        C = float((t / s ** th).max())
        if C <= C_cap:
            best = (float(th), C)
    return best


# -- Bourgain and Green bounds ---------------------------------------------------------

def bourgain_check(domain: GridDomain, coeff, scales=None, ncenters=8, seed=0, settings=None):
    """min over (xi, r) and x in B(xi, r) of omega^x(B(xi, 2r)), one solve per ball."""
    rng = np.random.default_rng(seed)
    scales = scales or dyadic_scales(domain, 1, 4)
    rep = ExperimentReport("bourgain", domain.spec_string(), getattr(coeff, "label", ""))
    t0 = time.perf_counter()
    for s in ball_centers(domain, ncenters, rng):
        ds = sample_distances(domain, domain.samples[s])
        dc = cell_distances(domain, domain.samples[s])
        for r in scales:
            sel = dc < r
            if not sel.any():
                continue
            u = ell.solve_dirichlet(domain, coeff, (ds < 2 * r).astype(float), settings).values
            rep.add(f"xi={int(s)}:r={r!r}", float(u[sel].min()), r=r)
    rep.summary["c"] = float(rep.ratios().min())
    rep.flags["positive"] = rep.summary["c"] > 0
    return rep.finish(t0)


def green_bound_check(domain: GridDomain, coeff, scales=None, npoles=6, ncenters=6, seed=0,
                      settings=None):
    """max over x in B of G(x, y) / omega^y(4B) for poles y outside 2B (n = 1)."""
    rng = np.random.default_rng(seed)
    scales = scales or dyadic_scales(domain, 2, 4)
    rep = ExperimentReport("green_bound", domain.spec_string(), getattr(coeff, "label", ""))
    t0 = time.perf_counter()
    sysm = ell.get_system(domain, coeff)
    poles = _poles(domain, npoles, rng)
    centers = ball_centers(domain, ncenters, rng)
    for y in poles:
        e = np.zeros(domain.ncells)
        e[y] = 1.0
        G = ell._solve(sysm, e, settings or ell.SolverSettings()) / domain.h ** 2
        om = ell.elliptic_measure(domain, coeff, int(y), settings).masses
        for s in centers:
            xi = domain.samples[s]
            dc = cell_distances(domain, xi)
            ds = sample_distances(domain, xi)
            for r in scales:
                if np.linalg.norm(domain.xy[y] - xi) < 2 * r:
                    continue
                B = dc < r
                if not B.any():
                    continue
                m4 = om[ds < 4 * r].sum()
                rep.add(f"y={int(y)}:xi={int(s)}:r={r!r}", float(G[B].max() / m4) if m4 > 0 else math.inf)
    rep.summary["C"] = float(rep.ratios().max()) if rep.cases else math.nan
    return rep.finish(t0)


# -- auxiliary inequalities -----------------------------------------------------------

AUX_TARGETS = ("llogl", "nt_reverse_holder", "reverse_regularity", "decay")


def aux_inequality_checks(target: str, domain: GridDomain, coeff=None, params=None,
                          settings=None) -> ExperimentReport:
    params = dict(params or {})
    seed = int(params.get("seed", 0))
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    rep = ExperimentReport(f"aux_{target}", domain.spec_string(), getattr(coeff, "label", "") if coeff else "")
    w = domain.sample_weights
    if target == "llogl":
        space = bspace(domain)
        count = int(params.get("count", 20))
        for k in range(count):
            s = int(ball_centers(domain, 1, rng)[0])
            R = float(rng.uniform(4 * domain.h, space.diam / 2))
            ds = sample_distances(domain, domain.samples[s])
            B = ds < R
            f = np.abs(random_lipschitz(domain, rng)) ** 2 + rng.exponential(size=domain.nsamples) * (rng.uniform() < 0.5)
            mode = params.get("E", "random")
            if mode == "ball" or k == 0:
                E = B.copy()
            else:
                sets = dyadic_arc_sets(domain, B, rng, 1)
                E = sets[0] if sets else B.copy()
            Mc = hl_maximal(space, np.where(B, f, 0.0), "centered")
            lhs = float((w[E] * f[E]).sum())
            rhs = float((w[B] * Mc[B]).sum()) / math.log(1 + w[B].sum() / w[E].sum())
            rep.add(k, lhs / rhs, full_ball=bool(E.sum() == B.sum()))
    elif target == "nt_reverse_holder":
        p = float(params.get("p", 1.5))
        if not 1 <= p < 2:
            raise ValueError("nt reverse Holder needs 1 <= p < 1 + 1/n = 2")
        count = int(params.get("count", 20))
        apertures = params.get("apertures", (1.0, 2.0, 4.0))
        fields = []
        for k in range(count):
            v = plane_waves(domain.xy, rng, 4, 6.0) * np.exp(-rng.uniform(0, 3) * domain.delta)
            fields.append(v)
        balls = [(int(s), float(R)) for R in dyadic_scales(domain, 2, 4)
                 for s in ball_centers(domain, 3, rng)]
        best = {}
        for a in apertures:
            sup = 0.0
            for k, v in enumerate(fields):
                Nv = ntmax(domain, v, a, "modified")
                for s, R in balls:
                    x0 = domain.samples[s]
                    dc = cell_distances(domain, x0)
                    ds = sample_distances(domain, x0)
                    B = dc < R
                    B2 = ds < 2 * R
                    if not B.any():
                        continue
                    lhs = float((np.abs(v[B]) ** p).mean())
                    rhs = float((w[B2] * Nv[B2]).sum() / w[B2].sum()) ** p
                    ratio = lhs / rhs
                    sup = max(sup, ratio)
                    rep.add(f"a={a!r}:v={k}:xi={s}:R={R!r}", ratio, aperture=a)
            best[a] = sup
            rep.summary[f"sup_aperture={a!r}"] = sup
        rep.summary["p"] = p
        # the smallest aperture whose constant is within DRIFT_TOL of the widest one
        widest = best[max(best)]
        passing = [a for a in sorted(best) if best[a] <= DRIFT_TOL * widest]
        rep.summary["smallest_passing_aperture"] = passing[0] if passing else math.nan
    elif target == "reverse_regularity":
        count = int(params.get("count", 10))
        space = bspace(domain)
        for k in range(count):
            f = random_lipschitz(domain, rng)
            pair = hajlasz_gradient(space, f, 1.0, "lp_exact" if space.n <= 500 else "sharp_surrogate")
            u = ell.solve_dirichlet(domain, coeff, f, settings)
            N = nt_grad(domain, coeff, u, f)
            rep.add(k, float((w * pair.grad).sum()) / float((w * N).sum()), method=pair.method)
    elif target == "decay":
        R = float(params.get("R", 1.0 / 16))
        count = int(params.get("count", 4))
        for s in ball_centers(domain, count, rng):
            a, d, sups = agmt_decay(domain, coeff, int(s), R, settings)
            rep.add(f"xi={int(s)}", a, annuli=len(d))
        vals = rep.ratios()
        rep.summary["alpha_hat"] = float(np.median(vals)) if vals.size else math.nan
        rep.flags["positive_exponent"] = bool(np.all(vals > 0))
    else:
        raise ValueError(f"unknown target {target!r}; choose from {AUX_TARGETS}")
    return rep.finish(t0)


# -- Poisson regularity ------------------------------------------------------------------

def random_poisson_data(domain: GridDomain, rng, radius=None):
    """Smooth random (H, Xi) cut off to a disc away from the boundary."""
    c = random_interior_points(domain, 1, rng, max(6 * domain.h, 0.1))[0]
    rad = radius or float(rng.uniform(0.05, 0.25))
    dc = cell_distances(domain, c)
    m = (dc < rad) & (domain.delta > 2 * domain.h)
    H = np.where(m, plane_waves(domain.xy, rng, 3, 6.0), 0.0)
    Xi = np.where(m[:, None], np.c_[plane_waves(domain.xy, rng, 3, 6.0),
                                     plane_waves(domain.xy, rng, 3, 6.0)], 0.0)
    return H, Xi


def poisson_regularity_experiment(domain: GridDomain, coeff, p: float = 2.0, count: int = 10,
                                  r: float = 1.0, seed: int = 0, settings=None) -> ExperimentReport:
    if not 0 < p <= 2:
        raise ValueError("p must lie in (0, 2]")
    t0 = time.perf_counter()
    rep = ExperimentReport("poisson_regularity", domain.spec_string(), getattr(coeff, "label", ""))
    rng = np.random.default_rng(seed)
    w = domain.sample_weights
    zero = lambda x, y: np.zeros_like(x)

    def nt_of(v):
        g = ell.gradient(domain, v, zero, coeff)
        return ntmax(domain, g.values, 1.0, "modified"), g

    # (a) modified Poisson regularity constant
    pr = []
    for k in range(count):
        H, Xi = random_poisson_data(domain, rng)
        v = ell.solve_poisson(domain, coeff, H, Xi, settings=settings)
        N, _ = nt_of(v)
        num = lp_norm(w, N, p)
        den = lp_norm(w, area_functional(domain, domain.delta * H), p) + \
            lp_norm(w, area_functional(domain, np.linalg.norm(Xi, axis=1)), p)
        pr.append(num / den)
        rep.add(f"pr:{k}", num / den, kind="pr")
    rep.summary["C_PR"] = max(pr)
    # (b) tent-atom suite
    totals = []
    for R in dyadic_scales(domain, 2, 4, min_cells=8):
        for k in range(3):
            a = random_tent_atom(domain, r, rng, radius=R)
            d = np.zeros(domain.ncells)
            d[a.cells] = a.values
            # keep the atom away from the boundary band where Xi would not be compactly supported
            d[domain.delta <= 2 * domain.h] = 0.0
            th = rng.uniform(0, 2 * np.pi)
            Xi = np.c_[d * math.cos(th), d * math.sin(th)]
            v = ell.solve_poisson(domain, coeff, np.zeros(domain.ncells), Xi, settings=settings)
            N, _ = nt_of(v)
            tot = float((w * N ** r).sum())
            totals.append(tot)
            rep.add(f"atom:R={R!r}:{k}", tot, kind="atom", R=R)
    rep.summary["atom_max"] = max(totals)
    rep.summary["atom_min"] = min(totals)
    # (c) localization with data outside B(x0, 2R)
    loc = []
    for R in dyadic_scales(domain, 2, 4, min_cells=8):
        for s in ball_centers(domain, 3, rng):
            x0 = domain.samples[s]
            dc = cell_distances(domain, x0)
            ds = sample_distances(domain, x0)
            H, Xi = random_poisson_data(domain, rng, radius=0.3)
            keep = dc >= 2 * R
            H = np.where(keep, H, 0.0)
            Xi = np.where(keep[:, None], Xi, 0.0)
            if not np.any(H):
                continue
            v = ell.solve_poisson(domain, coeff, H, Xi, settings=settings)
            g = ell.gradient(domain, v, zero, coeff)
            N = ntmax(domain, g.values, 1.0, "modified", R=R / 2)
            inner = ds < R / 2
            lhs = float((w[inner] * N[inner]).sum() / w[inner].sum())
            ann = (dc >= R) & (dc < 2 * R)
            rhs = float(np.linalg.norm(g.values[ann], axis=1).mean())
            ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf)
            loc.append(ratio)
            rep.add(f"loc:R={R!r}:xi={int(s)}", ratio, kind="localization", R=R)
    rep.summary["localization_sup"] = max(loc) if loc else math.nan
    # (d) tent-space Dirichlet bound ||delta grad u||_{T^{p'}_2} <= C ||f||_{p'}
    pprime = p / (p - 1) if p > 1 else math.inf
    qd = pprime if np.isfinite(pprime) else 2.0
    td = []
    for k in range(count):
        f = random_lipschitz(domain, rng)
        u = ell.solve_dirichlet(domain, coeff, f, settings)
        g = ell.gradient(domain, u, f, coeff)
        lhs = lp_norm(w, area_functional(domain, domain.delta * np.linalg.norm(g.values, axis=1)), qd)
        td.append(lhs / lp_norm(w, f, qd))
        rep.add(f"tent_dirichlet:{k}", td[-1], kind="tent_dirichlet")
    rep.summary["C_tent_dirichlet"] = max(td)
    rep.summary["tent_dirichlet_exponent"] = qd
    return rep.finish(t0)
