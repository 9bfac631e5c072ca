"""Calderon-Zygmund and atomic decompositions of Hajlasz-Sobolev functions.

A decomposition at height alpha splits f into a Lipschitz good part and bad
parts localized on the Whitney balls of ``U_alpha``, the superlevel set of the
uncentered maximal function of ``tau^-q |f|^q + g^q``.  ``tau = inf`` means
the ``|f|`` term is dropped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .maximal import GradientPair, certify_rows, hl_maximal
from .mspace import MetricMeasureSpace, TIE_TOL, WhitneyCover, lipschitz_constant, whitney_decompose


def _inv(tau: float) -> float:
    return 0.0 if math.isinf(tau) else 1.0 / tau


def density_function(pair: GradientPair, q: float, tau: float) -> np.ndarray:
    return _inv(tau) ** q * np.abs(pair.f) ** q + pair.grad ** q


@dataclass
class BadPart:
    values: np.ndarray
    grad: np.ndarray
    center: int
    radius: float
    anchor: int
    support: np.ndarray
    certified: bool


@dataclass
class CZDecomposition:
    alpha: float
    q: float
    p: float
    tau: float
    good: np.ndarray
    bad: list
    U: np.ndarray
    cover: WhitneyCover
    constants: dict = field(default_factory=dict)

    def reconstruct(self) -> np.ndarray:
        out = self.good.copy()
        for b in self.bad:
            out += b.values
        return out


class HeightError(ValueError):
    pass


def admissible_height(space: MetricMeasureSpace, pair: GradientPair, p: float, tau: float) -> float:
    """Lower bound for admissible heights using the measured weak (1,1) constant."""
    F = density_function(pair, p, tau)
    mean = float((space.weights * F).sum() / space.total_mass)
    return space.weak11_constant() * mean ** (1.0 / p)


def cz_decompose(space: MetricMeasureSpace, pair: GradientPair, alpha: float, q: float,
                 tau: float = math.inf, p: float | None = None, maximal=None,
                 check_threshold: bool = False) -> CZDecomposition:
    """q-Calderon-Zygmund decomposition of ``pair.f`` at height ``alpha``.

    ``maximal`` may carry a precomputed uncentered maximal function of
    ``tau^-q |f|^q + g^q``.  Raises HeightError when the level set is the
    whole space.
    """
    p = q if p is None else p
    if not (0 < q <= p):
        raise ValueError("need 0 < q <= p")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if not pair.certified:
        raise ValueError("gradient pair is not certified")
    f = np.asarray(pair.f, dtype=float)
    g = np.asarray(pair.grad, dtype=float)
    F = density_function(pair, q, tau)
    MF = hl_maximal(space, F, "uncentered") if maximal is None else maximal
    U = np.flatnonzero(MF > alpha ** q)
    consts = {}
    if check_threshold:
        thr = admissible_height(space, pair, p, tau)
        consts["threshold"] = thr
        consts["near_threshold"] = bool(alpha < 1.1 * thr)
    if U.size == space.n:
        raise HeightError(
            f"height too low: U_alpha = X at alpha={alpha:.6g}; the decomposition needs "
            f"alpha^p > C_X^p * mean(tau^-p |f|^p + |grad f|^p)")
    cover = whitney_decompose(space, U)
    inU = np.zeros(space.n, dtype=bool)
    inU[U] = True
    good = np.where(inU, 0.0, f)
    bad = []
    lam = space.lam
    for i, (c, r) in enumerate(zip(cover.centers, cover.radii)):
        big = np.flatnonzero((space.dist[c] <= lam * r + TIE_TOL) & ~inU)
        anchor = int(big[np.argmin(F[big])])
        phi = cover.pou[i]
        supp = np.flatnonzero(phi > 0)
        good[supp] += f[anchor] * phi[supp]
        u = f - f[anchor]
        vals = np.zeros(space.n)
        vals[supp] = u[supp] * phi[supp]
        grad = np.zeros(space.n)
        # Leibniz rule: (g |phi|_inf + Lip(phi) |u|) on the support of phi
        grad[supp] = g[supp] * phi.max() + cover.pou_lip[i] * np.abs(u[supp])
        ok = certify_rows(space, vals, grad, supp)
        bad.append(BadPart(vals, grad, int(c), float(r), anchor, supp, ok))
    dec = CZDecomposition(alpha=alpha, q=q, p=p, tau=tau, good=good, bad=bad, U=U, cover=cover,
                          constants=consts)
    dec.constants.update(measure_cz(space, pair, dec))
    return dec


def measure_cz(space: MetricMeasureSpace, pair: GradientPair, dec: CZDecomposition) -> dict:
    """Measured constants for every property of the decomposition."""
    w = space.weights
    a, q, p, tau = dec.alpha, dec.q, dec.p, dec.tau
    f = np.asarray(pair.f, dtype=float)
    out = {}
    out["reconstruction"] = float(np.abs(dec.reconstruct() - f).max()) if space.n else 0.0
    out["good_sup"] = float(np.abs(dec.good).max())
    out["good_lip"] = lipschitz_constant(space, dec.good) / a
    inU = np.zeros(space.n, dtype=bool)
    inU[dec.U] = True
    out["good_equals_f_off_U"] = bool(np.array_equal(dec.good[~inU], f[~inU]))
    bq, gq, anch = 0.0, 0.0, True
    for b in dec.bad:
        sB = space.mass(space.ball(b.center, b.radius))
        nb = float((w * np.abs(b.values) ** q).sum() ** (1 / q))
        ng = float((w * b.grad ** q).sum() ** (1 / q))
        if not math.isinf(tau):
            bq = max(bq, nb / (tau * a * sB ** (1 / q)))
        gq = max(gq, ng / (a * sB ** (1 / q)))
        x = b.anchor
        anch &= (not inU[x]) and space.dist[b.center, x] <= space.lam * b.radius + TIE_TOL
        anch &= (_inv(tau) * abs(f[x]) <= a * (1 + 1e-12)) and (pair.grad[x] <= a * (1 + 1e-12))
    out["bad_norm"] = bq
    out["bad_grad_norm"] = gq
    out["anchors_ok"] = bool(anch)
    out["bad_certified"] = all(b.certified for b in dec.bad)
    total = float((w * (_inv(tau) ** p * np.abs(f) ** p + pair.grad ** p)).sum())
    mass = sum(space.mass(space.ball(b.center, b.radius)) for b in dec.bad)
    out["ball_mass"] = mass * a ** p / total if total > 0 else 0.0
    out["overlap"] = dec.cover.overlap_bound
    return out


def mcshane_extension(space, f, known, L):
    """Largest-slope-from-below extension: min_y f(y) + L d(x, y)."""
    kn = np.flatnonzero(known)
    return (f[kn][None, :] + L * space.dist[:, kn]).min(axis=1)


def whitney_extension(space, f, known, L):
    """Extension from above: max_y f(y) - L d(x, y)."""
    kn = np.flatnonzero(known)
    return (f[kn][None, :] - L * space.dist[:, kn]).max(axis=1)


def good_from_extension(space: MetricMeasureSpace, dec: CZDecomposition, f, rule: str = "mcshane"):
    """Good function written through a Lipschitz extension F of f off U:
    g = F + sum_i (f(x_i) - F) phi_i."""
    f = np.asarray(f, dtype=float)
    known = np.ones(space.n, dtype=bool)
    known[dec.U] = False
    ext = {"mcshane": mcshane_extension, "whitney": whitney_extension}[rule]
    F = ext(space, f, known, 2 * dec.alpha)
    out = F.copy()
    for i, b in enumerate(dec.bad):
        out += (f[b.anchor] - F) * dec.cover.pou[i]
    return out


# -- atomic decomposition ----------------------------------------------------

@dataclass
class Atom:
    center: int
    radius: float
    support: np.ndarray
    vals: np.ndarray
    grad_sup: float
    tau: float
    p: float
    level: int
    ball_mass: float

    def values(self, n: int) -> np.ndarray:
        out = np.zeros(n)
        out[self.support] = self.vals
        return out

    @property
    def support_ball(self):
        return (self.center, self.radius)


@dataclass
class AtomicDecomposition:
    coefficients: np.ndarray
    atoms: list
    residual_constant: float
    report: dict

    def reconstruct(self, n: int) -> np.ndarray:
        out = np.full(n, self.residual_constant, dtype=float)
        for lam, a in zip(self.coefficients, self.atoms):
            out[a.support] += lam * a.vals
        return out

    def to_text(self) -> str:
        lines = [f"atoms {len(self.atoms)}", f"residual_constant {self.residual_constant!r}"]
        for k, v in sorted(self.report.items()):
            v = float(v) if isinstance(v, (float, np.floating)) else v
            lines.append(f"summary {k} {v!r}")
        for lam, a in zip(self.coefficients, self.atoms):
            lines.append(f"atom level={a.level} center={a.center} radius={float(a.radius)!r} "
                         f"coefficient={float(lam)!r} grad_sup={float(a.grad_sup)!r}")
        return "\n".join(lines) + "\n"


def atom_is_valid(space: MetricMeasureSpace, a: Atom, rtol: float = 1e-9) -> bool:
    """(tau, inf, p)-atom check: support, gradient bound and sup bound."""
    inside = space.dist[a.center, a.support] <= a.radius + TIE_TOL
    if not inside.all():
        return False
    bound = a.ball_mass ** (-1.0 / a.p)
    vals = a.values(space.n)
    if lipschitz_constant(space, vals, a.support) / 2 > bound * (1 + rtol):
        return False
    if a.grad_sup > bound * (1 + rtol):
        return False
    if not math.isinf(a.tau) and np.abs(a.vals).max(initial=0.0) > a.tau * bound * (1 + rtol):
        return False
    return True


def atomic_decompose(space: MetricMeasureSpace, pair: GradientPair, p: float = 1.0,
                     tau: float = math.inf, q: float | None = None) -> AtomicDecomposition:
    """(tau, inf, p)-atomic decomposition through CZ splittings at heights 2^j.

    With ``g^j`` the good part at height 2^j (``g^j = 0`` below the lowest
    admissible height and ``g^j = f`` above the maximal function) the pieces
    ``(g^{j+1} - g^j) phi_i^j`` become atoms after normalization by
    ``C 2^j sigma(B)^{1/p}``, C the smallest constant that makes every piece
    an atom.
    """
    if not (0 < p <= 1):
        raise ValueError("need 0 < p <= 1")
    if not pair.certified:
        raise ValueError("gradient pair is not certified")
    q = p / 2 if q is None else q
    n = space.n
    f = np.asarray(pair.f, dtype=float)
    w = space.weights
    F = density_function(pair, q, tau)
    MF = hl_maximal(space, F, "uncentered")
    norm_p = float((w * (_inv(tau) ** p * np.abs(f) ** p + pair.grad ** p)).sum())
    report = {"q": q, "p": p, "tau": tau}
    if MF.max() <= 0:
        # zero seminorm: f is constant (and zero when tau is finite)
        res = float(f[0]) if math.isinf(tau) else 0.0
        report.update(sum_coeff_p=0.0, ratio=0.0, normalization=0.0, reconstruction=0.0, levels=0)
        return AtomicDecomposition(np.zeros(0), [], res, report)
    # heights 2^j with U_j = {MF > 2^{jq}} strictly between X and the empty set
    j_top = math.ceil(math.log2(MF.max()) / q)
    while (2.0 ** j_top) ** q < MF.max():
        j_top += 1
    j_low = math.floor(math.log2(MF.min()) / q) if MF.min() > 0 else j_top - 60
    while j_low > j_top - 200 and (2.0 ** j_low) ** q >= MF.min():
        j_low -= 1
    # j_low: U = X; the first proper decomposition is at j_low + 1
    goods = {}
    covers = {}
    for j in range(j_low + 1, j_top):
        dec = cz_decompose(space, pair, 2.0 ** j, q, tau, p, maximal=MF)
        goods[j] = dec.good
        covers[j] = dec.cover
    goods[j_top] = f.copy()
    pieces = []   # (level, center, radius, support, vals)
    start = j_low + 1
    bottom = goods[start]
    residual = 0.0
    if math.isinf(tau):
        residual = float((w * bottom).sum() / space.total_mass)
        bottom = bottom - residual
    if np.abs(bottom).max() > 0:
        c = int(np.argmax(space.dist.max(axis=1) == space.dist.max(axis=1).min()))
        supp = np.arange(n)
        pieces.append((j_low, c, float(space.dist[c].max()), supp, bottom.copy()))
    for j in range(start, j_top):
        lj = goods[j + 1] - goods[j]
        cov = covers[j]
        for i in range(len(cov.centers)):
            phi = cov.pou[i]
            supp = np.flatnonzero(phi > 0)
            vals = lj[supp] * phi[supp]
            if np.all(vals == 0):
                continue
            pieces.append((j, int(cov.centers[i]), float(cov.radii[i]), supp, vals))
    # smallest normalization constant
    C = 0.0
    info = []
    for (j, c, r, supp, vals) in pieces:
        full = np.zeros(n)
        full[supp] = vals
        L = lipschitz_constant(space, full, supp)
        sup = float(np.abs(vals).max())
        need = L / 2 / 2.0 ** j
        if not math.isinf(tau):
            need = max(need, sup / (tau * 2.0 ** j))
        C = max(C, need)
        info.append((L, sup))
    C *= 1 + 1e-12
    atoms, coeffs = [], []
    for (j, c, r, supp, vals), (L, sup) in zip(pieces, info):
        sB = space.mass(space.ball(c, r))
        mu = C * 2.0 ** j * sB ** (1.0 / p)
        a = Atom(center=c, radius=r, support=supp, vals=vals / mu, grad_sup=L / 2 / mu, tau=tau,
                 p=p, level=j, ball_mass=sB)
        atoms.append(a)
        coeffs.append(mu)
    coeffs = np.array(coeffs)
    dec = AtomicDecomposition(coeffs, atoms, residual, report)
    err = float(np.abs(dec.reconstruct(n) - f).max())
    s = float((coeffs ** p).sum())
    report.update(sum_coeff_p=s, ratio=s / norm_p if norm_p > 0 else 0.0, normalization=C,
                  reconstruction=err, levels=j_top - start, j_low=j_low, j_top=j_top)
    return dec


# -- interpolation -----------------------------------------------------------

@dataclass
class BoundReport:
    a: float
    b: float
    t: float
    tau: float
    endpoint_a: float
    endpoint_b: float
    direct: float
    layer_cake: float
    per_sample: list


def _lp(w, v, t):
    if math.isinf(t):
        return float(np.abs(v).max())
    return float((w * np.abs(v) ** t).sum() ** (1.0 / t))


def _weak(w, v, a):
    v = np.abs(v)
    if math.isinf(a):
        return float(v.max())
    o = np.argsort(-v)
    cum = np.cumsum(w[o])
    return float(np.max(v[o] * cum ** (1.0 / a)))


def sobolev_norm(space, pair, t, tau):
    return _inv(tau) * _lp(space.weights, pair.f, t) + _lp(space.weights, pair.grad, t)


def interpolation_harness(space: MetricMeasureSpace, op: Callable, samples: Sequence[GradientPair],
                          a: float, b: float, t: float, tau: float = math.inf,
                          target_weights=None, kappa_steps: int = 24) -> BoundReport:
    """Layer-cake check of an intermediate bound for a sublinear operator.

    For each sample f and each kappa on a dyadic grid the function is split
    at height kappa by an a-CZ decomposition, ``f = g + b``, and the bound
    ``sigma{|Tf| > kappa} <= sigma{|Tg| > kappa/2} + sigma{|Tb| > kappa/2}``
    is summed into an upper Riemann sum for ``||Tf||_t^t``.  The report
    carries the measured endpoint constants (weak type at ``a``, strong at
    ``b``), the directly measured ratio and the layer-cake ratio.
    """
    if not (0 < a < t < b):
        raise ValueError("need 0 < a < t < b")
    wt = None if target_weights is None else np.asarray(target_weights, dtype=float)

    def T(fid, vals):
        try:
            out = np.asarray(op(vals), dtype=float)
        except Exception as exc:
            raise RuntimeError(f"operator failed on sample {fid}: {exc}") from exc
        if not np.all(np.isfinite(out)):
            raise RuntimeError(f"operator returned non-finite values on sample {fid}")
        return out

    Ka, Kb, direct, cake = 0.0, 0.0, 0.0, 0.0
    rows = []
    for fid, pair in enumerate(samples):
        Tf = T(fid, pair.f)
        w = space.weights if wt is None else wt
        Mt = sobolev_norm(space, pair, t, tau)
        if Mt <= 0:
            continue
        Ka = max(Ka, _weak(w, Tf, a) / sobolev_norm(space, pair, a, tau))
        Kb = max(Kb, _lp(w, Tf, b) / sobolev_norm(space, pair, b, tau))
        d = _lp(w, Tf, t) / Mt
        top = float(np.abs(Tf).max())
        if top == 0:
            rows.append({"id": fid, "direct": 0.0, "layer_cake": 0.0})
            continue
        total = float(w.sum())
        kappas = top * 2.0 ** np.arange(-kappa_steps, 1)
        F = density_function(pair, a, tau)
        MF = hl_maximal(space, F, "uncentered")
        bound = kappas[0] ** t * total
        for k0, k1 in zip(kappas[:-1], kappas[1:]):
            try:
                dec = cz_decompose(space, pair, k0, a, tau, a, maximal=MF)
                bsum = dec.reconstruct() - dec.good
                Tg = T(fid, dec.good)
                Tb = T(fid, bsum)
                S = float(w[np.abs(Tg) > k0 / 2].sum() + w[np.abs(Tb) > k0 / 2].sum())
                S = min(S, total)
            except HeightError:
                S = total
            bound += (k1 ** t - k0 ** t) * S
        lc = bound ** (1.0 / t) / Mt
        direct = max(direct, d)
        cake = max(cake, lc)
        rows.append({"id": fid, "direct": d, "layer_cake": lc})
    return BoundReport(a=a, b=b, t=t, tau=tau, endpoint_a=Ka, endpoint_b=Kb, direct=direct,
                       layer_cake=cake, per_sample=rows)
