import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles as O
from conftest import smooth_on
from roughbvp.maximal import hajlasz_gradient, hl_maximal
from roughbvp.mspace import build_space
from roughbvp.sobolev_decomp import (HeightError, atom_is_valid, atomic_decompose, cz_decompose,
                                     density_function, good_from_extension, interpolation_harness)


def spike_bump(space):
    t = np.arange(space.n) / space.n
    f = np.exp(-((t - 0.5) / 0.1) ** 2)
    f[space.n // 3] += 1.0
    return f


def test_constant_gives_empty_level_set(circle64):
    pr = hajlasz_gradient(circle64, np.full(64, 0.3), 1.0, "lp_exact")
    dec = cz_decompose(circle64, pr, alpha=1.0, q=1.0, tau=1.0)
    assert dec.U.size == 0 and dec.bad == []
    assert np.array_equal(dec.good, pr.f)


def test_height_above_maximal_is_degenerate(circle512):
    t = np.arange(512) / 512
    f = np.exp(-((t - 0.5) / 0.1) ** 2)
    pr = hajlasz_gradient(circle512, f, 1.0, "sharp_surrogate")
    MF = hl_maximal(circle512, density_function(pr, 1.0, 1.0), "uncentered")
    dec = cz_decompose(circle512, pr, alpha=1.01 * MF.max(), q=1.0, tau=1.0)
    assert dec.bad == [] and np.array_equal(dec.good, f)


@pytest.mark.parametrize("q,tau", [(0.5, 1.0), (1.0, 1.0), (0.5, math.inf), (1.0, math.inf)])
def test_spike_at_70th_percentile(circle512, q, tau):
    pr = hajlasz_gradient(circle512, spike_bump(circle512), 1.0, "sharp_surrogate")
    MF = hl_maximal(circle512, density_function(pr, q, tau), "uncentered")
    alpha = float(np.percentile(MF, 70)) ** (1 / q)
    dec = cz_decompose(circle512, pr, alpha, q, tau, p=1.0)
    c = dec.constants
    assert c["reconstruction"] <= 1e-12
    assert c["good_equals_f_off_U"] and c["anchors_ok"] and c["bad_certified"]
    if not math.isinf(tau):
        assert c["good_sup"] <= 50 * tau * alpha
    for key in ("good_lip", "bad_norm", "bad_grad_norm", "ball_mass"):
        assert c[key] <= 50, key
    # the reported Lipschitz constant agrees with a pairwise brute force
    assert c["good_lip"] * alpha == pytest.approx(O.lipschitz(circle512.dist, dec.good), rel=1e-12)
    assert c["overlap"] <= 32


def test_height_too_low(circle64):
    pr = hajlasz_gradient(circle64, np.sin(np.arange(64)), 1.0, "lp_exact")
    with pytest.raises(HeightError, match="height too low"):
        cz_decompose(circle64, pr, 1e-9, 1.0, 1.0)


def test_bad_exponents(circle64):
    pr = hajlasz_gradient(circle64, np.sin(np.arange(64)), 1.0, "lp_exact")
    with pytest.raises(ValueError):
        cz_decompose(circle64, pr, 1.0, q=2.0, tau=1.0, p=1.0)


@given(st.integers(0, 10 ** 6), st.floats(0.2, 0.9))
def test_level_sets_nested(seed, frac):
    s = build_space("circle", 64)
    f = smooth_on(s, np.random.default_rng(seed))
    pr = hajlasz_gradient(s, f, 1.0, "sharp_surrogate")
    MF = hl_maximal(s, density_function(pr, 1.0, math.inf), "uncentered")
    a = float(np.quantile(MF, frac))
    d1 = cz_decompose(s, pr, a, 1.0, maximal=MF)
    d2 = cz_decompose(s, pr, 2 * a, 1.0, maximal=MF)
    assert set(d2.U.tolist()) <= set(d1.U.tolist())


@given(st.integers(0, 10 ** 6))
def test_good_part_independent_of_extension(seed):
    s = build_space("circle", 64)
    f = smooth_on(s, np.random.default_rng(seed))
    pr = hajlasz_gradient(s, f, 1.0, "sharp_surrogate")
    MF = hl_maximal(s, density_function(pr, 1.0, 1.0), "uncentered")
    dec = cz_decompose(s, pr, float(np.median(MF)), 1.0, 1.0, maximal=MF)
    a = good_from_extension(s, dec, f, "mcshane")
    b = good_from_extension(s, dec, f, "whitney")
    assert np.allclose(a, b, atol=1e-12) and np.allclose(a, dec.good, atol=1e-12)


def test_atomic_constant_homogeneous(circle64):
    pr = hajlasz_gradient(circle64, np.full(64, 1.5), 1.0, "lp_exact")
    dec = atomic_decompose(circle64, pr, 1.0, math.inf)
    assert dec.atoms == [] and dec.residual_constant == 1.5


@pytest.mark.parametrize("p,tau", [(1.0, math.inf), (0.7, math.inf), (1.0, 1.0), (0.7, 2.0)])
def test_atomic_reconstruction_and_validity(circle512, p, tau):
    rng = np.random.default_rng(7)
    for _ in range(3):
        f = smooth_on(circle512, rng)
        pr = hajlasz_gradient(circle512, f, 1.0, "sharp_surrogate")
        dec = atomic_decompose(circle512, pr, p, tau)
        assert dec.report["reconstruction"] <= 1e-10
        assert np.abs(dec.reconstruct(512) - f).max() <= 1e-10
        assert all(atom_is_valid(circle512, a) for a in dec.atoms)


def test_single_atom_coefficient_sum(circle512):
    rng = np.random.default_rng(11)
    sums = []
    for _ in range(10):
        c = int(rng.integers(512))
        r = float(rng.uniform(0.02, 0.2))
        d = circle512.dist[c]
        sB = circle512.mass(circle512.ball(c, r))
        # Lipschitz bump with Lip/2 = sigma(B)^-1, an (inf, inf, 1)-atom
        a = np.clip(1 - d / r, 0, None) * 2 * r / sB
        pr = hajlasz_gradient(circle512, a, 1.0, "sharp_surrogate")
        dec = atomic_decompose(circle512, pr, 1.0, math.inf)
        sums.append(dec.report["sum_coeff_p"])
    sums = np.array(sums)
    assert np.all(np.isfinite(sums))
    assert sums.max() / sums.min() <= 10


def test_atomic_report_text(circle64):
    pr = hajlasz_gradient(circle64, np.sin(np.arange(64) / 10), 1.0, "lp_exact")
    txt = atomic_decompose(circle64, pr, 1.0).to_text()
    assert txt.startswith("atoms ") and "np." not in txt


def test_interpolation_identity(circle64):
    rng = np.random.default_rng(0)
    samples = [hajlasz_gradient(circle64, smooth_on(circle64, rng), 1.0, "lp_exact") for _ in range(4)]
    rep = interpolation_harness(circle64, lambda v: v, samples, 1.0, 4.0, 2.0, tau=1.0)
    assert rep.direct <= max(rep.endpoint_a, rep.endpoint_b) + 1e-12


def test_interpolation_maximal_operator(circle512):
    rng = np.random.default_rng(1)
    samples = [hajlasz_gradient(circle512, smooth_on(circle512, rng), 1.0, "sharp_surrogate")
               for _ in range(3)]
    rep = interpolation_harness(circle512, lambda v: hl_maximal(circle512, v), samples,
                                1.0, math.inf, 2.0, tau=1.0, kappa_steps=12)
    assert math.isfinite(rep.layer_cake) and math.isfinite(rep.direct)
    assert rep.direct <= rep.layer_cake * (1 + 1e-9)


def test_interpolation_operator_failure(circle64):
    pr = hajlasz_gradient(circle64, np.sin(np.arange(64.0)), 1.0, "lp_exact")

    def bad(v):
        raise ArithmeticError("boom")

    with pytest.raises(RuntimeError, match="sample 0"):
        interpolation_harness(circle64, bad, [pr], 1.0, 2.0, 1.5)
