import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles as O
from roughbvp.domain2d import build_domain
from roughbvp.elliptic import (CoefficientField, EllipticityError, SolverError, SolverSettings, assemble,
                               coefficient_from_spec, elliptic_measure, face_gradient, gradient,
                               green_function, pole_cell, selling_decomposition, solve_dirichlet,
                               solve_poisson, solve_smoke_3d)

disk = build_domain("disk", 1 / 32)
IDENT = CoefficientField.identity(disk)


@pytest.mark.parametrize("kind", ["disk", "sawtooth"])
@pytest.mark.parametrize("name", ["one", "linear", "saddle"])
def test_dirichlet_exact_for_quadratics(kind, name):
    # five-point interior stencil and exact boundary crossings reproduce
    # harmonic polynomials of degree <= 2
    f = {"one": lambda x, y: np.ones_like(x), "linear": lambda x, y: x,
         "saddle": lambda x, y: x * x - y * y}[name]
    d = build_domain(kind, 1 / 32)
    u = solve_dirichlet(d, CoefficientField.identity(d), f).values
    assert np.abs(u - f(*d.xy.T)).max() <= 1e-10


def test_constant_data_rough_coefficients():
    A = CoefficientField.random(disk, 0.5, seed=3)
    u = solve_dirichlet(disk, A, lambda x, y: np.ones_like(x)).values
    assert np.abs(u - 1).max() <= 1e-10


@pytest.mark.parametrize("kind", ["disk", "sawtooth"])
def test_constant_anisotropic_quadratic_data(kind):
    d = build_domain(kind, 1 / 32)
    M = np.array([[1.5, 0.3], [-0.2, 0.8]])
    A = CoefficientField.constant(d, M, 0.5)
    x, y = d.xy.T
    u = solve_dirichlet(d, A, lambda x, y: 2 * x - y).values
    assert np.abs(u - (2 * x - y)).max() <= 1e-10
    # q = x^2 - c y^2 solves the constant equation when a11 = c a22
    c = M[0, 0] / M[1, 1]
    u = solve_dirichlet(d, A, lambda x, y: x * x - c * y * y).values
    assert np.abs(u - (x * x - c * y * y)).max() <= 1e-10


@given(st.floats(0.1, 10), st.floats(0.1, 10), st.floats(0, math.pi))
def test_superbase_reduction(e1, e2, th):
    R = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    S = (R @ np.diag([e1, e2]) @ R.T)[None]
    w, off = selling_decomposition(S)
    assert np.all(w >= 0)
    back = np.einsum("mk,mka,mkb->mab", w, off.astype(float), off.astype(float))
    assert np.allclose(back, S, atol=1e-12 * max(e1, e2))


@pytest.mark.parametrize("spec", ["random(0.1,0)", "smooth(0.1,1)", "random(0.5,2)"])
def test_monotone_matrix(spec, saw64):
    A = coefficient_from_spec(saw64, spec)
    s = assemble(saw64, A)
    K = s.K.tocoo()
    assert K.data[K.row != K.col].max() <= 0
    assert s.B.data.min() >= 0
    rowsum = np.asarray(s.K.sum(1)).ravel() - np.asarray(s.B.sum(1)).ravel()
    assert np.abs(rowsum).max() <= 1e-12 * s.K.diagonal().max()


def test_poisson_radial():
    v = solve_poisson(disk, IDENT, H=np.ones(disk.ncells)).values
    assert np.abs(v - (1 - (disk.xy ** 2).sum(1)) / 4).max() <= 1e-10


def test_poisson_divergence_form_faces():
    r2 = (disk.xy ** 2).sum(1)
    w = np.where(r2 < 0.25, (0.25 - r2) ** 2, 0.0)
    v = solve_poisson(disk, IDENT, Xi=face_gradient(disk, w), location="face").values
    assert np.abs(v - w).max() <= 1e-12


def test_poisson_zero_data():
    assert np.all(solve_poisson(disk, IDENT).values == 0)


def test_measure_matches_disk_kernel():
    d = build_domain("disk", 1 / 64)
    p = pole_cell(d, (0.3, 0.2))
    m = elliptic_measure(d, CoefficientField.identity(d), p)
    assert m.masses.sum() == pytest.approx(1, abs=1e-10)
    th = d.sample_param
    k = O.disk_poisson_kernel(d.xy[p], th) * d.sample_weights
    bins = np.floor(th / (2 * math.pi) * 16).astype(int)
    M, K = np.bincount(bins, m.masses), np.bincount(bins, k)
    assert np.abs(M / K - 1).max() <= 0.02


@pytest.mark.parametrize("lam,seed", [(0.5, 0), (0.5, 1), (0.1, 2)])
def test_measure_rough_coefficients(lam, seed, saw64):
    A = CoefficientField.random(saw64, lam, seed=seed)
    m = elliptic_measure(saw64, A, pole_cell(saw64, (0, 0.6)))
    assert m.masses.sum() == pytest.approx(1, abs=1e-10)
    assert m.masses.min() >= 0
    # the measure reproduces the solution at the pole
    f = np.sin(3 * saw64.samples[:, 0]) + saw64.samples[:, 1]
    u = solve_dirichlet(saw64, A, f).values
    assert float(m.masses @ f) == pytest.approx(u[m.pole], abs=1e-10)


def test_measure_bad_pole():
    with pytest.raises(ValueError):
        elliptic_measure(disk, IDENT, disk.ncells)


@given(st.integers(0, 10 ** 6))
def test_maximum_principle(seed):
    f = np.random.default_rng(seed).normal(size=disk.nsamples)
    u = solve_dirichlet(disk, IDENT, f).values
    assert u.max() <= f.max() + 1e-10 and u.min() >= f.min() - 1e-10


@given(st.integers(0, 10 ** 6), st.sampled_from([0.1, 0.3, 0.7]))
def test_maximum_principle_rough(seed, lam):
    rng = np.random.default_rng(seed)
    A = CoefficientField.random(disk, lam, seed=seed % 5, smooth=bool(seed % 2))
    f = rng.normal(size=disk.nsamples)
    u = solve_dirichlet(disk, A, f).values
    assert u.max() <= f.max() + 1e-10 and u.min() >= f.min() - 1e-10


@given(st.integers(0, 10 ** 6), st.floats(-3, 3))
def test_linearity(seed, a):
    rng = np.random.default_rng(seed)
    A = CoefficientField.random(disk, 0.5, seed=seed % 7)
    f, g = rng.normal(size=(2, disk.nsamples))
    u = solve_dirichlet(disk, A, a * f + g).values
    v = a * solve_dirichlet(disk, A, f).values + solve_dirichlet(disk, A, g).values
    assert np.allclose(u, v, atol=1e-9)


def test_krylov_agrees_with_direct(saw64):
    A = CoefficientField.random(saw64, 0.5, seed=1)
    f = lambda x, y: 3 * x - 2 * y
    a = solve_dirichlet(saw64, A, f).values
    b = solve_dirichlet(saw64, A, f, SolverSettings(method="krylov")).values
    assert np.abs(a - b).max() <= 1e-7


def test_solver_error_carries_history(saw64):
    A = CoefficientField.random(saw64, 0.5, seed=1)
    with pytest.raises(SolverError) as e:
        solve_dirichlet(saw64, A, lambda x, y: np.sin(5 * x), SolverSettings(method="krylov", maxiter=1))
    assert len(e.value.history) >= 1


def test_ellipticity_checked():
    with pytest.raises(EllipticityError):
        CoefficientField.constant(disk, [[1, 0], [0, 5]], 0.5)
    with pytest.raises(EllipticityError):
        CoefficientField.identity(disk).__class__(np.zeros((disk.ncells, 2, 2)), 0.0)


@pytest.mark.parametrize("spec", ["identity", "random(0.5,2)", "random_sym(0.4,1)", "smooth(0.5,0)",
                                  "constant(1,0,0,1,1)"])
def test_coefficient_specs(spec):
    c = coefficient_from_spec(disk, spec)
    assert c.A.shape == (disk.ncells, 2, 2) and c.label == spec
    if spec.startswith(("random_sym", "identity", "constant")):
        assert c.symmetric


def test_coefficient_spec_errors():
    with pytest.raises(ValueError):
        coefficient_from_spec(disk, "banana")
    with pytest.raises(ValueError):
        coefficient_from_spec(disk, "constant(1,0,0)")


def test_boundary_data_validated():
    with pytest.raises(ValueError):
        solve_dirichlet(disk, IDENT, np.ones(3))
    with pytest.raises(ValueError):
        solve_dirichlet(disk, IDENT, np.full(disk.nsamples, np.nan))


def test_gradient_of_linear(saw64):
    f = lambda x, y: 3 * x - 2 * y
    I = CoefficientField.identity(saw64)
    u = solve_dirichlet(saw64, I, f)
    g = gradient(saw64, u, f=f, coeff=I).values
    assert np.abs(g - [3, -2]).max() <= 1e-9
    inner = saw64.delta > 2 * saw64.h
    assert np.abs(gradient(saw64, u).values[inner] - [3, -2]).max() <= 1e-9


def test_green_function_positive():
    A = CoefficientField.random(disk, 0.5, seed=4)
    G = green_function(disk, A, pole_cell(disk, (0, 0))).values
    assert G.min() > 0
    assert np.argmax(G) == pole_cell(disk, (0, 0))


def test_field_csv(tmp_path):
    u = solve_dirichlet(disk, IDENT, lambda x, y: x)
    u.to_csv(tmp_path / "u.csv")
    data = np.loadtxt(tmp_path / "u.csv", delimiter=",", skiprows=1)
    assert np.array_equal(data[:, 2], u.values)
    u.to_svg(tmp_path / "u.svg")
    assert (tmp_path / "u.svg").read_text().startswith("<svg")


def test_smoke_3d():
    m, err = solve_smoke_3d(24)
    assert m > 1000 and err <= 1e-8
