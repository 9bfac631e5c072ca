import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from roughbvp.domain2d import (KINDS, build_domain, connected_components, corkscrew_check,
                               koch_vertices, parse_domain_spec, points_in_polygon)


def brute_disk_cells(h, R=1.0):
    """Count grid cells of the padded box whose center is inside and farther than h/2 from the circle."""
    n = int(math.ceil(2 * R / h)) + 4
    count = 0
    for i in range(n):
        for j in range(n):
            x = -R - 2 * h + (i + 0.5) * h
            y = -R - 2 * h + (j + 0.5) * h
            r = math.hypot(x, y)
            if r < R and R - r > h / 2:
                count += 1
    return count


@pytest.mark.parametrize("h,frozen", [(1 / 32, 3096), (1 / 64, 12644)])
def test_disk_cell_count(h, frozen):
    assert brute_disk_cells(h) == frozen
    d = build_domain("disk", h)
    assert d.ncells == frozen


def test_disk_area_and_length():
    d = build_domain("disk", 1 / 128)
    assert abs(d.ncells * d.h ** 2 / math.pi - 1) < 0.02
    assert d.sample_weights.sum() == pytest.approx(2 * math.pi, rel=0.05)


def test_halfspace_delta_exact(box32):
    x, y = box32.xy.T
    exact = np.minimum.reduce([y, 2 - y, x + 2, 2 - x])
    assert np.allclose(box32.delta, exact, atol=1e-14)
    assert box32.sample_weights.sum() == pytest.approx(12.0)


def test_disk_delta_exact(disk32):
    assert np.allclose(disk32.delta, 1 - np.linalg.norm(disk32.xy, axis=1), atol=1e-14)
    assert np.all(disk32.delta > disk32.h / 2)


@pytest.mark.parametrize("depth", [0, 1, 2, 3])
def test_koch_length(depth):
    d = build_domain("koch", 1 / 64, depth=depth)
    assert d.sample_weights.sum() == pytest.approx(3 * (4 / 3) ** depth, rel=1e-12)
    assert len(koch_vertices(depth)) == 3 * 4 ** depth


def test_sawtooth_length(saw64):
    assert saw64.sample_weights.sum() == pytest.approx(4 + 8 * math.hypot(0.25, 0.25), rel=1e-12)


def test_cantor_complement_connected():
    d = build_domain("cantor_complement", 1 / 64, depth=2)
    assert connected_components(d) == 1
    assert len(d.components) == 1 + 16


@pytest.mark.parametrize("kind,kw,lo", [("disk", {}, 0.4), ("halfspace_box", {}, 0.4),
                                        ("sawtooth", {}, 0.25), ("slit", {}, 0.35),
                                        ("koch", {"depth": 2}, 0.3)])
def test_corkscrew(kind, kw, lo):
    d = build_domain(kind, 1 / 32, **kw)
    assert connected_components(d) == 1
    c = corkscrew_check(d)
    assert lo <= c <= 1


def test_corkscrew_needs_samples(disk32):
    with pytest.raises(ValueError):
        corkscrew_check(disk32, samples=[])


def test_errors():
    with pytest.raises(ValueError, match="unknown domain kind"):
        build_domain("torus", 0.1)
    with pytest.raises(ValueError, match="too coarse"):
        build_domain("disk", 0.5)
    with pytest.raises(ValueError):
        build_domain("disk", -1.0)
    with pytest.raises(ValueError):
        build_domain("koch", 1 / 32, depth=9)


def test_parse_spec():
    d = parse_domain_spec("kind=sawtooth, h=1/32, L=2")
    assert d.kind == "sawtooth" and d.h == 1 / 32 and d.params["L"] == 2
    with pytest.raises(ValueError):
        parse_domain_spec("h=1/32")
    with pytest.raises(ValueError):
        parse_domain_spec("kind=disk, h")


def test_exports(tmp_path, disk32):
    disk32.export_cells(tmp_path / "c.csv")
    disk32.export_boundary(tmp_path / "b.csv")
    C = np.loadtxt(tmp_path / "c.csv", delimiter=",", skiprows=1)
    B = np.loadtxt(tmp_path / "b.csv", delimiter=",", skiprows=1)
    assert C.shape == (disk32.ncells, 5) and np.array_equal(C[:, 4], disk32.delta)
    assert B.shape == (disk32.nsamples, 4)


def test_project_and_transfer(disk32):
    th = np.linspace(0.1, 6.0, 13)
    P = 0.97 * np.c_[np.cos(th), np.sin(th)]
    comp, par = disk32.project(P)
    assert np.all(comp == 0)
    idx, w = disk32.transfer_weights(comp, par)
    assert np.allclose(w.sum(1), 1) and np.all(w >= 0)
    # linear interpolation of the sample arclength reproduces the parameter
    s = disk32.sample_param
    assert np.allclose((w * s[idx]).sum(1), par, atol=1e-12)


@given(st.floats(-0.9, 0.9), st.floats(-0.9, 0.9))
def test_polygon_test_matches_square(x, y):
    V = np.array([(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)])
    expect = abs(x) < 0.5 and abs(y) < 0.5
    if min(abs(abs(x) - 0.5), abs(abs(y) - 0.5)) < 1e-9:
        return
    assert bool(points_in_polygon([[x, y]], V)[0]) == expect


def test_all_kinds_build():
    for k in KINDS:
        d = build_domain(k, 1 / 32)
        assert d.ncells > 0 and d.nsamples > 0
        assert np.all(d.inside(d.xy))
