import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bubbleflow.errors import OutOfChart
from bubbleflow.torus import TorusSpec, ball_mask, chart_to, torus_distance

coord = st.floats(0.0, 0.999999, allow_nan=False)
point = st.tuples(coord, coord)


def brute_distance(p, q, side=1.0):
    # oracle: minimum over the 9 nearest lattice translates
    d = np.asarray(p, float) - np.asarray(q, float)
    return min(math.hypot(d[0] + i * side, d[1] + j * side) for i, j in itertools.product((-1, 0, 1), repeat=2))


def test_spec_invariants():
    s = TorusSpec(64, 2.0)
    assert s.inj == 1.0 and s.area == 4.0 and s.h == 2.0 / 64
    for bad in (15, 17, 8):
        with pytest.raises(ValueError):
            TorusSpec(bad)


def test_distance_examples():
    assert torus_distance((0.3, 0.7), (0.3, 0.7)) == 0.0
    assert torus_distance((0.1, 0.0), (0.9, 0.0)) == pytest.approx(0.2, abs=1e-15)
    assert torus_distance((0.0, 0.0), (0.5, 0.5)) == pytest.approx(math.sqrt(0.5), abs=1e-15)


@given(point, point)
def test_distance_matches_lattice_oracle(p, q):
    d = torus_distance(p, q)
    assert d == pytest.approx(brute_distance(p, q), abs=1e-12)
    assert d == pytest.approx(torus_distance(q, p), abs=1e-15)
    assert d <= math.sqrt(2) / 2 + 1e-15


@given(point, point, st.integers(-2, 2), st.integers(-2, 2))
def test_distance_periodic(p, q, i, j):
    p2 = (p[0] + i, p[1] + j)
    assert torus_distance(p2, q) == pytest.approx(torus_distance(p, q), abs=1e-12)


def test_chart_examples():
    assert np.all(chart_to((0.2, 0.4), (0.2, 0.4)) == 0.0)
    assert np.allclose(chart_to((0.9, 0.5), (0.1, 0.5)), (0.2, 0.0), atol=1e-15)
    with pytest.raises(OutOfChart):
        chart_to((0.0, 0.0), (0.5, 0.0))


def test_chart_translation_composition(rng):
    # F_{b,a}(x) = x - F_b(a): the chart at a, viewed from b, is a translation
    for _ in range(100):
        a, b = rng.uniform(0, 1, 2), rng.uniform(0, 1, 2)
        a = b + rng.uniform(-0.12, 0.12, 2)
        p = a + rng.uniform(-0.12, 0.12, 2)
        x = chart_to(a, p)
        assert np.allclose(chart_to(b, p), x + chart_to(b, a), atol=1e-12)


@given(point, st.floats(-0.12, 0.12), st.floats(-0.12, 0.12), st.floats(-0.12, 0.12), st.floats(-0.12, 0.12))
def test_chart_isometry(a, dx1, dy1, dx2, dy2):
    p = (a[0] + dx1, a[1] + dy1)
    q = (a[0] + dx2, a[1] + dy2)
    fp, fq = chart_to(a, p), chart_to(a, q)
    assert np.linalg.norm(fp) == pytest.approx(torus_distance(a, p), abs=1e-12)
    assert np.linalg.norm(fp - fq) == pytest.approx(torus_distance(p, q), abs=1e-12)


def test_ball_mask_large_disc():
    s = TorusSpec(256)
    R = 0.5 * 0.999
    w = ball_mask(s, (0.31, 0.77), R)
    assert w.sum() == pytest.approx(math.pi * R * R, rel=0.01)


@pytest.mark.parametrize("frac", [0.3, 0.6, 0.9])
def test_ball_mask_subcell(frac):
    s = TorusSpec(64)
    R = frac * s.h
    areas = [ball_mask(s, (0.5 + dx, 0.5 + dy), R).sum()
             for dx, dy in [(0.0, 0.0), (0.3 * s.h, 0.1 * s.h), (0.5 * s.h, 0.5 * s.h)]]
    for a in areas:
        assert a == pytest.approx(math.pi * R * R, rel=0.10)


def test_ball_mask_periodicity_and_total():
    s = TorusSpec(64)
    w1 = ball_mask(s, (0.2, 0.3), 0.17)
    w2 = ball_mask(s, (1.2, -0.7), 0.17)
    assert np.array_equal(w1, w2)
    assert np.full((s.n, s.n), s.cell_area).sum() == pytest.approx(s.area, abs=1e-14)
    with pytest.raises(ValueError):
        ball_mask(s, (0, 0), 0.0)
    with pytest.raises(ValueError):
        ball_mask(s, (0, 0), 0.51)


def test_bump_quadrature_second_order():
    # int exp(-|x|^2/(2 s^2)) over the torus (s small, so periodic images negligible)
    sig = 0.06
    exact = 2 * math.pi * sig * sig
    errs = []
    for n in (16, 32, 64):
        s = TorusSpec(n)
        dx, dy = s.offsets((0.5 + 0.3 / n, 0.5))
        f = np.exp(-(dx * dx + dy * dy) / (2 * sig * sig))
        errs.append(abs(f.sum() * s.cell_area - exact))
    # the node rule is spectrally accurate on a periodic smooth integrand: at least 2nd order
    assert errs[2] <= errs[0] / 16 or errs[2] < 1e-12


def test_linear_mask_continuous_in_center():
    s = TorusSpec(64)
    c = np.linspace(0.5, 0.5 + s.h, 41)
    sums = np.array([ball_mask(s, (x, 0.5), 0.2, method="linear").sum() for x in c])
    assert np.max(np.abs(np.diff(sums))) < 1e-3 * sums[0]
