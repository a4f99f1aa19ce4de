import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bubbleflow.bubbles import cutoff_bubble
from bubbleflow.errors import DegenerateCorrelation, UnresolvedField
from bubbleflow.sphere import (
    NORTH,
    POLE_INF,
    apply_rotation,
    best_rotation,
    degree,
    normalize,
    rotation_angle,
    rotation_from_axis_angle,
    stereo,
    stereo_grad_norm,
    stereo_jacobian,
    tangent_project,
)
from bubbleflow.torus import TorusSpec

finite = st.floats(-50, 50, allow_nan=False)
unit3 = st.tuples(finite, finite, finite).filter(lambda v: np.linalg.norm(v) > 1e-3).map(
    lambda v: np.asarray(v) / np.linalg.norm(v))
mus = st.floats(0.1, 100.0)


def random_rotation(rng):
    return rotation_from_axis_angle(rng.normal(size=3), rng.uniform(0, math.pi))


def test_stereo_examples():
    assert np.allclose(stereo(np.zeros(2), 7.0), NORTH)
    x = np.array([0.6, 0.8]) / 3.0
    assert abs(stereo(x, 3.0)[2]) < 1e-15
    assert stereo_grad_norm(np.array([1.0, 0.0])) == pytest.approx(math.sqrt(2), rel=1e-15)
    assert np.allclose(stereo(np.array([1e9, 0.0])), POLE_INF, atol=1e-8)


@given(finite, finite, mus)
def test_stereo_unit_and_grad_norm(x0, x1, mu):
    x = np.array([x0, x1])
    assert np.linalg.norm(stereo(x, mu)) == pytest.approx(1.0, abs=1e-12)
    J = stereo_jacobian(x, mu)
    assert np.sqrt(np.sum(J * J)) == pytest.approx(stereo_grad_norm(x, mu), rel=1e-10)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.2, 5.0), st.floats(0, 2 * math.pi))
def test_stereo_conformal_by_finite_differences(x0, x1, mu, ang):
    e1 = np.array([math.cos(ang), math.sin(ang)])
    e2 = np.array([-e1[1], e1[0]])
    x = np.array([x0, x1])
    eps = 1e-6

    def d(e):
        return (stereo(x + eps * e, mu) - stereo(x - eps * e, mu)) / (2 * eps)

    a, b = d(e1), d(e2)
    scale = np.dot(a, a) + 1e-300
    assert abs(np.dot(a, a) - np.dot(b, b)) <= 1e-7 * scale + 1e-10
    assert abs(np.dot(a, b)) <= 1e-7 * scale + 1e-10


@pytest.mark.parametrize("r", [0.3, 1.0, 2.5])
def test_ball_energy_quadrature(r):
    # radial quadrature of 1/2 |grad pi|^2 at step 1e-3 against 4 pi r^2 / (1 + r^2)
    rs = np.arange(0.0, r + 5e-4, 1e-3)
    rs[-1] = r
    dens = 0.5 * stereo_grad_norm(np.stack([rs, 0 * rs])) ** 2 * 2 * math.pi * rs
    E = np.trapezoid(dens, rs)
    assert E == pytest.approx(4 * math.pi * r * r / (1 + r * r), rel=5e-3)
    if r == 1.0:
        assert E == pytest.approx(2 * math.pi, rel=5e-3)


@given(unit3, st.tuples(finite, finite, finite))
def test_tangent_project(u, f):
    f = np.asarray(f)
    p = tangent_project(u[:, None], f[:, None])[:, 0]
    assert abs(np.dot(p, u)) <= 1e-14 * max(1.0, np.linalg.norm(f))
    assert np.allclose(tangent_project(u[:, None], 3.0 * u[:, None]), 0.0, atol=1e-14)


def test_tangent_project_orthogonal_input():
    u = np.array([0.0, 0.0, 1.0])[:, None]
    f = np.array([1.0, -2.0, 0.0])[:, None]
    assert np.array_equal(tangent_project(u, f), f)


def test_normalize():
    v = np.random.default_rng(0).normal(size=(3, 10, 10))
    assert np.allclose(np.linalg.norm(normalize(v), axis=0), 1.0, atol=1e-12)


def test_degree_examples():
    spec = TorusSpec(128)
    const = np.zeros((3, 128, 128))
    const[2] = 1.0
    assert degree(const).value == 0
    u = cutoff_bubble(16.0, (0.5, 0.5), spec)
    d = degree(u)
    assert d.value == 1 and abs(d.raw - 1) < 0.02
    flipped = u[:, ::-1, :]
    assert degree(flipped).value == -1
    R = rotation_from_axis_angle((1.0, 2.0, -0.5), 1.1)
    assert degree(apply_rotation(R, u)).value == 1


@pytest.mark.slow
def test_degree_bubble_512():
    spec = TorusSpec(512)
    assert degree(cutoff_bubble(64.0, (0.5, 0.5), spec)).value == 1


def test_degree_unresolved():
    # white noise is not a resolved field: its Jacobian sum is no integer
    rng = np.random.default_rng(3)
    u = normalize(rng.normal(size=(3, 32, 32)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            d = degree(u)
        except UnresolvedField:
            return
    assert abs(d.raw - d.value) <= 0.2


def test_rotation_identity_and_plant(rng):
    spec = TorusSpec(32)
    u = stereo(np.stack(spec.offsets((0.5, 0.5))), 6.0)
    w = np.full((32, 32), spec.cell_area)
    fit = best_rotation(u, u, w)
    assert np.allclose(fit.rot, np.eye(3), atol=1e-12)
    for _ in range(5):
        R0 = random_rotation(rng)
        fit = best_rotation(u, apply_rotation(R0.T, u), w)
        assert np.allclose(fit.rot, R0, atol=1e-8)
        assert np.linalg.det(fit.rot) == pytest.approx(1.0, abs=1e-10)
        assert np.allclose(fit.rot @ fit.rot.T, np.eye(3), atol=1e-10)


def test_rotation_noise_bounded_by_brute_force(rng):
    # perturbation oracle: a coarse SO(3) grid search lands near the Procrustes fit
    spec = TorusSpec(16)
    u = stereo(np.stack(spec.offsets((0.5, 0.5))), 3.0)
    noise = 1e-2
    t = normalize(u + noise * tangent_project(u, rng.normal(size=u.shape)))
    w = np.ones((16, 16))
    fit = best_rotation(u, t, w)
    assert rotation_angle(fit.rot) <= 5 * noise

    def cost(R):
        return float(np.sum(w * np.sum((u - apply_rotation(R, t)) ** 2, 0)))

    best = min((cost(rotation_from_axis_angle(ax, ang)), ang)
               for ax in [(1, 0, 0), (0, 1, 0), (0, 0, 1), (1, 1, 0), (1, 0, 1), (0, 1, 1)]
               for ang in np.linspace(-0.05, 0.05, 11))
    assert cost(fit.rot) <= best[0] + 1e-12


def test_rotation_degenerate_flag():
    u = np.zeros((3, 4, 4))
    u[2] = 1.0
    with pytest.warns(DegenerateCorrelation):
        fit = best_rotation(u, u, np.ones((4, 4)))
    assert fit.degenerate
    with pytest.raises(ValueError):
        best_rotation(u, u, np.zeros((4, 4)))
