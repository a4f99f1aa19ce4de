import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from bubbleflow.audit import ChartView, audit, fit_rotation_constant, loj_audit, slope, window_check
from bubbleflow.bubbles import CutoffBubble, cutoff_bubble
from bubbleflow.config import FlowConfig
from bubbleflow.errors import NoConcentration
from bubbleflow.flow import find_concentration, init_flow
from bubbleflow.metric import ConstantProfile
from bubbleflow.sphere import POLE_INF
from bubbleflow.torus import TorusSpec, torus_distance

SPEC = TorusSpec(256)
LAM, B = 32.0, (0.4, 0.55)
ROT = Rotation.from_rotvec([0.3, -0.5, 0.8]).as_matrix()


def rotate(Q, v):
    return np.einsum("ij,j...->i...", Q, v)


@pytest.fixture(scope="module")
def planted():
    v = cutoff_bubble(LAM, B, SPEC)
    exact = CutoffBubble(LAM, B, SPEC.inj).exact_defect()
    return v, exact


@pytest.fixture(scope="module")
def fit(planted):
    v, exact = planted
    return audit(rotate(ROT, v), SPEC, defect=exact)


def test_plant_and_recover(fit):
    assert fit.lam == pytest.approx(LAM, rel=1e-2)
    assert np.max(np.abs(fit.rot - ROT)) < 2e-2
    assert not fit.degenerate_rotation
    np.testing.assert_allclose(fit.p, ROT @ POLE_INF, atol=1e-6)
    assert fit.ratios["ratio4"] == pytest.approx(1.0 / (fit.lam * math.sqrt(fit.defect)))
    for key in ("ratio1", "ratio2", "ratio3", "ratio4"):
        assert 0 < fit.ratios[key] < 10


def test_base_point_recovered(planted):
    v, exact = planted
    c = find_concentration(v, SPEC)
    assert torus_distance(c.b, B) <= SPEC.h


def test_gauge_covariance(planted, fit):
    v, exact = planted
    Q = Rotation.from_rotvec([-1.1, 0.2, 0.4]).as_matrix()
    g = audit(rotate(Q @ ROT, v), SPEC, defect=exact)
    assert g.lam == pytest.approx(fit.lam, rel=1e-12)
    np.testing.assert_allclose(g.rot, Q @ fit.rot, atol=1e-8)
    np.testing.assert_allclose(g.p, Q @ fit.p, atol=1e-10)
    for key in ("ratio1", "ratio2", "ratio3"):
        assert g.ratios[key] == pytest.approx(fit.ratios[key], rel=1e-8)


@pytest.mark.filterwarnings("ignore::bubbleflow.errors.DegenerateCorrelation")
@settings(max_examples=10)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3).filter(lambda q: np.linalg.norm(q) > 0.1))
def test_constant_map_gives_its_value(q):
    q = np.asarray(q) / np.linalg.norm(q)
    spec = TorusSpec(32)
    u = np.broadcast_to(q[:, None, None], (3, 32, 32)).copy()
    _, p, degenerate = fit_rotation_constant(u, ChartView.flat(spec), (0.0, 0.0), 8.0)
    assert degenerate
    np.testing.assert_allclose(p, q, atol=1e-12)


def test_constant_map_has_no_bubble():
    u = np.zeros((3, 32, 32))
    u[0] = 1.0
    with pytest.raises(NoConcentration):
        audit(u, TorusSpec(32))


def test_window(planted):
    v, _ = planted
    view = ChartView.flat(SPEC, B)
    assert window_check(v, view, LAM, 0.1)["ok"]
    bad = window_check(v, view, 3 * LAM, 0.1)
    assert not bad["ok"] and bad["low_margin"] < 0


def test_loj_audit_on_flow_state():
    spec = TorusSpec(128)
    prof = ConstantProfile.for_spec(spec, "desk")
    v = cutoff_bubble(16.0, (0.5, 0.5), spec)
    c = find_concentration(v, spec, prof)
    state = init_flow(v, c.b, c.mu0, prof, spec, FlowConfig(allow_below_mu_star=True))
    G = state.history[0].gradient_norm
    rep = loj_audit(state.u, state.ms, gradient_norm=G)
    assert rep.window["ok"]
    assert rep.status in ("pass", "fail")
    assert rep.defect == pytest.approx(state.defect, rel=1e-6)
    assert rep.ratios["energy"] == pytest.approx(rep.defect / rep.gradient_norm**2)
    assert rep.ratios["lambda_over_mu"] == pytest.approx(1.0, rel=0.1)
    state.ms = state.ms.with_mu(4.0 * c.mu0)
    assert loj_audit(state.u, state.ms, gradient_norm=G).status == "window_violated"


def test_loj_caps_decide_status():
    spec = TorusSpec(128)
    prof = ConstantProfile.for_spec(spec, "desk")
    v = cutoff_bubble(16.0, (0.5, 0.5), spec)
    c = find_concentration(v, spec, prof)
    state = init_flow(v, c.b, c.mu0, prof, spec, FlowConfig(allow_below_mu_star=True))
    tiny = {"loj_energy": 1e-12, "loj_mu": 1e-12, "loj_dist": 1e-12}
    G = state.history[0].gradient_norm
    assert loj_audit(state.u, state.ms, gradient_norm=G, caps=tiny).status == "fail"


@given(st.floats(-3, 3), st.floats(0.1, 10))
def test_slope_of_power_law(k, c):
    x = np.array([1.0, 2.0, 5.0, 11.0])
    s, se = slope(x, c * x**k)
    assert s == pytest.approx(k, abs=1e-9)
    assert se < 1e-8


def test_slope_small_samples():
    s, se = slope([1.0, 4.0], [1.0, 2.0])
    assert s == pytest.approx(0.5) and math.isnan(se)
    assert all(math.isnan(x) for x in slope([1.0], [1.0]))


def test_nonpositive_defect_leaves_ratios_undefined(planted):
    v, _ = planted
    fit = audit(v, SPEC, defect=-1e-3)
    assert all(math.isnan(fit.ratios[k]) for k in ("ratio1", "ratio2", "ratio3", "ratio4"))
    assert fit.lam == pytest.approx(LAM, rel=1e-2)
