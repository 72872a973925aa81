import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from hypercurv import poincare as pc
from hypercurv.poincare import BallPoint, TangentVector

CURVATURES = (1e-4, 1e-2, 1e-1, 1.0)


def mobius_ref(x, y, c):
    """Independent numpy transcription of gyro-addition."""
    xy, x2, y2 = x @ y, x @ x, y @ y
    num = (1 + 2 * c * xy + c * y2) * x + (1 - c * x2) * y
    return num / (1 + 2 * c * xy + c * c * x2 * y2)


def ball_points(dim=3):
    return st.tuples(
        st.sampled_from(CURVATURES),
        arrays(np.float64, dim, elements=st.floats(-1, 1)),
        st.floats(0, 0.95),
    ).map(lambda t: _scale(*t))


def _scale(c, v, r):
    n = np.linalg.norm(v)
    v = v / n * r / math.sqrt(c) if n > 1e-9 else np.zeros_like(v)
    return BallPoint(v, c)


# ------------------------------------------------------------ examples

def test_mobius_left_identity_example():
    y = BallPoint([0.2, 0.3], 1.0)
    assert np.allclose(pc.mobius_add(BallPoint.origin(2, 1.0), y).coords, [0.2, 0.3])


def test_mobius_collinear_example():
    out = pc.mobius_add(BallPoint([0.3, 0.0], 1.0), BallPoint([0.2, 0.0], 1.0)).coords
    assert out[0] == pytest.approx(0.5 / 1.06, abs=1e-12)
    assert out[0] == pytest.approx(0.47169811, abs=1e-8)


def test_mobius_right_inverse_example():
    x = BallPoint([0.3, 0.0], 1.0)
    assert np.allclose(pc.mobius_add(x, -x).coords, 0.0, atol=1e-15)


def test_expmap_zero_vector_returns_base():
    y = BallPoint([0.1, -0.4], 1.0)
    assert pc.expmap(y, TangentVector([0.0, 0.0], y)) == y


def test_expmap_at_origin_example():
    o = BallPoint.origin(2, 1.0)
    out = pc.expmap(o, TangentVector([0.5, 0.0], o)).coords
    assert out == pytest.approx([math.tanh(0.5), 0.0], abs=1e-12)
    assert out[0] == pytest.approx(0.46211716, abs=1e-8)


def test_expmap_euclidean_limit():
    c = 1e-8
    y = BallPoint([0.1, 0.0], c)
    out = pc.expmap(y, TangentVector([0.2, 0.0], y)).coords
    assert np.allclose(out, [0.3, 0.0], atol=1e-6)


def test_expmap0_examples():
    assert np.all(pc.expmap0(np.zeros(3), 0.5).coords == 0)
    assert pc.expmap0([0.5, 0.0], 1.0).coords[0] == pytest.approx(0.46211716, abs=1e-8)
    gap = np.linalg.norm(pc.expmap0([1.0, 0.0], 1.0).coords - np.array([1.0, 0.0]))
    assert gap == pytest.approx(abs(1 - math.tanh(1.0)), abs=1e-12)
    assert gap == pytest.approx(0.23840584, abs=1e-8)


def test_logmap_examples():
    y = BallPoint([0.2, 0.1], 1.0)
    v = pc.logmap(y, y)
    assert np.all(v.coords == 0) and v.base == y
    o = BallPoint.origin(2, 1.0)
    assert np.allclose(pc.logmap(o, pc.expmap0([0.5, 0.0], 1.0)).coords, [0.5, 0.0], atol=1e-10)
    assert np.allclose(pc.logmap(o, BallPoint([0.46211716, 0.0], 1.0)).coords, [0.5, 0.0], atol=1e-8)


def test_logmap0_examples():
    assert np.all(pc.logmap0(BallPoint.origin(3, 1.0)) == 0)
    assert pc.logmap0(BallPoint([0.46211716, 0.0], 1.0))[0] == pytest.approx(0.5, abs=1e-8)
    x = BallPoint([0.5, 0.0], 1.0)
    gap = np.linalg.norm(x.coords - pc.logmap0(x))
    assert gap == pytest.approx(abs(0.5 - math.atanh(0.5)), abs=1e-12)
    assert gap == pytest.approx(0.04930614, abs=1e-8)


def test_distance_examples():
    x = BallPoint([0.1, 0.2], 1.0)
    assert pc.distance(x, x) == 0.0
    d = pc.distance(BallPoint.origin(2, 1.0), BallPoint([0.5, 0.0], 1.0))
    assert d == pytest.approx(2 * math.atanh(0.5), abs=1e-12)
    assert d == pytest.approx(1.09861229, abs=1e-8)


def test_distance_euclidean_limit():
    c = 1e-8
    x, y = np.array([0.1, 0.2]), np.array([-0.3, 0.5])
    assert pc.distance(BallPoint(x, c), BallPoint(y, c)) == pytest.approx(2 * np.linalg.norm(x - y), rel=1e-6)


def test_project_examples():
    assert np.allclose(pc.project_to_ball([0.3, 0.0], 1.0).coords, [0.3, 0.0])
    assert pc.project_to_ball([2.0, 0.0], 1.0).coords[0] == pytest.approx(math.sqrt(1 - 1e-5), abs=1e-12)
    # (5, 0) is interior at c = 0.01 (radius 10) and stays put; the target
    # radius sqrt((1 - 1e-5) / 0.01) is reached from outside
    assert np.allclose(pc.project_to_ball([5.0, 0.0], 0.01).coords, [5.0, 0.0])
    assert pc.project_to_ball([50.0, 0.0], 0.01).coords[0] == pytest.approx(9.99995, abs=1e-6)


def test_clip_examples():
    assert np.allclose(pc.clip_features([0.3, 0.4], 1.0), [0.3, 0.4])
    assert np.allclose(pc.clip_features([3.0, 4.0], 1.0), [0.6, 0.8])
    assert np.all(pc.clip_features([0.0, 0.0], 1.0) == 0)
    with pytest.raises(ValueError):
        pc.clip_features([1.0], 0.0)


# -------------------------------------------------------------- errors

def test_ballpoint_validation():
    with pytest.raises(pc.GeometryError):
        BallPoint([1.0, 0.0], 1.0)
    with pytest.raises(pc.GeometryError):
        BallPoint([0.1], 0.0)
    with pytest.raises(pc.GeometryError):
        BallPoint([np.nan], 1.0)
    with pytest.raises(pc.GeometryError):
        pc.mobius_add(BallPoint([0.1], 1.0), BallPoint([0.1], 0.5))


def test_tangent_vector_validation():
    y = BallPoint([0.1, 0.0], 1.0)
    with pytest.raises(pc.GeometryError):
        TangentVector([1.0], y)
    with pytest.raises(pc.GeometryError):
        pc.expmap(BallPoint([0.2, 0.0], 1.0), TangentVector([0.1, 0.0], y))


# -------------------------------------------------------------- properties

@given(ball_points(), ball_points())
def test_mobius_matches_reference(x, y):
    if x.c != y.c:
        y = BallPoint(y.coords * math.sqrt(y.c / x.c), x.c)
    out = pc.mobius_add(x, y).coords
    ref = mobius_ref(x.coords, y.coords, x.c)
    if x.c * ref @ ref < 1 - 1e-5:
        assert np.allclose(out, ref, rtol=1e-10, atol=1e-12 / math.sqrt(x.c))


@given(ball_points())
def test_left_identity_and_right_inverse(y):
    o = BallPoint.origin(y.dim, y.c)
    assert np.array_equal(pc.mobius_add(o, y).coords, y.coords)
    assert np.linalg.norm(pc.mobius_add(y, -y).coords) <= 1e-12


@given(st.sampled_from(CURVATURES), arrays(np.float64, 3, elements=st.floats(-3, 3)))
def test_round_trip_origin(c, u):
    v = u / math.sqrt(c)
    x = pc.expmap0(v, c)
    assert np.linalg.norm(pc.logmap0(x) - v) <= 1e-8 * (1 + np.linalg.norm(v))


@given(ball_points(), arrays(np.float64, 3, elements=st.floats(-1, 1)))
def test_round_trip_at_base(y, u):
    v = TangentVector(u / math.sqrt(y.c), y)
    x = pc.expmap(y, v)
    if y.c * x.coords @ x.coords < 0.99:
        back = pc.logmap(y, x).coords
        assert np.linalg.norm(back - v.coords) <= 1e-7 * (1 + np.linalg.norm(v.coords))


@given(ball_points(), ball_points(), ball_points())
def test_distance_is_a_metric(x, y, z):
    c = x.c
    y, z = BallPoint(y.coords * math.sqrt(y.c / c), c), BallPoint(z.coords * math.sqrt(z.c / c), c)
    dxy, dyx = pc.distance(x, y), pc.distance(y, x)
    assert dxy >= 0
    assert abs(dxy - dyx) <= 1e-12 * max(1.0, dxy)
    assert pc.distance(x, z) <= dxy + pc.distance(y, z) + 1e-9 * max(1.0, dxy)


@given(st.sampled_from(CURVATURES), arrays(np.float64, 3, elements=st.floats(-1e3, 1e3)))
def test_projection_stays_inside(c, v):
    x = pc.project_to_ball(v, c).coords
    assert c * x @ x <= (1 - pc.BALL_EPS) * (1 + 1e-12)


@given(arrays(np.float64, 3, elements=st.floats(-1, 1)), arrays(np.float64, 3, elements=st.floats(-1, 1)))
def test_euclidean_limits(x, y):
    c = 1e-8
    X, Y = BallPoint(x, c), BallPoint(y, c)
    assert np.linalg.norm(pc.mobius_add(X, Y).coords - (x + y)) <= 1e-5
    assert np.linalg.norm(pc.expmap0(x, c).coords - x) <= 1e-5
    assert np.linalg.norm(pc.logmap0(X) - x) <= 1e-5
