import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from betawolff.measure import (Ball, DiscreteMeasure, EmptyMeasureError, MeasureError, ParseError,
                               ball_mass, generate, growth_constant, load_measure, save_measure)


def test_generators_have_unit_mass_and_shape():
    for kind, kw in [("segment", {"N": 10}), ("circle", {"N": 12}), ("cantor4", {"g": 3})]:
        mu = generate(kind, **kw)
        assert mu.points.shape[1] == 2
        assert mu.total_mass == pytest.approx(1.0, rel=1e-12)
    assert generate("cantor4", g=3).size == 64
    assert generate("segment", N=2).points.tolist() == [[0.0, 0.0], [1.0, 0.0]]


def test_lipschitz_graph_slope_bound():
    mu = generate("lipschitz_graph", N=2000, slope_bound=2.0)
    d = np.diff(mu.points, axis=0)
    assert np.max(np.abs(d[:, 1] / d[:, 0])) <= 2.0 + 1e-9


def test_generator_errors():
    with pytest.raises(MeasureError):
        generate("segment")
    with pytest.raises(MeasureError):
        generate("segment", N=0)
    with pytest.raises(MeasureError):
        generate("nope", N=3)
    with pytest.raises(MeasureError):
        generate("cantor4", g=2, ratio=0.7)


def test_validation():
    with pytest.raises(EmptyMeasureError):
        DiscreteMeasure(np.zeros((0, 2)), [], 1)
    with pytest.raises(MeasureError):
        DiscreteMeasure([[0, 0, 0]], [1.0], 1)
    with pytest.raises(MeasureError):
        DiscreteMeasure([[0, 0]], [-1.0], 1)
    with pytest.raises(MeasureError):
        DiscreteMeasure([[0, np.nan]], [1.0], 1)
    with pytest.raises(MeasureError):
        Ball([0, 0], 0.0)


def test_r_min_default_and_singleton():
    mu = generate("segment", N=11)
    assert mu.r_min == pytest.approx(0.1, rel=1e-12)
    single = DiscreteMeasure([[0.0, 0.0]], [2.0], 1)
    assert single.r_min_flagged
    g = growth_constant(single)
    assert g.flagged


def test_ball_mass_closed():
    mu = generate("segment", N=11)
    assert ball_mass(mu, Ball([0.0, 0.0], 0.1)) == pytest.approx(2 / 11)


def test_growth_constant_matches_oracle():
    rng = np.random.default_rng(3)
    for _ in range(5):
        pts = rng.uniform(size=(30, 2))
        w = rng.uniform(0.1, 1, 30)
        mu = DiscreteMeasure(pts, w, 1)
        ref = oracles.growth_constant(pts, w, 1, mu.r_min)
        assert growth_constant(mu).theta0 == pytest.approx(ref, rel=1e-12)


def test_growth_constant_segment_value():
    # the closed ball of radius r_min around an interior atom holds three atoms
    mu = generate("segment", N=1024)
    assert growth_constant(mu).theta0 == pytest.approx(3 * 1023 / 1024, rel=1e-12)


def test_roundtrip_csv_json(tmp_path):
    mu = generate("cantor4", g=2)
    for name in ("m.csv", "m.json"):
        p = tmp_path / name
        save_measure(mu, p)
        back = load_measure(p, 1)
        assert np.array_equal(back.points, mu.points)
        assert np.array_equal(back.weights, mu.weights)
    doc = json.loads((tmp_path / "m.json").read_text())
    assert doc["n"] == 1
    assert load_measure(tmp_path / "m.json").n == 1


def test_parse_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("0,0,1\n0,x,1\n")
    with pytest.raises(ParseError) as exc:
        load_measure(p, 1)
    assert exc.value.line == 2
    p.write_text("0,0\n")
    with pytest.raises(ParseError):
        load_measure(p, 1)
    p.write_text("0,0,0\n")
    with pytest.raises(MeasureError):
        load_measure(p, 1)
    p.write_text("\n")
    with pytest.raises(EmptyMeasureError):
        load_measure(p, 1)
    with pytest.raises(MeasureError):
        load_measure(p)


points = st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1)), min_size=1, max_size=20)


@settings(max_examples=50, deadline=None)
@given(points, st.floats(0.01, 2), st.floats(0.01, 2))
def test_ball_mass_monotone_and_matches_oracle(pts, r1, r2):
    P = np.array(pts)
    w = np.ones(len(P))
    mu = DiscreteMeasure(P, w, 1)
    a, b = sorted((r1, r2))
    c = np.zeros(2)
    ma, mb = ball_mass(mu, Ball(c, a)), ball_mass(mu, Ball(c, b))
    assert ma <= mb
    assert ma == oracles.ball_mass(P, w, c, a)
    got = mu.ball_masses(c[None, :], [b])[0]
    assert got == pytest.approx(mb, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 10), st.floats(-math.pi, math.pi))
def test_growth_constant_similarity(t, ang):
    mu = generate("cantor4", g=2)
    R = np.array([[math.cos(ang), -math.sin(ang)], [math.sin(ang), math.cos(ang)]])
    moved = DiscreteMeasure(mu.points @ R.T * t, mu.weights, 1, mu.r_min * t)
    assert growth_constant(moved).theta0 == pytest.approx(growth_constant(mu).theta0 / t, rel=1e-9)
