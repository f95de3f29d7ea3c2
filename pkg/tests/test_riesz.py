import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from betawolff.lattice import build_lattice
from betawolff.measure import DiscreteMeasure, generate
from betawolff.riesz import (LipschitzError, RieszError, SuppressionProfile, cotlar_report, cube_means,
                             haar_delta, haar_energy, riesz_energy, riesz_field, riesz_field_tree,
                             riesz_kernel, riesz_maximal, riesz_pv_discrete, riesz_truncated,
                             suppressed_field, suppressed_kernel, w_energy)


@pytest.fixture(scope="module")
def rand_mu():
    rng = np.random.default_rng(5)
    return DiscreteMeasure(rng.uniform(size=(40, 2)), rng.uniform(0.2, 1.0, 40), 1)


def test_kernel_values():
    assert np.allclose(riesz_kernel([1.0, 0.0], [0.0, 0.0], 1), [1.0, 0.0])
    assert np.allclose(riesz_kernel([0.0, 2.0], [0.0, 0.0], 1), [0.0, 0.5])
    with pytest.raises(RieszError):
        riesz_kernel([0.0, 0.0], [0.0, 0.0], 1)


def test_field_matches_oracle(rand_mu):
    F = riesz_field(rand_mu).values
    ref = oracles.riesz_field(rand_mu.points, rand_mu.weights, 1)
    assert np.allclose(F, ref, rtol=1e-12, atol=1e-12)
    assert np.allclose(riesz_pv_discrete(rand_mu, 3), ref[3], rtol=1e-12)
    with pytest.raises(RieszError):
        riesz_pv_discrete(rand_mu, 40)


def test_truncated_is_strict(rand_mu):
    x = np.array([0.3, 0.3])
    d = np.sqrt(((rand_mu.points - x) ** 2).sum(axis=1))
    eps = float(np.sort(d)[5])
    ref = oracles.riesz_field(rand_mu.points, rand_mu.weights, 1, [x], eps)[0]
    assert np.allclose(riesz_truncated(rand_mu, x, eps), ref, rtol=1e-12)
    assert riesz_truncated(rand_mu, np.array([x, x]), eps).shape == (2, 2)
    with pytest.raises(RieszError):
        riesz_truncated(rand_mu, x, 0.0)
    with pytest.raises(RieszError):
        riesz_truncated(rand_mu, [0.0, 0.0, 0.0], 0.1)


def test_maximal_matches_oracle(rand_mu):
    x = np.array([0.41, 0.52])
    got = riesz_maximal(rand_mu, x, 0.05)
    ref = oracles.truncated_profile_max(rand_mu.points, rand_mu.weights, 1, x, 0.05)
    assert got == pytest.approx(ref, rel=1e-12)
    with pytest.raises(RieszError):
        riesz_maximal(rand_mu, x, 0)


def test_energy_frozen():
    assert riesz_energy(generate("cantor4", g=3)) == pytest.approx(1.5085491772167021, rel=1e-12)
    assert riesz_energy(generate("circle", N=128)) == pytest.approx(0.2461090087890625, rel=1e-12)


def test_duplicate_atoms_excluded():
    mu = DiscreteMeasure([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]], [1.0, 1.0, 1.0], 1)
    F = riesz_field(mu).values
    assert np.allclose(F[0], [-1.0, 0.0])
    assert np.all(np.isfinite(F))


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 25), st.integers(0, 10 ** 6))
def test_antisymmetry_property(N, seed):
    rng = np.random.default_rng(seed)
    mu = DiscreteMeasure(rng.uniform(size=(N, 2)), rng.uniform(0.1, 1, N), 1)
    F = riesz_field(mu).values
    tot = (mu.weights[:, None] * F).sum(axis=0)
    scale = mu.weights.sum() * mu.weights.max() / mu.r_min
    assert np.abs(tot).max() <= 1e-10 * scale


def test_suppression_profile():
    pts = np.array([[0.0, 0.0], [1.0, 0.0]])
    prof = SuppressionProfile(pts, [0.0, 0.5])
    assert prof.validate()
    assert prof([0.5, 0.0])[0] == pytest.approx(0.5)
    bad = SuppressionProfile(pts, [0.0, 2.0])
    with pytest.raises(LipschitzError) as exc:
        bad.validate()
    assert exc.value.pair in ((0, 1), (1, 0))
    assert exc.value.excess == pytest.approx(1.0)
    with pytest.raises(RieszError):
        SuppressionProfile(pts, [-1.0, 0.0])
    with pytest.raises(RieszError):
        SuppressionProfile(pts, [0.0])


def test_suppressed_kernel_bound_and_zero():
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=(500, 2)), rng.normal(size=(500, 2))
    px, py = rng.uniform(0, 1, 500), rng.uniform(0, 1, 500)
    K = suppressed_kernel(x, y, px, py, 1)
    bound = (((x - y) ** 2).sum(axis=1) + px * py) ** -0.5
    assert np.all(np.sqrt((K ** 2).sum(axis=1)) <= bound * (1 + 1e-12))
    assert np.array_equal(suppressed_kernel(x, y, 0.0, 0.0, 1), riesz_kernel(x, y, 1))
    assert np.all(suppressed_kernel([0.0, 0.0], [0.0, 0.0], 0.0, 0.0, 1) == 0)


def test_suppressed_field_constant_profile(rand_mu):
    prof = SuppressionProfile.constant(rand_mu, 0.0)
    x = np.array([2.0, 2.0])
    assert np.allclose(suppressed_field(rand_mu, x, prof),
                       oracles.riesz_field(rand_mu.points, rand_mu.weights, 1, [x])[0], rtol=1e-12)
    big = SuppressionProfile.constant(rand_mu, 10.0)
    assert np.linalg.norm(suppressed_field(rand_mu, x, big)) < np.linalg.norm(
        suppressed_field(rand_mu, x, prof))


def test_w_energy():
    mu = generate("segment", N=5)
    W, flagged = w_energy(mu, range(5))
    assert not flagged
    assert W == pytest.approx((1 - (0.2 ** 2) * 5) / 1.0)
    assert w_energy(mu, [0]) == (0.0, True)


def test_cotlar_report(rand_mu):
    rows = cotlar_report(rand_mu, [0, 1], 0.05, 1.0)
    assert len(rows) == 2
    for row in rows:
        assert row.r_star == pytest.approx(riesz_maximal(rand_mu, rand_mu.points[row.atom], 0.05), rel=1e-12)
        assert row.maximal_avg >= 0 and row.ratio >= 0
    with pytest.raises(RieszError):
        cotlar_report(rand_mu, [0], 0.0, 1.0)


def test_haar_pieces():
    mu = generate("cantor4", g=3)
    lat = build_lattice(mu)
    f = np.arange(mu.size, dtype=float)
    m = cube_means(lat, f)
    assert m[0] == pytest.approx(np.dot(mu.weights, f) / mu.total_mass)
    e = haar_energy(lat, f)
    for q in range(0, lat.n_cubes, 7):
        d, leaf = haar_delta(lat, f, q)
        assert leaf == bool(lat.child_count[q] == 0)
        assert np.dot(mu.weights, d ** 2) == pytest.approx(e[q], rel=1e-12, abs=1e-14)
    with pytest.raises(RieszError):
        cube_means(lat, f[:-1])


def test_treecode_small():
    mu = generate("cantor4", g=4)
    tf = riesz_field_tree(mu, theta_mac=0.3, compare=True)
    assert tf.max_rel_deviation < 1e-2
    exact = riesz_field_tree(mu, theta_mac=0.0).field.values
    assert np.allclose(exact, riesz_field(mu).values, rtol=1e-10, atol=1e-12)
