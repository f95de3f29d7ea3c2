import json
import warnings

import numpy as np
import pytest

from betawolff.coeffs import CoeffTable
from betawolff.lattice import build_lattice
from betawolff.measure import generate
from betawolff.stopping import (StoppingConfig, StoppingWarning, check_corona, corona_top,
                                enlarged_cube, is_db, is_mdw, select_h, sigma, stop_families)


def quiet(**kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StoppingWarning)
        return StoppingConfig(**kw)


@pytest.fixture(scope="module")
def cantor():
    return CoeffTable(build_lattice(generate("cantor4", g=5)))


@pytest.fixture(scope="module")
def segment():
    return CoeffTable(build_lattice(generate("segment", N=1024)))


def test_config_validation_and_derived():
    with pytest.warns(StoppingWarning):
        StoppingConfig(delta0=0.5)
    cfg = quiet(delta0=1e-6)
    assert cfg.Lambda == 256.0
    assert cfg.k_star == 3
    assert quiet(k_lambda=7, N=8, delta0=1e-6).k_star == 8
    assert quiet(k_lambda_star=1, delta0=1e-6).k_star == 1
    assert cfg.B == pytest.approx(256.0 ** 0.01)
    for bad in ({"k_lambda": 0}, {"delta0": 0.0}, {"M": 0.5}, {"N": 1}, {"k_lambda_star": 0}):
        with pytest.raises(ValueError):
            quiet(**bad)


def test_families_structure(cantor):
    lat = cantor.lat
    fam = stop_families(cantor, 0, quiet(delta0=0.05, k_lambda=1))
    assert set(fam.Stop) <= set(fam.Bad)
    anc = lat.ancestors()
    # Bad is an antichain
    bad = set(fam.Bad.tolist())
    for q in bad:
        for p in lat.ancestor_chain(q)[1:]:
            assert p not in bad
    # HD members have no leaf and the right density jump
    for p in fam.HD:
        assert not lat.leaf[p]
        assert cantor.bucket[p] >= cantor.bucket[0] + 1
    assert np.all(cantor.P[fam.LD] <= 0.05 * cantor.Theta[0])
    assert np.all(anc[fam.Stop, 0] == 0)


def test_sigma(cantor):
    lat = cantor.lat
    nl = np.flatnonzero(cantor.nonleaf)[:10]
    assert sigma(cantor, nl) == pytest.approx(float(np.sum(cantor.Theta[nl] ** 2 * lat.mass[nl])))
    assert sigma(cantor, []) == 0.0
    leaf = int(np.flatnonzero(lat.leaf)[0])
    with pytest.warns(StoppingWarning):
        assert sigma(cantor, [leaf]) == 0.0


def test_flat_segment_no_high_density(segment):
    cfg = quiet(delta0=1e-4)
    fam = stop_families(segment, 0, cfg)
    assert len(fam.HD) == 0
    assert not is_mdw(segment, 0, cfg)


def test_db_flat_segment_nonroot(segment):
    # the root's enlarged ball is saturated; every other cube is not dominated from below
    for q in np.flatnonzero(segment.nonleaf)[1:20]:
        flag, k = is_db(segment, int(q), 4.0)
        assert not flag and k is None


def test_enlarged_cube(cantor):
    lat = cantor.lat
    R = int(lat.cubes_at(1)[0])
    e0 = enlarged_cube(cantor, R, 0)
    e4 = enlarged_cube(cantor, R, 4)
    assert set(lat.children(R)) <= set(e0.cubes)
    assert set(e0.cubes) <= set(e4.cubes)
    assert set(lat.atoms(R)) <= set(e0.atoms)
    with pytest.warns(StoppingWarning):
        enlarged_cube(cantor, R, 13)
    with pytest.raises(ValueError):
        enlarged_cube(cantor, R, -1)


def test_select_h_trivial_range(cantor):
    sel = select_h(cantor, 0, quiet(delta0=1e-4))
    assert sel.range_trivial
    assert sel.j == 10 and sel.h == 0
    assert set(sel.ratios) == {10}


def test_corona_covers_and_json(cantor):
    cor = corona_top(cantor, quiet(delta0=0.05, k_lambda_star=1))
    assert check_corona(cantor, cor) == {"uncovered": 0, "bad_overlap": 0}
    assert cor.top[0] == 0 and len(cor.top) > 1
    assert cor.sigma_top == pytest.approx(sum(t.sigma_root for t in cor.trees))
    doc = json.loads(cor.to_json())
    assert [t["root"] for t in doc["top"]] == cor.top
    assert cor.to_json() == corona_top(cantor, quiet(delta0=0.05, k_lambda_star=1)).to_json()
    first = corona_top(cantor, quiet(delta0=0.05, k_lambda_star=1), max_generations=1)
    assert len(first.generations) == 1


def test_corona_segment_single_tree(segment):
    cor = corona_top(segment, quiet(delta0=1e-4))
    assert cor.top == [0]
    assert check_corona(segment, cor)["uncovered"] == 0
