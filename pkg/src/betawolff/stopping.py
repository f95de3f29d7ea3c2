"""Stopping-time families, the MDW and DB(M) tests, enlarged cubes and the corona forest.

With ``Lambda = A0^{k_Lambda n}`` and a root cube ``R``:

* ``HD(R) = hd^{k_Lambda}(R)``,
* ``LD(R)``: maximal ``Q`` with ``ell(Q) < ell(R)`` and ``P(Q) <= delta0 Theta(R)``,
* ``Stop(R)``: the maximal cubes of ``HD(R) ∪ LD(R)`` that lie inside ``R``.

Leaf cells never enter HD (their density is a discretisation artefact) but
are scanned for LD, where a small Poisson coefficient is meaningful.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _io
from .coeffs import NO_BUCKET, CoeffTable, energies


class StoppingWarning(UserWarning):
    pass


@dataclass
class StoppingConfig:
    A0: int = 16
    C0: float = 30.0
    k_lambda: int = 2
    delta0: float = 1e-3
    M: float = 4.0
    N: int = 8
    C_d: float | None = None
    n: int = 1
    k_lambda_star: int | None = None
    lam: float = 9.0

    def __post_init__(self):
        if int(self.k_lambda) != self.k_lambda or self.k_lambda < 1:
            raise ValueError("k_lambda must be a positive integer")
        if not 0 < self.delta0 < 1:
            raise ValueError("delta0 must lie in (0, 1)")
        if not self.M >= 1:
            raise ValueError("M must be >= 1")
        if int(self.N) != self.N or self.N < 2:
            raise ValueError("N must be an integer >= 2")
        if self.k_lambda_star is not None and (int(self.k_lambda_star) != self.k_lambda_star
                                               or self.k_lambda_star < 1):
            raise ValueError("k_lambda_star must be a positive integer")
        self.k_lambda = int(self.k_lambda)
        self.N = int(self.N)
        if self.delta0 >= self.Lambda ** -2:
            warnings.warn(f"delta0 = {self.delta0:g} is not below Lambda^-2 = {self.Lambda ** -2:.3g}",
                          StoppingWarning, stacklevel=2)

    @property
    def Lambda(self):
        return float(self.A0) ** (self.k_lambda * self.n)

    @property
    def B(self):
        return self.Lambda ** (1.0 / (100 * self.n))

    @property
    def Lambda_star(self):
        return self.Lambda ** (self.N / (self.N - 1))

    @property
    def k_star(self):
        """Exponent of ``HD_*``.

        Bucketed densities differ by integer powers of ``A0^n``, so
        ``Theta(P) >= Lambda_* Theta(R)`` holds exactly when the bucket gap
        is at least ``ceil(k_lambda N / (N - 1))``.
        """
        if self.k_lambda_star is not None:
            return int(self.k_lambda_star)
        return int(math.ceil(self.k_lambda * self.N / (self.N - 1) - 1e-12))

    def for_table(self, table):
        if table.A0 != self.A0 or table.n != self.n:
            return StoppingConfig(table.A0, self.C0, self.k_lambda, self.delta0, self.M, self.N,
                                  self.C_d, table.n, self.k_lambda_star, self.lam)
        return self


def _quiet_config(table, cfg):
    if cfg is None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", StoppingWarning)
            return StoppingConfig(A0=table.A0, n=table.n)
    if cfg.A0 != table.A0 or cfg.n != table.n:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", StoppingWarning)
            return cfg.for_table(table)
    return cfg


# ----------------------------------------------------------------------
# family scans

def _below(table, R, region_mask):
    """Boolean mask of region cubes strictly below the level of ``R``."""
    lat = table.lat
    return region_mask & (lat.level > lat.level[R])


def _maximal(table, R, qual):
    """Members of ``qual`` with no qualifying strict ancestor below the level of ``R``."""
    return qual & ~_ancestor_flag(table, R, qual)


def _region_mask(table, R, lam):
    lat = table.lat
    j = lat.level[R]
    anc = lat.ancestors()
    if lam is None:
        return anc[:, j] == R
    return np.isin(anc[:, j], lat.neighborhood(R, lam))


def _hd_mask(table, R, k, region):
    lat = table.lat
    j = lat.level[R]
    bq = table.bucket[R]
    amax = table.ancestor_max_bucket()[:, j]
    ok = (table.bucket >= bq + k) & ((amax == NO_BUCKET) | (amax < bq + k))
    return ok & table.nonleaf & _below(table, R, region)


def _ld_mask(table, R, delta0, region):
    qual = (table.P <= delta0 * table.Theta[R]) & _below(table, R, region)
    return _maximal(table, R, qual)


@dataclass
class Families:
    root: int
    HD: np.ndarray
    LD: np.ndarray
    Stop: np.ndarray
    Bad: np.ndarray


def _families(table, R, k, delta0, lam):
    region = _region_mask(table, R, lam)
    hd = _hd_mask(table, R, k, region)
    ld = _ld_mask(table, R, delta0, region)
    bad = _maximal(table, R, hd | ld)
    inside = _region_mask(table, R, None) & (table.lat.level > table.lat.level[R])
    stop = bad & inside
    return hd, ld, bad, stop


def stop_families(table: CoeffTable, R, cfg: StoppingConfig | None = None) -> Families:
    """``HD(R)``, ``LD(R)`` and ``Stop(R)`` (searched in ``D(9R)``; Stop inside ``R``)."""
    cfg = _quiet_config(table, cfg)
    R = table.lat._check(R)
    hd, ld, bad, stop = _families(table, R, cfg.k_lambda, cfg.delta0, cfg.lam)
    return Families(R, np.flatnonzero(hd), np.flatnonzero(ld), np.flatnonzero(stop),
                    np.flatnonzero(bad))


def sigma(table: CoeffTable, cubes):
    """``sum Theta(P)^2 mu(P)`` over non-leaf cubes (leaves dropped with a warning)."""
    cubes = np.asarray(list(cubes) if not isinstance(cubes, np.ndarray) else cubes, dtype=np.int64)
    if not len(cubes):
        return 0.0
    leafy = ~table.nonleaf[cubes]
    if np.any(leafy):
        warnings.warn(f"{int(leafy.sum())} leaf cube(s) excluded from sigma", StoppingWarning,
                      stacklevel=2)
        cubes = cubes[~leafy]
    return float(np.sum(table.Theta[cubes] ** 2 * table.lat.mass[cubes]))


def _sigma_mask(table, mask):
    mask = mask & table.nonleaf
    return float(np.sum(table.Theta[mask] ** 2 * table.lat.mass[mask]))


def is_mdw(table: CoeffTable, R, cfg: StoppingConfig | None = None):
    """``sigma(HD(R) ∩ Stop(R)) >= B^{-1} sigma(R)``."""
    cfg = _quiet_config(table, cfg)
    hd, ld, bad, stop = _families(table, R, cfg.k_lambda, cfg.delta0, cfg.lam)
    lhs = _sigma_mask(table, hd & stop)
    return lhs >= sigma(table, [R]) / cfg.B


def is_db(table: CoeffTable, R, M):
    """``M``-dominated from below; returns ``(flag, minimal witnessing k or None)``."""
    en = energies(table, R, 9.0)
    rhs = M ** 2 * table.Theta[R] ** 2 * table.mass_lambda(R, 9.0)
    for k in sorted(en.sums_half):
        if en.sums_half[k] > rhs:
            return True, k
    return False, None


# ----------------------------------------------------------------------
# enlarged cubes and h(R)

@dataclass
class EnlargedCube:
    root: int
    j: int
    cubes: np.ndarray  # next-level cubes (children of R and the ring around it)
    atoms: np.ndarray


def enlarged_cube(table: CoeffTable, R, j):
    """``e_j(R) = R ∪ {next-level Q : dist(x_R, Q) < ell(R)/2 + 2 j ell(Q)}``."""
    lat = table.lat
    R = lat._check(R)
    if j < 0:
        raise ValueError("j must be nonnegative")
    k = lat.level[R]
    if j > 0.75 * lat.A0:
        warnings.warn(f"j = {j} exceeds (3/4) A0; e_j(R) may leave 2R", StoppingWarning,
                      stacklevel=2)
    if k + 1 >= len(lat.labels):
        return EnlargedCube(R, j, np.zeros(0, dtype=np.int64), np.sort(lat.atoms(R)))
    ell_next = lat.side[R] / lat.A0
    reach = 0.5 * lat.side[R] + 2.0 * j * ell_next
    dist = np.sqrt(((lat.mu.points - lat.centers[R]) ** 2).sum(axis=1))
    lab = lat.labels[k + 1]
    near = (dist < reach) & (lab >= 0)
    cubes = np.union1d(np.unique(lab[near]), lat.children(R))
    atoms = np.union1d(lat.atoms(R), np.flatnonzero(np.isin(lab, cubes)))
    return EnlargedCube(R, j, cubes.astype(np.int64), atoms)


@dataclass
class HSelection:
    h: int
    j: int
    witnessed: bool
    ratios: dict
    range_trivial: bool


def select_h(table: CoeffTable, R, cfg: StoppingConfig | None = None) -> HSelection:
    """Smallest ``j`` in ``[10, A0/4]`` with ``sigma(HD ∩ Stop(e_j)) <= B^{1/4} sigma(HD ∩ Stop(e_{j-10}))``.

    ``h(R) = j - 10``.  When ``A0 < 40`` the range is empty and only
    ``j = 10`` is tried (``range_trivial``).  If no ``j`` qualifies the
    ``j`` with the smallest ratio is returned with ``witnessed = False``.
    """
    cfg = _quiet_config(table, cfg)
    lat = table.lat
    R = lat._check(R)
    hd, ld, bad, stop = _families(table, R, cfg.k_lambda, cfg.delta0, cfg.lam)
    k = lat.level[R]
    anc = lat.ancestors()
    hd_bad = hd & bad
    j_hi = int(lat.A0 // 4)
    trivial = j_hi < 10
    js = list(range(10, max(j_hi, 10) + 1))
    cache = {}

    def s(jj):
        if jj not in cache:
            if k + 1 > lat.depth:
                cache[jj] = 0.0
            else:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", StoppingWarning)
                    e = enlarged_cube(table, R, jj)
                inside = np.isin(anc[:, k + 1], e.cubes)
                cache[jj] = _sigma_mask(table, hd_bad & inside)
        return cache[jj]

    ratios = {}
    bound = cfg.B ** 0.25
    for jj in js:
        num, den = s(jj), s(jj - 10)
        ratios[jj] = num / den if den > 0 else (0.0 if num == 0 else math.inf)
        if num <= bound * den:
            return HSelection(jj - 10, jj, True, ratios, trivial)
    jj = min(ratios, key=lambda t: (ratios[t], t))
    return HSelection(jj - 10, jj, False, ratios, trivial)


# ----------------------------------------------------------------------
# corona decomposition

@dataclass
class TreeRecord:
    root: int
    cubes: np.ndarray
    stop: np.ndarray
    ends: np.ndarray
    sigma_root: float
    sigma_ends: float
    theta_max: float
    theta_min: float
    mdw: bool
    end_bound_ok: bool

    @property
    def theta_osc(self):
        return self.theta_max / self.theta_min if self.theta_min > 0 else math.inf


@dataclass
class Corona:
    trees: list
    generations: list
    sigma_top: float
    cfg: StoppingConfig = field(repr=False, default=None)

    @property
    def top(self):
        return [t.root for t in self.trees]

    def to_dict(self):
        return {"top": [{
            "root": int(t.root),
            "tree_cubes": [int(c) for c in t.cubes],
            "end_cubes": [int(c) for c in t.ends],
            "sigma": t.sigma_root,
            "theta_osc": t.theta_osc,
        } for t in self.trees], "sigma_top": self.sigma_top}

    def to_json(self):
        return _io.dumps(self.to_dict())


def _tree_of(table, R, cfg):
    lat = table.lat
    j = lat.level[R]
    anc = lat.ancestors()
    inside = anc[:, j] == R
    hd = _hd_mask(table, R, cfg.k_star, inside)
    ld = _ld_mask(table, R, cfg.delta0, inside)
    stop = _maximal(table, R, hd | ld)
    # End_*(R): maximal P-doubling non-leaf cubes inside some Stop_* cube
    under_stop = np.zeros(lat.n_cubes, dtype=bool)
    for L in range(j + 1, lat.depth + 1):
        idx = np.flatnonzero((lat.level == L) & inside)
        if not len(idx):
            break
        under_stop[idx] = stop[idx] | under_stop[lat.parent[idx]]
    cand = under_stop & table.p_doubling & table.nonleaf
    end = cand & ~_ancestor_flag(table, R, cand)
    strictly_under_end = _ancestor_flag(table, R, end)
    tree = inside & ~strictly_under_end
    return tree, stop, end


def _ancestor_flag(table, R, mask):
    """True where some strict ancestor below the level of ``R`` is in ``mask``."""
    lat = table.lat
    j = lat.level[R]
    above = np.zeros(lat.n_cubes, dtype=bool)
    for L in range(j + 2, lat.depth + 1):
        idx = np.flatnonzero(lat.level == L)
        if not len(idx):
            break
        p = lat.parent[idx]
        above[idx] = above[p] | mask[p]
    return above


def corona_top(table: CoeffTable, cfg: StoppingConfig | None = None, max_generations=None) -> Corona:
    """Top/Tree/End_* forest starting from the root cube.

    ``Top_0 = {root}`` and ``Top_{k+1}`` is the union of ``End_*(R)`` over
    ``R`` in ``Top_k``.  End cubes are strictly smaller than their root, so
    the iteration stops after at most ``depth`` generations.
    """
    cfg = _quiet_config(table, cfg)
    frontier = [0]
    trees = []
    gens = []
    bound = 2.0 * cfg.Lambda_star ** (2.0 / cfg.N) / cfg.B
    while frontier:
        gens.append(list(frontier))
        nxt = []
        for R in frontier:
            tree, stop, end = _tree_of(table, R, cfg)
            t_nl = np.flatnonzero(tree & table.nonleaf)
            th = table.Theta[t_nl]
            s_root = sigma(table, [R]) if table.nonleaf[R] else 0.0
            s_end = _sigma_mask(table, end)
            mdw = is_mdw(table, R, cfg) if table.nonleaf[R] else False
            trees.append(TreeRecord(
                int(R), np.flatnonzero(tree), np.flatnonzero(stop), np.flatnonzero(end),
                s_root, s_end, float(th.max()) if len(th) else 0.0,
                float(th.min()) if len(th) else 0.0, bool(mdw),
                bool(mdw or s_end <= bound * s_root)))
            nxt.extend(int(e) for e in np.flatnonzero(end))
        frontier = sorted(nxt)
        if max_generations is not None and len(gens) >= max_generations:
            break
    s_top = float(sum(t.sigma_root for t in trees))
    return Corona(trees, gens, s_top, cfg)


def check_corona(table: CoeffTable, corona: Corona):
    """Violation counts for coverage and for the overlap rule between trees."""
    lat = table.lat
    count = np.zeros(lat.n_cubes, dtype=np.int64)
    roots = set(corona.top)
    ends = set()
    for t in corona.trees:
        count[t.cubes] += 1
        ends.update(int(e) for e in t.ends)
    uncovered = int(np.sum((count == 0) & table.nonleaf))
    multi = np.flatnonzero(count > 1)
    bad_overlap = 0
    for q in multi:
        if count[q] != 2 or q not in roots or q not in ends:
            bad_overlap += 1
    return {"uncovered": uncovered, "bad_overlap": bad_overlap}
