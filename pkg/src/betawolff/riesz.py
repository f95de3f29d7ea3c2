"""Riesz transforms of discrete measures.

The kernel is ``K(x, y) = (x - y) / |x - y|^{n+1}``.  At an atom the principal
value does not exist, so the field at atom ``i`` is the self-excluded sum
``sum_{j != i} w_j K(x_i, x_j)``, which is what ``R_eps`` gives for ``eps``
below the smallest gap.  Truncation is strict: atoms with ``|x - y| > eps``
contribute.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import _io, _kernels
from .lattice import Lattice, build_lattice
from .measure import DiscreteMeasure


class RieszError(ValueError):
    pass


class LipschitzError(RieszError):
    """A suppression profile is not 1-Lipschitz on the atoms."""

    def __init__(self, message, pair=None, excess=None):
        super().__init__(message)
        self.pair = pair
        self.excess = excess


@dataclass
class Field:
    """Vector field values at evaluation points."""

    values: np.ndarray
    eps: float = 0.0
    self_excluded: bool = True
    meta: dict = field(default_factory=dict)

    @property
    def norms(self):
        return np.sqrt((self.values ** 2).sum(axis=1))

    def to_csv(self, path):
        """One row per point: id, components, modulus."""
        d = self.values.shape[1]
        header = ["id"] + [f"f{a}" for a in range(d)] + ["norm"]
        rows = ([i, *v, m] for i, (v, m) in enumerate(zip(self.values, self.norms)))
        _io.write_csv(path, header, rows)


# ----------------------------------------------------------------------
# kernel and direct sums

def riesz_kernel(x, y, n):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    diff = x - y
    r = np.sqrt((diff ** 2).sum(axis=-1))
    if np.any(r == 0.0):
        raise RieszError("Riesz kernel is singular at x = y")
    return diff / (r ** (n + 1))[..., None] if diff.ndim > 1 else diff / r ** (n + 1)


def _targets(x, d):
    T = np.ascontiguousarray(np.atleast_2d(np.asarray(x, dtype=float)))
    if T.shape[1] != d:
        raise RieszError(f"evaluation point must have {d} coordinates")
    return T


def riesz_truncated(mu: DiscreteMeasure, x, eps):
    """``R_eps mu(x)``: sum of ``w_j K(x, x_j)`` over atoms with ``|x - x_j| > eps``.

    ``x`` may be one point or an array of points.
    """
    if not eps > 0:
        raise RieszError("eps must be positive")
    T = _targets(x, mu.d)
    F = _kernels.riesz_direct(mu.points, mu.weights, T, mu.n, float(eps))
    return F[0] if np.ndim(x) == 1 else F


def riesz_field(mu: DiscreteMeasure, eps=0.0):
    """Self-excluded field at every atom (truncated at ``eps`` if positive)."""
    F = _kernels.riesz_direct(mu.points, mu.weights, mu.points, mu.n, float(eps))
    return Field(F, eps=float(eps), self_excluded=True)


def riesz_pv_discrete(mu: DiscreteMeasure, i):
    i = int(i)
    if not 0 <= i < mu.size:
        raise RieszError(f"atom index {i} out of range")
    return _kernels.riesz_direct(mu.points, mu.weights, mu.points[i:i + 1], mu.n, 0.0)[0]


def riesz_energy(mu: DiscreteMeasure, field_values=None):
    """``sum_i w_i |pv-surrogate field at x_i|^2`` (direct O(N^2))."""
    F = riesz_field(mu).values if field_values is None else field_values
    return float(np.dot(mu.weights, (F ** 2).sum(axis=1)))


def _truncation_profile(mu, x, eps_min):
    """Distances from ``x`` sorted ascending, and ``R_eps`` for every candidate eps.

    Candidates are ``eps_min`` and the distances ``>= eps_min``; at candidate
    ``eps`` the field sums the atoms strictly farther than ``eps``.
    """
    diff = x[None, :] - mu.points
    dist = np.sqrt((diff ** 2).sum(axis=1))
    order = np.argsort(dist, kind="stable")
    dist = dist[order]
    with np.errstate(divide="ignore", invalid="ignore"):
        contrib = np.where(dist[:, None] > 0,
                           mu.weights[order, None] * diff[order] / dist[:, None] ** (mu.n + 1),
                           0.0)
    suffix = np.vstack([np.cumsum(contrib[::-1], axis=0)[::-1], np.zeros((1, mu.d))])
    eps = np.concatenate([[eps_min], dist[dist >= eps_min]])
    first = np.searchsorted(dist, eps, side="right")
    return eps, suffix[first]


def riesz_maximal(mu: DiscreteMeasure, x, eps_min):
    """``R_* mu(x)`` restricted to ``eps >= eps_min`` (exact over the breakpoints)."""
    if not eps_min > 0:
        raise RieszError("eps_min must be positive")
    x = np.asarray(x, dtype=float)
    _, vals = _truncation_profile(mu, x, float(eps_min))
    return float(np.sqrt((vals ** 2).sum(axis=1)).max())


# ----------------------------------------------------------------------
# suppressed kernel

@dataclass
class SuppressionProfile:
    """Per-atom values ``Phi_i >= 0`` extended by ``Phi(x) = min_i (Phi_i + |x - x_i|)``."""

    points: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if len(self.values) != len(self.points):
            raise RieszError("one Phi value per atom required")
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise RieszError("Phi values must be finite and nonnegative")

    @classmethod
    def constant(cls, mu, c):
        return cls(mu.points, np.full(mu.size, float(c)))

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty(len(x))
        for a in range(len(x)):
            out[a] = np.min(self.values + np.sqrt(((self.points - x[a]) ** 2).sum(axis=1)))
        return out

    def validate(self, tol=1e-12):
        """Raise :class:`LipschitzError` naming the worst pair if ``|Phi_i - Phi_j| > |x_i - x_j|``."""
        P, v = self.points, self.values
        worst, pair = 0.0, None
        step = 1024
        for a in range(0, len(v), step):
            blk = slice(a, a + step)
            dist = np.sqrt(((P[blk, None, :] - P[None, :, :]) ** 2).sum(axis=2))
            excess = np.abs(v[blk, None] - v[None, :]) - dist
            i, j = np.unravel_index(np.argmax(excess), excess.shape)
            if excess[i, j] > worst:
                worst, pair = float(excess[i, j]), (a + int(i), int(j))
        scale = max(1.0, float(np.abs(v).max()) if len(v) else 1.0)
        if worst > tol * scale:
            raise LipschitzError(f"Phi is not 1-Lipschitz: pair {pair} exceeds by {worst:.3g}",
                                 pair, worst)
        return True


def suppressed_kernel(x, y, phi_x, phi_y, n):
    """``(x - y) / (|x - y|^2 + Phi(x) Phi(y))^{(n+1)/2}`` (zero where the denominator vanishes)."""
    diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    den = (diff ** 2).sum(axis=-1) + np.asarray(phi_x) * np.asarray(phi_y)
    with np.errstate(divide="ignore", invalid="ignore"):
        # same operation order as riesz_kernel so that Phi = 0 reproduces it bit for bit
        root = np.sqrt(den) ** (n + 1)
        if diff.ndim > 1:
            return np.where((den > 0)[..., None], diff / root[..., None], 0.0)
        return diff / root if den > 0 else np.zeros_like(diff)


def suppressed_field(mu: DiscreteMeasure, x, phi: SuppressionProfile, validate=True):
    """``sum_j w_j K_Phi(x, x_j)``; coincident atoms drop out only when ``Phi(x) = 0``."""
    if validate:
        phi.validate()
    x = np.asarray(x, dtype=float)
    px = float(phi(x)[0])
    K = suppressed_kernel(x[None, :], mu.points, px, phi.values, mu.n)
    return (mu.weights[:, None] * K).sum(axis=0)


def w_energy(mu: DiscreteMeasure, F):
    """``sum_{i != j in F} w_i w_j / (diam(F) |x_i - x_j|^{n-1})``; returns ``(W, flagged)``."""
    idx = np.asarray(sorted(set(int(i) for i in F)), dtype=np.int64)
    if len(idx) < 2:
        return 0.0, True
    P = mu.points[idx]
    w = mu.weights[idx]
    dist = np.sqrt(((P[:, None, :] - P[None, :, :]) ** 2).sum(axis=2))
    diam = float(dist.max())
    if diam == 0:
        raise RieszError("all atoms of F coincide")
    off = ~np.eye(len(idx), dtype=bool)
    if mu.n == 1:
        ker = np.ones_like(dist)
    else:
        with np.errstate(divide="ignore"):
            ker = dist ** (1 - mu.n)
        off &= dist > 0
    return float((np.outer(w, w) * ker)[off].sum() / diam), False


# ----------------------------------------------------------------------
# Cotlar-type diagnostic

@dataclass
class CotlarRow:
    atom: int
    r_star: float
    maximal_avg: float
    ratio: float


def cotlar_report(mu: DiscreteMeasure, sample, r0, theta1, field_values=None):
    """Compare ``R_*`` (eps >= r0) with the doubling-restricted maximal average of ``|R mu|``.

    The maximal average runs over closed balls ``B(x, r)``, ``r >= r0``, with
    ``mu(16 B) <= 128^{n+2} mu(B)``.  Between consecutive atom distances the
    average is constant while ``mu(16 B)`` grows, so the radii ``r0`` and the
    distances beyond ``r0`` are the only candidates needed.
    """
    if not r0 > 0:
        raise RieszError("r0 must be positive")
    sample = [int(i) for i in sample]
    if mu.size < 2:
        return [CotlarRow(i, 0.0, 0.0, 0.0) for i in sample]
    F = riesz_field(mu).values if field_values is None else field_values
    g = np.sqrt((F ** 2).sum(axis=1))
    cap = 128.0 ** (mu.n + 2)
    rows = []
    for i in sample:
        x = mu.points[i]
        eps, vals = _truncation_profile(mu, x, float(r0))
        r_star = float(np.sqrt((vals ** 2).sum(axis=1)).max())
        dist = np.sqrt(((mu.points - x) ** 2).sum(axis=1))
        order = np.argsort(dist, kind="stable")
        ds = dist[order]
        cm = np.cumsum(mu.weights[order])
        cg = np.cumsum(mu.weights[order] * g[order])
        radii = np.concatenate([[r0], ds[ds > r0]])
        inner = np.searchsorted(ds, radii, side="right") - 1
        outer = np.searchsorted(ds, 16.0 * radii, side="right") - 1
        ok = (inner >= 0) & (cm[outer] <= cap * cm[np.maximum(inner, 0)])
        best = 0.0
        if np.any(ok):
            best = float((cg[inner[ok]] / cm[inner[ok]]).max())
        den = best + theta1
        rows.append(CotlarRow(i, r_star, best, r_star / den if den > 0 else 0.0))
    return rows


# ----------------------------------------------------------------------
# Haar differences

def cube_means(lat: Lattice, f):
    """``m_Q(f)`` for every cube."""
    f = np.asarray(f, dtype=float)
    if f.shape != (lat.mu.size,):
        raise RieszError("f must have one value per atom")
    wf = (lat.mu.weights * f)[lat.perm]
    csum = np.concatenate([[0.0], np.cumsum(wf)])
    sums = csum[lat.stop] - csum[lat.start]
    return sums / lat.mass


def haar_delta(lat: Lattice, f, q):
    """``Delta_Q f = sum_{S child} m_S(f) chi_S - m_Q(f) chi_Q`` as a per-atom array.

    Returns ``(values, flagged)`` with ``flagged`` true for leaf cubes.  The
    atoms of a leaf play the role of its children, so a leaf gives
    ``f - m_Q(f)`` on its atoms, which vanishes for a single atom.
    """
    q = lat._check(q)
    f = np.asarray(f, dtype=float)
    out = np.zeros(lat.mu.size)
    m = cube_means(lat, f)
    if lat.child_count[q] == 0:
        idx = lat.atoms(q)
        if len(idx) > 1:
            out[idx] = f[idx] - m[q]
        return out, True
    for s in lat.children(q):
        out[lat.atoms(s)] = m[s] - m[q]
    return out, False


def haar_energy(lat: Lattice, f):
    """``||Delta_Q f||^2_{L^2(mu)}`` for every cube (atoms act as children of leaves)."""
    f = np.asarray(f, dtype=float)
    m = cube_means(lat, f)
    out = np.zeros(lat.n_cubes)
    kids = np.flatnonzero(lat.parent >= 0)
    par = lat.parent[kids]
    np.add.at(out, par, lat.mass[kids] * (m[kids] - m[par]) ** 2)
    for q in np.flatnonzero((lat.child_count == 0) & (lat.count > 1)):
        idx = lat.atoms(q)
        out[q] = float(np.dot(lat.mu.weights[idx], (f[idx] - m[q]) ** 2))
    return out


# ----------------------------------------------------------------------
# treecode

@dataclass
class TreeField:
    field: Field
    work: int
    seconds: float
    direct_seconds: float | None = None
    max_rel_deviation: float | None = None
    max_abs_deviation: float | None = None
    max_pointwise_rel: float | None = None

    @property
    def speedup(self):
        if self.direct_seconds is None or self.seconds <= 0:
            return None
        return self.direct_seconds / self.seconds


def _cluster_arrays(lat: Lattice):
    mu = lat.mu
    X = mu.points[lat.perm]
    w = mu.weights[lat.perm]
    cw = np.concatenate([[0.0], np.cumsum(w)])
    cx = np.vstack([np.zeros(mu.d), np.cumsum(w[:, None] * X, axis=0)])
    cmass = cw[lat.stop] - cw[lat.start]
    centroid = (cx[lat.stop] - cx[lat.start]) / cmass[:, None]
    size = np.zeros(lat.n_cubes)
    for q in range(lat.n_cubes):
        blk = X[lat.start[q]:lat.stop[q]]
        size[q] = 2.0 * np.sqrt(((blk - centroid[q]) ** 2).sum(axis=1)).max()
    return np.ascontiguousarray(centroid), cmass, size


def riesz_field_tree(mu: DiscreteMeasure, lat: Lattice | None = None, eps=0.0,
                     theta_mac=0.3, compare=False, targets=None):
    """Monopole treecode field using lattice cubes as clusters.

    A cube is replaced by its mass at its weighted centroid when
    ``extent / dist <= theta_mac`` (``extent`` is twice the largest atom
    distance from the centroid) and the whole cube lies beyond ``eps``;
    otherwise it is opened.  ``theta_mac = 0`` sums every atom directly.
    With ``compare`` the direct field is evaluated too.  The per-point
    relative deviation ``|F_tree - F| / sum_j w_j |K(x, x_j)|`` uses the
    absolute kernel sum as scale, which stays meaningful where the field
    itself cancels to zero; ``|F_tree - F| / |F|`` is reported as well.
    """
    if lat is None:
        lat = build_lattice(mu)
    if lat.mu is not mu and lat.mu.size != mu.size:
        raise RieszError("lattice was built on a different measure")
    if not 0 <= theta_mac < 1:
        raise RieszError("theta_mac must lie in [0, 1)")
    centroid, cmass, size = _cluster_arrays(lat)
    T = mu.points if targets is None else _targets(targets, mu.d)
    t0 = time.perf_counter()
    F, work = _kernels.riesz_tree(mu.points, mu.weights, T, mu.n, float(eps), float(theta_mac),
                                  centroid, cmass, size, lat.child_start, lat.child_count,
                                  lat.leaf, lat.start, lat.stop, lat.perm)
    secs = time.perf_counter() - t0
    out = TreeField(Field(F, eps=float(eps)), int(work.sum()), secs)
    if compare:
        t0 = time.perf_counter()
        D, S = _kernels.riesz_direct_abs(mu.points, mu.weights, T, mu.n, float(eps))
        out.direct_seconds = time.perf_counter() - t0
        err = np.sqrt(((F - D) ** 2).sum(axis=1))
        mod = np.sqrt((D ** 2).sum(axis=1))
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.where(S > 0, err / S, 0.0)
            raw = np.where(mod > 0, err / mod, np.where(err > 0, np.inf, 0.0))
        out.max_abs_deviation = float(err.max())
        out.max_rel_deviation = float(rel.max())
        out.max_pointwise_rel = float(raw.max())
    return out
