"""Per-ball and per-cube coefficients: beta_2, densities, P(Q), hd^k, energies.

Leaf cubes are point-mass artefacts of the discretisation; they are left out
of every Theta comparison, every hd^k family and every energy sum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .lattice import Lattice
from .measure import Ball, DiscreteMeasure

NO_BUCKET = np.iinfo(np.int64).min // 4


class CoeffError(ValueError):
    pass


@dataclass(frozen=True)
class Hyperplane:
    point: np.ndarray
    normal: np.ndarray

    def distance(self, x):
        return np.abs((np.atleast_2d(x) - self.point) @ self.normal)


@dataclass(frozen=True)
class BetaResult:
    beta: float
    plane: Hyperplane | None
    degenerate: bool

    def __iter__(self):
        return iter((self.beta, self.plane))


def _beta_from_moments(mass, first, second, center, radius, n):
    """beta^2 and best plane from moments taken about ``center``."""
    if mass <= 0:
        return 0.0, None, True
    g = first / mass
    scatter = second - mass * np.outer(g, g)
    scatter = 0.5 * (scatter + scatter.T)
    vals, vecs = np.linalg.eigh(scatter)
    lam = max(float(vals[0]), 0.0)
    degenerate = lam <= 1e-14 * max(float(np.trace(scatter)), np.finfo(float).tiny)
    plane = Hyperplane(center + g, vecs[:, 0] / np.linalg.norm(vecs[:, 0]))
    return lam / radius ** (n + 2), plane, degenerate


def beta2(mu: DiscreteMeasure, ball: Ball) -> BetaResult:
    """L^2 flatness of ``mu`` in ``ball`` w.r.t. the best n-plane.

    ``beta^2 = lambda_min / r^{n+2}`` with ``lambda_min`` the smallest
    eigenvalue of the weighted scatter matrix of the atoms in the ball; the
    optimal plane passes through their weighted centroid.
    """
    mass, first, second = mu.ball_moments(ball.center[None, :], [ball.radius])
    b2, plane, degenerate = _beta_from_moments(mass[0], first[0], second[0],
                                               ball.center, ball.radius, mu.n)
    return BetaResult(math.sqrt(b2), plane, degenerate)


def beta2_many(mu, centers, radii):
    """Squared beta for many balls at once (vectorised eigenvalues)."""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    radii = np.broadcast_to(np.asarray(radii, dtype=float), (len(centers),))
    mass, first, second = mu.ball_moments(centers, radii)
    return _beta2_stack(mass, first, second, radii, mu.n), mass


def _beta2_stack(mass, first, second, radii, n):
    safe = np.where(mass > 0, mass, 1.0)
    g = first / safe[..., None]
    scatter = second - safe[..., None, None] * g[..., :, None] * g[..., None, :]
    scatter = 0.5 * (scatter + np.swapaxes(scatter, -1, -2))
    lam = np.linalg.eigvalsh(scatter)[..., 0]
    lam = np.where(mass > 0, np.maximum(lam, 0.0), 0.0)
    return lam / radii ** (n + 2)


def theta(mu, x, r):
    """``mu(B(x, r)) / r^n``."""
    if not r > 0:
        raise CoeffError("radius must be positive")
    return float(mu.ball_masses(np.asarray(x, dtype=float)[None, :], [r])[0]) / r ** mu.n


def bucket_exponent(value, A0, n):
    """Integer ``e`` with ``A0^{e n} <= value < A0^{(e+1) n}``."""
    if not value > 0:
        raise CoeffError("density bucket needs a positive value")
    base = float(A0) ** n
    e = math.floor(math.log(value) / math.log(base))
    while base ** (e + 1) <= value:
        e += 1
    while base ** e > value:
        e -= 1
    return int(e)


def theta_disc(value, A0, n):
    """Discrete density ``Theta = A0^{e n}`` of a raw density value; returns ``(Theta, e)``."""
    e = bucket_exponent(value, A0, n)
    return float(A0) ** (e * n), e


class CoeffTable:
    """Coefficients of every cube of a lattice.

    Attributes (arrays indexed by cube id)
    --------------------------------------
    mass_2b : ``mu(2 B_Q)``
    beta2 : ``beta_2(2 B_Q)^2``
    theta_ball : ``theta_mu(2 B_Q) = mu(2 B_Q) / (56 r(Q))^n``
    density : ``mu(2 B_Q) / ell(Q)^n`` (the quantity Theta buckets)
    bucket, Theta : exponent ``e`` and ``A0^{e n}``
    P, p_doubling : Poisson coefficient and its doubling flag
    """

    def __init__(self, lat: Lattice, C_d=None):
        self.lat = lat
        mu = lat.mu
        n = mu.n
        self.n = n
        self.A0 = lat.A0
        self.C_d = 4.0 * float(lat.A0) ** n if C_d is None else float(C_d)
        r2b = 2.0 * 28.0 * lat.radius
        self.radius_2b = r2b
        b2, mass = beta2_many(mu, lat.centers, r2b)
        self.beta2 = b2
        self.mass_2b = mass
        self.theta_ball = mass / r2b ** n
        self.density = mass / lat.side ** n
        self.nonleaf = ~lat.leaf
        self.bucket = np.array([bucket_exponent(v, lat.A0, n) for v in self.density],
                               dtype=np.int64)
        self.Theta = float(lat.A0) ** (self.bucket * n).astype(float)
        # P(Q) = ell(Q) * sum_{R ⊇ Q} mu(2B_R) / ell(R)^{n+1}
        acc = np.zeros(lat.n_cubes)
        for q in range(lat.n_cubes):
            p = lat.parent[q]
            acc[q] = (acc[p] if p >= 0 else 0.0) + mass[q] / lat.side[q] ** (n + 1)
        self.P = lat.side * acc
        self.p_doubling = self.P <= self.C_d * self.density
        self._amax = None
        self._nb9 = {}

    # ------------------------------------------------------------------
    def ancestor_max_bucket(self):
        """``amax[P, j]``: largest bucket among strict ancestors of ``P`` at levels ``> j``."""
        if self._amax is None:
            lat = self.lat
            D = lat.depth + 1
            amax = np.full((lat.n_cubes, D), NO_BUCKET, dtype=np.int64)
            for q in range(1, lat.n_cubes):
                p = lat.parent[q]
                row = amax[p].copy()
                kp = lat.level[p]
                row[:kp] = np.maximum(row[:kp], self.bucket[p])
                amax[q] = row
            self._amax = amax
        return self._amax

    def region(self, q, lam):
        """Strictly smaller non-leaf cubes of ``D_mu(lam Q)``; ``lam=None`` means everywhere."""
        lat = self.lat
        j = lat.level[q]
        if lam is None:
            mask = lat.level > j
        else:
            key = (int(q), float(lam))
            if key not in self._nb9:
                members = lat.neighborhood(q, lam)
                self._nb9[key] = np.isin(lat.ancestors()[:, j], members)
            mask = self._nb9[key] & (lat.level > j)
        return np.flatnonzero(mask & self.nonleaf)

    def hd_ranges(self, q, lam):
        """Candidate cubes with the range of ``k`` for which each lies in ``hd^k(Q)``.

        ``P`` belongs to ``hd^k(Q)`` iff ``b(P) >= b(Q) + k > amax(P)``, so
        ``k`` runs over ``[amax(P) - b(Q) + 1, b(P) - b(Q)]``.
        """
        cand = self.region(q, lam)
        j = self.lat.level[q]
        bq = self.bucket[q]
        hi = self.bucket[cand] - bq
        amax = self.ancestor_max_bucket()[cand, j]
        lo = np.where(amax == NO_BUCKET, np.iinfo(np.int32).min, amax - bq + 1)
        return cand, lo, hi

    def hd_k(self, q, k, restrict_lambda=None):
        """``hd^k(Q)``: maximal non-leaf ``P`` with ``ell(P) < ell(Q)``, ``Theta(P) >= A0^{kn} Theta(Q)``."""
        cand, lo, hi = self.hd_ranges(q, restrict_lambda)
        return cand[(lo <= k) & (k <= hi)]

    def mass_of(self, cubes):
        return float(self.lat.mass[np.asarray(cubes, dtype=np.int64)].sum())

    def mass_lambda(self, q, lam=9.0):
        """``mu(lam Q)``: total mass of the same-level cubes forming ``lam Q``."""
        return self.mass_of(self.lat.neighborhood(q, lam))


def poisson_P(table: CoeffTable, q):
    return float(table.P[q]), bool(table.p_doubling[q])


def theta_cube(table: CoeffTable, q):
    """``theta_mu(2 B_Q)``."""
    return float(table.theta_ball[q])


@dataclass
class Energies:
    E: float
    E_H: float
    E_inf: float
    m_k: dict
    sums_half: dict  # k -> sum over hd^k ∩ D(lam Q) of (ell ratio)^{1/2} Theta^2 mu


def energies(table: CoeffTable, q, lam=9.0) -> Energies:
    """``E(lam Q)``, ``E^H(lam Q)``, ``E_inf(lam Q)`` and ``m_k(Q)``."""
    lat = table.lat
    j = lat.level[q]
    lq = lat.side[q]
    members = lat.neighborhood(q, lam)
    anc = lat.ancestors()
    in_region = np.isin(anc[:, j], members) & table.nonleaf
    ratio = lat.side / lq
    sig = table.Theta ** 2 * lat.mass
    E = float(np.sum((ratio ** 0.75 * sig)[in_region]))

    cand, lo, hi = table.hd_ranges(q, lam)
    lo0 = np.maximum(lo, 0)
    cnt = np.maximum(hi - lo0 + 1, 0)
    E_H = float(np.sum(cnt * ratio[cand] ** 0.75 * sig[cand]))

    lo1 = np.maximum(lo, 1)
    ok = hi >= lo1
    sums = {}
    mk = {}
    if np.any(ok):
        vals = ratio[cand] ** 0.5 * sig[cand]
        for k in range(1, int(hi[ok].max()) + 1):
            sel = ok & (lo1 <= k) & (k <= hi)
            if np.any(sel):
                sums[k] = float(np.sum(vals[sel]))
                mk[k] = float(ratio[cand][sel].max())
    E_inf = max(sums.values()) if sums else 0.0
    return Energies(E, E_H, E_inf, mk, sums)


def wolff_energy(mu: DiscreteMeasure, ratio=None, A0=16):
    """Riemann sum of ``∫∫ r^{3/4} theta(x, r)^2 dr/r dmu`` on the grid ``diam * ratio^{-j}``.

    Returns ``(value, flagged)``; a singleton gives ``(0.0, True)``.
    """
    if mu.size < 2:
        return 0.0, True
    q = float(A0 if ratio is None else ratio)
    radii = radius_grid(mu, q)
    mass = _kernels.scale_masses(mu.points, mu.weights, radii)
    th = mass / radii ** mu.n
    inner = (radii ** 0.75 * th ** 2).sum(axis=1) * math.log(q)
    return float(np.dot(mu.weights, inner)), False


def radius_grid(mu, ratio):
    """Geometric radii ``diam * ratio^{-j}``, ``j = 0..J`` with ``r_J >= r_min``."""
    if not ratio > 1:
        raise CoeffError("grid ratio must exceed 1")
    diam = mu.diameter
    r_min = mu.resolution
    if diam <= 0:
        return np.array([r_min])
    J = int(math.floor(math.log(diam / r_min) / math.log(ratio) + 1e-12)) if diam > r_min else 0
    radii = diam * ratio ** -np.arange(J + 1, dtype=float)
    return radii[radii >= r_min * (1 - 1e-12)]
