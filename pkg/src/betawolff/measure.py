"""Finite weighted atom clouds standing in for Radon measures.

A :class:`DiscreteMeasure` is a set of weighted points in ``R^d`` with
``d = n + 1``.  The resolution scale ``r_min`` is the floor below which radii
are not resolved by the cloud; it defaults to the smallest positive pairwise
distance.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels


class MeasureError(ValueError):
    """Invalid measure data or generator parameters."""


class ParseError(MeasureError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class EmptyMeasureError(MeasureError):
    pass


@dataclass(frozen=True)
class Ball:
    """Closed ball ``{y : |y - center| <= radius}``."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise MeasureError(f"ball radius must be positive, got {self.radius}")

    def scaled(self, factor):
        return Ball(self.center, self.radius * factor)


def _min_positive_distance(points):
    if len(points) < 2:
        return None
    tree = cKDTree(points)
    k = min(len(points), 8)
    dist, _ = tree.query(points, k=k)
    pos = dist[dist > 0]
    if pos.size and (k == len(points) or np.all(dist[:, -1] > 0)):
        return float(pos.min())
    # many coincident atoms: fall back to the exhaustive pass
    best = math.inf
    for i in range(len(points)):
        d = np.sqrt(((points[i + 1:] - points[i]) ** 2).sum(axis=1))
        d = d[d > 0]
        if d.size:
            best = min(best, float(d.min()))
    return best if math.isfinite(best) else None


@dataclass
class DiscreteMeasure:
    """Weighted atoms ``sum_i w_i delta_{x_i}`` in ``R^{n+1}``.

    Parameters
    ----------
    points : (N, d) array
    weights : (N,) array of positive reals
    n : int
        Dimension of the Riesz kernel / densities; must equal ``d - 1``.
    r_min : float, optional
        Resolution scale.  Defaults to the smallest positive pairwise distance.
    """

    points: np.ndarray
    weights: np.ndarray
    n: int
    r_min: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, copy=True)
        wts = np.array(self.weights, dtype=float, copy=True).reshape(-1)
        if pts.ndim != 2:
            raise MeasureError("points must be a 2-d array")
        if len(pts) == 0:
            raise EmptyMeasureError("measure has no atoms")
        if len(wts) != len(pts):
            raise MeasureError("points and weights differ in length")
        if int(self.n) < 1 or pts.shape[1] != int(self.n) + 1:
            raise MeasureError(f"ambient dimension {pts.shape[1]} != n + 1 with n={self.n}")
        if not np.all(np.isfinite(pts)):
            raise MeasureError("non-finite coordinate")
        if not np.all(np.isfinite(wts)) or np.any(wts <= 0):
            raise MeasureError("weights must be positive and finite")
        pts.setflags(write=False)
        wts.setflags(write=False)
        self.points = pts
        self.weights = wts
        self.n = int(self.n)
        self.r_min_flagged = False
        if self.r_min is None:
            self.r_min = _min_positive_distance(pts)
            if self.r_min is None:
                # singleton, or all atoms coincide
                self.r_min_flagged = True
        elif not self.r_min > 0:
            raise MeasureError("r_min must be positive")
        self._order = None
        self._diam = None

    # basic attributes --------------------------------------------------
    @property
    def d(self):
        return self.points.shape[1]

    @property
    def size(self):
        return len(self.weights)

    def __len__(self):
        return self.size

    @property
    def total_mass(self):
        return float(self.weights.sum())

    @property
    def diameter(self):
        if self.size < 2:
            return 0.0
        if self._diam is None:
            self._diam = math.sqrt(_kernels.max_sq_distance(self.points))
        return self._diam

    @property
    def resolution(self):
        """``r_min``, or 1.0 for a singleton without a declared scale."""
        return self.r_min if self.r_min is not None else 1.0

    def scaled(self, t):
        """The measure ``t * mu``."""
        return DiscreteMeasure(self.points, self.weights * t, self.n, self.r_min, dict(self.meta))

    def transformed(self, rotation=None, shift=None, scale=1.0):
        """Image under ``x -> scale * rotation @ x + shift`` (weights unchanged)."""
        pts = self.points
        if rotation is not None:
            pts = pts @ np.asarray(rotation, dtype=float).T
        pts = pts * scale
        if shift is not None:
            pts = pts + np.asarray(shift, dtype=float)
        r_min = None if self.r_min is None else self.r_min * scale
        return DiscreteMeasure(pts, self.weights, self.n, r_min, dict(self.meta))

    def restricted(self, idx):
        idx = np.asarray(idx)
        return DiscreteMeasure(self.points[idx], self.weights[idx], self.n, self.r_min, dict(self.meta))

    def sort_order(self):
        """Atom order by first coordinate, cached for the compiled ball queries."""
        if self._order is None:
            order = np.argsort(self.points[:, 0], kind="stable")
            self._order = (order, np.ascontiguousarray(self.points[order, 0]))
        return self._order

    def ball_masses(self, centers, radii):
        """Vectorised :func:`ball_mass` over many closed balls."""
        centers = np.atleast_2d(np.asarray(centers, dtype=float))
        radii = np.broadcast_to(np.asarray(radii, dtype=float), (len(centers),)).copy()
        order, xs = self.sort_order()
        mass, _, _ = _kernels.ball_moments(self.points, self.weights, order, xs,
                                           centers, radii, False)
        return mass

    def ball_moments(self, centers, radii):
        centers = np.atleast_2d(np.asarray(centers, dtype=float))
        radii = np.broadcast_to(np.asarray(radii, dtype=float), (len(centers),)).copy()
        order, xs = self.sort_order()
        return _kernels.ball_moments(self.points, self.weights, order, xs, centers, radii, True)


# ----------------------------------------------------------------------
# ingestion

def load_measure(path, n=None):
    """Read a measure from CSV (``x_1,...,x_d,w`` per row) or JSON.

    The JSON form is ``{"n": 1, "atoms": [[x..., w], ...]}``; ``n`` from the
    file is used when the argument is omitted.
    """
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(str(exc), exc.lineno) from exc
        if n is None:
            n = doc.get("n")
        if n is None:
            raise MeasureError("n not given")
        rows = doc.get("atoms", [])
        r_min = doc.get("r_min")
        return _from_rows(rows, int(n), [None] * len(rows), r_min)
    if n is None:
        raise MeasureError("n must be given for CSV input")
    rows, lines = [], []
    for lineno, row in enumerate(csv.reader(text.splitlines()), start=1):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            rows.append([float(c) for c in row])
        except ValueError:
            raise ParseError(f"cannot parse {row!r}", lineno) from None
        lines.append(lineno)
    return _from_rows(rows, int(n), lines)


def _from_rows(rows, n, lines, r_min=None):
    d = n + 1
    if not rows:
        raise EmptyMeasureError("measure has no atoms")
    for row, line in zip(rows, lines):
        if len(row) != d + 1:
            raise ParseError(f"expected {d + 1} fields, got {len(row)}", line)
        if not row[-1] > 0 or not math.isfinite(row[-1]):
            raise MeasureError(f"line {line}: weight must be positive, got {row[-1]}")
    arr = np.asarray(rows, dtype=float)
    return DiscreteMeasure(arr[:, :d], arr[:, d], n, r_min)


def save_measure(mu, path):
    path = Path(path)
    if path.suffix.lower() == ".json":
        atoms = [list(map(float, p)) + [float(w)] for p, w in zip(mu.points, mu.weights)]
        doc = {"n": mu.n, "atoms": atoms}
        from ._io import dumps
        path.write_text(dumps(doc) + "\n")
        return
    with path.open("w") as fh:
        for p, w in zip(mu.points, mu.weights):
            fh.write(",".join(f"{v:.17g}" for v in (*p, w)) + "\n")


# ----------------------------------------------------------------------
# generators

def _pad(coords, d):
    out = np.zeros((coords.shape[0], d))
    out[:, :coords.shape[1]] = coords
    return out


def generate(kind, n=1, **params):
    """Synthetic measures: ``segment``, ``circle``, ``lipschitz_graph``, ``cantor4``.

    >>> generate("segment", N=2).points.tolist()
    [[0.0, 0.0], [1.0, 0.0]]
    """
    d = n + 1
    if kind == "segment":
        N = _count(params, "N")
        t = np.linspace(0.0, 1.0, N) if N > 1 else np.zeros(1)
        mu = DiscreteMeasure(_pad(t[:, None], d), np.full(N, 1.0 / N), n)
    elif kind == "circle":
        N = _count(params, "N")
        ang = 2 * np.pi * np.arange(N) / N
        mu = DiscreteMeasure(_pad(np.column_stack([np.cos(ang), np.sin(ang)]), d),
                             np.full(N, 1.0 / N), n)
    elif kind == "lipschitz_graph":
        N = _count(params, "N")
        slope = float(params.get("slope_bound", 1.0))
        if not slope > 0:
            raise MeasureError("slope_bound must be positive")
        t = np.linspace(0.0, 1.0, N)
        # |f'| = slope * |cos(2 pi t) + cos(6 pi t)| / 2 <= slope
        f = slope * (np.sin(2 * np.pi * t) / (4 * np.pi) + np.sin(6 * np.pi * t) / (12 * np.pi))
        pts = _pad(np.column_stack([t, f]), d)
        seg = np.sqrt((np.diff(pts, axis=0) ** 2).sum(axis=1))
        wts = np.zeros(N)
        wts[:-1] += seg / 2
        wts[1:] += seg / 2
        if N == 1:
            wts[:] = 1.0
        mu = DiscreteMeasure(pts, wts, n)
    elif kind == "cantor4":
        if d != 2:
            raise MeasureError("cantor4 requires ambient dimension 2 (n=1)")
        g = _count(params, "g")
        lam = float(params.get("ratio", 0.25))
        if not 0 < lam <= 0.5:
            raise MeasureError("cantor4 ratio must lie in (0, 1/2]")
        centers = np.zeros((1, 2))
        side = 1.0
        corners = np.array([[-1, -1], [1, -1], [-1, 1], [1, 1]], dtype=float)
        for _ in range(g):
            off = corners * (1 - lam) * side / 2
            centers = (centers[:, None, :] + off[None, :, :]).reshape(-1, 2)
            side *= lam
        mu = DiscreteMeasure(centers, np.full(len(centers), 4.0 ** -g), n)
    else:
        raise MeasureError(f"unknown generator {kind!r}")
    mu.meta = {"generator": kind, "params": dict(params)}
    return mu


def _count(params, key):
    try:
        v = int(params[key])
    except KeyError:
        raise MeasureError(f"missing parameter {key}") from None
    if v <= 0:
        raise MeasureError(f"{key} must be positive")
    return v


# ----------------------------------------------------------------------
# queries

def ball_mass(mu, ball):
    """``mu(B)`` for a closed ball."""
    d2 = ((mu.points - ball.center) ** 2).sum(axis=1)
    return float(mu.weights[d2 <= ball.radius ** 2].sum())


@dataclass
class GrowthResult:
    theta0: float
    flagged: bool = False

    def __float__(self):
        return self.theta0


def growth_constant(mu):
    """Smallest ``theta0`` with ``mu(B(x, r)) <= theta0 r^n`` for atoms ``x`` and ``r >= r_min``.

    Exact over the candidate radii (pairwise distances and ``r_min``, floored
    at ``r_min``).  A singleton returns ``w / r_min**n`` flagged.
    """
    if mu.size == 1 or mu.r_min is None:
        r = mu.resolution
        return GrowthResult(float(mu.weights.sum()) / r ** mu.n, True)
    rows = _kernels.growth_rows(mu.points, mu.weights, mu.n, float(mu.r_min), 8)
    return GrowthResult(float(rows.max()))
