"""Slow, obviously-correct reference implementations used by the tests."""
import itertools
import math

import numpy as np


def ball_mass(points, weights, center, radius):
    tot = 0.0
    for p, w in zip(points, weights):
        if math.dist(p, center) <= radius:
            tot += w
    return tot


def growth_constant(points, weights, n, r_min):
    best = 0.0
    N = len(points)
    for i in range(N):
        cands = {r_min} | {math.dist(points[i], points[j]) for j in range(N) if j != i}
        for r in cands:
            r = max(r, r_min)
            best = max(best, ball_mass(points, weights, points[i], r) / r ** n)
    return best


def beta2_grid(points, weights, center, radius, n_angles=10_000, n_offsets=100):
    """Brute-force min over lines ``{y : y . nu = c}`` of ``sum w dist^2 / r^3`` (planar, n = 1)."""
    P = np.asarray(points, float)
    w = np.asarray(weights, float)
    inside = np.sqrt(((P - center) ** 2).sum(axis=1)) <= radius
    P, w = P[inside], w[inside]
    if not len(w):
        return 0.0
    g = (w[:, None] * P).sum(axis=0) / w.sum()
    ang = np.linspace(0.0, np.pi, n_angles, endpoint=False)
    nu = np.column_stack([np.cos(ang), np.sin(ang)])
    proj = (P - g) @ nu.T                       # (atoms, angles)
    offs = np.linspace(-0.5 * radius, 0.5 * radius, n_offsets - 1)
    offs = np.concatenate([offs, [0.0]])
    s0, s1, s2 = w.sum(), w @ proj, w @ proj ** 2
    # sum_i w_i (p_i - c)^2 for every (angle, offset)
    tot = s2[:, None] - 2 * s1[:, None] * offs[None, :] + s0 * offs[None, :] ** 2
    return math.sqrt(max(tot.min(), 0.0) / radius ** 3)


def riesz_field(points, weights, n, targets=None, eps=0.0):
    P = np.asarray(points, float)
    T = P if targets is None else np.atleast_2d(np.asarray(targets, float))
    out = np.zeros_like(T)
    for m, t in enumerate(T):
        for p, w in zip(P, weights):
            r = math.dist(t, p)
            if r > eps:
                out[m] += w * (t - p) / r ** (n + 1)
    return out


def truncated_profile_max(points, weights, n, x, eps_min):
    """``max_eps |R_eps mu(x)|`` over eps in ``{eps_min} ∪ {distances >= eps_min}``."""
    d = [math.dist(x, p) for p in points]
    best = 0.0
    for eps in [eps_min] + [v for v in d if v >= eps_min]:
        f = riesz_field(points, weights, n, [x], eps)[0]
        best = max(best, float(np.linalg.norm(f)))
    return best


def hd_scan(table, q, k):
    """hd^k(q) by walking every strictly smaller non-leaf cube and its ancestor chain."""
    lat = table.lat
    j = lat.level[q]
    target = table.bucket[q] + k
    out = []
    for p in range(lat.n_cubes):
        if lat.level[p] <= j or lat.leaf[p] or table.bucket[p] < target:
            continue
        a = lat.parent[p]
        maximal = True
        while a >= 0 and lat.level[a] > j:
            if table.bucket[a] >= target and not lat.leaf[a]:
                maximal = False
                break
            a = lat.parent[a]
        if maximal:
            out.append(p)
    return sorted(out)


def pairs(n):
    return itertools.combinations(range(n), 2)
