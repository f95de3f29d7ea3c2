"""Compiled inner loops shared by the measure, coefficient and Riesz modules.

Everything here works on plain float64 arrays.  Loops are sequential in
ascending atom index so that results are bit-stable between runs.
"""
import math
import warnings

import numpy as np
from numba import njit, prange
from numba.core.errors import NumbaWarning

# an outdated system TBB only means numba falls back to another threading layer
warnings.filterwarnings("ignore", message="The TBB threading layer", category=NumbaWarning)


@njit(cache=True)
def _sq(a, b):
    s = 0.0
    for c in range(a.shape[0]):
        t = a[c] - b[c]
        s += t * t
    return s


@njit(cache=True)
def ball_moments(X, w, order, xs, centers, radii, with_moments):
    """Weighted mass and raw moments of the closed balls ``B(centers[m], radii[m])``.

    ``order`` sorts the atoms by first coordinate and ``xs`` holds those sorted
    coordinates; the search window is cut with a binary search on that axis.
    Moments are taken about the ball center.
    """
    m_count = centers.shape[0]
    d = X.shape[1]
    mass = np.zeros(m_count)
    first = np.zeros((m_count, d))
    second = np.zeros((m_count, d, d))
    for m in range(m_count):
        c = centers[m]
        r = radii[m]
        r2 = r * r
        lo = np.searchsorted(xs, c[0] - r, side="left")
        hi = np.searchsorted(xs, c[0] + r, side="right")
        # window is in sorted order; re-sort indices so summation follows atom index
        idx = np.sort(order[lo:hi])
        for t in range(idx.shape[0]):
            j = idx[t]
            if _sq(X[j], c) <= r2:
                wj = w[j]
                mass[m] += wj
                if with_moments:
                    for a in range(d):
                        va = X[j, a] - c[a]
                        first[m, a] += wj * va
                        for b in range(d):
                            second[m, a, b] += wj * va * (X[j, b] - c[b])
    return mass, first, second


@njit(cache=True)
def _bin_of(dist2, radii2):
    """Largest index j with radii2[j] >= dist2 (radii2 descending); -1 if none."""
    lo = 0
    hi = radii2.shape[0] - 1
    if dist2 > radii2[0]:
        return -1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if radii2[mid] >= dist2:
            lo = mid
        else:
            hi = mid - 1
    return lo


@njit(cache=True)
def scale_moments(X, w, radii):
    """Mass, first and second moments of every ``B(x_i, r_j)``.

    ``radii`` must be strictly decreasing.  Each pair is visited once; its
    contribution lands in the smallest ball containing it and a suffix sum
    over the radius index spreads it to all larger balls.  Moments of ball
    ``(i, j)`` are taken about ``x_i``.
    """
    N, d = X.shape
    J = radii.shape[0]
    radii2 = radii * radii
    mass = np.zeros((N, J))
    first = np.zeros((N, J, d))
    second = np.zeros((N, J, d, d))
    v = np.empty(d)
    for i in range(N):
        b = _bin_of(0.0, radii2)
        mass[i, b] += w[i]
        for j in range(i + 1, N):
            dist2 = 0.0
            for a in range(d):
                v[a] = X[j, a] - X[i, a]
                dist2 += v[a] * v[a]
            b = _bin_of(dist2, radii2)
            if b < 0:
                continue
            wi = w[i]
            wj = w[j]
            mass[i, b] += wj
            mass[j, b] += wi
            for a in range(d):
                first[i, b, a] += wj * v[a]
                first[j, b, a] -= wi * v[a]
                for c in range(d):
                    vv = v[a] * v[c]
                    second[i, b, a, c] += wj * vv
                    second[j, b, a, c] += wi * vv
    for i in range(N):
        for b in range(J - 2, -1, -1):
            mass[i, b] += mass[i, b + 1]
            for a in range(d):
                first[i, b, a] += first[i, b + 1, a]
                for c in range(d):
                    second[i, b, a, c] += second[i, b + 1, a, c]
    return mass, first, second


@njit(cache=True)
def scale_masses(X, w, radii):
    """Mass-only variant of :func:`scale_moments`."""
    N, d = X.shape
    J = radii.shape[0]
    radii2 = radii * radii
    mass = np.zeros((N, J))
    for i in range(N):
        b = _bin_of(0.0, radii2)
        mass[i, b] += w[i]
        for j in range(i + 1, N):
            b = _bin_of(_sq(X[i], X[j]), radii2)
            if b < 0:
                continue
            mass[i, b] += w[j]
            mass[j, b] += w[i]
    for i in range(N):
        for b in range(J - 2, -1, -1):
            mass[i, b] += mass[i, b + 1]
    return mass


@njit(cache=True)
def growth_rows(X, w, n, r_min, fine):
    """Per-atom maximum of ``mu(B(x_i, r)) / r**n`` over the candidate radii.

    Candidate radii are the distances ``|x_i - x_j|`` and ``r_min``, clamped
    below by ``r_min``.  Distances are first histogrammed on a geometric grid
    of ratio ``2**(1/fine)``; only bins whose upper bound can beat the running
    maximum are sorted, so the result is exact while most rows stay O(N).
    """
    N, d = X.shape
    out = np.zeros(N)
    max_d2 = max_sq_distance(X)
    span = math.sqrt(max_d2) / r_min
    nb = 2
    if span > 1.0:
        nb = int(math.ceil(math.log2(span) * fine)) + 2
    edges = np.empty(nb)
    for b in range(nb):
        edges[b] = r_min * 2.0 ** (b / fine)
    edges2 = edges * edges
    dist = np.empty(N)
    bin_id = np.empty(N, dtype=np.int64)
    for i in range(N):
        bmass = np.zeros(nb)
        bmax = np.zeros(nb)
        for j in range(N):
            t = _sq(X[i], X[j])
            dist[j] = math.sqrt(t)
            # smallest b with edges2[b] >= t
            if t <= edges2[0]:
                b = 0
            else:
                b = int(math.ceil(0.5 * math.log2(t / edges2[0]) * fine))
                if b < 1:
                    b = 1
                if b > nb - 1:
                    b = nb - 1
                while b > 1 and edges2[b - 1] >= t:
                    b -= 1
                while b < nb - 1 and edges2[b] < t:
                    b += 1
            bin_id[j] = b
            bmass[b] += w[j]
            if dist[j] > bmax[b]:
                bmax[b] = dist[j]
        cum = np.empty(nb)
        acc = 0.0
        for b in range(nb):
            acc += bmass[b]
            cum[b] = acc
        best = cum[0] / r_min ** n
        for b in range(1, nb):
            if bmass[b] > 0.0:
                val = cum[b] / bmax[b] ** n
                if val > best:
                    best = val
        for b in range(1, nb):
            if bmass[b] <= 0.0:
                continue
            if cum[b] / (edges[b - 1] * (1.0 - 1e-12)) ** n <= best:
                continue
            cnt = 0
            for j in range(N):
                if bin_id[j] == b:
                    cnt += 1
            dd = np.empty(cnt)
            ww = np.empty(cnt)
            cnt = 0
            for j in range(N):
                if bin_id[j] == b:
                    dd[cnt] = dist[j]
                    ww[cnt] = w[j]
                    cnt += 1
            srt = np.argsort(dd, kind="mergesort")
            acc = cum[b - 1]
            for t in range(cnt):
                acc += ww[srt[t]]
                val = acc / max(dd[srt[t]], r_min) ** n
                if val > best:
                    best = val
        out[i] = best
    return out


@njit(cache=True)
def max_sq_distance(X):
    best = 0.0
    for i in range(X.shape[0]):
        for j in range(i + 1, X.shape[0]):
            t = _sq(X[i], X[j])
            if t > best:
                best = t
    return best


@njit(cache=True, parallel=True)
def riesz_direct(X, w, T, n, eps):
    """Truncated Riesz field at targets ``T``: sum over atoms with ``|t - x_j| > eps``."""
    M = T.shape[0]
    N, d = X.shape
    F = np.zeros((M, d))
    eps2 = eps * eps
    for m in prange(M):
        acc = np.zeros(d)
        for j in range(N):
            r2 = _sq(T[m], X[j])
            if r2 > eps2:
                r = math.sqrt(r2)
                den = r ** (n + 1)
                for a in range(d):
                    acc[a] += w[j] * (T[m, a] - X[j, a]) / den
        for a in range(d):
            F[m, a] = acc[a]
    return F


@njit(cache=True, parallel=True)
def riesz_direct_abs(X, w, T, n, eps):
    """Like :func:`riesz_direct`, also returning ``sum_j w_j |K(t, x_j)|`` per target."""
    M = T.shape[0]
    N, d = X.shape
    F = np.zeros((M, d))
    S = np.zeros(M)
    eps2 = eps * eps
    for m in prange(M):
        acc = np.zeros(d)
        tot = 0.0
        for j in range(N):
            r2 = _sq(T[m], X[j])
            if r2 > eps2:
                r = math.sqrt(r2)
                den = r ** (n + 1)
                for a in range(d):
                    acc[a] += w[j] * (T[m, a] - X[j, a]) / den
                tot += w[j] / r ** n
        for a in range(d):
            F[m, a] = acc[a]
        S[m] = tot
    return F, S


@njit(cache=True, parallel=True)
def riesz_tree(X, w, T, n, eps, theta, centroid, cmass, size, child_start,
               child_count, leaf, start, stop, perm):
    """Monopole treecode over a cube hierarchy stored as flat arrays.

    A cube is used as a point mass at its weighted centroid when
    ``size / dist <= theta`` and every atom of it lies beyond ``eps``;
    otherwise it is opened, and leaves are summed directly.  Returns the
    field and the number of direct plus monopole interactions per target.
    """
    M = T.shape[0]
    d = X.shape[1]
    F = np.zeros((M, d))
    work = np.zeros(M, dtype=np.int64)
    n_cubes = centroid.shape[0]
    eps2 = eps * eps
    for m in prange(M):
        acc = np.zeros(d)
        stack = np.empty(n_cubes, dtype=np.int64)
        top = 0
        stack[0] = 0
        top = 1
        count = 0
        while top > 0:
            top -= 1
            q = stack[top]
            dist = math.sqrt(_sq(T[m], centroid[q]))
            if theta > 0.0 and size[q] <= theta * dist and dist - 0.5 * size[q] > eps:
                den = dist ** (n + 1)
                for a in range(d):
                    acc[a] += cmass[q] * (T[m, a] - centroid[q, a]) / den
                count += 1
            elif leaf[q] or child_count[q] == 0:
                for p in range(start[q], stop[q]):
                    j = perm[p]
                    r2 = _sq(T[m], X[j])
                    if r2 > eps2:
                        r = math.sqrt(r2)
                        den = r ** (n + 1)
                        for a in range(d):
                            acc[a] += w[j] * (T[m, a] - X[j, a]) / den
                    count += 1
            else:
                for c in range(child_start[q] + child_count[q] - 1, child_start[q] - 1, -1):
                    stack[top] = c
                    top += 1
        for a in range(d):
            F[m, a] = acc[a]
        work[m] = count
    return F, work


@njit(cache=True)
def seed_centers(X, parent_of, parent_center, n_parents, bw, radius):
    """Per parent, the atom within ``radius`` of the parent center with largest ``bw``.

    Ties go to the lowest atom index.  ``parent_of[i] < 0`` marks inactive atoms.
    """
    best = np.full(n_parents, -1, dtype=np.int64)
    r2 = radius * radius
    for i in range(X.shape[0]):
        p = parent_of[i]
        if p < 0:
            continue
        if _sq(X[i], X[parent_center[p]]) > r2:
            continue
        b = best[p]
        if b < 0 or bw[i] > bw[b]:
            best[p] = i
    return best


@njit(cache=True)
def greedy_centers(X, order, xs, candidates, seeds, sep):
    """Add centers in ``candidates`` order keeping pairwise distance >= ``sep``."""
    N = X.shape[0]
    blocked = np.zeros(N, dtype=np.bool_)
    chosen = np.empty(candidates.shape[0] + seeds.shape[0], dtype=np.int64)
    count = 0
    sep2 = sep * sep
    for t in range(seeds.shape[0] + candidates.shape[0]):
        if t < seeds.shape[0]:
            c = seeds[t]
        else:
            c = candidates[t - seeds.shape[0]]
            if blocked[c]:
                continue
        chosen[count] = c
        count += 1
        lo = np.searchsorted(xs, X[c, 0] - sep, side="left")
        hi = np.searchsorted(xs, X[c, 0] + sep, side="right")
        for p in range(lo, hi):
            j = order[p]
            if _sq(X[j], X[c]) < sep2:
                blocked[j] = True
    return chosen[:count]


@njit(cache=True)
def assign_nearest(X, parent_of, centers, cstart, ccount):
    """Index into ``centers`` of the nearest center sharing the atom's parent.

    Centers of parent ``p`` are ``centers[cstart[p]:cstart[p] + ccount[p]]``;
    the first minimum wins, i.e. the lowest center index on ties.
    """
    N = X.shape[0]
    out = np.full(N, -1, dtype=np.int64)
    for i in range(N):
        p = parent_of[i]
        if p < 0:
            continue
        best = -1
        bd = np.inf
        for t in range(cstart[p], cstart[p] + ccount[p]):
            dd = _sq(X[i], X[centers[t]])
            if dd < bd:
                bd = dd
                best = t
        out[i] = best
    return out
