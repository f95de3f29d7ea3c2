"""Nested cube lattice on a discrete measure (a practical David--Mattila variant).

Level ``k`` works at scale ``s_k = u * A0**-k``.  The unit ``u`` is chosen so
that the root radius (the bounding radius about the root center) equals
``c * u`` with ``k0 = 0``; by default ``c = C0``, which makes the root ball as
tight as the radius range allows and keeps the root density in the same
bucket range as the densities further down.  Children of a level-``k`` cube are built by

1. seeding one center per parent (the heaviest ``s_{k+1}``-ball among the
   parent's atoms near its center),
2. greedily adding centers from all atoms by decreasing ball weight, keeping
   centers ``10 s_{k+1}`` apart,
3. assigning each atom to the nearest center of its own parent,
4. clamping the radius into ``[s_{k+1}, C0 s_{k+1}]``.

Partition, nesting, center separation and the radius range hold by
construction.  The ball sandwich ``E ∩ B(Q) ⊂ Q ⊂ 28 B(Q)`` and the small
boundary property are only measured (see :func:`diagnostics`).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels
from .measure import DiscreteMeasure, EmptyMeasureError

SIDE_FACTOR = 56.0  # ell(Q) = 56 * C0 * s_k
BALL_FACTOR = 28.0  # B_Q = 28 B(Q)


class LatticeError(ValueError):
    pass


@dataclass(frozen=True)
class Cube:
    """Read-only view of one cube of a :class:`Lattice`."""

    id: int
    level: int
    center: np.ndarray
    center_atom: int
    radius: float
    side: float
    parent: int | None
    children: tuple
    atoms: np.ndarray
    mass: float
    doubling: bool
    containment: float
    leaf: bool

    @property
    def ball_q(self):
        """Radius of ``B_Q = 28 B(Q)``."""
        return BALL_FACTOR * self.radius


class Lattice:
    """Flat-array cube hierarchy.

    Cube ids are assigned level by level; the children of a cube have
    consecutive ids.  ``perm`` reorders the atoms so that every cube owns the
    contiguous slice ``perm[start[q]:stop[q]]``.
    """

    def __init__(self, mu, A0, C0, unit, level, center_atom, radius, parent,
                 child_start, child_count, leaf, perm, start, stop, mass, labels):
        self.mu = mu
        self.A0 = A0
        self.C0 = C0
        self.unit = unit
        self.level = level
        self.center_atom = center_atom
        self.radius = radius
        self.parent = parent
        self.child_start = child_start
        self.child_count = child_count
        self.leaf = leaf
        self.perm = perm
        self.start = start
        self.stop = stop
        self.mass = mass
        self.labels = labels  # labels[k][atom] -> level-k cube id or -1
        self.scale = unit * float(A0) ** -level.astype(float)
        self.side = SIDE_FACTOR * C0 * self.scale
        self.centers = mu.points[center_atom]
        self.count = stop - start
        spread = np.zeros(len(level))
        for q in range(len(level)):
            idx = perm[start[q]:stop[q]]
            spread[q] = np.sqrt(((mu.points[idx] - self.centers[q]) ** 2).sum(axis=1)).max()
        self.spread = spread
        self.containment = spread / radius
        self.db = self._doubling_flags()
        self._anc = None
        self._tree = None

    # ------------------------------------------------------------------
    @property
    def n_cubes(self):
        return len(self.level)

    @property
    def depth(self):
        return int(self.level.max())

    @property
    def root(self):
        return 0

    def cube(self, q):
        q = self._check(q)
        cs, cc = self.child_start[q], self.child_count[q]
        return Cube(
            id=q, level=int(self.level[q]), center=self.centers[q],
            center_atom=int(self.center_atom[q]), radius=float(self.radius[q]),
            side=float(self.side[q]),
            parent=None if self.parent[q] < 0 else int(self.parent[q]),
            children=tuple(range(cs, cs + cc)), atoms=self.atoms(q),
            mass=float(self.mass[q]), doubling=bool(self.db[q]),
            containment=float(self.containment[q]), leaf=bool(self.leaf[q]),
        )

    def _check(self, q):
        q = int(q)
        if not 0 <= q < self.n_cubes:
            raise LatticeError(f"unknown cube id {q}")
        return q

    def atoms(self, q):
        return self.perm[self.start[q]:self.stop[q]]

    def children(self, q):
        cs = self.child_start[q]
        return np.arange(cs, cs + self.child_count[q])

    def cubes_at(self, k):
        return np.flatnonzero(self.level == k)

    def kdtree(self):
        if self._tree is None:
            self._tree = cKDTree(self.mu.points)
        return self._tree

    def ancestors(self):
        """``(n_cubes, depth + 1)`` table: ``anc[q, j]`` is the level-``j`` ancestor of ``q``
        (``q`` itself at its own level, -1 at deeper levels)."""
        if self._anc is None:
            anc = np.full((self.n_cubes, self.depth + 1), -1, dtype=np.int64)
            for q in range(self.n_cubes):
                k = self.level[q]
                anc[q, k] = q
                p = self.parent[q]
                if p >= 0:
                    anc[q, :k] = anc[p, :k]
            self._anc = anc
        return self._anc

    def ancestor_chain(self, q):
        """``q`` and its ancestors, root last."""
        out = [int(q)]
        while self.parent[out[-1]] >= 0:
            out.append(int(self.parent[out[-1]]))
        return out

    def descendants(self, q, include_self=True):
        anc = self.ancestors()
        k = self.level[q]
        mask = anc[:, k] == q
        if not include_self:
            mask[q] = False
        return np.flatnonzero(mask)

    def _doubling_flags(self):
        r = self.radius
        small = self.mu.ball_masses(self.centers, r)
        big = self.mu.ball_masses(self.centers, 100.0 * r)
        self.mass_ball = small
        return big <= self.C0 * small

    # ------------------------------------------------------------------
    def neighborhood(self, q, lam):
        """Same-level cubes ``P`` with ``dist(x_Q, P) <= lam * ell(Q)`` (the family ``lam Q``)."""
        q = self._check(q)
        if lam < 1:
            raise LatticeError("lambda must be >= 1")
        k = self.level[q]
        idx = self.kdtree().query_ball_point(self.centers[q], lam * self.side[q])
        lab = self.labels[k][np.asarray(idx, dtype=np.int64)]
        out = np.unique(lab[lab >= 0])
        return out

    def region(self, q, lam):
        """``D_mu(lam Q)``: the members of ``lam Q`` and all their descendants."""
        members = self.neighborhood(q, lam)
        anc = self.ancestors()
        k = self.level[q]
        return np.flatnonzero(np.isin(anc[:, k], members))

    def boundary_mass(self, q, l):
        """``mu(N_l(Q))``: atoms within ``A0**(-k-l)`` (root-normalised) of the boundary of ``Q``."""
        q = self._check(q)
        rho = self.scale[q] * float(self.A0) ** -int(l)
        inside = np.zeros(self.mu.size, dtype=bool)
        inside[self.atoms(q)] = True
        if inside.all() or not inside.any():
            return 0.0
        pin = self.mu.points[inside]
        pout = self.mu.points[~inside]
        d_out, _ = cKDTree(pin).query(pout)
        d_in, _ = cKDTree(pout).query(pin)
        w = self.mu.weights
        return float(w[~inside][d_out < rho].sum() + w[inside][d_in < rho].sum())

    # ------------------------------------------------------------------
    def to_dict(self):
        def node(q):
            return {
                "id": int(q), "k": int(self.level[q]),
                "center": [float(v) for v in self.centers[q]],
                "r": float(self.radius[q]), "ell": float(self.side[q]),
                "mass": float(self.mass[q]), "db": bool(self.db[q]),
                "f": float(self.containment[q]),
                "children": [node(c) for c in self.children(q)],
            }
        return node(0)


def build_lattice(mu: DiscreteMeasure, A0=16, C0=30.0, root_c=None) -> Lattice:
    """Build the nested lattice on ``mu``.

    ``root_c`` (in ``[1, C0]``, default ``C0``) fixes the unit through
    ``r(root) = root_c * u``.

    Raises
    ------
    LatticeError
        ``A0`` not an integer ``>= 16`` or ``C0 < 30``.
    """
    if mu is None or mu.size == 0:
        raise EmptyMeasureError("measure has no atoms")
    if int(A0) != A0 or A0 < 16:
        raise LatticeError("A0 must be an integer >= 16")
    if not C0 >= 30:
        raise LatticeError("C0 must be >= 30")
    A0 = int(A0)
    C0 = float(C0)
    X = mu.points
    w = mu.weights
    N = mu.size
    r_min = mu.r_min
    order, xs = mu.sort_order()

    centroid = (w[:, None] * X).sum(axis=0) / w.sum()
    root_center = int(np.argmin(((X - centroid) ** 2).sum(axis=1)))
    spread = float(np.sqrt(((X - X[root_center]) ** 2).sum(axis=1)).max())
    c = C0 if root_c is None else float(root_c)
    if not 1.0 <= c <= C0:
        raise LatticeError("root_c must lie in [1, C0]")
    unit = spread / c if spread > 0 else mu.resolution

    level = [0]
    center_atom = [root_center]
    radius = [min(max(spread, unit), C0 * unit)]
    parent = [-1]
    members = [np.arange(N)]
    leaf = [_is_leaf(spread, radius[0], N, r_min)]
    labels = [np.zeros(N, dtype=np.int64)]

    frontier = [0] if not leaf[0] else []
    k = 0
    while frontier:
        k += 1
        s = unit * float(A0) ** -k
        parent_of = np.full(N, -1, dtype=np.int64)
        for slot, p in enumerate(frontier):
            parent_of[members[p]] = slot
        active = np.flatnonzero(parent_of >= 0)
        bw = np.zeros(N)
        bw[active] = mu.ball_masses(X[active], np.full(len(active), s))
        pc = np.array([center_atom[p] for p in frontier], dtype=np.int64)
        seeds = _kernels.seed_centers(X, parent_of, pc, len(frontier), bw,
                                      5.0 * (A0 - 1) * s)
        cand = active[np.lexsort((active, -bw[active]))]
        centers = _kernels.greedy_centers(X, order, xs, cand, seeds, 10.0 * s)
        cpar = parent_of[centers]
        # group by parent, keeping global center order inside a parent
        grp = np.lexsort((np.arange(len(centers)), cpar))
        centers = centers[grp]
        cpar = cpar[grp]
        ccount = np.bincount(cpar, minlength=len(frontier)).astype(np.int64)
        cstart = np.concatenate([[0], np.cumsum(ccount)[:-1]]).astype(np.int64)
        owner = _kernels.assign_nearest(X, parent_of, centers, cstart, ccount)

        lab = np.full(N, -1, dtype=np.int64)
        base = len(level)
        lab[active] = base + owner[active]
        by_center = np.argsort(owner[active], kind="stable")
        groups = np.split(active[by_center],
                          np.cumsum(np.bincount(owner[active], minlength=len(centers)))[:-1])
        new_frontier = []
        for t, c in enumerate(centers):
            idx = groups[t]
            dmax = float(np.sqrt(((X[idx] - X[c]) ** 2).sum(axis=1)).max())
            r = min(max(dmax, s), C0 * s)
            q = len(level)
            level.append(k)
            center_atom.append(int(c))
            radius.append(r)
            parent.append(frontier[cpar[t]])
            members.append(idx)
            is_leaf = _is_leaf(dmax, r, len(idx), r_min)
            leaf.append(is_leaf)
            if not is_leaf:
                new_frontier.append(q)
        labels.append(lab)
        frontier = new_frontier

    level = np.asarray(level, dtype=np.int64)
    parent = np.asarray(parent, dtype=np.int64)
    nq = len(level)
    child_count = np.bincount(parent[1:], minlength=nq).astype(np.int64)
    child_start = np.zeros(nq, dtype=np.int64)
    for q in range(nq - 1, 0, -1):
        child_start[parent[q]] = q
    child_start[child_count == 0] = 0

    # one-time reordering so each cube owns a contiguous slice
    keys = [np.arange(N)] + [labels[j] for j in range(len(labels) - 1, -1, -1)]
    perm = np.lexsort(keys)
    start = np.zeros(nq, dtype=np.int64)
    stop = np.zeros(nq, dtype=np.int64)
    for j, lab in enumerate(labels):
        seq = lab[perm]
        ids, first, cnt = np.unique(seq, return_index=True, return_counts=True)
        keep = ids >= 0
        start[ids[keep]] = first[keep]
        stop[ids[keep]] = first[keep] + cnt[keep]

    leaf = np.asarray(leaf, dtype=bool)
    mass = np.zeros(nq)
    for q in range(nq - 1, -1, -1):
        if child_count[q] == 0:
            mass[q] = float(np.sum(w[np.sort(members[q])]))
        else:
            cs = child_start[q]
            acc = 0.0
            for c in range(cs, cs + child_count[q]):
                acc += mass[c]
            mass[q] = acc

    return Lattice(mu, A0, C0, unit, level, np.asarray(center_atom, dtype=np.int64),
                   np.asarray(radius), parent, child_start, child_count, leaf, perm,
                   start, stop, mass, labels)


def _is_leaf(spread, r, count, r_min):
    if count <= 1 or spread == 0.0:
        return True
    return r_min is not None and r <= r_min


# ----------------------------------------------------------------------
# invariant checks and diagnostics

def check_invariants(lat: Lattice):
    """Count violations of the structural invariants (all should be zero)."""
    N = lat.mu.size
    out = {"partition": 0, "nesting": 0, "mass_additivity": 0,
           "center_separation": 0, "radius_range": 0, "contiguity": 0}
    for k in range(lat.depth + 1):
        cubes = np.flatnonzero((lat.level == k) | (lat.leaf & (lat.level < k)))
        allatoms = np.sort(np.concatenate([lat.atoms(q) for q in cubes]))
        if len(allatoms) != N or np.any(allatoms != np.arange(N)):
            out["partition"] += 1
        centers = lat.centers[lat.level == k]
        if len(centers) > 1:
            sep = 10.0 * lat.unit * float(lat.A0) ** -k
            pairs = cKDTree(centers).query_pairs(sep, output_type="ndarray")
            if len(pairs):
                dd = np.sqrt(((centers[pairs[:, 0]] - centers[pairs[:, 1]]) ** 2).sum(axis=1))
                out["center_separation"] += int(np.sum(dd < sep))
    w = lat.mu.weights
    for q in range(lat.n_cubes):
        s = lat.scale[q]
        if not (s * (1 - 1e-12) <= lat.radius[q] <= lat.C0 * s * (1 + 1e-12)):
            out["radius_range"] += 1
        own = lat.atoms(q)
        if lat.labels[lat.level[q]][own].tolist() != [q] * len(own):
            out["contiguity"] += 1
        if abs(lat.mass[q] - w[own].sum()) > 1e-12 * lat.mass[q]:
            out["mass_additivity"] += 1
        kids = lat.children(q)
        if len(kids):
            union = np.sort(np.concatenate([lat.atoms(c) for c in kids]))
            if not np.array_equal(union, np.sort(own)):
                out["nesting"] += 1
            if lat.mass[q] != sum(float(lat.mass[c]) for c in kids):
                out["mass_additivity"] += 1
            if np.any(lat.parent[kids] != q):
                out["nesting"] += 1
    return out


def diagnostics(lat: Lattice, levels_l=(1, 2, 3)):
    """Measured (not guaranteed) properties of the lattice.

    Returns the worst containment factor ``f(Q)``, the number of cubes
    with ``f(Q) > 28``, the mass of ``E ∩ B(Q)`` outside ``Q`` summed over
    cubes, and per ``l`` the worst ratio ``mu(N_l(Q)) / mu(90 B(Q))``.
    """
    mu = lat.mu
    tree = lat.kdtree()
    leak = 0.0
    for q in range(lat.n_cubes):
        idx = np.asarray(tree.query_ball_point(lat.centers[q], lat.radius[q]), dtype=np.int64)
        outside = lat.labels[lat.level[q]][idx] != q
        leak += float(mu.weights[idx[outside]].sum())
    m90 = mu.ball_masses(lat.centers, 90.0 * lat.radius)
    sb = {}
    for l in levels_l:
        worst = 0.0
        for q in range(1, lat.n_cubes):
            worst = max(worst, lat.boundary_mass(q, l) / m90[q])
        sb[int(l)] = worst
    return {
        "max_containment": float(lat.containment.max()),
        "containment_over_28": int(np.sum(lat.containment > 28.0)),
        "ball_leak_mass": leak,
        "small_boundary": sb,
        "doubling_fraction": float(lat.db.mean()),
    }
