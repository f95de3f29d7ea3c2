"""Both sides of the beta-Wolff / Riesz comparability, the Jones-Wolff potential and capacity.

The left side is the square function ``∬ beta_2(x, r)^2 theta(x, r) dr/r dmu``,
either summed over lattice cubes or as a Riemann sum on a geometric radius
grid.  The right side is ``||R mu||^2_{L^2(mu)} + theta0^2 ||mu||``.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _io, _kernels
from .coeffs import CoeffTable, _beta2_stack, radius_grid
from .lattice import build_lattice
from .measure import DiscreteMeasure, MeasureError, generate, growth_constant
from .riesz import riesz_energy

DEFAULT_GRID_RATIO = 2.0


class VerifyError(ValueError):
    pass


# ----------------------------------------------------------------------
# left-hand side

def _grid_terms(mu, ratio):
    """Per-atom ``sum_j beta^2 theta ln(ratio)`` over the radius grid."""
    radii = radius_grid(mu, ratio)
    mass, first, second = _kernels.scale_moments(mu.points, mu.weights, radii)
    b2 = _beta2_stack(mass, first, second, radii, mu.n)
    th = mass / radii ** mu.n
    return (b2 * th).sum(axis=1) * math.log(ratio)


def beta_wolff_lhs(mu: DiscreteMeasure, lattice=None, mode="lattice", ratio=None, table=None):
    """``sum_Q beta_2(2B_Q)^2 Theta(Q) mu(Q)`` (lattice) or the grid Riemann sum (grid)."""
    if mode == "lattice":
        if table is None:
            lat = build_lattice(mu) if lattice is None else lattice
            table = CoeffTable(lat)
        nl = table.nonleaf
        return float(np.sum((table.beta2 * table.Theta * table.lat.mass)[nl]))
    if mode == "grid":
        if mu.size < 2:
            return 0.0
        q = DEFAULT_GRID_RATIO if ratio is None else float(ratio)
        return float(np.dot(mu.weights, _grid_terms(mu, q)))
    raise VerifyError(f"unknown mode {mode!r}")


# ----------------------------------------------------------------------
# comparison report

@dataclass
class ComparisonReport:
    lhs_lattice: float
    lhs_grid: float
    riesz_energy: float
    theta0: float
    theta0_sq_mass: float
    r1: float
    r2: float
    r1_lattice: float
    r2_lattice: float
    grid_ratio: float
    generator: dict = field(default_factory=dict)
    runtimes: dict = field(default_factory=dict)

    def to_dict(self, timings=True):
        out = asdict(self)
        if not timings:
            out.pop("runtimes")
        return out


def theorem_check(mu: DiscreteMeasure, A0=16, C0=30.0, ratio=None, lattice=None) -> ComparisonReport:
    """Evaluate both sides and the two direction ratios ``r1``, ``r2``."""
    if mu.size < 2:
        raise VerifyError("theorem_check needs at least two atoms")
    q = DEFAULT_GRID_RATIO if ratio is None else float(ratio)
    times = {}
    t0 = time.perf_counter()
    lat = build_lattice(mu, A0, C0) if lattice is None else lattice
    table = CoeffTable(lat)
    lhs_l = beta_wolff_lhs(mu, table=table)
    times["lattice"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    lhs_g = beta_wolff_lhs(mu, mode="grid", ratio=q)
    times["grid"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    E = riesz_energy(mu)
    times["riesz"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    th0 = float(growth_constant(mu).theta0)
    times["growth"] = time.perf_counter() - t0
    tm = th0 ** 2 * mu.total_mass
    return ComparisonReport(
        lhs_lattice=lhs_l, lhs_grid=lhs_g, riesz_energy=E, theta0=th0, theta0_sq_mass=tm,
        r1=lhs_g / (E + tm), r2=E / (lhs_g + tm),
        r1_lattice=lhs_l / (E + tm), r2_lattice=E / (lhs_l + tm),
        grid_ratio=q, generator=dict(mu.meta), runtimes=times)


# ----------------------------------------------------------------------
# Jones-Wolff potential and capacity

@dataclass
class PotentialSample:
    sup_theta: float
    beta_integral: float

    @property
    def U(self):
        return self.sup_theta + math.sqrt(self.beta_integral)


def _sup_theta_at(mu, x):
    """``max mu(B(x, r)) / r^n`` over ``r`` in ``{r_min} ∪ {|x - x_j| >= r_min}``."""
    dist = np.sqrt(((mu.points - x) ** 2).sum(axis=1))
    order = np.argsort(dist, kind="stable")
    ds = dist[order]
    cm = np.cumsum(mu.weights[order])
    r_min = mu.resolution
    radii = np.concatenate([[r_min], ds[ds >= r_min]])
    last = np.searchsorted(ds, radii, side="right") - 1
    ok = last >= 0
    if not np.any(ok):
        return 0.0
    return float((cm[last[ok]] / radii[ok] ** mu.n).max())


def _beta_integral_at(mu, x, ratio):
    radii = radius_grid(mu, ratio)
    y = mu.points - x
    d2 = (y ** 2).sum(axis=1)
    inside = d2[None, :] <= (radii ** 2)[:, None]
    w = mu.weights
    mass = inside @ w
    first = inside @ (w[:, None] * y)
    second = np.einsum("jk,k,ka,kb->jab", inside.astype(float), w, y, y)
    b2 = _beta2_stack(mass, first, second, radii, mu.n)
    return float((b2 * mass / radii ** mu.n).sum() * math.log(ratio))


def jones_wolff_potential(mu: DiscreteMeasure, x, ratio=None) -> PotentialSample:
    """``U(x) = sup_r theta(x, r) + (∫ beta_2(x, r)^2 theta(x, r) dr/r)^{1/2}``, radii in ``[r_min, diam]``."""
    q = DEFAULT_GRID_RATIO if ratio is None else float(ratio)
    x = np.asarray(x, dtype=float)
    if mu.size < 2:
        return PotentialSample(float(mu.weights.sum()) / mu.resolution ** mu.n, 0.0)
    return PotentialSample(_sup_theta_at(mu, x), _beta_integral_at(mu, x, q))


def potential_at_atoms(mu: DiscreteMeasure, ratio=None):
    """``(sup_theta, beta_integral)`` arrays for every atom (compiled O(N^2) pass)."""
    q = DEFAULT_GRID_RATIO if ratio is None else float(ratio)
    if mu.size < 2:
        return np.array([float(mu.weights.sum()) / mu.resolution ** mu.n]), np.zeros(1)
    sup = _kernels.growth_rows(mu.points, mu.weights, mu.n, float(mu.r_min), 8)
    return sup, _grid_terms(mu, q)


@dataclass
class CapacityEstimate:
    kappa: float
    t: float
    max_U: float


def capacity_estimate(mu: DiscreteMeasure, E=None, ratio=None) -> CapacityEstimate:
    """Best scalar multiple ``t mu`` with ``U_{t mu} <= 1`` on ``E``; ``kappa = t mu(E)``.

    This is a lower-bound estimator built from the supplied candidate shape.
    """
    idx = np.arange(mu.size) if E is None else np.asarray(sorted(set(int(i) for i in E)))
    if not len(idx):
        raise VerifyError("E must be non-empty")
    sup, integ = potential_at_atoms(mu, ratio)
    U = sup[idx] + np.sqrt(integ[idx])
    umax = float(U.max())
    if not umax > 0:
        raise VerifyError("potential vanishes on E")
    t = 1.0 / umax
    return CapacityEstimate(t * float(mu.weights[idx].sum()), t, umax)


# ----------------------------------------------------------------------
# battery report

def _entry(item, timings, corona_cfg):
    from .stopping import corona_top

    kind = item["kind"]
    params = dict(item.get("params", {}))
    n = int(item.get("n", 1))
    mu = generate(kind, n=n, **params)
    rep = theorem_check(mu, A0=item.get("A0", 16), C0=item.get("C0", 30.0),
                        ratio=item.get("grid_ratio"))
    lat = build_lattice(mu, item.get("A0", 16), item.get("C0", 30.0))
    table = CoeffTable(lat)
    t0 = time.perf_counter()
    cor = corona_top(table, corona_cfg)
    t_cor = time.perf_counter() - t0
    t0 = time.perf_counter()
    cap = capacity_estimate(mu, ratio=item.get("grid_ratio"))
    t_cap = time.perf_counter() - t0
    out = {
        "generator": kind, "params": params,
        "lhs_lattice": rep.lhs_lattice, "lhs_grid": rep.lhs_grid,
        "riesz_energy": rep.riesz_energy, "theta0_sq_mass": rep.theta0_sq_mass,
        "r1": rep.r1, "r2": rep.r2,
        "corona": {"top_count": len(cor.top), "sigma_top": cor.sigma_top},
        "capacity": {"kappa": cap.kappa, "t": cap.t},
    }
    if timings:
        out["runtimes"] = dict(rep.runtimes, corona=t_cor, capacity=t_cap)
    return out


def suite_report(battery, out_dir=None, timings=False, corona_cfg=None):
    """Run every battery entry; failures are recorded and the suite continues.

    ``battery`` is a list of ``{"kind": ..., "params": {...}, "n": 1}``.
    With ``out_dir`` the JSON report and per-generator CSV series (parameter
    vs. each side) are written there.
    """
    entries = []
    for item in battery:
        try:
            entries.append(_entry(item, timings, corona_cfg))
        except (MeasureError, VerifyError, ValueError, KeyError, TypeError) as exc:
            entries.append({"generator": item.get("kind"), "params": item.get("params", {}),
                            "error": f"{type(exc).__name__}: {exc}"})
    report = {"entries": entries}
    if out_dir is not None:
        from pathlib import Path

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _io.write_json(out / "report.json", report)
        for name, rows in plot_series(entries).items():
            _io.write_csv(out / f"{name}.csv", ["x", "y"], rows)
    return report


def plot_series(entries):
    """``{generator}_{side}`` -> rows of ``(parameter, value)`` for single-parameter sweeps."""
    series = {}
    for e in entries:
        if "error" in e or len(e["params"]) != 1:
            continue
        (key, val), = e["params"].items()
        for side, v in (("lhs", e["lhs_grid"]), ("rhs", e["riesz_energy"])):
            series.setdefault(f"{e['generator']}_{key}_{side}", []).append((val, v))
    return series
