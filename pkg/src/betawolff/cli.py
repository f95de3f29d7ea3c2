"""Command-line interface: ``betawolff <command> [options]``.

Every command accepts ``--config FILE`` (a JSON object whose keys are the
long option names with underscores); options given on the command line win.
Exit codes: 0 success, 1 validation error or bad usage, 2 I/O error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from dataclasses import dataclass, fields


from . import _io


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)

    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


@dataclass
class RunConfig:
    n: int | None = None
    input: str | None = None
    kind: str | None = None
    N: int | None = None
    g: int | None = None
    ratio: float | None = None
    slope: float | None = None
    A0: int = 16
    C0: float = 30.0
    k_lambda: int = 2
    delta0: float = 1e-3
    M: float = 4.0
    N_corona: int = 8
    k_lambda_star: int | None = None
    C_d: float | None = None
    grid_ratio: float | None = None
    eps: float = 0.0
    eps_min: float | None = None
    theta_mac: float | None = None
    out: str | None = None
    out_dir: str | None = None
    battery: list | None = None
    timings: bool = False
    seed: int | None = None
    threads: int | None = None

    def __post_init__(self):
        checks = [
            (self.n is None or self.n >= 1, "n must be >= 1"),
            (self.A0 >= 16 and int(self.A0) == self.A0, "A0 must be an integer >= 16"),
            (self.C0 >= 30, "C0 must be >= 30"),
            (self.k_lambda >= 1, "k_lambda must be >= 1"),
            (0 < self.delta0 < 1, "delta0 must lie in (0, 1)"),
            (self.M >= 1, "M must be >= 1"),
            (self.N_corona >= 2, "N_corona must be >= 2"),
            (self.grid_ratio is None or self.grid_ratio > 1, "grid_ratio must exceed 1"),
            (self.eps >= 0, "eps must be >= 0"),
            (self.eps_min is None or self.eps_min > 0, "eps_min must be positive"),
            (self.theta_mac is None or 0 <= self.theta_mac < 1, "theta_mac must lie in [0, 1)"),
            (self.threads is None or self.threads >= 1, "threads must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)


_KEYS = {f.name for f in fields(RunConfig)}


def _load_config(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError:
        raise
    except json.JSONDecodeError as exc:
        raise ValueError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValueError("config file must hold a JSON object")
    unknown = sorted(set(doc) - _KEYS)
    if unknown:
        raise ValueError(f"unknown config key(s): {', '.join(unknown)}")
    return doc


def _build_parser():
    p = _Parser(prog="betawolff", description="Multiscale beta / Riesz diagnostics for discrete measures.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, measure=True):
        sp.add_argument("--config")
        sp.add_argument("--threads", type=int)
        sp.add_argument("--out")
        if measure:
            sp.add_argument("--in", dest="input")
            sp.add_argument("--n", type=int)
            gen_flags(sp)
        return sp

    def gen_flags(sp):
        sp.add_argument("--kind", choices=["segment", "circle", "lipschitz_graph", "cantor4"])
        sp.add_argument("--N", type=int)
        sp.add_argument("--g", type=int)
        sp.add_argument("--ratio", type=float)
        sp.add_argument("--slope", type=float)

    def lattice_flags(sp):
        sp.add_argument("--A0", type=int)
        sp.add_argument("--C0", type=float)

    sp = sub.add_parser("gen", help="write a synthetic measure")
    sp.add_argument("--config")
    sp.add_argument("--threads", type=int)
    sp.add_argument("--out")
    sp.add_argument("--n", type=int)
    gen_flags(sp)

    lattice_flags(common(sub.add_parser("lattice", help="build the cube lattice")))
    lattice_flags(common(sub.add_parser("coeffs", help="per-cube coefficient table (CSV)")))

    sp = common(sub.add_parser("riesz", help="Riesz field (CSV) and energy"))
    sp.add_argument("--eps", type=float)
    sp.add_argument("--theta-mac", dest="theta_mac", type=float)
    lattice_flags(sp)

    sp = common(sub.add_parser("corona", help="corona forest (JSON)"))
    lattice_flags(sp)
    sp.add_argument("--k-lambda", dest="k_lambda", type=int)
    sp.add_argument("--k-lambda-star", dest="k_lambda_star", type=int)
    sp.add_argument("--delta0", type=float)
    sp.add_argument("--M", type=float)
    sp.add_argument("--N-corona", dest="N_corona", type=int)
    sp.add_argument("--C-d", dest="C_d", type=float)

    for name, helptext in (("verify", "comparison report (JSON)"),
                           ("capacity", "capacity estimate (JSON)")):
        sp = common(sub.add_parser(name, help=helptext))
        lattice_flags(sp)
        sp.add_argument("--grid-ratio", dest="grid_ratio", type=float)
        sp.add_argument("--timings", action="store_true", default=None)

    sp = sub.add_parser("suite", help="run a battery of generators")
    sp.add_argument("--config")
    sp.add_argument("--threads", type=int)
    sp.add_argument("--battery", help="JSON file holding a list of battery entries")
    sp.add_argument("--out-dir", dest="out_dir")
    sp.add_argument("--out")
    sp.add_argument("--timings", action="store_true", default=None)
    return p


def _resolve(args):
    doc = _load_config(args.config) if getattr(args, "config", None) else {}
    for k, v in vars(args).items():
        if k in _KEYS and v is not None:
            doc[k] = v
    return RunConfig(**doc)


def _set_threads(cfg):
    k = cfg.threads
    if k is None and os.environ.get("BETAWOLFF_THREADS"):
        try:
            k = int(os.environ["BETAWOLFF_THREADS"])
        except ValueError as exc:
            raise ValueError("BETAWOLFF_THREADS must be an integer") from exc
        if k < 1:
            raise ValueError("BETAWOLFF_THREADS must be >= 1")
    if k is not None:
        import numba

        numba.set_num_threads(max(1, min(int(k), numba.config.NUMBA_NUM_THREADS)))


def _measure(cfg):
    from .measure import generate, load_measure

    if cfg.input:
        return load_measure(cfg.input, cfg.n)
    if cfg.kind:
        return generate(cfg.kind, n=cfg.n or 1, **_gen_params(cfg))
    raise ValueError("give --in FILE or --kind GENERATOR")


def _gen_params(cfg):
    if cfg.kind == "cantor4":
        out = {"g": cfg.g}
        if cfg.ratio is not None:
            out["ratio"] = cfg.ratio
        return out
    out = {"N": cfg.N}
    if cfg.kind == "lipschitz_graph" and cfg.slope is not None:
        out["slope_bound"] = cfg.slope
    return out


def _emit(cfg, text):
    if cfg.out:
        with open(cfg.out, "w") as fh:
            fh.write(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def _table(cfg, mu):
    from .coeffs import CoeffTable
    from .lattice import build_lattice

    lat = build_lattice(mu, cfg.A0, cfg.C0)
    return lat, CoeffTable(lat, cfg.C_d)


# ----------------------------------------------------------------------
# commands

def cmd_gen(cfg):
    from .measure import generate, save_measure

    if not cfg.kind:
        raise ValueError("--kind is required")
    if not cfg.out:
        raise ValueError("--out is required")
    mu = generate(cfg.kind, n=cfg.n or 1, **_gen_params(cfg))
    save_measure(mu, cfg.out)


def cmd_lattice(cfg):
    from .lattice import build_lattice, check_invariants

    lat = build_lattice(_measure(cfg), cfg.A0, cfg.C0)
    inv = check_invariants(lat)
    summary = {k: ("ok" if v == 0 else f"{v} violation(s)") for k, v in inv.items()}
    _emit(cfg, _io.dumps({"checks": summary, "n_cubes": lat.n_cubes, "depth": lat.depth,
                          "lattice": lat.to_dict()}))


def cmd_coeffs(cfg):
    lat, table = _table(cfg, _measure(cfg))
    header = ["id", "level", "mass", "beta2", "theta", "Theta", "bucket", "P", "p_doubling",
              "E9", "EH9", "Einf9", "leaf"]
    from .coeffs import energies

    rows = []
    for q in range(lat.n_cubes):
        en = energies(table, q)
        rows.append([q, lat.level[q], lat.mass[q], table.beta2[q], table.theta_ball[q],
                     table.Theta[q], table.bucket[q], table.P[q], table.p_doubling[q],
                     en.E, en.E_H, en.E_inf, lat.leaf[q]])
    if cfg.out:
        _io.write_csv(cfg.out, header, rows)
    else:
        sys.stdout.write(",".join(header) + "\n")
        for r in rows:
            sys.stdout.write(",".join(_io._cell(v) for v in r) + "\n")


def cmd_riesz(cfg):
    from .lattice import build_lattice
    from .riesz import riesz_energy, riesz_field, riesz_field_tree

    mu = _measure(cfg)
    result = {}
    if cfg.theta_mac is not None:
        tf = riesz_field_tree(mu, build_lattice(mu, cfg.A0, cfg.C0), cfg.eps, cfg.theta_mac)
        field = tf.field
        result["tree_work"] = tf.work
    else:
        field = riesz_field(mu, cfg.eps)
    result["energy"] = riesz_energy(mu, field.values)
    if cfg.out:
        field.to_csv(cfg.out)
    sys.stdout.write(_io.dumps(result) + "\n")


def cmd_corona(cfg):
    from .stopping import StoppingConfig, corona_top

    mu = _measure(cfg)
    lat, table = _table(cfg, mu)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        scfg = StoppingConfig(A0=cfg.A0, C0=cfg.C0, k_lambda=cfg.k_lambda, delta0=cfg.delta0,
                              M=cfg.M, N=cfg.N_corona, C_d=cfg.C_d, n=mu.n,
                              k_lambda_star=cfg.k_lambda_star)
    _emit(cfg, corona_top(table, scfg).to_json())


def cmd_verify(cfg):
    from .verify import theorem_check

    rep = theorem_check(_measure(cfg), cfg.A0, cfg.C0, cfg.grid_ratio)
    _emit(cfg, _io.dumps(rep.to_dict(timings=bool(cfg.timings))))


def cmd_capacity(cfg):
    from .verify import capacity_estimate

    est = capacity_estimate(_measure(cfg), ratio=cfg.grid_ratio)
    _emit(cfg, _io.dumps({"kappa": est.kappa, "t": est.t}))


def cmd_suite(cfg):
    from .verify import suite_report

    battery = cfg.battery
    if isinstance(battery, str):
        with open(battery) as fh:
            battery = json.load(fh)
    if battery is None:
        battery = []
    if not isinstance(battery, list):
        raise ValueError("battery must be a JSON list")
    rep = suite_report(battery, cfg.out_dir, timings=bool(cfg.timings))
    _emit(cfg, _io.dumps(rep))


COMMANDS = {"gen": cmd_gen, "lattice": cmd_lattice, "coeffs": cmd_coeffs, "riesz": cmd_riesz,
            "corona": cmd_corona, "verify": cmd_verify, "capacity": cmd_capacity,
            "suite": cmd_suite}


def run_command(argv=None):
    """Run one command; returns the exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _resolve(args)
        _set_threads(cfg)
        COMMANDS[args.command](cfg)
    except UsageError as exc:
        sys.stderr.write(str(exc))
        return 1
    except OSError as exc:
        sys.stderr.write(f"betawolff: I/O error: {exc}\n")
        return 2
    except (ValueError, TypeError) as exc:
        sys.stderr.write(f"betawolff: {exc}\n")
        return 1
    return 0


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
