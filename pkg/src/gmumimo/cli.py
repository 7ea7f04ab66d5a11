"""Command-line entry point.

Every subcommand reads one TOML config (``--config``), applies flag
overrides, writes its CSV into ``--out`` and a ``<command>.manifest.json``
next to it.  Exit status is 0 on success, 1 for configuration problems
(bad flags, unreadable or invalid config) and 2 for failures at run time.
"""

from __future__ import annotations

import argparse
import sys
import time
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .allocation import InfeasibleAllocation, fit_gammas, group_mmse_curves, rate_table
from .capacity import (
    NonUniqueFixedPoint,
    achievable_rate_area,
    capacity_sweep,
    constrained_capacity_closed_form,
    select_crossing,
)
from .config import ConfigError, load_config, parse_snr_list
from .constellation import get_constellation
from .harness import (
    ber_rows,
    build_users,
    predict_threshold,
    run_ber,
    run_se_validation,
    write_csv,
    write_manifest,
)
from .state_evolution import find_fixed_point, transfer_chart

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gmumimo", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", required=True, help="TOML config file")
        sp.add_argument("--out", default="out", help="output directory (default: out)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--snr-db", help="e.g. 6:0.5:10 or 6,8,10")
        sp.add_argument("-q", "--quiet", action="store_true")
        return sp

    sp = common(sub.add_parser("chart", help="LD / NLD transfer curves"))
    sp.add_argument("--points", type=int, default=512)

    sp = common(sub.add_parser("capacity", help="constrained capacity and OAMP rate area"))
    sp.add_argument("--branch", choices=["replica", "se", "high"], default="replica")

    common(sub.add_parser("fixed-point", help="all SE fixed points per snr"))

    sp = common(sub.add_parser("allocate", help="per-group variance allocation and rates"))
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--gammas", type=_float_list)
    g.add_argument("--target-split", type=_float_list, help="two-group rate ratio, e.g. 330,180")

    sp = common(sub.add_parser("ber", help="Monte-Carlo BER sweep"))
    sp.add_argument("--workers", type=int)
    sp.add_argument("--frames", type=int)
    sp.add_argument("--threshold", action="store_true",
                    help="also predict the SE decoding threshold (coded mode)")

    sp = common(sub.add_parser("se-validate", help="genie detector vs state evolution"))
    sp.add_argument("--seeds", type=int)
    return p


def _load(args):
    cfg = load_config(args.config)
    upd = {}
    if args.seed is not None:
        upd["seed"] = args.seed
    if args.snr_db is not None:
        upd["snr_db"] = parse_snr_list(args.snr_db)
    for flag, key in (("workers", "workers"), ("frames", "frames"), ("seeds", "se_seeds"),
                      ("gammas", "gammas"), ("target_split", "target_split")):
        val = getattr(args, flag, None)
        if val is not None:
            upd[key] = val
    if upd:
        try:
            cfg = replace(cfg, **upd)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
    return cfg


def _log(args, msg):
    if not args.quiet:
        print(msg, file=sys.stderr, flush=True)


def _snrs(cfg):
    return [(db, 10 ** (db / 10)) for db in cfg.snr_db]


def cmd_chart(cfg, args, out: Path):
    c = get_constellation(cfg.constellation)
    spec = cfg.channel.spectrum()
    rows = [("snr_db", "rho", "v_ld", "v_nld_S", "v_nld_C_opt")]
    for db, snr in _snrs(cfg):
        ch = transfer_chart(spec, snr, c, n_points=args.points)
        rows += [(db,) + row for row in list(ch.rows())[1:]]
    write_csv(out / "chart.csv", rows)
    return {}


def cmd_capacity(cfg, args, out: Path):
    c = get_constellation(cfg.constellation)
    spec = cfg.channel.spectrum()
    pts = sorted(_snrs(cfg), key=lambda p: p[1])
    c_bar = capacity_sweep(spec, c, [s for _, s in pts], branch=args.branch)
    rows = [("snr_db", "c_bar_nats", "c_bar_bits", "c_sum", "r_bar", "rho_star", "v_star",
             "c_closed_form", "n_crossings")]
    for (db, snr), cb in zip(pts, c_bar):
        fp = find_fixed_point(spec, snr, c)
        rho, v = select_crossing(fp, spec, c, snr, args.branch)
        closed = constrained_capacity_closed_form(spec, c, snr, args.branch, fp)
        rows.append((db, cb, cb / np.log(2), spec.n * cb, achievable_rate_area(spec, c, snr, fp),
                     rho, v, closed / spec.n, len(fp.candidates)))
        _log(args, f"{db:6.2f} dB  C_bar = {cb:.6f} nats/antenna")
    write_csv(out / "capacity.csv", rows)
    return {}


def cmd_fixed_point(cfg, args, out: Path):
    c = get_constellation(cfg.constellation)
    spec = cfg.channel.spectrum()
    rows = [("snr_db", "index", "rho", "v", "se_branch", "replica_branch")]
    for db, snr in _snrs(cfg):
        fp = find_fixed_point(spec, snr, c)
        rep = select_crossing(fp, spec, c, snr, "replica")
        for i, (rho, v) in enumerate(fp.candidates):
            rows.append((db, i, rho, v, i == 0, (rho, v) == rep))
        if not fp.unique:
            _log(args, f"{db:6.2f} dB: {len(fp.candidates)} crossings")
    write_csv(out / "fixed_point.csv", rows)
    return {}


def cmd_allocate(cfg, args, out: Path):
    c = get_constellation(cfg.constellation)
    spec = cfg.channel.spectrum()
    curve_rows = [("snr_db", "rho", "weight", "omega_s", "average")
                  + tuple(f"v_g{g}" for g in range(cfg.layout.groups))]
    rate_rows = [("snr_db", "group", "gamma", "rate_nats", "rate_bits", "group_rate_bits", "code_rate")]
    fitted = {}
    for db, snr in _snrs(cfg):
        fp = find_fixed_point(spec, snr, c)
        gammas = cfg.gammas
        if cfg.target_split:
            if cfg.layout.groups != 2:
                raise ConfigError("target_split needs exactly two groups")
            gammas = fit_gammas(spec, c, snr, cfg.target_split, fp)
            fitted[str(db)] = [float(g) for g in gammas]
        curves = group_mmse_curves(spec, c, snr, gammas, fp)
        for i in range(curves.rho.size):
            curve_rows.append((db, curves.rho[i], curves.weights[i], curves.omega_s[i],
                               curves.average[i]) + tuple(curves.v_g[:, i]))
        table = rate_table(curves, spec.n, c)
        rate_rows += [(db,) + row for row in list(table.rows())[1:]]
    write_csv(out / "allocate_curves.csv", curve_rows)
    write_csv(out / "allocate_rates.csv", rate_rows)
    return {"fitted_gammas": fitted} if fitted else {}


def cmd_ber(cfg, args, out: Path):
    users = build_users(cfg)
    extra = {}
    if args.threshold:
        if cfg.mode != "coded":
            raise ConfigError("--threshold needs mode = 'coded'")
        th = predict_threshold(cfg, users)
        extra["se_threshold_db"] = th.snr_db
        rows = [("rho",) + tuple(f"mse_g{g}" for g in range(th.group_mse.shape[0])) + ("average",)]
        rows += [(th.rho[i],) + tuple(th.group_mse[:, i]) + (th.average[i],) for i in range(th.rho.size)]
        write_csv(out / "transfer.csv", rows)
        _log(args, f"SE threshold {th.snr_db:.3f} dB")

    def progress(db, frames, fe):
        _log(args, f"{db:6.2f} dB  frames {frames:6d}  frame errors {fe}")

    t0 = time.perf_counter()
    recs = run_ber(cfg, users, progress=None if args.quiet else progress)
    write_csv(out / "ber.csv", ber_rows(recs))
    extra["wall_time_s"] = {str(r.snr_db): round(r.wall_time, 3) for r in recs}
    extra["total_wall_time_s"] = round(time.perf_counter() - t0, 3)
    return extra


def cmd_se_validate(cfg, args, out: Path):
    def progress(db, s):
        if s % 10 == 0:
            _log(args, f"{db:6.2f} dB  seeds {s}/{cfg.se_seeds}")

    reports = run_se_validation(cfg, progress=None if args.quiet else progress)
    rows = []
    for i, rep in enumerate(reports):
        r = list(rep.rows())
        rows += r if i == 0 else r[1:]
        _log(args, f"{rep.snr_db:6.2f} dB  max gap r {rep.gap_r.max():.3%}  s {rep.gap_s.max():.3%}"
                   f"  terminal vs v* {rep.terminal_gap:.3%}")
    write_csv(out / "se_validation.csv", rows)
    return {"max_gap": {str(r.snr_db): float(max(r.gap_r.max(), r.gap_s.max())) for r in reports},
            "terminal_gap": {str(r.snr_db): r.terminal_gap for r in reports}}


COMMANDS = {
    "chart": cmd_chart,
    "capacity": cmd_capacity,
    "fixed-point": cmd_fixed_point,
    "allocate": cmd_allocate,
    "ber": cmd_ber,
    "se-validate": cmd_se_validate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _load(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NonUniqueFixedPoint)
            extra = COMMANDS[args.command](cfg, args, out)
        write_manifest(out / f"{args.command}.manifest.json", cfg, args.command, **extra)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InfeasibleAllocation, ArithmeticError, RuntimeError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
