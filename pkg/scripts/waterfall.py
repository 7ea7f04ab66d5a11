"""Coded BER waterfall relative to the predicted SE threshold.

Predicts the threshold for the config's codes, then sweeps
threshold + offsets and writes ber.csv and transfer.csv.

    python3 scripts/waterfall.py configs/qpsk_k50.toml --offsets 0.5,1,1.5 --workers 4
"""

import argparse
from dataclasses import replace
from pathlib import Path

from gmumimo.config import load_config
from gmumimo.harness import ber_rows, build_users, predict_threshold, run_ber, write_csv, write_manifest


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--offsets", default="0.5,1.0,1.5", help="dB above the threshold")
    ap.add_argument("--workers", type=int)
    ap.add_argument("--frames", type=int)
    ap.add_argument("--out", default="out/waterfall")
    args = ap.parse_args()

    cfg = load_config(args.config)
    users = build_users(cfg)
    th = predict_threshold(cfg, users)
    print(f"SE threshold {th.snr_db:.3f} dB")
    snrs = [round(th.snr_db + float(o), 6) for o in args.offsets.split(",")]
    upd = {"snr_db": snrs}
    if args.workers:
        upd["workers"] = args.workers
    if args.frames:
        upd["frames"] = args.frames
    cfg = replace(cfg, **upd)

    out = Path(args.out)
    rows = [("rho",) + tuple(f"mse_g{g}" for g in range(th.group_mse.shape[0])) + ("average",)]
    rows += [(th.rho[i],) + tuple(th.group_mse[:, i]) + (th.average[i],) for i in range(th.rho.size)]
    write_csv(out / "transfer.csv", rows)

    recs = run_ber(cfg, users, progress=lambda db, f, fe: print(f"{db:7.3f} dB  frames {f:5d}  frame errors {fe}"))
    write_csv(out / "ber.csv", ber_rows(recs))
    write_manifest(out / "waterfall.manifest.json", cfg, "waterfall", se_threshold_db=th.snr_db,
                   wall_time_s={str(r.snr_db): round(r.wall_time, 3) for r in recs})
    for r in recs:
        print(f"{r.snr_db:7.3f} dB  BER {r.ber:.3e}  ({r.total_errors}/{r.total_bits})  groups {r.group_ber}")


if __name__ == "__main__":
    main()
