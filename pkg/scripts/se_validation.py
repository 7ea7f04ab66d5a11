"""Genie detector MSE against SE over a range of antenna counts.

Shows how the per-iteration gap shrinks as N grows.

    python3 scripts/se_validation.py configs/iid_se.toml --sizes 64,256,1024 --seeds 50
"""

import argparse
from dataclasses import replace
from pathlib import Path

from gmumimo.config import Layout, load_config
from gmumimo.harness import run_se_validation, write_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--sizes", default="64,256,1024", help="values of N")
    ap.add_argument("--seeds", type=int, default=50)
    ap.add_argument("--out", default="out/se_validation")
    args = ap.parse_args()

    base = load_config(args.config)
    rows = [("n", "snr_db", "iter", "mse_r", "se_mse_r", "gap_r", "mse_s", "se_mse_s", "gap_s")]
    for n in (int(x) for x in args.sizes.split(",")):
        lay = Layout(users=1, groups=1, antennas_per_user=n, beta=base.layout.beta)
        cfg = replace(base, layout=lay, gammas=[1.0], se_seeds=args.seeds)
        for rep in run_se_validation(cfg):
            rows += [(n,) + row for row in list(rep.rows())[1:]]
            print(f"N={n:5d}  {rep.snr_db:5.1f} dB  max gap {max(rep.gap_r.max(), rep.gap_s.max()):.3%}"
                  f"  terminal vs v* {rep.terminal_gap:.3%}")
    write_csv(Path(args.out) / "se_validation_sizes.csv", rows)


if __name__ == "__main__":
    main()
