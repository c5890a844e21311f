"""Train and certify one model per FoR in {0, 2, 4, 6, 8}/8 and tabulate ACR and timing.

    python3 scripts/for_sweep.py --config docs/example_config.ini --n 1000 --out out/sweep
"""

import argparse
import logging
from dataclasses import replace
from pathlib import Path

from lsrs.config import load_config
from lsrs.harness import for_sweep, write_sweep_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="docs/example_config.ini")
    ap.add_argument("--fors", default="0 2 4 6 8")
    ap.add_argument("--n", type=int, help="estimation samples per example")
    ap.add_argument("--sigma", type=float)
    ap.add_argument("--out", default="out/sweep")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = load_config(args.config)
    if args.n:
        cfg = replace(cfg, smoothing=replace(cfg.smoothing, n=args.n))
    if args.sigma is not None:
        cfg = replace(cfg, train=replace(cfg.train, sigma=args.sigma),
                      smoothing=replace(cfg.smoothing, sigma=args.sigma))
    rows = for_sweep(cfg, tuple(int(k) for k in args.fors.split()))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(rows, out / "for_sweep.csv")
    base = rows[0].summary.acr
    print(f"{'FoR':>5} {'mode':>6} {'split':>5} {'ACR':>8} {'ACR/ACR0':>9} {'clean':>6} {'s/ex':>8}")
    for r in rows:
        s = r.summary
        rel = s.acr / base if base else float("nan")
        print(f"{r.n_ortho:>3}/{cfg.arch.blocks} {r.mode.value:>6} {r.split_index:>5} {s.acr:>8.4f} "
              f"{rel:>9.3f} {s.clean_accuracy:>6.3f} {s.mean_time_per_example:>8.4f}")


if __name__ == "__main__":
    main()
