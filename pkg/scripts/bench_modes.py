"""Certification time of LS-RS by split depth against IS-RS on the FoR 8/8 reference net.

    python3 scripts/bench_modes.py --n 10000 --examples 3

Timing does not depend on the weights, so an untrained net is used unless
``--checkpoint`` is given.
"""

import argparse
from dataclasses import replace
from pathlib import Path

from lsrs import checkpoint
from lsrs import rng as rngs
from lsrs.config import load_config
from lsrs.harness import bench_modes, load_datasets
from lsrs.network import build_reference_net


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="docs/for8_config.ini")
    ap.add_argument("--checkpoint")
    ap.add_argument("--n", type=int, default=10_000)
    ap.add_argument("--examples", type=int, default=3)
    ap.add_argument("--repeats", type=int, default=1)
    ap.add_argument("--out", default="out/bench")
    args = ap.parse_args()

    cfg = load_config(args.config)
    if args.checkpoint:
        net = checkpoint.load(args.checkpoint)
    else:
        net = build_reference_net(cfg.arch, rngs.stream(cfg.seed, rngs.INIT))
    _, test_set = load_datasets(cfg)
    smoothing = replace(cfg.smoothing, n=args.n)
    table = bench_modes(net, test_set.inputs[: args.examples], smoothing, cfg.bench.depths,
                        repeats=args.repeats)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table.to_csv(out / "bench.csv")
    print(f"n={smoothing.n} n0={smoothing.n0} sigma={smoothing.sigma} examples={args.examples}")
    print(f"{'depth':>5} {'split':>5} {'ls_rs_s':>9} {'is_rs_s':>9} {'speedup':>8}")
    for r in table.rows:
        print(f"{r.depth:>5} {r.split_index:>5} {r.ls_time:>9.3f} {r.is_time:>9.3f} {r.speedup:>8.2f}")


if __name__ == "__main__":
    main()
