"""End-to-end reference experiment: train, audit, certify and attack, then print the report.

    python3 scripts/run_reference.py --out out/reference --attack-points 20
"""

import argparse
from dataclasses import replace

from lsrs.config import load_config
from lsrs.harness import run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="docs/example_config.ini")
    ap.add_argument("--out", default="out/reference")
    ap.add_argument("--n", type=int)
    ap.add_argument("--attack-points", type=int, default=0)
    args = ap.parse_args()

    cfg = load_config(args.config)
    cfg = replace(cfg, out=args.out,
                  audit=replace(cfg.audit, attack_points=args.attack_points))
    if args.n:
        cfg = replace(cfg, smoothing=replace(cfg.smoothing, n=args.n))
    summary, report = run(cfg)
    print(summary.to_text(), end="")
    print(report.to_text(), end="")


if __name__ == "__main__":
    main()
