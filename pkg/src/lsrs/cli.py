"""Command line entry point: ``lsrs {train,certify,evaluate,audit,bench,run} --config FILE``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from lsrs import checkpoint
from lsrs.config import apply_overrides, load_config
from lsrs.harness import (
    StageError,
    bench_modes,
    certify_dataset,
    clean_accuracy,
    load_datasets,
    run,
    run_audit,
    stage_train,
    summarize,
    write_cert_csv,
)
from lsrs.training import write_history

log = logging.getLogger("lsrs")


def _load_cfg(args):
    # on checkpoint commands --split re-splits the loaded network instead (see _load_net)
    split = args.split if args.command in ("train", "run") else None
    try:
        cfg = load_config(args.config)
        return apply_overrides(cfg, sigma=args.sigma, mode=args.mode, split=split,
                               seed=args.seed, n=args.n, alpha=args.alpha, out=args.out)
    except Exception as exc:
        raise StageError("config", str(exc)) from exc


def _load_net(cfg, args):
    path = Path(args.checkpoint) if args.checkpoint else cfg.out_dir / "checkpoint.json"
    try:
        net = checkpoint.load(path)
    except Exception as exc:
        raise StageError("load", f"{path}: {exc}") from exc
    if args.split is not None:
        try:
            net = net.with_split(args.split)
            net.encoder_lipschitz_bound()
        except ValueError as exc:
            raise StageError("load", f"--split {args.split}: {exc}") from exc
    return net


def cmd_train(args):
    cfg = _load_cfg(args)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    try:
        train_set, _ = load_datasets(cfg)
    except Exception as exc:
        raise StageError("data", str(exc)) from exc
    try:
        net, history = stage_train(cfg, train_set)
    except Exception as exc:
        raise StageError("train", str(exc)) from exc
    checkpoint.save(net, cfg.out_dir / "checkpoint.json")
    write_history(history, cfg.out_dir / "train_history.csv")
    print(f"trained: final loss {history[-1].loss:.4f}, checkpoint {cfg.out_dir / 'checkpoint.json'}")


def _certify(args, with_summary):
    cfg = _load_cfg(args)
    net = _load_net(cfg, args)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    try:
        _, test_set = load_datasets(cfg)
    except Exception as exc:
        raise StageError("data", str(exc)) from exc
    stage = "evaluate" if with_summary else "certify"
    try:
        rows, _ = certify_dataset(net, test_set, cfg.mode, cfg.smoothing)
    except Exception as exc:
        raise StageError(stage, str(exc)) from exc
    write_cert_csv(rows, cfg.out_dir / "certification.csv")
    if with_summary:
        summary = summarize(rows, clean_accuracy(net, test_set), cfg.thresholds)
        summary.extra.update({"mode": cfg.mode.value, "sigma": cfg.smoothing.sigma,
                              "n": cfg.smoothing.n, "alpha": cfg.smoothing.alpha,
                              "split_index": net.split_index})
        (cfg.out_dir / "summary.txt").write_text(summary.to_text())
        print(summary.to_text(), end="")
    else:
        print(f"certified {len(rows)} examples -> {cfg.out_dir / 'certification.csv'}")


def cmd_certify(args):
    _certify(args, with_summary=False)


def cmd_evaluate(args):
    _certify(args, with_summary=True)


def cmd_audit(args):
    cfg = _load_cfg(args)
    net = _load_net(cfg, args)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    try:
        report = run_audit(net, cfg)
    except Exception as exc:
        raise StageError("audit", str(exc)) from exc
    (cfg.out_dir / "audit.txt").write_text(report.to_text())
    (cfg.out_dir / "audit.csv").write_text(report.to_csv())
    print(report.to_text(), end="")
    if not report.passed:
        raise StageError("audit", "empirical Lipschitz estimate exceeds the declared bound")


def cmd_bench(args):
    cfg = _load_cfg(args)
    net = _load_net(cfg, args)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    try:
        _, test_set = load_datasets(cfg)
        table = bench_modes(net, test_set.inputs[: cfg.bench.examples], cfg.smoothing,
                            cfg.bench.depths, cfg.bench.workers)
    except Exception as exc:
        raise StageError("bench", str(exc)) from exc
    table.to_csv(cfg.out_dir / "bench.csv")
    print(f"{'depth':>5} {'split':>5} {'ls_rs_s':>10} {'is_rs_s':>10} {'speedup':>8}")
    for r in table.rows:
        print(f"{r.depth:>5} {r.split_index:>5} {r.ls_time:>10.4f} {r.is_time:>10.4f} "
              f"{r.speedup:>8.3f}")


def cmd_run(args):
    cfg = _load_cfg(args)
    summary, report = run(cfg)
    print(summary.to_text(), end="")
    print(report.to_text(), end="")


def build_parser():
    parser = argparse.ArgumentParser(prog="lsrs", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "train": (cmd_train, "train a model from the config"),
        "certify": (cmd_certify, "certify the test set, write certification.csv"),
        "evaluate": (cmd_evaluate, "certify and summarize (ACR, certified accuracy, timing)"),
        "audit": (cmd_audit, "empirical Lipschitz audit of the encoder"),
        "bench": (cmd_bench, "LS-RS vs IS-RS certification time across split depths"),
        "run": (cmd_run, "train -> audit -> evaluate -> report"),
    }
    for name, (func, help_text) in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True)
        p.add_argument("--sigma", type=float)
        p.add_argument("--mode", choices=["is-rs", "ls-rs"])
        p.add_argument("--split", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--n", type=int)
        p.add_argument("--alpha", type=float)
        p.add_argument("--out")
        if name not in ("train", "run"):
            p.add_argument("--checkpoint", help="defaults to <out>/checkpoint.json")
        p.set_defaults(func=func)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
