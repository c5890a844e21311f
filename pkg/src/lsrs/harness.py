"""Evaluation, timing comparison and the end-to-end experiment pipeline."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from lsrs import checkpoint
from lsrs import rng as rngs
from lsrs.audit import AuditReport, audit_encoder, certified_ball_attack
from lsrs.config import ExperimentConfig
from lsrs.data import Dataset, load_idx, make_blobs
from lsrs.network import SplitNetwork, build_reference_net
from lsrs.smoothing import ABSTAIN, CertResult, Mode, SmoothingConfig, certify
from lsrs.training import train, write_history

log = logging.getLogger(__name__)

CSV_COLUMNS = ["idx", "label", "predict", "radius_latent", "radius_input", "p_lower", "correct",
               "time_s"]
ACR_CONVENTION = "abstained and misclassified examples contribute radius 0 to the ACR"


class StageError(RuntimeError):
    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class CertRow:
    idx: int
    label: int
    predict: int
    radius_latent: float
    radius_input: float
    p_lower: float
    correct: int
    time_s: float

    @classmethod
    def from_result(cls, idx, label, res: CertResult):
        correct = int(res.predicted != ABSTAIN and res.predicted == label)
        return cls(idx, int(label), int(res.predicted), float(res.radius_latent),
                   float(res.radius_input), float(res.p_lower), correct, float(res.elapsed))


@dataclass
class EvalSummary:
    acr: float
    certified_accuracy: dict
    clean_accuracy: float
    mean_time_per_example: float
    abstain_rate: float
    error_rate: float
    n_examples: int
    extra: dict = field(default_factory=dict)

    def to_text(self):
        lines = [f"# {ACR_CONVENTION}",
                 "# timing covers sampling and inference only",
                 f"n_examples = {self.n_examples}",
                 f"acr = {self.acr!r}",
                 f"clean_accuracy = {self.clean_accuracy!r}",
                 f"mean_time_per_example = {self.mean_time_per_example!r}",
                 f"abstain_rate = {self.abstain_rate!r}",
                 f"error_rate = {self.error_rate!r}"]
        for r, frac in self.certified_accuracy.items():
            lines.append(f"certified_accuracy@{r!r} = {frac!r}")
        for k, v in self.extra.items():
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


def summarize(rows, clean_accuracy, thresholds=(0.0, 0.25, 0.5, 0.75, 1.0)) -> EvalSummary:
    """Aggregate per-example rows. Certified at ``r`` means correct, not abstained, radius >= r."""
    n = len(rows)
    if n == 0:
        raise ValueError("no certification rows")
    radii = [row.radius_input if row.correct else 0.0 for row in rows]
    acr = sum(radii) / n
    abstain = sum(1 for row in rows if row.predict == ABSTAIN) / n
    errors = sum(1 for row in rows if row.predict != ABSTAIN and not row.correct) / n
    cert_acc = {}
    for r in thresholds:
        hits = sum(1 for row in rows
                   if row.correct and row.predict != ABSTAIN and row.radius_input >= r)
        cert_acc[float(r)] = hits / n
    mean_time = sum(row.time_s for row in rows) / n
    return EvalSummary(acr, cert_acc, clean_accuracy, mean_time, abstain, errors, n)


def write_cert_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([r.idx, r.label, r.predict, repr(r.radius_latent), repr(r.radius_input),
                        repr(r.p_lower), r.correct, repr(r.time_s)])


def read_cert_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_COLUMNS:
            raise ValueError(f"unexpected columns {reader.fieldnames}")
        return [CertRow(int(d["idx"]), int(d["label"]), int(d["predict"]),
                        float(d["radius_latent"]), float(d["radius_input"]),
                        float(d["p_lower"]), int(d["correct"]), float(d["time_s"]))
                for d in reader]


def clean_accuracy(net: SplitNetwork, data: Dataset, batch_size=256):
    hits = 0
    for start in range(0, len(data), batch_size):
        pred = net.predict_clean(data.inputs[start:start + batch_size])
        hits += int(np.sum(pred == data.labels[start:start + batch_size]))
    return hits / len(data)


def certify_dataset(net, data: Dataset, mode, cfg: SmoothingConfig):
    rows, results = [], []
    for i in range(len(data)):
        res = certify(net, data.inputs[i], mode, cfg, index=i)
        results.append(res)
        rows.append(CertRow.from_result(i, data.labels[i], res))
    return rows, results


def evaluate(net, data: Dataset, mode, cfg: SmoothingConfig, thresholds=(0.0, 0.25, 0.5, 0.75, 1.0)):
    """Certify every example; returns ``(summary, rows, results)``."""
    rows, results = certify_dataset(net, data, mode, cfg)
    return summarize(rows, clean_accuracy(net, data), thresholds), rows, results


@dataclass
class BenchRow:
    depth: int
    split_index: int
    ls_time: float
    is_time: float

    @property
    def speedup(self):
        return self.is_time / self.ls_time


@dataclass
class BenchTable:
    rows: list
    n: int
    n0: int
    sigma: float
    alpha: float
    workers: int
    examples: int

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(f"# n={self.n} n0={self.n0} sigma={self.sigma} alpha={self.alpha} "
                     f"workers={self.workers} examples={self.examples} (held fixed across modes)\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["depth", "split_index", "ls_rs_time_s", "is_rs_time_s", "speedup"])
            for r in self.rows:
                w.writerow([r.depth, r.split_index, repr(r.ls_time), repr(r.is_time),
                            repr(r.speedup)])


def depth_to_split(depth):
    """Blocks in the encoder -> layer split index (layer 0 is the channel lift)."""
    return 0 if depth == 0 else 1 + depth


def _mean_cert_time(net, inputs, mode, cfg):
    return float(np.mean([certify(net, x, mode, cfg, index=i).elapsed
                          for i, x in enumerate(inputs)]))


def bench_modes(net: SplitNetwork, inputs, cfg: SmoothingConfig, depths=(0, 2, 4, 6, 8),
                workers=1, repeats=1):
    """Mean certify time of LS-RS at each encoder depth against IS-RS on the same inputs.

    Runs single-threaded (``workers`` is recorded, not used to fan out) so the
    numbers are comparable; n, n0, sigma and alpha are shared by both modes.
    """
    inputs = np.asarray(inputs)
    # warm caches (spectral weights) outside the timed region
    certify(net.with_split(0), inputs[0], Mode.IS_RS, SmoothingConfig(cfg.sigma, 1, 1, cfg.alpha))
    rows = []
    for depth in depths:
        split = depth_to_split(depth)
        ls_net = net.with_split(split)
        ls_net.encoder_lipschitz_bound()
        ls, is_ = [], []
        for _ in range(repeats):
            is_.append(_mean_cert_time(net.with_split(0), inputs, Mode.IS_RS, cfg))
            ls.append(_mean_cert_time(ls_net, inputs, Mode.LS_RS, cfg))
        rows.append(BenchRow(depth, split, float(np.mean(ls)), float(np.mean(is_))))
    return BenchTable(rows, cfg.n, cfg.n0, cfg.sigma, cfg.alpha, workers, len(inputs))


@dataclass
class SweepRow:
    n_ortho: int
    mode: Mode
    split_index: int
    summary: EvalSummary
    final_loss: float
    net: SplitNetwork = field(repr=False)


def config_for_for(cfg: ExperimentConfig, n_ortho):
    """The experiment at FoR ``n_ortho/blocks``: IS-RS at 0, LS-RS at the default split otherwise."""
    mode = Mode.IS_RS if n_ortho == 0 else Mode.LS_RS
    site = "input" if mode is Mode.IS_RS else "latent"
    return replace(cfg, mode=mode, arch=replace(cfg.arch, n_ortho=n_ortho, split_index=None),
                   train=replace(cfg.train, noise_site=site))


def for_sweep(cfg: ExperimentConfig, fors=(0, 2, 4, 6, 8)):
    """Train and evaluate one model per FoR numerator under matched sigma, data and seed."""
    rows = []
    for k in fors:
        c = config_for_for(cfg, k)
        train_set, test_set = load_datasets(c)
        net, history = stage_train(c, train_set)
        summary, _, _ = evaluate(net, test_set, c.mode, c.smoothing, c.thresholds)
        log.info("FoR %d/%d: acr %.4f", k, c.arch.blocks, summary.acr)
        rows.append(SweepRow(k, c.mode, net.split_index, summary, history[-1].loss, net))
    return rows


def write_sweep_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n_ortho", "mode", "split_index", "acr", "clean_accuracy",
                    "mean_time_per_example", "abstain_rate", "final_loss"])
        for r in rows:
            s = r.summary
            w.writerow([r.n_ortho, r.mode.value, r.split_index, repr(s.acr), repr(s.clean_accuracy),
                        repr(s.mean_time_per_example), repr(s.abstain_rate), repr(r.final_loss)])


# --- pipeline -----------------------------------------------------------------------------


def load_datasets(cfg: ExperimentConfig):
    d = cfg.data
    if d.source == "blobs":
        shape = (cfg.arch.in_channels, cfg.arch.spatial, cfg.arch.spatial)
        train_set = make_blobs(d.n_classes, d.train_per_class, shape, d.spread, cfg.seed)
        test_set = make_blobs(d.n_classes, d.test_per_class, shape, d.spread, cfg.seed + 1_000_003,
                              split="test", centers_seed=cfg.seed)
    elif d.source == "idx":
        train_set = load_idx(d.train_images, d.train_labels, d.n_classes, "train")
        test_set = load_idx(d.test_images, d.test_labels, d.n_classes, "test")
    else:
        raise ValueError(f"unknown data source {d.source!r}")
    if d.test_limit:
        test_set = test_set.subset(d.test_limit)
    return train_set, test_set


def build_model(cfg: ExperimentConfig):
    return build_reference_net(cfg.arch, rngs.stream(cfg.seed, rngs.INIT))


def stage_train(cfg: ExperimentConfig, train_set):
    net = build_model(cfg)
    net, history = train(net, train_set.inputs, train_set.labels, cfg.train)
    return net, history


def run_audit(net, cfg: ExperimentConfig, inputs=None):
    a = cfg.audit
    return audit_encoder(net, n_pairs=a.n_pairs, n_points=a.n_points, iters=a.iters, seed=cfg.seed,
                         tol=a.tol, inputs=inputs)


def run_attack(net, test_set, results, cfg: ExperimentConfig):
    a = cfg.audit
    violations, attacked = 0, 0
    for i, res in enumerate(results):
        if attacked >= a.attack_points:
            break
        if res.predicted == ABSTAIN:
            continue
        violations += certified_ball_attack(net, test_set.inputs[i], res, cfg.mode, cfg.smoothing,
                                            n_restarts=a.attack_restarts, vote_n=a.attack_vote_n,
                                            index=i)
        attacked += 1
    return violations, attacked


def _mark(out: Path, text):
    (out / "status.txt").write_text(text)


def run(cfg: ExperimentConfig):
    """train -> audit -> evaluate -> report, writing every artifact under ``cfg.out``."""
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    _mark(out, "status = incomplete\nstage = data\n")
    stage = "data"
    try:
        train_set, test_set = load_datasets(cfg)
        stage = "train"
        _mark(out, f"status = incomplete\nstage = {stage}\n")
        net, history = stage_train(cfg, train_set)
        checkpoint.save(net, out / "checkpoint.json")
        write_history(history, out / "train_history.csv")
        stage = "audit"
        _mark(out, f"status = incomplete\nstage = {stage}\n")
        report = run_audit(net, cfg, test_set.inputs)
        stage = "evaluate"
        _mark(out, f"status = incomplete\nstage = {stage}\n")
        summary, rows, results = evaluate(net, test_set, cfg.mode, cfg.smoothing, cfg.thresholds)
        write_cert_csv(rows, out / "certification.csv")
        if cfg.audit.attack_points:
            stage = "attack"
            violations, attacked = run_attack(net, test_set, results, cfg)
            report = AuditReport(report.max_pairwise_ratio, report.max_jacobian_norm,
                                 report.declared_bound, violations, report.tol)
            summary.extra["attacked_points"] = attacked
        stage = "report"
        (out / "audit.txt").write_text(report.to_text())
        (out / "audit.csv").write_text(report.to_csv())
        summary.extra.update({
            "mode": cfg.mode.value,
            "sigma": cfg.smoothing.sigma,
            "n": cfg.smoothing.n,
            "alpha": cfg.smoothing.alpha,
            "split_index": net.split_index,
            "for_fraction": f"{net.for_fraction[0]}/{net.for_fraction[1]}",
            "encoder_lipschitz": net.encoder_lipschitz_bound(),
            "latent_dim": int(np.prod(net.latent_shape())),
            "input_dim": int(np.prod(net.input_shape)),
        })
        (out / "summary.txt").write_text(summary.to_text())
    except StageError:
        raise
    except Exception as exc:
        _mark(out, f"status = failed\nstage = {stage}\nerror = {exc}\n")
        raise StageError(stage, str(exc)) from exc
    _mark(out, "status = complete\n")
    return summary, report
