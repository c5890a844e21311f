"""Experiment configuration read from INI-style ``key = value`` files.

Sections: ``[experiment]``, ``[model]``, ``[train]``, ``[smoothing]``,
``[data]``, ``[audit]``, ``[bench]``. See ``docs/example_config.ini``.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from lsrs.network import ArchSpec, validate_arch
from lsrs.smoothing import Mode, SmoothingConfig
from lsrs.training import TrainConfig


@dataclass
class DataSpec:
    source: str = "blobs"
    n_classes: int = 4
    train_per_class: int = 64
    test_per_class: int = 16
    spread: float = 0.25
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    test_limit: int = 0


@dataclass
class AuditSpec:
    n_pairs: int = 100
    n_points: int = 5
    iters: int = 30
    tol: float = 1e-3
    attack_points: int = 0
    attack_restarts: int = 2
    attack_vote_n: int = 2000


@dataclass
class BenchSpec:
    depths: tuple = (0, 2, 4, 6, 8)
    examples: int = 3
    workers: int = 1


@dataclass
class ExperimentConfig:
    arch: ArchSpec = field(default_factory=ArchSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    data: DataSpec = field(default_factory=DataSpec)
    audit: AuditSpec = field(default_factory=AuditSpec)
    bench: BenchSpec = field(default_factory=BenchSpec)
    mode: Mode = Mode.LS_RS
    seed: int = 0
    out: str = "out"
    thresholds: tuple = (0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5)

    def validate(self):
        validate_arch(self.arch)
        if self.data.n_classes != self.arch.n_classes:
            raise ValueError(
                f"data has {self.data.n_classes} classes but model has {self.arch.n_classes}")
        return self

    @property
    def out_dir(self):
        return Path(self.out)


def _convert(raw: str, template):
    if isinstance(template, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(template, int):
        return int(raw)
    if isinstance(template, float):
        return float(raw)
    if isinstance(template, tuple):
        kind = type(template[0]) if template else float
        return tuple(kind(v) for v in raw.replace(",", " ").split())
    return raw.strip()


def _fill(obj, section, name):
    known = {f.name: f for f in fields(obj)}
    updates = {}
    for key, raw in section.items():
        if key not in known:
            raise ValueError(f"[{name}] unknown key {key!r}")
        current = getattr(obj, key)
        if key == "split_index":
            updates[key] = None if raw.strip().lower() in ("", "auto", "none") else int(raw)
        else:
            updates[key] = _convert(raw, current if current is not None else "")
    return replace(obj, **updates)


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    cp.read_string(text)
    known = {"experiment", "model", "train", "smoothing", "data", "audit", "bench"}
    for name in cp.sections():
        if name not in known:
            raise ValueError(f"unknown section [{name}]")

    exp = dict(cp["experiment"]) if cp.has_section("experiment") else {}
    seed = int(exp.pop("seed", 0))
    mode = Mode.parse(exp.pop("mode", Mode.LS_RS.value))
    out = exp.pop("out", "out").strip()
    thresholds = ExperimentConfig.thresholds
    if "thresholds" in exp:
        thresholds = _convert(exp.pop("thresholds"), (0.0,))
    if exp:
        raise ValueError(f"[experiment] unknown keys {sorted(exp)}")

    arch = _fill(ArchSpec(), dict(cp["model"]) if cp.has_section("model") else {}, "model")
    train_section = dict(cp["train"]) if cp.has_section("train") else {}
    train_section.setdefault("noise_site", "latent" if mode is Mode.LS_RS else "input")
    train_section.setdefault("seed", str(seed))
    train = _fill(TrainConfig(), train_section, "train")
    sm_section = dict(cp["smoothing"]) if cp.has_section("smoothing") else {}
    sm_section.setdefault("seed", str(seed))
    smoothing = _fill(SmoothingConfig(), sm_section, "smoothing")
    data = _fill(DataSpec(), dict(cp["data"]) if cp.has_section("data") else {}, "data")
    audit = _fill(AuditSpec(), dict(cp["audit"]) if cp.has_section("audit") else {}, "audit")
    bench = _fill(BenchSpec(), dict(cp["bench"]) if cp.has_section("bench") else {}, "bench")
    cfg = ExperimentConfig(arch, train, smoothing, data, audit, bench, mode, seed, out,
                           tuple(thresholds))
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def apply_overrides(cfg: ExperimentConfig, sigma=None, mode=None, split=None, seed=None, n=None,
                    alpha=None, out=None) -> ExperimentConfig:
    """Command-line overrides; ``sigma`` applies to training and certification alike."""
    if mode is not None:
        new_mode = Mode.parse(mode)
        if new_mode is not cfg.mode:
            site = "latent" if new_mode is Mode.LS_RS else "input"
            cfg = replace(cfg, mode=new_mode, train=replace(cfg.train, noise_site=site))
    if sigma is not None:
        cfg = replace(cfg, train=replace(cfg.train, sigma=sigma),
                      smoothing=replace(cfg.smoothing, sigma=sigma))
    if split is not None:
        cfg = replace(cfg, arch=replace(cfg.arch, split_index=split))
    if seed is not None:
        cfg = replace(cfg, seed=seed, train=replace(cfg.train, seed=seed),
                      smoothing=replace(cfg.smoothing, seed=seed))
    if n is not None:
        cfg = replace(cfg, smoothing=replace(cfg.smoothing, n=n))
    if alpha is not None:
        cfg = replace(cfg, smoothing=replace(cfg.smoothing, alpha=alpha))
    if out is not None:
        cfg = replace(cfg, out=out)
    return cfg.validate()
