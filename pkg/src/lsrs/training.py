"""Gaussian-augmented training with momentum SGD and a step learning-rate schedule."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from lsrs import rng as rngs
from lsrs.network import SplitNetwork

log = logging.getLogger(__name__)

NOISE_SITES = ("input", "latent")


class DivergenceError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 20
    lr0: float = 0.01
    lr_decay: float = 0.1
    lr_step: int = 30
    momentum: float = 0.9
    sigma: float = 0.25
    noise_site: str = "latent"
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.noise_site not in NOISE_SITES:
            raise ValueError(f"noise_site must be one of {NOISE_SITES}")
        if self.epochs < 0 or self.batch_size < 1 or self.lr_step < 1:
            raise ValueError("epochs >= 0, batch_size >= 1, lr_step >= 1 required")

    def lr_at(self, epoch):
        return self.lr0 * self.lr_decay ** (epoch // self.lr_step)


def softmax_cross_entropy(scores, labels):
    """Mean cross-entropy and its gradient wrt the scores."""
    shifted = scores - scores.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    b = scores.shape[0]
    loss = -float(logp[np.arange(b), labels].mean())
    g = np.exp(logp)
    g[np.arange(b), labels] -= 1.0
    return loss, g / b


def noise_shape(net: SplitNetwork, x, noise_site):
    if noise_site == "input" or net.split_index == 0:
        return x.shape
    return (x.shape[0], *net.latent_shape())


def backward(net: SplitNetwork, x, labels, noise=None, noise_site="latent", gscores=None):
    """Loss, input gradient and parameter gradients for one batch.

    With ``gscores`` given, it replaces the cross-entropy gradient as the
    upstream gradient (the loss is still reported).
    """
    tape = net.record(x, noise, noise_site)
    loss, g = softmax_cross_entropy(tape.scores, labels)
    if gscores is not None:
        g = gscores
    gx, grads = net.backward(tape, g)
    return loss, gx, grads, tape.scores


class MomentumSGD:
    def __init__(self, net: SplitNetwork, momentum):
        self.net = net
        self.momentum = momentum
        self.velocity = {key: np.zeros_like(owner.params[name])
                         for key, owner, name in net.parameters()}

    def step(self, grads, lr):
        for key, owner, name in self.net.parameters():
            v = self.velocity[key]
            v *= self.momentum
            v += grads[key]
            owner.params[name] = owner.params[name] - lr * v
        self.net.invalidate()


@dataclass
class HistoryRow:
    epoch: int
    step: int
    lr: float
    loss: float
    train_acc: float


def train(net: SplitNetwork, inputs, labels, cfg: TrainConfig):
    """Train in place; returns ``(net, history)``.

    Each step draws one fresh Gaussian sample per example at the configured
    noise site. Deterministic given ``cfg.seed``.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    labels = np.asarray(labels)
    if len(inputs) == 0:
        raise ValueError("empty training set")
    if len(inputs) != len(labels):
        raise ValueError("inputs and labels differ in length")
    shuffle_rng = rngs.stream(cfg.seed, rngs.SHUFFLE)
    noise_rng = rngs.stream(cfg.seed, rngs.TRAIN_NOISE)
    opt = MomentumSGD(net, cfg.momentum)
    history: list[HistoryRow] = []
    sample_shape = noise_shape(net, inputs[:1], cfg.noise_site)[1:]
    step = 0
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = shuffle_rng.permutation(len(inputs))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = inputs[idx], labels[idx]
            noise = None
            if cfg.sigma > 0:
                noise = rngs.gaussian_sample((len(idx), *sample_shape), cfg.sigma, noise_rng)
            loss, _, grads, scores = backward(net, xb, yb, noise, cfg.noise_site)
            if not np.isfinite(loss):
                raise DivergenceError(f"loss became {loss} at epoch {epoch}, step {step}")
            opt.step(grads, lr)
            acc = float(np.mean(np.argmax(scores, axis=1) == yb))
            history.append(HistoryRow(epoch, step, lr, loss, acc))
            step += 1
        log.debug("epoch %d lr %.4g loss %.4f", epoch, lr, history[-1].loss)
    return net, history


def write_history(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "step", "lr", "loss", "train_acc"])
        for r in history:
            w.writerow([r.epoch, r.step, repr(r.lr), repr(r.loss), repr(r.train_acc)])
