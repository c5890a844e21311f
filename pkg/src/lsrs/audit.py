"""Empirical checks of the encoder's declared Lipschitz bound.

These estimates lower-bound the true constant and are diagnostics only;
certified radii always use the construction-time bound.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass

import numpy as np

from lsrs import rng as rngs
from lsrs.network import SplitNetwork
from lsrs.smoothing import ABSTAIN, CertResult, Mode, SmoothingConfig, noisy_counts

PROBE_MAGNITUDES = (1e-3, 1e-2, 1e-1, 1.0)


def _norms(a):
    return np.sqrt(np.sum(a.reshape(a.shape[0], -1) ** 2, axis=1))


def _ratios(net, x, xp):
    d = xp - x
    num = _norms(net.encode(xp) - net.encode(x))
    den = _norms(d)
    return num[den > 0] / den[den > 0]


def pairwise_lipschitz_probe(net: SplitNetwork, n_pairs=100, scale=1.0, seed=0, inputs=None,
                             ascent_steps=5):
    """Max of ``|f_e(x) - f_e(x')| / |x - x'|`` over random and gradient-aligned pairs."""
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    rng = rngs.stream(seed, rngs.AUDIT, 0)
    if inputs is None:
        x = rng.uniform(0.0, 1.0, size=(n_pairs, *net.input_shape))
    else:
        x = np.asarray(inputs, dtype=np.float64)[:n_pairs]
    best = 0.0
    for mag in PROBE_MAGNITUDES:
        u = rng.standard_normal(x.shape)
        u *= (scale * mag / _norms(u)).reshape(-1, *([1] * (x.ndim - 1)))
        best = max(best, float(np.max(_ratios(net, x, x + u), initial=0.0)))

    # sharpen: move x' along the gradient of |f_e(x') - f_e(x)|^2 at fixed |x' - x|
    if net.encoder:
        fx = net.encode(x)
        for mag in PROBE_MAGNITUDES:
            r = scale * mag
            d = rng.standard_normal(x.shape)
            for _ in range(ascent_steps):
                d *= (r / _norms(d)).reshape(-1, *([1] * (x.ndim - 1)))
                best = max(best, float(np.max(_ratios(net, x, x + d), initial=0.0)))
                g = net.encoder_vjp(x + d, net.encode(x + d) - fx)
                if not np.all(np.isfinite(g)) or np.all(g == 0):
                    break
                d = g
            d *= (r / np.maximum(_norms(d), 1e-300)).reshape(-1, *([1] * (x.ndim - 1)))
            best = max(best, float(np.max(_ratios(net, x, x + d), initial=0.0)))
    return best


def jacobian_spectral_norm(net: SplitNetwork, x, iters=50, seed=0, max_restarts=3):
    """Power-iteration estimate of the largest singular value of ``d f_e / d x`` at ``x``."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    if x.shape == net.input_shape:
        x = x[None]
    rng = rngs.stream(seed, rngs.AUDIT, 1)
    for _ in range(max_restarts + 1):
        v = rng.standard_normal(x.shape)
        v /= np.linalg.norm(v)
        collapsed = False
        for _ in range(iters):
            u = net.encoder_jvp(x, v)
            w = net.encoder_vjp(x, u)
            nw = np.linalg.norm(w)
            if nw == 0 or not np.isfinite(nw):
                collapsed = True
                break
            v = w / nw
        if not collapsed:
            return float(np.linalg.norm(net.encoder_jvp(x, v)))
    return 0.0


def _margin_gradient(net, point, predicted, mode, sigma, m, rng):
    """Gradient wrt the input of the mean noisy margin (runner-up minus predicted)."""
    batch = np.repeat(point, m, axis=0)
    if mode is Mode.LS_RS:
        shape, site = (m, *net.latent_shape()), "latent"
    else:
        shape, site = batch.shape, "input"
    noise = rngs.gaussian_sample(shape, sigma, rng)
    tape = net.record(batch, noise, site)
    scores = tape.scores
    others = scores.copy()
    others[:, predicted] = -np.inf
    runner = np.argmax(others, axis=1)
    g = np.zeros_like(scores)
    g[np.arange(m), runner] = 1.0 / m
    g[:, predicted] -= 1.0 / m
    gx, _ = net.backward(tape, g)
    return gx.sum(axis=0, keepdims=True)


def smoothed_vote(net, point, mode, cfg, m, rng):
    """Plain majority vote of the smoothed classifier (no abstention)."""
    if mode is Mode.LS_RS:
        base, head = net.encode(point), net.classify
    else:
        base, head = point, lambda t: net.forward(t)[1]
    counts = noisy_counts(base, head, net.n_classes, cfg.sigma, m, cfg.batch_size, rng)
    return int(np.argmax(counts)), counts


def certified_ball_attack(net: SplitNetwork, x, cert: CertResult, mode, cfg: SmoothingConfig,
                          n_restarts=4, steps=3, grad_samples=64, vote_n=None, index=0,
                          include_center=False):
    """Search the certified ball for a point where the smoothed prediction changes.

    Each restart draws a random point on the sphere of radius
    ``0.999 * radius_input``, refines it by projected gradient steps on the
    noisy margin, and judges the refined point by a ``vote_n``-sample majority
    vote. Returns the number of flips.
    """
    if cert.predicted == ABSTAIN:
        raise ValueError("cannot attack an abstained certification")
    mode = Mode.parse(mode)
    x = np.asarray(x, dtype=np.float64)
    if x.shape == net.input_shape:
        x = x[None]
    vote_n = cfg.n if vote_n is None else vote_n
    r = 0.999 * cert.radius_input
    violations = 0
    rng = rngs.stream(cfg.seed, rngs.ATTACK, index)
    if include_center:
        label, _ = smoothed_vote(net, x, mode, cfg, vote_n, rng)
        violations += label != cert.predicted
    if r <= 0:
        return violations
    for _ in range(n_restarts):
        d = rng.standard_normal(x.shape)
        d *= r / np.linalg.norm(d)
        for _ in range(steps):
            g = _margin_gradient(net, x + d, cert.predicted, mode, cfg.sigma, grad_samples, rng)
            ng = np.linalg.norm(g)
            if ng == 0:
                break
            d = d + 0.5 * r * g / ng
            nd = np.linalg.norm(d)
            if nd > r:
                d *= r / nd
        label, _ = smoothed_vote(net, x + d, mode, cfg, vote_n, rng)
        violations += label != cert.predicted
    return int(violations)


@dataclass
class AuditReport:
    max_pairwise_ratio: float
    max_jacobian_norm: float
    declared_bound: float
    attack_violations: int = 0
    tol: float = 1e-3

    @property
    def passed(self):
        limit = self.declared_bound * (1.0 + self.tol)
        return (self.max_pairwise_ratio <= limit and self.max_jacobian_norm <= limit
                and self.attack_violations == 0)

    def to_text(self):
        lines = [f"{k} = {v!r}" for k, v in asdict(self).items()]
        lines.append(f"passed = {self.passed}")
        return "\n".join(lines) + "\n"

    def csv_header(self):
        return list(asdict(self)) + ["passed"]

    def csv_row(self):
        return [repr(v) for v in asdict(self).values()] + [str(self.passed)]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.csv_header())
        w.writerow(self.csv_row())
        return buf.getvalue()


def audit_encoder(net: SplitNetwork, n_pairs=100, n_points=10, iters=50, seed=0, tol=1e-3,
                  inputs=None, attack_violations=0):
    rng = rngs.stream(seed, rngs.AUDIT, 2)
    if inputs is None:
        points = rng.uniform(0.0, 1.0, size=(n_points, *net.input_shape))
    else:
        points = np.asarray(inputs, dtype=np.float64)[:n_points]
    ratio = pairwise_lipschitz_probe(net, n_pairs, seed=seed, inputs=inputs)
    jac = max(jacobian_spectral_norm(net, p, iters, seed=seed + i) for i, p in enumerate(points))
    return AuditReport(ratio, jac, net.encoder_lipschitz_bound(), attack_violations, tol)
