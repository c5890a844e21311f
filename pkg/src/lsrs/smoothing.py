"""Monte Carlo prediction and certification of smoothed classifiers.

Two noise placements are supported. ``Mode.IS_RS`` perturbs the input and
runs the full network per sample. ``Mode.LS_RS`` runs the encoder once,
perturbs the latent ``z = f_e(x)`` and runs only the classifier per sample;
the latent radius is turned into an input radius by dividing by the
encoder's construction-time Lipschitz bound.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field

import numpy as np

from lsrs import rng as rngs
from lsrs.network import SplitNetwork
from lsrs.stats import (
    binom_test_two_sided,
    clopper_pearson_lower,
    std_normal_quantile,
)

ABSTAIN = -1


class Mode(enum.Enum):
    IS_RS = "is-rs"
    LS_RS = "ls-rs"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        for mode in cls:
            if mode.value == key:
                return mode
        raise ValueError(f"unknown mode {value!r}; expected one of {[m.value for m in cls]}")


@dataclass
class SmoothingConfig:
    sigma: float = 0.25
    n0: int = 100
    n: int = 10_000
    alpha: float = 0.001
    batch_size: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.n0 < 1 or self.n < 1:
            raise ValueError("n0 and n must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class CertResult:
    predicted: int
    p_lower: float
    radius_latent: float
    radius_input: float
    elapsed: float
    counts: np.ndarray = field(repr=False)
    lipschitz: float = 1.0
    selected: int = ABSTAIN  # class picked from the n0 selection draws

    @property
    def abstained(self):
        return self.predicted == ABSTAIN


def _as_batch(x, net):
    x = np.asarray(x, dtype=np.float64)
    if x.shape == net.input_shape:
        x = x[None]
    if x.shape != (1, *net.input_shape):
        raise ValueError(f"expected one example of shape {net.input_shape}, got {x.shape}")
    return x


def noisy_counts(point, head, n_classes, sigma, m, batch_size, rng):
    """Tally ``argmax head(point + noise)`` over ``m`` Gaussian draws."""
    counts = np.zeros(n_classes, dtype=np.int64)
    remaining = m
    while remaining > 0:
        b = min(batch_size, remaining)
        noise = rngs.gaussian_sample((b, *point.shape[1:]), sigma, rng)
        scores = head(point + noise)
        counts += np.bincount(np.argmax(scores, axis=1), minlength=n_classes)
        remaining -= b
    return counts


def _smoothing_site(net: SplitNetwork, x, mode: Mode):
    """(base point, per-sample head) for the given mode."""
    if mode is Mode.LS_RS:
        return net.encode(x), net.classify
    return x, lambda t: net.forward(t)[1]


def sample_counts(net: SplitNetwork, x, mode, cfg: SmoothingConfig, m, rng=None):
    """Per-class counts over ``m`` noisy evaluations of the base classifier."""
    if m < 1:
        raise ValueError("sample count must be >= 1")
    mode = Mode.parse(mode)
    x = _as_batch(x, net)
    rng = rngs.stream(cfg.seed, rngs.CERT, 0) if rng is None else rng
    point, head = _smoothing_site(net, x, mode)
    return noisy_counts(point, head, net.n_classes, cfg.sigma, m, cfg.batch_size, rng)


def radius_from_p_lower(p_lower, sigma):
    return sigma * std_normal_quantile(p_lower)


def two_sided_radius(p_a, p_b, sigma):
    """``sigma/2 * (Phi^-1(p_a) - Phi^-1(p_b))``."""
    if not (0.0 <= p_b <= p_a <= 1.0 and p_a > 0.0 and p_b < 1.0 and p_a + p_b <= 1.0 + 1e-15):
        raise ValueError(f"invalid probabilities p_a={p_a}, p_b={p_b}")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if p_a == 1.0 or p_b == 0.0:
        return math.inf
    return sigma / 2.0 * (std_normal_quantile(p_a) - std_normal_quantile(p_b))


def certify(net: SplitNetwork, x, mode, cfg: SmoothingConfig, index=0) -> CertResult:
    """Certify one example.

    Selection uses ``n0`` draws, estimation ``n`` fresh draws, both from the
    stream keyed by ``(cfg.seed, index)``. ``p_B`` is bounded by
    ``1 - p_lower``, so the radius is ``sigma * Phi^-1(p_lower)``.
    """
    mode = Mode.parse(mode)
    x = _as_batch(x, net)
    lipschitz = net.encoder_lipschitz_bound() if mode is Mode.LS_RS else 1.0
    rng = rngs.stream(cfg.seed, rngs.CERT, index)

    start = time.perf_counter()
    point, head = _smoothing_site(net, x, mode)
    counts0 = noisy_counts(point, head, net.n_classes, cfg.sigma, cfg.n0, cfg.batch_size, rng)
    guess = int(np.argmax(counts0))
    counts = noisy_counts(point, head, net.n_classes, cfg.sigma, cfg.n, cfg.batch_size, rng)
    p_lower = clopper_pearson_lower(int(counts[guess]), cfg.n, cfg.alpha)
    if p_lower <= 0.5:
        predicted, radius = ABSTAIN, 0.0
    else:
        predicted, radius = guess, radius_from_p_lower(p_lower, cfg.sigma)
    elapsed = time.perf_counter() - start

    return CertResult(predicted, p_lower, radius, radius / lipschitz, elapsed, counts, lipschitz,
                      guess)


def predict_from_counts(counts, alpha):
    order = np.argsort(counts, kind="stable")[::-1]
    top, runner = int(order[0]), int(order[1]) if len(order) > 1 else None
    n_a = int(counts[top])
    n_b = int(counts[runner]) if runner is not None else 0
    if n_a + n_b == 0 or binom_test_two_sided(n_a, n_a + n_b) > alpha:
        return ABSTAIN
    return top


def predict(net: SplitNetwork, x, mode, cfg: SmoothingConfig, index=0):
    """Smoothed prediction with abstention via a two-sided binomial test on the top two."""
    mode = Mode.parse(mode)
    x = _as_batch(x, net)
    rng = rngs.stream(cfg.seed, rngs.CERT, index)
    point, head = _smoothing_site(net, x, mode)
    counts = noisy_counts(point, head, net.n_classes, cfg.sigma, cfg.n, cfg.batch_size, rng)
    return predict_from_counts(counts, cfg.alpha)
