"""Latent-space randomized smoothing with orthogonal (1-Lipschitz) encoders."""

from lsrs.network import SplitNetwork, build_reference_net
from lsrs.smoothing import ABSTAIN, CertResult, Mode, SmoothingConfig, certify, predict
from lsrs.training import TrainConfig, train

__all__ = [
    "ABSTAIN",
    "CertResult",
    "Mode",
    "SmoothingConfig",
    "SplitNetwork",
    "TrainConfig",
    "build_reference_net",
    "certify",
    "predict",
    "train",
]
