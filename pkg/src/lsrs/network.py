"""Split networks ``f = f_c o f_e`` and the reference desk-scale architecture."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lsrs.layers import (
    ChannelLift,
    CircularConv,
    ConvexResidual,
    Dense,
    GroupSort,
    Layer,
    OrthoConv,
    ReLU,
    VanillaResidual,
    iter_params,
)


class MissingBoundError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


@dataclass
class GradTape:
    """Forward intermediates recorded for one reverse pass."""

    caches: list
    latent: np.ndarray
    scores: np.ndarray
    noise_site: str | None = None
    consumed: bool = False

    def consume(self):
        if self.consumed:
            raise TapeError("gradient tape already consumed")
        self.consumed = True
        return self.caches


@dataclass
class PassCounter:
    encoder_rows: int = 0
    classifier_rows: int = 0

    def reset(self):
        self.encoder_rows = 0
        self.classifier_rows = 0


class SplitNetwork:
    """Ordered layers; ``layers[:split_index]`` is the encoder, the rest the classifier."""

    def __init__(self, layers, split_index, n_classes, input_shape, for_fraction=(0, 0)):
        self.layers: list[Layer] = list(layers)
        if not 0 <= split_index <= len(self.layers):
            raise ValueError(f"split_index {split_index} outside [0, {len(self.layers)}]")
        self.split_index = split_index
        self.n_classes = n_classes
        self.input_shape = tuple(input_shape)
        self.for_fraction = tuple(for_fraction)
        self.counter = PassCounter()

    @property
    def encoder(self):
        return self.layers[: self.split_index]

    @property
    def classifier(self):
        return self.layers[self.split_index:]

    def with_split(self, split_index):
        """Same layers (shared, not copied) under a different split."""
        return SplitNetwork(self.layers, split_index, self.n_classes, self.input_shape,
                            self.for_fraction)

    def _check_input(self, x):
        if x.shape[1:] != self.input_shape:
            raise ValueError(f"input shape {x.shape[1:]} != network input {self.input_shape}")

    def encode(self, x):
        self._check_input(x)
        self.counter.encoder_rows += x.shape[0]
        for layer in self.encoder:
            x = layer(x)
        return x

    def classify(self, z):
        self.counter.classifier_rows += z.shape[0]
        for layer in self.classifier:
            z = layer(z)
        if z.shape[-1] != self.n_classes:
            raise ValueError(f"classifier emitted {z.shape[-1]} scores for {self.n_classes} classes")
        return z

    def forward(self, x):
        """Return ``(z, scores)`` with ``z = f_e(x)``."""
        z = self.encode(x)
        return z, self.classify(z)

    def predict_clean(self, x):
        return np.argmax(self.forward(x)[1], axis=1)

    def record(self, x, noise=None, noise_site=None):
        """Forward pass that keeps every intermediate needed by :meth:`backward`.

        ``noise`` is added to the input (``noise_site="input"``) or to the
        latent ``z`` (``noise_site="latent"``).
        """
        self._check_input(x)
        if noise is not None and noise_site == "input":
            x = x + noise
        caches = []
        h = x
        latent = x
        for i, layer in enumerate(self.layers):
            if i == self.split_index:
                if noise is not None and noise_site == "latent":
                    h = h + noise
                latent = h
            h, cache = layer.forward(h)
            caches.append(cache)
        if self.split_index == len(self.layers):
            if noise is not None and noise_site == "latent":
                h = h + noise
            latent = h
        return GradTape(caches, latent, h, noise_site)

    def backward(self, tape, gscores):
        """Reverse pass; returns ``(grad wrt input, {param key: grad})``."""
        if tape is None:
            raise TapeError("no tape recorded")
        caches = tape.consume()
        grads = {}
        g = gscores
        for i in range(len(self.layers) - 1, -1, -1):
            g, lg = self.layers[i].backward(g, caches[i])
            for name, value in lg.items():
                grads[f"{i}.{name}"] = value
        return g, grads

    def encoder_jvp(self, x, v):
        """Jacobian-vector product of ``f_e`` at ``x`` (piecewise-linear layers use the active pattern)."""
        for layer in self.encoder:
            y, cache = layer.forward(x)
            v = layer.jvp(v, cache)
            x = y
        return v

    def encoder_vjp(self, x, u):
        caches = []
        for layer in self.encoder:
            x, cache = layer.forward(x)
            caches.append(cache)
        for layer, cache in zip(reversed(self.encoder), reversed(caches)):
            u, _ = layer.backward(u, cache)
        return u

    def parameters(self):
        """List of ``(key, owner, name)`` for every learnable array."""
        out = []
        for i, layer in enumerate(self.layers):
            out.extend(iter_params(layer, f"{i}."))
        return out

    def get_param(self, key):
        for k, owner, name in self.parameters():
            if k == key:
                return owner.params[name]
        raise KeyError(key)

    def invalidate(self):
        for layer in self.layers:
            layer.invalidate()

    def encoder_lipschitz_bound(self):
        bound = 1.0
        for i, layer in enumerate(self.encoder):
            lb = layer.lipschitz_bound()
            if lb is None:
                raise MissingBoundError(f"encoder layer {i} ({layer!r}) declares no Lipschitz bound")
            bound *= lb
        return bound

    def latent_shape(self):
        z = self.with_split(self.split_index).encode(np.zeros((1, *self.input_shape)))
        return z.shape[1:]


@dataclass
class ArchSpec:
    in_channels: int = 3
    channels: int = 8
    spatial: int = 8
    n_classes: int = 4
    blocks: int = 8
    n_ortho: int = 4
    group_size: int = 2
    hidden: int = 32
    split_index: int | None = None

    def default_split(self):
        return 1 + self.n_ortho


def ortho_block(channels, size, group_size, rng):
    return ConvexResidual([
        OrthoConv(channels, size, rng),
        GroupSort(group_size),
        OrthoConv(channels, size, rng),
    ])


def vanilla_block(channels, size, rng):
    return VanillaResidual([
        CircularConv(channels, size, rng),
        ReLU(),
        CircularConv(channels, size, rng),
    ])


def validate_arch(arch: ArchSpec):
    if not 0 <= arch.n_ortho <= arch.blocks:
        raise ValueError(f"FoR numerator {arch.n_ortho} outside [0, {arch.blocks}]")
    split = arch.default_split() if arch.split_index is None else arch.split_index
    if arch.n_ortho and split < 1 + arch.n_ortho:
        first_out = max(split, 1)
        raise ValueError(
            f"orthogonal block {first_out - 1} (layer {first_out}) lies outside the encoder "
            f"(split_index={split})"
        )
    if split > 1 + arch.n_ortho:
        raise ValueError(
            f"non-orthogonal block {arch.n_ortho} (layer {1 + arch.n_ortho}) lies inside the "
            f"encoder (split_index={split})"
        )
    return split


def build_reference_net(arch: ArchSpec, rng) -> SplitNetwork:
    """Channel lift, ``n_ortho`` convex orthogonal blocks, vanilla blocks, dense head."""
    split = validate_arch(arch)
    c, n = arch.channels, arch.spatial
    layers: list[Layer] = [ChannelLift(arch.in_channels, c)]
    layers += [ortho_block(c, n, arch.group_size, rng) for _ in range(arch.n_ortho)]
    layers += [vanilla_block(c, n, rng) for _ in range(arch.blocks - arch.n_ortho)]
    layers += [Dense(c * n * n, arch.hidden, rng), ReLU(), Dense(arch.hidden, arch.n_classes, rng)]
    return SplitNetwork(layers, split, arch.n_classes, (arch.in_channels, n, n),
                        (arch.n_ortho, arch.blocks))
