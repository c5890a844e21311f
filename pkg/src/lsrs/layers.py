"""Layer set for split networks.

Every layer exposes the same small protocol:

* ``forward(x) -> (y, cache)``
* ``backward(gy, cache) -> (gx, grads)`` where ``grads`` maps parameter
  names to arrays shaped like the parameters
* ``jvp(v, cache) -> Jv`` (the layer's linearization at the cached point)
* ``lipschitz_bound() -> float | None``; ``None`` means "no declared bound"

Complex gradients follow the convention ``g = dL/dRe + i dL/dIm``, so the
adjoint of a complex-linear map ``M`` is ``M^H``.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from lsrs.tensor import complex_solve, conj_t, fft2, ifft2, irfft2, rfft2

IMAG_TOL = 1e-8


def spectral_apply(m, xf):
    """Per-frequency matmul: ``m`` is (n, n, c_out, c_in), ``xf`` is (B, c_in, n, n)."""
    y = np.matmul(m, np.ascontiguousarray(xf.transpose(2, 3, 1, 0)))
    return np.ascontiguousarray(y.transpose(3, 2, 0, 1))


def spectral_outer(gz, xf):
    """Sum over the batch of ``gz[b,:,k] xf[b,:,k]^H``, laid out (n, n, c_out, c_in)."""
    return np.matmul(gz.transpose(2, 3, 1, 0), np.conj(xf).transpose(2, 3, 0, 1))


def to_freq_major(w):
    """(c_out, c_in, n, n) -> (n, n, c_out, c_in)."""
    return np.moveaxis(w, (0, 1), (2, 3))


def to_channel_major(m):
    return np.moveaxis(m, (2, 3), (0, 1))


def real_part(y, what="spectral product"):
    scale = max(1.0, float(np.max(np.abs(y.real), initial=0.0)))
    residue = float(np.max(np.abs(y.imag), initial=0.0))
    if residue > IMAG_TOL * scale:
        raise FloatingPointError(f"{what}: imaginary residue {residue:.3e} exceeds tolerance")
    return np.ascontiguousarray(y.real)


def cayley_parts(raw_weights):
    """Return (A, (I+A)^-1, Q) per frequency, each laid out (n, n, c, c)."""
    raw_weights = np.asarray(raw_weights, dtype=np.float64)
    if raw_weights.ndim != 4 or raw_weights.shape[0] != raw_weights.shape[1]:
        raise ValueError(f"Cayley needs square c x c x n x n weights, got {raw_weights.shape}")
    if raw_weights.shape[2] != raw_weights.shape[3]:
        raise ValueError(f"non-square kernel {raw_weights.shape[2:]}")
    wf = to_freq_major(fft2(raw_weights))
    a = wf - conj_t(wf)
    c = raw_weights.shape[0]
    eye = np.broadcast_to(np.eye(c, dtype=np.complex128), a.shape)
    m = complex_solve(eye + a, eye)
    q = m - a @ m
    return a, m, q


def cayley_orthogonalize(raw_weights):
    """Spectral orthogonal weights Q[:, :, i, j] = (I - A)(I + A)^-1, shape (c, c, n, n)."""
    return to_channel_major(cayley_parts(raw_weights)[2])


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}

    def children(self) -> list[Layer]:
        return []

    def invalidate(self):
        for child in self.children():
            child.invalidate()

    def forward(self, x):
        raise NotImplementedError

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, gy, cache):
        raise NotImplementedError

    def jvp(self, v, cache):
        raise NotImplementedError

    def lipschitz_bound(self):
        return None

    def config(self) -> dict:
        return {}

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.config().items())
        return f"{type(self).__name__}({args})"


class OrthoConv(Layer):
    """Circular convolution made orthogonal by a per-frequency Cayley transform.

    The spectral weights are cached after the first forward and must be
    invalidated (``invalidate()``) whenever ``params['weight']`` changes.
    """

    kind = "ortho_conv"

    def __init__(self, channels, size, rng=None, weight=None):
        super().__init__()
        if weight is None:
            bound = 1.0 / (channels * size)
            if rng is None:
                weight = np.zeros((channels, channels, size, size))
            else:
                weight = rng.uniform(-bound, bound, size=(channels, channels, size, size))
        weight = np.asarray(weight, dtype=np.float64)
        if weight.shape != (channels, channels, size, size):
            raise ValueError(f"weight shape {weight.shape} != {(channels, channels, size, size)}")
        self.channels = channels
        self.size = size
        self.params["weight"] = weight
        self._spectral = None

    def invalidate(self):
        self._spectral = None

    def spectral(self):
        if self._spectral is None:
            self._spectral = cayley_parts(self.params["weight"])
        return self._spectral

    @property
    def cached_spectral_q(self):
        return None if self._spectral is None else to_channel_major(self._spectral[2])

    def _check(self, x):
        if x.ndim != 4 or x.shape[1:] != (self.channels, self.size, self.size):
            raise ValueError(
                f"{self.kind}: expected (B, {self.channels}, {self.size}, {self.size}), got {x.shape}"
            )

    def forward(self, x):
        self._check(x)
        q = self.spectral()[2]
        xf = fft2(x)
        y = real_part(ifft2(spectral_apply(q, xf)), self.kind)
        return y, xf

    def backward(self, gy, xf):
        _, m, q = self.spectral()
        n2 = self.size * self.size
        gyf = fft2(gy)
        gx = real_part(ifft2(spectral_apply(conj_t(q), gyf)), self.kind)
        gq = spectral_outer(gyf / n2, xf)
        # dQ = -2 M dA M with M = (I + A)^-1
        mh = conj_t(m)
        ga = -2.0 * (mh @ gq @ mh)
        gwf = ga - conj_t(ga)
        gw = real_part(ifft2(to_channel_major(gwf)) * n2, self.kind)
        return gx, {"weight": gw}

    def jvp(self, v, cache):
        return self(v)

    def lipschitz_bound(self):
        return 1.0

    def config(self):
        return {"channels": self.channels, "size": self.size}


class CircularConv(Layer):
    """Unconstrained circular convolution computed in the Fourier domain."""

    kind = "circular_conv"

    def __init__(self, channels, size, rng=None, weight=None, init_scale=0.5):
        super().__init__()
        if weight is None:
            std = init_scale / (channels * size)
            weight = (np.zeros((channels, channels, size, size)) if rng is None
                      else rng.normal(0.0, std, size=(channels, channels, size, size)))
        self.channels = channels
        self.size = size
        self.params["weight"] = np.asarray(weight, dtype=np.float64)
        self._wf = None

    def invalidate(self):
        self._wf = None

    def spectral(self):
        if self._wf is None:
            self._wf = to_freq_major(fft2(self.params["weight"]))
        return self._wf

    def forward(self, x):
        if x.ndim != 4 or x.shape[1:] != (self.channels, self.size, self.size):
            raise ValueError(f"{self.kind}: bad input shape {x.shape}")
        # real kernel and real input: the half spectrum determines the output exactly
        half = self.spectral()[:, : self.size // 2 + 1]
        return irfft2(spectral_apply(half, rfft2(x)), self.size), x

    def backward(self, gy, x):
        wf = self.spectral()
        n2 = self.size * self.size
        xf = fft2(x)
        gyf = fft2(gy)
        gx = real_part(ifft2(spectral_apply(conj_t(wf), gyf)), self.kind)
        gwf = spectral_outer(gyf / n2, xf)
        gw = real_part(ifft2(to_channel_major(gwf)) * n2, self.kind)
        return gx, {"weight": gw}

    def jvp(self, v, cache):
        return self(v)

    def config(self):
        return {"channels": self.channels, "size": self.size}


class ChannelLift(Layer):
    """Append zero channels; norm preserving."""

    kind = "channel_lift"

    def __init__(self, in_channels, out_channels):
        super().__init__()
        if out_channels < in_channels:
            raise ValueError("channel lift cannot drop channels")
        self.in_channels = in_channels
        self.out_channels = out_channels

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValueError(f"{self.kind}: expected {self.in_channels} channels, got {x.shape}")
        pad = [(0, 0), (0, self.out_channels - self.in_channels), (0, 0), (0, 0)]
        return np.pad(x, pad), None

    def backward(self, gy, cache):
        return np.ascontiguousarray(gy[:, : self.in_channels]), {}

    def jvp(self, v, cache):
        return self(v)

    def lipschitz_bound(self):
        return 1.0

    def config(self):
        return {"in_channels": self.in_channels, "out_channels": self.out_channels}


class GroupSort(Layer):
    """Sort consecutive groups of the flattened per-example features ascending."""

    kind = "groupsort"

    def __init__(self, group_size=2):
        super().__init__()
        if group_size < 1:
            raise ValueError("group_size must be positive")
        self.group_size = group_size

    def _grouped(self, x):
        features = int(np.prod(x.shape[1:]))
        if features % self.group_size:
            raise ValueError(f"{features} features not divisible by group size {self.group_size}")
        return x.reshape(x.shape[0], -1, self.group_size)

    def forward(self, x):
        g = self._grouped(x)
        if self.group_size == 2:
            # min/max pairs; a swap happens only on strict inversion, as in a stable sort
            swap = g[..., 0] > g[..., 1]
            y = np.stack([np.minimum(g[..., 0], g[..., 1]), np.maximum(g[..., 0], g[..., 1])], -1)
            return y.reshape(x.shape), swap
        perm = np.argsort(g, axis=-1, kind="stable")
        y = np.take_along_axis(g, perm, axis=-1)
        return y.reshape(x.shape), perm

    def _permute(self, v, perm):
        """Apply the recorded forward permutation to ``v``."""
        if self.group_size == 2:
            g = v.reshape(*perm.shape, 2)
            out = np.where(perm[..., None], g[..., ::-1], g)
            return out.reshape(v.shape)
        return np.take_along_axis(v.reshape(perm.shape), perm, axis=-1).reshape(v.shape)

    def backward(self, gy, perm):
        if self.group_size == 2:
            # a pair swap is its own inverse
            return self._permute(gy, perm), {}
        gg = np.empty(perm.shape)
        np.put_along_axis(gg, perm, gy.reshape(perm.shape), axis=-1)
        return gg.reshape(gy.shape), {}

    def jvp(self, v, perm):
        return self._permute(v, perm)

    def lipschitz_bound(self):
        return 1.0

    def config(self):
        return {"group_size": self.group_size}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, gy, mask):
        return gy * mask, {}

    def jvp(self, v, mask):
        return v * mask

    def lipschitz_bound(self):
        return 1.0


class Dense(Layer):
    """Affine map on flattened features."""

    kind = "dense"

    def __init__(self, in_features, out_features, rng=None, weight=None, bias=None):
        super().__init__()
        if weight is None:
            weight = (np.zeros((out_features, in_features)) if rng is None
                      else rng.normal(0.0, np.sqrt(2.0 / (in_features + out_features)),
                                      size=(out_features, in_features)))
        if bias is None:
            bias = np.zeros(out_features)
        self.in_features = in_features
        self.out_features = out_features
        self.params["weight"] = np.asarray(weight, dtype=np.float64)
        self.params["bias"] = np.asarray(bias, dtype=np.float64)

    def forward(self, x):
        flat = x.reshape(x.shape[0], -1)
        if flat.shape[1] != self.in_features:
            raise ValueError(f"{self.kind}: expected {self.in_features} features, got {flat.shape[1]}")
        return flat @ self.params["weight"].T + self.params["bias"], (flat, x.shape)

    def backward(self, gy, cache):
        flat, shape = cache
        gx = (gy @ self.params["weight"]).reshape(shape)
        return gx, {"weight": gy.T @ flat, "bias": gy.sum(axis=0)}

    def jvp(self, v, cache):
        return v.reshape(v.shape[0], -1) @ self.params["weight"].T

    def config(self):
        return {"in_features": self.in_features, "out_features": self.out_features}


class ScalarMultiply(Layer):
    kind = "scalar_multiply"

    def __init__(self, factor):
        super().__init__()
        self.factor = float(factor)

    def forward(self, x):
        return x * self.factor, None

    def backward(self, gy, cache):
        return gy * self.factor, {}

    def jvp(self, v, cache):
        return v * self.factor

    def lipschitz_bound(self):
        return abs(self.factor)

    def config(self):
        return {"factor": self.factor}


class ScalarDivide(Layer):
    kind = "scalar_divide"

    def __init__(self, divisor):
        super().__init__()
        if divisor == 0:
            raise ValueError("divisor must be nonzero")
        self.divisor = float(divisor)

    def forward(self, x):
        return x / self.divisor, None

    def backward(self, gy, cache):
        return gy / self.divisor, {}

    def jvp(self, v, cache):
        return v / self.divisor

    def lipschitz_bound(self):
        return 1.0 / abs(self.divisor)

    def config(self):
        return {"divisor": self.divisor}


def _run_sequence(layers, x):
    caches = []
    for layer in layers:
        x, cache = layer.forward(x)
        caches.append(cache)
    return x, caches


def _backprop_sequence(layers, caches, gy):
    grads = {}
    for i in range(len(layers) - 1, -1, -1):
        gy, g = layers[i].backward(gy, caches[i])
        for name, value in g.items():
            grads[f"main.{i}.{name}"] = value
    return gy, grads


def _sigmoid(t):
    return expit(t)


class ConvexResidual(Layer):
    """``alpha * main(x) + (1 - alpha) * x`` with ``alpha = sigmoid(raw_alpha)``."""

    kind = "convex_residual"

    def __init__(self, main, raw_alpha=0.0):
        super().__init__()
        self.main = list(main)
        self.params["raw_alpha"] = np.array(float(raw_alpha))

    @property
    def alpha(self):
        return float(_sigmoid(self.params["raw_alpha"]))

    def children(self):
        return self.main

    def forward(self, x):
        m, caches = _run_sequence(self.main, x)
        if m.shape != x.shape:
            raise ValueError(f"main branch changed shape {x.shape} -> {m.shape}")
        a = self.alpha
        return a * m + (1.0 - a) * x, (caches, m, x)

    def backward(self, gy, cache):
        caches, m, x = cache
        a = self.alpha
        gm, grads = _backprop_sequence(self.main, caches, a * gy)
        grads["raw_alpha"] = np.array(a * (1.0 - a) * float(np.sum(gy * (m - x))))
        return gm + (1.0 - a) * gy, grads

    def jvp(self, v, cache):
        caches = cache[0]
        jm = v
        for layer, c in zip(self.main, caches):
            jm = layer.jvp(jm, c)
        a = self.alpha
        return a * jm + (1.0 - a) * v

    def lipschitz_bound(self):
        bound = 1.0
        for layer in self.main:
            lb = layer.lipschitz_bound()
            if lb is None:
                return None
            bound *= lb
        if bound == 1.0:
            return 1.0
        a = self.alpha
        return a * bound + (1.0 - a)


class VanillaResidual(Layer):
    """Plain skip connection ``x + main(x)``; no Lipschitz guarantee."""

    kind = "vanilla_residual"

    def __init__(self, main):
        super().__init__()
        self.main = list(main)

    def children(self):
        return self.main

    def forward(self, x):
        m, caches = _run_sequence(self.main, x)
        if m.shape != x.shape:
            raise ValueError(f"main branch changed shape {x.shape} -> {m.shape}")
        return x + m, caches

    def backward(self, gy, caches):
        gm, grads = _backprop_sequence(self.main, caches, gy)
        return gm + gy, grads

    def jvp(self, v, caches):
        jm = v
        for layer, c in zip(self.main, caches):
            jm = layer.jvp(jm, c)
        return v + jm


LAYER_KINDS = {
    cls.kind: cls
    for cls in (OrthoConv, CircularConv, ChannelLift, GroupSort, ReLU, Dense,
                ScalarMultiply, ScalarDivide, ConvexResidual, VanillaResidual)
}


def iter_params(layer, prefix=""):
    """Yield ``(key, owner_layer, name)`` for every learnable below ``layer``."""
    for name in layer.params:
        yield f"{prefix}{name}", layer, name
    for i, child in enumerate(layer.children()):
        yield from iter_params(child, f"{prefix}main.{i}.")
