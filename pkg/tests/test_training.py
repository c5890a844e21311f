import numpy as np
import pytest

from lsrs import rng as rngs
from lsrs.data import make_blobs
from lsrs.layers import (
    ChannelLift,
    CircularConv,
    ConvexResidual,
    Dense,
    GroupSort,
    OrthoConv,
    ReLU,
    ScalarDivide,
    ScalarMultiply,
    VanillaResidual,
    cayley_orthogonalize,
    to_freq_major,
)
from lsrs.network import SplitNetwork, TapeError
from lsrs.training import (
    DivergenceError,
    MomentumSGD,
    TrainConfig,
    backward,
    train,
)


def toy_net(seed=0, split=2):
    """2 classes, c=2, n=4, one layer of every learnable kind."""
    rng = np.random.default_rng(seed)
    layers = [
        ChannelLift(1, 2),
        ConvexResidual([OrthoConv(2, 4, weight=0.4 * rng.normal(size=(2, 2, 4, 4))),
                        GroupSort(2),
                        OrthoConv(2, 4, weight=0.4 * rng.normal(size=(2, 2, 4, 4)))], raw_alpha=0.3),
        VanillaResidual([CircularConv(2, 4, rng), ReLU(), CircularConv(2, 4, rng)]),
        ScalarMultiply(1.5),
        ScalarDivide(2.0),
        Dense(32, 6, rng),
        ReLU(),
        Dense(6, 2, rng),
    ]
    return SplitNetwork(layers, split, 2, (1, 4, 4))


def loss_at(net, x, y, noise, site):
    net.invalidate()
    return backward(net, x, y, noise, site)[0]


def rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-6)


@pytest.mark.parametrize("site", ["input", "latent"])
def test_parameter_gradients_match_finite_differences(site):
    net = toy_net()
    rng = np.random.default_rng(1)
    x = rng.uniform(size=(5, 1, 4, 4))
    y = rng.integers(0, 2, size=5)
    shape = x.shape if site == "input" else (5, 2, 4, 4)
    noise = 0.25 * rng.normal(size=shape)
    _, _, grads, _ = backward(net, x, y, noise, site)
    h = 1e-4
    kinds = set()
    for key, owner, name in net.parameters():
        kinds.add(owner.kind)
        p = owner.params[name]
        flat = p.reshape(-1)
        coords = rng.choice(flat.size, size=min(20, flat.size), replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            lp = loss_at(net, x, y, noise, site)
            flat[c] = orig - h
            lm = loss_at(net, x, y, noise, site)
            flat[c] = orig
            net.invalidate()
            fd = (lp - lm) / (2 * h)
            an = grads[key].reshape(-1)[c]
            assert rel_err(an, fd) <= 1e-3, (key, c, an, fd)
    assert kinds == {"ortho_conv", "convex_residual", "circular_conv", "dense"}


def test_input_gradient_matches_finite_differences():
    net = toy_net(seed=3)
    rng = np.random.default_rng(4)
    x = rng.uniform(size=(3, 1, 4, 4))
    y = np.array([0, 1, 1])
    _, gx, _, _ = backward(net, x, y)
    h = 1e-4
    for c in rng.choice(x.size, size=20, replace=False):
        xp, xm = x.copy().reshape(-1), x.copy().reshape(-1)
        xp[c] += h
        xm[c] -= h
        fd = (backward(net, xp.reshape(x.shape), y)[0] - backward(net, xm.reshape(x.shape), y)[0]) / (2 * h)
        assert rel_err(gx.reshape(-1)[c], fd) <= 1e-3


def test_zero_upstream_gradient_gives_zero_gradients():
    net = toy_net()
    x = np.random.default_rng(0).uniform(size=(4, 1, 4, 4))
    _, gx, grads, _ = backward(net, x, np.zeros(4, int), gscores=np.zeros((4, 2)))
    assert not gx.any()
    assert all(not g.any() for g in grads.values())


def test_tape_is_consumed_once():
    net = toy_net()
    tape = net.record(np.zeros((1, 1, 4, 4)))
    net.backward(tape, np.ones((1, 2)))
    with pytest.raises(TapeError):
        net.backward(tape, np.ones((1, 2)))
    with pytest.raises(TapeError):
        net.backward(None, np.ones((1, 2)))


def test_gradient_norm_preserved_through_orthogonal_encoder():
    rng = np.random.default_rng(5)
    enc = [OrthoConv(4, 8, weight=rng.normal(size=(4, 4, 8, 8))), GroupSort(2),
           OrthoConv(4, 8, weight=rng.normal(size=(4, 4, 8, 8))), GroupSort(2)]
    net = SplitNetwork(enc + [Dense(256, 3, rng)], 4, 3, (4, 8, 8))
    x = rng.normal(size=(6, 4, 8, 8))
    caches = []
    h = x
    for layer in enc:
        h, cache = layer.forward(h)
        caches.append(cache)
    g_in = rng.normal(size=h.shape)
    g = g_in
    for layer, cache in zip(reversed(enc), reversed(caches)):
        g, _ = layer.backward(g, cache)
    np.testing.assert_allclose(np.linalg.norm(g.reshape(6, -1), axis=1),
                               np.linalg.norm(g_in.reshape(6, -1), axis=1), rtol=1e-4)
    # the same identity through the network's own vjp
    np.testing.assert_allclose(np.linalg.norm(net.encoder_vjp(x, g_in)), np.linalg.norm(g_in),
                               rtol=1e-4)


def test_groupsort_adjoint_is_inverse_permutation():
    rng = np.random.default_rng(6)
    layer = GroupSort(3)
    x = rng.normal(size=(4, 12))
    y, perm = layer.forward(x)
    gy = rng.normal(size=y.shape)
    gx, _ = layer.backward(gy, perm)
    oracle = np.empty_like(gy)
    for b in range(4):
        for g in range(4):
            sl = slice(3 * g, 3 * g + 3)
            order = np.argsort(x[b, sl], kind="stable")
            oracle[b, sl][order] = gy[b, sl]
    assert np.array_equal(gx, oracle)


def test_orthogonality_survives_updates():
    net = toy_net()
    rng = np.random.default_rng(7)
    opt = MomentumSGD(net, 0.9)
    for _ in range(25):
        x = rng.uniform(size=(4, 1, 4, 4))
        _, _, grads, _ = backward(net, x, rng.integers(0, 2, size=4), noise=None)
        opt.step({k: g * 50 for k, g in grads.items()}, 0.1)
    for layer in net.layers[1].children():
        if isinstance(layer, OrthoConv):
            m = to_freq_major(cayley_orthogonalize(layer.params["weight"]))
            prod = np.conj(np.swapaxes(m, -1, -2)) @ m
            assert np.max(np.linalg.norm(prod - np.eye(2), axis=(-2, -1))) <= 1e-6


def test_lr_schedule():
    cfg = TrainConfig(lr0=0.01, lr_decay=0.1, lr_step=30)
    assert cfg.lr_at(0) == 0.01
    assert cfg.lr_at(29) == 0.01
    assert cfg.lr_at(30) == pytest.approx(0.001, rel=1e-12)
    assert cfg.lr_at(60) == pytest.approx(0.0001, rel=1e-12)


@pytest.mark.parametrize("kwargs", [{"lr0": 0}, {"momentum": 1.0}, {"momentum": -0.1},
                                    {"sigma": -1}, {"noise_site": "middle"}, {"batch_size": 0}])
def test_train_config_validation(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


def two_d_blobs(seed=0, n=100):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, 2)) * 0.3 + [-2.0, 0.0]
    b = rng.normal(size=(n, 2)) * 0.3 + [2.0, 0.0]
    return np.concatenate([a, b]), np.repeat([0, 1], n)


def mlp(seed=0):
    rng = np.random.default_rng(seed)
    return SplitNetwork([Dense(2, 16, rng), ReLU(), Dense(16, 2, rng)], 0, 2, (2,))


def test_separable_blobs_are_learned():
    x, y = two_d_blobs()
    cfg = TrainConfig(epochs=30, lr0=0.05, sigma=0.0, batch_size=16, seed=1)
    net, history = train(mlp(), x, y, cfg)
    assert np.mean(net.predict_clean(x) == y) >= 0.99
    per_epoch = [np.mean([r.loss for r in history if r.epoch == e]) for e in range(cfg.epochs)]
    windows = [np.mean(per_epoch[i:i + 5]) for i in range(0, cfg.epochs, 5)]
    assert all(b <= a for a, b in zip(windows, windows[1:]))


def test_training_is_deterministic():
    x, y = two_d_blobs()
    cfg = TrainConfig(epochs=3, lr0=0.05, sigma=0.5, noise_site="input", batch_size=16, seed=2)
    _, h1 = train(mlp(), x, y, cfg)
    _, h2 = train(mlp(), x, y, cfg)
    assert [r.loss for r in h1] == [r.loss for r in h2]
    _, h3 = train(mlp(), x, y, TrainConfig(**{**cfg.__dict__, "seed": 3}))
    assert [r.loss for r in h1] != [r.loss for r in h3]


def test_latent_noise_training_runs_on_reference_shapes():
    data = make_blobs(2, 8, (1, 4, 4), 0.2, seed=0)
    net, history = train(toy_net(), data.inputs, data.labels,
                         TrainConfig(epochs=2, sigma=0.25, noise_site="latent", batch_size=4))
    assert len(history) == 8
    assert all(np.isfinite(r.loss) for r in history)


def test_divergence_guard():
    x, y = two_d_blobs(n=10)
    with pytest.raises(DivergenceError):
        train(mlp(), x * np.nan, y, TrainConfig(epochs=1, sigma=0.0))


def test_train_rejects_bad_datasets():
    with pytest.raises(ValueError):
        train(mlp(), np.zeros((0, 2)), np.zeros(0, int), TrainConfig())
    with pytest.raises(ValueError):
        train(mlp(), np.zeros((3, 2)), np.zeros(2, int), TrainConfig())


def test_gaussian_sample():
    assert not rngs.gaussian_sample((3, 4), 0.0, rngs.stream(0)).any()
    s = rngs.gaussian_sample(10**6, 1.0, rngs.stream(0, rngs.TRAIN_NOISE))
    assert -0.01 <= s.mean() <= 0.01
    assert 0.99 <= s.var() <= 1.01
    a = rngs.gaussian_sample((5,), 0.3, rngs.stream(11, 2))
    b = rngs.gaussian_sample((5,), 0.3, rngs.stream(11, 2))
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        rngs.gaussian_sample((2,), -0.1, rngs.stream(0))
