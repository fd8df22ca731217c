import numpy as np
import pytest

from collateral.dae import DaeConfig, build_dae, corrupt, dae_train, encode, encoder_of, reconstruct
from collateral.errors import ConfigError, ShapeError
from collateral.nn import mse_loss
from collateral.pipeline import _roi_channels
from collateral.volume import Cube


@pytest.fixture(scope="module")
def roi_cubes(small_dataset):
    return [(_roi_channels(p.volumes, p.roi), p.label) for _, p in small_dataset]


def test_corrupt_sigma_zero_and_clamp(rng):
    x = rng.random((3, 8, 8, 8)).astype(np.float32)
    assert np.array_equal(corrupt(x, 1, 0.0), x)
    y = corrupt(x, 1, 2.0)
    assert y.min() >= 0 and y.max() <= 1
    assert np.array_equal(corrupt(x, 5, 0.3), corrupt(x, 5, 0.3))
    assert not np.array_equal(corrupt(x, 5, 0.3), corrupt(x, 6, 0.3))
    c = corrupt(Cube(tuple(x)), 2, 0.1)
    assert isinstance(c, Cube) and c.array().shape == x.shape


def test_corrupt_noise_moment():
    # interior values far from the clamp bounds, 10**6 samples
    x = np.full((1, 100, 100, 100), 0.5, dtype=np.float32)
    d = corrupt(x, 0, 0.1) - x
    assert d.std() == pytest.approx(0.1, rel=0.1)


def test_masking_noise(rng):
    x = rng.random((1, 50, 50, 40)).astype(np.float32) + 0.01
    y = corrupt(x, 0, 0.25, noise="masking")
    assert np.mean(y == 0) == pytest.approx(0.25, abs=0.01)
    kept = y > 0
    assert np.array_equal(y[kept], np.clip(x, 0, 1)[kept])


def test_config_validation():
    for bad in (dict(noise="salt"), dict(sigma=-1), dict(edge=60), dict(final_activation="relu")):
        with pytest.raises(ConfigError):
            DaeConfig(**bad)
    assert DaeConfig().code_edge == 8


def test_encoder_shape():
    net = build_dae(DaeConfig(), seed=0)
    enc = encoder_of(net)
    x = np.random.default_rng(0).random((3, 64, 64, 64)).astype(np.float32)
    assert enc(x[None]).shape == (1, 1, 8, 8, 8)
    f = encode(net, x)
    assert f.shape == (512,)
    assert np.array_equal(f, encode(net, x.copy()))
    assert reconstruct(net, [x]).shape == (1, 3, 64, 64, 64)
    with pytest.raises(ShapeError):
        encode(net, x[:, :32, :32, :32])


def test_zero_cubes_zero_final_layer():
    cfg = DaeConfig(edge=16, final_activation="linear")
    net = build_dae(cfg, seed=0)
    last = net.layers[-1]
    for k in last.params:
        last.params[k][...] = 0
    zeros = np.zeros((2, 3, 16, 16, 16), dtype=np.float32)
    loss, _ = mse_loss(net(corrupt(zeros, 0, 0.0)), zeros)
    assert loss == 0.0


def test_empty_and_wrong_shape(roi_cubes):
    with pytest.raises(ConfigError):
        dae_train([], DaeConfig(edge=16, epochs=1))
    with pytest.raises(ShapeError):
        dae_train([c for c, _ in roi_cubes], DaeConfig(edge=32, epochs=1))


def test_loss_decreases(roi_cubes):
    cubes = [c for c, _ in roi_cubes]
    cfg = DaeConfig(edge=16, epochs=10, batch_size=4)
    net, losses = dae_train(cubes, cfg, seed=0)
    assert len(losses) == 10 and losses[9] < losses[0]
    net2, losses2 = dae_train(cubes, cfg, seed=0)
    assert losses == losses2


def test_noise_free_run_below_noisy_floor(roi_cubes):
    cubes = [c for c, _ in roi_cubes]
    clean = DaeConfig(edge=16, epochs=15, batch_size=3, sigma=0.0, final_activation="linear")
    noisy = DaeConfig(edge=16, epochs=15, batch_size=3, sigma=0.3, final_activation="linear")
    _, l0 = dae_train(cubes, clean, seed=1)
    _, l3 = dae_train(cubes, noisy, seed=1)
    assert min(l0) < min(l3)


def test_heldout_and_grade_distinctness(roi_cubes):
    cubes = [c for c, _ in roi_cubes]
    labels = [g for _, g in roi_cubes]
    cfg = DaeConfig(edge=16, epochs=10, batch_size=3)
    net, losses = dae_train(cubes[:6], cfg, seed=2)
    train_mse = mse_loss(reconstruct(net, cubes[:6]), np.stack(cubes[:6]))[0]
    held_mse = mse_loss(reconstruct(net, cubes[6:]), np.stack(cubes[6:]))[0]
    assert np.isfinite(held_mse) and held_mse <= 2 * train_mse
    f0 = encode(net, cubes[labels.index(0)])
    f2 = encode(net, cubes[labels.index(2)])
    assert f0.shape == (8,)
    assert abs(np.linalg.norm(f0) - np.linalg.norm(f2)) > 0
