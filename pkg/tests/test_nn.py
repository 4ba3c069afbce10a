import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from uwbcal.geometry import AnchorConstellation, FeatureVector, Mode, TagState
from uwbcal.measurement import BiasFieldParams, NoiseConfig, RangeMeasurement, bias_field_batch, true_twr_range
from uwbcal.nn import (
    PARAM_NAMES,
    Dataset,
    MlpModel,
    ModeMismatchError,
    TrainConfig,
    TrainingError,
    WeightFileError,
    compensate,
    filter_training_set,
    forward,
    load_weights,
    loss_and_gradient,
    predict,
    robust_scale,
    save_weights,
    train,
    weights_from_bytes,
    weights_to_bytes,
)
from uwbcal.sim import DatasetConfig, generate_dataset


def dense_oracle(model: MlpModel, x):
    """Layer-by-layer forward pass written with explicit dot products."""
    z = [(xi - m) / s for xi, m, s in zip(x, model.norm_mean, model.norm_std)]
    for W, b, relu in ((model.W1, model.b1, True), (model.W2, model.b2, True), (model.W3, model.b3, False)):
        out = []
        for row, bias in zip(W, b):
            acc = bias
            for w, v in zip(row, z):
                acc += w * v
            out.append(max(acc, 0.0) if relu else acc)
        z = out
    return z[0]


def random_model(mode, rng, hidden=(50, 50)):
    d = Mode.parse(mode).feature_length
    m = MlpModel.initialize(mode, rng, hidden=hidden, norm_mean=rng.normal(size=d),
                            norm_std=rng.uniform(0.5, 2.0, d))
    m.b1[:] = rng.normal(scale=0.1, size=m.b1.shape)
    m.b2[:] = rng.normal(scale=0.1, size=m.b2.shape)
    m.b3[:] = rng.normal(scale=0.1, size=1)
    return m


def oracle_loss(model, X, y):
    return float(np.mean([(dense_oracle(model, x) - t) ** 2 for x, t in zip(X, y)]))


def test_zero_model_predicts_zero(rng):
    m = MlpModel.zeros("tdoa")
    x = FeatureVector(rng.normal(size=9), Mode.TDOA)
    assert forward(m, x) == 0.0


def test_identity_path():
    m = MlpModel.zeros("twr")
    m.W1[0, 0] = m.W2[0, 0] = m.W3[0, 0] = 1.0
    assert forward(m, FeatureVector([0.3, 0, 0, 0, 0, 0], Mode.TWR)) == pytest.approx(0.3, abs=1e-15)
    assert forward(m, FeatureVector([-0.3, 0, 0, 0, 0, 0], Mode.TWR)) == 0.0


@pytest.mark.parametrize("mode", ["twr", "tdoa"])
def test_forward_matches_dense_oracle(mode, rng):
    m = random_model(mode, rng)
    X = rng.normal(size=(20, m.layer_dims[0])) * 3
    batch = predict(m, X)
    for k, x in enumerate(X):
        expected = dense_oracle(m, x)
        assert forward(m, FeatureVector(x, mode)) == pytest.approx(expected, abs=1e-10)
        assert batch[k] == pytest.approx(expected, abs=1e-10)


def test_forward_errors(rng):
    m = MlpModel.zeros("twr")
    with pytest.raises(ModeMismatchError):
        forward(m, FeatureVector(np.zeros(9), Mode.TDOA))
    with pytest.raises(ModeMismatchError):
        predict(m, np.zeros((3, 9)))


def test_loss_examples(rng):
    m = MlpModel.zeros("twr")
    loss, grads = loss_and_gradient(m, Dataset("twr", np.ones((1, 6)), [0.2]))
    assert loss == pytest.approx(0.04, abs=1e-15)
    perfect = random_model("twr", rng)
    X = rng.normal(size=(8, 6))
    loss, grads = loss_and_gradient(perfect, Dataset("twr", X, predict(perfect, X)))
    assert loss == pytest.approx(0.0, abs=1e-25)
    assert all(np.abs(g).max() < 1e-12 for g in grads.values())
    with pytest.raises(ValueError):
        loss_and_gradient(m, Dataset("twr", np.zeros((0, 6)), []))


@settings(max_examples=10)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["twr", "tdoa"]))
def test_gradient_matches_finite_differences(seed, mode):
    rng = np.random.default_rng(seed)
    m = random_model(mode, rng, hidden=(6, 5))
    X = rng.normal(size=(7, m.layer_dims[0]))
    y = rng.normal(scale=0.3, size=7)
    _, grads = loss_and_gradient(m, Dataset(mode, X, y))
    h = 1e-5
    for name in PARAM_NAMES:
        P = getattr(m, name)
        for idx in np.ndindex(P.shape):
            orig = P[idx]
            P[idx] = orig + h
            up = oracle_loss(m, X, y)
            P[idx] = orig - h
            down = oracle_loss(m, X, y)
            P[idx] = orig
            fd = (up - down) / (2 * h)
            a = grads[name][idx]
            assert abs(a - fd) <= max(1e-5 * max(abs(a), abs(fd)), 1e-8), (name, idx, a, fd)


def test_filter_training_set_examples():
    d = Dataset("twr", np.arange(18.0).reshape(3, 6), [0.1, -0.69, 0.71])
    kept = filter_training_set(d, 0.7)
    np.testing.assert_array_equal(kept.targets, [0.1, -0.69])
    np.testing.assert_array_equal(kept.features, d.features[:2])
    assert len(filter_training_set(d, 1e9)) == 3
    assert len(filter_training_set(d, 0.01)) == 0


@given(st.lists(st.floats(-3, 3, allow_nan=False), min_size=1, max_size=60), st.floats(0.01, 2.0))
def test_filter_keeps_exactly_within_threshold(targets, xi):
    d = Dataset("twr", np.zeros((len(targets), 6)), targets)
    kept = filter_training_set(d, xi).targets
    np.testing.assert_array_equal(kept, [t for t in targets if abs(t) <= xi])


def test_train_rejects_too_few_samples(rng):
    d = Dataset("twr", rng.normal(size=(100, 6)), np.full(100, 5.0))
    with pytest.raises(TrainingError):
        train(d)  # all targets exceed xi


def test_train_constant_bias(rng):
    n = 5000
    d = Dataset("twr", rng.uniform(-4, 4, (n, 6)), np.full(n, 0.2))
    model, hist = train(d, TrainConfig(epochs=200))
    assert hist.best_val_rmse <= 0.005
    assert len(hist.train_loss) == len(hist.val_loss) == 200


def test_train_deterministic(rng):
    n = 2000
    X = rng.uniform(-4, 4, (n, 9))
    d = Dataset("tdoa", X, 0.1 * np.sin(X[:, 0]))
    a, ha = train(d, TrainConfig(epochs=5, seed=3))
    b, hb = train(d, TrainConfig(epochs=5, seed=3))
    assert weights_to_bytes(a) == weights_to_bytes(b)
    assert ha.train_loss == hb.train_loss


def test_train_config_validation():
    for bad in (dict(split_fraction=1.0), dict(split_fraction=0.0), dict(batch_size=0), dict(learning_rate=0)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_robust_scale_gaussian(rng):
    e = rng.normal(scale=0.03, size=200_000)
    assert robust_scale(e) == pytest.approx(0.03, rel=0.01)
    # 5 % spikes: the median of |e| becomes the (0.5 / 0.95) quantile of the clean half-normal
    e[:10_000] += 5.0
    expected = 0.03 * norm.ppf(0.5 + 0.5 * (0.5 / 0.95)) / norm.ppf(0.75)
    assert robust_scale(e) == pytest.approx(expected, rel=0.01)


def test_compensate_examples(rng):
    c = AnchorConstellation.cuboid()
    tag = TagState((2.0, 3.0, 1.0))
    feat = FeatureVector(np.concatenate([c.position(0) - tag.position, tag.attitude]), Mode.TWR)
    m = RangeMeasurement("twr", 0, 4.321)
    assert compensate(m, MlpModel.zeros("twr"), feat) == 4.321
    # a model that outputs exactly the bias recovers the true range
    exact = MlpModel.zeros("twr")
    exact.b3[:] = 0.125
    true = true_twr_range(tag.position, c.position(0))
    assert compensate(RangeMeasurement("twr", 0, true + 0.125), exact, feat) == pytest.approx(true, abs=1e-15)
    with pytest.raises(ModeMismatchError):
        compensate(RangeMeasurement("tdoa", 0, 1.0, anchor_j=1), exact, feat)


def test_weights_roundtrip_bitwise(tmp_path, rng):
    m = random_model("tdoa", rng)
    m.residual_scale, m.raw_scale = 0.031, 0.12
    path = tmp_path / "m.uwbw"
    save_weights(m, path)
    back = load_weights(path, expected_mode="tdoa")
    for name in PARAM_NAMES + ("norm_mean", "norm_std"):
        assert getattr(back, name).tobytes() == getattr(m, name).tobytes()
    assert (back.residual_scale, back.raw_scale) == (0.031, 0.12)
    X = rng.normal(size=(1000, 9))
    assert predict(back, X).tobytes() == predict(m, X).tobytes()


def test_weights_file_errors(tmp_path, rng):
    blob = weights_to_bytes(random_model("twr", rng))
    for cut in (3, 10, 40, len(blob) - 1):
        with pytest.raises(WeightFileError):
            weights_from_bytes(blob[:cut])
    with pytest.raises(ModeMismatchError):
        weights_from_bytes(blob, expected_mode="tdoa")
    flipped = bytearray(blob)
    flipped[100] ^= 0x01
    with pytest.raises(WeightFileError, match="checksum"):
        weights_from_bytes(bytes(flipped))
    bad_version = bytearray(blob)
    bad_version[4] = 9
    with pytest.raises(WeightFileError, match="version"):
        weights_from_bytes(bytes(bad_version))
    with pytest.raises(WeightFileError, match="magic"):
        weights_from_bytes(b"NOPE" + blob[4:])


def test_model_validation(rng):
    m = MlpModel.zeros("twr")
    with pytest.raises(ValueError):
        MlpModel("twr", m.W1, m.b1, m.W2, m.b2, m.W3, m.b3, m.norm_mean, np.zeros(6))
    with pytest.raises(ModeMismatchError):
        MlpModel("tdoa", m.W1, m.b1, m.W2, m.b2, m.W3, m.b3, np.zeros(9), np.ones(9))


def test_dataset_csv_roundtrip(tmp_path, rng):
    d = Dataset("tdoa", rng.normal(size=(50, 9)), rng.normal(size=50))
    path = tmp_path / "d.csv"
    d.save_csv(path)
    assert path.read_text().splitlines()[0] == ",".join([f"feat_{k}" for k in range(9)] + ["target"])
    back = Dataset.load_csv(path)
    assert back.mode is Mode.TDOA
    assert back.features.tobytes() == d.features.tobytes() and back.targets.tobytes() == d.targets.tobytes()


def test_inference_budget(rng):
    m = random_model("tdoa", rng)
    x = FeatureVector(rng.normal(size=9), Mode.TDOA)
    forward(m, x)  # warm-up / JIT
    n = 2000
    t0 = time.perf_counter()
    for _ in range(n):
        forward(m, x)
    assert (time.perf_counter() - t0) / n <= 50e-6


# -- properties of the default trained models (shared session fixtures) --

@pytest.mark.parametrize("which", ["twr_trained", "tdoa_trained"])
def test_smoothed_training_loss_non_increasing(which, request):
    hist = request.getfixturevalue(which).history
    smooth = np.convolve(hist.train_loss, np.ones(5) / 5, mode="valid")
    rises = np.diff(smooth) / smooth[:-1]
    # statistical property: SGD jitter may leave relative upticks far below 0.1 %
    assert rises.max() <= 1e-3


@pytest.mark.parametrize("which", ["twr_trained", "tdoa_trained"])
def test_trained_model_compensates_held_out_poses(which, request):
    t = request.getfixturevalue(which)
    c, bias = AnchorConstellation.cuboid(), BiasFieldParams()
    quiet = NoiseConfig(sigma_twr=1e-12, outlier_rate=0.0)
    held = generate_dataset(c, bias, quiet, t.mode, DatasetConfig(n_flights=2, seed=4242))
    # noiseless world: target = bias, so r* - r = bias - f(x)
    resid = held.targets - predict(t.model, held.features)
    assert np.mean(np.abs(resid) <= 0.05) >= 0.9
    np.testing.assert_allclose(held.targets, bias_field_batch(t.mode, held.features, bias), atol=1e-9)
