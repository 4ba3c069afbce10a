"""Bias estimator: a two-hidden-layer ReLU MLP trained with plain mini-batch gradient descent."""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from uwbcal import kernels
from uwbcal.geometry import FeatureVector, Mode

HIDDEN = (50, 50)
PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")


class ModeMismatchError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


class WeightFileError(ValueError):
    pass


@dataclass
class MlpModel:
    """Weights of ``f(x)``; inputs are z-scored with ``norm_mean``/``norm_std`` first.

    Weight matrices are stored (out, in). ``residual_scale`` and ``raw_scale``
    are robust error scales (median |e| / 0.6745) of the compensated and raw
    validation targets, recorded at training time and NaN when unknown. They
    are the natural measurement variances for a filter fed with compensated
    or raw ranges respectively.
    """

    mode: Mode
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray
    norm_mean: np.ndarray
    norm_std: np.ndarray
    residual_scale: float = float("nan")
    raw_scale: float = float("nan")

    def __post_init__(self):
        self.mode = Mode.parse(self.mode)
        for name in PARAM_NAMES + ("norm_mean", "norm_std"):
            setattr(self, name, np.ascontiguousarray(getattr(self, name), dtype=np.float64))
        d = self.W1.shape[1]
        if d != self.mode.feature_length:
            raise ModeMismatchError(f"{self.mode.value} model needs {self.mode.feature_length} inputs, got {d}")
        h1, h2 = self.W1.shape[0], self.W2.shape[0]
        expected = {"b1": (h1,), "W2": (h2, h1), "b2": (h2,), "W3": (1, h2), "b3": (1,),
                    "norm_mean": (d,), "norm_std": (d,)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if np.any(self.norm_std <= 1e-9):
            raise ValueError("normalizer standard deviations must exceed 1e-9")

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.W1.shape[1], self.W1.shape[0], self.W2.shape[0], 1)

    def params(self) -> tuple[np.ndarray, ...]:
        return tuple(getattr(self, n) for n in PARAM_NAMES)

    def copy(self) -> "MlpModel":
        return replace(self, **{n: getattr(self, n).copy() for n in PARAM_NAMES + ("norm_mean", "norm_std")})

    def normalize(self, X):
        return (np.asarray(X, dtype=float) - self.norm_mean) / self.norm_std

    @classmethod
    def zeros(cls, mode, hidden=HIDDEN) -> "MlpModel":
        mode = Mode.parse(mode)
        d, (h1, h2) = mode.feature_length, hidden
        return cls(mode, np.zeros((h1, d)), np.zeros(h1), np.zeros((h2, h1)), np.zeros(h2),
                   np.zeros((1, h2)), np.zeros(1), np.zeros(d), np.ones(d))

    @classmethod
    def initialize(cls, mode, rng: np.random.Generator, hidden=HIDDEN,
                   norm_mean=None, norm_std=None) -> "MlpModel":
        """He-uniform weights, zero biases."""
        mode = Mode.parse(mode)
        d = mode.feature_length
        dims = (d, *hidden, 1)
        Ws = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            limit = np.sqrt(6.0 / fan_in)
            Ws.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        return cls(mode, Ws[0], np.zeros(dims[1]), Ws[1], np.zeros(dims[2]), Ws[2], np.zeros(1),
                   np.zeros(d) if norm_mean is None else norm_mean,
                   np.ones(d) if norm_std is None else norm_std)


@dataclass
class Dataset:
    """Training pairs: features (n, d) and measured bias targets ``r_meas - r_true``."""

    mode: Mode
    features: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.mode = Mode.parse(self.mode)
        self.features = np.asarray(self.features, dtype=float).reshape(-1, self.mode.feature_length)
        self.targets = np.asarray(self.targets, dtype=float).reshape(-1)
        if self.features.shape[0] != self.targets.shape[0]:
            raise ValueError("features and targets must have the same number of rows")

    def __len__(self):
        return self.targets.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.mode, self.features[idx], self.targets[idx])

    def save_csv(self, path) -> None:
        d = self.mode.feature_length
        header = ",".join([f"feat_{k}" for k in range(d)] + ["target"])
        rows = np.column_stack([self.features, self.targets])
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for row in rows:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")

    @classmethod
    def load_csv(cls, path) -> "Dataset":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        if not header or header[-1] != "target":
            raise ValueError(f"{path}: last column must be 'target'")
        d = len(header) - 1
        mode = {6: Mode.TWR, 9: Mode.TDOA}.get(d)
        if mode is None or header[:-1] != [f"feat_{k}" for k in range(d)]:
            raise ValueError(f"{path}: expected feat_0..feat_5 or feat_0..feat_8 columns")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.size == 0:
            data = np.zeros((0, d + 1))
        return cls(mode, data[:, :d], data[:, d])


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    batch_size: int = 64
    epochs: int = 300
    xi_threshold: float = 0.7
    split_fraction: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError("split_fraction must lie in (0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.learning_rate <= 0 or self.xi_threshold <= 0:
            raise ValueError("learning_rate and xi_threshold must be positive")


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1

    @property
    def best_val_rmse(self) -> float:
        return float(np.sqrt(self.val_loss[self.best_epoch]))

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("epoch,train_loss,val_loss\n")
            for k, (tr, va) in enumerate(zip(self.train_loss, self.val_loss)):
                fh.write(f"{k},{tr!r},{va!r}\n")


def _check_mode(model: MlpModel, mode) -> None:
    if Mode.parse(mode) is not model.mode:
        raise ModeMismatchError(f"{Mode.parse(mode).value} input given to a {model.mode.value} model")


def forward(model: MlpModel, x: FeatureVector) -> float:
    """Predicted bias in meters for one feature vector."""
    _check_mode(model, x.mode)
    if not np.all(np.isfinite(x.values)):
        raise ValueError("non-finite feature")
    return float(kernels.mlp_forward_one(model.normalize(x.values), *model.params()))


def predict(model: MlpModel, features) -> np.ndarray:
    """Batched forward pass on raw (un-normalized) features of shape (n, d)."""
    X = np.asarray(features, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.layer_dims[0]:
        raise ModeMismatchError(f"expected (n, {model.layer_dims[0]}) features")
    return kernels.mlp_forward_batch(np.ascontiguousarray(model.normalize(X)), *model.params())


def loss_and_gradient(model: MlpModel, batch: Dataset) -> tuple[float, dict]:
    """Mean squared error over ``batch`` and its gradient for every parameter."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    _check_mode(model, batch.mode)
    X = np.ascontiguousarray(model.normalize(batch.features))
    loss, *grads = kernels.mlp_loss_grad(X, batch.targets, *model.params())
    return float(loss), dict(zip(PARAM_NAMES, grads))


def filter_training_set(samples: Dataset, xi: float) -> Dataset:
    """Keep samples whose |target| <= xi, preserving order."""
    if xi <= 0:
        raise ValueError("xi must be positive")
    return samples.subset(np.flatnonzero(np.abs(samples.targets) <= xi))


def robust_scale(errors) -> float:
    """Gaussian-consistent scale of ``errors`` about zero, insensitive to spikes."""
    return float(np.median(np.abs(errors)) / 0.6744897501960817)


def _mse(model: MlpModel, X, y) -> float:
    r = kernels.mlp_forward_batch(X, *model.params()) - y
    return float(np.dot(r, r) / r.shape[0])


def train(samples: Dataset, config: TrainConfig = TrainConfig()) -> tuple[MlpModel, TrainHistory]:
    """Fit the bias estimator and return the best-validation model with its history.

    Samples are Xi-filtered, shuffled with ``config.seed`` and split; the
    input normalizer is computed from the training split only.
    """
    data = filter_training_set(samples, config.xi_threshold)
    if len(data) < 10 * config.batch_size:
        raise TrainingError(
            f"{len(data)} samples after filtering; need at least {10 * config.batch_size}"
        )
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(len(data))
    n_train = int(round(config.split_fraction * len(data)))
    n_train = min(max(n_train, 1), len(data) - 1)
    tr, va = data.subset(order[:n_train]), data.subset(order[n_train:])

    mean = tr.features.mean(axis=0)
    std = tr.features.std(axis=0)
    # constant inputs are only centred
    std = np.where(std < 1e-6, 1.0, std)
    model = MlpModel.initialize(data.mode, rng, norm_mean=mean, norm_std=std)
    X_tr = np.ascontiguousarray(model.normalize(tr.features))
    X_va = np.ascontiguousarray(model.normalize(va.features))
    y_tr, y_va = tr.targets, va.targets

    history = TrainHistory()
    best, best_val = model.copy(), np.inf
    for epoch in range(config.epochs):
        perm = rng.permutation(n_train)
        train_loss = kernels.sgd_epoch(X_tr, y_tr, perm, config.batch_size, config.learning_rate,
                                       *model.params())
        val_loss = _mse(model, X_va, y_va)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)
                and all(np.all(np.isfinite(p)) for p in model.params())):
            raise TrainingError(f"non-finite loss or parameters at epoch {epoch}")
        history.train_loss.append(float(train_loss))
        history.val_loss.append(val_loss)
        if val_loss < best_val:
            best, best_val, history.best_epoch = model.copy(), val_loss, epoch
    best.residual_scale = robust_scale(y_va - kernels.mlp_forward_batch(X_va, *best.params()))
    best.raw_scale = robust_scale(y_va)
    return best, history


def compensate(measurement, model: MlpModel, feature: FeatureVector) -> float:
    """Bias-corrected value ``r_meas - f(x)``."""
    if Mode.parse(measurement.mode) is not feature.mode:
        raise ModeMismatchError("measurement and feature modes differ")
    return float(measurement.value) - forward(model, feature)


# Weight file, little-endian:
#   b"UWBW" | u16 version | u8 mode (0 twr, 1 tdoa) | u8 n_layers (=3)
#   | u32 dims[n_layers + 1] | f64 residual_scale | f64 raw_scale
#   | f64 norm_mean[d] | f64 norm_std[d]
#   | per layer: f64 W[out * in] (row-major), f64 b[out] | u32 crc32 of all prior bytes
MAGIC = b"UWBW"
VERSION = 1
_MODE_CODE = {Mode.TWR: 0, Mode.TDOA: 1}


def weights_to_bytes(model: MlpModel) -> bytes:
    dims = model.layer_dims
    parts = [MAGIC, struct.pack("<HBB", VERSION, _MODE_CODE[model.mode], len(dims) - 1),
             struct.pack(f"<{len(dims)}I", *dims), struct.pack("<dd", model.residual_scale, model.raw_scale),
             model.norm_mean.astype("<f8").tobytes(), model.norm_std.astype("<f8").tobytes()]
    for name in PARAM_NAMES:
        parts.append(getattr(model, name).astype("<f8").tobytes(order="C"))
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def weights_from_bytes(blob: bytes, expected_mode=None) -> MlpModel:
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise WeightFileError("not a weight file (bad magic or truncated header)")
    version, mode_code, n_layers = struct.unpack_from("<HBB", blob, 4)
    if version != VERSION:
        raise WeightFileError(f"unsupported weight file version {version}")
    if n_layers != 3:
        raise WeightFileError(f"expected 3 layers, file declares {n_layers}")
    try:
        mode = {v: k for k, v in _MODE_CODE.items()}[mode_code]
    except KeyError:
        raise WeightFileError(f"unknown mode code {mode_code}") from None
    off = 8
    if len(blob) < off + 4 * (n_layers + 1) + 16:
        raise WeightFileError("truncated weight file")
    dims = struct.unpack_from(f"<{n_layers + 1}I", blob, off)
    off += 4 * (n_layers + 1)
    d, h1, h2, d_out = dims
    if d_out != 1:
        raise WeightFileError("output layer must be scalar")
    if d != mode.feature_length:
        raise WeightFileError(f"{mode.value} file with input dimension {d}")
    if expected_mode is not None and Mode.parse(expected_mode) is not mode:
        raise ModeMismatchError(f"file holds a {mode.value} model, expected {Mode.parse(expected_mode).value}")
    shapes = [(h1, d), (h1,), (h2, h1), (h2,), (1, h2), (1,)]
    n_floats = 2 + 2 * d + sum(int(np.prod(s)) for s in shapes)
    if len(blob) != off + 8 * n_floats + 4:
        raise WeightFileError(f"weight file size {len(blob)} does not match declared dimensions")
    (crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(blob[:-4]) != crc:
        raise WeightFileError("checksum mismatch")
    flat = np.frombuffer(blob, dtype="<f8", count=n_floats, offset=off).astype(np.float64)
    residual_scale, raw_scale, pos = float(flat[0]), float(flat[1]), 2
    mean, pos = flat[pos:pos + d].copy(), pos + d
    std, pos = flat[pos:pos + d].copy(), pos + d
    arrays = []
    for s in shapes:
        k = int(np.prod(s))
        arrays.append(flat[pos:pos + k].reshape(s).copy())
        pos += k
    return MlpModel(mode, *arrays, mean, std, residual_scale, raw_scale)


def save_weights(model: MlpModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(weights_to_bytes(model))


def load_weights(path, expected_mode=None) -> MlpModel:
    with open(path, "rb") as fh:
        return weights_from_bytes(fh.read(), expected_mode)
