"""Training objectives, synthetic data generation, and client partitioning.

Three model families share one flat-parameter interface:

* ``quadratic``: least squares, ``f(w) = ||Xw - y||^2 / (2m)``
* ``logistic``: binary logistic regression with a bias term stored as the
  last parameter; labels are 0/1
* ``mlp``: one hidden ReLU layer and a softmax output; parameters are
  flattened as ``[W1 rows..., b1, W2 rows..., b2]``; labels are class ids

All losses are means over the supplied rows, so minibatch gradients are
unbiased estimates of the full-data gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Dataset",
    "ModelSpec",
    "ClientShard",
    "loss",
    "gradient",
    "stochastic_gradient",
    "sample_batch",
    "accuracy",
    "init_params",
    "generate_synthetic",
    "partition",
    "load_delimited",
]

_KINDS = ("quadratic", "logistic", "mlp")
_PARTITION_MODES = ("iid", "sorted_label")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable feature matrix plus labels.

    ``planted_params`` carries the generating parameters for synthetic data
    so tests can check optima; it is None for data loaded from files.
    """

    features: np.ndarray
    labels: np.ndarray
    planted_params: np.ndarray | None = None

    def __post_init__(self) -> None:
        features = np.asarray(self.features, dtype=np.float64).copy()
        labels = np.asarray(self.labels).copy()
        if features.ndim != 2 or features.shape[0] < 1:
            raise ValueError("features must be a non-empty 2-D array")
        if labels.shape != (features.shape[0],):
            raise ValueError("labels must be 1-D with one entry per row")
        if not np.all(np.isfinite(features)):
            raise ValueError("features must be finite")
        if not np.all(np.isfinite(labels.astype(np.float64))):
            raise ValueError("labels must be finite")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        if self.planted_params is not None:
            planted = np.asarray(self.planted_params, dtype=np.float64).copy()
            planted.setflags(write=False)
            object.__setattr__(self, "planted_params", planted)

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(
            features=self.features[indices],
            labels=self.labels[indices],
            planted_params=self.planted_params,
        )


@dataclass(frozen=True)
class ModelSpec:
    """Which objective to train and its shape."""

    kind: str
    n_features: int
    hidden: int = 0
    n_classes: int = 0

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}, expected one of {_KINDS}")
        if self.n_features < 1:
            raise ValueError("n_features must be at least 1")
        if self.kind == "mlp":
            if self.hidden < 1:
                raise ValueError("mlp requires hidden >= 1")
            if self.n_classes < 2:
                raise ValueError("mlp requires n_classes >= 2")
        elif self.hidden != 0:
            raise ValueError("hidden layers are only configurable for mlp models")
        elif self.n_classes not in (0, 2 if self.kind == "logistic" else 0):
            raise ValueError("n_classes is only configurable for mlp models")

    @classmethod
    def quadratic(cls, n_features: int) -> "ModelSpec":
        return cls(kind="quadratic", n_features=n_features)

    @classmethod
    def logistic(cls, n_features: int) -> "ModelSpec":
        return cls(kind="logistic", n_features=n_features)

    @classmethod
    def mlp(cls, n_features: int, hidden: int, n_classes: int) -> "ModelSpec":
        return cls(kind="mlp", n_features=n_features, hidden=hidden, n_classes=n_classes)

    @property
    def dim(self) -> int:
        """Length of the flat parameter vector."""
        if self.kind == "quadratic":
            return self.n_features
        if self.kind == "logistic":
            return self.n_features + 1
        f, h, c = self.n_features, self.hidden, self.n_classes
        return f * h + h + h * c + c


@dataclass(frozen=True)
class ClientShard:
    """One client's slice of the training data plus its aggregation weight."""

    client_id: int
    data: Dataset
    weight: float

    def __post_init__(self) -> None:
        if self.client_id < 0:
            raise ValueError("client_id must be non-negative")
        if not 0.0 < self.weight <= 1.0:
            raise ValueError(f"weight must be in (0, 1], got {self.weight}")


def _check_params(model: ModelSpec, w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (model.dim,):
        raise ValueError(f"expected parameter vector of length {model.dim}, got shape {w.shape}")
    return w


def _check_data(model: ModelSpec, data: Dataset) -> None:
    if data.n_features != model.n_features:
        raise ValueError(
            f"data has {data.n_features} features, model expects {model.n_features}"
        )
    if model.kind == "logistic":
        labels = np.asarray(data.labels)
        if not np.all((labels == 0) | (labels == 1)):
            raise ValueError("logistic labels must be 0 or 1")
    elif model.kind == "mlp":
        labels = np.asarray(data.labels)
        if np.any(labels < 0) or np.any(labels >= model.n_classes):
            raise ValueError(f"mlp labels must lie in [0, {model.n_classes})")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softplus(z: np.ndarray) -> np.ndarray:
    # log(1 + e^z) without overflow for large |z|
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def _unpack_mlp(model: ModelSpec, w: np.ndarray):
    f, h, c = model.n_features, model.hidden, model.n_classes
    i = 0
    w1 = w[i : i + f * h].reshape(f, h)
    i += f * h
    b1 = w[i : i + h]
    i += h
    w2 = w[i : i + h * c].reshape(h, c)
    i += h * c
    b2 = w[i : i + c]
    return w1, b1, w2, b2


def _mlp_forward(model: ModelSpec, w: np.ndarray, features: np.ndarray):
    w1, b1, w2, b2 = _unpack_mlp(model, w)
    pre = features @ w1 + b1
    hidden = np.maximum(pre, 0.0)
    logits = hidden @ w2 + b2
    return pre, hidden, logits


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss(model: ModelSpec, w: np.ndarray, data: Dataset) -> float:
    """Mean objective value over the rows of ``data``."""
    w = _check_params(model, w)
    _check_data(model, data)
    x, y = data.features, data.labels
    if model.kind == "quadratic":
        r = x @ w - np.asarray(y, dtype=np.float64)
        return float(0.5 * (r @ r) / data.m)
    if model.kind == "logistic":
        z = x @ w[:-1] + w[-1]
        y = np.asarray(y, dtype=np.float64)
        return float(np.mean(_softplus(z) - y * z))
    _, _, logits = _mlp_forward(model, w, x)
    log_p = _log_softmax(logits)
    idx = np.asarray(y, dtype=np.int64)
    return float(-np.mean(log_p[np.arange(data.m), idx]))


def gradient(model: ModelSpec, w: np.ndarray, data: Dataset) -> np.ndarray:
    """Exact gradient of :func:`loss` at ``w`` over the rows of ``data``."""
    w = _check_params(model, w)
    _check_data(model, data)
    x, y = data.features, data.labels
    m = data.m
    if model.kind == "quadratic":
        r = x @ w - np.asarray(y, dtype=np.float64)
        return (x.T @ r) / m
    if model.kind == "logistic":
        z = x @ w[:-1] + w[-1]
        resid = _sigmoid(z) - np.asarray(y, dtype=np.float64)
        g = np.empty(model.dim)
        g[:-1] = (x.T @ resid) / m
        g[-1] = resid.mean()
        return g
    pre, hidden, logits = _mlp_forward(model, w, x)
    probs = np.exp(_log_softmax(logits))
    probs[np.arange(m), np.asarray(y, dtype=np.int64)] -= 1.0
    probs /= m
    d_w2 = hidden.T @ probs
    d_b2 = probs.sum(axis=0)
    back = (probs @ _unpack_mlp(model, w)[2].T) * (pre > 0.0)
    d_w1 = x.T @ back
    d_b1 = back.sum(axis=0)
    return np.concatenate([d_w1.ravel(), d_b1, d_w2.ravel(), d_b2])


def sample_batch(
    data: Dataset, batch_size: int, rng: np.random.Generator
) -> Dataset:
    """Uniform minibatch without replacement.

    When ``batch_size`` covers the whole dataset the data is returned as-is
    and the generator is left untouched.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    if batch_size >= data.m:
        return data
    return data.subset(rng.choice(data.m, size=batch_size, replace=False))


def stochastic_gradient(
    model: ModelSpec,
    w: np.ndarray,
    data: Dataset,
    batch_size: int | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Gradient on a sampled minibatch (the full gradient if no size given)."""
    if batch_size is None:
        return gradient(model, w, data)
    if rng is None:
        raise ValueError("rng is required when batch_size is given")
    return gradient(model, w, sample_batch(data, batch_size, rng))


def accuracy(model: ModelSpec, w: np.ndarray, data: Dataset) -> float:
    """Fraction of rows classified correctly; classifiers only."""
    w = _check_params(model, w)
    _check_data(model, data)
    if model.kind == "logistic":
        z = data.features @ w[:-1] + w[-1]
        pred = (z > 0.0).astype(np.int64)
        return float(np.mean(pred == np.asarray(data.labels, dtype=np.int64)))
    if model.kind == "mlp":
        _, _, logits = _mlp_forward(model, w, data.features)
        pred = logits.argmax(axis=1)
        return float(np.mean(pred == np.asarray(data.labels, dtype=np.int64)))
    raise ValueError("accuracy is undefined for quadratic models")


def init_params(model: ModelSpec, rng: np.random.Generator) -> np.ndarray:
    """Initial parameter vector: zeros for the convex models, scaled normal
    weights (zero biases) for the mlp."""
    if model.kind in ("quadratic", "logistic"):
        return np.zeros(model.dim)
    f, h, c = model.n_features, model.hidden, model.n_classes
    w1 = rng.standard_normal((f, h)) * np.sqrt(2.0 / f)
    w2 = rng.standard_normal((h, c)) * np.sqrt(2.0 / h)
    return np.concatenate([w1.ravel(), np.zeros(h), w2.ravel(), np.zeros(c)])


def generate_synthetic(
    kind: str,
    m: int,
    n_features: int,
    noise: float = 0.0,
    seed: int | np.random.SeedSequence = 0,
    n_classes: int = 2,
) -> Dataset:
    """Draw a synthetic task from a planted model.

    ``kind`` is ``"regression"`` (Gaussian features, linear targets plus
    Gaussian noise of the given strength) or ``"classification"`` (linear
    or, for ``n_classes > 2``, argmax-linear labels with ``noise`` as the
    label-flip probability).
    """
    if kind not in ("regression", "classification"):
        raise ValueError(f"unknown synthetic kind {kind!r}")
    if m < 1 or n_features < 1:
        raise ValueError("m and n_features must be at least 1")
    if noise < 0.0:
        raise ValueError("noise must be non-negative")
    if kind == "classification" and not 0.0 <= noise <= 1.0:
        raise ValueError("label-flip noise must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((m, n_features))
    if kind == "regression":
        planted = rng.standard_normal(n_features) / np.sqrt(n_features)
        y = x @ planted
        if noise > 0.0:
            y = y + noise * rng.standard_normal(m)
        return Dataset(features=x, labels=y, planted_params=planted)
    if n_classes < 2:
        raise ValueError("n_classes must be at least 2")
    if n_classes == 2:
        planted = rng.standard_normal(n_features)
        y = (x @ planted > 0.0).astype(np.int64)
        if noise > 0.0:
            flip = rng.random(m) < noise
            y = np.where(flip, 1 - y, y)
        return Dataset(features=x, labels=y, planted_params=planted)
    planted = rng.standard_normal((n_features, n_classes))
    y = (x @ planted).argmax(axis=1).astype(np.int64)
    if noise > 0.0:
        flip = rng.random(m) < noise
        shift = rng.integers(1, n_classes, size=m)
        y = np.where(flip, (y + shift) % n_classes, y)
    return Dataset(features=x, labels=y, planted_params=planted.ravel())


def partition(
    data: Dataset,
    n: int,
    mode: str = "iid",
    seed: int | np.random.SeedSequence = 0,
) -> list[ClientShard]:
    """Split ``data`` into ``n`` client shards weighted by shard size.

    ``iid`` shuffles rows uniformly; ``sorted_label`` orders rows by label
    before slicing, so each client sees a narrow label range.
    """
    if not 1 <= n <= data.m:
        raise ValueError(f"need 1 <= n <= {data.m} clients, got {n}")
    if mode == "iid":
        order = np.random.default_rng(seed).permutation(data.m)
    elif mode == "sorted_label":
        order = np.argsort(np.asarray(data.labels), kind="stable")
    else:
        raise ValueError(f"unknown partition mode {mode!r}, expected one of {_PARTITION_MODES}")
    base, extra = divmod(data.m, n)
    shards = []
    start = 0
    for i in range(n):
        size = base + (1 if i < extra else 0)
        rows = order[start : start + size]
        start += size
        shards.append(
            ClientShard(client_id=i, data=data.subset(rows), weight=size / data.m)
        )
    return shards


def load_delimited(
    path: str, kind: str = "classification", delimiter: str | None = None
) -> Dataset:
    """Read a numeric table; last column is the label, the rest features."""
    if kind not in ("regression", "classification"):
        raise ValueError(f"unknown data kind {kind!r}")
    try:
        table = np.loadtxt(path, delimiter=delimiter, ndmin=2)
    except OSError:
        raise
    except ValueError as exc:
        raise ValueError(f"could not parse {path}: {exc}") from exc
    if table.size == 0 or table.shape[1] < 2:
        raise ValueError(f"{path}: need at least one feature column plus a label column")
    features = table[:, :-1]
    labels = table[:, -1]
    if kind == "classification":
        rounded = np.rint(labels)
        if not np.allclose(labels, rounded):
            raise ValueError(f"{path}: classification labels must be integers")
        labels = rounded.astype(np.int64)
    return Dataset(features=features, labels=labels)
