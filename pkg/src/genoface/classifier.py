"""Small softmax classifiers trained from scratch, with exact input gradients."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

ARCHITECTURES = ("linear", "mlp")


class ClassifierError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.5
    epochs: int = 200
    batch_size: int = 64
    seed: int = 0
    l2_penalty: float = 1e-4
    architecture: str = "mlp"
    hidden: int = 16
    balance_classes: bool = False
    init_scale: float = 1.0
    standardize: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1 or self.hidden < 1:
            raise ClassifierError("learning_rate, epochs, batch_size and hidden must be positive")
        if self.l2_penalty < 0:
            raise ClassifierError("l2_penalty must be >= 0")
        if self.architecture not in ARCHITECTURES:
            raise ClassifierError(f"architecture must be one of {ARCHITECTURES}")


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass(frozen=True)
class PhenotypeClassifier:
    phenotype: str
    variants: tuple[str, ...]
    architecture: str
    params: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ClassifierError(f"unknown architecture {self.architecture!r}")
        k = len(self.variants)
        if self.architecture == "linear":
            w, b = self.params["W"], self.params["b"]
            ok = w.ndim == 2 and w.shape[1] == k and b.shape == (k,)
        else:
            w1, b1, w2, b2 = (self.params[n] for n in ("W1", "b1", "W2", "b2"))
            h = w1.shape[1]
            ok = b1.shape == (h,) and w2.shape == (h, k) and b2.shape == (k,)
        d = self.params["W" if self.architecture == "linear" else "W1"].shape[0]
        if "shift" in self.params:
            ok = ok and self.params["shift"].shape == (d,) and self.params["scale"].shape == (d,)
        if "mask" in self.params:
            ok = ok and self.params["mask"].shape == (d,)
        if not ok:
            raise ClassifierError("parameter shapes are inconsistent with the architecture")

    @property
    def input_dim(self) -> int:
        return self.params["W" if self.architecture == "linear" else "W1"].shape[0]

    @property
    def num_variants(self) -> int:
        return len(self.variants)

    @property
    def train_loss(self) -> float | None:
        return self.metadata.get("train_loss")

    def _forward(self, x: np.ndarray):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.input_dim:
            raise ClassifierError(f"expected inputs of dimension {self.input_dim}, got {x.shape[1]}")
        p = self.params
        x = self._standardize(x)
        if self.architecture == "linear":
            return x @ p["W"] + p["b"], None
        h = np.tanh(x @ p["W1"] + p["b1"])
        return h @ p["W2"] + p["b2"], h

    def _standardize(self, x: np.ndarray) -> np.ndarray:
        p = self.params
        if "shift" in p:
            x = (x - p["shift"]) / p["scale"]
        return x * p["mask"] if "mask" in p else x

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self._forward(x)[0]

    def _backward_input(self, dlogits: np.ndarray, hidden) -> np.ndarray:
        p = self.params
        if self.architecture == "linear":
            grad = dlogits @ p["W"].T
        else:
            grad = ((dlogits @ p["W2"].T) * (1.0 - hidden**2)) @ p["W1"].T
        if "mask" in p:
            grad = grad * p["mask"]
        return grad / p["scale"] if "scale" in p else grad

    def to_dict(self) -> dict:
        return {
            "phenotype": self.phenotype,
            "variants": list(self.variants),
            "architecture": self.architecture,
            "params": {n: {"shape": list(a.shape), "data": a.ravel().tolist()}
                       for n, a in sorted(self.params.items())},
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "PhenotypeClassifier":
        params = {n: np.asarray(v["data"], dtype=float).reshape(v["shape"])
                  for n, v in raw["params"].items()}
        return cls(raw["phenotype"], tuple(raw["variants"]), raw["architecture"], params,
                   dict(raw.get("metadata", {})))


def predict_proba(model: PhenotypeClassifier, x: np.ndarray) -> np.ndarray:
    """Softmax output; a 1-D input gives a 1-D distribution."""
    probs = softmax(model.logits(x))
    return probs[0] if np.ndim(x) == 1 else probs


def predict(model: PhenotypeClassifier, x: np.ndarray) -> np.ndarray:
    return np.argmax(model.logits(x), axis=1)


def objective_weights(model: PhenotypeClassifier, objective) -> np.ndarray:
    """Turn an objective spec into per-variant weights on log-probabilities.

    ``objective`` is either ``("xent", variant)`` for cross-entropy against a label,
    a mapping variant -> weight, or a raw weight array (one row per input allowed).
    """
    k = model.num_variants
    if isinstance(objective, tuple) and len(objective) == 2 and objective[0] == "xent":
        w = np.zeros(k)
        w[_variant_idx(model, objective[1])] = -1.0
        return w
    if isinstance(objective, Mapping):
        w = np.zeros(k)
        for variant, weight in objective.items():
            w[_variant_idx(model, variant)] = weight
        return w
    w = np.asarray(objective, dtype=float)
    if w.shape[-1] != k:
        raise ClassifierError(f"objective weights must have {k} entries")
    return w


def _variant_idx(model: PhenotypeClassifier, variant) -> int:
    if isinstance(variant, (int, np.integer)):
        if not 0 <= variant < model.num_variants:
            raise ClassifierError(f"variant index {variant} out of range")
        return int(variant)
    try:
        return model.variants.index(variant)
    except ValueError:
        raise ClassifierError(f"{variant!r} is not a variant of {model.phenotype}") from None


def objective_value(model: PhenotypeClassifier, x: np.ndarray, weights: np.ndarray,
                    form: str = "log") -> np.ndarray:
    """sum_v w_v log g(v, x) (``form="log"``) or sum_v w_v g(v, x) (``form="prob"``), per row."""
    logits = model.logits(x)
    vals = log_softmax(logits) if form == "log" else softmax(logits)
    return (vals * weights).sum(axis=1)


def input_gradient(model: PhenotypeClassifier, x: np.ndarray, objective,
                   form: str = "log") -> np.ndarray:
    """Gradient of the objective with respect to the input (rowwise for a batch)."""
    w = objective_weights(model, objective)
    single = np.ndim(x) == 1
    logits, hidden = model._forward(x)
    probs = softmax(logits)
    w = np.broadcast_to(w, probs.shape)
    if form == "log":
        dlogits = w - w.sum(axis=1, keepdims=True) * probs
    elif form == "prob":
        dlogits = probs * (w - (probs * w).sum(axis=1, keepdims=True))
    else:
        raise ClassifierError(f"unknown objective form {form!r}")
    grad = model._backward_input(dlogits, hidden)
    return grad[0] if single else grad


def init_classifier(phenotype: str, variants: Sequence[str], input_dim: int,
                    config: TrainConfig, x: np.ndarray | None = None,
                    input_mask: np.ndarray | None = None) -> PhenotypeClassifier:
    """Fresh parameters; with ``config.standardize`` and data ``x`` the inputs are z-scored
    using the training mean and standard deviation (constant columns keep scale 1).

    ``input_mask`` (0/1 per input column) hides columns from the classifier entirely.
    """
    rng = np.random.default_rng([config.seed, 1])
    k = len(variants)
    if config.architecture == "linear":
        params = {"W": np.zeros((input_dim, k)), "b": np.zeros(k)}
    else:
        h = config.hidden
        params = {
            "W1": rng.normal(0.0, config.init_scale / np.sqrt(input_dim), (input_dim, h)),
            "b1": np.zeros(h),
            "W2": rng.normal(0.0, 1.0 / np.sqrt(h), (h, k)),
            "b2": np.zeros(k),
        }
    if config.standardize and x is not None:
        std = np.asarray(x, float).std(axis=0)
        params["shift"] = np.asarray(x, float).mean(axis=0)
        params["scale"] = np.where(std > 1e-8, std, 1.0)
    if input_mask is not None:
        mask = np.asarray(input_mask, dtype=float)
        if mask.shape != (input_dim,):
            raise ClassifierError(f"input_mask must have {input_dim} entries")
        params["mask"] = mask
    return PhenotypeClassifier(phenotype, tuple(variants), config.architecture, params)


def _loss_and_grads(model: PhenotypeClassifier, x, y, sample_w, l2):
    p = model.params
    logits, hidden = model._forward(x)
    probs = softmax(logits)
    n = x.shape[0]
    sw = sample_w / sample_w.sum()
    loss = -(sw * log_softmax(logits)[np.arange(n), y]).sum()
    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits *= sw[:, None]
    x = model._standardize(np.atleast_2d(x))
    grads = {}
    if model.architecture == "linear":
        grads["W"] = x.T @ dlogits + l2 * p["W"]
        grads["b"] = dlogits.sum(axis=0)
        loss += 0.5 * l2 * np.sum(p["W"] ** 2)
    else:
        grads["W2"] = hidden.T @ dlogits + l2 * p["W2"]
        grads["b2"] = dlogits.sum(axis=0)
        da = (dlogits @ p["W2"].T) * (1.0 - hidden**2)
        grads["W1"] = x.T @ da + l2 * p["W1"]
        grads["b1"] = da.sum(axis=0)
        loss += 0.5 * l2 * (np.sum(p["W1"] ** 2) + np.sum(p["W2"] ** 2))
    return float(loss), grads


def mean_loss(model: PhenotypeClassifier, x: np.ndarray, y: np.ndarray, l2: float = 0.0) -> float:
    return _loss_and_grads(model, np.asarray(x, float), np.asarray(y), np.ones(len(y)), l2)[0]


def continue_training(model: PhenotypeClassifier, x: np.ndarray, y: np.ndarray,
                      config: TrainConfig, stream: int = 0) -> PhenotypeClassifier:
    """Mini-batch gradient descent on mean cross-entropy starting from ``model``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise ClassifierError("training data must contain at least 2 classes")
    if config.balance_classes:
        counts = np.bincount(y, minlength=model.num_variants).astype(float)
        sample_w = (len(y) / (model.num_variants * counts))[y]
    else:
        sample_w = np.ones(len(y))
    rng = np.random.default_rng([config.seed, 2, stream])
    params = {n: a.copy() for n, a in model.params.items()}
    current = replace(model, params=params)
    for _ in range(config.epochs):
        order = rng.permutation(len(y))
        for start in range(0, len(y), config.batch_size):
            idx = order[start:start + config.batch_size]
            _, grads = _loss_and_grads(current, x[idx], y[idx], sample_w[idx], config.l2_penalty)
            for name, g in grads.items():
                params[name] -= config.learning_rate * g
    final, _ = _loss_and_grads(current, x, y, sample_w, config.l2_penalty)
    meta = dict(model.metadata, train_loss=final, epochs=model.metadata.get("epochs", 0) + config.epochs)
    return replace(current, metadata=meta)


def train(phenotype: str, variants: Sequence[str], x: np.ndarray, y: Sequence[int],
          config: TrainConfig = TrainConfig(),
          input_mask: np.ndarray | None = None) -> PhenotypeClassifier:
    """Fit a fresh classifier; the final training loss is kept in ``metadata``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or len(x) != len(y):
        raise ClassifierError("x must be 2-D with one label per row")
    if len(np.unique(y)) < 2:
        raise ClassifierError("training data must contain at least 2 classes")
    model = init_classifier(phenotype, variants, x.shape[1], config, x, input_mask)
    return continue_training(model, x, y, config)


def accuracy(model: PhenotypeClassifier, x: np.ndarray, y: Sequence[int]) -> float:
    return float(np.mean(predict(model, x) == np.asarray(y)))


def dump_classifiers(models: Mapping[str, PhenotypeClassifier]) -> str:
    return json.dumps({p: m.to_dict() for p, m in models.items()}, sort_keys=True)


def load_classifiers(text: str) -> dict[str, PhenotypeClassifier]:
    return {p: PhenotypeClassifier.from_dict(raw) for p, raw in json.loads(text).items()}
