"""L-infinity bounded perturbations against the phenotype classifiers.

Two attacks are provided: sign-gradient PGD on one classifier's cross-entropy, and
the universal noise that lowers the correct genome's match score through all four
classifiers at once. Both operate row-wise on batches; the single-input functions
are thin wrappers.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .classifier import (
    PhenotypeClassifier, TrainConfig, continue_training, input_gradient, objective_value, predict,
)
from .model import ConditionalModel
from .panel import PHENOTYPES, GenotypeRecord

BOX_TOL = 1e-12
OPTIMIZERS = ("sign-gradient", "adam")


class AttackError(ValueError):
    pass


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float
    alpha: float | None = None
    iterations: int | None = None
    random_start: bool = False
    optimizer: str = "sign-gradient"
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise AttackError("epsilon must lie in [0, 1]")
        if self.alpha is not None and self.alpha <= 0:
            raise AttackError("alpha must be > 0")
        if self.iterations is not None and self.iterations < 1:
            raise AttackError("iterations must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise AttackError(f"optimizer must be one of {OPTIMIZERS}")
        if self.lr <= 0 or not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise AttackError("invalid Adam parameters")

    @property
    def step_size(self) -> float:
        if self.alpha is not None:
            return self.alpha
        return self.epsilon / 10 if self.epsilon > 0 else 1e-3

    def steps(self, default: int) -> int:
        return self.iterations if self.iterations is not None else default


def project(delta: np.ndarray, x: np.ndarray, epsilon: float) -> np.ndarray:
    """Clip to [-eps, eps], then shrink so that x + delta stays inside [0, 1]."""
    delta = np.clip(delta, -epsilon, epsilon)
    return np.clip(x + delta, 0.0, 1.0) - x


def check_perturbation(delta: np.ndarray, x: np.ndarray, epsilon: float) -> None:
    if np.any(np.abs(delta) > epsilon + BOX_TOL):
        raise AssertionError("perturbation exceeds the L-inf budget")
    adv = x + delta
    if np.any(adv < -BOX_TOL) or np.any(adv > 1.0 + BOX_TOL):
        raise AssertionError("perturbed input leaves [0, 1]")


def _as_batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    return np.atleast_2d(x), x.ndim == 1


def pgd_batch(model: PhenotypeClassifier, x: np.ndarray, labels: Sequence[int],
              config: AttackConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Sign-gradient ascent on cross-entropy, projected after every step."""
    if config.optimizer != "sign-gradient":
        raise AttackError("PGD uses the sign-gradient optimizer")
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise AttackError(f"inputs must have dimension {model.input_dim}")
    labels = np.asarray(labels, dtype=np.int64)
    eps = config.epsilon
    if config.random_start:
        rng = rng if rng is not None else np.random.default_rng([config.seed, 21])
        delta = project(rng.uniform(-eps, eps, size=x.shape), x, eps)
    else:
        delta = np.zeros_like(x)
    check_perturbation(delta, x, eps)
    weights = -np.eye(model.num_variants)[labels]
    for _ in range(config.steps(40)):
        grad = input_gradient(model, x + delta, weights)
        delta = project(delta + config.step_size * np.sign(grad), x, eps)
        check_perturbation(delta, x, eps)
    return delta


def pgd_single(model: PhenotypeClassifier, x: np.ndarray, true_variant,
               config: AttackConfig) -> np.ndarray:
    xb, single = _as_batch(x)
    if xb.shape[1] != model.input_dim:
        raise AttackError(f"input has dimension {xb.shape[1]}, model expects {model.input_dim}")
    label = true_variant if isinstance(true_variant, (int, np.integer)) \
        else model.variants.index(true_variant)
    delta = pgd_batch(model, xb, [label], config)
    return delta[0] if single else delta


@dataclass(frozen=True)
class UniversalResult:
    delta: np.ndarray
    objective_trace: np.ndarray  # (iterations + 1, n) objective at each iterate
    linf_trace: np.ndarray
    best_objective: np.ndarray


def genome_log_weights(model: ConditionalModel, genomes: Sequence[GenotypeRecord],
                       normalize: bool = False) -> dict[str, np.ndarray]:
    """Per phenotype, rows of log P(v | y) for each genome: the attack's variant weights."""
    return {p: np.array([model.log_variant_scores(p, y, normalize) for y in genomes])
            for p in PHENOTYPES}


def universal_objective(classifiers: Mapping[str, PhenotypeClassifier], x: np.ndarray,
                        log_weights: Mapping[str, np.ndarray], form: str = "log") -> np.ndarray:
    """Row-wise sum_p sum_v log g_p(v, x) * log P(v | y)."""
    total = np.zeros(np.atleast_2d(x).shape[0])
    for pheno, clf in classifiers.items():
        total += objective_value(clf, x, log_weights[pheno], form)
    return total


def universal_objective_grad(classifiers, x, log_weights, form: str = "log") -> np.ndarray:
    grad = np.zeros_like(np.atleast_2d(x))
    for pheno, clf in classifiers.items():
        grad += input_gradient(clf, x, log_weights[pheno], form)
    return grad


def universal_batch(classifiers: Mapping[str, PhenotypeClassifier], x: np.ndarray,
                    log_weights: Mapping[str, np.ndarray], config: AttackConfig,
                    form: str = "log", warm_start: np.ndarray | None = None) -> UniversalResult:
    """Projected Adam descent on the universal objective, one independent problem per row.

    Starts from delta = 0 (or a feasible warm start) and returns, per row, the best
    iterate seen, so the reported objective never exceeds the starting one.
    """
    if config.optimizer != "adam":
        config = replace(config, optimizer="adam")
    x = np.asarray(x, dtype=float)
    dims = {clf.input_dim for clf in classifiers.values()}
    if dims != {x.shape[1]}:
        raise AttackError("all classifiers must share the input dimension of x")
    eps = config.epsilon
    delta = np.zeros_like(x) if warm_start is None else project(np.asarray(warm_start, float), x, eps)
    check_perturbation(delta, x, eps)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    obj = universal_objective(classifiers, x + delta, log_weights, form)
    if not np.all(np.isfinite(obj)):
        raise AttackError("universal objective is not finite")
    best, best_obj = delta.copy(), obj.copy()
    trace, linf = [obj], [np.abs(delta).max(axis=1)]
    b1, b2 = config.beta1, config.beta2
    for t in range(1, config.steps(100) + 1):
        g = universal_objective_grad(classifiers, x + delta, log_weights, form)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        step = config.lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + config.adam_eps)
        delta = project(delta - step, x, eps)
        check_perturbation(delta, x, eps)
        obj = universal_objective(classifiers, x + delta, log_weights, form)
        if not np.all(np.isfinite(obj)):
            raise AttackError("universal objective is not finite")
        better = obj < best_obj
        best[better] = delta[better]
        best_obj = np.where(better, obj, best_obj)
        trace.append(obj)
        linf.append(np.abs(delta).max(axis=1))
    return UniversalResult(best, np.array(trace), np.array(linf), best_obj)


def universal_noise(classifiers: Mapping[str, PhenotypeClassifier], x: np.ndarray,
                    y_true: GenotypeRecord, model: ConditionalModel, config: AttackConfig,
                    form: str = "log", warm_start: np.ndarray | None = None) -> UniversalResult:
    xb, single = _as_batch(x)
    weights = genome_log_weights(model, [y_true])
    res = universal_batch(classifiers, xb, weights, config, form,
                          None if warm_start is None else np.atleast_2d(warm_start))
    if not single:
        return res
    return UniversalResult(res.delta[0], res.objective_trace[:, 0], res.linf_trace[:, 0],
                           res.best_objective[0])


def attacked_accuracy(model: PhenotypeClassifier, x: np.ndarray, labels: Sequence[int],
                      config: AttackConfig) -> float:
    delta = pgd_batch(model, x, labels, config)
    return float(np.mean(predict(model, x + delta) == np.asarray(labels)))


def adversarial_train(model: PhenotypeClassifier, x: np.ndarray, labels: Sequence[int],
                      attack: AttackConfig, passes: int = 5,
                      train_config: TrainConfig = TrainConfig(epochs=40),
                      subset_fraction: float = 0.5) -> PhenotypeClassifier:
    """Repeatedly attack a random subset with the current model and retrain on clean + adversarial.

    Each pass draws a fresh subset and random PGD starts; adversarial copies keep
    their clean labels and replace those of the previous pass.
    """
    if passes < 1:
        raise AttackError("passes must be >= 1")
    if not 0 < subset_fraction <= 1:
        raise AttackError("subset_fraction must lie in (0, 1]")
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    attack = replace(attack, random_start=True, optimizer="sign-gradient")
    current = model
    for rnd in range(passes):
        rng = np.random.default_rng([attack.seed, 31, rnd])
        subset = np.sort(rng.choice(len(labels), size=max(1, int(round(subset_fraction * len(labels)))),
                                    replace=False))
        delta = pgd_batch(current, x[subset], labels[subset], attack, rng)
        aug_x = np.vstack([x, x[subset] + delta])
        aug_y = np.concatenate([labels, labels[subset]])
        current = continue_training(current, aug_x, aug_y, train_config, stream=100 + rnd)
    meta = dict(current.metadata, adversarial_epsilon=attack.epsilon, adversarial_passes=passes)
    return replace(current, metadata=meta)
