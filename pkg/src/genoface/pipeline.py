"""End-to-end experiment plumbing shared by the CLI and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .adversary import AttackConfig, genome_log_weights, pgd_batch, universal_batch
from .classifier import PhenotypeClassifier, TrainConfig, predict, train
from .matcher import (
    EvalConfig, ScoreMatrix, SweepRow, oracle_substitute, score_matrix, sweep_scores,
)
from .model import ConditionalModel, fit_conditional_tables
from .panel import PHENOTYPES, PhenotypeProfile, SnpPanel
from .synth import (
    DEFAULT_CONTRAST, DEFAULT_DIMS, DEFAULT_SIGMAS, FeatureLayout, GeneticSimulation, PairedDataset,
    PoolMember, generate_features, labels_for, pair_ideal, pair_realistic, sample_profiles,
    simulate_pool,
)


@dataclass(frozen=True)
class WorldConfig:
    mode: str = "realistic"
    pool_size: int = 3000
    individuals: int = 456
    train_size: int = 2000
    seed: int = 0
    dims: Mapping[str, int] = field(default_factory=lambda: dict(DEFAULT_DIMS))
    sigmas: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_SIGMAS))
    contrast: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_CONTRAST))
    smoothing: float = 1.0
    probability_floor: float = 1e-6

    def __post_init__(self):
        if self.mode not in ("ideal", "realistic"):
            raise ValueError("mode must be 'ideal' or 'realistic'")


@dataclass
class World:
    config: WorldConfig
    panel: SnpPanel
    layout: FeatureLayout
    pool: list[PoolMember]
    model: ConditionalModel
    dataset: PairedDataset
    train_profiles: list[PhenotypeProfile]
    train_features: np.ndarray


def build_world(cfg: WorldConfig = WorldConfig(), panel: SnpPanel | None = None,
                sim: GeneticSimulation = GeneticSimulation(),
                profiles: Sequence[PhenotypeProfile] | None = None) -> World:
    """Reference pool, fitted model, paired individuals with features and a training set.

    ``profiles`` replaces the sampled individuals; each must have a pool match.
    """
    panel = panel or SnpPanel.default()
    layout = FeatureLayout(panel, dict(cfg.dims), dict(cfg.contrast))
    pool = simulate_pool(cfg.pool_size, panel, cfg.seed, sim)
    model = fit_conditional_tables([g for g, _ in pool], [p for _, p in pool], panel,
                                   cfg.smoothing, cfg.probability_floor)
    if profiles is None:
        profiles = sample_profiles(pool, cfg.individuals, cfg.seed + 1)
    if cfg.mode == "ideal":
        ds = pair_ideal(profiles, pool, model)
    else:
        ds = pair_realistic(profiles, pool, cfg.seed + 2)
    feats = generate_features(ds.profiles, layout, cfg.sigmas, cfg.seed + 3)
    ds = ds.with_features(feats, dims=dict(cfg.dims), sigmas=dict(cfg.sigmas),
                         contrast=dict(cfg.contrast))
    train_profiles = sample_profiles(pool, cfg.train_size, cfg.seed + 4, prefix="train")
    train_feats = generate_features(train_profiles, layout, cfg.sigmas, cfg.seed + 5)
    return World(cfg, panel, layout, pool, model, PairedDataset(
        ds.profiles, ds.genotypes, ds.pool_ids, ds.provenance, cfg.seed, ds.features, ds.meta),
        train_profiles, train_feats)


def train_classifiers(panel: SnpPanel, profiles: Sequence[PhenotypeProfile], features: np.ndarray,
                      config: TrainConfig = TrainConfig(),
                      layout: FeatureLayout | None = None) -> dict[str, PhenotypeClassifier]:
    """One classifier per phenotype; given a layout, each one only sees its own feature block."""
    return {
        p: train(p, panel.variant_sets[p], features, labels_for(profiles, panel, p),
                 TrainConfig(**{**config.__dict__, "seed": config.seed + i}),
                 None if layout is None else layout.mask(p))
        for i, p in enumerate(PHENOTYPES)
    }


def predict_profiles(classifiers: Mapping[str, PhenotypeClassifier], features: np.ndarray,
                     ids: Sequence[str]) -> list[PhenotypeProfile]:
    preds = {p: predict(clf, features) for p, clf in classifiers.items()}
    return [
        PhenotypeProfile(ident, {p: classifiers[p].variants[preds[p][i]] for p in PHENOTYPES})
        for i, ident in enumerate(ids)
    ]


def probes_for(mode: str, dataset: PairedDataset, predicted: Sequence[PhenotypeProfile] | None,
               oracle: Sequence[str] = ()) -> list[PhenotypeProfile]:
    """Probe profiles for a matching mode: predicted (optionally with oracle phenotypes) or truth."""
    if mode in ("oracle-all", "upper-bound"):
        return list(dataset.profiles)
    if predicted is None:
        raise ValueError(f"mode {mode!r} needs predicted profiles")
    return [oracle_substitute(z, t, oracle) for z, t in zip(predicted, dataset.profiles)]


def dataset_scores(dataset: PairedDataset, probes: Sequence[PhenotypeProfile],
                   model: ConditionalModel, normalize: bool = False) -> ScoreMatrix:
    return score_matrix(probes, dataset.genotypes, model, normalize)


def sweep(dataset: PairedDataset, probes: Sequence[PhenotypeProfile], model: ConditionalModel,
          config: EvalConfig, random_mode: bool = False) -> list[SweepRow]:
    sm = dataset_scores(dataset, probes, model)
    return sweep_scores(sm, dataset.true_pairing, config, random_mode)


def universal_perturb(dataset: PairedDataset, classifiers: Mapping[str, PhenotypeClassifier],
                      model: ConditionalModel, attack: AttackConfig, features: np.ndarray | None = None,
                      form: str = "log"):
    """Universal noise for every individual against its own (true) genome."""
    x = dataset.features if features is None else features
    weights = genome_log_weights(model, dataset.genotypes)
    return universal_batch(classifiers, x, weights, attack, form)


def pgd_perturb(dataset: PairedDataset, classifier: PhenotypeClassifier, panel: SnpPanel,
                attack: AttackConfig) -> np.ndarray:
    labels = labels_for(dataset.profiles, panel, classifier.phenotype)
    return pgd_batch(classifier, dataset.features, labels, attack)


def mean_success(rows: Sequence[SweepRow], sizes: Sequence[int] | None = None, k: int = 1) -> float:
    vals = [r.mean for r in rows if r.k == k and (sizes is None or r.population_size in sizes)]
    return float(np.mean(vals))


def universal_sweep(dataset: PairedDataset, classifiers: Mapping[str, PhenotypeClassifier],
                    model: ConditionalModel, epsilon: float, config: EvalConfig) -> list[SweepRow]:
    """Top-k sweep after perturbing every individual's features with universal noise."""
    res = universal_perturb(dataset, classifiers, model, AttackConfig(epsilon, optimizer="adam"))
    pred = predict_profiles(classifiers, dataset.features + res.delta, dataset.ids)
    return sweep(dataset, probes_for("predicted", dataset, pred), model, config)


def calibrate_epsilon(dataset: PairedDataset, classifiers: Mapping[str, PhenotypeClassifier],
                      model: ConditionalModel, config: EvalConfig,
                      grid: Sequence[float]) -> tuple[float | None, dict[float, list[SweepRow]]]:
    """Smallest grid epsilon whose universal noise pushes top-k success down to k/n or below
    at every population size in ``config``; None if the grid never gets there."""
    tried: dict[float, list[SweepRow]] = {}
    for eps in sorted(grid):
        rows = universal_sweep(dataset, classifiers, model, eps, config)
        tried[eps] = rows
        if all(r.mean <= r.k / r.population_size for r in rows):
            return eps, tried
    return None, tried
