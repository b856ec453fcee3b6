"""Match scoring, ranking and the evaluation protocols built on top of them."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Collection, Mapping, Sequence

import numpy as np

from .model import ConditionalModel
from .panel import PHENOTYPES, GenotypeRecord, PhenotypeProfile


class MatchError(ValueError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    k: int = 1
    theta: float = 0.0
    population_sizes: tuple[int, ...] = (10, 20, 50, 100)
    trials: int = 100
    seed: int = 0
    oracle_phenotypes: frozenset[str] = frozenset()
    ks: tuple[int, ...] = ()
    workers: int = 1

    def __post_init__(self):
        if self.k < 1 or any(k < 1 for k in self.ks):
            raise MatchError("k must be >= 1")
        if self.trials < 1:
            raise MatchError("trials must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise MatchError("seed must be a 64-bit unsigned integer")
        if any(n < 1 for n in self.population_sizes):
            raise MatchError("population sizes must be positive")
        unknown = set(self.oracle_phenotypes) - set(PHENOTYPES)
        if unknown:
            raise MatchError(f"unknown oracle phenotypes: {sorted(unknown)}")

    @property
    def k_values(self) -> tuple[int, ...]:
        return self.ks or (self.k,)


@dataclass(frozen=True)
class ScoreMatrix:
    probe_ids: list[str]
    genome_ids: list[str]
    scores: np.ndarray

    def __post_init__(self):
        if self.scores.shape != (len(self.probe_ids), len(self.genome_ids)):
            raise MatchError("score matrix shape does not match id lists")
        if not np.all(np.isfinite(self.scores)):
            raise MatchError("score matrix has non-finite entries")

    def pairing_indices(self, true_pairing: Mapping[str, str]) -> np.ndarray:
        col = {g: j for j, g in enumerate(self.genome_ids)}
        out = np.empty(len(self.probe_ids), dtype=np.int64)
        for i, pid in enumerate(self.probe_ids):
            gid = true_pairing.get(pid)
            if gid is None or gid not in col:
                raise MatchError(f"probe {pid} has no true genome in the population")
            out[i] = col[gid]
        return out


def score_pair(z: PhenotypeProfile, y: GenotypeRecord, model: ConditionalModel,
               normalize: bool = False) -> float:
    """Sum over phenotypes of log P(z_p | y)."""
    total = 0.0
    for pheno in PHENOTYPES:
        idx = model.panel.variant_index(pheno, z.variants[pheno])
        total += model.log_variant_scores(pheno, y, normalize)[idx]
    return float(total)


def genome_log_tables(genomes: Sequence[GenotypeRecord], model: ConditionalModel,
                      normalize: bool = False) -> dict[str, np.ndarray]:
    """Per phenotype, a (genomes x variants) array of log P(v | y)."""
    return {
        p: np.array([model.log_variant_scores(p, y, normalize) for y in genomes])
        for p in PHENOTYPES
    }


def score_matrix(probes: Sequence[PhenotypeProfile], genomes: Sequence[GenotypeRecord],
                 model: ConditionalModel, normalize: bool = False) -> ScoreMatrix:
    logs = genome_log_tables(genomes, model, normalize)
    scores = np.zeros((len(probes), len(genomes)))
    for pheno in PHENOTYPES:
        idx = [model.panel.variant_index(pheno, z.variants[pheno]) for z in probes]
        scores += logs[pheno][:, idx].T
    return ScoreMatrix([z.individual_id for z in probes],
                       [y.individual_id for y in genomes], scores)


def _order(scores: np.ndarray, ids: Sequence[str]) -> np.ndarray:
    # primary key: score descending; secondary: id ascending
    id_rank = np.argsort(np.argsort(np.array(ids, dtype=object), kind="stable"), kind="stable")
    return np.lexsort((id_rank, -scores))


def rank_genomes(z: PhenotypeProfile, population: Sequence[GenotypeRecord],
                 model: ConditionalModel) -> list[tuple[str, float]]:
    if not population:
        raise MatchError("population is empty")
    scores = np.array([score_pair(z, y, model) for y in population])
    ids = [y.individual_id for y in population]
    return [(ids[j], float(scores[j])) for j in _order(scores, ids)]


def _beats_true(sm: ScoreMatrix, truth: np.ndarray) -> np.ndarray:
    """beats[i, j]: genome j outranks probe i's true genome (ties go to the smaller id)."""
    ids = np.array(sm.genome_ids, dtype=object)
    id_rank = np.argsort(np.argsort(ids, kind="stable"), kind="stable")
    rows = np.arange(len(truth))
    s_true = sm.scores[rows, truth][:, None]
    beats = (sm.scores > s_true) | ((sm.scores == s_true) & (id_rank[None, :] < id_rank[truth][:, None]))
    beats[rows, truth] = False
    return beats


def true_ranks(sm: ScoreMatrix, true_pairing: Mapping[str, str]) -> np.ndarray:
    """1-based rank of each probe's true genome within the full population."""
    truth = sm.pairing_indices(true_pairing)
    return 1 + _beats_true(sm, truth).sum(axis=1)


def topk_success(probes: Sequence[PhenotypeProfile], genomes: Sequence[GenotypeRecord],
                 true_pairing: Mapping[str, str], model: ConditionalModel, k: int) -> float:
    if k < 1:
        raise MatchError("k must be >= 1")
    sm = score_matrix(probes, genomes, model)
    return float(np.mean(true_ranks(sm, true_pairing) <= k))


@dataclass(frozen=True)
class SweepRow:
    population_size: int
    k: int
    mean: float
    std: float
    count: int

    @property
    def stderr(self) -> float:
        return self.std / np.sqrt(self.count)


def _probe_ranks(beats_row: np.ndarray, truth: int, n: int, trials: int,
                 rng: np.random.Generator, random_mode: bool) -> np.ndarray:
    n_total = beats_row.shape[0]
    if random_mode:
        return rng.integers(1, n + 1, size=trials)
    others = np.delete(beats_row, truth)
    if n == n_total:
        return np.array([1 + int(others.sum())])
    keys = rng.random((trials, n_total - 1))
    picked = np.argpartition(keys, n - 2, axis=1)[:, : n - 1]
    return 1 + others[picked].sum(axis=1)


def sweep_scores(sm: ScoreMatrix, true_pairing: Mapping[str, str], config: EvalConfig,
                 random_mode: bool = False) -> list[SweepRow]:
    """Top-k success against random sub-populations that always contain the true genome.

    Each (population size, probe) pair draws all its trials from its own RNG stream
    seeded by (seed, size, probe index), so results do not depend on ``workers``.
    """
    truth = sm.pairing_indices(true_pairing)
    n_total = len(sm.genome_ids)
    beats = _beats_true(sm, truth)
    rows = []
    for n in config.population_sizes:
        if n < 2:
            raise MatchError("population size must be >= 2")
        if n > n_total:
            raise MatchError(f"population size {n} exceeds {n_total} genomes")

        def run(i, n=n):
            rng = np.random.default_rng([config.seed, n, i])
            return _probe_ranks(beats[i], truth[i], n, config.trials, rng, random_mode)

        probes = range(len(truth))
        if config.workers > 1:
            with ThreadPoolExecutor(config.workers) as pool:
                ranks = list(pool.map(run, probes))
        else:
            ranks = [run(i) for i in probes]
        all_ranks = np.concatenate(ranks)
        for k in config.k_values:
            hits = (all_ranks <= k).astype(float)
            rows.append(SweepRow(n, k, float(hits.mean()), float(hits.std()), hits.size))
    return rows


def population_sweep(probes: Sequence[PhenotypeProfile], genomes: Sequence[GenotypeRecord],
                     true_pairing: Mapping[str, str], model: ConditionalModel,
                     config: EvalConfig, random_mode: bool = False) -> list[SweepRow]:
    return sweep_scores(score_matrix(probes, genomes, model), true_pairing, config, random_mode)


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "auc", float(np.trapezoid(self.tpr, self.fpr)))

    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def roc_topk(sm: ScoreMatrix, true_pairing: Mapping[str, str]) -> RocCurve:
    """ROC from predicting the top-k genomes per probe as matches, k = 1..N.

    The curve is anchored at (0, 0) with threshold 0.
    """
    n = len(sm.probe_ids)
    if n < 2 or len(sm.genome_ids) != n:
        raise MatchError("top-k ROC needs a square score matrix with N >= 2")
    ranks = true_ranks(sm, true_pairing)
    ks = np.arange(1, n + 1)
    matches = np.searchsorted(np.sort(ranks), ks, side="right")
    tpr = matches / n
    fpr = (ks * n - matches) / (n * (n - 1))
    return RocCurve(np.r_[0, ks].astype(float), np.r_[0.0, fpr], np.r_[0.0, tpr])


def roc_threshold(sm: ScoreMatrix, true_pairing: Mapping[str, str]) -> RocCurve:
    """ROC from predicting every pair with score >= theta as a match."""
    n_p, n_g = sm.scores.shape
    if min(n_p, n_g) < 2:
        raise MatchError("threshold ROC needs N >= 2")
    truth = sm.pairing_indices(true_pairing)
    positive = np.zeros(sm.scores.shape, dtype=bool)
    positive[np.arange(n_p), truth] = True
    flat = sm.scores.ravel()
    order = np.argsort(-flat, kind="stable")
    s_sorted = flat[order]
    pos_sorted = positive.ravel()[order]
    tp = np.cumsum(pos_sorted)
    fp = np.cumsum(~pos_sorted)
    # last index of each run of equal scores
    ends = np.r_[np.nonzero(np.diff(s_sorted))[0], s_sorted.size - 1]
    n_pos = positive.sum()
    n_neg = positive.size - n_pos
    thresholds = np.r_[np.inf, s_sorted[ends], -np.inf]
    tpr = np.r_[0.0, tp[ends] / n_pos, 1.0]
    fpr = np.r_[0.0, fp[ends] / n_neg, 1.0]
    return RocCurve(thresholds, fpr, tpr)


def oracle_substitute(predicted: PhenotypeProfile, truth: PhenotypeProfile,
                      phenotypes: Collection[str]) -> PhenotypeProfile:
    unknown = set(phenotypes) - set(PHENOTYPES)
    if unknown:
        raise MatchError(f"unknown phenotypes: {sorted(unknown)}")
    variants = dict(predicted.variants)
    for pheno in phenotypes:
        variants[pheno] = truth.variants[pheno]
    return PhenotypeProfile(predicted.individual_id, variants)
