"""Empirical P(variant | SNP genotype) tables and per-genome variant likelihoods."""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .panel import MISSING, PHENOTYPES, GenotypeRecord, PhenotypeProfile, SnpPanel

DEFAULT_FLOOR = 1e-6


class ModelError(ValueError):
    pass


def floor_distribution(probs: np.ndarray, floor: float) -> np.ndarray:
    """Raise entries to ``floor`` and rescale the rest so the total stays 1.

    Entries pinned at the floor stay exactly at the floor; rescaling is repeated
    until no unpinned entry drops below it.
    """
    p = np.asarray(probs, dtype=float)
    p = p / p.sum()
    pinned = np.zeros(p.shape, dtype=bool)
    while True:
        low = (p < floor) & ~pinned
        if not low.any():
            break
        pinned |= low
        free_mass = 1.0 - floor * pinned.sum()
        p = np.where(pinned, floor, p)
        p[~pinned] *= free_mass / p[~pinned].sum()
    return p


@dataclass(frozen=True)
class ConditionalModel:
    panel: SnpPanel
    tables: dict[str, dict[str, np.ndarray]]
    priors: dict[str, np.ndarray]
    smoothing: float = 1.0
    probability_floor: float = DEFAULT_FLOOR

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        floor = self.probability_floor
        if not 0.0 < floor < 1.0:
            raise ModelError("probability_floor must lie in (0, 1)")
        if self.smoothing < 0:
            raise ModelError("smoothing must be >= 0")
        if set(self.tables) != set(self.panel.snps):
            raise ModelError("tables must cover exactly the panel SNPs")

        def check(dist, size, where):
            if len(dist) != size:
                raise ModelError(f"{where}: expected {size} entries")
            if abs(float(np.sum(dist)) - 1.0) > 1e-9:
                raise ModelError(f"{where}: distribution sums to {np.sum(dist)!r}")
            if np.min(dist) < floor * (1 - 1e-12) or np.max(dist) > 1.0:
                raise ModelError(f"{where}: entry outside [floor, 1]")

        for pheno in PHENOTYPES:
            size = len(self.panel.variant_sets[pheno])
            check(self.priors[pheno], size, f"prior {pheno}")
            for rsid in self.panel.entries[pheno]:
                for call, dist in self.tables[rsid].items():
                    check(dist, size, f"table {rsid}/{call}")

    def log_variant_scores(self, phenotype: str, y: GenotypeRecord,
                           normalize: bool = False) -> np.ndarray:
        """log P(v | y) for every variant of ``phenotype``, in variant-set order."""
        variants = self.panel.variant_sets.get(phenotype)
        if variants is None:
            raise KeyError(f"unknown phenotype {phenotype!r}")
        if phenotype == "sex":
            hit = variants.index("M") if y.has_y_calls else variants.index("F")
            out = np.full(len(variants), math.log(self.probability_floor))
            out[hit] = math.log1p(-self.probability_floor)
        else:
            log_prior = np.log(self.priors[phenotype])
            out = np.zeros(len(variants))
            for rsid in self.panel.entries[phenotype]:
                dist = self.tables[rsid].get(y.call(rsid))
                out += log_prior if dist is None else np.log(dist)
        if normalize:
            out = out - np.logaddexp.reduce(out)
        return out

    def to_json(self) -> str:
        body = {
            "panel": json.loads(self.panel.to_json()),
            "smoothing": self.smoothing,
            "probability_floor": self.probability_floor,
            "priors": {p: self.priors[p].tolist() for p in PHENOTYPES},
            "tables": {
                rsid: {call: dist.tolist() for call, dist in sorted(calls.items())}
                for rsid, calls in sorted(self.tables.items())
            },
        }
        return json.dumps(body, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ConditionalModel":
        raw = json.loads(text)
        try:
            panel = SnpPanel.from_json(json.dumps(raw["panel"]))
            return cls(
                panel=panel,
                tables={
                    rsid: {call: np.asarray(d, dtype=float) for call, d in calls.items()}
                    for rsid, calls in raw["tables"].items()
                },
                priors={p: np.asarray(raw["priors"][p], dtype=float) for p in PHENOTYPES},
                smoothing=float(raw["smoothing"]),
                probability_floor=float(raw["probability_floor"]),
            )
        except KeyError as exc:
            raise ModelError(f"model JSON missing field {exc}") from None


def fit_conditional_tables(
    genotypes: Sequence[GenotypeRecord],
    labels: Sequence[PhenotypeProfile],
    panel: SnpPanel,
    smoothing: float = 1.0,
    probability_floor: float = DEFAULT_FLOOR,
) -> ConditionalModel:
    """Count-based tables with add-``smoothing`` pseudocounts, floored and renormalized."""
    if smoothing < 0:
        raise ModelError("smoothing must be >= 0")
    by_id = {g.individual_id: g for g in genotypes}
    if not labels:
        raise ModelError("cannot fit a model on zero individuals")
    for prof in labels:
        if prof.individual_id not in by_id:
            raise ModelError(f"label {prof.individual_id} has no genotype record")
    if len(labels) < 2:
        raise ModelError("at least 2 labeled individuals are required")

    n = len(labels)
    priors = {}
    tables: dict[str, dict[str, np.ndarray]] = {}
    for pheno in PHENOTYPES:
        variants = panel.variant_sets[pheno]
        k = len(variants)
        counts = Counter(prof.variants[pheno] for prof in labels)
        raw = np.array([counts[v] + smoothing for v in variants], dtype=float)
        priors[pheno] = floor_distribution(raw / (n + smoothing * k), probability_floor)
        for rsid in panel.entries[pheno]:
            per_call: dict[str, np.ndarray] = defaultdict(lambda: np.zeros(k))
            for prof in labels:
                call = by_id[prof.individual_id].call(rsid)
                if call == MISSING:
                    continue
                per_call[call][variants.index(prof.variants[pheno])] += 1
            tables[rsid] = {}
            for call in sorted(per_call):
                c = per_call[call]
                dist = (c + smoothing) / (c.sum() + smoothing * k)
                tables[rsid][call] = floor_distribution(dist, probability_floor)
    return ConditionalModel(panel, tables, priors, smoothing, probability_floor)


def variant_given_genome(model: ConditionalModel, phenotype: str, variant: str,
                         y: GenotypeRecord) -> float:
    """Unnormalized product of per-SNP conditionals; missing or unseen calls use the prior."""
    idx = model.panel.variant_index(phenotype, variant)
    return float(math.exp(model.log_variant_scores(phenotype, y)[idx]))
