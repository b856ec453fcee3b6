"""Synthetic genotype pools, paired datasets and surrogate face feature vectors."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .model import ConditionalModel
from .panel import (
    MISSING, PHENOTYPES, GenotypeRecord, PhenotypeProfile, SnpPanel, dump_genotype_table,
    dump_phenotype_labels, load_genotype_table, load_phenotype_labels,
)

MATCH_KEYS = ("hair", "eye", "skin")
DEFAULT_DIMS = {p: 8 for p in PHENOTYPES}
DEFAULT_SIGMAS = {"sex": 0.04, "hair": 0.45, "eye": 0.80, "skin": 0.45}
# high/low centre coordinates sit at 0.5 +/- contrast / 2; 0.8 spans [0.1, 0.9]
DEFAULT_CONTRAST = {"sex": 0.1, "hair": 0.8, "eye": 0.5, "skin": 0.8}


class SynthError(ValueError):
    pass


PoolMember = tuple[GenotypeRecord, PhenotypeProfile]


@dataclass(frozen=True)
class GeneticSimulation:
    """Additive allele-dosage model mapping panel genotypes to phenotype variants."""

    effect_scale: Mapping[str, float] = field(
        default_factory=lambda: {"hair": 1.2, "eye": 1.0, "skin": 1.2})
    missing_rate: float = 0.02
    male_fraction: float = 0.5


def simulate_pool(n: int, panel: SnpPanel, seed: int,
                  sim: GeneticSimulation = GeneticSimulation()) -> list[PoolMember]:
    """Draw a labeled reference population (the role OpenSNP plays for the attacker)."""
    if n < 1:
        raise SynthError("pool size must be positive")
    rng = np.random.default_rng([seed, 11])
    snps = panel.snps
    alleles = []
    for _ in snps:
        a, b = sorted(str(c) for c in rng.choice(list("ACGT"), size=2, replace=False))
        alleles.append((a, b))
    freq = rng.uniform(0.15, 0.85, size=len(snps))
    dosage = rng.binomial(2, freq, size=(n, len(snps)))
    missing = rng.random((n, len(snps))) < sim.missing_rate
    col = {rsid: j for j, rsid in enumerate(snps)}

    labels: dict[str, np.ndarray] = {}
    for pheno in PHENOTYPES:
        k = len(panel.variant_sets[pheno])
        if pheno == "sex":
            labels[pheno] = (rng.random(n) < sim.male_fraction).astype(int)
            continue
        cols = [col[r] for r in panel.entries[pheno]]
        beta = rng.normal(0.0, sim.effect_scale.get(pheno, 1.0), size=(len(cols), k))
        beta -= beta.mean(axis=1, keepdims=True)
        centered = dosage[:, cols] - 2 * freq[cols]
        logits = centered @ beta + rng.normal(0.0, 0.3, size=k)
        probs = np.exp(logits - logits.max(axis=1, keepdims=True))
        probs /= probs.sum(axis=1, keepdims=True)
        u = rng.random((n, 1))
        labels[pheno] = np.minimum((probs.cumsum(axis=1) < u).sum(axis=1), k - 1)

    pool = []
    width = len(str(n))
    for i in range(n):
        ident = f"ref{i:0{width}d}"
        calls = {}
        for j, rsid in enumerate(snps):
            a, b = alleles[j]
            calls[rsid] = MISSING if missing[i, j] else a * int(2 - dosage[i, j]) + b * int(dosage[i, j])
        variants = {p: panel.variant_sets[p][labels[p][i]] for p in PHENOTYPES}
        sex_m = variants["sex"] == "M"
        pool.append((GenotypeRecord(ident, calls, sex_m), PhenotypeProfile(ident, variants)))
    return pool


def sample_profiles(pool: Sequence[PoolMember], n: int, seed: int,
                    prefix: str = "img") -> list[PhenotypeProfile]:
    """Labels for ``n`` surrogate images: hair/eye/skin combos drawn from the pool, sex 50/50."""
    rng = np.random.default_rng([seed, 12])
    picks = rng.integers(0, len(pool), size=n)
    sexes = rng.random(n) < 0.5
    width = len(str(n))
    out = []
    for i, (j, male) in enumerate(zip(picks, sexes)):
        variants = {p: pool[j][1].variants[p] for p in MATCH_KEYS}
        variants["sex"] = "M" if male else "F"
        out.append(PhenotypeProfile(f"{prefix}{i:0{width}d}", variants))
    return out


@dataclass(frozen=True)
class PairedDataset:
    profiles: list[PhenotypeProfile]
    genotypes: list[GenotypeRecord]
    pool_ids: list[str]
    provenance: str
    seed: int | None = None
    features: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [p.individual_id for p in self.profiles]
        if len(set(ids)) != len(ids):
            raise SynthError("dataset ids must be unique")
        if len(self.genotypes) != len(ids) or len(self.pool_ids) != len(ids):
            raise SynthError("profiles, genotypes and pool ids must align")
        if self.provenance not in ("ideal", "realistic", "ingested"):
            raise SynthError(f"unknown provenance {self.provenance!r}")
        if self.features is not None and self.features.shape[0] != len(ids):
            raise SynthError("one feature vector per individual is required")

    @property
    def ids(self) -> list[str]:
        return [p.individual_id for p in self.profiles]

    @property
    def true_pairing(self) -> dict[str, str]:
        return {p.individual_id: g.individual_id for p, g in zip(self.profiles, self.genotypes)}

    def with_features(self, features: np.ndarray, **meta) -> "PairedDataset":
        return PairedDataset(self.profiles, self.genotypes, self.pool_ids, self.provenance,
                             self.seed, np.asarray(features, dtype=float), {**self.meta, **meta})

    def subset(self, idx: Sequence[int]) -> "PairedDataset":
        idx = list(idx)
        feats = None if self.features is None else self.features[idx]
        return PairedDataset([self.profiles[i] for i in idx], [self.genotypes[i] for i in idx],
                             [self.pool_ids[i] for i in idx], self.provenance, self.seed,
                             feats, dict(self.meta))


def _candidates(profile: PhenotypeProfile, pool: Sequence[PoolMember]) -> list[int]:
    key = tuple(profile.variants[p] for p in MATCH_KEYS)
    found = [j for j, (_, lab) in enumerate(pool) if tuple(lab.variants[p] for p in MATCH_KEYS) == key]
    if not found:
        raise SynthError(f"no pool genotype shares the hair/eye/skin variants of {profile.individual_id}")
    return found


def _paired(profile: PhenotypeProfile, member: PoolMember) -> GenotypeRecord:
    # sex is not matched against the pool; the profile's sex drives the Y rule
    return member[0].with_sex(profile.variants["sex"], individual_id=f"g_{profile.individual_id}")


def pair_ideal(profiles: Sequence[PhenotypeProfile], pool: Sequence[PoolMember],
               model: ConditionalModel) -> PairedDataset:
    """Pair each profile with the matching pool genotype most likely to show its variants."""
    if not pool:
        raise SynthError("pool is empty")
    log_tables = {}
    for pheno in MATCH_KEYS:
        log_tables[pheno] = np.array([model.log_variant_scores(pheno, g) for g, _ in pool])
    genotypes, pool_ids = [], []
    for prof in profiles:
        cand = _candidates(prof, pool)
        total = np.zeros(len(cand))
        for pheno in MATCH_KEYS:
            v = model.panel.variant_index(pheno, prof.variants[pheno])
            total += log_tables[pheno][cand, v]
        best = cand[int(np.argmax(total))]
        genotypes.append(_paired(prof, pool[best]))
        pool_ids.append(pool[best][0].individual_id)
    return PairedDataset(list(profiles), genotypes, pool_ids, "ideal")


def pair_realistic(profiles: Sequence[PhenotypeProfile], pool: Sequence[PoolMember],
                   seed: int) -> PairedDataset:
    """Pair each profile with a uniformly drawn pool genotype sharing its hair/eye/skin."""
    if not pool:
        raise SynthError("pool is empty")
    rng = np.random.default_rng([seed, 13])
    genotypes, pool_ids = [], []
    for prof in profiles:
        cand = _candidates(prof, pool)
        pick = cand[int(rng.integers(len(cand)))]
        genotypes.append(_paired(prof, pool[pick]))
        pool_ids.append(pool[pick][0].individual_id)
    return PairedDataset(list(profiles), genotypes, pool_ids, "realistic", seed)


@dataclass(frozen=True)
class FeatureLayout:
    panel: SnpPanel
    dims: Mapping[str, int] = field(default_factory=lambda: dict(DEFAULT_DIMS))
    contrast: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_CONTRAST))

    def __post_init__(self):
        if any(self.dims.get(p, 0) < 1 for p in PHENOTYPES):
            raise SynthError("every phenotype needs a block dimension >= 1")
        if any(not 0 < self.contrast.get(p, 0) <= 0.8 for p in PHENOTYPES):
            raise SynthError("contrast must lie in (0, 0.8] so centres stay in [0.1, 0.9]")

    @property
    def size(self) -> int:
        return sum(self.dims[p] for p in PHENOTYPES)

    def block(self, phenotype: str) -> slice:
        start = 0
        for p in PHENOTYPES:
            if p == phenotype:
                return slice(start, start + self.dims[p])
            start += self.dims[p]
        raise KeyError(phenotype)

    def mask(self, phenotype: str) -> np.ndarray:
        m = np.zeros(self.size)
        m[self.block(phenotype)] = 1.0
        return m

    def center(self, phenotype: str, variant_idx: int) -> np.ndarray:
        """Corner-like centre: coordinate j is high iff j = variant (mod #variants)."""
        k = len(self.panel.variant_sets[phenotype])
        j = np.arange(self.dims[phenotype])
        half = self.contrast[phenotype] / 2
        return np.where(j % k == variant_idx, 0.5 + half, 0.5 - half)


def generate_features(profiles: Sequence[PhenotypeProfile], layout: FeatureLayout,
                      sigmas: Mapping[str, float], seed: int) -> np.ndarray:
    """Block-wise variant centre plus Gaussian noise, clipped into [0, 1]."""
    for p in PHENOTYPES:
        if sigmas[p] < 0:
            raise SynthError(f"noise for {p} must be >= 0")
    out = np.empty((len(profiles), layout.size))
    for pheno in PHENOTYPES:
        sl = layout.block(pheno)
        rng = np.random.default_rng([seed, 14, PHENOTYPES.index(pheno)])
        centers = np.array([
            layout.center(pheno, layout.panel.variant_index(pheno, z.variants[pheno]))
            for z in profiles
        ]).reshape(len(profiles), -1)
        noise = rng.normal(0.0, 1.0, size=centers.shape) * sigmas[pheno]
        out[:, sl] = centers + noise
    return np.clip(out, 0.0, 1.0)


def labels_for(profiles: Sequence[PhenotypeProfile], panel: SnpPanel, phenotype: str) -> np.ndarray:
    return np.array([panel.variant_index(phenotype, z.variants[phenotype]) for z in profiles])


# ---- on-disk format -------------------------------------------------------------------

def dump_features(ids: Sequence[str], features: np.ndarray) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["id", *(f"f{j}" for j in range(features.shape[1]))])
    for ident, row in zip(ids, features):
        writer.writerow([ident, *(repr(float(v)) for v in row)])
    return out.getvalue()


def load_features(text: str) -> tuple[list[str], np.ndarray]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][:1] != ["id"]:
        raise SynthError("features CSV must start with an id column")
    ids = [r[0] for r in rows[1:] if r]
    values = np.array([[float(v) for v in r[1:]] for r in rows[1:] if r]).reshape(len(ids), -1)
    return ids, values


def save_dataset(ds: PairedDataset, path: Path, panel: SnpPanel, manifest: Mapping) -> None:
    path.mkdir(parents=True, exist_ok=True)
    (path / "genotypes.tsv").write_text(dump_genotype_table(ds.genotypes, panel))
    (path / "phenotypes.csv").write_text(dump_phenotype_labels(ds.profiles))
    (path / "pairs.csv").write_text(
        "id,genome_id,pool_id\n"
        + "".join(f"{p.individual_id},{g.individual_id},{s}\n"
                  for p, g, s in zip(ds.profiles, ds.genotypes, ds.pool_ids)))
    if ds.features is not None:
        (path / "features.csv").write_text(dump_features(ds.ids, ds.features))
    body = {"provenance": ds.provenance, "seed": ds.seed, **ds.meta, **manifest}
    (path / "manifest.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")


def load_dataset(path: Path, panel: SnpPanel) -> PairedDataset:
    profiles = load_phenotype_labels((path / "phenotypes.csv").read_text(), panel)
    genomes = {g.individual_id: g for g in
               load_genotype_table((path / "genotypes.tsv").read_text(), panel)}
    pairs = list(csv.DictReader(io.StringIO((path / "pairs.csv").read_text())))
    by_id = {r["id"]: r for r in pairs}
    manifest = json.loads((path / "manifest.json").read_text())
    try:
        genotypes = [genomes[by_id[p.individual_id]["genome_id"]] for p in profiles]
        pool_ids = [by_id[p.individual_id]["pool_id"] for p in profiles]
    except KeyError as exc:
        raise SynthError(f"dataset is missing the pairing for {exc}") from None
    ds = PairedDataset(profiles, genotypes, pool_ids, manifest.get("provenance", "ingested"),
                       manifest.get("seed"))
    feat_path = path / "features.csv"
    if feat_path.exists():
        ids, feats = load_features(feat_path.read_text())
        if ids != ds.ids:
            raise SynthError("features.csv ids do not match phenotypes.csv")
        ds = ds.with_features(feats)
    return ds
