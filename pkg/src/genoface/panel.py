"""SNP panel, genotype records and phenotype profiles, plus their text formats."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping

PHENOTYPES = ("sex", "hair", "eye", "skin")
MISSING = "--"
VALID_ALLELES = frozenset("ACGT")
# Characters seen in consumer exports that are not substitutions; read as no-call.
NOCALL_CHARS = frozenset("-ID0")

DEFAULT_SNPS = {
    "sex": [],
    "hair": ["rs12821256", "rs35264875"],
    "eye": [
        "rs916977", "rs1129038", "rs1800401", "rs2238289", "rs2240203", "rs3935591",
        "rs4778241", "rs7183877", "rs8028689", "rs12593929", "rs1800407", "rs7495174",
    ],
    "skin": ["rs26722", "rs1667394", "rs16891982"],
}
DEFAULT_VARIANTS = {
    "sex": ["F", "M"],
    "hair": ["black", "blonde", "brown"],
    "eye": ["blue", "brown", "intermediate"],
    "skin": ["pale", "intermediate", "dark"],
}
# Chromosome of each default panel SNP, used only when writing raw files.
DEFAULT_CHROMOSOMES = {
    "rs12821256": "12", "rs35264875": "11", "rs26722": "5", "rs16891982": "5",
}
Y_MARKER_ID = "ymarker1"


class PanelError(ValueError):
    pass


class GenotypeParseError(ValueError):
    """Malformed raw genotype document."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class GenotypeConflictError(GenotypeParseError):
    pass


class PhenotypeLabelError(ValueError):
    pass


@dataclass(frozen=True)
class SnpPanel:
    entries: dict[str, list[str]]
    variant_sets: dict[str, list[str]]

    def __post_init__(self):
        if set(self.entries) != set(PHENOTYPES) or set(self.variant_sets) != set(PHENOTYPES):
            raise PanelError(f"panel must define exactly the phenotypes {PHENOTYPES}")
        seen: dict[str, str] = {}
        for pheno in PHENOTYPES:
            for rsid in self.entries[pheno]:
                if rsid in seen:
                    raise PanelError(f"{rsid} listed under both {seen[rsid]} and {pheno}")
                seen[rsid] = pheno
            variants = self.variant_sets[pheno]
            if len(variants) < 2 or len(set(variants)) != len(variants):
                raise PanelError(f"variant set for {pheno} must hold >= 2 unique names")
        if self.entries["sex"]:
            raise PanelError("sex is read from Y-chromosome calls and takes no SNPs")
        object.__setattr__(self, "_owner", seen)

    @classmethod
    def default(cls) -> "SnpPanel":
        return cls(
            {p: list(s) for p, s in DEFAULT_SNPS.items()},
            {p: list(v) for p, v in DEFAULT_VARIANTS.items()},
        )

    @classmethod
    def from_json(cls, text: str) -> "SnpPanel":
        raw = json.loads(text)
        try:
            entries = {p: list(raw[p]["snps"]) for p in PHENOTYPES}
            variants = {p: list(raw[p]["variants"]) for p in PHENOTYPES}
        except (KeyError, TypeError) as exc:
            raise PanelError(f"panel JSON missing field: {exc}") from None
        return cls(entries, variants)

    def to_json(self) -> str:
        body = {p: {"snps": self.entries[p], "variants": self.variant_sets[p]} for p in PHENOTYPES}
        return json.dumps(body, indent=2, sort_keys=True)

    @property
    def snps(self) -> list[str]:
        """All panel rsIDs in phenotype order."""
        return [rsid for p in PHENOTYPES for rsid in self.entries[p]]

    def owner(self, rsid: str) -> str | None:
        return self._owner.get(rsid)

    def variant_index(self, phenotype: str, variant: str) -> int:
        try:
            return self.variant_sets[phenotype].index(variant)
        except (KeyError, ValueError):
            raise KeyError(f"unknown variant {variant!r} for {phenotype!r}") from None

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


@dataclass(frozen=True)
class GenotypeRecord:
    """Calls for every panel SNP; a call is a sorted allele pair like ``"AG"`` or ``"--"``."""

    individual_id: str
    calls: Mapping[str, str]
    has_y_calls: bool = False

    def call(self, rsid: str) -> str:
        return self.calls.get(rsid, MISSING)

    def with_sex(self, sex: str, individual_id: str | None = None) -> "GenotypeRecord":
        return GenotypeRecord(individual_id or self.individual_id, dict(self.calls), sex == "M")


@dataclass(frozen=True)
class PhenotypeProfile:
    individual_id: str
    variants: Mapping[str, str] = field(default_factory=dict)

    def __getitem__(self, phenotype: str) -> str:
        return self.variants[phenotype]


def normalize_call(genotype: str) -> str | None:
    """Return the sorted allele pair, ``MISSING``, or None if the token is invalid."""
    token = genotype.strip().upper()
    if not token or any(c not in VALID_ALLELES and c not in NOCALL_CHARS for c in token):
        return None
    if len(token) == 2 and all(c in VALID_ALLELES for c in token):
        return "".join(sorted(token))
    if len(token) > 2:
        return None
    # haploid calls and indel/no-call tokens carry no diploid substitution call
    return MISSING


def parse_raw_genotype(text: str, panel: SnpPanel, individual_id: str = "") -> GenotypeRecord:
    """Parse a 23andMe-style raw data document, keeping only panel SNPs."""
    if not text.strip():
        raise GenotypeParseError("empty genotype document")
    calls: dict[str, str] = {}
    has_y = False
    n_data = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.rstrip("\r")
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 4:
            raise GenotypeParseError(f"expected 4 tab-separated columns, got {len(cols)}", lineno)
        rsid, chrom, _pos, genotype = (c.strip() for c in cols)
        call = normalize_call(genotype)
        if call is None:
            raise GenotypeParseError(f"invalid genotype {genotype!r} for {rsid}", lineno)
        n_data += 1
        if chrom.upper() == "Y" and any(c in VALID_ALLELES for c in genotype.upper()):
            has_y = True
        if panel.owner(rsid) is None:
            continue
        if rsid in calls and calls[rsid] != call:
            raise GenotypeConflictError(
                f"conflicting calls for {rsid}: {calls[rsid]} vs {call}", lineno
            )
        calls[rsid] = call
    if n_data == 0:
        raise GenotypeParseError("no data lines in genotype document")
    full = {rsid: calls.get(rsid, MISSING) for rsid in panel.snps}
    return GenotypeRecord(individual_id, full, has_y)


def serialize_raw_genotype(record: GenotypeRecord, panel: SnpPanel) -> str:
    """Write a record back out in the raw format; positions are not tracked and written as 0."""
    lines = ["# rsid\tchromosome\tposition\tgenotype"]
    for rsid in panel.snps:
        chrom = DEFAULT_CHROMOSOMES.get(rsid, "15")
        lines.append(f"{rsid}\t{chrom}\t0\t{record.call(rsid)}")
    lines.append(f"{Y_MARKER_ID}\tY\t0\t{'G' if record.has_y_calls else MISSING}")
    return "\n".join(lines) + "\n"


def load_phenotype_labels(text: str, panel: SnpPanel) -> list[PhenotypeProfile]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    expected = ["id", *PHENOTYPES]
    if header is None or [h.strip().lower() for h in header] != expected:
        raise PhenotypeLabelError(f"phenotype CSV header must be {','.join(expected)}")
    lookup = {p: {v.lower(): v for v in panel.variant_sets[p]} for p in PHENOTYPES}
    profiles: list[PhenotypeProfile] = []
    seen: set[str] = set()
    for rowno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(expected):
            raise PhenotypeLabelError(f"row {rowno}: expected {len(expected)} fields")
        ident = row[0].strip()
        if ident in seen:
            raise PhenotypeLabelError(f"row {rowno}: duplicate id {ident}")
        seen.add(ident)
        variants = {}
        for pheno, value in zip(PHENOTYPES, row[1:]):
            canon = lookup[pheno].get(value.strip().lower())
            if canon is None:
                raise PhenotypeLabelError(
                    f"row {rowno}: unknown variant {value.strip()} for {pheno}"
                )
            variants[pheno] = canon
        profiles.append(PhenotypeProfile(ident, variants))
    return profiles


def dump_phenotype_labels(profiles: Iterable[PhenotypeProfile]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["id", *PHENOTYPES])
    for prof in profiles:
        writer.writerow([prof.individual_id, *(prof.variants[p] for p in PHENOTYPES)])
    return out.getvalue()


def dump_genotype_table(records: Iterable[GenotypeRecord], panel: SnpPanel) -> str:
    """Long-format TSV: an id column followed by the four raw-format columns."""
    lines = ["individual_id\trsid\tchromosome\tposition\tgenotype"]
    for rec in records:
        for raw in serialize_raw_genotype(rec, panel).splitlines()[1:]:
            lines.append(f"{rec.individual_id}\t{raw}")
    return "\n".join(lines) + "\n"


def load_genotype_table(text: str, panel: SnpPanel) -> list[GenotypeRecord]:
    groups: dict[str, list[str]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if lineno == 1 or not line.strip():
            continue
        ident, _, rest = line.partition("\t")
        if not rest:
            raise GenotypeParseError("missing raw-genotype columns", lineno)
        groups.setdefault(ident, []).append(rest)
    return [parse_raw_genotype("\n".join(rows), panel, ident) for ident, rows in groups.items()]
