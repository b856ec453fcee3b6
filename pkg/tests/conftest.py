import numpy as np
import pytest

from genoface.classifier import TrainConfig
from genoface.panel import MISSING, GenotypeRecord, PhenotypeProfile, SnpPanel
from genoface.pipeline import WorldConfig, build_world, train_classifiers


@pytest.fixture(scope="session")
def panel():
    return SnpPanel.default()


def five_individuals(panel, seed=3):
    """Small labeled fixture with a few missing calls, used by several oracle tests."""
    rng = np.random.default_rng(seed)
    alleles = ["AA", "AG", "GG"]
    genomes, profiles = [], []
    for i in range(5):
        calls = {}
        for rsid in panel.snps:
            calls[rsid] = MISSING if rng.random() < 0.15 else alleles[rng.integers(3)]
        male = bool(i % 2)
        genomes.append(GenotypeRecord(f"y{i}", calls, male))
        variants = {p: panel.variant_sets[p][rng.integers(len(panel.variant_sets[p]))]
                    for p in ("hair", "eye", "skin")}
        variants["sex"] = "M" if male else "F"
        profiles.append(PhenotypeProfile(f"y{i}", variants))
    return genomes, profiles


@pytest.fixture(scope="session")
def world():
    return build_world(WorldConfig())


@pytest.fixture(scope="session")
def classifiers(world):
    return train_classifiers(world.panel, world.train_profiles, world.train_features,
                             TrainConfig(), world.layout)


CRITERIA: dict[int, str] = {}


@pytest.fixture()
def criterion():
    """Record one summary line per acceptance criterion; printed at the end of the session."""

    def record(number: int, passed: bool, detail: str) -> bool:
        CRITERIA[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[number])
