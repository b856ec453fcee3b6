import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from genoface.matcher import (
    EvalConfig, MatchError, ScoreMatrix, oracle_substitute, population_sweep, rank_genomes,
    roc_threshold, roc_topk, score_matrix, score_pair, sweep_scores, topk_success, true_ranks,
)
from genoface.model import fit_conditional_tables
from genoface.panel import MISSING, GenotypeRecord, PhenotypeProfile

from conftest import five_individuals


def oracle_likelihood(z, y, model):
    """Independent product in probability space: sex rule times per-SNP lookups."""
    panel = model.panel
    floor = model.probability_floor
    total = 1.0
    for pheno in ("sex", "hair", "eye", "skin"):
        if pheno == "sex":
            truth = "M" if y.has_y_calls else "F"
            total *= (1 - floor) if z.variants["sex"] == truth else floor
            continue
        v = panel.variant_sets[pheno].index(z.variants[pheno])
        for rsid in panel.entries[pheno]:
            call = y.calls[rsid]
            if call != MISSING and call in model.tables[rsid]:
                total *= model.tables[rsid][call][v]
            else:
                total *= model.priors[pheno][v]
    return total


@pytest.fixture()
def fixture5(panel):
    genomes, profiles = five_individuals(panel)
    return genomes, profiles, fit_conditional_tables(genomes, profiles, panel)


def test_score_pair_matches_oracle(fixture5):
    genomes, profiles, model = fixture5
    for z in profiles:
        for y in genomes:
            assert abs(score_pair(z, y, model) - math.log(oracle_likelihood(z, y, model))) < 1e-9


def test_rank_matches_oracle_argsort(fixture5):
    genomes, profiles, model = fixture5
    for z in profiles:
        probs = [oracle_likelihood(z, y, model) for y in genomes]
        expected = sorted(range(5), key=lambda j: (-probs[j], genomes[j].individual_id))
        assert [g for g, _ in rank_genomes(z, genomes, model)] == [genomes[j].individual_id for j in expected]


def test_topk_matches_oracle_count(fixture5):
    genomes, profiles, model = fixture5
    pairing = {z.individual_id: z.individual_id for z in profiles}
    hits = 0
    for z in profiles:
        probs = {y.individual_id: oracle_likelihood(z, y, model) for y in genomes}
        best = min(probs, key=lambda g: (-probs[g], g))
        hits += best == z.individual_id
    assert topk_success(profiles, genomes, pairing, model, 1) == hits / 5
    assert topk_success(profiles, genomes, pairing, model, 5) == 1.0


def test_all_missing_score(panel, fixture5):
    genomes, profiles, model = fixture5
    y = GenotypeRecord("blank", {r: MISSING for r in panel.snps}, False)
    z = profiles[0]
    expected = sum(len(panel.entries[p]) * math.log(model.priors[p][panel.variant_sets[p].index(z[p])])
                   for p in ("hair", "eye", "skin"))
    expected += math.log(1 - 1e-6) if z["sex"] == "F" else math.log(1e-6)
    assert score_pair(z, y, model) == pytest.approx(expected, abs=1e-9)


def test_score_monotone_in_one_factor(fixture5):
    genomes, profiles, model = fixture5
    z, y = profiles[0], genomes[0]
    rsid = next(r for r in model.panel.entries["eye"] if y.calls[r] != MISSING)
    v = model.panel.variant_index("eye", z["eye"])
    tables = {r: {c: d.copy() for c, d in t.items()} for r, t in model.tables.items()}
    dist = tables[rsid][y.calls[rsid]]
    dist[v] *= 1.5
    dist[:] = dist / dist.sum()  # keep it a distribution; entry v still rises
    bumped = type(model)(model.panel, tables, model.priors, model.smoothing, model.probability_floor)
    assert score_pair(z, y, bumped) > score_pair(z, y, model)


def test_population_of_one_and_tie_break(panel, fixture5):
    genomes, profiles, model = fixture5
    assert rank_genomes(profiles[0], genomes[:1], model)[0][0] == genomes[0].individual_id
    twin_b = GenotypeRecord("b", dict(genomes[0].calls), genomes[0].has_y_calls)
    twin_a = GenotypeRecord("a", dict(genomes[0].calls), genomes[0].has_y_calls)
    assert [g for g, _ in rank_genomes(profiles[0], [twin_b, twin_a], model)] == ["a", "b"]


def test_ties_in_true_ranks():
    sm = ScoreMatrix(["p1", "p2"], ["a", "b"], np.zeros((2, 2)))
    ranks = true_ranks(sm, {"p1": "a", "p2": "b"})
    assert ranks.tolist() == [1, 2]


def test_score_matrix_rejects_nonfinite():
    with pytest.raises(MatchError):
        ScoreMatrix(["p"], ["a"], np.array([[np.nan]]))


def _random_sm(rng, n, ties=False):
    scores = rng.integers(0, 4, size=(n, n)).astype(float) if ties else rng.normal(size=(n, n))
    ids = [f"g{j:02d}" for j in range(n)]
    return ScoreMatrix([f"p{i}" for i in range(n)], ids, scores), {f"p{i}": ids[i] for i in range(n)}


def test_topk_nondecreasing_in_k():
    rng = np.random.default_rng(0)
    sm, pairing = _random_sm(rng, 30)
    rows = sweep_scores(sm, pairing, EvalConfig(population_sizes=(10, 20), ks=(1, 2, 5, 10), trials=30))
    for n in (10, 20):
        means = [r.mean for r in rows if r.population_size == n]
        assert means == sorted(means)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.booleans())
def test_argsort_invariance(seed, ties):
    rng = np.random.default_rng(seed)
    sm, pairing = _random_sm(rng, 12, ties)
    warped = ScoreMatrix(sm.probe_ids, sm.genome_ids, np.exp(sm.scores / 3) * 7 - 2)
    assert np.array_equal(true_ranks(sm, pairing), true_ranks(warped, pairing))
    cfg = EvalConfig(population_sizes=(5, 12), trials=20, seed=seed)
    assert sweep_scores(sm, pairing, cfg) == sweep_scores(warped, pairing, cfg)
    a, b = roc_topk(sm, pairing), roc_topk(warped, pairing)
    assert np.array_equal(a.fpr, b.fpr) and np.array_equal(a.tpr, b.tpr)


def test_full_population_is_deterministic_topk(fixture5):
    genomes, profiles, model = fixture5
    pairing = {z.individual_id: z.individual_id for z in profiles}
    rows = population_sweep(profiles, genomes, pairing, model,
                            EvalConfig(population_sizes=(5,), ks=(1, 2)))
    for r in rows:
        assert r.count == 5
        assert r.mean == topk_success(profiles, genomes, pairing, model, r.k)


def test_sweep_independent_of_workers():
    rng = np.random.default_rng(1)
    sm, pairing = _random_sm(rng, 40)
    base = EvalConfig(population_sizes=(10, 25), trials=50, seed=9)
    par = EvalConfig(population_sizes=(10, 25), trials=50, seed=9, workers=4)
    assert sweep_scores(sm, pairing, base) == sweep_scores(sm, pairing, par)


@pytest.mark.parametrize("n,k", [(10, 1), (50, 1), (100, 5)])
def test_random_mode_near_baseline(n, k):
    rng = np.random.default_rng(2)
    sm, pairing = _random_sm(rng, 100)
    (row,) = sweep_scores(sm, pairing, EvalConfig(population_sizes=(n,), k=k, trials=100),
                          random_mode=True)
    assert abs(row.mean - k / n) <= 3 * math.sqrt((k / n) * (1 - k / n) / row.count)


def test_sweep_size_errors():
    rng = np.random.default_rng(0)
    sm, pairing = _random_sm(rng, 5)
    with pytest.raises(MatchError):
        sweep_scores(sm, pairing, EvalConfig(population_sizes=(6,)))
    with pytest.raises(MatchError):
        sweep_scores(sm, pairing, EvalConfig(population_sizes=(1,)))
    with pytest.raises(MatchError):
        EvalConfig(k=0)


def test_roc_perfect_and_endpoints():
    n = 6
    ids = [f"g{j}" for j in range(n)]
    sm = ScoreMatrix([f"p{i}" for i in range(n)], ids, -np.abs(np.subtract.outer(np.arange(n), np.arange(n))).astype(float))
    pairing = {f"p{i}": ids[i] for i in range(n)}
    top = roc_topk(sm, pairing)
    assert top.auc == pytest.approx(1.0)
    assert (top.fpr[-1], top.tpr[-1]) == (1.0, 1.0)
    thr = roc_threshold(sm, pairing)
    assert thr.auc == pytest.approx(1.0)
    assert (thr.fpr[0], thr.tpr[0]) == (0.0, 0.0) and thr.thresholds[0] == np.inf
    assert (thr.fpr[-1], thr.tpr[-1]) == (1.0, 1.0) and thr.thresholds[-1] == -np.inf


def test_roc_constant_scores_diagonal():
    sm = ScoreMatrix(["p0", "p1", "p2"], ["a", "b", "c"], np.ones((3, 3)))
    roc = roc_threshold(sm, {"p0": "a", "p1": "b", "p2": "c"})
    assert roc.auc == pytest.approx(0.5)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_roc_curves_monotone(seed):
    sm, pairing = _random_sm(np.random.default_rng(seed), 9, ties=seed % 2 == 0)
    for roc in (roc_topk(sm, pairing), roc_threshold(sm, pairing)):
        assert np.all(np.diff(roc.fpr) >= 0) and np.all(np.diff(roc.tpr) >= 0)
        assert 0.0 <= roc.auc <= 1.0


def test_oracle_substitute(panel):
    pred = PhenotypeProfile("i", {"sex": "F", "hair": "black", "eye": "blue", "skin": "pale"})
    truth = PhenotypeProfile("i", {"sex": "M", "hair": "brown", "eye": "brown", "skin": "dark"})
    assert oracle_substitute(pred, truth, []) == pred
    assert oracle_substitute(pred, truth, ["sex", "hair", "eye", "skin"]).variants == truth.variants
    assert oracle_substitute(pred, truth, ["eye"]).variants == {**pred.variants, "eye": "brown"}
    with pytest.raises(MatchError):
        oracle_substitute(pred, truth, ["height"])


def test_score_matrix_agrees_with_score_pair(fixture5):
    genomes, profiles, model = fixture5
    sm = score_matrix(profiles, genomes, model)
    for i, z in enumerate(profiles):
        for j, y in enumerate(genomes):
            assert sm.scores[i, j] == pytest.approx(score_pair(z, y, model), abs=1e-12)
