"""Command-line driver: every command is a pure function of (inputs, config, seed).

Outputs are written under ``--out-dir`` together with ``manifest.json``. CSV rows carry
the manifest id so a row can always be traced back to the run that produced it. The
wall-clock duration lives in ``timing.txt`` so that JSON and CSV outputs stay
byte-identical across reruns.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import sys
import time
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from . import __version__
from .adversary import (
    AttackConfig, AttackError, adversarial_train, attacked_accuracy, genome_log_weights, pgd_batch,
    universal_batch,
)
from .classifier import (
    ClassifierError, TrainConfig, accuracy, dump_classifiers, load_classifiers,
)
from .matcher import (
    EvalConfig, MatchError, roc_threshold, roc_topk, score_matrix, sweep_scores, true_ranks,
)
from .model import ConditionalModel, ModelError, fit_conditional_tables
from .panel import (
    PHENOTYPES, GenotypeParseError, PanelError, PhenotypeLabelError, PhenotypeProfile, SnpPanel,
    dump_phenotype_labels, load_phenotype_labels, parse_raw_genotype,
)
from .pipeline import (
    WorldConfig, build_world, calibrate_epsilon, predict_profiles, probes_for, train_classifiers,
)
from .synth import (
    FeatureLayout, PairedDataset, SynthError, dump_features, labels_for, load_dataset,
    load_features, save_dataset,
)

EXIT_OK, EXIT_PARSE, EXIT_DATA, EXIT_CONFIG = 0, 2, 3, 4
DEFAULT_GRID = (0.01, 0.02, 0.03, 0.05, 0.07, 0.1, 0.15, 0.2, 0.3)


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


class InputError(ValueError):
    """An input file could not be read or parsed."""


# ---- configuration --------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class AdvTrainSettings:
    passes: int = 5
    subset_fraction: float = 0.5
    epochs: int = 40

    def __post_init__(self):
        if self.passes < 1:
            raise ValueError("passes must be >= 1")
        if not 0 < self.subset_fraction <= 1:
            raise ValueError("subset_fraction must lie in (0, 1]")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


SECTIONS: dict[str, type] = {
    "world": WorldConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
    "attack": AttackConfig,
    "advtrain": AdvTrainSettings,
}
# fields owned by the global --seed flag or by command-line arguments
RESERVED = {"world": {"seed", "mode"}, "train": {"seed"}, "eval": {"seed"}, "attack": {"seed"}}
DEFAULT_SECTIONS = {"attack": {"epsilon": 0.07}}


def _coerce(cls: type, name: str, value: Any) -> Any:
    if cls is EvalConfig and name in ("population_sizes", "ks"):
        return tuple(int(v) for v in value)
    if cls is EvalConfig and name == "oracle_phenotypes":
        return frozenset(value)
    return value


def build_section(section: str, raw: Mapping[str, Any], seed: int, **extra: Any):
    """Instantiate one config section, naming the first field that makes it invalid."""
    cls = SECTIONS[section]
    known = {f.name for f in dataclasses.fields(cls)}
    for name in raw:
        if name not in known or name in RESERVED.get(section, ()):
            raise ConfigError(f"unknown config field {section}.{name}")
    defaults = DEFAULT_SECTIONS.get(section, {})
    values = {**defaults, **raw, **extra}
    # try each field on its own first so the error can name it
    for name, value in values.items():
        try:
            cls(**{**defaults, name: _coerce(cls, name, value)})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config field {section}.{name}: {exc}") from None
    kwargs = {n: _coerce(cls, n, v) for n, v in values.items()}
    if "seed" in known:
        kwargs["seed"] = seed
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config section {section}: {exc}") from None


def load_config(path: str | None) -> dict[str, dict]:
    if path is None:
        return {}
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc.msg} at line {exc.lineno}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object of sections")
    for section, body in raw.items():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section {section}")
        if not isinstance(body, dict):
            raise ConfigError(f"config section {section} must be an object")
    return raw


def _jsonable(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: _jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (frozenset, set)):
        return sorted(obj)
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# ---- run bookkeeping ------------------------------------------------------------------

def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    if path.is_dir():
        for child in sorted(p for p in path.rglob("*") if p.is_file()):
            if child.name == "timing.txt" or child.suffix == ".svg":
                continue
            h.update(str(child.relative_to(path)).encode())
            h.update(child.read_bytes())
    else:
        h.update(path.read_bytes())
    return h.hexdigest()


class Run:
    """Collects the manifest for one command and writes its outputs."""

    def __init__(self, command: str, args: argparse.Namespace, config: Mapping[str, Any],
                 panel: SnpPanel, inputs: Sequence[Path]):
        self.out = Path(args.out_dir)
        self.manifest: dict[str, Any] = {
            "command": command,
            "config": _jsonable(config),
            "seed": args.seed,
            "arguments": {k: v for k, v in sorted(vars(args).items())
                          if k not in ("func", "out_dir", "config", "seed")},
            "panel_hash": panel.digest(),
            "inputs": {str(p): file_digest(p) for p in inputs},
            "tool_version": __version__,
        }
        blob = json.dumps(self.manifest, sort_keys=True).encode()
        self.manifest_id = hashlib.sha256(blob).hexdigest()[:16]
        self.manifest["manifest_id"] = self.manifest_id
        self.started = time.perf_counter()
        self.out.mkdir(parents=True, exist_ok=True)

    def write_text(self, name: str, text: str) -> Path:
        path = self.out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        return path

    def write_json(self, name: str, obj: Any) -> Path:
        return self.write_text(name, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")

    def write_csv(self, name: str, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> Path:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([*header, "manifest_id"])
        for row in rows:
            writer.writerow([_fmt(v) for v in row] + [self.manifest_id])
        return self.write_text(name, buf.getvalue())

    def finish(self, **results: Any) -> None:
        if results:
            self.manifest["results"] = _jsonable(results)
        self.write_json("manifest.json", self.manifest)
        self.write_text("timing.txt", f"wall_clock_seconds {time.perf_counter() - self.started:.3f}\n")


def _fmt(v: Any) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


# ---- input helpers --------------------------------------------------------------------

def _read(path: Path) -> str:
    try:
        return path.read_text()
    except OSError as exc:
        raise InputError(f"{path}: cannot read ({exc.strerror})") from None


def load_panel(path: str | None) -> SnpPanel:
    if path is None:
        return SnpPanel.default()
    try:
        return SnpPanel.from_json(_read(Path(path)))
    except (PanelError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise InputError(f"{path}: invalid panel ({exc})") from None


def _labels(path: Path, panel: SnpPanel) -> list[PhenotypeProfile]:
    try:
        return load_phenotype_labels(_read(path), panel)
    except PhenotypeLabelError as exc:
        raise InputError(f"{path}: {exc}") from None


def _dataset(path: Path, panel: SnpPanel, features: str | None = None) -> PairedDataset:
    if not path.is_dir():
        raise InputError(f"{path}: dataset directory not found")
    try:
        ds = load_dataset(path, panel)
    except (GenotypeParseError, PhenotypeLabelError) as exc:
        raise InputError(f"{path}: {exc}") from None
    except OSError as exc:
        raise InputError(f"{path}: cannot read ({exc.strerror})") from None
    if features is not None:
        ids, feats = _features(Path(features))
        if ids != ds.ids:
            raise SynthError(f"{features}: feature ids do not match the dataset")
        ds = ds.with_features(feats)
    return ds


def _features(path: Path) -> tuple[list[str], np.ndarray]:
    try:
        return load_features(_read(path))
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


def _model(path: Path) -> ConditionalModel:
    try:
        return ConditionalModel.from_json(_read(path))
    except (ModelError, json.JSONDecodeError, KeyError) as exc:
        raise InputError(f"{path}: invalid model ({exc})") from None


def _classifiers(path: Path):
    try:
        return load_classifiers(_read(path))
    except (ClassifierError, json.JSONDecodeError, KeyError) as exc:
        raise InputError(f"{path}: invalid classifiers ({exc})") from None


def _need_features(ds: PairedDataset, what: str) -> np.ndarray:
    if ds.features is None:
        raise SynthError(f"{what} needs feature vectors; the dataset has none")
    return ds.features


def probes_for_mode(mode: str, ds: PairedDataset, classifiers) -> list[PhenotypeProfile]:
    if mode in ("oracle-all", "random"):
        return list(ds.profiles)
    if classifiers is None:
        raise ConfigError(f"mode {mode} needs --classifiers")
    pred = predict_profiles(classifiers, _need_features(ds, f"mode {mode}"), ds.ids)
    return probes_for("predicted", ds, pred, parse_mode(mode))


def parse_mode(mode: str) -> tuple[str, ...]:
    """predicted | oracle-all | random | oracle:<phenotype>[,<phenotype>...]"""
    if mode in ("predicted", "oracle-all", "random"):
        return ()
    if mode.startswith("oracle:"):
        subset = tuple(p.strip() for p in mode[len("oracle:"):].split(",") if p.strip())
        unknown = [p for p in subset if p not in PHENOTYPES]
        if not subset or unknown:
            raise ConfigError(f"invalid config field mode: unknown phenotypes {unknown or subset}")
        return subset
    raise ConfigError(f"invalid config field mode: {mode!r}")


# ---- commands -------------------------------------------------------------------------

def cmd_ingest(args, cfg, panel) -> None:
    geno_paths: list[Path] = []
    for raw in args.genotypes:
        p = Path(raw)
        geno_paths.extend(sorted(p.glob("*.txt")) if p.is_dir() else [p])
    if not geno_paths:
        raise InputError("no genotype files given")
    pheno_path = Path(args.phenotypes)
    inputs = [*geno_paths, pheno_path] + ([Path(args.pairs)] if args.pairs else [])
    run = Run("ingest", args, {}, panel, inputs)
    genomes = {}
    for path in geno_paths:
        try:
            rec = parse_raw_genotype(_read(path), panel, path.stem)
        except GenotypeParseError as exc:
            where = f"{path}:{exc.line}" if exc.line is not None else str(path)
            raise InputError(f"{where}: {exc.args[0]}") from None
        if rec.individual_id in genomes:
            raise SynthError(f"{path}: duplicate genome id {rec.individual_id}")
        genomes[rec.individual_id] = rec
    profiles = _labels(pheno_path, panel)
    if args.pairs:
        rows = list(csv.DictReader(io.StringIO(_read(Path(args.pairs)))))
        if rows and not {"id", "genome_id"} <= set(rows[0]):
            raise InputError(f"{args.pairs}: header must contain id,genome_id")
        pairing = {r["id"]: r["genome_id"] for r in rows}
    else:
        pairing = {p.individual_id: p.individual_id for p in profiles}
    missing = [p.individual_id for p in profiles if pairing.get(p.individual_id) not in genomes]
    if missing:
        raise SynthError(f"profiles without a genotype file: {', '.join(missing)}")
    genotypes = [genomes[pairing[p.individual_id]] for p in profiles]
    ds = PairedDataset(profiles, genotypes, [g.individual_id for g in genotypes], "ingested")
    if args.features:
        ids, feats = _features(Path(args.features))
        if ids != ds.ids:
            raise SynthError(f"{args.features}: feature ids do not match the phenotype file")
        ds = ds.with_features(feats)
    save_dataset(ds, run.out, panel, {"manifest_id": run.manifest_id})
    run.finish(individuals=len(profiles), genomes=len(genomes))


def cmd_fit(args, cfg, panel) -> None:
    ref = Path(args.reference)
    world = build_section("world", cfg.get("world", {}), args.seed, mode="realistic")
    run = Run("fit", args, {"world": world}, panel, [ref])
    ds = _dataset(ref, panel)
    labels = [PhenotypeProfile(g.individual_id, p.variants) for p, g in zip(ds.profiles, ds.genotypes)]
    model = fit_conditional_tables(ds.genotypes, labels, panel, world.smoothing,
                                   world.probability_floor)
    run.write_text("model.json", model.to_json())
    run.finish(individuals=len(labels))


def cmd_synth(args, cfg, panel) -> None:
    world = build_section("world", cfg.get("world", {}), args.seed, mode=args.mode)
    inputs = [Path(args.profiles)] if args.profiles else []
    run = Run("synth", args, {"world": world}, panel, inputs)
    profiles = _labels(Path(args.profiles), panel) if args.profiles else None
    w = build_world(world, panel, profiles=profiles)
    save_dataset(w.dataset, run.out / "dataset", panel, {"manifest_id": run.manifest_id})
    ref = PairedDataset([p for _, p in w.pool], [g for g, _ in w.pool],
                        [g.individual_id for g, _ in w.pool], "ingested", world.seed)
    save_dataset(ref, run.out / "reference", panel, {"manifest_id": run.manifest_id})
    run.write_text("train/phenotypes.csv", dump_phenotype_labels(w.train_profiles))
    run.write_text("train/features.csv", dump_features([p.individual_id for p in w.train_profiles],
                                                       w.train_features))
    run.write_text("model.json", w.model.to_json())
    run.finish(individuals=len(w.dataset.ids), pool=len(w.pool), train=len(w.train_profiles))


def _train_set(path: Path, panel: SnpPanel):
    profiles = _labels(path / "phenotypes.csv", panel)
    ids, feats = _features(path / "features.csv")
    if ids != [p.individual_id for p in profiles]:
        raise SynthError(f"{path}: features.csv ids do not match phenotypes.csv")
    return profiles, feats


def _layout(world: WorldConfig, panel: SnpPanel, width: int) -> FeatureLayout | None:
    layout = FeatureLayout(panel, dict(world.dims), dict(world.contrast))
    if layout.size != width:
        raise SynthError(f"features have {width} columns but the configured layout has {layout.size}")
    return layout


def cmd_train(args, cfg, panel) -> None:
    path = Path(args.train_dir)
    world = build_section("world", cfg.get("world", {}), args.seed, mode="realistic")
    tcfg = build_section("train", cfg.get("train", {}), args.seed)
    run = Run("train", args, {"world": world, "train": tcfg, "block_inputs": not args.full_inputs},
              panel, [path])
    profiles, feats = _train_set(path, panel)
    layout = None if args.full_inputs else _layout(world, panel, feats.shape[1])
    models = train_classifiers(panel, profiles, feats, tcfg, layout)
    run.write_text("classifiers.json", dump_classifiers(models))
    rows = [(p, accuracy(m, feats, labels_for(profiles, panel, p)), m.train_loss)
            for p, m in models.items()]
    run.write_csv("train_metrics.csv", ["phenotype", "train_accuracy", "train_loss"], rows)
    run.finish()


def _eval_inputs(args) -> list[Path]:
    paths = [Path(args.dataset), Path(args.model)]
    for extra in ("classifiers", "features"):
        if getattr(args, extra, None):
            paths.append(Path(getattr(args, extra)))
    return paths


def _load_eval(args, panel):
    ds = _dataset(Path(args.dataset), panel, getattr(args, "features", None))
    model = _model(Path(args.model))
    clfs = _classifiers(Path(args.classifiers)) if getattr(args, "classifiers", None) else None
    return ds, model, clfs


def _eval_config(args, cfg) -> EvalConfig:
    extra = {}
    if getattr(args, "k", None) is not None:
        extra["ks"] = tuple(args.k)
    if getattr(args, "sizes", None) is not None:
        extra["population_sizes"] = tuple(args.sizes)
    if getattr(args, "trials", None) is not None:
        extra["trials"] = args.trials
    if getattr(args, "workers", None) is not None:
        extra["workers"] = args.workers
    return build_section("eval", cfg.get("eval", {}), args.seed, **extra)


def cmd_match(args, cfg, panel) -> None:
    parse_mode(args.mode)
    run = Run("match", args, {"mode": args.mode}, panel, _eval_inputs(args))
    ds, model, clfs = _load_eval(args, panel)
    probes = probes_for_mode(args.mode, ds, clfs)
    sm = score_matrix(probes, ds.genotypes, model, args.normalize_variants)
    ranks = true_ranks(sm, ds.true_pairing)
    best = [int(np.lexsort((np.arange(len(sm.genome_ids)), -row))[0]) for row in sm.scores]
    rows = [(pid, ds.true_pairing[pid], int(r), sm.genome_ids[b], sm.scores[i, b])
            for i, (pid, r, b) in enumerate(zip(sm.probe_ids, ranks, best))]
    run.write_csv("ranks.csv", ["probe_id", "true_genome_id", "true_rank", "best_genome_id",
                                "best_score"], rows)
    run.finish(top1=float(np.mean(ranks == 1)))


def _plot(path: Path, title: str, xlabel: str, ylabel: str, series) -> None:
    """Best-effort SVG; silently skipped when matplotlib is unavailable."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return
    fig, ax = plt.subplots(figsize=(5, 4))
    for label, xs, ys in series:
        ax.plot(xs, ys, marker="o", label=label)
    ax.set(title=title, xlabel=xlabel, ylabel=ylabel)
    ax.legend()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_sweep(args, cfg, panel) -> None:
    parse_mode(args.mode)
    ecfg = _eval_config(args, cfg)
    run = Run("sweep", args, {"eval": ecfg, "mode": args.mode}, panel, _eval_inputs(args))
    ds, model, clfs = _load_eval(args, panel)
    probes = probes_for_mode(args.mode, ds, clfs)
    sm = score_matrix(probes, ds.genotypes, model, args.normalize_variants)
    rows = sweep_scores(sm, ds.true_pairing, ecfg, random_mode=args.mode == "random")
    run.write_csv("sweep.csv", ["population_size", "k", "mean", "std"],
                  [(r.population_size, r.k, r.mean, r.std) for r in rows])
    if args.plot:
        series = [(f"top-{k}", [r.population_size for r in rows if r.k == k],
                   [r.mean for r in rows if r.k == k]) for k in ecfg.k_values]
        _plot(run.out / "sweep.svg", f"mode {args.mode}", "population size", "success", series)
    run.finish()


def cmd_roc(args, cfg, panel) -> None:
    parse_mode(args.mode)
    run = Run("roc", args, {"mode": args.mode}, panel, _eval_inputs(args))
    ds, model, clfs = _load_eval(args, panel)
    probes = probes_for_mode(args.mode, ds, clfs)
    sm = score_matrix(probes, ds.genotypes, model, args.normalize_variants)
    curves = {"topk": roc_topk(sm, ds.true_pairing), "threshold": roc_threshold(sm, ds.true_pairing)}
    for name, c in curves.items():
        run.write_csv(f"roc_{name}.csv", ["threshold", "fpr", "tpr"],
                      list(zip(c.thresholds, c.fpr, c.tpr)))
    run.write_csv("auc.csv", ["method", "auc"], [(n, c.auc) for n, c in curves.items()])
    if args.plot:
        _plot(run.out / "roc.svg", f"mode {args.mode}", "FPR", "TPR",
              [(n, c.fpr, c.tpr) for n, c in curves.items()])
    run.finish()


def _attack_config(args, cfg, **extra) -> AttackConfig:
    if getattr(args, "epsilon", None) is not None:
        extra["epsilon"] = args.epsilon
    return build_section("attack", cfg.get("attack", {}), args.seed, **extra)


def cmd_attack(args, cfg, panel) -> None:
    if (args.universal is False) == (args.pgd is None):
        raise ConfigError("invalid config field attack: choose exactly one of --universal or --pgd")
    if args.pgd is not None and args.pgd not in PHENOTYPES:
        raise ConfigError(f"invalid config field pgd: unknown phenotype {args.pgd}")
    acfg = _attack_config(args, cfg, optimizer="adam" if args.universal else "sign-gradient")
    run = Run("attack", args, {"attack": acfg, "pgd": args.pgd, "form": args.form}, panel,
              _eval_inputs(args))
    ds, model, clfs = _load_eval(args, panel)
    x = _need_features(ds, "attack")
    if args.universal:
        res = universal_batch(clfs, x, genome_log_weights(model, ds.genotypes), acfg, args.form)
        delta = res.delta
        trace = [{"iteration": t, "objective": float(res.objective_trace[t].mean()),
                  "linf": float(res.linf_trace[t].max())} for t in range(len(res.objective_trace))]
    else:
        clf = clfs[args.pgd]
        delta = pgd_batch(clf, x, labels_for(ds.profiles, panel, args.pgd), acfg)
        trace = [{"iteration": acfg.steps(40), "linf": float(np.abs(delta).max()) if delta.size else 0.0}]
    run.write_text("features.csv", dump_features(ds.ids, x + delta))
    run.write_json("trace.json", {"manifest_id": run.manifest_id, "trace": trace})
    run.write_csv("flips.csv", ["phenotype", "clean_accuracy", "perturbed_accuracy"], [
        (p, accuracy(c, x, labels_for(ds.profiles, panel, p)),
         accuracy(c, x + delta, labels_for(ds.profiles, panel, p))) for p, c in clfs.items()])
    run.finish(epsilon=acfg.epsilon)


def cmd_advtrain(args, cfg, panel) -> None:
    path = Path(args.train_dir)
    acfg = _attack_config(args, cfg)
    adv = build_section("advtrain", cfg.get("advtrain", {}), args.seed,
                        **({"passes": args.passes} if args.passes is not None else {}))
    tcfg = build_section("train", {**cfg.get("train", {}), "epochs": adv.epochs}, args.seed)
    run = Run("advtrain", args, {"attack": acfg, "advtrain": adv, "train": tcfg}, panel,
              [path, Path(args.classifiers)])
    profiles, feats = _train_set(path, panel)
    clfs = _classifiers(Path(args.classifiers))
    robust, rows = {}, []
    for p, clf in clfs.items():
        y = labels_for(profiles, panel, p)
        robust[p] = adversarial_train(clf, feats, y, acfg, adv.passes, tcfg, adv.subset_fraction)
        rows.append((p, attacked_accuracy(clf, feats, y, acfg),
                     attacked_accuracy(robust[p], feats, y, acfg)))
    run.write_text("classifiers.json", dump_classifiers(robust))
    run.write_csv("advtrain.csv", ["phenotype", "attacked_accuracy_before", "attacked_accuracy_after"],
                  rows)
    run.finish()


def cmd_report(args, cfg, panel) -> None:
    ecfg = _eval_config(args, cfg)
    grid = tuple(args.grid) if args.grid else DEFAULT_GRID
    run = Run("report", args, {"eval": ecfg, "grid": grid}, panel, _eval_inputs(args))
    ds, model, clfs = _load_eval(args, panel)
    x = _need_features(ds, "report")
    sweeps = {}
    for mode in ("predicted", "oracle:eye", "oracle-all", "random"):
        probes = probes_for_mode(mode, ds, clfs)
        sm = score_matrix(probes, ds.genotypes, model, args.normalize_variants)
        sweeps[mode] = sweep_scores(sm, ds.true_pairing, ecfg, random_mode=mode == "random")
    sm = score_matrix(probes_for_mode("predicted", ds, clfs), ds.genotypes, model,
                      args.normalize_variants)
    eps_star, tried = calibrate_epsilon(ds, clfs, model, ecfg, grid)
    run.write_csv("report_sweep.csv", ["mode", "population_size", "k", "mean", "std"],
                  [(m, r.population_size, r.k, r.mean, r.std) for m, rows in sweeps.items() for r in rows])
    run.write_csv("calibration.csv", ["epsilon", "population_size", "k", "mean", "std"],
                  [(e, r.population_size, r.k, r.mean, r.std) for e, rows in tried.items() for r in rows])
    summary = {
        "accuracy": {p: accuracy(c, x, labels_for(ds.profiles, panel, p)) for p, c in clfs.items()},
        "auc": {"topk": roc_topk(sm, ds.true_pairing).auc,
                "threshold": roc_threshold(sm, ds.true_pairing).auc},
        "epsilon_star": eps_star,
    }
    run.write_json("report.json", {"manifest_id": run.manifest_id, **summary})
    run.finish(epsilon_star=eps_star)


# ---- argument parsing -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--config", help="JSON file with world/train/eval/attack/advtrain sections")
    common.add_argument("--out-dir", default="out")
    common.add_argument("--panel", help="panel JSON (defaults to the built-in SNP panel)")

    parser = argparse.ArgumentParser(prog="genoface", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, func: Callable, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=func)
        return p

    p = add("ingest", cmd_ingest, "parse raw genotype files and phenotype labels into a dataset")
    p.add_argument("--genotypes", nargs="+", required=True, help="raw genotype files or directories")
    p.add_argument("--phenotypes", required=True)
    p.add_argument("--pairs", help="CSV with id,genome_id (default: identical ids)")
    p.add_argument("--features", help="optional features CSV for the individuals")

    p = add("fit", cmd_fit, "fit conditional tables on a labeled reference dataset")
    p.add_argument("--reference", required=True)

    p = add("synth", cmd_synth, "build a synthetic paired dataset, reference pool and training set")
    p.add_argument("--mode", choices=("ideal", "realistic"), default="realistic")
    p.add_argument("--profiles", help="phenotype CSV replacing the sampled individuals")

    p = add("train", cmd_train, "train one classifier per phenotype")
    p.add_argument("--train-dir", required=True)
    p.add_argument("--full-inputs", action="store_true",
                   help="let every classifier read the whole feature vector")

    def eval_args(p, classifiers_required=False, features=True):
        p.add_argument("--dataset", required=True)
        p.add_argument("--model", required=True)
        p.add_argument("--classifiers", required=classifiers_required)
        p.add_argument("--normalize-variants", action="store_true",
                       help="renormalize per-genome variant scores before matching")
        if features:
            p.add_argument("--features", help="features CSV replacing the dataset's own")

    def mode_arg(p):
        p.add_argument("--mode", default="predicted",
                       help="predicted | oracle-all | oracle:<p1,p2> | random")

    def sweep_args(p):
        p.add_argument("--k", type=int, nargs="+")
        p.add_argument("--sizes", type=int, nargs="+")
        p.add_argument("--trials", type=int)
        p.add_argument("--workers", type=int)

    p = add("match", cmd_match, "rank every genome for every individual")
    eval_args(p)
    mode_arg(p)

    p = add("sweep", cmd_sweep, "top-k success against random sub-populations")
    eval_args(p)
    mode_arg(p)
    sweep_args(p)
    p.add_argument("--plot", action="store_true")

    p = add("roc", cmd_roc, "ROC curves for top-k and score-threshold matching")
    eval_args(p)
    mode_arg(p)
    p.add_argument("--plot", action="store_true")

    p = add("attack", cmd_attack, "perturb features with universal noise or single-phenotype PGD")
    eval_args(p, classifiers_required=True)
    p.add_argument("--universal", action="store_true")
    p.add_argument("--pgd", metavar="PHENOTYPE")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--form", choices=("log", "prob"), default="log",
                   help="universal objective on log-probabilities (default) or probabilities")

    p = add("advtrain", cmd_advtrain, "adversarially retrain classifiers")
    p.add_argument("--train-dir", required=True)
    p.add_argument("--classifiers", required=True)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--passes", type=int)

    p = add("report", cmd_report, "summary metrics and the calibrated universal-noise budget")
    eval_args(p, classifiers_required=True)
    sweep_args(p)
    p.add_argument("--grid", type=float, nargs="+", help="epsilon grid for calibration")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if not 0 <= args.seed < 2**63:
            raise ConfigError("invalid config field seed: must be a non-negative 63-bit integer")
        cfg = load_config(args.config)
        panel = load_panel(args.panel)
        args.func(args, cfg, panel)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InputError, GenotypeParseError, PhenotypeLabelError) as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (SynthError, ModelError, MatchError, ClassifierError, AttackError, PanelError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
