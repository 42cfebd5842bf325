"""Command-line surface for reproducible end-to-end experiments.

Commands: generate, train (--kind fp|hp), compose-gt, evaluate (--rates),
analyze-feedback, sweep.  All accept --config (an INI file with sections
[run], [generator], [model], [fusion]) and --seed; flags override file
values.  Feedback collection rates are fractions (0.0001 means 0.01%).

Exit codes: 0 success, 2 config error, 3 missing artifact, 4 data error,
5 checkpoint error, 1 anything else.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import hashlib
import json
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import fileio
from .dialog import FeedbackCategory, Session, read_sessions, strip_elicitation, write_sessions
from .errors import ArtifactError, CheckpointError, ConfigError, DataError, SatfusionError
from .fusion import FusionConfig, Verdict, VerdictSource, confidence, tune_threshold, write_verdicts
from .ground_truth import build_pools, compose_ground_truth, mark_given_feedback, write_ground_truth
from .metrics import (
    ALL_APPROACHES,
    agreement_and_kappa,
    evaluate_approaches,
    format_reports_table,
    waterfall_assessments,
)
from .model import ModelConfig, ModelKind, SatisfactionModel, train
from .synth import GeneratorConfig, CorpusManifest, annotate_oracle, generate

DEFAULT_RATES = (0.0001, 0.01, 0.10)
DEFAULT_TAU_GRID = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class RunConfig:
    out_dir: str = "runs/default"
    seed: int = 11
    rates: tuple[float, ...] = DEFAULT_RATES
    tau: float = 0.75
    tune_tau: bool = False
    tau_grid: tuple[float, ...] = DEFAULT_TAU_GRID
    annotation_budget: int = 800
    holdout_fraction: float = 0.2
    gt_fraction: float = 0.35
    dev_size: int = 1000
    top_k_domains: int = 20
    coverage_target: float = 0.98
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self) -> None:
        if any(not 0.0 <= r <= 1.0 for r in self.rates):
            raise ConfigError("feedback collection rates must lie in [0, 1]")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ConfigError("holdout_fraction must lie in (0, 1)")
        if not 0.0 < self.gt_fraction <= 1.0:
            raise ConfigError("gt_fraction must lie in (0, 1]")
        if self.annotation_budget <= 0:
            raise ConfigError("annotation_budget must be positive")

    # Derived artifact paths, all under out_dir.
    @property
    def base(self) -> Path:
        return Path(self.out_dir)

    @property
    def corpus_path(self) -> Path:
        return self.base / "corpus.jsonl"

    @property
    def manifest_path(self) -> Path:
        return self.base / "manifest.json"

    def checkpoint_path(self, kind: ModelKind) -> Path:
        return self.base / f"model_{kind.value.lower()}.npz"

    def train_log_path(self, kind: ModelKind) -> Path:
        return self.base / f"train_log_{kind.value.lower()}.jsonl"

    @property
    def ground_truth_path(self) -> Path:
        return self.base / "ground_truth.jsonl"

    @property
    def report_json_path(self) -> Path:
        return self.base / "report.json"

    @property
    def report_text_path(self) -> Path:
        return self.base / "report.txt"

    @property
    def feedback_analysis_path(self) -> Path:
        return self.base / "feedback_analysis.json"

    def verdicts_path(self, rate: float) -> Path:
        return self.base / f"verdicts_rate_{rate:g}.jsonl"

    def config_hash(self) -> str:
        payload = json.dumps(dataclasses.asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _coerce(raw: str, target_type):
    if target_type is bool:
        lowered = raw.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean from {raw!r}")
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    if target_type is str:
        return raw
    raise ConfigError(f"unsupported config value type {target_type}")


def _section_kwargs(parser: configparser.ConfigParser, section: str, cls) -> dict:
    if not parser.has_section(section):
        return {}
    kwargs = {}
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key, raw in parser.items(section):
        if key not in fields:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        f = fields[key]
        if f.name in ("rates", "tau_grid", "dense_sizes"):
            parts = [p for p in raw.replace(",", " ").split() if p]
            value = tuple(float(p) if f.name != "dense_sizes" else int(p) for p in parts)
        elif f.name == "class_weight_positive":
            value = None if raw.strip().lower() in ("", "none", "auto") else float(raw)
        elif f.type in ("int", "float", "bool", "str"):
            value = _coerce(raw, {"int": int, "float": float, "bool": bool, "str": str}[f.type])
        else:
            value = _coerce(raw, type(f.default) if f.default is not None else str)
        kwargs[key] = value
    return kwargs


def load_run_config(path: str | Path | None) -> RunConfig:
    """Build a RunConfig from an INI file; missing sections keep defaults."""
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.read(path)
    known = {"run", "generator", "model", "fusion"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    run_kwargs = _section_kwargs(parser, "run", RunConfig)
    gen_kwargs = _section_kwargs(parser, "generator", GeneratorConfig)
    model_kwargs = _section_kwargs(parser, "model", ModelConfig)
    if parser.has_section("fusion"):
        for key, raw in parser.items("fusion"):
            if key == "tau":
                run_kwargs["tau"] = float(raw)
            elif key == "tune_tau":
                run_kwargs["tune_tau"] = _coerce(raw, bool)
            elif key == "tau_grid":
                run_kwargs["tau_grid"] = tuple(float(p) for p in raw.replace(",", " ").split() if p)
            else:
                raise ConfigError(f"unknown key {key!r} in [fusion]")
    try:
        return RunConfig(
            generator=GeneratorConfig(**gen_kwargs),
            model=ModelConfig(**model_kwargs),
            **run_kwargs,
        )
    except TypeError as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def _apply_seed(config: RunConfig, seed: int | None) -> RunConfig:
    if seed is None:
        return config
    return replace(
        config,
        seed=seed,
        generator=replace(config.generator, seed=seed),
        model=replace(config.model, seed=seed),
    )


def split_corpus(sessions: Sequence[Session], holdout_fraction: float, seed: int) -> tuple[list[Session], list[Session]]:
    """Seeded modeling/holdout split; the holdout feeds ground-truth pools."""
    rng = np.random.default_rng([seed, 101])
    order = rng.permutation(len(sessions))
    n_holdout = int(len(sessions) * holdout_fraction)
    holdout = [sessions[i] for i in order[:n_holdout]]
    modeling = [sessions[i] for i in order[n_holdout:]]
    return modeling, holdout


def _require(path: Path, hint: str) -> None:
    if not path.exists():
        raise ArtifactError(f"missing {path}; run `{hint}` first")


def _load_corpus(config: RunConfig) -> tuple[list[Session], CorpusManifest]:
    _require(config.corpus_path, "satfusion generate")
    _require(config.manifest_path, "satfusion generate")
    sessions = read_sessions(config.corpus_path, strict=True)
    manifest = CorpusManifest.from_dict(json.loads(config.manifest_path.read_text()))
    return sessions, manifest


def _annotate(config: RunConfig):
    noise = config.generator.annotation_noise_rate
    seed = config.seed

    def annotate(session: Session) -> int:
        return annotate_oracle(session, noise_rate=noise, seed=seed)

    return annotate


def cmd_generate(config: RunConfig) -> int:
    started = time.perf_counter()
    sessions, manifest = generate(config.generator)
    write_sessions(config.corpus_path, sessions)
    fileio.write_json(config.manifest_path, manifest.to_dict())
    elapsed = time.perf_counter() - started
    print(
        f"generated {len(sessions)} sessions over {len(manifest.intents)} intents "
        f"(whitelist coverage {manifest.whitelist_coverage:.3f}, vocab {manifest.vocab_size}) "
        f"in {elapsed:.1f}s -> {config.corpus_path}"
    )
    return 0


def _fp_dataset(modeling: Sequence[Session]) -> list[Session]:
    dataset = []
    for session in modeling:
        if not session.segment.eligible_for_feedback:
            continue
        if session.feedback not in (FeedbackCategory.YES, FeedbackCategory.NO):
            continue
        label = 1 if session.feedback is FeedbackCategory.NO else 0
        dataset.append(replace(session, label=label))
    return dataset


def _hp_dataset(modeling: Sequence[Session], config: RunConfig) -> list[Session]:
    rng = np.random.default_rng([config.seed, 103])
    budget = min(config.annotation_budget, len(modeling))
    chosen = rng.choice(len(modeling), size=budget, replace=False)
    annotate = _annotate(config)
    dataset = []
    for i in chosen:
        session = modeling[i]
        dataset.append(strip_elicitation(replace(session, label=annotate(session))))
    return dataset


def cmd_train(config: RunConfig, kind: ModelKind) -> int:
    sessions, _manifest = _load_corpus(config)
    modeling, _holdout = split_corpus(sessions, config.holdout_fraction, config.seed)
    if kind is ModelKind.FP:
        dataset = _fp_dataset(modeling)
    else:
        dataset = _hp_dataset(modeling, config)
    if not dataset:
        raise DataError(f"no training sessions available for {kind.value}")
    model_config = replace(config.model, seed=config.seed)
    started = time.perf_counter()
    model = train(dataset, model_config, kind)
    elapsed = time.perf_counter() - started
    model.save(config.checkpoint_path(kind))
    fileio.write_jsonl(
        config.train_log_path(kind),
        [stats.to_dict() | {"config_hash": config.config_hash()} for stats in model.history],
    )
    best = max((s.val_pr_auc for s in model.history if s.val_pr_auc is not None), default=None)
    print(
        f"trained {kind.value} on {len(dataset)} sessions in {elapsed:.1f}s, "
        f"{len(model.history)} epochs, best val PR-AUC "
        f"{best if best is None else round(best, 4)} -> {config.checkpoint_path(kind)}"
    )
    return 0


def _compose(config: RunConfig, sessions: Sequence[Session], manifest: CorpusManifest):
    _modeling, holdout = split_corpus(sessions, config.holdout_fraction, config.seed)
    whitelist = frozenset(manifest.whitelist)
    pools = build_pools(
        holdout,
        whitelist,
        annotate=_annotate(config),
        target_fraction=config.gt_fraction,
        seed=config.seed,
    )
    return compose_ground_truth(pools, whitelist, config.seed), holdout


def cmd_compose_gt(config: RunConfig) -> int:
    sessions, manifest = _load_corpus(config)
    gt, _holdout = _compose(config, sessions, manifest)
    write_ground_truth(config.ground_truth_path, gt)
    print(
        f"composed ground truth: {gt.total} examples across {len(gt.examples)} segments "
        f"-> {config.ground_truth_path}"
    )
    return 0


def _tuned_tau(config: RunConfig, fp: SatisfactionModel, hp: SatisfactionModel, modeling: list[Session]) -> float:
    if not config.tune_tau:
        return config.tau
    rng = np.random.default_rng([config.seed, 104])
    size = min(config.dev_size, len(modeling))
    chosen = rng.choice(len(modeling), size=size, replace=False)
    annotate = _annotate(config)
    dev = [
        strip_elicitation(replace(modeling[i], label=annotate(modeling[i]))) for i in chosen
    ]
    return tune_threshold(dev, fp, hp, config.tau_grid, FusionConfig(tau=config.tau))


def cmd_evaluate(config: RunConfig, rates: Sequence[float] | None = None) -> int:
    rates = tuple(rates) if rates else config.rates
    if any(not 0.0 <= r <= 1.0 for r in rates):
        raise ConfigError("rates must lie in [0, 1]")
    sessions, manifest = _load_corpus(config)
    for kind in (ModelKind.FP, ModelKind.HP):
        _require(config.checkpoint_path(kind), f"satfusion train --kind {kind.value.lower()}")
    fp = SatisfactionModel.load(config.checkpoint_path(ModelKind.FP))
    hp = SatisfactionModel.load(config.checkpoint_path(ModelKind.HP))

    modeling, _holdout = split_corpus(sessions, config.holdout_fraction, config.seed)
    tau = _tuned_tau(config, fp, hp, modeling)
    fusion_config = FusionConfig(tau=tau)

    gt, holdout = _compose(config, sessions, manifest)
    write_ground_truth(config.ground_truth_path, gt)
    sessions_by_id = {s.session_id: s for s in holdout}

    reports_by_rate: dict[float, dict] = {}
    report_payload = {
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "tau": tau,
        "rates": {},
    }
    for rate in rates:
        marked = mark_given_feedback(gt, rate, config.seed)
        reports = evaluate_approaches(
            marked,
            sessions_by_id,
            fp,
            hp,
            fusion_config,
            approaches=ALL_APPROACHES,
            top_k=config.top_k_domains,
            coverage_target=config.coverage_target,
        )
        reports_by_rate[rate] = reports
        report_payload["rates"][f"{rate:g}"] = {
            name: report.to_dict() for name, report in reports.items()
        }
        _write_rate_verdicts(config, marked, sessions_by_id, fp, hp, fusion_config, rate)

    fileio.write_json(config.report_json_path, report_payload)
    table = format_reports_table(
        reports_by_rate,
        header=f"config {config.config_hash()}  seed {config.seed}  tau {tau:g}",
    )
    fileio.write_text(config.report_text_path, table)
    print(table)
    print(f"reports -> {config.report_json_path}, {config.report_text_path}")
    return 0


def _write_rate_verdicts(config, marked, sessions_by_id, fp, hp, fusion_config, rate) -> None:
    assessments = waterfall_assessments(marked, sessions_by_id, fp, hp, fusion_config)
    items: list[tuple[str, Verdict]] = []
    for a in assessments:
        if a.marked:
            verdict = Verdict(
                dissatisfied=bool(a.label),
                score=float(a.label),
                source=VerdictSource.EXPLICIT,
            )
        elif a.eligible and a.p_fp is not None and confidence(a.p_fp) >= fusion_config.tau:
            verdict = Verdict(
                dissatisfied=a.p_fp >= fusion_config.decision_cutoff,
                score=a.p_fp,
                source=VerdictSource.FP,
                threshold_used=fusion_config.tau,
            )
        else:
            verdict = Verdict(
                dissatisfied=a.p_hp >= fusion_config.decision_cutoff,
                score=a.p_hp,
                source=VerdictSource.HP,
            )
        items.append((a.session_id, verdict))
    write_verdicts(config.verdicts_path(rate), items)


def cmd_analyze_feedback(config: RunConfig) -> int:
    sessions, _manifest = _load_corpus(config)
    elicited = [s for s in sessions if s.feedback is not FeedbackCategory.NONE_ELICITED]
    if not elicited:
        raise DataError("corpus has no elicited sessions to analyze")
    yes_no = [s for s in elicited if s.feedback in (FeedbackCategory.YES, FeedbackCategory.NO)]
    if not yes_no:
        raise DataError("corpus has no YES/NO feedback sessions to analyze")
    annotate = _annotate(config)
    pairs = [
        (1 if s.feedback is FeedbackCategory.NO else 0, annotate(s))
        for s in yes_no
    ]
    agreement, kappa = agreement_and_kappa(pairs)
    shares = {
        category.value: sum(s.feedback is category for s in elicited) / len(elicited)
        for category in (
            FeedbackCategory.YES,
            FeedbackCategory.NO,
            FeedbackCategory.SILENCE,
            FeedbackCategory.OTHER,
        )
    }
    payload = {
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "num_elicited": len(elicited),
        "num_yes_no": len(yes_no),
        "agreement_rate": agreement,
        "cohens_kappa": kappa,
        "category_shares": shares,
    }
    fileio.write_json(config.feedback_analysis_path, payload)
    print(
        f"feedback vs annotation on {len(yes_no)} YES/NO sessions: "
        f"agreement {agreement:.4f}, kappa {kappa if kappa is None else round(kappa, 4)}"
    )
    print(f"category shares among elicited: { {k: round(v, 4) for k, v in shares.items()} }")
    print(f"analysis -> {config.feedback_analysis_path}")
    return 0


def cmd_sweep(config: RunConfig, force: bool = False) -> int:
    started = time.perf_counter()
    timings: dict[str, float] = {}
    if force or not config.corpus_path.exists():
        step = time.perf_counter()
        cmd_generate(config)
        timings["generate"] = time.perf_counter() - step
    for kind in (ModelKind.FP, ModelKind.HP):
        step = time.perf_counter()
        cmd_train(config, kind)
        timings[f"train_{kind.value.lower()}"] = time.perf_counter() - step
    step = time.perf_counter()
    cmd_evaluate(config)
    timings["evaluate"] = time.perf_counter() - step
    step = time.perf_counter()
    cmd_analyze_feedback(config)
    timings["analyze_feedback"] = time.perf_counter() - step
    total = time.perf_counter() - started
    print("timings: " + ", ".join(f"{k}={v:.1f}s" for k, v in timings.items()) + f", total={total:.1f}s")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="satfusion",
        description="Per-turn user satisfaction estimation via feedback/model fusion.",
    )
    parser.add_argument("--config", help="INI config file", default=None)
    parser.add_argument("--seed", type=int, default=None, help="override every seed")
    parser.add_argument("--out-dir", default=None, help="override the output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("generate", help="generate the synthetic corpus and manifest")
    p_train = sub.add_parser("train", help="train a predictor")
    p_train.add_argument("--kind", choices=["fp", "hp"], required=True)
    sub.add_parser("compose-gt", help="compose the ground-truth test set")
    p_eval = sub.add_parser("evaluate", help="evaluate approaches over feedback rates")
    p_eval.add_argument(
        "--rates",
        default=None,
        help="comma-separated fractions, e.g. 0.0001,0.01,0.1",
    )
    sub.add_parser("analyze-feedback", help="feedback vs annotation agreement report")
    p_sweep = sub.add_parser("sweep", help="run the full pipeline end to end")
    p_sweep.add_argument("--force", action="store_true", help="regenerate the corpus")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_run_config(args.config)
        config = _apply_seed(config, args.seed)
        if args.out_dir:
            config = replace(config, out_dir=args.out_dir)
        if args.command == "generate":
            return cmd_generate(config)
        if args.command == "train":
            return cmd_train(config, ModelKind(args.kind.upper()))
        if args.command == "compose-gt":
            return cmd_compose_gt(config)
        if args.command == "evaluate":
            rates = None
            if args.rates:
                rates = tuple(float(r) for r in args.rates.split(","))
            return cmd_evaluate(config, rates)
        if args.command == "analyze-feedback":
            return cmd_analyze_feedback(config)
        if args.command == "sweep":
            return cmd_sweep(config, force=args.force)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return 2
    except ArtifactError as exc:
        print(f"error[artifact]: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"error[data]: {exc}", file=sys.stderr)
        return 4
    except CheckpointError as exc:
        print(f"error[checkpoint]: {exc}", file=sys.stderr)
        return 5
    except SatfusionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
