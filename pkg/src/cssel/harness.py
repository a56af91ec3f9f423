"""Evaluation harness: split, score, calibrate, decide, report.

Pilot mode carves the corpus into scorer-fit, calibration, and test groups
of prompts and reports test metrics per policy.  K-fold mode decides every
claim out-of-fold: for each fold, the remaining prompts are split into
scorer-fit and calibration subsets, the fold's claims are scored and decided
with parameters fit outside the fold, and the pooled decisions are evaluated
claimwise over the whole corpus.  No claim's decision ever depends on its
own fold's labels.

Reports are written atomically: JSON and CSV summaries, per-fold calibration
records, and an optional utility bar chart.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .calibration import (
    CalibrationConfig,
    calibrate,
    calibrate_claim_drop,
    calibrate_whole_abstain,
)
from .corpus import Corpus, atomic_write_text, make_kfold_split, make_pilot_split, parse_corpus
from .metrics import Decision, MetricsReport, WeightScheme, evaluate, table_row
from .policies import (
    ABSTAIN_AGGREGATES,
    DEFAULT_POLICIES,
    PolicySpec,
    apply_policy,
    parse_policy,
)
from .scoring import JudgeClient, build_fit_rows, fit_combiner, score_claims

# Fields a policy reads at decision time and the labels its emissions need.
_SCORE_NEEDS = {
    "no-css": (),
    "oracle": (),
    "claim-drop": ("s_fine",),
    "whole-abstain": ("s_fine",),
    "uncal": ("s_fine", "s_coarse"),
    "cal": ("s_fine", "s_coarse"),
}
_LABEL_NEEDS = {
    "no-css": ("y_fine",),
    "oracle": ("y_fine", "y_coarse"),
    "claim-drop": ("y_fine",),
    "whole-abstain": ("y_fine",),
    "uncal": ("y_fine", "y_coarse"),
    "cal": ("y_fine", "y_coarse"),
}

CSV_HEADER = (
    "policy",
    "examples",
    "emitted/total",
    "support_precision",
    "specificity_retention",
    "supported_specificity",
    "oau",
)


@dataclass(frozen=True)
class RunConfig:
    """Everything one evaluation run depends on."""

    corpus_path: str | None = None
    out_dir: str | None = None
    mode: str = "pilot"
    policies: tuple[str, ...] = DEFAULT_POLICIES
    alpha: float = 0.10
    delta: float = 0.05
    gamma: float = 0.6
    grid_step: float = 0.01
    grid_augment: bool = True
    seed: int = 0
    scores: str = "use"
    pilot_sizes: tuple[int, int, int] = (30, 30, 140)
    k: int = 5
    fit_fraction: float = 0.5
    abstain_agg: str = "mean"
    jobs: int = 1
    figures: bool = True

    def __post_init__(self) -> None:
        if self.mode not in ("pilot", "kfold"):
            raise ValueError(f"mode must be pilot or kfold, got {self.mode!r}")
        if self.scores not in ("use", "refit"):
            raise ValueError(f"scores must be use or refit, got {self.scores!r}")
        if self.abstain_agg not in ABSTAIN_AGGREGATES:
            raise ValueError(f"abstain_agg must be one of {ABSTAIN_AGGREGATES}")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")
        if not (0.0 < self.fit_fraction < 1.0):
            raise ValueError(f"fit_fraction must be in (0, 1), got {self.fit_fraction}")

    def calibration_config(self) -> CalibrationConfig:
        return CalibrationConfig(
            alpha=self.alpha,
            delta=self.delta,
            grid_step=self.grid_step,
            augment=self.grid_augment,
        )

    def weights(self) -> WeightScheme:
        return WeightScheme(self.gamma)

    def to_dict(self) -> dict:
        """Result-determining settings only.

        Execution details (paths, worker count, figure toggle) are omitted so
        reruns of the same evaluation give byte-identical reports no matter
        where or how parallel they ran.
        """
        return {
            "mode": self.mode,
            "policies": list(self.policies),
            "alpha": self.alpha,
            "delta": self.delta,
            "gamma": self.gamma,
            "grid_step": self.grid_step,
            "grid_augment": self.grid_augment,
            "seed": self.seed,
            "scores": self.scores,
            "pilot_sizes": list(self.pilot_sizes),
            "k": self.k,
            "fit_fraction": self.fit_fraction,
            "abstain_agg": self.abstain_agg,
        }


@dataclass(frozen=True)
class RunReport:
    """Per-policy metrics plus the calibration record of every fold."""

    mode: str
    examples: int
    policies: tuple[str, ...]
    outcomes: dict[str, MetricsReport]
    calibrations: tuple[dict[str, dict], ...]
    fallback_occurred: bool
    config: dict = field(default_factory=dict)
    corpus_sha256: str = ""
    version: str = __version__

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "mode": self.mode,
            "examples": self.examples,
            "corpus_sha256": self.corpus_sha256,
            "fallback_occurred": self.fallback_occurred,
            "config": self.config,
            "policies": list(self.policies),
            "outcomes": {p: r.to_dict() for p, r in self.outcomes.items()},
            "calibrations": [dict(fold) for fold in self.calibrations],
        }


def corpus_fingerprint(corpus: Corpus) -> str:
    """SHA-256 of the canonical serialization, so equal corpora match."""
    from .corpus import serialize_corpus

    return hashlib.sha256(serialize_corpus(corpus).encode("utf-8")).hexdigest()


def _parse_policies(texts: Sequence[str]) -> list[tuple[str, PolicySpec]]:
    seen: set[str] = set()
    parsed: list[tuple[str, PolicySpec]] = []
    for text in texts:
        spec = parse_policy(text)
        if text in seen:
            continue
        seen.add(text)
        parsed.append((text, spec))
    if not parsed:
        raise ValueError("at least one policy is required")
    return parsed


def _require_fields(claims, fields: Sequence[str], context: str) -> None:
    missing: list[str] = []
    for claim in claims:
        for name in fields:
            if getattr(claim, name) is None:
                missing.append(f"{claim.claim_id}.{name}")
    if missing:
        raise ValueError(
            f"{context} requires fields that are absent: {missing[:8]} "
            f"({len(missing)} missing values total)"
        )


def _validate_needs(
    parsed: Sequence[tuple[str, PolicySpec]],
    claims,
    scores_available: bool,
) -> None:
    score_fields = sorted({f for _, s in parsed for f in _SCORE_NEEDS[s.kind]})
    label_fields = sorted({f for _, s in parsed for f in _LABEL_NEEDS[s.kind]})
    if not scores_available and score_fields:
        _require_fields(claims, score_fields, "policy application with --scores use")
    if label_fields:
        _require_fields(claims, label_fields, "evaluation")


def _resolve_policies(
    parsed: Sequence[tuple[str, PolicySpec]],
    cal_slice: Corpus,
    cal_cfg: CalibrationConfig,
    weights: WeightScheme,
    abstain_agg: str,
) -> tuple[list[tuple[str, PolicySpec]], dict[str, dict], bool]:
    """Run whatever calibrations the policy list demands on one cal slice."""
    resolved: list[tuple[str, PolicySpec]] = []
    records: dict[str, dict] = {}
    any_fallback = False
    for text, spec in parsed:
        if not spec.needs_calibration():
            resolved.append((text, spec))
            continue
        if spec.kind == "cal":
            result = calibrate(cal_slice.claims, cal_cfg, weights)
            resolved.append((text, spec.resolve(pair=result.chosen)))
        elif spec.kind == "claim-drop":
            result = calibrate_claim_drop(cal_slice.claims, cal_cfg, weights)
            resolved.append((text, spec.resolve(threshold=result.chosen)))
        elif spec.kind == "whole-abstain":
            result = calibrate_whole_abstain(cal_slice, cal_cfg, weights, abstain_agg)
            resolved.append((text, spec.resolve(threshold=result.chosen)))
        else:
            raise ValueError(f"policy {text!r} cannot be calibrated")
        records[text] = result.to_dict()
        any_fallback = any_fallback or result.fallback
    return resolved, records, any_fallback


def _refit_and_score(
    corpus: Corpus,
    fit_ids: Sequence[str],
    target_ids: Sequence[str],
    judge: JudgeClient | None,
    jobs: int,
) -> Corpus:
    """Fit a combiner on the fit prompts and rescore the target prompts."""
    evidence = corpus.evidence_by_prompt()
    fit_slice = corpus.restrict(fit_ids)
    rows, labels = build_fit_rows(fit_slice.claims, evidence, judge, jobs)
    model = fit_combiner(rows, labels)
    target = corpus.restrict(target_ids)
    scored = score_claims(model, target.claims, evidence, judge, overwrite=True, jobs=jobs)
    return target.with_claims(scored)


def run_pilot(corpus: Corpus, config: RunConfig) -> RunReport:
    """Single-split protocol: fit the scorer, calibrate, evaluate on test."""
    parsed = _parse_policies(config.policies)
    split = make_pilot_split(corpus, config.pilot_sizes, config.seed)
    judge = JudgeClient.from_env()
    weights = config.weights()
    cal_cfg = config.calibration_config()

    cal_ids, test_ids = split.group("cal"), split.group("test")
    if config.scores == "refit":
        scored = _refit_and_score(
            corpus, split.group("fit"), list(cal_ids) + list(test_ids), judge, config.jobs
        )
        cal_slice = scored.restrict(cal_ids)
        test_slice = scored.restrict(test_ids)
    else:
        cal_slice = corpus.restrict(cal_ids)
        test_slice = corpus.restrict(test_ids)

    _validate_needs(parsed, test_slice.claims, scores_available=config.scores == "refit")
    resolved, records, any_fallback = _resolve_policies(
        parsed, cal_slice, cal_cfg, weights, config.abstain_agg
    )
    outcomes: dict[str, MetricsReport] = {}
    for text, spec in resolved:
        decisions = apply_policy(spec, test_slice, config.abstain_agg)
        outcomes[text] = evaluate(decisions, test_slice.claims, weights)
    return RunReport(
        mode="pilot",
        examples=len(test_slice.prompts),
        policies=tuple(text for text, _ in parsed),
        outcomes=outcomes,
        calibrations=(records,),
        fallback_occurred=any_fallback,
        config=config.to_dict(),
        corpus_sha256=corpus_fingerprint(corpus),
    )


def _kfold_fit_cal(
    train_ids: Sequence[str], seed: int, fold_idx: int, fit_fraction: float
) -> tuple[list[str], list[str]]:
    """Seeded prompt-level split of out-of-fold data into fit and cal."""
    ordered = sorted(train_ids)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED, fold_idx]))
    shuffled = [ordered[i] for i in rng.permutation(len(ordered))]
    n_fit = int(round(fit_fraction * len(shuffled)))
    n_fit = min(max(n_fit, 1), len(shuffled) - 1)
    return shuffled[:n_fit], shuffled[n_fit:]


def run_kfold(corpus: Corpus, config: RunConfig) -> RunReport:
    """Out-of-fold protocol pooled over every claim in the corpus.

    Each fold's claims are decided using a scorer and thresholds derived
    only from the other folds.  The pooled decisions are evaluated in one
    pass, so aggregate metrics come from pooled counts rather than averaged
    per-fold ratios.
    """
    parsed = _parse_policies(config.policies)
    split = make_kfold_split(corpus, config.k, config.seed)
    judge = JudgeClient.from_env()
    weights = config.weights()
    cal_cfg = config.calibration_config()
    all_ids = [p.prompt_id for p in corpus.prompts]

    _validate_needs(parsed, corpus.claims, scores_available=config.scores == "refit")

    def fold_work(fold_idx: int) -> tuple[dict[str, list[Decision]], dict[str, dict], bool]:
        fold_ids = split.group(f"fold_{fold_idx}")
        train_ids = [pid for pid in all_ids if pid not in set(fold_ids)]
        fit_ids, cal_ids = _kfold_fit_cal(
            train_ids, config.seed, fold_idx, config.fit_fraction
        )
        if config.scores == "refit":
            scored = _refit_and_score(
                corpus, fit_ids, list(cal_ids) + list(fold_ids), judge, jobs=1
            )
            cal_slice = scored.restrict(cal_ids)
            eval_slice = scored.restrict(fold_ids)
        else:
            cal_slice = corpus.restrict(cal_ids)
            eval_slice = corpus.restrict(fold_ids)
        resolved, records, any_fallback = _resolve_policies(
            parsed, cal_slice, cal_cfg, weights, config.abstain_agg
        )
        decisions = {
            text: apply_policy(spec, eval_slice, config.abstain_agg)
            for text, spec in resolved
        }
        return decisions, records, any_fallback

    indices = range(config.k)
    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            fold_outputs = list(pool.map(fold_work, indices))
    else:
        fold_outputs = [fold_work(i) for i in indices]

    pooled: dict[str, list[Decision]] = {text: [] for text, _ in parsed}
    fold_records: list[dict[str, dict]] = []
    fallback_occurred = False
    for decisions, records, any_fallback in fold_outputs:
        for text, ds in decisions.items():
            pooled[text].extend(ds)
        fold_records.append(records)
        fallback_occurred = fallback_occurred or any_fallback

    outcomes = {
        text: evaluate(pooled[text], corpus.claims, weights) for text, _ in parsed
    }
    return RunReport(
        mode="kfold",
        examples=len(corpus.prompts),
        policies=tuple(text for text, _ in parsed),
        outcomes=outcomes,
        calibrations=tuple(fold_records),
        fallback_occurred=fallback_occurred,
        config=config.to_dict(),
        corpus_sha256=corpus_fingerprint(corpus),
    )


def emit_report(report: RunReport, out_dir: str | Path, figures: bool = True) -> None:
    """Write report.json, report.csv, per-fold calibration files, and charts.

    Every file lands via write-temp-rename, and equal reports produce
    byte-identical JSON and CSV.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(
        out / "report.json",
        json.dumps(report.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n",
    )
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for policy in report.policies:
        cells = table_row(report.outcomes[policy])
        writer.writerow((policy, str(report.examples)) + cells)
    atomic_write_text(out / "report.csv", buffer.getvalue())
    for idx, records in enumerate(report.calibrations):
        atomic_write_text(
            out / "calibration" / f"fold_{idx}.json",
            json.dumps(records, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        )
    if figures:
        from .plots import render_oau_chart

        render_oau_chart(
            list(report.policies),
            [report.outcomes[p].oau for p in report.policies],
            out / "oau.png",
            out / "oau.svg",
        )


def run(config: RunConfig) -> RunReport:
    """Parse the corpus, run the configured protocol, emit if out_dir set."""
    if config.corpus_path is None:
        raise ValueError("config.corpus_path is required")
    corpus = parse_corpus(config.corpus_path)
    if config.mode == "pilot":
        report = run_pilot(corpus, config)
    else:
        report = run_kfold(corpus, config)
    if config.out_dir is not None:
        emit_report(report, config.out_dir, figures=config.figures)
    return report
