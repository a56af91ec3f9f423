"""Command line entry points.

Exit codes: 0 success, 1 input validation error, 2 runtime or I/O error,
3 completed but some calibration fell back to omitting everything.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields as dataclass_fields
from pathlib import Path

from . import __version__
from .corpus import CorpusError, parse_corpus, write_corpus
from .harness import RunConfig, run
from .metrics import table_row
from .policies import DEFAULT_POLICIES
from .synth import SynthConfig, empirical_rates, generate

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_FALLBACK = 3


def _parse_tuple(text: str, n: int, kind, flag: str):
    parts = text.split(",")
    if len(parts) != n:
        raise argparse.ArgumentTypeError(f"{flag} takes {n} comma-separated values")
    try:
        return tuple(kind(p) for p in parts)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad value in {flag}: {exc}") from None


def cmd_validate(args: argparse.Namespace) -> int:
    corpus = parse_corpus(args.corpus, strict=not args.lenient)
    labeled = sum(1 for c in corpus.claims if c.y_fine is not None and c.y_coarse is not None)
    scored = sum(1 for c in corpus.claims if c.s_fine is not None and c.s_coarse is not None)
    print(
        f"ok: {len(corpus.prompts)} prompts, {len(corpus.claims)} claims "
        f"({labeled} fully labeled, {scored} fully scored)"
    )
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    file_cfg: dict = {}
    if args.config:
        file_cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(file_cfg, dict):
            raise ValueError("synth config file must hold a JSON object")
        known = {f.name for f in dataclass_fields(SynthConfig)}
        unknown = sorted(set(file_cfg) - known)
        if unknown:
            raise ValueError(f"unknown synth config keys {unknown}")

    defaults = SynthConfig()

    def pick(name: str, cli_value):
        if cli_value is not None:
            return cli_value
        if name in file_cfg:
            value = file_cfg[name]
            return tuple(value) if isinstance(value, list) else value
        return getattr(defaults, name)

    config = SynthConfig(
        n_prompts=pick("n_prompts", args.prompts),
        claims_min=pick("claims_min", args.claims_min),
        claims_max=pick("claims_max", args.claims_max),
        p_fine=pick("p_fine", args.p_fine),
        q_coarse=pick("q_coarse", args.q_coarse),
        monotone_backoff=pick("monotone_backoff", args.monotone),
        beta_pos=pick("beta_pos", args.beta_pos),
        beta_neg=pick("beta_neg", args.beta_neg),
        seed=pick("seed", args.seed),
    )
    corpus = generate(config)
    write_corpus(corpus, args.out)
    rates = empirical_rates(corpus)
    print(f"wrote {len(corpus.prompts)} prompts, {len(corpus.claims)} claims to {args.out}")
    print(
        f"fine support rate {rates['fine_rate']:.3f}, "
        f"coarse support rate {rates['coarse_rate']:.3f}"
    )
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    config = RunConfig(
        corpus_path=args.corpus,
        out_dir=args.out,
        mode=args.mode,
        policies=tuple(args.policies),
        alpha=args.alpha,
        delta=args.delta,
        gamma=args.gamma,
        grid_step=args.grid_step,
        grid_augment=args.grid_augment,
        seed=args.seed,
        scores=args.scores,
        pilot_sizes=args.pilot_sizes,
        k=args.k,
        fit_fraction=args.fit_fraction,
        abstain_agg=args.abstain_agg,
        jobs=args.jobs,
        figures=args.figures,
    )
    report = run(config)
    width = max(len(p) for p in report.policies)
    print(f"{'policy':<{width}}  emitted/total  prec    ret     supp    oau")
    for policy in report.policies:
        cells = table_row(report.outcomes[policy])
        print(f"{policy:<{width}}  {cells[0]:>13}  {cells[1]:>6}  {cells[2]}  {cells[3]}  {cells[4]}")
    print(f"report written to {args.out}")
    if report.fallback_occurred:
        logger.warning("at least one calibration fell back to omitting everything")
        return EXIT_FALLBACK
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cssel",
        description=(
            "Select per-claim emission levels (fine, coarse, omit) with "
            "risk-controlled threshold calibration, and compare policies."
        ),
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_val = sub.add_parser("validate", help="check a JSONL corpus file")
    p_val.add_argument("corpus", help="corpus file to validate")
    p_val.add_argument(
        "--lenient",
        action="store_true",
        help="warn about unknown record keys instead of rejecting them",
    )
    p_val.set_defaults(handler=cmd_validate)

    p_syn = sub.add_parser("synth", help="generate a synthetic labeled corpus")
    p_syn.add_argument("--out", required=True, help="output corpus path")
    p_syn.add_argument("--config", help="JSON file with generator settings")
    p_syn.add_argument("--prompts", type=int, default=None, help="prompt count (default 200)")
    p_syn.add_argument("--claims-min", type=int, default=None, help="min claims per prompt (default 3)")
    p_syn.add_argument("--claims-max", type=int, default=None, help="max claims per prompt (default 8)")
    p_syn.add_argument("--p-fine", type=float, default=None, help="fine support rate (default 0.8)")
    p_syn.add_argument(
        "--q-coarse", type=float, default=None, help="coarse support rate for failed backoffs (default 0.7)"
    )
    p_syn.add_argument(
        "--monotone",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="supported fine implies supported coarse (default on)",
    )
    p_syn.add_argument(
        "--beta-pos",
        type=lambda s: _parse_tuple(s, 2, float, "--beta-pos"),
        default=None,
        help="Beta a,b for supported scores (default 8,4)",
    )
    p_syn.add_argument(
        "--beta-neg",
        type=lambda s: _parse_tuple(s, 2, float, "--beta-neg"),
        default=None,
        help="Beta a,b for unsupported scores (default 2,6)",
    )
    p_syn.add_argument("--seed", type=int, default=None, help="generator seed (default 0)")
    p_syn.set_defaults(handler=cmd_synth)

    p_run = sub.add_parser("run", help="evaluate selection policies on a corpus")
    p_run.add_argument("--corpus", required=True, help="corpus file")
    p_run.add_argument("--out", required=True, help="output directory for reports")
    p_run.add_argument("--mode", choices=("pilot", "kfold"), default="pilot", help="protocol (default pilot)")
    p_run.add_argument(
        "--policies",
        nargs="+",
        default=list(DEFAULT_POLICIES),
        help=f"policy specs (default: {' '.join(DEFAULT_POLICIES)})",
    )
    p_run.add_argument("--alpha", type=float, default=0.10, help="unsupported-emission target (default 0.10)")
    p_run.add_argument("--delta", type=float, default=0.05, help="confidence slack of the bound (default 0.05)")
    p_run.add_argument("--gamma", type=float, default=0.6, help="coarse specificity weight (default 0.6)")
    p_run.add_argument("--grid-step", type=float, default=0.01, help="threshold lattice spacing (default 0.01)")
    p_run.add_argument(
        "--grid-augment",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="add observed scores to the threshold lattice (default on)",
    )
    p_run.add_argument("--seed", type=int, default=0, help="split seed (default 0)")
    p_run.add_argument(
        "--scores",
        choices=("use", "refit"),
        default="use",
        help="use scores from the corpus, or refit the scorer (default use)",
    )
    p_run.add_argument(
        "--pilot-sizes",
        type=lambda s: _parse_tuple(s, 3, int, "--pilot-sizes"),
        default=(30, 30, 140),
        help="fit,cal,test prompt counts for pilot mode (default 30,30,140)",
    )
    p_run.add_argument("--k", type=int, default=5, help="fold count for kfold mode (default 5)")
    p_run.add_argument(
        "--fit-fraction",
        type=float,
        default=0.5,
        help="share of out-of-fold prompts used for scorer fitting (default 0.5)",
    )
    p_run.add_argument(
        "--abstain-agg",
        choices=("mean", "min", "median"),
        default="mean",
        help="response score aggregate for whole-abstain (default mean)",
    )
    p_run.add_argument("--jobs", type=int, default=1, help="parallel workers (default 1)")
    p_run.add_argument(
        "--figures",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="render utility charts next to the reports (default on)",
    )
    p_run.set_defaults(handler=cmd_run)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (CorpusError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # pragma: no cover - last resort
        logger.exception("unexpected failure")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
