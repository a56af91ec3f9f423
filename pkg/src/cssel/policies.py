"""Selection policies: from drafted claims to emission-level decisions.

The two-threshold ladder is the core selector: emit fine when the fine score
clears ``tau_fine``, otherwise emit coarse when the coarse score clears
``tau_coarse``, otherwise omit.  Comparisons are boundary inclusive.
Baseline policies (emit everything, whole-response abstention, claim
dropping) and the label-informed oracle share the same decision type so one
evaluator covers all of them.

Textual policy specs:

    no-css                 emit every claim at the fine level
    whole-abstain:0.8      response-level abstention at a fixed threshold
    whole-abstain:cal      threshold picked by constrained calibration
    claim-drop:0.75        per-claim fine-or-omit at a fixed threshold
    claim-drop:cal         threshold picked by constrained calibration
    uncal:0.78,0.58        ladder with fixed thresholds
    cal                    ladder with calibrated thresholds
    oracle                 best level under the true labels
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import ClaimRecord, Corpus
from .metrics import Action, Decision

POLICY_KINDS = ("no-css", "whole-abstain", "claim-drop", "uncal", "cal", "oracle")

# Fixed ladder thresholds for the uncalibrated baseline.
DEFAULT_UNCAL = (0.78, 0.58)

DEFAULT_POLICIES = (
    "no-css",
    "whole-abstain:cal",
    "claim-drop:cal",
    "uncal:0.78,0.58",
    "cal",
    "oracle",
)

ABSTAIN_AGGREGATES = ("mean", "min", "median")


@dataclass(frozen=True)
class ThresholdPair:
    """Ladder thresholds (fine, coarse), each in [0, 1]."""

    tau_fine: float
    tau_coarse: float

    def __post_init__(self) -> None:
        for name, value in (("tau_fine", self.tau_fine), ("tau_coarse", self.tau_coarse)):
            if not (0.0 <= value <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {value}")


@dataclass(frozen=True)
class PolicySpec:
    """A parsed policy.

    ``threshold`` holds the fixed parameter of whole-abstain or claim-drop;
    ``pair`` holds ladder thresholds for uncal and for cal once resolved.
    ``calibrated`` marks parameters that come from calibration; ``fallback``
    records that the calibration found no valid parameter, in which case the
    policy omits everything.
    """

    kind: str
    threshold: float | None = None
    pair: ThresholdPair | None = None
    calibrated: bool = False
    fallback: bool = False

    def __post_init__(self) -> None:
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")

    def needs_calibration(self) -> bool:
        """True while a calibrated parameter has not been resolved yet."""
        if not self.calibrated or self.fallback:
            return False
        if self.kind == "cal":
            return self.pair is None
        return self.threshold is None

    def resolve(
        self, *, threshold: float | None = None, pair: ThresholdPair | None = None
    ) -> "PolicySpec":
        """Attach a calibrated parameter (None records the omit-all fallback)."""
        if self.kind == "cal":
            return PolicySpec(kind=self.kind, pair=pair, calibrated=True, fallback=pair is None)
        return PolicySpec(
            kind=self.kind, threshold=threshold, calibrated=True, fallback=threshold is None
        )


def parse_policy(text: str) -> PolicySpec:
    """Parse the textual policy grammar."""
    text = text.strip()
    if text == "no-css":
        return PolicySpec(kind="no-css")
    if text == "oracle":
        return PolicySpec(kind="oracle")
    if text == "cal":
        return PolicySpec(kind="cal", calibrated=True)
    if text.startswith("whole-abstain:") or text.startswith("claim-drop:"):
        kind, _, arg = text.partition(":")
        if arg == "cal":
            return PolicySpec(kind=kind, calibrated=True)
        try:
            value = float(arg)
        except ValueError:
            raise ValueError(f"bad threshold {arg!r} in policy {text!r}") from None
        if not (0.0 <= value <= 1.0):
            raise ValueError(f"threshold {value} outside [0, 1] in policy {text!r}")
        return PolicySpec(kind=kind, threshold=value)
    if text.startswith("uncal:"):
        arg = text.partition(":")[2]
        parts = arg.split(",")
        if len(parts) != 2:
            raise ValueError(f"uncal takes two thresholds, got {text!r}")
        try:
            tf, tc = (float(x) for x in parts)
        except ValueError:
            raise ValueError(f"bad thresholds in policy {text!r}") from None
        return PolicySpec(kind="uncal", pair=ThresholdPair(tf, tc))
    raise ValueError(f"unrecognized policy {text!r}")


def format_policy(spec: PolicySpec) -> str:
    """Canonical textual form of a policy spec."""
    if spec.kind in ("no-css", "oracle", "cal"):
        return spec.kind
    if spec.kind == "uncal":
        assert spec.pair is not None
        return f"uncal:{spec.pair.tau_fine:g},{spec.pair.tau_coarse:g}"
    if spec.calibrated:
        return f"{spec.kind}:cal"
    return f"{spec.kind}:{spec.threshold:g}"


def _need_score(claim: ClaimRecord, field: str) -> float:
    value = getattr(claim, field)
    if value is None:
        raise ValueError(f"claim {claim.claim_id!r} lacks {field}, required by this policy")
    return value


def select_ladder(claim: ClaimRecord, pair: ThresholdPair) -> Action:
    """Two-threshold selection, boundary inclusive at both rungs."""
    if _need_score(claim, "s_fine") >= pair.tau_fine:
        return Action.FINE
    if _need_score(claim, "s_coarse") >= pair.tau_coarse:
        return Action.COARSE
    return Action.OMIT


def apply_ladder(claims: Sequence[ClaimRecord], pair: ThresholdPair) -> list[Decision]:
    return [Decision(c.claim_id, select_ladder(c, pair)) for c in claims]


def apply_no_css(claims: Sequence[ClaimRecord]) -> list[Decision]:
    """Emit every claim at the fine level."""
    return [Decision(c.claim_id, Action.FINE) for c in claims]


def apply_claim_drop(claims: Sequence[ClaimRecord], tau: float) -> list[Decision]:
    """Fine when the fine score clears tau, otherwise omit. No backoff."""
    return [
        Decision(c.claim_id, Action.FINE if _need_score(c, "s_fine") >= tau else Action.OMIT)
        for c in claims
    ]


def response_score(claims: Sequence[ClaimRecord], aggregate: str = "mean") -> float:
    """Aggregate a prompt's fine scores into one response-level score."""
    if not claims:
        raise ValueError("response_score needs at least one claim")
    values = np.array([_need_score(c, "s_fine") for c in claims], dtype=np.float64)
    if aggregate == "mean":
        return float(values.mean())
    if aggregate == "min":
        return float(values.min())
    if aggregate == "median":
        return float(np.median(values))
    raise ValueError(f"unknown aggregate {aggregate!r}")


def apply_whole_abstain(
    claims: Sequence[ClaimRecord], theta: float, aggregate: str = "mean"
) -> list[Decision]:
    """All-or-nothing for one prompt's claims.

    Emit every claim fine when the aggregated response score clears theta,
    otherwise omit every claim.  Zero claims yield zero decisions.
    """
    if not claims:
        return []
    action = Action.FINE if response_score(claims, aggregate) >= theta else Action.OMIT
    return [Decision(c.claim_id, action) for c in claims]


def apply_oracle(claims: Sequence[ClaimRecord]) -> list[Decision]:
    """Pick the most specific supported level using the true labels."""
    out: list[Decision] = []
    for c in claims:
        if c.y_fine is None or c.y_coarse is None:
            raise ValueError(f"claim {c.claim_id!r} lacks labels, required by oracle")
        if c.y_fine == 1:
            out.append(Decision(c.claim_id, Action.FINE))
        elif c.y_coarse == 1:
            out.append(Decision(c.claim_id, Action.COARSE))
        else:
            out.append(Decision(c.claim_id, Action.OMIT))
    return out


def apply_policy(
    spec: PolicySpec,
    corpus_slice: Corpus,
    aggregate: str = "mean",
) -> list[Decision]:
    """Apply a resolved policy to every claim of a corpus slice.

    Whole-response abstention groups claims by prompt; all other policies are
    claimwise.  A calibrated spec whose parameter is the fallback marker
    (None) omits everything.
    """
    if spec.needs_calibration():
        raise ValueError(f"policy {format_policy(spec)!r} must be resolved by calibration first")
    claims = corpus_slice.claims
    if spec.fallback:
        return [Decision(c.claim_id, Action.OMIT) for c in claims]
    if spec.kind == "no-css":
        return apply_no_css(claims)
    if spec.kind == "oracle":
        return apply_oracle(claims)
    if spec.kind in ("uncal", "cal"):
        assert spec.pair is not None
        return apply_ladder(claims, spec.pair)
    if spec.kind == "claim-drop":
        assert spec.threshold is not None
        return apply_claim_drop(claims, spec.threshold)
    if spec.kind == "whole-abstain":
        assert spec.threshold is not None
        out: list[Decision] = []
        for prompt in corpus_slice.prompts:
            out.extend(
                apply_whole_abstain(
                    corpus_slice.claims_for_prompt(prompt.prompt_id),
                    spec.threshold,
                    aggregate,
                )
            )
        return out
    raise ValueError(f"unknown policy kind {spec.kind!r}")
