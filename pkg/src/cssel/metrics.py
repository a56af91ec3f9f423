"""Emission-level decisions and claimwise quality metrics.

Each claim receives one action: emit the fine text, emit the coarse backoff,
or omit.  Actions are weighted by specificity: fine counts 1, coarse counts
gamma (0 < gamma < 1), omit counts 0.  An omitted claim asserts nothing, so
its selected label is 0 and it is excluded from precision.

Over m claims with weights w_i, emission indicators e_i, and selected labels
y_i (the label of the emitted level):

    support precision      sum(e_i * y_i) / sum(e_i)     undefined if none emitted
    specificity retention  sum(w_i) / m
    supported specificity  sum(w_i * y_i) / m
    utility (OAU)          sum(w_i * y_i - e_i * (1 - y_i)) / m

The utility charges every unsupported emission a flat penalty of 1
regardless of level, so it always equals supported specificity minus the
unsupported-emission share.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Sequence

from .corpus import ClaimRecord


class Action(IntEnum):
    """Emission level for one claim, ordered omit < coarse < fine."""

    OMIT = 0
    COARSE = 1
    FINE = 2

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, label: str) -> "Action":
        try:
            return cls[label.upper()]
        except KeyError:
            raise ValueError(f"unknown action {label!r}") from None


@dataclass(frozen=True)
class WeightScheme:
    """Specificity weights: fine 1, coarse gamma, omit 0."""

    gamma: float = 0.6

    def __post_init__(self) -> None:
        if not (0.0 < self.gamma < 1.0):
            raise ValueError(f"gamma must be in (0, 1), got {self.gamma}")

    def weight(self, action: Action) -> float:
        if action is Action.FINE:
            return 1.0
        if action is Action.COARSE:
            return self.gamma
        return 0.0


@dataclass(frozen=True)
class Decision:
    """The emission level chosen for one claim."""

    claim_id: str
    action: Action


@dataclass(frozen=True)
class MetricsReport:
    """Claimwise metrics over one decision set.

    ``prec`` is None exactly when nothing was emitted.  ``oau`` always equals
    ``supp_spec - unsupported_emitted / m`` (0 when m == 0).
    """

    m: int
    emitted: int
    fine_count: int
    coarse_count: int
    omit_count: int
    unsupported_emitted: int
    prec: float | None
    ret: float
    supp_spec: float
    oau: float
    gamma: float

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "emitted": self.emitted,
            "fine_count": self.fine_count,
            "coarse_count": self.coarse_count,
            "omit_count": self.omit_count,
            "unsupported_emitted": self.unsupported_emitted,
            "prec": self.prec,
            "ret": self.ret,
            "supp_spec": self.supp_spec,
            "oau": self.oau,
            "gamma": self.gamma,
        }


def report_from_counts(
    m: int,
    fine_count: int,
    coarse_count: int,
    fine_supported: int,
    coarse_supported: int,
    gamma: float,
) -> MetricsReport:
    """Build a report from integer tallies.

    All metric values derive from integer counts, so results never depend on
    claim iteration order and equal tallies give bit-identical floats.
    """
    emitted = fine_count + coarse_count
    omit_count = m - emitted
    unsupported = emitted - fine_supported - coarse_supported
    if not (0 <= fine_supported <= fine_count and 0 <= coarse_supported <= coarse_count):
        raise ValueError("supported counts exceed emission counts")
    if omit_count < 0:
        raise ValueError(f"emitted {emitted} exceeds m {m}")
    prec = (fine_supported + coarse_supported) / emitted if emitted > 0 else None
    if m == 0:
        ret = supp = oau = 0.0
    else:
        ret = (fine_count + gamma * coarse_count) / m
        supp = (fine_supported + gamma * coarse_supported) / m
        oau = supp - unsupported / m
    return MetricsReport(
        m=m,
        emitted=emitted,
        fine_count=fine_count,
        coarse_count=coarse_count,
        omit_count=omit_count,
        unsupported_emitted=unsupported,
        prec=prec,
        ret=ret,
        supp_spec=supp,
        oau=oau,
        gamma=gamma,
    )


def selected_label(claim: ClaimRecord, action: Action) -> int:
    """Label of the emitted level; omitting asserts nothing and scores 0."""
    if action is Action.OMIT:
        return 0
    if action is Action.FINE:
        value = claim.y_fine
    else:
        value = claim.y_coarse
    if value is None:
        raise ValueError(
            f"claim {claim.claim_id!r} lacks y_{action.label}, required to "
            f"evaluate an emitted {action.label} decision"
        )
    return value


def evaluate(
    decisions: Iterable[Decision],
    claims: Sequence[ClaimRecord],
    weights: WeightScheme | None = None,
) -> MetricsReport:
    """Score one decision per claim against the claims' support labels.

    Requires exactly one decision per claim in ``claims`` and a label for
    every emitted level.  m is the claim count, including claims of prompts
    that contributed nothing.
    """
    weights = weights or WeightScheme()
    by_id = {c.claim_id: c for c in claims}
    if len(by_id) != len(claims):
        raise ValueError("duplicate claim ids in evaluation scope")
    seen: set[str] = set()
    fine_count = coarse_count = 0
    fine_supported = coarse_supported = 0
    for d in decisions:
        claim = by_id.get(d.claim_id)
        if claim is None:
            raise ValueError(f"decision references unknown claim {d.claim_id!r}")
        if d.claim_id in seen:
            raise ValueError(f"multiple decisions for claim {d.claim_id!r}")
        seen.add(d.claim_id)
        if d.action is Action.FINE:
            fine_count += 1
            fine_supported += selected_label(claim, d.action)
        elif d.action is Action.COARSE:
            coarse_count += 1
            coarse_supported += selected_label(claim, d.action)
    if len(seen) != len(claims):
        missing = sorted(set(by_id) - seen)
        raise ValueError(f"no decision for claims {missing[:5]} ({len(missing)} total)")
    return report_from_counts(
        m=len(claims),
        fine_count=fine_count,
        coarse_count=coarse_count,
        fine_supported=fine_supported,
        coarse_supported=coarse_supported,
        gamma=weights.gamma,
    )


def fine_only_metrics(m: int, emitted: int, prec: float) -> tuple[float, float, float]:
    """(retention, supported specificity, utility) for an all-fine policy.

    For policies that never emit coarse the metrics collapse to arithmetic on
    the emission count and precision: retention is emitted / m, supported
    specificity is prec * retention, utility subtracts the unsupported share.
    """
    if m <= 0 or not (0 <= emitted <= m):
        raise ValueError(f"invalid counts m={m}, emitted={emitted}")
    ret = emitted / m
    supp = prec * ret
    oau = supp - (1.0 - prec) * ret
    return ret, supp, oau


def _fmt(value: float) -> str:
    # Banker's rounding to 4 decimals, matching float formatting semantics.
    return f"{value:.4f}"


def table_row(report: MetricsReport) -> tuple[str, str, str, str, str]:
    """Formatted cells: emitted/total, precision, retention, support, utility.

    Values are rounded half-even to 4 decimals; precision renders as an
    em dash when undefined.
    """
    prec = "—" if report.prec is None else _fmt(report.prec)
    return (
        f"{report.emitted}/{report.m}",
        prec,
        _fmt(report.ret),
        _fmt(report.supp_spec),
        _fmt(report.oau),
    )
