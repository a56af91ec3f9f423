"""Constrained threshold search on a calibration split.

A threshold setting is valid when the one-sided upper confidence bound on
its unsupported-emission rate over the calibration claims stays at or below
the target alpha.  Among valid settings the search maximizes calibration
utility, breaking ties toward higher retention, then a lower bound, then the
lexicographically smaller thresholds.  If no setting is valid the search
falls back to omitting everything and says so loudly.

The candidate grid is an even lattice over [0, 1] on each axis, optionally
augmented with the observed scores so every achievable decision boundary is
represented.  The sweep aggregates integer claim tallies with cumulative
histograms, which keeps the full Cartesian product cheap and makes every
pair's metrics exactly equal to what the evaluator would report.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import ClaimRecord, Corpus
from .metrics import Action, WeightScheme, report_from_counts
from .policies import ThresholdPair, response_score, select_ladder
from .stats import binom_cdf_many, cp_upper

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CalibrationConfig:
    """Search settings.

    ``alpha`` is the unsupported-emission target; ``delta`` the confidence
    slack of the binomial upper bound; ``grid_step`` the lattice spacing;
    ``augment`` adds observed scores to the lattice.  alpha may be 1.0,
    which makes the risk constraint vacuous.
    """

    alpha: float = 0.10
    delta: float = 0.05
    grid_step: float = 0.01
    augment: bool = True

    def __post_init__(self) -> None:
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if not (0.0 < self.delta < 1.0):
            raise ValueError(f"delta must be in (0, 1), got {self.delta}")
        if not (0.0 < self.grid_step <= 0.5):
            raise ValueError(f"grid_step must be in (0, 0.5], got {self.grid_step}")


@dataclass(frozen=True)
class CalibrationResult:
    """Outcome of the two-threshold search."""

    chosen: ThresholdPair | None
    fallback: bool
    cal_oau: float
    cal_ret: float
    cal_bound: float | None
    cal_emitted: int
    cal_unsupported: int
    valid_pair_count: int
    grid_size: int
    m_cal: int

    def to_dict(self) -> dict:
        return {
            "chosen": (
                None
                if self.chosen is None
                else {"tau_fine": self.chosen.tau_fine, "tau_coarse": self.chosen.tau_coarse}
            ),
            "fallback": self.fallback,
            "cal_oau": self.cal_oau,
            "cal_ret": self.cal_ret,
            "cal_bound": self.cal_bound,
            "cal_emitted": self.cal_emitted,
            "cal_unsupported": self.cal_unsupported,
            "valid_pair_count": self.valid_pair_count,
            "grid_size": self.grid_size,
            "m_cal": self.m_cal,
        }


@dataclass(frozen=True)
class ScalarCalibrationResult:
    """Outcome of a one-dimensional search (claim-drop or whole-abstain)."""

    chosen: float | None
    fallback: bool
    cal_oau: float
    cal_ret: float
    cal_bound: float | None
    cal_emitted: int
    cal_unsupported: int
    valid_count: int
    grid_size: int
    m_cal: int

    def to_dict(self) -> dict:
        return {
            "chosen": self.chosen,
            "fallback": self.fallback,
            "cal_oau": self.cal_oau,
            "cal_ret": self.cal_ret,
            "cal_bound": self.cal_bound,
            "cal_emitted": self.cal_emitted,
            "cal_unsupported": self.cal_unsupported,
            "valid_count": self.valid_count,
            "grid_size": self.grid_size,
            "m_cal": self.m_cal,
        }


def _lattice(step: float) -> np.ndarray:
    count = int(math.floor(1.0 / step + 1e-9))
    values = np.round(np.arange(count + 1, dtype=np.float64) * step, 12)
    values = values[values <= 1.0]
    if values[-1] < 1.0:
        values = np.append(values, 1.0)
    return values


def build_axis(step: float, observed: Sequence[float] = ()) -> np.ndarray:
    """Ascending unique threshold axis: the lattice plus observed scores."""
    values = _lattice(step)
    if len(observed):
        values = np.concatenate([values, np.asarray(observed, dtype=np.float64)])
    return np.unique(values)


def build_grid(
    claims: Sequence[ClaimRecord], config: CalibrationConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Fine and coarse threshold axes for the pair grid.

    The grid itself is the Cartesian product of the two axes, enumerated in
    ascending (tau_fine, tau_coarse) order.
    """
    observed_f: list[float] = []
    observed_c: list[float] = []
    if config.augment:
        for c in claims:
            if c.s_fine is not None:
                observed_f.append(c.s_fine)
            if c.s_coarse is not None:
                observed_c.append(c.s_coarse)
    return build_axis(config.grid_step, observed_f), build_axis(config.grid_step, observed_c)


def pair_risk(
    pair: ThresholdPair, claims: Sequence[ClaimRecord], delta: float
) -> tuple[int, int, float]:
    """(unsupported emitted, emitted, upper bound) for one threshold pair.

    The bound is the smallest rate the emitted sample cannot rule out at
    confidence 1 - delta.  A pair that emits nothing has no bound; it is
    reported as infinity and is never valid.
    """
    k = n = 0
    for claim in claims:
        action = select_ladder(claim, pair)
        if action is Action.OMIT:
            continue
        label = claim.y_fine if action is Action.FINE else claim.y_coarse
        if label is None:
            raise ValueError(f"claim {claim.claim_id!r} lacks the label for level {action.label}")
        n += 1
        k += 1 - label
    if n == 0:
        return 0, 0, math.inf
    return k, n, cp_upper(k, n, delta)


def _cal_arrays(claims: Sequence[ClaimRecord]) -> tuple[np.ndarray, ...]:
    if not claims:
        raise ValueError("calibration needs at least one claim")
    missing = [
        c.claim_id
        for c in claims
        if c.s_fine is None or c.s_coarse is None or c.y_fine is None or c.y_coarse is None
    ]
    if missing:
        raise ValueError(
            f"calibration claims need scores and labels; missing on {missing[:5]} "
            f"({len(missing)} total)"
        )
    s_f = np.array([c.s_fine for c in claims], dtype=np.float64)
    s_c = np.array([c.s_coarse for c in claims], dtype=np.float64)
    y_f = np.array([c.y_fine for c in claims], dtype=np.int64)
    y_c = np.array([c.y_coarse for c in claims], dtype=np.int64)
    return s_f, s_c, y_f, y_c


def _suffix_bincount(idx: np.ndarray, length: int, weights: np.ndarray | None = None) -> np.ndarray:
    counts = np.bincount(idx, weights=weights, minlength=length)
    if weights is None:
        counts = counts.astype(np.int64)
    else:
        counts = np.rint(counts).astype(np.int64)
    return counts[::-1].cumsum()[::-1]


def _validity_mask(
    k: np.ndarray, n: np.ndarray, alpha: float, delta: float
) -> np.ndarray:
    """Where cp_upper(k, n, delta) <= alpha, tested without inverting.

    The upper bound is at or below alpha exactly when the binomial CDF at
    alpha is at or below delta, because the CDF is decreasing in p.  alpha
    at 1.0 short-circuits: every emitting pair is valid.
    """
    if alpha >= 1.0:
        return n >= 1
    shape = n.shape
    k_flat = k.reshape(-1)
    n_flat = n.reshape(-1)
    base = int(n_flat.max()) + 1
    codes = k_flat * base + n_flat
    unique_codes, inverse = np.unique(codes, return_inverse=True)
    ku = unique_codes // base
    nu = unique_codes % base
    ok = np.zeros(unique_codes.shape, dtype=bool)
    for nn in np.unique(nu):
        group = nu == nn
        if nn == 0:
            continue
        ok[group] = binom_cdf_many(int(nn), alpha, ku[group]) <= delta
    return ok[inverse].reshape(shape) & (n >= 1)


def _pick(
    oau: np.ndarray,
    ret: np.ndarray,
    k: np.ndarray,
    n: np.ndarray,
    valid: np.ndarray,
    alpha: float,
    delta: float,
) -> tuple[int, float] | None:
    """Flat index of the winning grid cell plus its exact bound.

    Maximizes utility, then retention, then prefers the lower exact bound,
    then the first cell in ascending axis order.  Every candidate's bound is
    re-verified with the exact inversion before it can win, so a cell sitting
    within bisection tolerance of alpha can never be chosen incorrectly.
    """
    valid = valid.copy()
    bound_memo: dict[tuple[int, int], float] = {}

    def exact_bound(kk: int, nn: int) -> float:
        key = (kk, nn)
        if key not in bound_memo:
            bound_memo[key] = cp_upper(kk, nn, delta)
        return bound_memo[key]

    while valid.any():
        masked_oau = np.where(valid, oau, -np.inf)
        best_oau = masked_oau.max()
        tie = valid & (masked_oau == best_oau)
        masked_ret = np.where(tie, ret, -np.inf)
        best_ret = masked_ret.max()
        tie &= masked_ret == best_ret
        flat_candidates = np.flatnonzero(tie.reshape(-1))
        k_flat = k.reshape(-1)
        n_flat = n.reshape(-1)
        bounds = np.array(
            [exact_bound(int(k_flat[i]), int(n_flat[i])) for i in flat_candidates]
        )
        passing = bounds <= alpha
        if passing.any():
            best_bound = bounds[passing].min()
            winner = flat_candidates[passing & (bounds == best_bound)][0]
            return int(winner), float(best_bound)
        # The whole tie set sat within bisection tolerance of alpha and
        # failed exact verification; drop those cells and rescan.
        valid.reshape(-1)[flat_candidates] = False
    return None


def calibrate(
    claims: Sequence[ClaimRecord],
    config: CalibrationConfig | None = None,
    weights: WeightScheme | None = None,
) -> CalibrationResult:
    """Search the pair grid for the best valid ladder thresholds.

    Every grid pair is evaluated on the calibration claims.  Valid pairs
    emit at least one claim and carry an upper confidence bound at or below
    alpha; among them the pair with the highest calibration utility wins.
    With no valid pair the result is the omit-everything fallback, flagged
    and logged as a warning.
    """
    config = config or CalibrationConfig()
    weights = weights or WeightScheme()
    gamma = weights.gamma
    s_f, s_c, y_f, y_c = _cal_arrays(claims)
    m = len(claims)
    fine_axis, coarse_axis = build_grid(claims, config)
    a, b = len(fine_axis), len(coarse_axis)

    # Highest axis index at which each claim still clears the threshold.
    fmax = np.searchsorted(fine_axis, s_f, side="right") - 1
    cmax = np.searchsorted(coarse_axis, s_c, side="right") - 1

    # Fine tallies per fine index: claims with s_fine >= fine_axis[f].
    n_fine = _suffix_bincount(fmax, a)
    sup_fine = _suffix_bincount(fmax, a, weights=y_f.astype(np.float64))

    # Coarse tallies per (fine index, coarse index): claims that fall off the
    # fine rung (fmax < f) and clear the coarse rung (cmax >= c).  Claims
    # enter at row fmax + 1; a forward cumsum over f then a suffix cumsum
    # over c turns the point histogram into the full tally matrix.
    h_cnt = np.zeros((a + 1, b), dtype=np.int64)
    h_sup = np.zeros((a + 1, b), dtype=np.int64)
    np.add.at(h_cnt, (fmax + 1, cmax), 1)
    np.add.at(h_sup, (fmax + 1, cmax), y_c)
    n_coarse = h_cnt.cumsum(axis=0)[:a][:, ::-1].cumsum(axis=1)[:, ::-1]
    sup_coarse = h_sup.cumsum(axis=0)[:a][:, ::-1].cumsum(axis=1)[:, ::-1]

    n = n_fine[:, None] + n_coarse
    k = (n_fine - sup_fine)[:, None] + (n_coarse - sup_coarse)
    # Same arithmetic as report_from_counts, elementwise.
    ret = (n_fine[:, None] + gamma * n_coarse) / m
    supp = (sup_fine[:, None] + gamma * sup_coarse) / m
    oau = supp - k / m

    valid = _validity_mask(k, n, config.alpha, config.delta)
    valid_pair_count = int(valid.sum())
    picked = _pick(oau, ret, k, n, valid, config.alpha, config.delta)
    if picked is None:
        logger.warning(
            "calibration found no valid threshold pair over %d candidates "
            "(alpha=%g, delta=%g, m_cal=%d); falling back to omitting everything",
            a * b,
            config.alpha,
            config.delta,
            m,
        )
        return CalibrationResult(
            chosen=None,
            fallback=True,
            cal_oau=0.0,
            cal_ret=0.0,
            cal_bound=None,
            cal_emitted=0,
            cal_unsupported=0,
            valid_pair_count=0,
            grid_size=a * b,
            m_cal=m,
        )
    flat, bound = picked
    f_idx, c_idx = divmod(flat, b)
    report = report_from_counts(
        m=m,
        fine_count=int(n_fine[f_idx]),
        coarse_count=int(n_coarse[f_idx, c_idx]),
        fine_supported=int(sup_fine[f_idx]),
        coarse_supported=int(sup_coarse[f_idx, c_idx]),
        gamma=gamma,
    )
    return CalibrationResult(
        chosen=ThresholdPair(float(fine_axis[f_idx]), float(coarse_axis[c_idx])),
        fallback=False,
        cal_oau=report.oau,
        cal_ret=report.ret,
        cal_bound=bound,
        cal_emitted=int(n[f_idx, c_idx]),
        cal_unsupported=int(k[f_idx, c_idx]),
        valid_pair_count=valid_pair_count,
        grid_size=a * b,
        m_cal=m,
    )


def _calibrate_scalar(
    axis: np.ndarray,
    unit_max_idx: np.ndarray,
    unit_counts: np.ndarray,
    unit_supported: np.ndarray,
    m: int,
    config: CalibrationConfig,
    weights: WeightScheme,
) -> ScalarCalibrationResult:
    """Shared one-dimensional search over fine-or-omit threshold policies.

    A unit is whatever the threshold gates as a block: a single claim for
    claim dropping, a whole prompt for response-level abstention.  Unit i
    emits its claims fine at every axis index <= unit_max_idx[i].
    """
    gamma = weights.gamma
    length = len(axis)
    cnt = _suffix_bincount(unit_max_idx, length, weights=unit_counts.astype(np.float64))
    sup = _suffix_bincount(unit_max_idx, length, weights=unit_supported.astype(np.float64))
    n = cnt
    k = cnt - sup
    ret = (cnt + gamma * 0) / m
    supp = (sup + gamma * 0) / m
    oau = supp - k / m

    valid = _validity_mask(k, n, config.alpha, config.delta)
    valid_count = int(valid.sum())
    picked = _pick(oau, ret, k, n, valid, config.alpha, config.delta)
    if picked is None:
        logger.warning(
            "scalar calibration found no valid threshold over %d candidates "
            "(alpha=%g, delta=%g, m_cal=%d); falling back to omitting everything",
            length,
            config.alpha,
            config.delta,
            m,
        )
        return ScalarCalibrationResult(
            chosen=None,
            fallback=True,
            cal_oau=0.0,
            cal_ret=0.0,
            cal_bound=None,
            cal_emitted=0,
            cal_unsupported=0,
            valid_count=0,
            grid_size=length,
            m_cal=m,
        )
    idx, bound = picked
    report = report_from_counts(
        m=m,
        fine_count=int(cnt[idx]),
        coarse_count=0,
        fine_supported=int(sup[idx]),
        coarse_supported=0,
        gamma=gamma,
    )
    return ScalarCalibrationResult(
        chosen=float(axis[idx]),
        fallback=False,
        cal_oau=report.oau,
        cal_ret=report.ret,
        cal_bound=bound,
        cal_emitted=int(n[idx]),
        cal_unsupported=int(k[idx]),
        valid_count=valid_count,
        grid_size=length,
        m_cal=m,
    )


def calibrate_claim_drop(
    claims: Sequence[ClaimRecord],
    config: CalibrationConfig | None = None,
    weights: WeightScheme | None = None,
) -> ScalarCalibrationResult:
    """Constrained search for the claim-drop threshold."""
    config = config or CalibrationConfig()
    weights = weights or WeightScheme()
    if not claims:
        raise ValueError("calibration needs at least one claim")
    missing = [c.claim_id for c in claims if c.s_fine is None or c.y_fine is None]
    if missing:
        raise ValueError(
            f"claim-drop calibration needs s_fine and y_fine; missing on {missing[:5]}"
        )
    s_f = np.array([c.s_fine for c in claims], dtype=np.float64)
    y_f = np.array([c.y_fine for c in claims], dtype=np.int64)
    axis = build_axis(config.grid_step, s_f if config.augment else ())
    tmax = np.searchsorted(axis, s_f, side="right") - 1
    return _calibrate_scalar(
        axis,
        tmax,
        np.ones(len(claims), dtype=np.int64),
        y_f,
        len(claims),
        config,
        weights,
    )


def calibrate_whole_abstain(
    cal_slice: Corpus,
    config: CalibrationConfig | None = None,
    weights: WeightScheme | None = None,
    aggregate: str = "mean",
) -> ScalarCalibrationResult:
    """Constrained search for the response-level abstention threshold.

    Prompts emit all-or-nothing, so the unit of the sweep is a prompt with
    its claim count and supported count.  Prompts with no claims contribute
    no emissions and no constraint, but their (zero) claims still belong to
    the denominator population.
    """
    config = config or CalibrationConfig()
    weights = weights or WeightScheme()
    r_values: list[float] = []
    counts: list[int] = []
    supported: list[int] = []
    m = 0
    for prompt in cal_slice.prompts:
        prompt_claims = cal_slice.claims_for_prompt(prompt.prompt_id)
        m += len(prompt_claims)
        if not prompt_claims:
            continue
        missing = [c.claim_id for c in prompt_claims if c.s_fine is None or c.y_fine is None]
        if missing:
            raise ValueError(
                f"whole-abstain calibration needs s_fine and y_fine; missing on {missing[:5]}"
            )
        r_values.append(response_score(prompt_claims, aggregate))
        counts.append(len(prompt_claims))
        supported.append(sum(c.y_fine for c in prompt_claims))
    if m == 0:
        raise ValueError("calibration needs at least one claim")
    axis = build_axis(config.grid_step, r_values if config.augment else ())
    r_arr = np.array(r_values, dtype=np.float64)
    tmax = np.searchsorted(axis, r_arr, side="right") - 1
    return _calibrate_scalar(
        axis,
        tmax,
        np.array(counts, dtype=np.int64),
        np.array(supported, dtype=np.int64),
        m,
        config,
        weights,
    )
