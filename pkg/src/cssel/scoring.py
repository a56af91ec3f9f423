"""Support scoring: lexical features, an optional judge, and a combiner.

Each candidate text (fine or coarse variant of a claim) is compared against
its prompt's evidence passages.  Three cheap lexical features plus an
optional remote-judge probability feed a small logistic model trained from
scratch; its sigmoid output is the support score.  Every piece degrades
gracefully: with no judge endpoint the combiner runs on lexical features
alone, and with a degenerate training set it falls back to passing one
feature through unchanged.

The judge endpoint is configured by environment:

    CSS_JUDGE_URL      POST endpoint; unset disables the judge
    CSS_JUDGE_TOKEN    optional bearer token
    CSS_CACHE_DIR      response cache directory (content addressed)
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import requests

from .corpus import ClaimRecord, atomic_write_text

logger = logging.getLogger(__name__)

_TOKEN_SPLIT = re.compile(r"[^0-9A-Za-z]+")

# Training hyperparameters for the logistic combiner.  Fixed so a refit on
# identical rows is bit-identical.
GD_ITERATIONS = 500
GD_LEARNING_RATE = 0.1
GD_L2 = 1e-3

# Neutral stand-in when a judge value is unavailable for a single row.
JUDGE_NEUTRAL = 0.5

LEXICAL_FEATURES = ("token_jaccard", "number_match", "entity_overlap")

ENV_JUDGE_URL = "CSS_JUDGE_URL"
ENV_JUDGE_TOKEN = "CSS_JUDGE_TOKEN"
ENV_CACHE_DIR = "CSS_CACHE_DIR"


@dataclass(frozen=True)
class FeatureVector:
    """Per-candidate features, each in [0, 1]. judge_score may be absent."""

    token_jaccard: float
    number_match: float
    entity_overlap: float
    judge_score: float | None = None


def _tokens(text: str) -> list[str]:
    return [t for t in _TOKEN_SPLIT.split(text) if t]


def _token_jaccard(claim_text: str, evidence: Sequence[str]) -> float:
    claim_set = set(_tokens(claim_text.lower()))
    if not claim_set:
        return 0.0
    best = 0.0
    for passage in evidence:
        passage_set = set(_tokens(passage.lower()))
        union = claim_set | passage_set
        if union:
            best = max(best, len(claim_set & passage_set) / len(union))
    return best


def _fraction_found(targets: Sequence[object], evidence_tokens: list) -> float:
    """Fraction of targets present in the evidence; vacuously 1 with none."""
    if not targets:
        return 1.0
    found = sum(1 for t in targets if any(t in toks for toks in evidence_tokens))
    return found / len(targets)


def _capitalized_spans(tokens: Sequence[str]) -> list[tuple[str, ...]]:
    spans: list[tuple[str, ...]] = []
    run: list[str] = []
    for tok in tokens:
        if tok[:1].isupper():
            run.append(tok)
        elif run:
            spans.append(tuple(run))
            run = []
    if run:
        spans.append(tuple(run))
    return spans


def _contains_span(haystack: list[str], span: tuple[str, ...]) -> bool:
    width = len(span)
    return any(tuple(haystack[i : i + width]) == span for i in range(len(haystack) - width + 1))


def lexical_features(claim_text: str, evidence: Sequence[str]) -> FeatureVector:
    """Surface-overlap features of one candidate text against the evidence.

    token_jaccard is the best Jaccard overlap of lowercased alphanumeric
    tokens over the passages.  number_match is the fraction of digit-bearing
    tokens found verbatim (original case) in some passage.  entity_overlap
    is the fraction of capitalized token runs found contiguously in some
    passage.  The two fractions are vacuously 1 when the claim has no such
    tokens; empty evidence zeroes all three.
    """
    if not evidence:
        return FeatureVector(0.0, 0.0, 0.0)
    cased = _tokens(claim_text)
    evidence_cased = [_tokens(p) for p in evidence]
    numbers = [t for t in cased if any(ch.isdigit() for ch in t)]
    number_match = _fraction_found(numbers, [set(toks) for toks in evidence_cased])
    spans = _capitalized_spans(cased)
    if spans:
        found = sum(1 for s in spans if any(_contains_span(toks, s) for toks in evidence_cased))
        entity_overlap = found / len(spans)
    else:
        entity_overlap = 1.0
    return FeatureVector(
        token_jaccard=_token_jaccard(claim_text, evidence),
        number_match=number_match,
        entity_overlap=entity_overlap,
    )


@dataclass(frozen=True)
class CombinerModel:
    """Score combiner: logistic weights over features, or a passthrough.

    ``feature_names`` always ends with the constant "bias" feature and fixes
    the weight order.  ``schema_version`` 1 is lexical only; 2 adds the
    judge feature.  ``kind`` "identity" passes ``identity_feature`` through
    (clamped into (0, 1)) and is the fallback for degenerate training sets.
    """

    schema_version: int
    feature_names: tuple[str, ...]
    weights: tuple[float, ...]
    kind: str = "logistic"
    identity_feature: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("logistic", "identity"):
            raise ValueError(f"unknown combiner kind {self.kind!r}")
        if len(self.weights) != len(self.feature_names):
            raise ValueError(
                f"{len(self.weights)} weights for {len(self.feature_names)} features"
            )

    @property
    def uses_judge(self) -> bool:
        return "judge_score" in self.feature_names or self.identity_feature == "judge_score"

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "feature_names": list(self.feature_names),
            "weights": list(self.weights),
            "kind": self.kind,
            "identity_feature": self.identity_feature,
        }

    def save(self, path: str | Path) -> None:
        atomic_write_text(path, json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "CombinerModel":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            schema_version=obj["schema_version"],
            feature_names=tuple(obj["feature_names"]),
            weights=tuple(obj["weights"]),
            kind=obj["kind"],
            identity_feature=obj.get("identity_feature"),
        )


def _schema_for(with_judge: bool) -> tuple[int, tuple[str, ...]]:
    if with_judge:
        return 2, LEXICAL_FEATURES + ("judge_score", "bias")
    return 1, LEXICAL_FEATURES + ("bias",)


def _vectorize(fv: FeatureVector, feature_names: Sequence[str]) -> np.ndarray:
    values = []
    for name in feature_names:
        if name == "bias":
            values.append(1.0)
        elif name == "judge_score":
            values.append(JUDGE_NEUTRAL if fv.judge_score is None else fv.judge_score)
        else:
            values.append(getattr(fv, name))
    return np.array(values, dtype=np.float64)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    expz = np.exp(z[~pos])
    out[~pos] = expz / (1.0 + expz)
    return out


def fit_combiner(
    features: Sequence[FeatureVector], labels: Sequence[int]
) -> CombinerModel:
    """Fit the logistic combiner by full-batch gradient descent.

    Deterministic by construction: zero-initialized weights, fixed iteration
    count, learning rate, and L2 strength (the bias is not penalized).  The
    judge feature enters the schema when any training row carries one. If
    all labels agree no direction is learnable; the model degrades to the
    identity on the judge score when available, else on token_jaccard.
    """
    if len(features) != len(labels) or not features:
        raise ValueError("need one label per feature row and at least one row")
    if any(label not in (0, 1) for label in labels):
        raise ValueError("labels must be 0 or 1")
    with_judge = any(fv.judge_score is not None for fv in features)
    version, names = _schema_for(with_judge)
    if len(set(labels)) == 1:
        identity = "judge_score" if with_judge else "token_jaccard"
        logger.warning(
            "single-class training set (%d rows, all label %d); "
            "falling back to identity combiner on %s",
            len(labels),
            labels[0],
            identity,
        )
        return CombinerModel(
            schema_version=version,
            feature_names=names,
            weights=(0.0,) * len(names),
            kind="identity",
            identity_feature=identity,
        )
    x = np.stack([_vectorize(fv, names) for fv in features])
    y = np.array(labels, dtype=np.float64)
    w = np.zeros(len(names), dtype=np.float64)
    l2_mask = np.array([0.0 if name == "bias" else 1.0 for name in names])
    n_rows = len(y)
    for _ in range(GD_ITERATIONS):
        prob = _sigmoid(x @ w)
        grad = x.T @ (prob - y) / n_rows + GD_L2 * (w * l2_mask)
        w = w - GD_LEARNING_RATE * grad
    return CombinerModel(
        schema_version=version,
        feature_names=names,
        weights=tuple(float(v) for v in w),
        kind="logistic",
    )


def score_with(model: CombinerModel, fv: FeatureVector) -> float:
    """Support score for one feature vector, always inside (0, 1)."""
    if model.kind == "identity":
        if model.identity_feature == "judge_score":
            value = JUDGE_NEUTRAL if fv.judge_score is None else fv.judge_score
        else:
            value = getattr(fv, model.identity_feature)
        return float(min(max(value, 1e-6), 1.0 - 1e-6))
    z = float(_vectorize(fv, model.feature_names) @ np.array(model.weights))
    return float(_sigmoid(np.array([z]))[0])


class JudgeClient:
    """Client for a remote support judge with a content-addressed cache.

    The endpoint receives ``{"claim", "level", "evidence"}`` and answers
    ``{"support_prob": r}`` with r in [0, 1].  Responses are cached by the
    hash of the request body, so identical requests never hit the network
    twice.  Transient failures are retried a bounded number of times with
    capped exponential backoff; a request that never succeeds yields None
    and the caller proceeds without it.
    """

    def __init__(
        self,
        url: str,
        token: str | None = None,
        cache_dir: str | Path | None = None,
        timeout: float = 10.0,
        max_attempts: int = 3,
        backoff: float = 0.25,
        backoff_cap: float = 2.0,
    ) -> None:
        self.url = url
        self.token = token
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.backoff_cap = backoff_cap

    @classmethod
    def from_env(cls) -> "JudgeClient | None":
        url = os.environ.get(ENV_JUDGE_URL)
        if not url:
            return None
        cache = os.environ.get(ENV_CACHE_DIR) or Path.home() / ".cache" / "cssel"
        return cls(url=url, token=os.environ.get(ENV_JUDGE_TOKEN), cache_dir=cache)

    def _cache_path(self, payload_bytes: bytes) -> Path | None:
        if self.cache_dir is None:
            return None
        digest = hashlib.sha256(payload_bytes).hexdigest()
        return self.cache_dir / f"{digest}.json"

    @staticmethod
    def _valid_prob(value: object) -> float | None:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return None
        v = float(value)
        return v if 0.0 <= v <= 1.0 else None

    def request(self, claim_text: str, level: str, evidence: Sequence[str]) -> float | None:
        payload = {"claim": claim_text, "level": level, "evidence": list(evidence)}
        body = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
        body_bytes = body.encode("utf-8")
        cache_path = self._cache_path(body_bytes)
        if cache_path is not None and cache_path.exists():
            try:
                cached = json.loads(cache_path.read_text(encoding="utf-8"))
                value = self._valid_prob(cached.get("support_prob"))
                if value is not None:
                    return value
            except (json.JSONDecodeError, OSError):
                pass  # corrupt cache entry: fall through and refetch
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        for attempt in range(self.max_attempts):
            try:
                response = requests.post(
                    self.url, data=body_bytes, headers=headers, timeout=self.timeout
                )
                if response.status_code == 200:
                    value = self._valid_prob(response.json().get("support_prob"))
                    if value is not None:
                        if cache_path is not None:
                            atomic_write_text(cache_path, json.dumps({"support_prob": value}))
                        return value
                    logger.warning("judge returned an unusable payload; treating as failure")
                else:
                    logger.warning("judge returned HTTP %d", response.status_code)
            except (requests.RequestException, ValueError) as exc:
                logger.warning("judge request failed: %s", exc)
            if attempt + 1 < self.max_attempts:
                time.sleep(min(self.backoff * (2**attempt), self.backoff_cap))
        logger.warning("judge unavailable after %d attempts; score absent", self.max_attempts)
        return None


def featurize(
    claim_text: str,
    evidence: Sequence[str],
    judge_value: float | None = None,
) -> FeatureVector:
    """Lexical features plus an already-fetched judge value, if any."""
    base = lexical_features(claim_text, evidence)
    if judge_value is None or not evidence:
        return base
    return replace(base, judge_score=judge_value)


def _collect_judge(
    tasks: list[tuple[str, str, str, tuple[str, ...]]],
    judge: JudgeClient | None,
    jobs: int,
) -> dict[tuple[str, str], float | None]:
    """Run judge requests, optionally in parallel. Keyed by (claim_id, level)."""
    if judge is None or not tasks:
        return {}

    def fetch(task: tuple[str, str, str, tuple[str, ...]]) -> tuple[tuple[str, str], float | None]:
        claim_id, level, text, evidence = task
        if not evidence:
            return (claim_id, level), None
        return (claim_id, level), judge.request(text, level, evidence)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return dict(pool.map(fetch, tasks))
    return dict(map(fetch, tasks))


def build_fit_rows(
    claims: Sequence[ClaimRecord],
    evidence_by_prompt: Mapping[str, tuple[str, ...]],
    judge: JudgeClient | None = None,
    jobs: int = 1,
) -> tuple[list[FeatureVector], list[int]]:
    """Training rows from labeled candidates.

    Each labeled level of a claim contributes one row: the fine text with
    y_fine, the coarse text with y_coarse.  Row order follows claim order,
    fine before coarse, so a refit sees the identical matrix.
    """
    tasks: list[tuple[str, str, str, tuple[str, ...]]] = []
    for claim in claims:
        evidence = evidence_by_prompt[claim.prompt_id]
        if claim.y_fine is not None:
            tasks.append((claim.claim_id, "fine", claim.fine_text, evidence))
        if claim.y_coarse is not None:
            tasks.append((claim.claim_id, "coarse", claim.coarse_text, evidence))
    judge_map = _collect_judge(tasks, judge, jobs)
    rows: list[FeatureVector] = []
    labels: list[int] = []
    for claim in claims:
        evidence = evidence_by_prompt[claim.prompt_id]
        if claim.y_fine is not None:
            rows.append(
                featurize(claim.fine_text, evidence, judge_map.get((claim.claim_id, "fine")))
            )
            labels.append(claim.y_fine)
        if claim.y_coarse is not None:
            rows.append(
                featurize(claim.coarse_text, evidence, judge_map.get((claim.claim_id, "coarse")))
            )
            labels.append(claim.y_coarse)
    return rows, labels


def score_claims(
    model: CombinerModel,
    claims: Sequence[ClaimRecord],
    evidence_by_prompt: Mapping[str, tuple[str, ...]],
    judge: JudgeClient | None = None,
    overwrite: bool = False,
    jobs: int = 1,
) -> list[ClaimRecord]:
    """Fill s_fine and s_coarse on the given claims.

    Scores already present are kept unless ``overwrite`` is set.  When the
    model schema includes the judge feature but no client is available (or a
    request permanently fails), the judge value is imputed neutrally and
    scoring still completes.
    """
    tasks: list[tuple[str, str, str, tuple[str, ...]]] = []
    if model.uses_judge and judge is not None:
        for claim in claims:
            evidence = evidence_by_prompt[claim.prompt_id]
            if claim.s_fine is None or overwrite:
                tasks.append((claim.claim_id, "fine", claim.fine_text, evidence))
            if claim.s_coarse is None or overwrite:
                tasks.append((claim.claim_id, "coarse", claim.coarse_text, evidence))
    judge_map = _collect_judge(tasks, judge, jobs)
    out: list[ClaimRecord] = []
    for claim in claims:
        evidence = evidence_by_prompt[claim.prompt_id]
        s_fine = claim.s_fine
        s_coarse = claim.s_coarse
        if s_fine is None or overwrite:
            fv = featurize(claim.fine_text, evidence, judge_map.get((claim.claim_id, "fine")))
            s_fine = score_with(model, fv)
        if s_coarse is None or overwrite:
            fv = featurize(claim.coarse_text, evidence, judge_map.get((claim.claim_id, "coarse")))
            s_coarse = score_with(model, fv)
        out.append(replace(claim, s_fine=s_fine, s_coarse=s_coarse))
    return out
