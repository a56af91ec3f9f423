"""Corpus records, JSONL I/O, and prompt-level split assignment.

A corpus file is JSON Lines, UTF-8, LF line endings, one record per line.
Two record kinds are distinguished by the ``kind`` field:

prompt line::

    {"kind": "prompt", "prompt_id": str, "draft_text": str,
     "evidence": [str, ...], "claim_ids": [str, ...]}

claim line::

    {"kind": "claim", "claim_id": str, "prompt_id": str,
     "fine_text": str, "coarse_text": str,
     "s_fine": num?, "s_coarse": num?, "y_fine": 0|1?, "y_coarse": 0|1?}

Scores live in [0, 1]; labels are 0 or 1 (1 means the text at that level is
supported by the prompt's evidence).  Optional fields may be absent.  The
canonical serialization writes prompts first in prompt-id order, then claims
grouped by prompt in ``claim_ids`` appearance order, so equal corpora always
serialize to identical bytes.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

_PROMPT_KEYS = {"kind", "prompt_id", "draft_text", "evidence", "claim_ids"}
_CLAIM_REQUIRED = {"kind", "claim_id", "prompt_id", "fine_text", "coarse_text"}
_CLAIM_KEYS = _CLAIM_REQUIRED | {"s_fine", "s_coarse", "y_fine", "y_coarse"}


class CorpusError(ValueError):
    """Raised for malformed corpus files or inconsistent record sets."""


@dataclass(frozen=True)
class PromptRecord:
    """One drafted response with its evidence and the ids of its claims."""

    prompt_id: str
    draft_text: str
    evidence: tuple[str, ...]
    claim_ids: tuple[str, ...]


@dataclass(frozen=True)
class ClaimRecord:
    """One atomic claim with a fine variant and a coarse backoff variant.

    ``s_fine`` and ``s_coarse`` are support scores in [0, 1] for the fine and
    coarse text respectively.  ``y_fine`` and ``y_coarse`` are ground-truth
    support labels.  All four are optional at parse time; operations that
    need them validate presence themselves.
    """

    claim_id: str
    prompt_id: str
    fine_text: str
    coarse_text: str
    s_fine: float | None = None
    s_coarse: float | None = None
    y_fine: int | None = None
    y_coarse: int | None = None

    def with_scores(self, s_fine: float, s_coarse: float) -> "ClaimRecord":
        return replace(self, s_fine=s_fine, s_coarse=s_coarse)


@dataclass(frozen=True)
class Corpus:
    """An ordered collection of prompts and their claims."""

    prompts: tuple[PromptRecord, ...]
    claims: tuple[ClaimRecord, ...]

    def prompt_by_id(self, prompt_id: str) -> PromptRecord:
        return self._prompt_index()[prompt_id]

    def claim_by_id(self, claim_id: str) -> ClaimRecord:
        return self._claim_index()[claim_id]

    def claims_for_prompt(self, prompt_id: str) -> tuple[ClaimRecord, ...]:
        """Claims of one prompt, in ``claim_ids`` appearance order."""
        index = self._claim_index()
        prompt = self.prompt_by_id(prompt_id)
        return tuple(index[cid] for cid in prompt.claim_ids)

    def restrict(self, prompt_ids: Iterable[str]) -> "Corpus":
        """Sub-corpus containing the given prompts and their claims.

        Prompt order follows the order of ``prompt_ids``; claims follow their
        prompt's appearance order.
        """
        index = self._prompt_index()
        ids = list(prompt_ids)
        missing = [pid for pid in ids if pid not in index]
        if missing:
            raise CorpusError(f"unknown prompt ids in restriction: {missing[:5]}")
        prompts = tuple(index[pid] for pid in ids)
        claims = tuple(c for pid in ids for c in self.claims_for_prompt(pid))
        return Corpus(prompts=prompts, claims=claims)

    def with_claims(self, claims: Sequence[ClaimRecord]) -> "Corpus":
        """Same prompts, replacement claim records (e.g. after scoring)."""
        by_id = {c.claim_id: c for c in claims}
        if len(by_id) != len(claims):
            raise CorpusError("duplicate claim ids in replacement set")
        if set(by_id) != {c.claim_id for c in self.claims}:
            raise CorpusError("replacement claims do not cover the corpus")
        ordered = tuple(by_id[c.claim_id] for c in self.claims)
        return Corpus(prompts=self.prompts, claims=ordered)

    def evidence_by_prompt(self) -> dict[str, tuple[str, ...]]:
        return {p.prompt_id: p.evidence for p in self.prompts}

    def _prompt_index(self) -> dict[str, PromptRecord]:
        cached = getattr(self, "_pidx", None)
        if cached is None:
            cached = {p.prompt_id: p for p in self.prompts}
            object.__setattr__(self, "_pidx", cached)
        return cached

    def _claim_index(self) -> dict[str, ClaimRecord]:
        cached = getattr(self, "_cidx", None)
        if cached is None:
            cached = {c.claim_id: c for c in self.claims}
            object.__setattr__(self, "_cidx", cached)
        return cached


@dataclass(frozen=True)
class SplitAssignment:
    """Disjoint prompt-level groups, either pilot splits or k folds."""

    mode: str  # "pilot" or "kfold"
    groups: dict[str, tuple[str, ...]]

    def group(self, name: str) -> tuple[str, ...]:
        return self.groups[name]

    def fold_names(self) -> tuple[str, ...]:
        return tuple(self.groups.keys())


def _type_name(value: object) -> str:
    return type(value).__name__


def _parse_score(value: object, field: str, line_no: int) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise CorpusError(f"line {line_no}: {field} must be a number, got {_type_name(value)}")
    v = float(value)
    if not (0.0 <= v <= 1.0):
        raise CorpusError(f"line {line_no}: {field}={v} outside [0, 1]")
    return v


def _parse_label(value: object, field: str, line_no: int) -> int:
    # bool is a subclass of int; reject it so true/false are not silently 1/0.
    if isinstance(value, bool):
        raise CorpusError(f"line {line_no}: {field} must be 0 or 1, got a boolean")
    if isinstance(value, int) and value in (0, 1):
        return value
    if isinstance(value, float) and value in (0.0, 1.0):
        return int(value)
    raise CorpusError(f"line {line_no}: {field} must be 0 or 1, got {value!r}")


def _require_str(obj: Mapping, field: str, line_no: int, nonempty: bool = True) -> str:
    if field not in obj:
        raise CorpusError(f"line {line_no}: missing required field {field!r}")
    value = obj[field]
    if not isinstance(value, str):
        raise CorpusError(f"line {line_no}: {field} must be a string, got {_type_name(value)}")
    if nonempty and not value:
        raise CorpusError(f"line {line_no}: {field} must be non-empty")
    return value


def _require_str_list(obj: Mapping, field: str, line_no: int) -> tuple[str, ...]:
    if field not in obj:
        raise CorpusError(f"line {line_no}: missing required field {field!r}")
    value = obj[field]
    if not isinstance(value, list) or any(not isinstance(x, str) for x in value):
        raise CorpusError(f"line {line_no}: {field} must be a list of strings")
    return tuple(value)


def _check_keys(obj: Mapping, allowed: set[str], line_no: int, strict: bool) -> None:
    unknown = sorted(set(obj) - allowed)
    if not unknown:
        return
    if strict:
        raise CorpusError(f"line {line_no}: unknown keys {unknown} (strict mode)")
    logger.warning("line %d: ignoring unknown keys %s", line_no, unknown)


def parse_corpus(path: str | Path, strict: bool = True) -> Corpus:
    """Parse a JSONL corpus file and validate it.

    Validation covers JSON well-formedness (with line and column on failure),
    required fields and their types, score and label ranges, duplicate ids,
    and referential integrity in both directions: every claim's ``prompt_id``
    must resolve, every listed claim id must resolve to a claim of that
    prompt, and every claim must be listed by its prompt.  Unknown keys are
    an error in strict mode and a logged warning otherwise.
    """
    text = Path(path).read_text(encoding="utf-8")
    prompts: list[PromptRecord] = []
    claims: list[ClaimRecord] = []
    prompt_lines: dict[str, int] = {}
    claim_lines: dict[str, int] = {}

    for line_no, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(
                f"line {line_no}, column {exc.colno}: invalid JSON: {exc.msg}"
            ) from exc
        if not isinstance(obj, dict):
            raise CorpusError(f"line {line_no}: record must be a JSON object")
        kind = obj.get("kind")
        if kind == "prompt":
            _check_keys(obj, _PROMPT_KEYS, line_no, strict)
            pid = _require_str(obj, "prompt_id", line_no)
            if pid in prompt_lines:
                raise CorpusError(
                    f"line {line_no}: duplicate prompt_id {pid!r} "
                    f"(first seen at line {prompt_lines[pid]})"
                )
            prompt_lines[pid] = line_no
            prompts.append(
                PromptRecord(
                    prompt_id=pid,
                    draft_text=_require_str(obj, "draft_text", line_no, nonempty=False),
                    evidence=_require_str_list(obj, "evidence", line_no),
                    claim_ids=_require_str_list(obj, "claim_ids", line_no),
                )
            )
        elif kind == "claim":
            _check_keys(obj, _CLAIM_KEYS, line_no, strict)
            cid = _require_str(obj, "claim_id", line_no)
            if cid in claim_lines:
                raise CorpusError(
                    f"line {line_no}: duplicate claim_id {cid!r} "
                    f"(first seen at line {claim_lines[cid]})"
                )
            claim_lines[cid] = line_no
            claims.append(
                ClaimRecord(
                    claim_id=cid,
                    prompt_id=_require_str(obj, "prompt_id", line_no),
                    fine_text=_require_str(obj, "fine_text", line_no),
                    coarse_text=_require_str(obj, "coarse_text", line_no),
                    s_fine=(
                        _parse_score(obj["s_fine"], "s_fine", line_no)
                        if "s_fine" in obj
                        else None
                    ),
                    s_coarse=(
                        _parse_score(obj["s_coarse"], "s_coarse", line_no)
                        if "s_coarse" in obj
                        else None
                    ),
                    y_fine=(
                        _parse_label(obj["y_fine"], "y_fine", line_no)
                        if "y_fine" in obj
                        else None
                    ),
                    y_coarse=(
                        _parse_label(obj["y_coarse"], "y_coarse", line_no)
                        if "y_coarse" in obj
                        else None
                    ),
                )
            )
        else:
            raise CorpusError(f"line {line_no}: kind must be 'prompt' or 'claim', got {kind!r}")

    prompt_ids = {p.prompt_id for p in prompts}
    listed: dict[str, str] = {}
    for p in prompts:
        seen: set[str] = set()
        for cid in p.claim_ids:
            if cid in seen:
                raise CorpusError(
                    f"line {prompt_lines[p.prompt_id]}: prompt {p.prompt_id!r} "
                    f"lists claim_id {cid!r} twice"
                )
            seen.add(cid)
            if cid in listed:
                raise CorpusError(
                    f"claim_id {cid!r} listed by both prompts "
                    f"{listed[cid]!r} and {p.prompt_id!r}"
                )
            listed[cid] = p.prompt_id
    claim_ids = {c.claim_id for c in claims}
    for p in prompts:
        for cid in p.claim_ids:
            if cid not in claim_ids:
                raise CorpusError(
                    f"line {prompt_lines[p.prompt_id]}: prompt {p.prompt_id!r} "
                    f"lists claim_id {cid!r} with no claim record"
                )
    for c in claims:
        if c.prompt_id not in prompt_ids:
            raise CorpusError(
                f"line {claim_lines[c.claim_id]}: claim {c.claim_id!r} references "
                f"unknown prompt_id {c.prompt_id!r}"
            )
        if listed.get(c.claim_id) != c.prompt_id:
            raise CorpusError(
                f"line {claim_lines[c.claim_id]}: claim {c.claim_id!r} is not listed "
                f"in claim_ids of its prompt {c.prompt_id!r}"
            )

    return Corpus(prompts=tuple(prompts), claims=tuple(claims))


def _prompt_to_obj(p: PromptRecord) -> dict:
    return {
        "kind": "prompt",
        "prompt_id": p.prompt_id,
        "draft_text": p.draft_text,
        "evidence": list(p.evidence),
        "claim_ids": list(p.claim_ids),
    }


def _claim_to_obj(c: ClaimRecord) -> dict:
    obj: dict = {
        "kind": "claim",
        "claim_id": c.claim_id,
        "prompt_id": c.prompt_id,
        "fine_text": c.fine_text,
        "coarse_text": c.coarse_text,
    }
    # Absent optional fields are omitted entirely, not written as null.
    if c.s_fine is not None:
        obj["s_fine"] = c.s_fine
    if c.s_coarse is not None:
        obj["s_coarse"] = c.s_coarse
    if c.y_fine is not None:
        obj["y_fine"] = c.y_fine
    if c.y_coarse is not None:
        obj["y_coarse"] = c.y_coarse
    return obj


def serialize_corpus(corpus: Corpus) -> str:
    """Render the canonical JSONL text for a corpus.

    Prompts come first in prompt-id order, then claims grouped by prompt in
    ``claim_ids`` appearance order.  Equal corpora yield identical bytes.
    """
    ordered_prompts = sorted(corpus.prompts, key=lambda p: p.prompt_id)
    lines = [
        json.dumps(_prompt_to_obj(p), ensure_ascii=False, separators=(",", ":"))
        for p in ordered_prompts
    ]
    index = {c.claim_id: c for c in corpus.claims}
    for p in ordered_prompts:
        for cid in p.claim_ids:
            lines.append(
                json.dumps(_claim_to_obj(index[cid]), ensure_ascii=False, separators=(",", ":"))
            )
    return "\n".join(lines) + "\n"


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write text so the final path never holds a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    """Serialize a corpus to a file atomically."""
    atomic_write_text(path, serialize_corpus(corpus))


def make_pilot_split(
    corpus: Corpus,
    sizes: tuple[int, int, int] = (30, 30, 140),
    seed: int = 0,
) -> SplitAssignment:
    """Assign prompts to fit, cal, and test groups of the given sizes.

    Prompt ids are sorted and then permuted with a seeded generator, so the
    assignment never depends on file order.  Prompts beyond the requested
    total stay unassigned.
    """
    n_fit, n_cal, n_test = sizes
    if min(sizes) < 0 or n_cal == 0 or n_test == 0:
        raise CorpusError(f"invalid pilot sizes {sizes}")
    ids = sorted(p.prompt_id for p in corpus.prompts)
    total = n_fit + n_cal + n_test
    if total > len(ids):
        raise CorpusError(
            f"pilot sizes {sizes} need {total} prompts, corpus has {len(ids)}"
        )
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    return SplitAssignment(
        mode="pilot",
        groups={
            "fit": tuple(order[:n_fit]),
            "cal": tuple(order[n_fit : n_fit + n_cal]),
            "test": tuple(order[n_fit + n_cal : total]),
        },
    )


def make_kfold_split(corpus: Corpus, k: int = 5, seed: int = 0) -> SplitAssignment:
    """Partition all prompts into k folds whose sizes differ by at most one."""
    ids = sorted(p.prompt_id for p in corpus.prompts)
    if k < 2:
        raise CorpusError(f"k must be at least 2, got {k}")
    if k > len(ids):
        raise CorpusError(f"k={k} exceeds the prompt count {len(ids)}")
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    chunks = np.array_split(np.arange(len(order)), k)
    groups = {
        f"fold_{i}": tuple(order[j] for j in chunk) for i, chunk in enumerate(chunks)
    }
    return SplitAssignment(mode="kfold", groups=groups)
