from __future__ import annotations

import itertools

from cssel.corpus import ClaimRecord, Corpus, PromptRecord

_counter = itertools.count()


def make_claim(
    claim_id: str | None = None,
    prompt_id: str = "p0",
    s_fine: float | None = None,
    s_coarse: float | None = None,
    y_fine: int | None = None,
    y_coarse: int | None = None,
) -> ClaimRecord:
    if claim_id is None:
        claim_id = f"c{next(_counter)}"
    return ClaimRecord(
        claim_id=claim_id,
        prompt_id=prompt_id,
        fine_text=f"fine text {claim_id}",
        coarse_text=f"coarse text {claim_id}",
        s_fine=s_fine,
        s_coarse=s_coarse,
        y_fine=y_fine,
        y_coarse=y_coarse,
    )


def make_corpus(claims_by_prompt: dict[str, list[ClaimRecord]]) -> Corpus:
    prompts = tuple(
        PromptRecord(
            prompt_id=pid,
            draft_text=f"draft {pid}",
            evidence=(f"evidence for {pid}",),
            claim_ids=tuple(c.claim_id for c in claims),
        )
        for pid, claims in claims_by_prompt.items()
    )
    claims = tuple(c for claims in claims_by_prompt.values() for c in claims)
    return Corpus(prompts=prompts, claims=claims)
