"""Synthetic corpora with controllable support rates and score noise.

Labels are Bernoulli draws; scores are Beta draws whose parameters depend on
the label, so score informativeness is tunable from near-oracle to useless.
Every claim is generated from its own counter-keyed substream derived from
(seed, prompt index, claim index), which makes generation order irrelevant:
splitting prompts across workers yields the same corpus as a single pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import ClaimRecord, Corpus, PromptRecord


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings.

    ``p_fine`` is the fine-support rate.  With ``monotone_backoff`` a
    supported fine claim always has a supported coarse backoff and only
    unsupported fine claims draw y_coarse from ``q_coarse``; without it
    y_coarse is an independent draw for every claim.  ``beta_pos`` and
    ``beta_neg`` are the Beta(a, b) score parameters for supported and
    unsupported candidates.
    """

    n_prompts: int = 200
    claims_min: int = 3
    claims_max: int = 8
    p_fine: float = 0.8
    q_coarse: float = 0.7
    monotone_backoff: bool = True
    beta_pos: tuple[float, float] = (8.0, 4.0)
    beta_neg: tuple[float, float] = (2.0, 6.0)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_prompts < 1:
            raise ValueError("n_prompts must be positive")
        if not (1 <= self.claims_min <= self.claims_max):
            raise ValueError(
                f"need 1 <= claims_min <= claims_max, got {self.claims_min}, {self.claims_max}"
            )
        for name in ("p_fine", "q_coarse"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        for name in ("beta_pos", "beta_neg"):
            a, b = getattr(self, name)
            if a <= 0 or b <= 0:
                raise ValueError(f"{name} parameters must be positive, got {(a, b)}")


def _claim_rng(seed: int, prompt_idx: int, claim_idx: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, prompt_idx, claim_idx]))


def _prompt_rng(seed: int, prompt_idx: int) -> np.random.Generator:
    # Claim indices start at 0, so a distinct tag keeps this stream separate.
    return np.random.default_rng(np.random.SeedSequence([seed, prompt_idx, 0x7FFFFFFF]))


def _generate_prompt(config: SynthConfig, prompt_idx: int) -> tuple[PromptRecord, list[ClaimRecord]]:
    prompt_id = f"p{prompt_idx:05d}"
    rng = _prompt_rng(config.seed, prompt_idx)
    n_claims = int(rng.integers(config.claims_min, config.claims_max + 1))
    claims: list[ClaimRecord] = []
    for claim_idx in range(n_claims):
        crng = _claim_rng(config.seed, prompt_idx, claim_idx)
        claim_id = f"{prompt_id}-c{claim_idx:03d}"
        # Fixed draw order per claim: two label uniforms, then two betas.
        u_fine = crng.random()
        u_coarse = crng.random()
        y_fine = 1 if u_fine < config.p_fine else 0
        if config.monotone_backoff and y_fine == 1:
            y_coarse = 1
        else:
            y_coarse = 1 if u_coarse < config.q_coarse else 0
        s_fine = float(crng.beta(*(config.beta_pos if y_fine else config.beta_neg)))
        s_coarse = float(crng.beta(*(config.beta_pos if y_coarse else config.beta_neg)))
        claims.append(
            ClaimRecord(
                claim_id=claim_id,
                prompt_id=prompt_id,
                fine_text=f"specific statement {claim_id}",
                coarse_text=f"hedged statement {claim_id}",
                s_fine=s_fine,
                s_coarse=s_coarse,
                y_fine=y_fine,
                y_coarse=y_coarse,
            )
        )
    prompt = PromptRecord(
        prompt_id=prompt_id,
        draft_text=f"draft response {prompt_id}",
        evidence=(f"evidence passage for {prompt_id}",),
        claim_ids=tuple(c.claim_id for c in claims),
    )
    return prompt, claims


def generate(config: SynthConfig) -> Corpus:
    """Generate a corpus; identical configs give identical corpora."""
    prompts: list[PromptRecord] = []
    claims: list[ClaimRecord] = []
    for prompt_idx in range(config.n_prompts):
        prompt, prompt_claims = _generate_prompt(config, prompt_idx)
        prompts.append(prompt)
        claims.extend(prompt_claims)
    return Corpus(prompts=tuple(prompts), claims=tuple(claims))


def empirical_rates(corpus: Corpus) -> dict[str, float]:
    """Observed label rates and label-conditional mean scores.

    Means over empty groups come back as nan rather than raising, since a
    small corpus may lack one of the label values entirely.
    """
    y_f = np.array([c.y_fine for c in corpus.claims], dtype=np.float64)
    y_c = np.array([c.y_coarse for c in corpus.claims], dtype=np.float64)
    s_f = np.array([c.s_fine for c in corpus.claims], dtype=np.float64)
    s_c = np.array([c.s_coarse for c in corpus.claims], dtype=np.float64)

    def group_mean(values: np.ndarray, mask: np.ndarray) -> float:
        return float(values[mask].mean()) if mask.any() else float("nan")

    return {
        "m": float(len(corpus.claims)),
        "fine_rate": float(y_f.mean()) if len(y_f) else float("nan"),
        "coarse_rate": float(y_c.mean()) if len(y_c) else float("nan"),
        "mean_s_fine_supported": group_mean(s_f, y_f == 1),
        "mean_s_fine_unsupported": group_mean(s_f, y_f == 0),
        "mean_s_coarse_supported": group_mean(s_c, y_c == 1),
        "mean_s_coarse_unsupported": group_mean(s_c, y_c == 0),
    }
