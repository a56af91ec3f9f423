from __future__ import annotations

import math

import numpy as np
import pytest

from cssel.corpus import serialize_corpus
from cssel.metrics import evaluate
from cssel.policies import apply_policy, parse_policy
from cssel.synth import SynthConfig, empirical_rates, generate


def test_generate_is_deterministic() -> None:
    a = generate(SynthConfig(n_prompts=40, seed=123))
    b = generate(SynthConfig(n_prompts=40, seed=123))
    assert serialize_corpus(a) == serialize_corpus(b)

    c = generate(SynthConfig(n_prompts=40, seed=124))
    assert serialize_corpus(a) != serialize_corpus(c)


def test_prompt_streams_are_independent_of_corpus_size() -> None:
    # Growing the corpus must not disturb earlier prompts: each prompt and
    # claim draws from its own substream.
    small = generate(SynthConfig(n_prompts=5, seed=9))
    large = generate(SynthConfig(n_prompts=10, seed=9))
    by_id = {c.claim_id: c for c in large.claims}
    assert small.prompts == large.prompts[: len(small.prompts)]
    for claim in small.claims:
        assert by_id[claim.claim_id] == claim


def test_claims_per_prompt_within_bounds() -> None:
    config = SynthConfig(n_prompts=100, claims_min=2, claims_max=6, seed=5)
    corpus = generate(config)
    counts: dict[str, int] = {}
    for claim in corpus.claims:
        counts[claim.prompt_id] = counts.get(claim.prompt_id, 0) + 1
    assert set(counts) == {p.prompt_id for p in corpus.prompts}
    assert min(counts.values()) >= 2
    assert max(counts.values()) <= 6
    assert len({c for c in counts.values()}) > 1  # size actually varies


def test_ids_and_texts_are_well_formed() -> None:
    corpus = generate(SynthConfig(n_prompts=3, seed=1))
    assert corpus.prompts[0].prompt_id == "p00000"
    first = corpus.claims[0]
    assert first.claim_id == "p00000-c000"
    assert first.claim_id.startswith(first.prompt_id)
    assert first.fine_text != first.coarse_text
    assert corpus.prompts[0].evidence


def test_label_rates_track_config() -> None:
    config = SynthConfig(n_prompts=400, p_fine=0.6, q_coarse=0.8, seed=77)
    corpus = generate(config)
    rates = empirical_rates(corpus)
    assert rates["m"] == len(corpus.claims)
    assert rates["fine_rate"] == pytest.approx(0.6, abs=0.04)
    # With monotone backoff the coarse rate is p + (1-p)*q, not q itself.
    expected_coarse = 0.6 + 0.4 * 0.8
    assert rates["coarse_rate"] == pytest.approx(expected_coarse, abs=0.04)


def test_monotone_backoff_implication() -> None:
    corpus = generate(SynthConfig(n_prompts=200, seed=3, monotone_backoff=True))
    assert all(c.y_coarse == 1 for c in corpus.claims if c.y_fine == 1)
    assert any(c.y_fine == 0 and c.y_coarse == 1 for c in corpus.claims)


def test_non_monotone_regime_breaks_implication() -> None:
    config = SynthConfig(
        n_prompts=200, seed=3, monotone_backoff=False, p_fine=0.7, q_coarse=0.5
    )
    corpus = generate(config)
    assert any(c.y_fine == 1 and c.y_coarse == 0 for c in corpus.claims)
    rates = empirical_rates(corpus)
    assert rates["coarse_rate"] == pytest.approx(0.5, abs=0.04)


def test_scores_separate_by_label() -> None:
    corpus = generate(SynthConfig(n_prompts=300, seed=21))
    rates = empirical_rates(corpus)
    assert rates["mean_s_fine_supported"] > rates["mean_s_fine_unsupported"] + 0.2
    assert rates["mean_s_coarse_supported"] > rates["mean_s_coarse_unsupported"] + 0.2
    assert all(0.0 <= c.s_fine <= 1.0 and 0.0 <= c.s_coarse <= 1.0 for c in corpus.claims)


def test_all_supported_corpus_scores_perfectly() -> None:
    corpus = generate(SynthConfig(n_prompts=50, p_fine=1.0, q_coarse=1.0, seed=8))
    decisions = apply_policy(parse_policy("no-css"), corpus)
    report = evaluate(decisions, corpus.claims)
    assert report.oau == pytest.approx(1.0)
    assert report.prec == pytest.approx(1.0)

    rates = empirical_rates(corpus)
    assert math.isnan(rates["mean_s_fine_unsupported"])


def test_empirical_rates_keys() -> None:
    rates = empirical_rates(generate(SynthConfig(n_prompts=10, seed=2)))
    assert set(rates) == {
        "m",
        "fine_rate",
        "coarse_rate",
        "mean_s_fine_supported",
        "mean_s_fine_unsupported",
        "mean_s_coarse_supported",
        "mean_s_coarse_unsupported",
    }


def test_config_validation() -> None:
    with pytest.raises(ValueError, match="n_prompts"):
        SynthConfig(n_prompts=0)
    with pytest.raises(ValueError, match="claims"):
        SynthConfig(claims_min=5, claims_max=4)
    with pytest.raises(ValueError, match="claims"):
        SynthConfig(claims_min=0)
    with pytest.raises(ValueError, match="p_fine"):
        SynthConfig(p_fine=1.5)
    with pytest.raises(ValueError, match="q_coarse"):
        SynthConfig(q_coarse=-0.1)
    with pytest.raises(ValueError, match="beta"):
        SynthConfig(beta_pos=(0.0, 4.0))


def test_generated_corpus_is_fully_labeled_and_scored() -> None:
    corpus = generate(SynthConfig(n_prompts=30, seed=6))
    for claim in corpus.claims:
        assert claim.y_fine in (0, 1)
        assert claim.y_coarse in (0, 1)
        assert claim.s_fine is not None
        assert claim.s_coarse is not None


def test_claim_scores_vary() -> None:
    corpus = generate(SynthConfig(n_prompts=30, seed=6))
    fines = np.array([c.s_fine for c in corpus.claims])
    assert np.std(fines) > 0.05
