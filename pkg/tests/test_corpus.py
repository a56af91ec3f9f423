from __future__ import annotations

import json
import logging

import pytest

from cssel.corpus import (
    ClaimRecord,
    CorpusError,
    make_kfold_split,
    make_pilot_split,
    parse_corpus,
    serialize_corpus,
    write_corpus,
)
from cssel.synth import SynthConfig, generate

from conftest import make_claim, make_corpus


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


GOOD_LINES = [
    json.dumps(
        {
            "kind": "prompt",
            "prompt_id": "p1",
            "draft_text": "water boils at 100 C at sea level",
            "evidence": ["At sea level, water boils at 100 degrees Celsius."],
            "claim_ids": ["p1-c0", "p1-c1"],
        }
    ),
    json.dumps(
        {
            "kind": "claim",
            "claim_id": "p1-c0",
            "prompt_id": "p1",
            "fine_text": "water boils at 100 C at sea level",
            "coarse_text": "water boils around 100 C",
            "s_fine": 0.9,
            "s_coarse": 0.95,
            "y_fine": 1,
            "y_coarse": 1,
        }
    ),
    json.dumps(
        {
            "kind": "claim",
            "claim_id": "p1-c1",
            "prompt_id": "p1",
            "fine_text": "the boiling point was measured in 1742",
            "coarse_text": "the boiling point was measured long ago",
        }
    ),
]


def test_parse_good_corpus(tmp_path) -> None:
    path = tmp_path / "corpus.jsonl"
    write_lines(path, GOOD_LINES)
    corpus = parse_corpus(path)
    assert len(corpus.prompts) == 1
    assert len(corpus.claims) == 2
    c0 = corpus.claim_by_id("p1-c0")
    assert c0.s_fine == 0.9
    assert c0.y_coarse == 1
    c1 = corpus.claim_by_id("p1-c1")
    assert c1.s_fine is None and c1.y_fine is None
    assert corpus.claims_for_prompt("p1") == (c0, c1)


def test_parse_reports_line_and_column_for_bad_json(tmp_path) -> None:
    path = tmp_path / "corpus.jsonl"
    write_lines(path, [GOOD_LINES[0], '{"kind": "claim", broken'])
    with pytest.raises(CorpusError, match=r"line 2, column"):
        parse_corpus(path)


def test_parse_rejects_unknown_kind_and_keys(tmp_path) -> None:
    path = tmp_path / "corpus.jsonl"
    write_lines(path, ['{"kind": "mystery"}'])
    with pytest.raises(CorpusError, match="kind must be"):
        parse_corpus(path)

    extra = json.loads(GOOD_LINES[1])
    extra["surprise"] = 1
    write_lines(path, [GOOD_LINES[0], json.dumps(extra), GOOD_LINES[2]])
    with pytest.raises(CorpusError, match="unknown keys"):
        parse_corpus(path)


def test_lenient_mode_warns_instead_of_failing(tmp_path, caplog) -> None:
    path = tmp_path / "corpus.jsonl"
    extra = json.loads(GOOD_LINES[1])
    extra["surprise"] = 1
    write_lines(path, [GOOD_LINES[0], json.dumps(extra), GOOD_LINES[2]])
    with caplog.at_level(logging.WARNING):
        corpus = parse_corpus(path, strict=False)
    assert len(corpus.claims) == 2
    assert any("unknown keys" in r.message for r in caplog.records)


def test_parse_rejects_boolean_labels_and_bad_scores(tmp_path) -> None:
    path = tmp_path / "corpus.jsonl"
    bad = json.loads(GOOD_LINES[1])
    bad["y_fine"] = True
    write_lines(path, [GOOD_LINES[0], json.dumps(bad), GOOD_LINES[2]])
    with pytest.raises(CorpusError, match="boolean"):
        parse_corpus(path)

    bad = json.loads(GOOD_LINES[1])
    bad["s_fine"] = 1.5
    write_lines(path, [GOOD_LINES[0], json.dumps(bad), GOOD_LINES[2]])
    with pytest.raises(CorpusError, match=r"outside \[0, 1\]"):
        parse_corpus(path)

    bad = json.loads(GOOD_LINES[1])
    bad["y_coarse"] = 2
    write_lines(path, [GOOD_LINES[0], json.dumps(bad), GOOD_LINES[2]])
    with pytest.raises(CorpusError, match="must be 0 or 1"):
        parse_corpus(path)


def test_float_labels_accepted_when_integral(tmp_path) -> None:
    path = tmp_path / "corpus.jsonl"
    obj = json.loads(GOOD_LINES[1])
    obj["y_fine"] = 1.0
    obj["y_coarse"] = 0.0
    write_lines(path, [GOOD_LINES[0], json.dumps(obj), GOOD_LINES[2]])
    corpus = parse_corpus(path)
    claim = corpus.claim_by_id("p1-c0")
    assert claim.y_fine == 1 and claim.y_coarse == 0


def test_parse_rejects_duplicates(tmp_path) -> None:
    path = tmp_path / "corpus.jsonl"
    write_lines(path, [GOOD_LINES[0], GOOD_LINES[1], GOOD_LINES[1], GOOD_LINES[2]])
    with pytest.raises(CorpusError, match="duplicate claim_id"):
        parse_corpus(path)

    write_lines(path, [GOOD_LINES[0]] + GOOD_LINES)
    with pytest.raises(CorpusError, match="duplicate prompt_id"):
        parse_corpus(path)


def test_parse_checks_referential_integrity_both_ways(tmp_path) -> None:
    path = tmp_path / "corpus.jsonl"
    # Prompt lists a claim id with no record.
    write_lines(path, [GOOD_LINES[0], GOOD_LINES[1]])
    with pytest.raises(CorpusError, match="no claim record"):
        parse_corpus(path)

    # Claim points at a prompt that does not exist.
    stray = json.loads(GOOD_LINES[1])
    stray["claim_id"] = "px-c9"
    stray["prompt_id"] = "px"
    write_lines(path, GOOD_LINES + [json.dumps(stray)])
    with pytest.raises(CorpusError, match="unknown prompt_id"):
        parse_corpus(path)

    # Claim exists, prompt exists, but the prompt does not list it.
    unlisted = json.loads(GOOD_LINES[1])
    unlisted["claim_id"] = "p1-c9"
    write_lines(path, GOOD_LINES + [json.dumps(unlisted)])
    with pytest.raises(CorpusError, match="not listed"):
        parse_corpus(path)


def test_parse_rejects_missing_required_field(tmp_path) -> None:
    path = tmp_path / "corpus.jsonl"
    obj = json.loads(GOOD_LINES[1])
    del obj["coarse_text"]
    write_lines(path, [GOOD_LINES[0], json.dumps(obj), GOOD_LINES[2]])
    with pytest.raises(CorpusError, match="coarse_text"):
        parse_corpus(path)


def test_serialize_round_trip_is_canonical(tmp_path) -> None:
    corpus = generate(SynthConfig(n_prompts=12, seed=3))
    text = serialize_corpus(corpus)
    path = tmp_path / "round.jsonl"
    write_corpus(corpus, path)
    assert path.read_text(encoding="utf-8") == text

    reparsed = parse_corpus(path)
    assert serialize_corpus(reparsed) == text
    assert reparsed.claims == corpus.claims

    # Prompt order in memory does not affect the bytes.
    from cssel.corpus import Corpus

    shuffled = Corpus(prompts=corpus.prompts[::-1], claims=corpus.claims[::-1])
    assert serialize_corpus(shuffled) == text


def test_serialize_omits_absent_fields(tmp_path) -> None:
    corpus = make_corpus({"p0": [make_claim("a", s_fine=0.5)]})
    text = serialize_corpus(corpus)
    claim_line = text.strip().split("\n")[1]
    obj = json.loads(claim_line)
    assert "s_fine" in obj
    assert "s_coarse" not in obj and "y_fine" not in obj and "y_coarse" not in obj


def test_restrict_and_with_claims() -> None:
    corpus = make_corpus(
        {
            "p0": [make_claim("a", prompt_id="p0")],
            "p1": [make_claim("b", prompt_id="p1"), make_claim("c", prompt_id="p1")],
        }
    )
    sub = corpus.restrict(["p1"])
    assert [c.claim_id for c in sub.claims] == ["b", "c"]
    with pytest.raises(CorpusError, match="unknown prompt ids"):
        corpus.restrict(["p9"])

    rescored = corpus.with_claims(
        [ClaimRecord(c.claim_id, c.prompt_id, c.fine_text, c.coarse_text, s_fine=0.1) for c in corpus.claims]
    )
    assert all(c.s_fine == 0.1 for c in rescored.claims)
    assert [c.claim_id for c in rescored.claims] == [c.claim_id for c in corpus.claims]
    with pytest.raises(CorpusError, match="cover"):
        corpus.with_claims(list(corpus.claims[:-1]))


def test_pilot_split_sizes_disjoint_and_seeded() -> None:
    corpus = generate(SynthConfig(n_prompts=210, seed=1))
    split = make_pilot_split(corpus, (30, 30, 140), seed=5)
    fit, cal, test = split.group("fit"), split.group("cal"), split.group("test")
    assert (len(fit), len(cal), len(test)) == (30, 30, 140)
    union = set(fit) | set(cal) | set(test)
    assert len(union) == 200
    assert union <= {p.prompt_id for p in corpus.prompts}

    again = make_pilot_split(corpus, (30, 30, 140), seed=5)
    assert again.groups == split.groups
    other = make_pilot_split(corpus, (30, 30, 140), seed=6)
    assert other.groups != split.groups


def test_pilot_split_ignores_prompt_file_order() -> None:
    corpus = generate(SynthConfig(n_prompts=50, seed=1))
    from cssel.corpus import Corpus

    reversed_corpus = Corpus(prompts=corpus.prompts[::-1], claims=corpus.claims)
    a = make_pilot_split(corpus, (10, 10, 20), seed=9)
    b = make_pilot_split(reversed_corpus, (10, 10, 20), seed=9)
    assert a.groups == b.groups


def test_pilot_split_validates_sizes() -> None:
    corpus = generate(SynthConfig(n_prompts=10, seed=0))
    with pytest.raises(CorpusError, match="need"):
        make_pilot_split(corpus, (5, 5, 5), seed=0)
    with pytest.raises(CorpusError, match="invalid pilot sizes"):
        make_pilot_split(corpus, (5, 0, 5), seed=0)


def test_kfold_split_partitions_everything() -> None:
    corpus = generate(SynthConfig(n_prompts=23, seed=2))
    split = make_kfold_split(corpus, k=5, seed=4)
    names = split.fold_names()
    assert names == tuple(f"fold_{i}" for i in range(5))
    sizes = [len(split.group(n)) for n in names]
    assert sum(sizes) == 23
    assert max(sizes) - min(sizes) <= 1
    all_ids = [pid for n in names for pid in split.group(n)]
    assert len(set(all_ids)) == 23

    assert make_kfold_split(corpus, k=5, seed=4).groups == split.groups
    with pytest.raises(CorpusError):
        make_kfold_split(corpus, k=1, seed=0)
    with pytest.raises(CorpusError):
        make_kfold_split(corpus, k=24, seed=0)


def test_atomic_write_leaves_no_temp_files(tmp_path) -> None:
    corpus = generate(SynthConfig(n_prompts=5, seed=0))
    target = tmp_path / "deep" / "nested" / "corpus.jsonl"
    write_corpus(corpus, target)
    assert target.exists()
    leftovers = [p for p in target.parent.iterdir() if p.name != target.name]
    assert leftovers == []
