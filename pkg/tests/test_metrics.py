from __future__ import annotations

import numpy as np
import pytest

from cssel.metrics import (
    Action,
    Decision,
    WeightScheme,
    evaluate,
    fine_only_metrics,
    report_from_counts,
    table_row,
)

from conftest import make_claim


def test_action_ordering_and_labels() -> None:
    assert Action.OMIT < Action.COARSE < Action.FINE
    assert Action.FINE.label == "fine"
    assert Action.from_label("coarse") is Action.COARSE
    with pytest.raises(ValueError):
        Action.from_label("shout")


def test_weight_scheme_values_and_validation() -> None:
    w = WeightScheme(0.6)
    assert w.weight(Action.FINE) == 1.0
    assert w.weight(Action.COARSE) == 0.6
    assert w.weight(Action.OMIT) == 0.0
    with pytest.raises(ValueError):
        WeightScheme(0.0)
    with pytest.raises(ValueError):
        WeightScheme(1.0)


def test_four_claim_worked_example() -> None:
    # fine supported, coarse supported, fine unsupported, omitted
    claims = [
        make_claim("a", y_fine=1, y_coarse=1),
        make_claim("b", y_fine=0, y_coarse=1),
        make_claim("c", y_fine=0, y_coarse=0),
        make_claim("d", y_fine=1, y_coarse=1),
    ]
    decisions = [
        Decision("a", Action.FINE),
        Decision("b", Action.COARSE),
        Decision("c", Action.FINE),
        Decision("d", Action.OMIT),
    ]
    report = evaluate(decisions, claims, WeightScheme(0.6))
    assert report.m == 4
    assert report.emitted == 3
    assert report.unsupported_emitted == 1
    assert report.prec == pytest.approx(2.0 / 3.0)
    assert report.ret == pytest.approx(0.65)
    assert report.supp_spec == pytest.approx(0.40)
    assert report.oau == pytest.approx(0.15)


def test_nothing_emitted_has_undefined_precision() -> None:
    claims = [make_claim("a"), make_claim("b")]
    decisions = [Decision("a", Action.OMIT), Decision("b", Action.OMIT)]
    report = evaluate(decisions, claims)
    assert report.prec is None
    assert report.ret == 0.0
    assert report.supp_spec == 0.0
    assert report.oau == 0.0
    assert table_row(report)[1] == "—"


def test_report_from_counts_zero_claims() -> None:
    report = report_from_counts(0, 0, 0, 0, 0, gamma=0.6)
    assert report.m == 0
    assert report.prec is None
    assert report.oau == 0.0


def test_report_from_counts_rejects_inconsistent_tallies() -> None:
    with pytest.raises(ValueError):
        report_from_counts(10, 3, 0, 4, 0, gamma=0.6)
    with pytest.raises(ValueError):
        report_from_counts(2, 2, 1, 2, 1, gamma=0.6)


def test_utility_identity_holds_exactly_on_random_tallies() -> None:
    # oau == supp_spec - unsupported/m must hold to the last bit because the
    # report computes it literally that way.
    rng = np.random.default_rng(123)
    for _ in range(500):
        m = int(rng.integers(1, 200))
        fine = int(rng.integers(0, m + 1))
        coarse = int(rng.integers(0, m - fine + 1))
        fs = int(rng.integers(0, fine + 1))
        cs = int(rng.integers(0, coarse + 1))
        gamma = float(rng.uniform(0.05, 0.95))
        report = report_from_counts(m, fine, coarse, fs, cs, gamma)
        assert report.oau == report.supp_spec - report.unsupported_emitted / report.m
        assert report.supp_spec <= report.ret + 1e-15
        assert 0 <= report.unsupported_emitted <= report.emitted
        assert report.emitted + report.omit_count == report.m


def test_evaluate_matches_report_from_counts_bitwise() -> None:
    rng = np.random.default_rng(5)
    for _ in range(50):
        m = int(rng.integers(1, 60))
        claims = []
        decisions = []
        fine = coarse = fs = cs = 0
        for i in range(m):
            yf = int(rng.integers(0, 2))
            yc = int(rng.integers(0, 2))
            claims.append(make_claim(f"c{i}", y_fine=yf, y_coarse=yc))
            action = Action(int(rng.integers(0, 3)))
            decisions.append(Decision(f"c{i}", action))
            if action is Action.FINE:
                fine += 1
                fs += yf
            elif action is Action.COARSE:
                coarse += 1
                cs += yc
        via_eval = evaluate(decisions, claims, WeightScheme(0.6))
        via_counts = report_from_counts(m, fine, coarse, fs, cs, 0.6)
        assert via_eval == via_counts


def test_evaluate_requires_labels_only_for_emitted_levels() -> None:
    claims = [make_claim("a", y_fine=1), make_claim("b")]
    decisions = [Decision("a", Action.FINE), Decision("b", Action.OMIT)]
    report = evaluate(decisions, claims)
    assert report.emitted == 1

    bad = [Decision("a", Action.COARSE), Decision("b", Action.OMIT)]
    with pytest.raises(ValueError, match="y_coarse"):
        evaluate(bad, claims)


def test_evaluate_rejects_malformed_decision_sets() -> None:
    claims = [make_claim("a", y_fine=1), make_claim("b", y_fine=1)]
    with pytest.raises(ValueError, match="unknown claim"):
        evaluate([Decision("zz", Action.OMIT)], claims)
    with pytest.raises(ValueError, match="multiple decisions"):
        evaluate(
            [Decision("a", Action.OMIT), Decision("a", Action.FINE), Decision("b", Action.OMIT)],
            claims,
        )
    with pytest.raises(ValueError, match="no decision"):
        evaluate([Decision("a", Action.OMIT)], claims)


def test_fine_only_identities() -> None:
    ret, supp, oau = fine_only_metrics(11705, 11705, 0.9230)
    assert ret == pytest.approx(1.0)
    assert supp == pytest.approx(0.9230)
    assert oau == pytest.approx(0.8460)

    ret, supp, oau = fine_only_metrics(11705, 10823, 0.9877)
    assert round(ret, 4) == pytest.approx(0.9246, abs=5e-4)
    assert round(supp, 4) == pytest.approx(0.9133, abs=5e-4)
    assert round(oau, 4) == pytest.approx(0.9019, abs=5e-4)


def test_fine_only_matches_full_evaluator() -> None:
    rng = np.random.default_rng(77)
    for _ in range(100):
        m = int(rng.integers(1, 80))
        emitted = int(rng.integers(0, m + 1))
        supported = int(rng.integers(0, emitted + 1))
        report = report_from_counts(m, emitted, 0, supported, 0, gamma=0.6)
        if emitted == 0:
            continue
        ret, supp, oau = fine_only_metrics(m, emitted, report.prec)
        assert ret == pytest.approx(report.ret, abs=1e-12)
        assert supp == pytest.approx(report.supp_spec, abs=1e-12)
        assert oau == pytest.approx(report.oau, abs=1e-12)


def test_table_row_formatting() -> None:
    report = report_from_counts(4, 2, 1, 2, 1, gamma=0.6)
    row = table_row(report)
    assert row == ("3/4", "1.0000", "0.6500", "0.6500", "0.6500")

    halfway = report_from_counts(8, 1, 0, 1, 0, gamma=0.6)
    assert table_row(halfway)[2] == "0.1250"
