import numpy as np
import pytest

from firmrel.evalkit import (EvalReport, EvalRow, competitor_eval_pairs, evaluate,
                             parse_tsv, render_table, render_tsv, write_report)
from firmrel.synth import WorldConfig, generate_world


def const_scorer(value):
    return lambda pairs: [value] * len(pairs)


def test_confusion_example():
    # 8 TP, 2 FP, 2 FN, 8 TN -> acc 0.8, precision 0.8, recall 0.8, F 0.8
    pairs = (
        [(i, 100 + i, True) for i in range(8)]       # predicted yes, true
        + [(i, 200 + i, False) for i in range(2)]    # predicted yes, false
        + [(50 + i, 300 + i, True) for i in range(2)]   # predicted no, true
        + [(60 + i, 400 + i, False) for i in range(8)]  # predicted no, false
    )

    def scorer(query):
        return [a < 50 for a, b in query]

    row = evaluate(scorer, pairs)
    assert (row.tp, row.fp, row.fn, row.tn) == (8, 2, 2, 8)
    assert abs(row.accuracy - 0.8) < 1e-12
    assert abs(row.f_score - 0.8) < 1e-12


def test_all_negative_on_balanced_set():
    pairs = [(0, 1, True), (1, 2, True), (2, 3, False), (3, 4, False)]
    row = evaluate(const_scorer(False), pairs)
    assert row.f_score == 0.0
    assert row.accuracy == 0.5


def test_perfect_scorer():
    pairs = [(0, 1, True), (2, 3, False)]

    def scorer(query):
        return [a == 0 for a, _ in query]

    row = evaluate(scorer, pairs)
    assert row.accuracy == 1.0 and row.f_score == 1.0


def test_empty_pairs_rejected():
    with pytest.raises(ValueError):
        evaluate(const_scorer(True), [])


def test_metric_oracle_1000_matrices():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        tp, fp, tn, fn = (int(x) for x in rng.integers(0, 50, size=4))
        if tp + fp + tn + fn == 0:
            continue
        row = EvalRow("s", "SRP", "x", None, tp, fp, tn, fn)
        # independent formulas
        n = tp + fp + tn + fn
        acc = (tp + tn) / n
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        assert abs(row.accuracy - acc) < 1e-12
        assert abs(row.precision - p) < 1e-12
        assert abs(row.recall - r) < 1e-12
        assert abs(row.f_score - f) < 1e-12


def test_report_rendering_and_roundtrip(tmp_path):
    report = EvalReport(seed=13, run_id="abc123")
    report.rows.append(EvalRow("gat", "SRP", "inductive", None, 5, 2, 6, 1))
    report.rows.append(EvalRow("full_model", "COMP", "competitor", True, 9, 1, 8, 2))
    text = render_table(report)
    assert "gat" in text and "--" in text  # GNN rows carry no SIC variant
    tsv = render_tsv(report)
    assert tsv.splitlines()[0].startswith("system\t")
    write_report(report, tmp_path / "r.txt", tmp_path / "r.tsv")
    back = parse_tsv(tmp_path / "r.tsv")
    assert len(back.rows) == 2
    assert back.rows[0].tp == 5
    assert back.rows[1].with_sic is True
    assert back.run_id == "abc123"


def test_report_bytes_stable(tmp_path):
    report = EvalReport(seed=1, run_id="x")
    report.rows.append(EvalRow("sage", "SRP", "fully_inductive", None, 1, 2, 3, 4))
    write_report(report, tmp_path / "a.txt", tmp_path / "a.tsv")
    write_report(report, tmp_path / "b.txt", tmp_path / "b.tsv")
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()
    assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()


def test_competitor_eval_pairs_balanced_and_pure():
    cfg = WorldConfig(n_firms=50, n_industries=4, competitor_within_industry_rate=0.6, seed=3)
    graph, comp = generate_world(cfg)
    pairs = competitor_eval_pairs(graph, comp, max_positives=30, seed=5)
    pos = [p for p in pairs if p[2]]
    neg = [p for p in pairs if not p[2]]
    assert len(pos) == len(neg) == 30
    for a, b, label in pairs:
        canon = (min(a, b), max(a, b))
        assert (canon in comp) == label
    # deterministic
    assert pairs == competitor_eval_pairs(graph, comp, max_positives=30, seed=5)


def test_competitor_eval_requested_size():
    cfg = WorldConfig(n_firms=80, n_industries=4, competitor_within_industry_rate=0.8, seed=4)
    graph, comp = generate_world(cfg)
    want = 100
    pairs = competitor_eval_pairs(graph, comp, max_positives=want, seed=1)
    assert len(pairs) == 2 * min(want, len(comp))
