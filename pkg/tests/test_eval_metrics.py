"""Corpus BLEU and ROUGE-L against hand-worked values and brute force."""

import itertools

import numpy as np
import pytest

from signtok.eval_metrics import (
    EvalReport,
    bleu_n,
    evaluate_outputs,
    rouge_l,
    token_accuracy,
    write_report,
)
from signtok.kernels import lcs_length


def test_bleu_identity():
    hyp = [["a", "b", "c", "d"]]
    assert bleu_n(hyp, hyp, 4) == pytest.approx(1.0, abs=1e-12)
    assert bleu_n(hyp, hyp, 1) == pytest.approx(1.0, abs=1e-12)


def test_bleu_brevity_penalty_hand_example():
    # hyp of length 4 against ref of length 5: all 4-gram precisions are
    # perfect, so BLEU-4 is exactly the brevity penalty e^(1 - 5/4)
    hyp = [["a", "b", "c", "d"]]
    ref = [["a", "b", "c", "d", "e"]]
    want = np.exp(1.0 - 5.0 / 4.0)
    assert bleu_n(hyp, ref, 4) == pytest.approx(want, abs=1e-9)
    assert want == pytest.approx(0.7788007830714049, abs=1e-12)


def test_bleu_empty_hypothesis_is_zero():
    assert bleu_n([[]], [["a", "b"]], 2) == 0.0


def test_bleu_zero_ngram_precision_is_zero():
    assert bleu_n([["x", "y"]], [["a", "b"]], 1) == 0.0
    # bigram precision zero even though one unigram matches
    assert bleu_n([["a", "q"]], [["a", "b"]], 2) == 0.0


def test_bleu_clipping():
    # "the the the ..." against a ref with two "the": clipped to 2/7, and
    # the hypothesis is longer than the reference so no brevity penalty
    hyp = [["the"] * 7]
    ref = [["the", "cat", "is", "on", "the", "mat"]]
    assert bleu_n(hyp, ref, 1) == pytest.approx(2.0 / 7.0, abs=1e-12)


def test_bleu_is_corpus_level():
    hyps = [["a", "b"], ["c"]]
    refs = [["a", "b"], ["d"]]
    # pooled counts: 2 + 0 matches over 2 + 1 hyp unigrams; lengths 3 vs 3
    assert bleu_n(hyps, refs, 1) == pytest.approx(2.0 / 3.0, abs=1e-12)


def test_bleu_input_validation():
    with pytest.raises(ValueError):
        bleu_n([["a"]], [], 1)
    with pytest.raises(ValueError):
        bleu_n([["a"]], [["a"], ["b"]], 1)
    with pytest.raises(ValueError):
        bleu_n([["a"]], [["a"]], 0)


def test_rouge_identical():
    assert rouge_l([["a", "b", "c"]], [["a", "b", "c"]]) == pytest.approx(1.0)


def test_rouge_swap_example():
    # LCS("a b", "b a") = 1; P = R = 1/2, so F1 = 1/2
    assert rouge_l([["a", "b"]], [["b", "a"]]) == pytest.approx(0.5, abs=1e-12)


def test_rouge_disjoint():
    assert rouge_l([["a", "b"]], [["x", "y"]]) == 0.0


def test_rouge_averages_over_pairs():
    hyps = [["a", "b"], ["a", "b"]]
    refs = [["a", "b"], ["b", "a"]]
    assert rouge_l(hyps, refs) == pytest.approx(0.75, abs=1e-12)


def _lcs_brute(a, b):
    best = 0
    for k in range(len(a), 0, -1):
        for comb in itertools.combinations(range(len(a)), k):
            sub = [a[i] for i in comb]
            it = iter(b)
            if all(tok in it for tok in sub):
                return k
    return best


def test_lcs_matches_brute_force_up_to_eight():
    rng = np.random.default_rng(17)
    for _ in range(150):
        la, lb = int(rng.integers(0, 9)), int(rng.integers(0, 9))
        a = [int(v) for v in rng.integers(0, 4, size=la)]
        b = [int(v) for v in rng.integers(0, 4, size=lb)]
        got = lcs_length(
            np.asarray(a, dtype=np.int64), np.asarray(b, dtype=np.int64)
        )
        assert got == _lcs_brute(a, b)


def test_token_accuracy():
    hyps = [[1, 2, 3], [4]]
    refs = [[1, 9, 3], [4]]
    # 3 position matches over 4 reference tokens
    assert token_accuracy(hyps, refs) == pytest.approx(0.75)
    assert token_accuracy([[1, 2]], [[1, 2, 3]]) == pytest.approx(2.0 / 3.0)


def test_evaluate_outputs_report(tmp_path):
    hyps = [["a", "b"], ["c"]]
    refs = [["a", "b"], ["c"]]
    report = evaluate_outputs(hyps, refs)
    assert isinstance(report, EvalReport)
    assert set(report.bleu) == {"1", "2", "3", "4"}
    assert report.bleu["1"] == pytest.approx(1.0)
    assert report.rouge_l == pytest.approx(1.0)
    assert report.token_accuracy == pytest.approx(1.0)
    assert report.n_samples == 2
    p = tmp_path / "report.json"
    write_report(p, report)
    import json

    obj = json.loads(p.read_text())
    assert obj["bleu"]["1"] == 1.0
