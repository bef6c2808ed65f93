"""Corpus-level BLEU and ROUGE-L over token-id sequences.

BLEU-n: modified (clipped) n-gram precisions aggregated over the corpus,
uniform 1/n weights in the geometric mean, brevity penalty
exp(min(0, 1 - ref_len/hyp_len)) from total lengths, no smoothing: any
zero precision (or an empty hypothesis corpus) gives 0.

ROUGE-L: per-pair LCS F1 (precision LCS/|hyp|, recall LCS/|ref|),
averaged over the corpus.
"""

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .fileio import dump_json
from .kernels import lcs_length


def _ngram_counts(seq, n):
    return Counter(tuple(seq[i : i + n]) for i in range(len(seq) - n + 1))


def bleu_n(hypotheses, references, n):
    """Corpus BLEU with max n-gram order n (single reference per
    hypothesis)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if len(hypotheses) != len(references):
        raise ValueError("hypothesis/reference count mismatch")
    if not hypotheses:
        raise ValueError("empty input")
    hyp_len = sum(len(h) for h in hypotheses)
    ref_len = sum(len(r) for r in references)
    if hyp_len == 0:
        return 0.0
    log_sum = 0.0
    for g in range(1, n + 1):
        matched = 0
        total = 0
        for hyp, ref in zip(hypotheses, references):
            hc = _ngram_counts(hyp, g)
            rc = _ngram_counts(ref, g)
            matched += sum(min(c, rc[gram]) for gram, c in hc.items())
            total += max(0, len(hyp) - g + 1)
        if matched == 0 or total == 0:
            return 0.0
        log_sum += math.log(matched / total) / n
    bp = math.exp(min(0.0, 1.0 - ref_len / hyp_len))
    return bp * math.exp(log_sum)


def rouge_l(hypotheses, references):
    """Mean LCS-based F1 over hypothesis/reference pairs."""
    if len(hypotheses) != len(references):
        raise ValueError("hypothesis/reference count mismatch")
    if not hypotheses:
        raise ValueError("empty input")
    scores = []
    for hyp, ref in zip(hypotheses, references):
        if len(hyp) == 0 or len(ref) == 0:
            scores.append(0.0)
            continue
        # tokens may be any hashables; the LCS kernel wants int64 rows
        ids = {}
        for tok in hyp:
            ids.setdefault(tok, len(ids))
        for tok in ref:
            ids.setdefault(tok, len(ids))
        lcs = lcs_length(
            np.asarray([ids[t] for t in hyp], dtype=np.int64),
            np.asarray([ids[t] for t in ref], dtype=np.int64),
        )
        if lcs == 0:
            scores.append(0.0)
            continue
        p = lcs / len(hyp)
        r = lcs / len(ref)
        scores.append(2.0 * p * r / (p + r))
    return float(sum(scores) / len(scores))


def token_accuracy(hypotheses, references):
    """Position-wise exact-match rate against the references (missing or
    extra positions count as wrong; denominator is total reference
    length)."""
    if len(hypotheses) != len(references):
        raise ValueError("hypothesis/reference count mismatch")
    total = sum(len(r) for r in references)
    if total == 0:
        raise ValueError("empty references")
    correct = 0
    for hyp, ref in zip(hypotheses, references):
        correct += sum(1 for a, b in zip(hyp, ref) if a == b)
    return correct / total


@dataclass
class EvalReport:
    n_samples: int
    bleu: dict
    rouge_l: float
    token_accuracy: float
    split: str = "all"


def evaluate_outputs(hypotheses, references, split="all"):
    return EvalReport(
        n_samples=len(hypotheses),
        bleu={str(g): bleu_n(hypotheses, references, g) for g in (1, 2, 3, 4)},
        rouge_l=rouge_l(hypotheses, references),
        token_accuracy=token_accuracy(hypotheses, references),
        split=split,
    )


def write_report(path, report):
    dump_json(
        path,
        {
            "n_samples": report.n_samples,
            "split": report.split,
            "bleu": report.bleu,
            "rouge_l": report.rouge_l,
            "token_accuracy": report.token_accuracy,
        },
    )
