"""Repeated-character preprocessing.

Signing speed shows up as repeated quantized characters.  Each maximal run
is collapsed to a single token; runs strictly longer than the sequence's
own mean repeated-run length additionally get the reserved slow-down
marker s0 appended, so deliberate slowness survives collapsing.

Inputs are quantized id sequences (ids >= 1, s0 never emitted by the
quantizer).  On that domain the transform is idempotent: a collapsed
sequence has no runs of length >= 2, so a second pass leaves it unchanged.
"""

from dataclasses import dataclass


@dataclass
class RunStats:
    """alpha: mean length of maximal runs of length >= 2 (inf if none)."""

    alpha: float
    n_runs: int
    n_tokens: int


def _runs(seq):
    out = []
    i = 0
    n = len(seq)
    while i < n:
        j = i + 1
        while j < n and seq[j] == seq[i]:
            j += 1
        out.append((seq[i], j - i))
        i = j
    return out


def compute_run_stats(seq):
    if len(seq) == 0:
        raise ValueError("empty input")
    lengths = [length for _, length in _runs(seq) if length >= 2]
    alpha = sum(lengths) / len(lengths) if lengths else float("inf")
    return RunStats(alpha=alpha, n_runs=len(lengths), n_tokens=len(seq))


def compute_alpha(seq):
    return compute_run_stats(seq).alpha


def collapse_runs(seq, alpha, s0_id=0):
    """Collapse maximal runs; append s0 after runs strictly longer than
    alpha.  Length-1 runs pass through untouched."""
    out = []
    for token, length in _runs(seq):
        out.append(token)
        if length >= 2 and length > alpha:
            out.append(s0_id)
    return out


def preprocess_sequence(seq, s0_id=0):
    """compute_alpha + collapse_runs with the sequence's own statistics."""
    return collapse_runs(seq, compute_alpha(seq), s0_id=s0_id)
