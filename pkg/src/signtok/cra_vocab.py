"""Word-vocabulary reconstruction over character tokens.

Frequent character n-grams become word candidates; for each trial
vocabulary size the candidate-to-character transport problem is solved by
Sinkhorn iterations, the resulting coupling is scored by the word-level
codebook entropy, and the size whose step shows the largest entropy drop
wins.  Chosen words get embeddings by composing their character rows
through the trained recurrent summarizer.

Cost convention: a word/char cell costs log(len(word)) when the word
contains the character (the uniform 1/len membership estimate), infinite
otherwise.  The solver minimizes the entropic objective
``sum P log P + <P, cost>`` subject to the marginals, which one Sinkhorn
run with kernel exp(-cost) solves exactly; the reported codebook entropy
is the Shannon form ``-sum P log P - <P, cost>`` whose decomposition
collapses to the plain word entropy when the coupling factorizes.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .fileio import dump_json, load_json, write_csv
from .vq_sign import run_gru

logger = logging.getLogger(__name__)


@dataclass
class CandidateWord:
    chars: tuple
    count: int


def collect_candidates(sequences, max_len=5, pool_size=None):
    """Rank all contiguous n-grams (lengths 1..max_len) of the preprocessed
    id sequences by raw overlapping count, ties broken lexicographically.

    Every observed single character is always retained; the pool is then
    topped up with the best multi-character candidates until pool_size.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    counts = {}
    for seq in sequences:
        seq = list(seq)
        n = len(seq)
        for i in range(n):
            for L in range(1, min(max_len, n - i) + 1):
                gram = tuple(seq[i : i + L])
                counts[gram] = counts.get(gram, 0) + 1
    if not counts:
        raise ValueError("empty input")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    singles = [(g, c) for g, c in ranked if len(g) == 1]
    if pool_size is None:
        chosen = ranked
    else:
        multi_budget = max(0, pool_size - len(singles))
        multis = [(g, c) for g, c in ranked if len(g) > 1][:multi_budget]
        keep = set(g for g, _ in singles) | set(g for g, _ in multis)
        chosen = [(g, c) for g, c in ranked if g in keep]
    return [CandidateWord(chars=g, count=c) for g, c in chosen]


@dataclass
class TransportProblem:
    """Word rows vs character columns.  Finite cost cells mark membership;
    marginals each sum to 1; every row has at least one finite entry."""

    cost: np.ndarray
    row_marginals: np.ndarray
    col_marginals: np.ndarray
    words: list
    char_ids: list
    eps: float = 1e-3


def build_problem(candidates, char_freqs, eps=1e-3):
    """Assemble the transport problem for one candidate set.

    char_freqs: dict char_id -> frequency (> 0).  A candidate using a
    character absent from char_freqs is an error.
    """
    if not candidates:
        raise ValueError("empty candidate set")
    char_ids = sorted(char_freqs)
    if not char_ids:
        raise ValueError("empty character set")
    col = np.asarray([char_freqs[c] for c in char_ids], dtype=np.float64)
    if np.any(col <= 0):
        raise ValueError("character frequencies must be positive")
    index = {c: i for i, c in enumerate(char_ids)}
    W = len(candidates)
    C = len(char_ids)
    cost = np.full((W, C), np.inf)
    row = np.empty(W, dtype=np.float64)
    words = []
    for j, cand in enumerate(candidates):
        words.append(tuple(cand.chars))
        row[j] = cand.count
        member_cost = np.log(float(len(cand.chars)))
        for c in set(cand.chars):
            if c not in index:
                raise ValueError(f"candidate {cand.chars} uses unknown char {c}")
            cost[j, index[c]] = member_cost
    if np.any(row <= 0):
        raise ValueError("candidate counts must be positive")
    row = row / row.sum()
    col = col / col.sum()
    return TransportProblem(
        cost=cost,
        row_marginals=row,
        col_marginals=col,
        words=words,
        char_ids=char_ids,
        eps=eps,
    )


@dataclass
class TransportPlan:
    plan: np.ndarray
    objective: float
    converged: bool
    n_iters: int
    objective_history: list = field(default_factory=list)


def _entropic_objective(plan, cost):
    mask = plan > 0
    ent = float(np.sum(plan[mask] * np.log(plan[mask])))
    carry = float(np.sum(plan[mask & np.isfinite(cost)] * cost[mask & np.isfinite(cost)]))
    return ent + carry


def sinkhorn_solve(problem, tol=1e-9, max_iters=10000):
    """Alternating marginal scalings on the kernel exp(-cost).

    Stops when the worst marginal violation either changes by less than
    tol between iterations or drops below tol; converged means the final
    violation is within the problem's eps slack.
    """
    a = problem.row_marginals
    b = problem.col_marginals
    K = np.exp(-problem.cost)
    K[~np.isfinite(problem.cost)] = 0.0
    if np.any(K.sum(axis=1) == 0):
        raise ValueError("infeasible row: a word with no admissible characters")
    if np.any(K.sum(axis=0) == 0):
        raise ValueError("infeasible column: a character contained in no word")
    v = np.ones_like(b)
    u = np.ones_like(a)
    history = []
    prev_viol = np.inf
    n_iters = 0
    viol = np.inf
    for it in range(1, max_iters + 1):
        n_iters = it
        Kv = K @ v
        if np.any(Kv == 0):
            raise ValueError("Sinkhorn breakdown: zero row scaling")
        u = a / Kv
        Ku = K.T @ u
        if np.any(Ku == 0):
            raise ValueError("Sinkhorn breakdown: zero column scaling")
        v = b / Ku
        plan = u[:, None] * K * v[None, :]
        viol = max(
            float(np.max(np.abs(plan.sum(axis=1) - a))),
            float(np.max(np.abs(plan.sum(axis=0) - b))),
        )
        history.append(_entropic_objective(plan, problem.cost))
        if viol < tol or abs(prev_viol - viol) < tol:
            break
        prev_viol = viol
    plan = u[:, None] * K * v[None, :]
    return TransportPlan(
        plan=plan,
        objective=_entropic_objective(plan, problem.cost),
        converged=bool(viol <= problem.eps),
        n_iters=n_iters,
        objective_history=history,
    )


def codebook_entropy(plan, problem):
    """Word-level codebook entropy of a coupling:

        H = -sum P log P - sum P * (-log P(char | word))

    with 0 log 0 := 0 and the membership costs standing in for
    -log P(char|word).  When the coupling factorizes into the word
    marginal times a normalized membership conditional, this collapses to
    the plain word entropy -sum P(w) log P(w).
    """
    P = plan.plan if isinstance(plan, TransportPlan) else np.asarray(plan)
    mask = P > 0
    ent = -float(np.sum(P[mask] * np.log(P[mask])))
    finite = np.isfinite(problem.cost)
    carried = mask & finite
    ent -= float(np.sum(P[carried] * problem.cost[carried]))
    if np.any(mask & ~finite):
        raise ValueError("coupling puts mass on an inadmissible cell")
    return ent


@dataclass
class WordToken:
    id: int
    chars: tuple
    prob: float
    embedding: np.ndarray = None


@dataclass
class WordCodebook:
    tokens: list
    m: int
    chosen_r: int
    dim: int = 0

    def compositions(self):
        return {t.chars: t.id for t in self.tokens}

    def max_word_len(self):
        return max(len(t.chars) for t in self.tokens)


@dataclass
class EntropyCurve:
    rows: list  # (r, token_count, entropy, delta-or-None)
    chosen_r: int


def _candidate_subset(candidates, size):
    """First `size` candidates by rank, but observed single characters are
    always forced in (transport feasibility: every character column needs
    at least one containing word)."""
    singles = [c for c in candidates if len(c.chars) == 1]
    if size <= len(singles):
        return singles[:size]
    multis = [c for c in candidates if len(c.chars) > 1][: size - len(singles)]
    keep = set(id(c) for c in singles) | set(id(c) for c in multis)
    return [c for c in candidates if id(c) in keep]


def select_vocab(
    candidates,
    char_freqs,
    m,
    r_max,
    eps=1e-3,
    tol=1e-9,
    max_iters=10000,
    override_r=None,
):
    """Sweep vocabulary sizes r*m for r = 1..r_max, score each by codebook
    entropy, and keep the size with the largest entropy drop from its
    predecessor: chosen_r = argmax over r >= 2 of (H_{r-1} - H_r), first
    winner on ties.  r_max is truncated (with a warning) when the candidate
    pool runs out.  override_r, when given, bypasses the rule but still
    records the full curve.

    Returns (WordCodebook without embeddings, EntropyCurve).
    """
    if m < 1 or r_max < 1:
        raise ValueError("m and r_max must be >= 1")
    n_avail = len(candidates)
    r_eff = min(r_max, max(1, n_avail // m))
    if r_eff < r_max:
        logger.warning(
            "candidate pool (%d) supports only r_max=%d (requested %d)",
            n_avail,
            r_eff,
            r_max,
        )
    entropies = []
    subsets = []
    rows = []
    for r in range(1, r_eff + 1):
        subset = _candidate_subset(candidates, r * m)
        chars_in_subset = set(c for cand in subset for c in cand.chars)
        freqs = {c: f for c, f in char_freqs.items() if c in chars_in_subset}
        dropped = set(char_freqs) - set(freqs)
        if dropped:
            logger.warning(
                "r=%d: dropping %d unsupported character column(s)", r, len(dropped)
            )
        problem = build_problem(subset, freqs, eps=eps)
        plan = sinkhorn_solve(problem, tol=tol, max_iters=max_iters)
        H = codebook_entropy(plan, problem)
        entropies.append(H)
        subsets.append(subset)
        delta = entropies[r - 2] - H if r >= 2 else None
        rows.append((r, len(subset), H, delta))
    if override_r is not None:
        if not 1 <= override_r <= r_eff:
            raise ValueError(f"override_r must be in 1..{r_eff}")
        chosen_r = int(override_r)
    elif r_eff == 1:
        chosen_r = 1
    else:
        deltas = [(r, rows[r - 1][3]) for r in range(2, r_eff + 1)]
        chosen_r = max(deltas, key=lambda p: p[1])[0]
        best = max(d for _, d in deltas)
        for r, d in deltas:  # first winner on ties
            if d == best:
                chosen_r = r
                break
    subset = subsets[chosen_r - 1]
    total = sum(c.count for c in subset)
    tokens = [
        WordToken(id=i, chars=tuple(c.chars), prob=c.count / total)
        for i, c in enumerate(subset)
    ]
    return (
        WordCodebook(tokens=tokens, m=m, chosen_r=chosen_r),
        EntropyCurve(rows=rows, chosen_r=chosen_r),
    )


def segment(seq, codebook):
    """Greedy longest-match segmentation against the word compositions.

    Returns a list of ("word", word_id) / ("char", char_id) pairs; spans
    matching no composition fall through one character at a time.
    Concatenating the matched compositions and pass-through characters
    reproduces the input exactly.
    """
    comp = codebook.compositions()
    max_len = codebook.max_word_len()
    seq = list(seq)
    out = []
    i = 0
    n = len(seq)
    while i < n:
        matched = False
        for L in range(min(max_len, n - i), 0, -1):
            gram = tuple(seq[i : i + L])
            if gram in comp:
                out.append(("word", comp[gram]))
                i += L
                matched = True
                break
        if not matched:
            out.append(("char", seq[i]))
            i += 1
    return out


def compose_word_embeddings(word_codebook, char_codebook, model):
    """Fill each word token's embedding: run the recurrent summarizer over
    the word's character rows (zero initial state) and take the final
    state.  A length-1 word therefore embeds as the one-step state."""
    embs = np.zeros((len(word_codebook.tokens), char_codebook.dim))
    for i, token in enumerate(word_codebook.tokens):
        x = char_codebook.rows[list(token.chars)]
        h, _, _, _ = run_gru(model.gru, x)
        token.embedding = h[-1].copy()
        embs[i] = h[-1]
    word_codebook.dim = char_codebook.dim
    return embs


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def save_word_codebook(path, codebook):
    if any(t.embedding is None for t in codebook.tokens):
        raise ValueError("compose embeddings before saving the word codebook")
    obj = {
        "version": 1,
        "kind": "word",
        "dim": codebook.dim,
        "m": codebook.m,
        "chosen_r": codebook.chosen_r,
        "tokens": [
            {
                "id": t.id,
                "chars": list(t.chars),
                "prob": float(t.prob),
                "embedding": [float(v) for v in t.embedding],
            }
            for t in codebook.tokens
        ],
    }
    dump_json(path, obj)


def load_word_codebook(path):
    obj = load_json(path)
    if obj.get("kind") != "word" or obj.get("version") != 1:
        raise ValueError("not a word codebook file")
    tokens = [
        WordToken(
            id=t["id"],
            chars=tuple(t["chars"]),
            prob=t["prob"],
            embedding=np.asarray(t["embedding"], dtype=np.float64),
        )
        for t in sorted(obj["tokens"], key=lambda t: t["id"])
    ]
    return WordCodebook(
        tokens=tokens, m=obj["m"], chosen_r=obj["chosen_r"], dim=obj["dim"]
    )


def write_entropy_curve(path, curve):
    write_csv(
        path,
        ["r", "token_count", "entropy", "delta"],
        [(r, n, H, "" if d is None else d) for r, n, H, d in curve.rows],
    )
