"""Character-level vector quantization with a contrastive objective.

A learned codebook turns each continuous feature row into a discrete
character token (nearest row, squared Euclidean).  Row 0 is the reserved
slow-down marker s0 and is never matched during quantization.  A single
gated recurrent cell summarizes the quantized sequence causally, and K
per-offset linear heads predict future feature rows against negatives
drawn from the minibatch; that contrastive loss shapes the recurrent
summarizer while a quadratic dictionary term pulls codebook rows toward
their assigned features.

Gradient routing follows the straight-through contract:

* the contrastive loss updates the recurrent cell and the heads; its
  gradient with respect to the quantized embeddings is an identity copy
  onto the encoder path (which is fixed here, so the copy is exposed but
  unused by the trainer);
* the dictionary term ``sum ||sg(z) - zhat||^2`` updates only codebook
  rows;
* the commitment term ``gamma * sum ||z - sg(zhat)||^2`` belongs to the
  encoder path only.

Every gradient in this module is analytic and certified against central
finite differences in the test suite.
"""

from dataclasses import dataclass, field

import numpy as np

from .char_preproc import preprocess_sequence
from .fileio import dump_json, load_json
from .kernels import gru_backward, gru_forward, nearest_rows

S0_ID = 0


@dataclass
class CharCodebook:
    """(M, d) float64 rows; row 0 is the reserved slow-down token s0."""

    rows: np.ndarray

    def __post_init__(self):
        self.rows = np.ascontiguousarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2 or self.rows.shape[0] < 2:
            raise ValueError("codebook needs at least two rows (s0 + one char)")

    @property
    def n_tokens(self):
        return self.rows.shape[0]

    @property
    def dim(self):
        return self.rows.shape[1]


def init_codebook(n_tokens, dim, rng):
    rows = rng.standard_normal((n_tokens, dim)) / np.sqrt(dim)
    return CharCodebook(rows=rows)


def quantize(Z, codebook):
    """Nearest codebook row per feature vector, excluding s0.

    Returns int64 ids, all >= 1.  Ties resolve to the lowest id.
    """
    Z = np.ascontiguousarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] == 0:
        raise ValueError("empty input")
    if Z.shape[1] != codebook.dim:
        raise ValueError(
            f"feature dim {Z.shape[1]} does not match codebook dim {codebook.dim}"
        )
    return nearest_rows(Z, codebook.rows[1:]) + 1


GRU_NAMES = ("Wr", "Wu", "Wn", "Ur", "Uu", "Un", "br", "bu", "bn")


@dataclass
class ContextModel:
    """Causal summarizer: one gated recurrent cell (state dim d, zero
    initial state) over quantized embeddings, plus K linear prediction
    heads (d x d), one per future offset."""

    gru: dict
    heads: np.ndarray  # (K, d, d)

    @property
    def dim(self):
        return self.heads.shape[1]

    @property
    def n_heads(self):
        return self.heads.shape[0]

    def param_dict(self):
        out = {f"gru.{k}": self.gru[k] for k in GRU_NAMES}
        out["heads"] = self.heads
        return out


def init_context_model(dim, n_heads, rng):
    scale = 1.0 / np.sqrt(dim)
    gru = {}
    for name in ("Wr", "Wu", "Wn", "Ur", "Uu", "Un"):
        gru[name] = rng.standard_normal((dim, dim)) * scale
    for name in ("br", "bu", "bn"):
        gru[name] = np.zeros(dim)
    heads = rng.standard_normal((n_heads, dim, dim)) * scale
    return ContextModel(gru=gru, heads=heads)


def _gru_args(gru):
    return tuple(np.ascontiguousarray(gru[k], dtype=np.float64) for k in GRU_NAMES)


def run_gru(gru, x, h0=None):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if h0 is None:
        h0 = np.zeros(gru["br"].shape[0])
    h0 = np.ascontiguousarray(h0, dtype=np.float64)
    return gru_forward(x, h0, *_gru_args(gru))


def run_gru_backward(gru, x, h0, caches, dh_out):
    h, r, u, n = caches
    x = np.ascontiguousarray(x, dtype=np.float64)
    dh_out = np.ascontiguousarray(dh_out, dtype=np.float64)
    out = gru_backward(
        x,
        h0,
        h,
        r,
        u,
        n,
        np.ascontiguousarray(gru["Wr"], dtype=np.float64),
        np.ascontiguousarray(gru["Wu"], dtype=np.float64),
        np.ascontiguousarray(gru["Wn"], dtype=np.float64),
        np.ascontiguousarray(gru["Ur"], dtype=np.float64),
        np.ascontiguousarray(gru["Uu"], dtype=np.float64),
        np.ascontiguousarray(gru["Un"], dtype=np.float64),
        dh_out,
    )
    grads = dict(zip(("Wr", "Wu", "Wn", "Ur", "Uu", "Un", "br", "bu", "bn"), out[:9]))
    dx = out[9]
    dh0 = out[10]
    return grads, dx, dh0


def context_states(model, zhat):
    """(T, d) causal summaries of the quantized embedding sequence."""
    if zhat.shape[0] == 0:
        raise ValueError("empty input")
    h, _, _, _ = run_gru(model.gru, zhat)
    return h


def sample_negatives(rng, T, n_heads, n_negatives, pool_len, pos_offset=0):
    """Uniform negative indices into the pool, one draw set per (k, tau).

    The positive row itself (pool index pos_offset + tau + k) is excluded;
    everything else in the pool is fair game.  Returns {k: (T-k, n_neg)}.
    """
    if pool_len < 2:
        raise ValueError("negative pool needs at least two rows")
    out = {}
    for k in range(1, n_heads + 1):
        n_pos = T - k
        if n_pos <= 0:
            out[k] = np.zeros((0, n_negatives), dtype=np.int64)
            continue
        draws = rng.integers(0, pool_len - 1, size=(n_pos, n_negatives))
        forbidden = (pos_offset + np.arange(n_pos) + k).reshape(-1, 1)
        out[k] = np.where(draws >= forbidden, draws + 1, draws).astype(np.int64)
    return out


def _log_sigmoid(x):
    # log sigma(x) = -softplus(-x), stable for large |x|
    return -np.logaddexp(0.0, -x)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500.0, 500.0)))


def cpc_loss(Z, zhat, model, negatives, lam=1.0, pool=None):
    """Contrastive predictive loss over one sequence.

    For each offset k and each position tau <= T-k, the head maps the
    context state to a prediction h; the loss is
    -[log sigma(z_pos . h) + lam * mean_neg log sigma(-z_neg . h)].

    Returns (total, per_k) where per_k maps offset -> its summed term.
    """
    if pool is None:
        pool = Z
    if Z.shape[0] <= model.n_heads:
        raise ValueError("sequence too short")
    C = context_states(model, zhat)
    T = Z.shape[0]
    total = 0.0
    per_k = {}
    for k in range(1, model.n_heads + 1):
        n_pos = T - k
        if n_pos <= 0:
            per_k[k] = 0.0
            continue
        H = C[:n_pos] @ model.heads[k - 1].T
        pos_logits = np.sum(Z[k : k + n_pos] * H, axis=1)
        term = np.sum(_log_sigmoid(pos_logits))
        idx = negatives[k]
        if idx.shape[1] > 0:
            neg_logits = np.einsum("tnd,td->tn", pool[idx], H)
            term += lam * np.sum(np.mean(_log_sigmoid(-neg_logits), axis=1))
        loss_k = -term
        per_k[k] = float(loss_k)
        total += loss_k
    return float(total), per_k


def cpc_backward(Z, zhat, model, negatives, lam=1.0, pool=None):
    """Analytic gradients of cpc_loss.

    Returns a dict with:
      heads        (K, d, d)
      gru          {name: grad}
      d_zhat       (T, d)   gradient w.r.t. the quantized embeddings (the
                            straight-through copy destined for the encoder)
      d_Z          (T, d)   direct gradient on the feature rows (positives)
      d_pool       (P, d)   gradient on the negative pool rows
    """
    external_pool = pool is not None
    if pool is None:
        pool = Z
    if Z.shape[0] <= model.n_heads:
        raise ValueError("sequence too short")
    h_states, r_c, u_c, n_c = run_gru(model.gru, zhat)
    C = h_states
    T = Z.shape[0]
    dC = np.zeros_like(C)
    d_heads = np.zeros_like(model.heads)
    d_Z = np.zeros_like(Z)
    d_pool = np.zeros_like(pool)
    for k in range(1, model.n_heads + 1):
        n_pos = T - k
        if n_pos <= 0:
            continue
        Wk = model.heads[k - 1]
        Ck = C[:n_pos]
        H = Ck @ Wk.T
        Zpos = Z[k : k + n_pos]
        pos_logits = np.sum(Zpos * H, axis=1)
        # d/da of -log sigma(a) is -sigma(-a)
        da = -_sigmoid(-pos_logits)
        dH = da[:, None] * Zpos
        d_Z[k : k + n_pos] += da[:, None] * H
        idx = negatives[k]
        if idx.shape[1] > 0:
            n_neg = idx.shape[1]
            zneg = pool[idx]
            neg_logits = np.einsum("tnd,td->tn", zneg, H)
            ds = (lam / n_neg) * _sigmoid(neg_logits)
            dH += np.einsum("tn,tnd->td", ds, zneg)
            np.add.at(d_pool, idx, ds[:, :, None] * H[:, None, :])
        d_heads[k - 1] = dH.T @ Ck
        dC[:n_pos] += dH @ Wk
    h0 = np.zeros(model.dim)
    gru_grads, d_zhat, _ = run_gru_backward(
        model.gru, zhat, h0, (h_states, r_c, u_c, n_c), dC
    )
    if not external_pool:
        d_Z = d_Z + d_pool
        d_pool = d_Z
    return {
        "heads": d_heads,
        "gru": gru_grads,
        "d_zhat": d_zhat,
        "d_Z": d_Z,
        "d_pool": d_pool,
    }


def quantization_terms(Z, zhat, gamma):
    """Value of the two quadratic terms.  Both share the same value (the
    stop-gradients only touch derivatives): returns (dict_term,
    commit_term) = (sq, gamma * sq)."""
    sq = float(np.sum((Z - zhat) ** 2))
    return sq, gamma * sq


def dict_term_grad_codebook(Z, ids, codebook):
    """Gradient of sum ||sg(z) - zhat||^2 w.r.t. codebook rows (assignments
    held fixed)."""
    grad = np.zeros_like(codebook.rows)
    diff = 2.0 * (codebook.rows[ids] - Z)
    np.add.at(grad, ids, diff)
    return grad


def commit_term_grad_features(Z, zhat, gamma):
    """Gradient of gamma * sum ||z - sg(zhat)||^2 w.r.t. the features."""
    return 2.0 * gamma * (Z - zhat)


def vq_loss(Z, zhat, cpc_total, gamma):
    """Total quantization objective for one sequence."""
    sq, commit = quantization_terms(Z, zhat, gamma)
    return cpc_total + sq + commit, sq, commit


@dataclass
class VqTrainConfig:
    n_tokens: int = 256
    dim: int = 1024
    n_heads: int = 3
    gamma: float = 0.25
    lam: float = 1.0
    n_negatives: int = 10
    lr: float = 0.01
    epochs: int = 20
    batch_size: int = 8
    seed: int = 0


def train_vq_sign(sequences, config):
    """Train codebook + context model on a list of (T, d) feature arrays.

    Returns (codebook, model, log) where log is a list of per-epoch dicts
    with keys epoch / cpc / dict / commit / total (batch-size-normalized
    means per sequence).
    """
    from .optim import Adam

    if not sequences:
        raise ValueError("empty input")
    rng = np.random.default_rng(config.seed)
    codebook = init_codebook(config.n_tokens, config.dim, rng)
    model = init_context_model(config.dim, config.n_heads, rng)
    params = {"codebook": codebook.rows}
    params.update(model.param_dict())
    opt = Adam(params, lr=config.lr)
    log = []
    n = len(sequences)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        ep_cpc = ep_dict = ep_commit = 0.0
        for bstart in range(0, n, config.batch_size):
            batch_idx = order[bstart : bstart + config.batch_size]
            batch = [sequences[i] for i in batch_idx]
            pool = np.concatenate(batch, axis=0)
            offsets = np.cumsum([0] + [b.shape[0] for b in batch[:-1]])
            g_codebook = np.zeros_like(codebook.rows)
            g_heads = np.zeros_like(model.heads)
            g_gru = {k: np.zeros_like(v) for k, v in model.gru.items()}
            for Z, off in zip(batch, offsets):
                ids = quantize(Z, codebook)
                zhat = codebook.rows[ids]
                negatives = sample_negatives(
                    rng,
                    Z.shape[0],
                    config.n_heads,
                    config.n_negatives,
                    pool.shape[0],
                    pos_offset=int(off),
                )
                cpc_total, _ = cpc_loss(
                    Z, zhat, model, negatives, lam=config.lam, pool=pool
                )
                grads = cpc_backward(
                    Z, zhat, model, negatives, lam=config.lam, pool=pool
                )
                g_heads += grads["heads"]
                for k in g_gru:
                    g_gru[k] += grads["gru"][k]
                # dictionary term is the only codebook update (straight-through
                # contract); the commitment/copied gradients belong to the
                # fixed encoder and are dropped here
                g_codebook += dict_term_grad_codebook(Z, ids, codebook)
                sq, commit = quantization_terms(Z, zhat, config.gamma)
                ep_cpc += cpc_total
                ep_dict += sq
                ep_commit += commit
            bs = len(batch)
            step_grads = {"codebook": g_codebook / bs, "heads": g_heads / bs}
            for k, v in g_gru.items():
                step_grads[f"gru.{k}"] = v / bs
            opt.step(step_grads)
        log.append(
            {
                "epoch": epoch,
                "cpc": ep_cpc / n,
                "dict": ep_dict / n,
                "commit": ep_commit / n,
                "total": (ep_cpc + ep_dict + ep_commit) / n,
            }
        )
        if not np.isfinite(log[-1]["total"]):
            raise RuntimeError(f"divergence: non-finite loss at epoch {epoch}")
    return codebook, model, log


def codebook_usage(sequences, codebook):
    """Token frequencies over the preprocessed corpus (runs collapsed, s0
    markers included).  Sums to 1; unused tokens get 0."""
    counts = np.zeros(codebook.n_tokens, dtype=np.int64)
    for Z in sequences:
        ids = quantize(Z, codebook)
        for t in preprocess_sequence(list(ids), s0_id=S0_ID):
            counts[t] += 1
    total = counts.sum()
    if total == 0:
        raise ValueError("empty input")
    return counts / total


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def save_char_codebook(path, codebook, freqs):
    freqs = np.asarray(freqs, dtype=np.float64)
    obj = {
        "version": 1,
        "kind": "char",
        "dim": codebook.dim,
        "s0_id": S0_ID,
        "tokens": [
            {
                "id": i,
                "embedding": [float(v) for v in codebook.rows[i]],
                "freq": float(freqs[i]),
            }
            for i in range(codebook.n_tokens)
        ],
    }
    dump_json(path, obj)


def load_char_codebook(path):
    obj = load_json(path)
    if obj.get("kind") != "char" or obj.get("version") != 1:
        raise ValueError("not a character codebook file")
    tokens = sorted(obj["tokens"], key=lambda t: t["id"])
    rows = np.asarray([t["embedding"] for t in tokens], dtype=np.float64)
    freqs = np.asarray([t["freq"] for t in tokens], dtype=np.float64)
    return CharCodebook(rows=rows), freqs


def save_context_model(path, model):
    obj = {
        "version": 1,
        "kind": "context_model",
        "dim": model.dim,
        "n_heads": model.n_heads,
        "gru": {k: model.gru[k].tolist() for k in GRU_NAMES},
        "heads": model.heads.tolist(),
    }
    dump_json(path, obj)


def load_context_model(path):
    obj = load_json(path)
    if obj.get("kind") != "context_model" or obj.get("version") != 1:
        raise ValueError("not a context model file")
    gru = {k: np.asarray(obj["gru"][k], dtype=np.float64) for k in GRU_NAMES}
    heads = np.asarray(obj["heads"], dtype=np.float64)
    return ContextModel(gru=gru, heads=heads)


def write_train_log(path, log):
    from .fileio import write_csv

    write_csv(
        path,
        ["epoch", "cpc", "dict", "commit", "total"],
        [[e["epoch"], e["cpc"], e["dict"], e["commit"], e["total"]] for e in log],
    )
