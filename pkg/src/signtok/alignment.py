"""Embedding-space alignment via maximum mean discrepancy.

A small projection head (two affine maps with a ReLU between, hidden width
max(d_in, d_out)) carries sign-token embeddings into the text-embedding
space.  The discrepancy between projected sign tokens and text tokens is
the biased V-statistic MMD with a Gaussian kernel; character-level and
word-level terms are summed with equal weight.  By default only the head
trains; a flag extends updates to the embedding arrays themselves.

The kernel bandwidth comes from the median heuristic (median pairwise
distance over the pooled projected+text samples, resolved once at the
start of alignment and then held fixed) unless the config pins a value.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .fileio import dump_json, load_json
from .kernels import pairwise_sq_dists
from .optim import Adam

logger = logging.getLogger(__name__)


@dataclass
class ProjectionHead:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @property
    def dim_in(self):
        return self.W1.shape[1]

    @property
    def dim_out(self):
        return self.W2.shape[0]

    def param_dict(self):
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}


def init_projection_head(dim_in, dim_out, rng, hidden=None):
    if hidden is None:
        hidden = max(dim_in, dim_out)
    W1 = rng.standard_normal((hidden, dim_in)) / np.sqrt(dim_in)
    W2 = rng.standard_normal((dim_out, hidden)) / np.sqrt(hidden)
    return ProjectionHead(W1=W1, b1=np.zeros(hidden), W2=W2, b2=np.zeros(dim_out))


def head_apply(head, X):
    """Y = W2 relu(W1 X + b1) + b2, rowwise.  Returns (Y, cache)."""
    X = np.asarray(X, dtype=np.float64)
    pre = X @ head.W1.T + head.b1
    act = np.maximum(pre, 0.0)
    Y = act @ head.W2.T + head.b2
    return Y, (X, pre, act)


def head_backward(head, cache, dY):
    """Gradients of the head parameters and the inputs given dL/dY."""
    X, pre, act = cache
    dW2 = dY.T @ act
    db2 = dY.sum(axis=0)
    dact = dY @ head.W2
    dpre = dact * (pre > 0)
    dW1 = dpre.T @ X
    db1 = dpre.sum(axis=0)
    dX = dpre @ head.W1
    return {"W1": dW1, "b1": db1, "W2": dW2, "b2": db2}, dX


def project(head, X):
    return head_apply(head, X)[0]


@dataclass
class KernelConfig:
    """sigma: positive bandwidth, or None for the median heuristic."""

    sigma: float = None


def median_sigma(pooled):
    """Median pairwise Euclidean distance over the pooled rows (upper
    triangle, i < j).  Falls back to 1.0 when all points coincide."""
    pooled = np.ascontiguousarray(pooled, dtype=np.float64)
    n = pooled.shape[0]
    if n < 2:
        raise ValueError("median heuristic needs at least two samples")
    sq = pairwise_sq_dists(pooled, pooled)
    iu = np.triu_indices(n, k=1)
    med = float(np.median(np.sqrt(sq[iu])))
    if med <= 0:
        logger.warning("degenerate pooled sample; using sigma=1.0")
        return 1.0
    return med


def gaussian_kernel(X, Y, sigma):
    sq = pairwise_sq_dists(
        np.ascontiguousarray(X, dtype=np.float64),
        np.ascontiguousarray(Y, dtype=np.float64),
    )
    return np.exp(-sq / (2.0 * sigma * sigma))


def mmd(X, Y, sigma):
    """Biased V-statistic (diagonal terms included):

        mean k(X,X) + mean k(Y,Y) - 2 mean k(X,Y)

    Zero when X and Y hold identical samples; symmetric in its arguments.
    """
    kxx = gaussian_kernel(X, X, sigma)
    kyy = gaussian_kernel(Y, Y, sigma)
    kxy = gaussian_kernel(X, Y, sigma)
    # Each block is reduced in sorted-value order.  Swapping the arguments
    # transposes the cross block and reorders the flat layout, and numpy
    # reductions are order-sensitive in their last bits; sorting first makes
    # the summation order a function of the values alone, so both
    # mmd(X, Y) == mmd(Y, X) and mmd(X, X) == 0 hold exactly.
    m_xx = float(np.sort(kxx, axis=None).sum() / kxx.size)
    m_yy = float(np.sort(kyy, axis=None).sum() / kyy.size)
    m_xy = float(np.sort(kxy, axis=None).sum() / kxy.size)
    return m_xx + m_yy - 2.0 * m_xy


def mmd_grad_X(X, Y, sigma):
    """Analytic gradient of mmd(X, Y, sigma) w.r.t. the rows of X (sigma
    treated as a constant)."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    n = X.shape[0]
    m = Y.shape[0]
    kxx = gaussian_kernel(X, X, sigma)
    kxy = gaussian_kernel(X, Y, sigma)
    inv = 1.0 / (sigma * sigma)
    # d/dx_i of mean k(X,X): each pair (i,j) appears twice
    diff_xx = X[:, None, :] - X[None, :, :]
    g = -(2.0 * inv / (n * n)) * np.einsum("ij,ijd->id", kxx, diff_xx)
    diff_xy = X[:, None, :] - Y[None, :, :]
    g += (2.0 * inv / (n * m)) * np.einsum("ij,ijd->id", kxy, diff_xy)
    return g


@dataclass
class AlignConfig:
    lr: float = 0.05
    steps: int = 200
    update_embeddings: bool = False
    seed: int = 0
    kernel: KernelConfig = None

    def __post_init__(self):
        if self.kernel is None:
            self.kernel = KernelConfig()


def align(char_embs, word_embs, text_matrix, cfg, head=None):
    """Minimize MMD(f(chars), text) + MMD(f(words), text) over the head
    parameters (and optionally the embedding arrays, in place).

    Bandwidths resolve once from the initial pooled samples (per level)
    and stay fixed for the whole run.  Returns (head, history, sigmas)
    where history holds per-step loss records.
    """
    char_embs = np.asarray(char_embs, dtype=np.float64)
    word_embs = np.asarray(word_embs, dtype=np.float64)
    text_matrix = np.asarray(text_matrix, dtype=np.float64)
    rng = np.random.default_rng(cfg.seed)
    if head is None:
        head = init_projection_head(char_embs.shape[1], text_matrix.shape[1], rng)
    if cfg.kernel.sigma is not None:
        sigma_char = sigma_word = float(cfg.kernel.sigma)
    else:
        u_char = project(head, char_embs)
        u_word = project(head, word_embs)
        sigma_char = median_sigma(np.concatenate([u_char, text_matrix]))
        sigma_word = median_sigma(np.concatenate([u_word, text_matrix]))
    params = head.param_dict()
    if cfg.update_embeddings:
        params = dict(params)
        params["char_embs"] = char_embs
        params["word_embs"] = word_embs
    opt = Adam(params, lr=cfg.lr)
    history = []
    for step in range(cfg.steps):
        u_char, cache_c = head_apply(head, char_embs)
        u_word, cache_w = head_apply(head, word_embs)
        loss_c = mmd(u_char, text_matrix, sigma_char)
        loss_w = mmd(u_word, text_matrix, sigma_word)
        g_c, dX_c = head_backward(head, cache_c, mmd_grad_X(u_char, text_matrix, sigma_char))
        g_w, dX_w = head_backward(head, cache_w, mmd_grad_X(u_word, text_matrix, sigma_word))
        grads = {k: g_c[k] + g_w[k] for k in g_c}
        if cfg.update_embeddings:
            grads["char_embs"] = dX_c
            grads["word_embs"] = dX_w
        opt.step(grads)
        history.append(
            {
                "step": step,
                "char_mmd": loss_c,
                "word_mmd": loss_w,
                "total": loss_c + loss_w,
            }
        )
        if not np.isfinite(history[-1]["total"]):
            raise RuntimeError(f"divergence: non-finite loss at step {step}")
    return head, history, (sigma_char, sigma_word)


# ---------------------------------------------------------------------------
# text embeddings + persistence
# ---------------------------------------------------------------------------


@dataclass
class TextEmbeddingSet:
    ids: list
    texts: list
    matrix: np.ndarray

    @property
    def dim(self):
        return self.matrix.shape[1]


def save_text_embeddings(path, embs):
    obj = {
        "dim": embs.dim,
        "tokens": [
            {
                "id": int(i),
                "text": t,
                "embedding": [float(v) for v in row],
            }
            for i, t, row in zip(embs.ids, embs.texts, embs.matrix)
        ],
    }
    dump_json(path, obj)


def load_text_embeddings(path):
    obj = load_json(path)
    tokens = sorted(obj["tokens"], key=lambda t: t["id"])
    return TextEmbeddingSet(
        ids=[t["id"] for t in tokens],
        texts=[t.get("text", str(t["id"])) for t in tokens],
        matrix=np.asarray([t["embedding"] for t in tokens], dtype=np.float64),
    )


def save_projection_head(path, head):
    obj = {
        "version": 1,
        "kind": "projection_head",
        "dim_in": head.dim_in,
        "dim_out": head.dim_out,
        "W1": head.W1.tolist(),
        "b1": head.b1.tolist(),
        "W2": head.W2.tolist(),
        "b2": head.b2.tolist(),
    }
    dump_json(path, obj)


def load_projection_head(path):
    obj = load_json(path)
    if obj.get("kind") != "projection_head" or obj.get("version") != 1:
        raise ValueError("not a projection head file")
    return ProjectionHead(
        W1=np.asarray(obj["W1"], dtype=np.float64),
        b1=np.asarray(obj["b1"], dtype=np.float64),
        W2=np.asarray(obj["W2"], dtype=np.float64),
        b2=np.asarray(obj["b2"], dtype=np.float64),
    )
