"""Frozen toy generator and sign-side fine-tuning.

The generator is a deliberately small recurrent language model over text
tokens (embedding table, one gated recurrent cell, output projection).  It
is pre-trained on text only, then frozen byte-for-byte; fine-tuning never
touches its parameters (a content hash certifies that) but does
backpropagate *through* it, shaping the sign-side parameters so that the
projected sign embeddings, consumed as prefix inputs ahead of BOS, steer
generation toward the reference text.

Fine-tuning objective:

    total = vq_term + lam1 * mmd_term + lam2 * sim_term

where vq_term is the quantization objective from vq_sign, mmd_term aligns
both codebooks to the text-embedding table, and sim_term is the mean
teacher-forced cross-entropy (natural log) of the reference tokens under
the frozen decoder.  Updated parameters: character codebook rows, the
recurrent summarizer, the contrastive heads, and the projection head.
"""

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .alignment import head_apply, head_backward, median_sigma, mmd, mmd_grad_X
from .char_preproc import preprocess_sequence
from .cra_vocab import compose_word_embeddings, segment
from .fileio import dump_json, load_json
from .ingest import FeatureSequence
from .optim import Adam
from .vq_sign import (
    GRU_NAMES,
    commit_term_grad_features,
    cpc_backward,
    cpc_loss,
    dict_term_grad_codebook,
    quantization_terms,
    quantize,
    run_gru,
    run_gru_backward,
    sample_negatives,
)


@dataclass
class ToyDecoder:
    """Tiny recurrent LM.  Vocabulary: the n_text text tokens keep their
    ids 0..n_text-1; then BOS, EOS, and a single PROMPT marker."""

    n_text: int
    emb: np.ndarray
    gru: dict
    W_out: np.ndarray
    b_out: np.ndarray
    frozen: bool = False

    @property
    def bos(self):
        return self.n_text

    @property
    def eos(self):
        return self.n_text + 1

    @property
    def prompt_id(self):
        return self.n_text + 2

    @property
    def vocab_size(self):
        return self.n_text + 3

    @property
    def dim(self):
        return self.emb.shape[1]

    def param_dict(self):
        out = {"emb": self.emb, "W_out": self.W_out, "b_out": self.b_out}
        out.update({f"gru.{k}": self.gru[k] for k in GRU_NAMES})
        return out


def init_decoder(n_text, dim, rng):
    if n_text < 1:
        raise ValueError("decoder needs at least one text token")
    V = n_text + 3
    scale = 1.0 / np.sqrt(dim)
    emb = rng.standard_normal((V, dim)) * scale
    gru = {}
    for name in ("Wr", "Wu", "Wn", "Ur", "Uu", "Un"):
        gru[name] = rng.standard_normal((dim, dim)) * scale
    for name in ("br", "bu", "bn"):
        gru[name] = np.zeros(dim)
    W_out = rng.standard_normal((V, dim)) * scale
    return ToyDecoder(
        n_text=n_text, emb=emb, gru=gru, W_out=W_out, b_out=np.zeros(V)
    )


def decoder_hash(decoder):
    """Content hash of all decoder parameters (order-stable, exact floats)."""
    payload = {
        "n_text": decoder.n_text,
        "emb": decoder.emb.tolist(),
        "gru": {k: decoder.gru[k].tolist() for k in GRU_NAMES},
        "W_out": decoder.W_out.tolist(),
        "b_out": decoder.b_out.tolist(),
    }
    blob = json.dumps(payload, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def sim_loss(logits, targets):
    """Mean cross-entropy (natural log) of targets under row-wise softmax."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[0] != targets.shape[0] or logits.shape[0] == 0:
        raise ValueError("logits/targets length mismatch or empty")
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.sum(np.exp(logits - m), axis=1))
    picked = logits[np.arange(len(targets)), targets]
    return float(np.mean(lse - picked))


def sim_loss_grad(logits, targets):
    """d sim_loss / d logits = (softmax - onehot) / n."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    soft = e / e.sum(axis=1, keepdims=True)
    soft[np.arange(len(targets)), targets] -= 1.0
    return soft / len(targets)


@dataclass
class DecoderConfig:
    dim: int = 32
    lr: float = 0.01
    epochs: int = 5
    batch_size: int = 8
    slot_noise: float = 0.25
    seed: int = 0


def pretrain_decoder(texts, n_text, cfg):
    """Prefix-conditioned pre-training on text token sequences.

    Each sentence is presented in the same layout fine-tuning and
    inference use later: prompt marker, a conditioning slot, BOS, then
    teacher-forced generation.  During pre-training the slot holds the
    sentence's own token embeddings, so the data stays text-only while
    the generator learns to read its prefix.  A generator worth steering
    already has that skill; without it the fine-tune would have to carve
    a conditioning pathway through frozen weights.  Gaussian noise on
    the slot rows keeps the reading smooth in a neighbourhood of each
    embedding rather than a brittle exact-match lookup, since the sign
    projections that later fill the slot only approximate the text
    rows.  Only positions from BOS onward are scored."""
    if not texts:
        raise ValueError("empty input")
    rng = np.random.default_rng(cfg.seed)
    dec = init_decoder(n_text, cfg.dim, rng)
    params = dec.param_dict()
    opt = Adam(params, lr=cfg.lr)
    n = len(texts)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        ep_loss = 0.0
        for bstart in range(0, n, cfg.batch_size):
            idx = order[bstart : bstart + cfg.batch_size]
            grads = {k: np.zeros_like(v) for k, v in params.items()}
            bs = len(idx)
            for i in idx:
                y = list(texts[i])
                S = len(y)
                inp_ids = [dec.prompt_id] + y + [dec.bos] + y
                rows = dec.emb[inp_ids].copy()
                if cfg.slot_noise > 0.0:
                    rows[1 : S + 1] += cfg.slot_noise * rng.standard_normal(
                        (S, dec.dim)
                    )
                caches = run_gru(dec.gru, rows)
                states = caches[0]
                pred = states[S + 1 :]
                logits = pred @ dec.W_out.T + dec.b_out
                targets = y + [dec.eos]
                ep_loss += sim_loss(logits, targets)
                dlogits = sim_loss_grad(logits, targets) / bs
                grads["W_out"] += dlogits.T @ pred
                grads["b_out"] += dlogits.sum(axis=0)
                dstates = np.zeros_like(states)
                dstates[S + 1 :] = dlogits @ dec.W_out
                g_gru, dx, _ = run_gru_backward(
                    dec.gru, rows, np.zeros(dec.dim), caches, dstates
                )
                for k in GRU_NAMES:
                    grads[f"gru.{k}"] += g_gru[k]
                np.add.at(grads["emb"], inp_ids, dx)
            opt.step(grads)
        history.append({"epoch": epoch, "loss": ep_loss / n})
        if not np.isfinite(history[-1]["loss"]):
            raise RuntimeError(f"divergence: non-finite loss at epoch {epoch}")
    return dec, history


def freeze_decoder(decoder):
    decoder.frozen = True
    return decoder_hash(decoder)


# ---------------------------------------------------------------------------
# pipeline state
# ---------------------------------------------------------------------------


@dataclass
class PipelineState:
    char_codebook: object
    context_model: object
    word_codebook: object
    head: object
    decoder: object


def _gru_step(gru, x_row, h):
    h_seq, _, _, _ = run_gru(gru, x_row.reshape(1, -1), h0=h)
    return h_seq[0]


def encode_sentence(state, features, compose_fresh=False):
    """features -> (tokens, raw embedding rows).

    tokens: list of ("word", id) / ("char", id).  Word rows come from the
    stored codebook embeddings unless compose_fresh re-runs the summarizer
    with the current parameters.
    """
    if isinstance(features, FeatureSequence):
        Z = features.values
    else:
        Z = np.asarray(features, dtype=np.float64)
    ids = quantize(Z, state.char_codebook)
    pids = preprocess_sequence(list(ids))
    tokens = segment(pids, state.word_codebook)
    if compose_fresh:
        compose_word_embeddings(
            state.word_codebook, state.char_codebook, state.context_model
        )
    by_id = {t.id: t for t in state.word_codebook.tokens}
    rows = []
    for kind, tid in tokens:
        if kind == "word":
            rows.append(by_id[tid].embedding)
        else:
            rows.append(state.char_codebook.rows[tid])
    return tokens, np.asarray(rows, dtype=np.float64)


@dataclass
class GenerationOutput:
    token_ids: list
    logits: np.ndarray
    reached_eos: bool


def translate(state, features, max_len=32):
    """Greedy decode: prompt marker, projected sign embeddings, BOS, then
    argmax steps until EOS or max_len.  BOS/PROMPT logits are masked out
    during generation; EOS is not emitted."""
    dec = state.decoder
    tokens, raw = encode_sentence(state, features)
    U = head_apply(state.head, raw)[0]
    prefix = np.concatenate(
        [dec.emb[dec.prompt_id].reshape(1, -1), U, dec.emb[dec.bos].reshape(1, -1)]
    )
    h_seq, _, _, _ = run_gru(dec.gru, prefix)
    h = h_seq[-1]
    out_ids = []
    out_logits = []
    reached_eos = False
    for _ in range(max_len):
        logits = dec.W_out @ h + dec.b_out
        masked = logits.copy()
        masked[dec.bos] = -np.inf
        masked[dec.prompt_id] = -np.inf
        nxt = int(np.argmax(masked))
        out_logits.append(logits)
        if nxt == dec.eos:
            reached_eos = True
            break
        out_ids.append(nxt)
        h = _gru_step(dec.gru, dec.emb[nxt], h)
    return GenerationOutput(
        token_ids=out_ids,
        logits=np.asarray(out_logits, dtype=np.float64),
        reached_eos=reached_eos,
    )


def prompt_payload(tokens, embeddings, prompt_text):
    """Assemble the external-generator payload from an already-encoded
    sentence.  An empty sentence gives empty (but valid) arrays."""
    return {
        "version": 1,
        "prompt_text": prompt_text,
        "sign_tokens": [tid for _, tid in tokens],
        "token_kinds": [kind for kind, _ in tokens],
        "embeddings": [[float(v) for v in row] for row in embeddings],
    }


def serialize_prompt(state, features, prompt_text):
    """Prompt payload for an external generator: sign tokens (parallel
    kind list distinguishes word tokens from residual characters) plus
    their projected embeddings."""
    tokens, raw = encode_sentence(state, features)
    U = head_apply(state.head, raw)[0]
    return prompt_payload(tokens, U, prompt_text)


# ---------------------------------------------------------------------------
# fine-tuning
# ---------------------------------------------------------------------------


class _CompositionBatch:
    """Shared forward cache + gradient accumulator for word compositions
    within one optimization step (codebook rows and summarizer fixed)."""

    def __init__(self, rows, gru):
        self.rows = rows
        self.gru = gru
        self._fwd = {}
        self._dlast = {}

    def embed(self, chars):
        key = tuple(chars)
        if key not in self._fwd:
            x = self.rows[list(key)]
            self._fwd[key] = (x, run_gru(self.gru, x))
        return self._fwd[key][1][0][-1]

    def add_grad(self, chars, dlast):
        key = tuple(chars)
        if key in self._dlast:
            self._dlast[key] = self._dlast[key] + dlast
        else:
            self._dlast[key] = np.array(dlast, dtype=np.float64)

    def backward(self):
        g_gru = {k: np.zeros_like(v) for k, v in self.gru.items()}
        d_rows = np.zeros_like(self.rows)
        h0 = np.zeros(self.rows.shape[1])
        for key, dlast in self._dlast.items():
            x, caches = self._fwd[key]
            dh_out = np.zeros_like(caches[0])
            dh_out[-1] = dlast
            g, dx, _ = run_gru_backward(self.gru, x, h0, caches, dh_out)
            for k in g_gru:
                g_gru[k] += g[k]
            np.add.at(d_rows, list(key), dx)
        return g_gru, d_rows


@dataclass
class FinetuneConfig:
    lam1: float = 0.5
    lam2: float = 1.0
    gamma: float = 0.25
    lam: float = 1.0
    n_negatives: int = 10
    lr: float = 0.001
    epochs: int = 20
    batch_size: int = 8
    seed: int = 0


def finetune_loss(l_vq, l_mmd, l_sim, lam1, lam2):
    """Weighted fine-tuning objective: l_vq + lam1 * l_mmd + lam2 * l_sim."""
    return l_vq + lam1 * l_mmd + lam2 * l_sim


def _teacher_forced(dec, U, y):
    """Run [PROMPT, U.., BOS, emb(y)..] through the frozen decoder and
    score targets y + [EOS].  Returns (loss, backward_closure)."""
    S = U.shape[0]
    L = len(y)
    rows = np.concatenate(
        [
            dec.emb[dec.prompt_id].reshape(1, -1),
            U,
            dec.emb[dec.bos].reshape(1, -1),
            dec.emb[list(y)] if L else np.zeros((0, dec.dim)),
        ]
    )
    caches = run_gru(dec.gru, rows)
    states = caches[0]
    pred = states[S + 1 : S + L + 2]
    logits = pred @ dec.W_out.T + dec.b_out
    targets = list(y) + [dec.eos]
    loss = sim_loss(logits, targets)

    def backward(weight):
        dlogits = weight * sim_loss_grad(logits, targets)
        dstates = np.zeros_like(states)
        dstates[S + 1 : S + L + 2] = dlogits @ dec.W_out
        _, dx, _ = run_gru_backward(dec.gru, rows, np.zeros(dec.dim), caches, dstates)
        return dx[1 : S + 1]  # gradient on the projected sign rows only

    return loss, backward


def finetune(samples, state, cfg):
    """Fine-tune the sign side against the frozen decoder.

    samples: objects with .features (T, d) and .text (list of text ids).
    Updates state in place (codebook rows, summarizer, heads, projection
    head; word embeddings recomposed at the end) and returns a per-epoch
    history of the loss components.
    """
    dec = state.decoder
    if not dec.frozen:
        raise ValueError("decoder must be frozen before fine-tuning")
    if not samples:
        raise ValueError("empty input")
    codebook = state.char_codebook
    model = state.context_model
    head = state.head
    rng = np.random.default_rng(cfg.seed)

    params = {"codebook": codebook.rows}
    params.update(model.param_dict())
    params.update({f"proj.{k}": v for k, v in head.param_dict().items()})
    opt = Adam(params, lr=cfg.lr)

    # character-level MMD set: ids in use before fine-tuning (incl. s0)
    used = set()
    for s in samples:
        ids = quantize(s.features, codebook)
        used.update(preprocess_sequence(list(ids)))
    used_ids = sorted(used)
    text_matrix = dec.emb[: dec.n_text]

    token_by_id = {t.id: t for t in state.word_codebook.tokens}

    # Kernel bandwidths are resolved once at the start of fine-tuning, from
    # the pooled pairwise distances of the initial projections and the text
    # embeddings, and held fixed.  Re-resolving per epoch keeps the
    # distribution pull alive as the projections move, but in practice that
    # pull fights the decoder-steering term sample by sample; the fixed
    # bandwidth lets the alignment term fade once the two clouds separate
    # and the steering term take over.
    comp0 = _CompositionBatch(codebook.rows, model.gru)
    u_c0 = head_apply(head, codebook.rows[used_ids])[0]
    w_embs0 = np.asarray(
        [comp0.embed(t.chars) for t in state.word_codebook.tokens]
    )
    u_w0 = head_apply(head, w_embs0)[0]
    sigma_c = median_sigma(np.concatenate([u_c0, text_matrix]))
    sigma_w = median_sigma(np.concatenate([u_w0, text_matrix]))

    n = len(samples)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        ep = {"vq": 0.0, "mmd": 0.0, "sim": 0.0}
        n_batches = 0
        for bstart in range(0, n, cfg.batch_size):
            idx = order[bstart : bstart + cfg.batch_size]
            bs = len(idx)
            n_batches += 1
            grads = {k: np.zeros_like(v) for k, v in params.items()}
            comp = _CompositionBatch(codebook.rows, model.gru)
            pool = np.concatenate([samples[i].features for i in idx])
            offsets = np.cumsum(
                [0] + [samples[i].features.shape[0] for i in idx[:-1]]
            )
            for i, off in zip(idx, offsets):
                Z = samples[i].features
                ids = quantize(Z, codebook)
                zhat = codebook.rows[ids]
                negatives = sample_negatives(
                    rng,
                    Z.shape[0],
                    model.n_heads,
                    cfg.n_negatives,
                    pool.shape[0],
                    pos_offset=int(off),
                )
                cpc_total, _ = cpc_loss(
                    Z, zhat, model, negatives, lam=cfg.lam, pool=pool
                )
                cgrads = cpc_backward(
                    Z, zhat, model, negatives, lam=cfg.lam, pool=pool
                )
                grads["heads"] += cgrads["heads"] / bs
                for k in GRU_NAMES:
                    grads[f"gru.{k}"] += cgrads["gru"][k] / bs
                grads["codebook"] += dict_term_grad_codebook(Z, ids, codebook) / bs
                sq, commit = quantization_terms(Z, zhat, cfg.gamma)
                ep["vq"] += (cpc_total + sq + commit) / n

                pids = preprocess_sequence(list(ids))
                tokens = segment(pids, state.word_codebook)
                rows = []
                for kind, tid in tokens:
                    if kind == "word":
                        rows.append(comp.embed(token_by_id[tid].chars))
                    else:
                        rows.append(codebook.rows[tid])
                E = np.asarray(rows, dtype=np.float64)
                U, cacheF = head_apply(head, E)
                loss_sim, backward = _teacher_forced(dec, U, samples[i].text)
                ep["sim"] += loss_sim / n
                dU = backward(cfg.lam2 / bs)
                g_head, dE = head_backward(head, cacheF, dU)
                for k, v in g_head.items():
                    grads[f"proj.{k}"] += v
                for (kind, tid), drow in zip(tokens, dE):
                    if kind == "word":
                        comp.add_grad(token_by_id[tid].chars, drow)
                    else:
                        grads["codebook"][tid] += drow

            char_set = codebook.rows[used_ids]
            u_c, cache_c = head_apply(head, char_set)
            w_embs = np.asarray(
                [comp.embed(t.chars) for t in state.word_codebook.tokens]
            )
            u_w, cache_w = head_apply(head, w_embs)
            loss_mmd = mmd(u_c, text_matrix, sigma_c) + mmd(u_w, text_matrix, sigma_w)
            ep["mmd"] += loss_mmd
            g_c, dX_c = head_backward(
                head, cache_c, cfg.lam1 * mmd_grad_X(u_c, text_matrix, sigma_c)
            )
            g_w, dX_w = head_backward(
                head, cache_w, cfg.lam1 * mmd_grad_X(u_w, text_matrix, sigma_w)
            )
            for k in g_c:
                grads[f"proj.{k}"] += g_c[k] + g_w[k]
            for row_i, cid in enumerate(used_ids):
                grads["codebook"][cid] += dX_c[row_i]
            for t, drow in zip(state.word_codebook.tokens, dX_w):
                comp.add_grad(t.chars, drow)

            g_gru_comp, d_rows_comp = comp.backward()
            for k in GRU_NAMES:
                grads[f"gru.{k}"] += g_gru_comp[k]
            grads["codebook"] += d_rows_comp
            opt.step(grads)
        ep["mmd"] /= n_batches
        history.append(
            {
                "epoch": epoch,
                "vq": ep["vq"],
                "mmd": ep["mmd"],
                "sim": ep["sim"],
                "total": finetune_loss(
                    ep["vq"], ep["mmd"], ep["sim"], cfg.lam1, cfg.lam2
                ),
            }
        )
        if not np.isfinite(history[-1]["total"]):
            raise RuntimeError(f"divergence: non-finite loss at epoch {epoch}")
    compose_word_embeddings(state.word_codebook, codebook, model)
    return history


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def save_decoder(path, decoder):
    obj = {
        "version": 1,
        "kind": "toy_decoder",
        "n_text": decoder.n_text,
        "dim": decoder.dim,
        "frozen": decoder.frozen,
        "emb": decoder.emb.tolist(),
        "gru": {k: decoder.gru[k].tolist() for k in GRU_NAMES},
        "W_out": decoder.W_out.tolist(),
        "b_out": decoder.b_out.tolist(),
    }
    dump_json(path, obj)


def load_decoder(path):
    obj = load_json(path)
    if obj.get("kind") != "toy_decoder" or obj.get("version") != 1:
        raise ValueError("not a decoder file")
    return ToyDecoder(
        n_text=obj["n_text"],
        emb=np.asarray(obj["emb"], dtype=np.float64),
        gru={k: np.asarray(obj["gru"][k], dtype=np.float64) for k in GRU_NAMES},
        W_out=np.asarray(obj["W_out"], dtype=np.float64),
        b_out=np.asarray(obj["b_out"], dtype=np.float64),
        frozen=obj["frozen"],
    )
