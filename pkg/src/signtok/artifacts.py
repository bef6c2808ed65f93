"""Artifact directory layout and pipeline-state assembly for the CLI."""

import os

import numpy as np

from .alignment import TextEmbeddingSet, load_projection_head, save_text_embeddings
from .config import derive_seed
from .cra_vocab import load_word_codebook
from .ingest import sample_texts
from .translator import (
    DecoderConfig,
    PipelineState,
    freeze_decoder,
    load_decoder,
    pretrain_decoder,
    save_decoder,
)
from .vq_sign import load_char_codebook, load_context_model

CHAR_CODEBOOK = "char_codebook.json"
CONTEXT_MODEL = "context_model.json"
WORD_CODEBOOK = "word_codebook.json"
PROJECTION_HEAD = "projection_head.json"
DECODER = "decoder.json"
TEXT_EMBEDDINGS = "text_embeddings.json"
VQ_TRAIN_LOG = "vq_train_log.csv"
ENTROPY_CURVE = "entropy_curve.csv"
ALIGN_HISTORY = "align_history.csv"
FINETUNE_HISTORY = "finetune_history.csv"


def path(artifacts_dir, name):
    return os.path.join(artifacts_dir, name)


def _require(artifacts_dir, name, stage):
    p = path(artifacts_dir, name)
    if not os.path.exists(p):
        raise ValueError(f"missing artifact {name}; run `{stage}` first")
    return p


def load_state(artifacts_dir):
    """Load the full pipeline state (all stages must have run)."""
    codebook, freqs = load_char_codebook(
        _require(artifacts_dir, CHAR_CODEBOOK, "pretrain-vq")
    )
    model = load_context_model(_require(artifacts_dir, CONTEXT_MODEL, "pretrain-vq"))
    word_codebook = load_word_codebook(
        _require(artifacts_dir, WORD_CODEBOOK, "build-vocab")
    )
    head = load_projection_head(_require(artifacts_dir, PROJECTION_HEAD, "align"))
    decoder = load_decoder(_require(artifacts_dir, DECODER, "align"))
    state = PipelineState(
        char_codebook=codebook,
        context_model=model,
        word_codebook=word_codebook,
        head=head,
        decoder=decoder,
    )
    return state, freqs


def split_corpus(corpus, holdout_fraction, seed):
    """Deterministic train/held-out split of the sample list."""
    n = len(corpus.samples)
    rng = np.random.default_rng(derive_seed(seed, "split"))
    order = rng.permutation(n)
    n_holdout = int(round(n * holdout_fraction))
    holdout = set(order[:n_holdout].tolist())
    train = [s for i, s in enumerate(corpus.samples) if i not in holdout]
    held = [s for i, s in enumerate(corpus.samples) if i in holdout]
    return train, held


def n_text_tokens(corpus):
    return max(corpus.spec.text_map.values()) + 1


def ensure_decoder(artifacts_dir, corpus, train_samples, cfg):
    """Load the frozen decoder artifact, or pre-train one and freeze it.

    Pre-training uses text-only sentences sampled fresh from the corpus
    language (never the paired feature streams), standing in for a
    generator that already knows the target language.  Both `align` and
    `finetune` route through here, so they always agree on the same
    frozen generator."""
    p = path(artifacts_dir, DECODER)
    if os.path.exists(p):
        dec = load_decoder(p)
        if not dec.frozen:
            raise ValueError("existing decoder artifact is not frozen")
        return dec
    dcfg = DecoderConfig(
        dim=cfg["decoder.dim"],
        lr=cfg["decoder.lr"],
        epochs=cfg["decoder.epochs"],
        batch_size=cfg["decoder.batch_size"],
        slot_noise=cfg["decoder.slot_noise"],
        seed=derive_seed(cfg["seed"], "decoder"),
    )
    texts = sample_texts(
        corpus.spec,
        cfg["decoder.pretrain_sentences"],
        derive_seed(cfg["seed"], "decoder-text"),
    )
    dec, _ = pretrain_decoder(texts, n_text_tokens(corpus), dcfg)
    freeze_decoder(dec)
    save_decoder(p, dec)
    return dec


def text_embeddings_from_decoder(decoder):
    n = decoder.n_text
    return TextEmbeddingSet(
        ids=list(range(n)),
        texts=[str(i) for i in range(n)],
        matrix=decoder.emb[:n].copy(),
    )


def write_text_embeddings(artifacts_dir, embs):
    save_text_embeddings(path(artifacts_dir, TEXT_EMBEDDINGS), embs)
