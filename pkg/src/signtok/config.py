"""Flat pipeline configuration.

Config files are flat JSON objects with namespaced keys ("vq.gamma").
Unknown keys are rejected.  The environment variable SIGNTOK_SEED, when
set, overrides the seed from any source.  Stage seeds are derived from
the base seed by stable hashing, so every stage is reproducible in
isolation.
"""

import hashlib
import os

from .fileio import load_json

# key -> (default, help)
DEFAULTS = {
    "seed": (0, "base RNG seed; SIGNTOK_SEED overrides"),
    "clip.len": (13, "frames per clip"),
    "clip.stride": (4, "frame stride between clip starts"),
    "synth.n_chars": (8, "character prototype count"),
    "synth.n_words": (12, "planted word count"),
    "synth.word_len_range": ([2, 4], "min/max planted word length (chars)"),
    "synth.sentence_len_range": ([3, 6], "min/max words per sentence"),
    "synth.repeat_range": ([1, 3], "min/max emissions per character"),
    "synth.noise_sigma": (0.05, "feature noise level"),
    "synth.n_samples": (64, "sample count"),
    "synth.feature_dim": (1024, "feature dimension (must match vq.dim)"),
    "vq.n_tokens": (256, "codebook size incl. the reserved s0 row"),
    "vq.dim": (1024, "embedding dimension"),
    "vq.n_heads": (3, "contrastive prediction offsets"),
    "vq.gamma": (0.25, "commitment weight"),
    "vq.lam": (1.0, "negative-term weight in the contrastive loss"),
    "vq.n_negatives": (10, "negatives per position"),
    "vq.lr": (0.01, "pre-training learning rate"),
    "vq.epochs": (20, "pre-training epochs"),
    "vq.batch_size": (8, "sequences per batch"),
    "vocab.m": (32, "vocabulary size step (candidates per r)"),
    "vocab.r_max": (8, "largest size multiple to sweep"),
    "vocab.max_word_len": (5, "longest candidate n-gram"),
    "vocab.pool_size": (None, "candidate pool cap; default 4*r_max*m"),
    "vocab.eps": (0.001, "marginal slack for the transport solve"),
    "vocab.sinkhorn_tol": (1e-09, "Sinkhorn stopping tolerance"),
    "vocab.sinkhorn_max_iters": (10000, "Sinkhorn iteration cap"),
    "align.lr": (0.05, "alignment learning rate"),
    "align.steps": (200, "alignment gradient steps"),
    "align.sigma": (None, "kernel bandwidth; null = median heuristic"),
    "align.update_embeddings": (False, "also update codebook embeddings"),
    "decoder.dim": (32, "text embedding dimension"),
    "decoder.lr": (0.01, "decoder LM pre-training learning rate"),
    "decoder.epochs": (5, "decoder LM pre-training epochs"),
    "decoder.batch_size": (8, "texts per batch"),
    "decoder.slot_noise": (
        0.25,
        "noise scale on conditioning-slot rows during pre-training",
    ),
    "decoder.pretrain_sentences": (
        512,
        "text-only sentences sampled from the language for LM pre-training",
    ),
    "finetune.lam1": (0.5, "alignment weight in the fine-tune objective"),
    "finetune.lam2": (1.0, "similarity weight in the fine-tune objective"),
    "finetune.lr": (0.001, "fine-tune learning rate"),
    "finetune.epochs": (20, "fine-tune epochs"),
    "finetune.batch_size": (8, "samples per batch"),
    "translate.max_len": (32, "generation length cap"),
    "translate.prompt_template": (
        "Translate the following sign sequence into text:",
        "prompt text carried in serialized payloads (user-supplied)",
    ),
    "data.holdout_fraction": (0.25, "fraction of samples held out for eval"),
}


def default_config():
    return {k: v for k, (v, _) in DEFAULTS.items()}


def annotated_defaults():
    return {k: {"default": v, "help": h} for k, (v, h) in DEFAULTS.items()}


def _check_type(key, value, default):
    if value is None or default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ValueError(f"config key {key!r} expects a bool")
        return value
    if isinstance(default, int) and not isinstance(value, bool):
        if isinstance(value, int):
            return value
        raise ValueError(f"config key {key!r} expects an int")
    if isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ValueError(f"config key {key!r} expects a number")
    if isinstance(default, str):
        if isinstance(value, str):
            return value
        raise ValueError(f"config key {key!r} expects a string")
    if isinstance(default, list):
        if isinstance(value, list) and len(value) == len(default):
            return [int(v) for v in value]
        raise ValueError(f"config key {key!r} expects a list of {len(default)} ints")
    raise ValueError(f"config key {key!r} has unsupported type")


def load_config(path=None, overrides=None):
    """Defaults, then file values, then overrides, then SIGNTOK_SEED."""
    cfg = default_config()
    sources = []
    if path is not None:
        sources.append(load_json(path))
    if overrides:
        sources.append(overrides)
    for src in sources:
        unknown = sorted(set(src) - set(DEFAULTS))
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        for k, v in src.items():
            cfg[k] = _check_type(k, v, DEFAULTS[k][0])
    env_seed = os.environ.get("SIGNTOK_SEED")
    if env_seed is not None:
        cfg["seed"] = int(env_seed)
    return cfg


def derive_seed(base_seed, stage):
    """Stable per-stage seed: first 8 bytes of sha256('<seed>:<stage>')."""
    digest = hashlib.sha256(f"{base_seed}:{stage}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % (2**63)
