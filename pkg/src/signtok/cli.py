"""Command-line pipeline driver.

Subcommands mirror the pipeline stages: synth-data, pretrain-vq,
build-vocab, align, finetune, encode, eval.  Human-readable logs go to
stderr; machine artifacts go to files; every subcommand ends with a
one-line summary.  Exit codes: 0 success, 1 runtime failure, 2 usage.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import artifacts as art
from .alignment import (
    AlignConfig,
    KernelConfig,
    align,
    load_text_embeddings,
    save_projection_head,
)
from .char_preproc import preprocess_sequence
from .config import annotated_defaults, derive_seed, load_config
from .cra_vocab import (
    collect_candidates,
    compose_word_embeddings,
    load_word_codebook,
    save_word_codebook,
    select_vocab,
    write_entropy_curve,
)
from .eval_metrics import evaluate_outputs, write_report
from .fileio import dump_json, load_json, write_csv
from .ingest import (
    IdentityEncoder,
    build_synth_spec,
    encode_clips,
    generate_synthetic_corpus,
    load_corpus,
    plan_clips,
    save_corpus,
)
from .translator import (
    FinetuneConfig,
    decoder_hash,
    finetune,
    serialize_prompt,
    translate,
)
from .vq_sign import (
    VqTrainConfig,
    codebook_usage,
    load_char_codebook,
    load_context_model,
    quantize,
    save_char_codebook,
    save_context_model,
    train_vq_sign,
    write_train_log,
)

logger = logging.getLogger("signtok")


def _train_sequences(corpus, cfg):
    train, _ = art.split_corpus(corpus, cfg["data.holdout_fraction"], cfg["seed"])
    return train, [s.features for s in train]


def cmd_synth_data(args, cfg):
    spec = build_synth_spec(
        n_chars=cfg["synth.n_chars"],
        feature_dim=cfg["synth.feature_dim"],
        n_words=cfg["synth.n_words"],
        word_len_range=cfg["synth.word_len_range"],
        sentence_len_range=cfg["synth.sentence_len_range"],
        repeat_range=cfg["synth.repeat_range"],
        noise_sigma=cfg["synth.noise_sigma"],
        n_samples=cfg["synth.n_samples"],
        seed=derive_seed(cfg["seed"], "synth"),
    )
    corpus = generate_synthetic_corpus(spec)
    save_corpus(corpus, args.out)
    n_rows = sum(s.features.shape[0] for s in corpus.samples)
    logger.info(
        "synth-data: %d samples, %d feature rows, %d words, %d chars -> %s",
        len(corpus.samples),
        n_rows,
        len(spec.word_table),
        spec.n_char_prototypes,
        args.out,
    )
    return 0


def cmd_pretrain_vq(args, cfg):
    corpus = load_corpus(args.corpus)
    if corpus.spec.feature_dim != cfg["vq.dim"]:
        raise ValueError(
            f"corpus feature dim {corpus.spec.feature_dim} != vq.dim {cfg['vq.dim']}"
        )
    _, sequences = _train_sequences(corpus, cfg)
    vq_cfg = VqTrainConfig(
        n_tokens=cfg["vq.n_tokens"],
        dim=cfg["vq.dim"],
        n_heads=cfg["vq.n_heads"],
        gamma=cfg["vq.gamma"],
        lam=cfg["vq.lam"],
        n_negatives=cfg["vq.n_negatives"],
        lr=cfg["vq.lr"],
        epochs=cfg["vq.epochs"],
        batch_size=cfg["vq.batch_size"],
        seed=derive_seed(cfg["seed"], "vq"),
    )
    codebook, model, log = train_vq_sign(sequences, vq_cfg)
    freqs = codebook_usage(sequences, codebook)
    os.makedirs(args.artifacts, exist_ok=True)
    save_char_codebook(art.path(args.artifacts, art.CHAR_CODEBOOK), codebook, freqs)
    save_context_model(art.path(args.artifacts, art.CONTEXT_MODEL), model)
    write_train_log(art.path(args.artifacts, art.VQ_TRAIN_LOG), log)
    logger.info(
        "pretrain-vq: %d tokens (dim %d), %d epochs, total loss %.4f -> %.4f -> %s",
        codebook.n_tokens,
        codebook.dim,
        len(log),
        log[0]["total"],
        log[-1]["total"],
        args.artifacts,
    )
    return 0


def cmd_build_vocab(args, cfg):
    corpus = load_corpus(args.corpus)
    codebook, freqs = load_char_codebook(art.path(args.artifacts, art.CHAR_CODEBOOK))
    model = load_context_model(art.path(args.artifacts, art.CONTEXT_MODEL))
    _, sequences = _train_sequences(corpus, cfg)
    preprocessed = [
        preprocess_sequence(list(quantize(Z, codebook))) for Z in sequences
    ]
    pool_size = cfg["vocab.pool_size"]
    if pool_size is None:
        pool_size = 4 * cfg["vocab.r_max"] * cfg["vocab.m"]
    candidates = collect_candidates(
        preprocessed, max_len=cfg["vocab.max_word_len"], pool_size=pool_size
    )
    char_freqs = {i: f for i, f in enumerate(freqs) if f > 0}
    word_codebook, curve = select_vocab(
        candidates,
        char_freqs,
        m=cfg["vocab.m"],
        r_max=cfg["vocab.r_max"],
        eps=cfg["vocab.eps"],
        tol=cfg["vocab.sinkhorn_tol"],
        max_iters=cfg["vocab.sinkhorn_max_iters"],
        override_r=args.override_r,
    )
    compose_word_embeddings(word_codebook, codebook, model)
    save_word_codebook(art.path(args.artifacts, art.WORD_CODEBOOK), word_codebook)
    write_entropy_curve(art.path(args.artifacts, art.ENTROPY_CURVE), curve)
    logger.info(
        "build-vocab: chosen_r=%d (%d tokens, m=%d) from %d candidates -> %s",
        word_codebook.chosen_r,
        len(word_codebook.tokens),
        word_codebook.m,
        len(candidates),
        args.artifacts,
    )
    return 0


def cmd_align(args, cfg):
    corpus = load_corpus(args.corpus)
    train, _ = art.split_corpus(corpus, cfg["data.holdout_fraction"], cfg["seed"])
    codebook, freqs = load_char_codebook(art.path(args.artifacts, art.CHAR_CODEBOOK))
    word_codebook = load_word_codebook(art.path(args.artifacts, art.WORD_CODEBOOK))
    if args.text_embeddings:
        text = load_text_embeddings(args.text_embeddings)
        art.ensure_decoder(args.artifacts, corpus, train, cfg)
    else:
        decoder = art.ensure_decoder(args.artifacts, corpus, train, cfg)
        text = art.text_embeddings_from_decoder(decoder)
        art.write_text_embeddings(args.artifacts, text)
    used = [i for i, f in enumerate(freqs) if f > 0]
    char_embs = codebook.rows[used]
    word_embs = np.asarray([t.embedding for t in word_codebook.tokens])
    acfg = AlignConfig(
        lr=cfg["align.lr"],
        steps=cfg["align.steps"],
        update_embeddings=cfg["align.update_embeddings"],
        seed=derive_seed(cfg["seed"], "align"),
        kernel=KernelConfig(sigma=cfg["align.sigma"]),
    )
    head, history, sigmas = align(char_embs, word_embs, text.matrix, acfg)
    if acfg.update_embeddings:
        codebook.rows[used] = char_embs
        for t, row in zip(word_codebook.tokens, word_embs):
            t.embedding = row
        save_char_codebook(
            art.path(args.artifacts, art.CHAR_CODEBOOK), codebook, freqs
        )
        save_word_codebook(art.path(args.artifacts, art.WORD_CODEBOOK), word_codebook)
    save_projection_head(art.path(args.artifacts, art.PROJECTION_HEAD), head)
    write_csv(
        art.path(args.artifacts, art.ALIGN_HISTORY),
        ["step", "char_mmd", "word_mmd", "total"],
        [[h["step"], h["char_mmd"], h["word_mmd"], h["total"]] for h in history],
    )
    logger.info(
        "align: %d steps, sigma=(%.4f, %.4f), loss %.6f -> %.6f -> %s",
        len(history),
        sigmas[0],
        sigmas[1],
        history[0]["total"],
        history[-1]["total"],
        args.artifacts,
    )
    return 0


def cmd_finetune(args, cfg):
    corpus = load_corpus(args.corpus)
    train, _ = art.split_corpus(corpus, cfg["data.holdout_fraction"], cfg["seed"])
    state, freqs = art.load_state(args.artifacts)
    hash_before = decoder_hash(state.decoder)
    fcfg = FinetuneConfig(
        lam1=cfg["finetune.lam1"],
        lam2=cfg["finetune.lam2"],
        gamma=cfg["vq.gamma"],
        lam=cfg["vq.lam"],
        n_negatives=cfg["vq.n_negatives"],
        lr=cfg["finetune.lr"],
        epochs=cfg["finetune.epochs"],
        batch_size=cfg["finetune.batch_size"],
        seed=derive_seed(cfg["seed"], "finetune"),
    )
    history = finetune(train, state, fcfg)
    hash_after = decoder_hash(state.decoder)
    if hash_before != hash_after:
        raise RuntimeError("frozen decoder parameters changed during fine-tuning")
    sequences = [s.features for s in train]
    new_freqs = codebook_usage(sequences, state.char_codebook)
    save_char_codebook(
        art.path(args.artifacts, art.CHAR_CODEBOOK), state.char_codebook, new_freqs
    )
    save_context_model(
        art.path(args.artifacts, art.CONTEXT_MODEL), state.context_model
    )
    save_word_codebook(art.path(args.artifacts, art.WORD_CODEBOOK), state.word_codebook)
    save_projection_head(art.path(args.artifacts, art.PROJECTION_HEAD), state.head)
    write_csv(
        art.path(args.artifacts, art.FINETUNE_HISTORY),
        ["epoch", "vq", "mmd", "sim", "total"],
        [[h["epoch"], h["vq"], h["mmd"], h["sim"], h["total"]] for h in history],
    )
    logger.info(
        "finetune: %d epochs, total %.4f -> %.4f, decoder hash unchanged (%s) -> %s",
        len(history),
        history[0]["total"],
        history[-1]["total"],
        hash_after[:12],
        args.artifacts,
    )
    return 0


def _load_features(path, cfg):
    obj = load_json(path)
    if "values" in obj:
        return np.asarray(obj["values"], dtype=np.float64)
    if "frames" in obj:
        frames = np.asarray(obj["frames"], dtype=np.float64)
        plan = plan_clips(frames.shape[0], cfg["clip.len"], cfg["clip.stride"])
        return encode_clips(frames, plan, IdentityEncoder()).values
    raise ValueError("feature file needs a 'values' or 'frames' field")


def cmd_encode(args, cfg):
    state, _ = art.load_state(args.artifacts)
    features = _load_features(args.features, cfg)
    prompt = args.prompt if args.prompt is not None else cfg["translate.prompt_template"]
    payload = serialize_prompt(state, features, prompt)
    dump_json(args.out, payload)
    logger.info(
        "encode: %d feature rows -> %d sign tokens -> %s",
        features.shape[0],
        len(payload["sign_tokens"]),
        args.out,
    )
    return 0


def cmd_eval(args, cfg):
    corpus = load_corpus(args.corpus)
    train, held = art.split_corpus(corpus, cfg["data.holdout_fraction"], cfg["seed"])
    samples = {"train": train, "heldout": held, "all": corpus.samples}[args.split]
    if not samples:
        raise ValueError(f"split {args.split!r} is empty")
    state, _ = art.load_state(args.artifacts)
    hyps = []
    refs = []
    for s in samples:
        out = translate(state, s.features, max_len=cfg["translate.max_len"])
        hyps.append(out.token_ids)
        refs.append(list(s.text))
    report = evaluate_outputs(hyps, refs, split=args.split)
    write_report(args.out, report)
    logger.info(
        "eval[%s]: %d samples, bleu1=%.4f bleu4=%.4f rougeL=%.4f acc=%.4f -> %s",
        args.split,
        report.n_samples,
        report.bleu["1"],
        report.bleu["4"],
        report.rouge_l,
        report.token_accuracy,
        args.out,
    )
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="signtok",
        description="sign-stream tokenization pipeline",
    )
    parser.add_argument(
        "--print-defaults",
        action="store_true",
        help="print the annotated default config as JSON and exit",
    )
    sub = parser.add_subparsers(dest="command")

    def add(name, fn, **kw):
        p = sub.add_parser(name, **kw)
        p.add_argument("--config", help="flat JSON config file")
        p.set_defaults(fn=fn)
        return p

    p = add("synth-data", cmd_synth_data, help="generate a synthetic corpus")
    p.add_argument("--out", required=True, help="corpus directory to write")

    p = add("pretrain-vq", cmd_pretrain_vq, help="train codebook + context model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--artifacts", required=True)

    p = add("build-vocab", cmd_build_vocab, help="construct the word vocabulary")
    p.add_argument("--corpus", required=True)
    p.add_argument("--artifacts", required=True)
    p.add_argument("--override-r", type=int, default=None, help="bypass the entropy rule")

    p = add("align", cmd_align, help="align embeddings to the text space")
    p.add_argument("--corpus", required=True)
    p.add_argument("--artifacts", required=True)
    p.add_argument("--text-embeddings", default=None, help="external text embedding JSON")

    p = add("finetune", cmd_finetune, help="fine-tune against the frozen decoder")
    p.add_argument("--corpus", required=True)
    p.add_argument("--artifacts", required=True)

    p = add("encode", cmd_encode, help="encode a feature file to a prompt payload")
    p.add_argument("--features", required=True)
    p.add_argument("--artifacts", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--prompt", default=None, help="prompt text for the payload")

    p = add("eval", cmd_eval, help="translate a corpus split and score it")
    p.add_argument("--corpus", required=True)
    p.add_argument("--artifacts", required=True)
    p.add_argument("--out", required=True)
    p.add_argument(
        "--split", choices=("train", "heldout", "all"), default="heldout"
    )
    return parser


def main(argv=None):
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_defaults:
        json.dump(annotated_defaults(), sys.stdout, indent=2)
        sys.stdout.write("\n")
        return 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        cfg = load_config(args.config)
        return args.fn(args, cfg)
    except (ValueError, OSError, RuntimeError) as exc:
        logger.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
