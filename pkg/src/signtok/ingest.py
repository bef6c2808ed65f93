"""Feature ingestion: clip planning over frame streams, clip encoders, and
the synthetic corpus generator used for every desk-scale experiment.

A frame stream is cut into fixed-length clips on a regular stride; each
clip is encoded to one feature row.  The synthetic generator skips the
frame stage and emits feature rows directly (one row per character
emission: prototype vector plus Gaussian noise), along with ground-truth
character/word annotations and reference text tokens.
"""

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .fileio import dump_json, load_json


@dataclass
class ClipPlan:
    """Clip start offsets for a frame stream.

    Starts form an arithmetic progression on `stride`, extended at the tail
    until every frame falls inside at least one clip.  The final clip may
    run past the stream; encode_clips pads it by repeating the last frame.
    """

    n_frames: int
    clip_len: int
    stride: int
    starts: list

    def n_clips(self):
        return len(self.starts)


def plan_clips(n_frames, clip_len, stride):
    if n_frames <= 0:
        raise ValueError("empty input: n_frames must be >= 1")
    if clip_len <= 0 or stride <= 0:
        raise ValueError("clip_len and stride must be >= 1")
    if stride > clip_len:
        # a stride wider than the clip would leave frames uncovered
        raise ValueError("stride must not exceed clip_len")
    n_base = max(1, n_frames - clip_len + 1)
    n_clips = math.ceil(n_base / stride)
    starts = [i * stride for i in range(n_clips)]
    while starts[-1] + clip_len < n_frames:
        starts.append(starts[-1] + stride)
    return ClipPlan(n_frames=n_frames, clip_len=clip_len, stride=stride, starts=starts)


@dataclass
class FeatureSequence:
    """A (T, d) float64 feature matrix with an optional provenance id."""

    values: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise ValueError("feature matrix must be 2-D with at least one row")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature matrix contains non-finite values")

    @property
    def dim(self):
        return self.values.shape[1]

    def __len__(self):
        return self.values.shape[0]


class IdentityEncoder:
    """Mean-pools the frames of a clip; on constant frames this is the
    identity on the frame vector."""

    def __call__(self, clip):
        return clip.mean(axis=0)


class PrototypeEncoder:
    """Synthetic encoder: frames carry a character id in their first
    column; a clip maps to that character's prototype plus Gaussian noise.

    Ties on the majority id resolve to the lowest id.  noise_sigma = 0
    reproduces prototypes exactly.
    """

    def __init__(self, prototypes, noise_sigma, rng):
        self.prototypes = np.asarray(prototypes, dtype=np.float64)
        self.noise_sigma = float(noise_sigma)
        self.rng = rng

    def __call__(self, clip):
        ids = clip[:, 0].astype(np.int64)
        counts = np.bincount(ids, minlength=self.prototypes.shape[0])
        char_id = int(np.argmax(counts))
        row = self.prototypes[char_id].copy()
        if self.noise_sigma > 0:
            row += self.noise_sigma * self.rng.standard_normal(row.shape[0])
        return row


def encode_clips(frames, plan, encoder, source_id=""):
    """Encode each planned clip to one feature row; the tail clip is padded
    by repeating the last frame."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2:
        raise ValueError("frames must be a 2-D array")
    if frames.shape[0] != plan.n_frames:
        raise ValueError("frame count does not match the plan")
    rows = []
    for start in plan.starts:
        end = start + plan.clip_len
        clip = frames[start : min(end, plan.n_frames)]
        if end > plan.n_frames:
            pad = np.repeat(clip[-1:], end - plan.n_frames, axis=0)
            clip = np.concatenate([clip, pad], axis=0)
        rows.append(np.asarray(encoder(clip), dtype=np.float64))
    return FeatureSequence(values=np.stack(rows), source_id=source_id)


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------


@dataclass
class SynthSpec:
    """Generator recipe for a synthetic corpus.

    word_table maps word id -> tuple of character prototype ids (adjacent
    duplicates are avoided so run collapsing cannot destroy a word's
    identity).  text_map maps word id -> text token id.  Prototype vectors
    are derived from the seed, not stored; see prototypes_for_spec.
    """

    n_char_prototypes: int
    feature_dim: int
    word_table: dict
    text_map: dict
    sentence_len_range: tuple
    repeat_range: tuple
    noise_sigma: float
    n_samples: int
    seed: int

    def __post_init__(self):
        if self.n_char_prototypes < 1 or self.feature_dim < 1:
            raise ValueError("prototype count and feature dim must be >= 1")
        if not self.word_table:
            raise ValueError("word_table must not be empty")
        lo, hi = self.sentence_len_range
        if lo < 1 or hi < lo:
            raise ValueError("bad sentence_len_range")
        lo, hi = self.repeat_range
        if lo < 1 or hi < lo:
            raise ValueError("bad repeat_range")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        for wid, chars in self.word_table.items():
            if len(chars) < 1:
                raise ValueError(f"word {wid} is empty")
            for c in chars:
                if not 0 <= c < self.n_char_prototypes:
                    raise ValueError(f"word {wid} uses unknown char {c}")
            for a, b in zip(chars, chars[1:]):
                if a == b:
                    raise ValueError(
                        f"word {wid} has adjacent duplicate chars; run "
                        "collapsing would not preserve it"
                    )
            if wid not in self.text_map:
                raise ValueError(f"word {wid} missing from text_map")


def make_word_table(rng, n_words, n_chars, len_range):
    """Random distinct words without adjacent duplicate chars."""
    lo, hi = len_range
    words = {}
    seen = set()
    attempts = 0
    while len(words) < n_words:
        attempts += 1
        if attempts > 10000 * n_words:
            raise ValueError("could not build that many distinct words")
        length = int(rng.integers(lo, hi + 1))
        chars = [int(rng.integers(0, n_chars))]
        while len(chars) < length:
            c = int(rng.integers(0, n_chars))
            if c != chars[-1] or n_chars == 1:
                chars.append(c)
        key = tuple(chars)
        if key in seen or (n_chars == 1 and length > 1):
            continue
        seen.add(key)
        words[len(words)] = key
    return words


def build_synth_spec(
    n_chars,
    feature_dim,
    n_words,
    word_len_range,
    sentence_len_range,
    repeat_range,
    noise_sigma,
    n_samples,
    seed,
):
    """Derive a full SynthSpec (word table, identity text map) from a seed."""
    table_rng = np.random.default_rng([seed, 101])
    word_table = make_word_table(table_rng, n_words, n_chars, word_len_range)
    text_map = {wid: wid for wid in word_table}
    return SynthSpec(
        n_char_prototypes=n_chars,
        feature_dim=feature_dim,
        word_table=word_table,
        text_map=text_map,
        sentence_len_range=tuple(sentence_len_range),
        repeat_range=tuple(repeat_range),
        noise_sigma=float(noise_sigma),
        n_samples=n_samples,
        seed=seed,
    )


@dataclass
class SynthSample:
    features: np.ndarray
    word_ids: list
    char_ids: list
    text: list
    source_id: str


@dataclass
class SynthCorpus:
    spec: SynthSpec
    samples: list = field(default_factory=list)

    def feature_sequences(self):
        return [
            FeatureSequence(values=s.features, source_id=s.source_id)
            for s in self.samples
        ]


def prototypes_for_spec(spec):
    """Character prototype matrix implied by the spec seed (unit-scale
    Gaussian rows; the first draw of the generation stream)."""
    rng = np.random.default_rng(spec.seed)
    return rng.standard_normal((spec.n_char_prototypes, spec.feature_dim))


def sample_sentence(spec, rng):
    """One sentence as a word-id list (uniform length, uniform words)."""
    word_ids_sorted = sorted(spec.word_table)
    lo, hi = spec.sentence_len_range
    n_words = int(rng.integers(lo, hi + 1))
    return [
        word_ids_sorted[int(rng.integers(0, len(word_ids_sorted)))]
        for _ in range(n_words)
    ]


def sample_texts(spec, n, seed):
    """Text-only sentences from the same language as the paired corpus.

    Used to pre-train the stand-in generator: its training data is text
    drawn from the language, never the paired feature streams.
    """
    rng = np.random.default_rng(seed)
    return [
        [spec.text_map[w] for w in sample_sentence(spec, rng)] for _ in range(n)
    ]


def generate_synthetic_corpus(spec):
    rng = np.random.default_rng(spec.seed)
    prototypes = rng.standard_normal((spec.n_char_prototypes, spec.feature_dim))
    samples = []
    for i in range(spec.n_samples):
        word_ids = sample_sentence(spec, rng)
        rows = []
        char_ids = []
        for wid in word_ids:
            for c in spec.word_table[wid]:
                rlo, rhi = spec.repeat_range
                reps = int(rng.integers(rlo, rhi + 1))
                for _ in range(reps):
                    row = prototypes[c].copy()
                    if spec.noise_sigma > 0:
                        row += spec.noise_sigma * rng.standard_normal(spec.feature_dim)
                    rows.append(row)
                    char_ids.append(c)
        samples.append(
            SynthSample(
                features=np.stack(rows),
                word_ids=word_ids,
                char_ids=char_ids,
                text=[spec.text_map[w] for w in word_ids],
                source_id=f"synth-{i:05d}",
            )
        )
    return SynthCorpus(spec=spec, samples=samples)


# ---------------------------------------------------------------------------
# corpus persistence: spec.json + samples.jsonl
# ---------------------------------------------------------------------------


def save_corpus(corpus, dirpath):
    os.makedirs(dirpath, exist_ok=True)
    spec = corpus.spec
    spec_obj = {
        "n_char_prototypes": spec.n_char_prototypes,
        "feature_dim": spec.feature_dim,
        "word_table": {str(k): list(v) for k, v in sorted(spec.word_table.items())},
        "text_map": {str(k): v for k, v in sorted(spec.text_map.items())},
        "sentence_len_range": list(spec.sentence_len_range),
        "repeat_range": list(spec.repeat_range),
        "noise_sigma": spec.noise_sigma,
        "n_samples": spec.n_samples,
        "seed": spec.seed,
    }
    dump_json(os.path.join(dirpath, "spec.json"), spec_obj)
    tmp = os.path.join(dirpath, "samples.jsonl.tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for s in corpus.samples:
            fh.write(
                json.dumps(
                    {
                        "source_id": s.source_id,
                        "features": [list(row) for row in s.features.tolist()],
                        "word_ids": list(s.word_ids),
                        "char_ids": list(s.char_ids),
                        "text": list(s.text),
                    }
                )
            )
            fh.write("\n")
    os.replace(tmp, os.path.join(dirpath, "samples.jsonl"))


def load_corpus(dirpath):
    spec_obj = load_json(os.path.join(dirpath, "spec.json"))
    spec = SynthSpec(
        n_char_prototypes=spec_obj["n_char_prototypes"],
        feature_dim=spec_obj["feature_dim"],
        word_table={int(k): tuple(v) for k, v in spec_obj["word_table"].items()},
        text_map={int(k): v for k, v in spec_obj["text_map"].items()},
        sentence_len_range=tuple(spec_obj["sentence_len_range"]),
        repeat_range=tuple(spec_obj["repeat_range"]),
        noise_sigma=spec_obj["noise_sigma"],
        n_samples=spec_obj["n_samples"],
        seed=spec_obj["seed"],
    )
    samples = []
    with open(os.path.join(dirpath, "samples.jsonl"), "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            samples.append(
                SynthSample(
                    features=np.asarray(obj["features"], dtype=np.float64),
                    word_ids=list(obj["word_ids"]),
                    char_ids=list(obj["char_ids"]),
                    text=list(obj["text"]),
                    source_id=obj["source_id"],
                )
            )
    return SynthCorpus(spec=spec, samples=samples)
