"""Clip planning, clip encoding, and the synthetic corpus generator."""

import numpy as np
import pytest

from signtok.ingest import (
    FeatureSequence,
    IdentityEncoder,
    PrototypeEncoder,
    SynthSpec,
    build_synth_spec,
    encode_clips,
    generate_synthetic_corpus,
    load_corpus,
    make_word_table,
    plan_clips,
    prototypes_for_spec,
    sample_texts,
    save_corpus,
)


def test_plan_exact_fit_is_one_clip():
    plan = plan_clips(13, 13, 4)
    assert plan.starts == [0]


def test_plan_21_frames_gives_three_clips():
    plan = plan_clips(21, 13, 4)
    assert plan.starts == [0, 4, 8]


def test_plan_short_stream_is_one_padded_clip():
    plan = plan_clips(5, 13, 4)
    assert plan.starts == [0]
    assert plan.starts[0] + plan.clip_len > plan.n_frames


def test_plan_rejects_empty_and_bad_args():
    with pytest.raises(ValueError, match="empty input"):
        plan_clips(0, 13, 4)
    with pytest.raises(ValueError):
        plan_clips(10, 0, 1)
    with pytest.raises(ValueError):
        plan_clips(10, 4, 5)


def test_plan_covers_every_frame():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(1, 120))
        clip_len = int(rng.integers(1, 20))
        stride = int(rng.integers(1, clip_len + 1))
        plan = plan_clips(n, clip_len, stride)
        covered = np.zeros(n, dtype=bool)
        prev = -1
        for s in plan.starts:
            assert s > prev
            prev = s
            covered[s : min(s + clip_len, n)] = True
        assert covered.all(), (n, clip_len, stride, plan.starts)


def test_encode_identity_on_constant_frames():
    frames = np.ones((21, 3)) * 2.5
    plan = plan_clips(21, 13, 4)
    seq = encode_clips(frames, plan, IdentityEncoder(), source_id="x")
    assert seq.values.shape == (3, 3)
    np.testing.assert_allclose(seq.values, 2.5)
    assert seq.source_id == "x"


def test_encode_row_count_matches_plan():
    rng = np.random.default_rng(4)
    frames = rng.standard_normal((17, 2))
    plan = plan_clips(17, 5, 3)
    seq = encode_clips(frames, plan, IdentityEncoder())
    assert len(seq) == plan.n_clips()


def test_encode_pads_tail_with_last_frame():
    frames = np.arange(5, dtype=np.float64).reshape(-1, 1)
    plan = plan_clips(5, 13, 4)
    seq = encode_clips(frames, plan, IdentityEncoder())
    # 5 real frames (0..4) then 8 copies of 4: mean = (10 + 32) / 13
    assert seq.values[0, 0] == pytest.approx(42.0 / 13.0)


def test_prototype_encoder_zero_noise_is_exact():
    protos = np.array([[1.0, 2.0], [3.0, 4.0]])
    enc = PrototypeEncoder(protos, 0.0, np.random.default_rng(0))
    clip = np.array([[1.0, 9.9], [1.0, 0.1], [0.0, 5.0]])
    np.testing.assert_array_equal(enc(clip), protos[1])


def test_prototype_encoder_majority_tie_takes_lowest_id():
    protos = np.eye(3)
    enc = PrototypeEncoder(protos, 0.0, np.random.default_rng(0))
    clip = np.array([[2.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    np.testing.assert_array_equal(enc(clip), protos[1])


def test_feature_sequence_validation():
    with pytest.raises(ValueError):
        FeatureSequence(values=np.zeros((0, 4)))
    with pytest.raises(ValueError):
        FeatureSequence(values=np.array([[np.inf, 0.0]]))
    with pytest.raises(ValueError):
        FeatureSequence(values=np.zeros(3))


def _tiny_spec(**kw):
    base = dict(
        n_char_prototypes=4,
        feature_dim=6,
        word_table={0: (0, 1), 1: (2, 3), 2: (1, 2, 3)},
        text_map={0: 0, 1: 1, 2: 2},
        sentence_len_range=(1, 3),
        repeat_range=(1, 2),
        noise_sigma=0.05,
        n_samples=12,
        seed=9,
    )
    base.update(kw)
    return SynthSpec(**base)


def test_spec_rejects_adjacent_duplicate_chars():
    with pytest.raises(ValueError, match="adjacent duplicate"):
        _tiny_spec(word_table={0: (1, 1)}, text_map={0: 0})


def test_spec_rejects_unknown_char_and_missing_text():
    with pytest.raises(ValueError, match="unknown char"):
        _tiny_spec(word_table={0: (0, 9)}, text_map={0: 0})
    with pytest.raises(ValueError, match="missing from text_map"):
        _tiny_spec(word_table={0: (0, 1)}, text_map={})


def test_corpus_is_deterministic():
    a = generate_synthetic_corpus(_tiny_spec())
    b = generate_synthetic_corpus(_tiny_spec())
    for sa, sb in zip(a.samples, b.samples):
        np.testing.assert_array_equal(sa.features, sb.features)
        assert sa.word_ids == sb.word_ids
        assert sa.text == sb.text


def test_zero_noise_single_repeat_enumerates_chars_exactly():
    spec = _tiny_spec(noise_sigma=0.0, repeat_range=(1, 1))
    corpus = generate_synthetic_corpus(spec)
    protos = prototypes_for_spec(spec)
    for s in corpus.samples:
        want = [c for w in s.word_ids for c in spec.word_table[w]]
        assert s.char_ids == want
        np.testing.assert_array_equal(s.features, protos[want])


def test_annotations_consistent_with_word_table():
    corpus = generate_synthetic_corpus(_tiny_spec(n_samples=30))
    lo, hi = corpus.spec.repeat_range

    def dedup(seq):
        out = [seq[0]]
        for v in seq[1:]:
            if v != out[-1]:
                out.append(v)
        return out

    for s in corpus.samples:
        expanded = [c for w in s.word_ids for c in corpus.spec.word_table[w]]
        assert dedup(s.char_ids) == dedup(expanded)
        assert s.features.shape[0] == len(s.char_ids)
        assert len(s.char_ids) <= hi * len(expanded)
        assert len(s.char_ids) >= lo * len(expanded)
        assert s.text == [corpus.spec.text_map[w] for w in s.word_ids]


def test_sentence_lengths_within_range():
    corpus = generate_synthetic_corpus(_tiny_spec(n_samples=50))
    lo, hi = corpus.spec.sentence_len_range
    lengths = {len(s.word_ids) for s in corpus.samples}
    assert min(lengths) >= lo and max(lengths) <= hi


def test_corpus_roundtrip_is_exact(tmp_path):
    corpus = generate_synthetic_corpus(_tiny_spec())
    save_corpus(corpus, tmp_path / "c")
    back = load_corpus(tmp_path / "c")
    assert back.spec == corpus.spec
    for sa, sb in zip(corpus.samples, back.samples):
        np.testing.assert_array_equal(sa.features, sb.features)
        assert sa.char_ids == sb.char_ids
        assert sa.source_id == sb.source_id


def test_make_word_table_properties():
    rng = np.random.default_rng(3)
    table = make_word_table(rng, 20, 5, (2, 4))
    assert len(table) == 20
    seen = set()
    for chars in table.values():
        assert 2 <= len(chars) <= 4
        assert all(0 <= c < 5 for c in chars)
        assert all(a != b for a, b in zip(chars, chars[1:]))
        assert chars not in seen
        seen.add(chars)


def test_build_synth_spec_is_seed_stable():
    a = build_synth_spec(5, 8, 6, (2, 3), (1, 2), (1, 1), 0.0, 4, seed=42)
    b = build_synth_spec(5, 8, 6, (2, 3), (1, 2), (1, 1), 0.0, 4, seed=42)
    assert a.word_table == b.word_table


def test_sample_texts_draw_from_the_language():
    spec = _tiny_spec()
    texts = sample_texts(spec, 40, seed=5)
    assert texts == sample_texts(spec, 40, seed=5)
    valid = set(spec.text_map.values())
    lo, hi = spec.sentence_len_range
    for t in texts:
        assert lo <= len(t) <= hi
        assert set(t) <= valid
