import io

import numpy as np
import pytest

from hierembed.encoder import (
    EmbeddingModel,
    EncoderConfig,
    cosine,
    embed,
    embed_gradient,
    feature_strings,
    featurize,
    normalize_term,
)
from hierembed.exceptions import ConfigInvalid, EmptyTerm, ModelFormatError, ZeroVector
from tests.conftest import SMALL_ENCODER


def test_normalization():
    assert normalize_term("  Fertility\tTESTING ") == "fertility testing"


def test_feature_strings():
    cfg = EncoderConfig(ngram_min=3, ngram_max=3)
    assert feature_strings(cfg, "HNA") == ["^hn", "hna", "na$", "hna"]
    no_words = EncoderConfig(ngram_min=3, ngram_max=3, include_word_unigrams=False)
    assert feature_strings(no_words, "HNA") == ["^hn", "hna", "na$"]


def test_short_word_falls_back_to_marked_word():
    cfg = EncoderConfig(ngram_min=5, ngram_max=5, include_word_unigrams=False)
    assert feature_strings(cfg, "a") == ["^a$"]


def test_empty_term_raises():
    with pytest.raises(EmptyTerm):
        featurize(SMALL_ENCODER, "   ")


def test_featurize_depends_on_hash_seed():
    a = featurize(EncoderConfig(hash_seed=1), "laboratory")
    b = featurize(EncoderConfig(hash_seed=2), "laboratory")
    assert not np.array_equal(a, b)
    assert np.all(np.diff(a) >= 0)


def test_embed_is_mean_of_rows(small_model):
    ids = featurize(small_model.config, "fertility testing")
    np.testing.assert_allclose(embed(small_model, "fertility testing"), small_model.weights[ids].mean(axis=0))


def test_encode_matches_embed(small_model):
    terms = ["hna", "laboratory", "fertility testing", "hna"]
    batch = small_model.encode(terms)
    for i, t in enumerate(terms):
        np.testing.assert_allclose(batch.embeddings[i], small_model.embed(t), rtol=1e-12)


def test_backward_matches_per_term_gradient(small_model):
    terms = ["hna", "laboratory"]
    rng = np.random.default_rng(0)
    up = rng.normal(size=(2, small_model.dim))
    got = small_model.backward(small_model.encode(terms), up).to_dense(512)
    want = (embed_gradient(small_model, terms[0], up[0]) + embed_gradient(small_model, terms[1], up[1])).to_dense(512)
    np.testing.assert_allclose(got, want, atol=1e-15)


def test_init_bounds_and_determinism():
    cfg = EncoderConfig(dim=16, n_buckets=1024)
    a = EmbeddingModel.initialize(cfg, 3)
    assert a.weights.dtype == np.float32
    assert np.abs(a.weights).max() <= 0.5 / 16
    assert np.array_equal(a.weights, EmbeddingModel.initialize(cfg, 3).weights)


def test_cosine_examples():
    assert cosine(np.array([1.0, 0.0]), np.array([1.0, 1.0])) == pytest.approx(0.70710678, abs=1e-8)
    assert cosine(np.array([1.0, 2.0]), np.array([2.0, 4.0])) == pytest.approx(1.0)
    with pytest.raises(ZeroVector):
        cosine(np.zeros(2), np.ones(2))


def test_model_file_round_trip(tmp_path, small_model):
    path = tmp_path / "m.hprb"
    small_model.save(path)
    raw = path.read_bytes()
    assert raw[:4] == b"HPRB"
    back = EmbeddingModel.load(path)
    assert back.config == small_model.config
    assert np.array_equal(back.weights, small_model.weights.astype(np.float32))
    buf = io.BytesIO()
    back.write(buf)
    assert buf.getvalue() == raw


@pytest.mark.parametrize("mutate", [
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:4] + (9).to_bytes(4, "little") + b[8:],
    lambda b: b[:-5],
])
def test_bad_model_files(tmp_path, small_model, mutate):
    path = tmp_path / "m.hprb"
    small_model.save(path)
    path.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(ModelFormatError):
        EmbeddingModel.load(path)


def test_config_validation():
    with pytest.raises(ConfigInvalid):
        EncoderConfig(ngram_min=4, ngram_max=3)
    with pytest.raises(ConfigInvalid):
        EmbeddingModel(SMALL_ENCODER, np.zeros((3, 3)))
