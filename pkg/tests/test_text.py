import json
import logging
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multifuse.errors import ConfigError, EmptyWordError, FormatError, ParseError
from multifuse.fusion import l2_normalize
from multifuse.text import (
    POSTNORM,
    PRENORM,
    EmbeddingTable,
    SubwordEmbedder,
    SubwordEmbedderConfig,
    TextEncoder,
    concat_fields,
    default_stopwords,
    embed_sentence,
    embed_word_subword,
    fnv1a_32,
    load_embedding_table,
    load_stopwords,
    subword_buckets,
    subword_pieces,
    tokenize_clean,
)

GOLDEN = Path(__file__).parent / "data" / "tokenize_golden.jsonl"


def cos(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


# tokenize / concat -----------------------------------------------------------


@pytest.mark.parametrize(
    "raw, tokens",
    [("The 2 Gold-Rings!!", ["gold", "rings"]), ("a an the", []), ("necklace", ["necklace"]), ("", [])],
)
def test_tokenize_examples(raw, tokens):
    assert tokenize_clean(raw) == tokens


def test_tokenize_golden_file():
    cases = [json.loads(line) for line in GOLDEN.read_text("utf-8").splitlines() if line.strip()]
    assert len(cases) == 50
    for case in cases:
        assert tokenize_clean(case["raw"]) == case["tokens"], case["raw"]


@given(st.text(max_size=80))
def test_tokenize_invariants_and_idempotence(raw):
    tokens = tokenize_clean(raw)
    stop = default_stopwords()
    for tok in tokens:
        assert tok and tok.isascii() and tok.isalpha() and tok == tok.lower()
        assert tok not in stop
    assert tokenize_clean(" ".join(tokens)) == tokens


def test_concat_examples():
    assert concat_fields("gold ring", "jewelry>rings") == "gold ring jewelry>rings"
    assert concat_fields("", "") == ""
    assert concat_fields("mouse", "digital", "wireless mouse") == "mouse digital wireless mouse"
    assert tokenize_clean(concat_fields("gold ring", "jewelry>rings")) == ["gold", "ring", "jewelry", "rings"]


def test_stopword_file(tmp_path):
    stop = default_stopwords()
    assert {"the", "a", "an", "and", "of"} <= stop
    assert all(w.isalpha() and w == w.lower() for w in stop)
    path = tmp_path / "stop.txt"
    path.write_text("# custom\nFoo\n\nbar  # trailing\n", encoding="utf-8")
    assert load_stopwords(path) == {"foo", "bar"}
    assert tokenize_clean("foo the bar baz", load_stopwords(path)) == ["the", "baz"]


# subword embedder ------------------------------------------------------------


def test_fnv1a_reference_values():
    # published FNV-1a 32-bit test vectors
    assert fnv1a_32(b"") == 0x811C9DC5
    assert fnv1a_32(b"a") == 0xE40C292C
    assert fnv1a_32(b"foobar") == 0xBF9CF968


def test_subword_pieces():
    pieces = subword_pieces("ab")
    # "<ab>" has 2 trigrams, 1 four-gram, nothing longer, plus the full form
    assert pieces == ["<ab", "ab>", "<ab>", "<ab>"]
    assert len(subword_pieces("necklace")) == sum(10 - n + 1 for n in range(3, 7)) + 1


def test_embed_word_defaults_and_determinism():
    a = embed_word_subword("necklace")
    b = embed_word_subword("necklace")
    assert a.shape == (110,)
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, embed_word_subword("necklace", SubwordEmbedderConfig(seed=1)))


def test_embed_word_pinned_values():
    # guards the documented hash/PRNG recipe against accidental drift
    v = embed_word_subword("ring")
    assert subword_buckets("ring", SubwordEmbedderConfig()).tolist()[:3] == [
        fnv1a_32(p.encode()) % 65536 for p in ("<ri", "rin", "ing")
    ]
    again = SubwordEmbedder()("ring")
    assert np.array_equal(v, again)


def test_misspelling_closer_than_unrelated():
    base = embed_word_subword("necklace")
    assert cos(base, embed_word_subword("necklcae")) > cos(base, embed_word_subword("camera"))


def test_empty_word_rejected():
    with pytest.raises(EmptyWordError):
        embed_word_subword("")


@pytest.mark.parametrize(
    "kwargs", [{"dim": 0}, {"bucket_count": 0}, {"ngram_min": 4, "ngram_max": 3}, {"ngram_min": 0}, {"seed": -1}]
)
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        SubwordEmbedderConfig(**kwargs)


@settings(max_examples=150)
@given(st.text(min_size=1, max_size=20), st.integers(2, 32), st.integers(0, 2**64 - 1))
def test_embed_word_total_and_nonzero(word, dim, seed):
    cfg = SubwordEmbedderConfig(dim=dim, seed=seed, bucket_count=1024)
    v = embed_word_subword(word, cfg)
    assert np.all(np.isfinite(v))
    assert np.linalg.norm(v) > 1e-8
    assert np.array_equal(v, embed_word_subword(word, cfg))


def _ngrams(word):
    return set(subword_pieces(word))


def test_unrelated_words_near_orthogonal():
    rng = np.random.default_rng(12345)
    letters = np.array(list("abcdefghijklmnopqrstuvwxyz"))
    cosines = []
    while len(cosines) < 1000:
        a = "".join(rng.choice(letters, size=rng.integers(8, 13)))
        b = "".join(rng.choice(letters, size=rng.integers(8, 13)))
        if _ngrams(a) & _ngrams(b):
            continue
        cosines.append(cos(embed_word_subword(a), embed_word_subword(b)))
    assert abs(np.mean(cosines)) < 0.2


# sentences -------------------------------------------------------------------


def test_embed_sentence_examples():
    cfg = SubwordEmbedderConfig()
    out, degenerate = embed_sentence("", cfg, return_degenerate=True)
    assert degenerate and out.shape == (110,) and not out.any()

    single = embed_sentence("the necklace", cfg)
    np.testing.assert_allclose(single, l2_normalize(embed_word_subword("necklace")), atol=1e-15)

    two = embed_sentence("gold necklace", cfg)
    expected = (l2_normalize(embed_word_subword("gold")) + l2_normalize(embed_word_subword("necklace"))) / 2
    np.testing.assert_allclose(two, expected, atol=1e-15)
    assert np.linalg.norm(two) <= 1.0


def test_embed_sentence_two_dim_toy_table():
    table = EmbeddingTable({"north": [0.0, 2.0], "right": [3.0, 0.0]})
    np.testing.assert_allclose(embed_sentence("north right", table), [0.5, 0.5])
    np.testing.assert_allclose(embed_sentence("north right", table, POSTNORM), np.array([3.0, 2.0]) / np.sqrt(13.0))
    # a token missing from the table is skipped when there is no fallback
    np.testing.assert_allclose(embed_sentence("north zebra", table), [0.0, 1.0])


def test_table_miss_falls_back_to_subword():
    cfg = SubwordEmbedderConfig(dim=4)
    table = EmbeddingTable({"north": [1.0, 0.0, 0.0, 0.0]})
    enc = TextEncoder(subword=cfg, table=table)
    np.testing.assert_array_equal(enc.word_vector("NORTH"), [1.0, 0, 0, 0])
    np.testing.assert_array_equal(enc.word_vector("zebra"), embed_word_subword("zebra", cfg))
    with pytest.raises(ConfigError):
        TextEncoder(subword=SubwordEmbedderConfig(dim=3), table=table)
    with pytest.raises(ConfigError):
        TextEncoder(subword=cfg, composer="median")


@given(st.lists(st.sampled_from(["gold", "ring", "camera", "lens", "necklace", "wireless", "mouse"]),
                min_size=1, max_size=6))
def test_postnorm_sentences_are_unit(words):
    v = embed_sentence(" ".join(words), SubwordEmbedderConfig(), POSTNORM)
    assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.norm(embed_sentence(" ".join(words), SubwordEmbedderConfig(), PRENORM)) <= 1 + 1e-12


# embedding table loader ------------------------------------------------------


def test_load_table_basic(tmp_path):
    path = tmp_path / "t.vec"
    path.write_text("a 1.0 0.0\nb 0.0 1.0\n", encoding="utf-8")
    table = load_embedding_table(path)
    assert table.dim == 2 and len(table) == 2
    np.testing.assert_array_equal(table.get("B"), [0.0, 1.0])


def test_load_table_header_and_empty(tmp_path):
    empty = tmp_path / "empty.vec"
    empty.write_text("", encoding="utf-8")
    table = load_embedding_table(empty)
    assert len(table) == 0 and table.dim is None

    header = tmp_path / "h.vec"
    header.write_text("0 5\n", encoding="utf-8")
    assert load_embedding_table(header).dim == 5


def test_load_table_errors(tmp_path):
    mixed = tmp_path / "mixed.vec"
    mixed.write_text("a 1 0 0\nb 0 1\n", encoding="utf-8")
    with pytest.raises(FormatError):
        load_embedding_table(mixed)

    bad = tmp_path / "bad.vec"
    bad.write_text("a 1 0\nb 0 one\n", encoding="utf-8")
    with pytest.raises(ParseError) as info:
        load_embedding_table(bad)
    assert info.value.line == 2


def test_load_table_duplicate_last_wins(tmp_path, caplog):
    path = tmp_path / "dup.vec"
    path.write_text("a 1 0\nA 0 1\n", encoding="utf-8")
    with caplog.at_level(logging.WARNING):
        table = load_embedding_table(path)
    np.testing.assert_array_equal(table.get("a"), [0.0, 1.0])
    assert "duplicate" in caplog.text
