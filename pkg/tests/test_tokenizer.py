import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mrlabel.errors import DataError
from mrlabel.tokenizer import (
    SPECIAL_TOKENS, Vocab, build_vocab, load_vocab, minimum_vocab_size, save_vocab,
    tokenize, tokenize_many, wordpiece,
)

TEXTS = ["enhancing mass noted", "mass enhancing", "masses noted twice", "ממצא חדש ממצא"]


def test_specials_first():
    v = build_vocab(TEXTS, 60)
    assert v.tokens[:5] == list(SPECIAL_TOKENS)
    assert (v.pad_id, v.unk_id, v.cls_id, v.sep_id, v.mask_id) == (0, 1, 2, 3, 4)
    assert len(v) <= 60


def test_build_is_deterministic():
    assert build_vocab(TEXTS, 50).tokens == build_vocab(list(TEXTS), 50).tokens


def test_too_small_or_empty():
    with pytest.raises(DataError, match="minimum is"):
        build_vocab(TEXTS, 6)
    with pytest.raises(DataError, match="empty"):
        build_vocab([], 100)
    assert minimum_vocab_size(["ab"]) == len(SPECIAL_TOKENS) + 2


def test_unmatched_span_makes_whole_word_unk():
    v = Vocab(list(SPECIAL_TOKENS) + ["ab", "##c"])
    assert wordpiece("abc", v) == [v.id("ab"), v.id("##c")]
    assert wordpiece("abd", v) == [v.unk_id]


def test_greedy_longest_match():
    v = Vocab(list(SPECIAL_TOKENS) + ["a", "ab", "##b", "##c", "##bc"])
    assert [v.tokens[i] for i in wordpiece("abc", v)] == ["ab", "##c"]


def test_tokenize_layout_and_truncation():
    v = build_vocab(TEXTS, 80)
    seq = tokenize("mass " * 200, v, max_len=16)
    assert seq.ids.shape == (16,)
    assert seq.length == 16
    assert seq.ids[0] == v.cls_id and seq.ids[-1] == v.sep_id
    short = tokenize("mass", v, max_len=16)
    assert short.ids[short.length - 1] == v.sep_id
    assert np.all(short.ids[short.length:] == v.pad_id)
    assert short.pad_mask.sum() == 16 - short.length


def test_empty_text_is_cls_sep():
    v = build_vocab(TEXTS, 40)
    seq = tokenize("", v, 8)
    assert seq.length == 2 and list(seq.ids[:2]) == [v.cls_id, v.sep_id]


def test_vocab_file_round_trip(tmp_path, small_vocab):
    save_vocab(small_vocab, tmp_path / "v.txt")
    back = load_vocab(tmp_path / "v.txt")
    assert back == small_vocab
    assert back.content_hash() == small_vocab.content_hash()


@pytest.mark.parametrize("tokens, msg", [
    (["[UNK]", "[PAD]", "[CLS]", "[SEP]", "[MASK]"], "id 0"),
    (list(SPECIAL_TOKENS) + ["a", "a"], "duplicate"),
    (list(SPECIAL_TOKENS[:-1]), "missing"),
])
def test_bad_vocab(tokens, msg):
    with pytest.raises(DataError, match=msg):
        Vocab(tokens)


def test_tokenize_many_shapes(small_corpus, small_vocab):
    ids, lengths = tokenize_many([r.text for r in small_corpus], small_vocab, 64)
    assert ids.shape == (len(small_corpus), 64)
    assert np.all(ids[np.arange(len(ids)), lengths - 1] == small_vocab.sep_id)


@settings(max_examples=60, deadline=None)
@given(st.text(alphabet="abcdeממצא ", max_size=60), st.integers(2, 40))
def test_tokenize_invariants(text, max_len):
    v = build_vocab(["abcde ממצא ab cd ea", "ממ צא"], 40)
    seq = tokenize(text, v, max_len)
    assert 2 <= seq.length <= max_len
    assert seq.ids[0] == v.cls_id and seq.ids[seq.length - 1] == v.sep_id
    body = seq.ids[1:seq.length - 1]
    assert not np.isin(body, [v.pad_id, v.cls_id, v.sep_id, v.mask_id]).any()
    assert np.all(seq.ids[seq.length:] == v.pad_id)
