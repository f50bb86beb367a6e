from hypothesis import given
from hypothesis import strategies as st

from hiercap.textproc import BOS, EOS, PAD, SEP, UNK, Tokenizer, normalize, tokenize


def test_normalize_keeps_periods_as_tokens():
    assert normalize("C hosts a Dinner. c cleans!") == "c hosts a dinner . c cleans"


def test_tokenize_whitespace():
    assert tokenize("c picks  the knife") == ["c", "picks", "the", "knife"]


def test_special_ids_fixed():
    assert (PAD, BOS, EOS, UNK, SEP) == (0, 1, 2, 3, 4)


def test_roundtrip_on_corpus_strings():
    corpus = ["c picks the knife", "c hosts a dinner . c cleans the shelf"]
    tok = Tokenizer.from_corpus(corpus)
    for text in corpus:
        assert tok.decode(tok.encode(text)) == normalize(text)


def test_unknown_word_maps_to_unk():
    tok = Tokenizer.from_corpus(["a b"])
    ids = tok.encode("a zzz", add_special=False)
    assert ids[1] == UNK


def test_serialization_roundtrip():
    tok = Tokenizer.from_corpus(["c picks the knife"])
    tok2 = Tokenizer.from_dict(tok.to_dict())
    assert tok2.word_to_id == tok.word_to_id
    assert tok2.id_to_word == tok.id_to_word


@given(st.lists(st.sampled_from(["c", "picks", "the", "knife", "."]), min_size=1, max_size=8))
def test_roundtrip_property(words):
    text = " ".join(words)
    tok = Tokenizer.from_corpus([text])
    assert tok.decode(tok.encode(text)) == normalize(text)
