import json

import pytest
import torch

from pnrnet.data import DataError, Sentence, build_vocab, encode_sentence
from pnrnet.encoder import EncoderConfig, embed_tokens, encode, load_context_vectors, register
from pnrnet.numerics import ConfigError, ParameterStore

CORPUS = [Sentence(["ab", "c", "ab", ""], [], ["N", "V", "N", "X"]), Sentence(["d"], [])]


def setup(cfg=None, seed=0):
    cfg = cfg or EncoderConfig(word_dim=8, pos_dim=4, char_dim=4, context_dim=8, d_model=6, lstm_hidden=5)
    vocab = build_vocab(CORPUS)
    store = ParameterStore(seed)
    register(store, cfg, vocab)
    return store, vocab, cfg


def test_embedding_width():
    store, vocab, _ = setup()
    rows = embed_tokens(store, encode_sentence(CORPUS[0], vocab))
    assert rows.shape == (4, 24)


def test_identical_tokens_give_identical_rows():
    store, vocab, _ = setup()
    rows = embed_tokens(store, encode_sentence(CORPUS[0], vocab))
    assert torch.equal(rows[0], rows[2])


def test_empty_token_has_zero_char_vector():
    store, vocab, cfg = setup()
    rows = embed_tokens(store, encode_sentence(CORPUS[0], vocab))
    assert torch.all(rows[3, -cfg.char_dim:] == 0)


def test_encode_shapes_and_determinism():
    store, vocab, _ = setup()
    for s in CORPUS:
        emb = embed_tokens(store, encode_sentence(s, vocab))
        out = encode(store, emb)
        assert out.shape == (len(s), 6)
        assert torch.equal(out, encode(store, emb))


def test_zero_parameters_give_zero_output():
    store, vocab, _ = setup()
    with torch.no_grad():
        for _, p in store.items():
            p.zero_()
    out = encode(store, embed_tokens(store, encode_sentence(CORPUS[0], vocab)))
    assert torch.all(out == 0)


def test_dropout_needs_generator():
    store, vocab, _ = setup()
    emb = embed_tokens(store, encode_sentence(CORPUS[0], vocab))
    assert torch.equal(encode(store, emb, rate=0.5), encode(store, emb))
    a = encode(store, emb, 0.5, torch.Generator().manual_seed(1))
    b = encode(store, emb, 0.5, torch.Generator().manual_seed(1))
    assert torch.equal(a, b) and not torch.equal(a, encode(store, emb))


def test_context_vectors_replace_table():
    store, vocab, _ = setup()
    enc = encode_sentence(CORPUS[0], vocab)
    ctx = torch.arange(32, dtype=torch.float64).reshape(4, 8)
    rows = embed_tokens(store, enc, ctx)
    assert torch.equal(rows[:, :8], ctx)
    with pytest.raises(ConfigError):
        embed_tokens(store, enc, torch.zeros(4, 3, dtype=torch.float64))


def test_load_context_vectors(tmp_path):
    path = tmp_path / "ctx.jsonl"
    path.write_text(json.dumps({"vectors": [[1, 2], [3, 4]]}) + "\n")
    (vectors,) = load_context_vectors(path, 2)
    assert vectors.tolist() == [[1, 2], [3, 4]]
    with pytest.raises(DataError, match=":1"):
        load_context_vectors(path, 3)


def test_odd_char_dim_rejected():
    with pytest.raises(ConfigError):
        setup(EncoderConfig(char_dim=5))
