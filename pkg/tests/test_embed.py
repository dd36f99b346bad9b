import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gradcheck import random_config, relative_error
from netvec.embed import (
    OOV_ID,
    PAD_ID,
    CorruptFile,
    DegenerateSequence,
    EmbeddingModel,
    EmptyContext,
    OutOfRange,
    VersionMismatch,
    Vocabulary,
    _sgd_window,
    embedding,
    intern,
    load,
    predict_scores,
    save,
    sgd_step_numpy,
    update,
)
from netvec.splitter import PAD, Sequence


def test_intern():
    v = Vocabulary(capacity=3)
    assert intern(v, "a.com") == 2
    assert intern(v, "a.com") == 2
    assert v.counts[2] == 2
    assert intern(v, "b.com") == OOV_ID
    assert len(v) == 3


@pytest.mark.parametrize("seed", range(100))
def test_gradient_matches_finite_differences(seed):
    assert relative_error(seed) < 1e-5


@pytest.mark.parametrize("seed", range(30))
def test_fused_kernel_matches_reference(seed):
    rng = np.random.default_rng(1000 + seed)
    E_in, E_out, window, targets, negatives, neg_mask = random_config(rng)
    a_in, a_out = E_in.copy(), E_out.copy()
    la = _sgd_window(a_in, a_out, window.astype(np.int64), targets.astype(np.int64), negatives.astype(np.int64),
                     neg_mask, 0.05)
    lb = sgd_step_numpy(E_in, E_out, window, targets, negatives, neg_mask, 0.05)
    assert la == pytest.approx(lb, rel=1e-12)
    np.testing.assert_allclose(a_in, E_in, rtol=0, atol=1e-12)
    np.testing.assert_allclose(a_out, E_out, rtol=0, atol=1e-12)


def test_zero_init_loss():
    m = EmbeddingModel(dim=2, k_neg=5, init="zero")
    for h in "abcdef":
        m.intern(h)
    loss = m.update(["a", "b", "c", "d"])
    assert abs(loss - 6 * math.log(2)) <= 1e-9
    assert abs(loss - 4.1588830833596715) <= 1e-9


def test_zero_init_loss_every_k():
    for k in (1, 3, 5, 8):
        m = EmbeddingModel(dim=3, k_neg=k, init="zero")
        for h in "abcdefghijklmn":
            m.intern(h)
        assert abs(m.update(["a", "b"]) - (1 + k) * math.log(2)) <= 1e-9


def test_degenerate_sequence():
    m = EmbeddingModel(dim=4)
    with pytest.raises(DegenerateSequence):
        m.update(Sequence(("k",), (PAD, PAD, "a"), 1))
    assert m.stats.updates == 0


def test_alternating_pair_loss_decreases_and_predicts():
    m = EmbeddingModel(dim=8, lr=0.1, seed=3)
    for h in ("a", "b", "c", "d", "e", "f"):
        m.intern(h)
    losses = [m.update(["a", "b"] if i % 2 == 0 else ["b", "a"]) for i in range(100)]
    avg = [np.mean(losses[i:i + 20]) for i in range(0, 100, 20)]
    assert losses[-1] < losses[0]
    assert all(x > y for x, y in zip(avg, avg[1:]))
    scores = m.predict_scores(["a"])
    order = np.argsort(-scores)
    assert m.vocab.id_to_token[order[0]] == "b"


def test_predict_scores_uniform_on_zero_model():
    m = EmbeddingModel(dim=4, init="zero")
    for h in "abcde":
        m.intern(h)
    s = predict_scores(m, ["a"])
    assert s[:2].tolist() == [0.0, 0.0]
    np.testing.assert_allclose(s[2:], 1 / 5)
    with pytest.raises(EmptyContext):
        m.predict_scores([PAD])


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_predict_scores_normalized(seed):
    rng = np.random.default_rng(seed)
    m = EmbeddingModel(dim=4, seed=seed, lr=0.5)
    toks = [f"t{i}" for i in range(8)]
    for _ in range(20):
        m.update(list(rng.choice(toks, 4)))
    s = m.predict_scores([toks[0]])
    assert abs(s.sum() - 1.0) <= 1e-9


def test_embedding_rows():
    m = EmbeddingModel(dim=4, init="zero")
    m.intern("a")
    assert not embedding(m, PAD_ID).any()
    assert not embedding(m, 2).any()
    with pytest.raises(OutOfRange):
        embedding(m, m.size)
    u = EmbeddingModel(dim=4)
    u.intern("a")
    assert not u.embedding(PAD_ID).any()
    assert (np.abs(u.embedding(2)) <= 0.5 / 4).all()


def _fuzz(model, rng, n, vocab=40):
    toks = [f"h{i}.example" for i in range(vocab)]
    for _ in range(n):
        w = int(rng.integers(2, 9))
        seq = [toks[i] for i in rng.integers(0, vocab, w)]
        pad = int(rng.integers(0, 3))
        model.update([PAD] * pad + seq)


def test_pad_isolation_and_finiteness():
    rng = np.random.default_rng(5)
    m = EmbeddingModel(dim=8, lr=0.1, seed=5)
    _fuzz(m, rng, 5000)
    assert not m.E_in[PAD_ID].any() and not m.E_out[PAD_ID].any()
    assert np.isfinite(m.E_in).all() and np.isfinite(m.E_out).all()


@pytest.mark.slow
def test_finiteness_one_million_updates():
    rng = np.random.default_rng(11)
    m = EmbeddingModel(dim=8, lr=0.1, seed=11)
    _fuzz(m, rng, 1_000_000, vocab=200)
    assert m.stats.updates == 1_000_000
    assert np.isfinite(m.E_in).all() and np.isfinite(m.E_out).all()
    assert not m.E_in[PAD_ID].any() and not m.E_out[PAD_ID].any()


def test_oov_context_only():
    m = EmbeddingModel(dim=4, capacity=4, seed=1)
    m.update(["a", "b"])
    assert m.vocab.lookup("zzz") == OOV_ID
    before = m.E_out[OOV_ID].copy()
    m.update(["a", "zzz", "b"])
    # OOV is never a target nor a negative, so its output row is untouched
    assert (m.E_out[OOV_ID] == before).all()


def test_newest_only():
    m = EmbeddingModel(dim=4, newest_only=True, init="zero", k_neg=2)
    for h in "abcd":
        m.intern(h)
    assert m.update(["a", "b", "c"]) == pytest.approx(3 * math.log(2))
    assert m.stats.updates == 1


def _trained(seed=0):
    rng = np.random.default_rng(seed)
    m = EmbeddingModel(dim=6, seed=seed)
    _fuzz(m, rng, 300)
    return m


def test_save_load_bit_identical(tmp_path):
    m = _trained()
    p = tmp_path / "m.nv2v"
    save(m, p)
    m2 = load(p)
    assert m2.E_in.tobytes() == m.E_in.tobytes()
    assert m2.E_out.tobytes() == m.E_out.tobytes()
    assert m2.vocab.id_to_token == m.vocab.id_to_token and m2.vocab.counts == m.vocab.counts
    assert m2.stats == m.stats
    assert m2.to_bytes() == p.read_bytes()
    # training continues identically after reload
    rng_a, rng_b = np.random.default_rng(9), np.random.default_rng(9)
    _fuzz(m, rng_a, 50)
    _fuzz(m2, rng_b, 50)
    assert m.to_bytes() == m2.to_bytes()


def test_load_errors(tmp_path):
    raw = _trained().to_bytes()
    p = tmp_path / "m.nv2v"
    p.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(CorruptFile):
        load(p)
    p.write_bytes(raw[:4] + (99).to_bytes(4, "little") + raw[8:])
    with pytest.raises(VersionMismatch):
        load(p)
    p.write_bytes(b"JUNK" + raw[4:])
    with pytest.raises(CorruptFile):
        load(p)
    flipped = bytearray(raw)
    flipped[100] ^= 0xFF
    p.write_bytes(bytes(flipped))
    with pytest.raises(CorruptFile):
        load(p)


def test_determinism():
    assert _trained(4).to_bytes() == _trained(4).to_bytes()
    assert _trained(4).to_bytes() != _trained(5).to_bytes()


def test_module_update_matches_method():
    a, b = EmbeddingModel(dim=4, seed=2), EmbeddingModel(dim=4, seed=2)
    assert update(a, Sequence(("k",), ("x", "y", "z"), 3)) == b.update(["x", "y", "z"])


def test_matrix_growth_preserves_rows():
    m = EmbeddingModel(dim=3, seed=0)
    m.intern("first")
    row = m.embedding(2)
    for i in range(5000):
        m.intern(f"h{i}")
    assert (m.embedding(2) == row).all()
    assert m.E_in.shape == (m.size, 3)
