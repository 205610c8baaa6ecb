"""Model family tests: contracts, padding, determinism, gradients."""

import numpy as np
import pytest

from salab import data as dm
from salab.exceptions import EmptyDocumentError
from salab.models import (
    AttentionClassifier,
    HierarchicalTransformerClassifier,
    HierModelConfig,
    LocalModelConfig,
    extract_attention_maps,
    predict_proba,
)
from salab.simplex import MappingKind
from salab.validation import model_grad_error


@pytest.fixture(scope="module")
def corpus():
    cfg = dm.SyntheticCorpusConfig(
        n_documents=12, vocab_size=25, min_sentences=2, max_sentences=4,
        min_words=3, max_words=6, seed=21,
    )
    docs = dm.generate_synthetic_corpus(cfg)
    vocab = dm.build_vocab((s for d in docs for s in d.sentences), min_freq=1)
    return docs, vocab


def att_cfg(vocab, mapping=None, **kw):
    kw.setdefault("embed_dim", 8)
    kw.setdefault("hidden", 8)
    kw.setdefault("max_words", 6)
    kw.setdefault("max_sents", 4)
    kw.setdefault("dropout_rate", 0.0)
    return LocalModelConfig(len(vocab), mapping=mapping or MappingKind.softmax(), **kw)


def tr_cfg(vocab, mapping=None, **kw):
    kw.setdefault("embed_dim", 8)
    kw.setdefault("hidden", 8)
    kw.setdefault("max_words", 6)
    kw.setdefault("max_sents", 4)
    kw.setdefault("dropout_rate", 0.0)
    return HierModelConfig(len(vocab), mapping=mapping or MappingKind.softmax(), **kw)


def test_single_token_document(corpus):
    _, vocab = corpus
    doc = dm.PatientDocument("one", [["dnr"]], 1)
    model = AttentionClassifier(att_cfg(vocab), seed=0)
    batch = dm.pad_and_batch([doc], vocab, 6, 4, 1)[0]
    logits, records = model.forward(batch)
    assert np.isfinite(logits.data).all()
    assert records["word"][0, 0, 0, 0, 0] == 1.0


def test_batch_independence(corpus):
    docs, vocab = corpus
    model = AttentionClassifier(att_cfg(vocab, MappingKind.sparsemax()), seed=0)
    single = dm.pad_and_batch(docs[:1], vocab, 6, 4, 1)[0]
    doubled = dm.pad_and_batch([docs[0], docs[0]], vocab, 6, 4, 2)[0]
    alone, _ = model.forward(single)
    both, _ = model.forward(doubled)
    assert both.data[0] == both.data[1] == alone.data[0]


def test_empty_document_error(corpus):
    _, vocab = corpus
    model = AttentionClassifier(att_cfg(vocab), seed=0)
    batch = dm.pad_and_batch(
        [dm.PatientDocument("x", [["w0", "w1"]], 0)], vocab, 6, 4, 1
    )[0]
    batch.word_mask[:] = False
    with pytest.raises(EmptyDocumentError):
        model.forward(batch)


@pytest.mark.parametrize("family", [AttentionClassifier, HierarchicalTransformerClassifier])
def test_padding_insensitivity(corpus, family):
    """Extra pad sentences / words never change the logit."""
    docs, vocab = corpus
    cfg_fn = att_cfg if family is AttentionClassifier else tr_cfg
    model = family(cfg_fn(vocab, MappingKind.sparsemax(), max_words=8, max_sents=5), seed=1)
    tight = dm.pad_and_batch(docs[:3], vocab, 6, 4, 3)[0]
    loose = dm.pad_and_batch(docs[:3], vocab, 8, 5, 3)[0]
    logits_a, _ = model.forward(tight)
    logits_b, _ = model.forward(loose)
    np.testing.assert_allclose(logits_a.data, logits_b.data, atol=1e-6)


def test_hier_single_sentence_degenerates(corpus):
    _, vocab = corpus
    doc = dm.PatientDocument("solo", [["dnr", "w0", "w1"]], 1)
    model = HierarchicalTransformerClassifier(tr_cfg(vocab), seed=0)
    batch = dm.pad_and_batch([doc], vocab, 6, 4, 1)[0]
    _, records = model.forward(batch)
    assert records["sentence"][0, 0, 0, 0] == pytest.approx(1.0, abs=1e-6)


def test_hier_sentence_order_sensitivity(corpus):
    _, vocab = corpus
    s1, s2 = ["dnr", "w0", "w1"], ["w2", "w3", "w4"]
    model = HierarchicalTransformerClassifier(tr_cfg(vocab), seed=2)
    fwd = dm.pad_and_batch([dm.PatientDocument("a", [s1, s2], 1)], vocab, 6, 4, 1)[0]
    rev = dm.pad_and_batch([dm.PatientDocument("a", [s2, s1], 1)], vocab, 6, 4, 1)[0]
    la, _ = model.forward(fwd)
    lb, _ = model.forward(rev)
    assert abs(la.data[0] - lb.data[0]) > 1e-6


def test_determinism_fixed_seed(corpus):
    docs, vocab = corpus
    batch = dm.pad_and_batch(docs, vocab, 6, 4, len(docs))[0]

    def run():
        m = AttentionClassifier(att_cfg(vocab, MappingKind.entmax15()), seed=3)
        return m.forward(batch)[0].data.copy()

    np.testing.assert_array_equal(run(), run())


def test_mapping_swap_checkpoint_compatibility(corpus, tmp_path):
    docs, vocab = corpus
    batch = dm.pad_and_batch(docs[:4], vocab, 6, 4, 4)[0]
    m1 = AttentionClassifier(att_cfg(vocab, MappingKind.softmax()), seed=4)
    m1.save(tmp_path / "m.ckpt")
    m2 = AttentionClassifier(att_cfg(vocab, MappingKind.sparsemax()), seed=99)
    m2.load(tmp_path / "m.ckpt")
    for name in m1.params:
        np.testing.assert_array_equal(m1.params[name].data, m2.params[name].data)
    assert np.isfinite(m2.forward(batch)[0].data).all()


def test_zero_count_ordering_across_mappings(corpus):
    docs, vocab = corpus
    batch = dm.pad_and_batch(docs, vocab, 6, 4, len(docs))[0]
    zeros = {}
    for name in ("sparsemax", "entmax15", "softmax"):
        model = AttentionClassifier(att_cfg(vocab, MappingKind.parse(name)), seed=5)
        _, records = model.forward(batch)
        w = records["word"]
        real = batch.word_mask[:, :, None, None, :] & batch.word_mask[:, :, None, :, None]
        zeros[name] = int(((w == 0.0) & real).sum())
    assert zeros["sparsemax"] >= zeros["entmax15"] >= zeros["softmax"] == 0


def test_predict_proba_stability():
    assert predict_proba(np.array([0.0]))[0] == 0.5
    assert predict_proba(np.array([20.0]))[0] > 0.9999
    assert predict_proba(np.array([-20.0]))[0] < 1e-4


def test_shared_qkv_flag(corpus):
    docs, vocab = corpus
    model = AttentionClassifier(att_cfg(vocab, shared_qkv=True), seed=6)
    np.testing.assert_array_equal(model.params["wq"].data, model.params["wk"].data)
    batch = dm.pad_and_batch(docs[:2], vocab, 6, 4, 2)[0]
    assert np.isfinite(model.forward(batch)[0].data).all()


def test_extract_attention_maps_filter(corpus):
    _, vocab = corpus
    doc = dm.PatientDocument(
        "f", [["w0", "cmo", "w1"], ["w2", "w3"]], 1
    )
    model = AttentionClassifier(att_cfg(vocab), seed=7)
    only = extract_attention_maps(model, doc, vocab, filter_tokens={"cmo"})
    assert len(only) == 1 and only[0].sentence_index == 0
    assert only[0].col_labels == ["w0", "cmo", "w1"]
    every = extract_attention_maps(model, doc, vocab)
    assert len(every) == 2  # one word record per sentence

    tr = HierarchicalTransformerClassifier(tr_cfg(vocab), seed=7)
    recs = extract_attention_maps(tr, doc, vocab)
    assert [r.scope for r in recs] == ["word", "word", "sentence"]


@pytest.mark.parametrize("family", ["att", "tr"])
@pytest.mark.parametrize("mapping", ["softmax", "entmax15", "sparsemax"])
def test_full_model_gradcheck(corpus, family, mapping):
    docs, vocab = corpus
    kind = MappingKind.parse(mapping)
    err = None
    for attempt in range(4):  # resample near support boundaries
        if family == "att":
            model = AttentionClassifier(att_cfg(vocab, kind), seed=8 + attempt, dtype=np.float64)
        else:
            model = HierarchicalTransformerClassifier(tr_cfg(vocab, kind), seed=8 + attempt, dtype=np.float64)
        batch = dm.pad_and_batch(docs[:3], vocab, 6, 4, 3)[0]
        err = model_grad_error(model, batch)
        if err <= 1e-4:
            break
    assert err <= 1e-4
