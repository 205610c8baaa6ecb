"""Tokenization, vocabulary, batching, and the synthetic directive corpus.

The corpus generator plants a handful of directive tokens ("dnr", "dni",
"cmo") whose presence is strongly class-conditional, over Zipf-distributed
filler tokens, so models must learn to find rare informative words.
Dataset files are JSON Lines with token *strings* so vocabularies can be
rebuilt from the file alone.
"""

from __future__ import annotations

import json
import logging
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import derive_rng

log = logging.getLogger(__name__)

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

_PUNCT = set(string.punctuation)


@dataclass
class PatientDocument:
    """One classification unit: sentences of tokens plus a binary label."""

    id: str
    sentences: list[list[str]]
    label: int


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, peel boundary punctuation off."""
    tokens: list[str] = []
    for chunk in text.lower().split():
        head: list[str] = []
        tail: list[str] = []
        while chunk and chunk[0] in _PUNCT:
            head.append(chunk[0])
            chunk = chunk[1:]
        while chunk and chunk[-1] in _PUNCT:
            tail.append(chunk[-1])
            chunk = chunk[:-1]
        tokens.extend(head)
        if chunk:
            tokens.append(chunk)
        tokens.extend(reversed(tail))
    return tokens


class Vocabulary:
    """token <-> id map with reserved ids 0 (pad) and 1 (unknown)."""

    def __init__(self, tokens: list[str]):
        self.id_to_token = [PAD_TOKEN, UNK_TOKEN] + list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def decode(self, idx: int) -> str:
        return self.id_to_token[idx]

    def save(self, path) -> None:
        Path(path).write_text(
            "\n".join(self.id_to_token[2:]) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([t for t in lines if t])


def build_vocab(token_streams, min_freq: int = 5) -> Vocabulary:
    """Count tokens and keep those at or above min_freq.

    Ids are assigned by (frequency desc, token asc) so rebuilding from
    the same corpus is deterministic.
    """
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    counts: Counter[str] = Counter()
    for stream in token_streams:
        counts.update(stream)
    if not counts:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    kept = sorted(
        (t for t, c in counts.items() if c >= min_freq),
        key=lambda t: (-counts[t], t),
    )
    return Vocabulary(kept)


# ---------------------------------------------------------------------------
# synthetic corpus

@dataclass
class SyntheticCorpusConfig:
    n_documents: int = 5000
    vocab_size: int = 200
    positive_rate: float = 0.132
    directive_tokens: tuple[str, ...] = ("dnr", "dni", "cmo")
    p_directive_given_positive: float = 0.9
    p_directive_given_negative: float = 0.05
    min_sentences: int = 3
    max_sentences: int = 6
    min_words: int = 4
    max_words: int = 10
    zipf_exponent: float = 1.1
    seed: int = 0

    def __post_init__(self):
        for p in (
            self.positive_rate,
            self.p_directive_given_positive,
            self.p_directive_given_negative,
        ):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability out of range: {p}")
        if not 0.0 < self.positive_rate < 1.0:
            raise ValueError("positive_rate must lie in (0, 1)")


def generate_synthetic_corpus(cfg: SyntheticCorpusConfig) -> list[PatientDocument]:
    """Draw labels, then plant one directive token per selected document."""
    ranks = np.arange(1, cfg.vocab_size + 1, dtype=np.float64)
    filler_probs = ranks ** -cfg.zipf_exponent
    filler_probs /= filler_probs.sum()
    filler_tokens = [f"w{i}" for i in range(cfg.vocab_size)]

    docs: list[PatientDocument] = []
    for d in range(cfg.n_documents):
        rng = derive_rng(cfg.seed, "corpus", d)
        label = int(rng.random() < cfg.positive_rate)
        n_sent = int(rng.integers(cfg.min_sentences, cfg.max_sentences + 1))
        sentences = []
        for _ in range(n_sent):
            n_word = int(rng.integers(cfg.min_words, cfg.max_words + 1))
            idx = rng.choice(cfg.vocab_size, size=n_word, p=filler_probs)
            sentences.append([filler_tokens[i] for i in idx])
        p_dir = (
            cfg.p_directive_given_positive if label else cfg.p_directive_given_negative
        )
        if rng.random() < p_dir:
            token = cfg.directive_tokens[rng.integers(len(cfg.directive_tokens))]
            s = int(rng.integers(n_sent))
            pos = int(rng.integers(len(sentences[s]) + 1))
            sentences[s].insert(pos, token)
        docs.append(PatientDocument(id=f"doc{d:06d}", sentences=sentences, label=label))
    return docs


# ---------------------------------------------------------------------------
# file I/O and splits

def write_jsonl(path, docs: list[PatientDocument]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for doc in docs:
            fh.write(
                json.dumps(
                    {"id": doc.id, "label": doc.label, "sentences": doc.sentences},
                    ensure_ascii=False,
                )
                + "\n"
            )


def read_jsonl(path) -> list[PatientDocument]:
    docs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            docs.append(
                PatientDocument(
                    id=str(rec["id"]),
                    sentences=[list(map(str, s)) for s in rec["sentences"]],
                    label=int(rec["label"]),
                )
            )
    return docs


@dataclass
class DatasetSplit:
    train: list[PatientDocument]
    validation: list[PatientDocument]
    test: list[PatientDocument]


def split_dataset(
    docs: list[PatientDocument],
    proportions: tuple[float, float, float] = (0.70, 0.15, 0.15),
    seed: int = 0,
) -> DatasetSplit:
    if abs(sum(proportions) - 1.0) > 1e-9:
        raise ValueError("split proportions must sum to 1")
    order = derive_rng(seed, "split").permutation(len(docs))
    shuffled = [docs[i] for i in order]
    n = len(docs)
    n_train = int(round(proportions[0] * n))
    n_val = int(round(proportions[1] * n))
    return DatasetSplit(
        train=shuffled[:n_train],
        validation=shuffled[n_train : n_train + n_val],
        test=shuffled[n_train + n_val :],
    )


# ---------------------------------------------------------------------------
# batching

@dataclass
class Batch:
    token_ids: np.ndarray  # [B, T, W] int64, 0 = pad
    word_mask: np.ndarray  # [B, T, W] bool
    sentence_mask: np.ndarray  # [B, T] bool
    labels: np.ndarray  # [B] float64
    doc_ids: list[str] = field(default_factory=list)


def encode_document(
    doc: PatientDocument, vocab: Vocabulary, max_words: int, max_sents: int
) -> list[list[int]]:
    """Truncate (earliest kept) and map tokens to ids; drops empty sentences."""
    out = []
    for sent in doc.sentences[:max_sents]:
        ids = [vocab.encode(t) for t in sent[:max_words]]
        if ids:
            out.append(ids)
    return out


def pad_and_batch(
    docs: list[PatientDocument],
    vocab: Vocabulary,
    max_words: int,
    max_sents: int,
    batch_size: int,
) -> list[Batch]:
    if min(max_words, max_sents, batch_size) < 1:
        raise ValueError("max_words, max_sents, batch_size must be >= 1")
    kept: list[tuple[PatientDocument, list[list[int]]]] = []
    for doc in docs:
        enc = encode_document(doc, vocab, max_words, max_sents)
        if not enc:
            log.warning("document %s empty after truncation; skipped", doc.id)
            continue
        kept.append((doc, enc))

    batches = []
    for start in range(0, len(kept), batch_size):
        chunk = kept[start : start + batch_size]
        b = len(chunk)
        ids = np.zeros((b, max_sents, max_words), dtype=np.int64)
        wmask = np.zeros((b, max_sents, max_words), dtype=bool)
        smask = np.zeros((b, max_sents), dtype=bool)
        labels = np.zeros(b, dtype=np.float64)
        doc_ids = []
        for i, (doc, enc) in enumerate(chunk):
            for t, sent in enumerate(enc):
                ids[i, t, : len(sent)] = sent
                wmask[i, t, : len(sent)] = True
                smask[i, t] = True
            labels[i] = doc.label
            doc_ids.append(doc.id)
        batches.append(Batch(ids, wmask, smask, labels, doc_ids))
    return batches
