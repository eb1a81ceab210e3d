"""Bilingual sentence similarity from averaged character-trigram embeddings.

One embedding table covers both languages; sentence vectors are the
L2-normalized mean of the trigram vectors, so cosine between a generated
target-language summary and the gold source-language summary is directly
comparable. Trained with a margin loss over a parallel corpus using in-batch
hardest negatives. Serves as the RL reward signal.
"""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .serialize import load_arrays, save_arrays

MODEL_FORMAT = "xlsum-similarity-model"
MODEL_VERSION = 1

BOUNDARY = "#"
UNK_TRIGRAM_ID = 0

_WS = re.compile(r"\s+")


def _words(sentence: str) -> list[str]:
    return [w for w in _WS.split(sentence.strip()) if w]


def word_trigrams(word: str) -> list[str]:
    padded = BOUNDARY + word + BOUNDARY
    return [padded[i : i + 3] for i in range(len(padded) - 2)]


class TrigramVocab:
    """Dense trigram -> row index map; index 0 is reserved for unknowns."""

    def __init__(self, trigrams: Sequence[str]):
        self.trigrams = list(trigrams)
        self._index = {t: i + 1 for i, t in enumerate(self.trigrams)}
        if len(self._index) != len(self.trigrams):
            raise ValueError("duplicate trigrams in vocabulary")

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "TrigramVocab":
        seen: set[str] = set()
        for text in texts:
            for word in _words(text):
                seen.update(word_trigrams(word))
        return cls(sorted(seen))

    @property
    def size(self) -> int:
        return len(self.trigrams) + 1  # +1 for the unknown row

    def id_of(self, trigram: str) -> int:
        return self._index.get(trigram, UNK_TRIGRAM_ID)


def featurize(vocab: TrigramVocab, sentence: str) -> Counter:
    """Multiset of trigram ids of the whitespace-normalized sentence, each
    word padded with boundary markers; unknown trigrams map to the unk id."""
    counts: Counter = Counter()
    for word in _words(sentence):
        counts.update(vocab.id_of(t) for t in word_trigrams(word))
    return counts


class SimilarityModel:
    def __init__(self, vocab: TrigramVocab, embeddings: np.ndarray):
        if embeddings.shape[0] != vocab.size:
            raise ValueError("embedding table does not match vocabulary size")
        if not np.all(np.isfinite(embeddings)):
            raise ValueError("embedding table contains non-finite values")
        self.vocab = vocab
        self.embeddings = embeddings

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def featurize(self, sentence: str) -> Counter:
        return featurize(self.vocab, sentence)

    def embed(self, sentence: str) -> np.ndarray:
        """Unit-norm mean of known-trigram embeddings; the zero vector marks
        degenerate (empty or all-unknown) input."""
        counts = self.featurize(sentence)
        total = 0
        vec = np.zeros(self.dim)
        for tid, count in counts.items():
            if tid == UNK_TRIGRAM_ID:
                continue
            vec += count * self.embeddings[tid]
            total += count
        if total == 0:
            return np.zeros(self.dim)
        vec /= total
        norm = np.linalg.norm(vec)
        if norm < 1e-12:
            return np.zeros(self.dim)
        return vec / norm

    def degenerate(self, sentence: str) -> bool:
        return not self.embed(sentence).any()

    def save(self, path: str) -> None:
        header = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "trigrams": self.vocab.trigrams,
        }
        save_arrays(path, header, {"embeddings": self.embeddings})

    @classmethod
    def load(cls, path: str) -> "SimilarityModel":
        header, arrays = load_arrays(path)
        if header.get("format") != MODEL_FORMAT:
            raise ValueError(f"not a {MODEL_FORMAT} file: {path}")
        return cls(TrigramVocab(header["trigrams"]), arrays["embeddings"])


def xsim_score(model: SimilarityModel, a: str, b: str) -> float:
    """Cosine similarity of the two sentence embeddings, in [-1, 1];
    degenerate inputs score 0."""
    va, vb = model.embed(a), model.embed(b)
    if not va.any() or not vb.any():
        return 0.0
    return float(np.clip(va @ vb, -1.0, 1.0))


@dataclass
class SimilarityConfig:
    dim: int = 64
    margin: float = 0.4
    batch_size: int = 64
    epochs: int = 8
    lr: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1 or self.batch_size < 2 or self.epochs < 1:
            raise ValueError("degenerate similarity training config")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")


def _count_matrix(vocab: TrigramVocab, counters: Sequence[Counter]) -> np.ndarray:
    mat = np.zeros((len(counters), vocab.size))
    for row, counts in enumerate(counters):
        for tid, count in counts.items():
            if tid != UNK_TRIGRAM_ID:
                mat[row, tid] += count
    return mat


def margin_batch_loss(emb: ad.Tensor, src_counts: np.ndarray, tgt_counts: np.ndarray, margin: float) -> ad.Tensor:
    """Hinge loss max(0, margin - cos(s_i, t_i) + cos(s_i, t_neg)) with the
    hardest in-batch negative per row. Count rows must have no zero rows."""
    b = src_counts.shape[0]

    def unit_rows(counts: np.ndarray) -> ad.Tensor:
        raw = ad.matmul(ad.Tensor(counts), emb)
        norms = ad.sqrt(ad.sum_(raw * raw, axis=1, keepdims=True))
        return raw / norms

    s = unit_rows(src_counts)
    t = unit_rows(tgt_counts)
    sim = ad.matmul(s, ad.transpose(t))
    off_diag = sim.data.copy()
    np.fill_diagonal(off_diag, -np.inf)
    hardest = off_diag.argmax(axis=1)
    eye = np.eye(b)
    neg_mask = np.zeros((b, b))
    neg_mask[np.arange(b), hardest] = 1.0
    pos = ad.sum_(sim * ad.Tensor(eye), axis=1)
    neg = ad.sum_(sim * ad.Tensor(neg_mask), axis=1)
    return ad.mean(ad.relu(margin - pos + neg))


def train_similarity(
    parallel: Sequence[tuple[str, str]], config: SimilarityConfig = SimilarityConfig()
) -> tuple[SimilarityModel, list[float]]:
    """Fit the trigram table on a parallel corpus; returns the model and the
    per-batch loss trace."""
    pairs = [(s, t) for s, t in parallel if _words(s) and _words(t)]
    if len(pairs) < 2:
        raise ValueError("train_similarity needs at least 2 non-empty parallel pairs")
    vocab = TrigramVocab.from_texts(text for pair in pairs for text in pair)
    rng = np.random.default_rng([config.seed, 0x51D])
    emb = ad.parameter(rng.normal(0.0, 0.1, size=(vocab.size, config.dim)))
    emb.data[UNK_TRIGRAM_ID] = 0.0

    src_feats = [featurize(vocab, s) for s, _ in pairs]
    tgt_feats = [featurize(vocab, t) for _, t in pairs]

    opt = ad.Adam(lr=config.lr)
    trace: list[float] = []
    order_rng = np.random.default_rng([config.seed, 0x0DE])
    for _ in range(config.epochs):
        order = order_rng.permutation(len(pairs))
        for start in range(0, len(pairs) - 1, config.batch_size):
            batch = order[start : start + config.batch_size]
            if len(batch) < 2:
                continue
            src_counts = _count_matrix(vocab, [src_feats[i] for i in batch])
            tgt_counts = _count_matrix(vocab, [tgt_feats[i] for i in batch])
            loss = margin_batch_loss(emb, src_counts, tgt_counts, config.margin)
            opt.zero_grad([emb])
            ad.backward(loss)
            opt.step([emb])
            emb.data[UNK_TRIGRAM_ID] = 0.0  # unknown row stays inert
            trace.append(loss.item())
    return SimilarityModel(vocab, emb.data), trace
