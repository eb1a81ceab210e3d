"""Everything upstream of training: deterministic synthetic bilingual corpus
generation, pseudo-parallel corpus construction with round-trip ROUGE
filtering, sentence-separator insertion, TextRank keywords, salience labels,
hard-extraction ablation input, and word/char tokenization.

Text conventions used throughout the package:
  * a sentence is a space-joined token sequence
  * articles/summaries join sentences with a standalone period token,
    e.g. ``"foo bar . baz qux"``
  * the two synthetic "languages" use disjoint surfaces (lowercase vs
    uppercase words) linked by a bijective lexicon
"""
from __future__ import annotations

import dataclasses
import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .metrics import rouge_l
from .serialize import write_text_atomic

PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN = "<pad>", "<bos>", "<eos>", "<unk>"
SEP_TOKEN, SUM_TOKEN, TRANS_TOKEN = "<sep>", "<sum>", "<trans>"
RESERVED_TOKENS = (PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN, SEP_TOKEN, SUM_TOKEN, TRANS_TOKEN)
PAD_ID, BOS_ID, EOS_ID, UNK_ID, SEP_ID, SUM_ID, TRANS_ID = range(7)
N_RESERVED = len(RESERVED_TOKENS)

SENTENCE_END_TOKENS = (".", "!", "?")

SRC2TGT = "src2tgt"
TGT2SRC = "tgt2src"


def split_sentences(text: str) -> list[str]:
    """Sentence boundaries are explicit in synthetic text (standalone period
    tokens); for natural text this is naive punctuation splitting."""
    parts = re.split(r"[.!?]+", text)
    return [p.strip() for p in parts if p.strip()]


def join_sentences(sentences: Sequence[str]) -> str:
    return " . ".join(sentences)


# ---------------------------------------------------------------------------
# examples and JSONL


@dataclass
class Example:
    """One training record. ``salience`` positions index the separator-inserted
    tokenization of ``article_src`` (see ``insert_separators``)."""

    id: int
    article_src: str
    summary_src: str
    pseudo_summary_tgt: str | None = None
    salience: list[tuple[int, float]] | None = None
    unit_mode: str = "sentence"

    def to_json(self) -> str:
        record = {
            "id": self.id,
            "article_src": self.article_src,
            "summary_src": self.summary_src,
            "pseudo_summary_tgt": self.pseudo_summary_tgt,
            "salience": None if self.salience is None else [[int(p), float(q)] for p, q in self.salience],
            "unit_mode": self.unit_mode,
        }
        return json.dumps(record, sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "Example":
        rec = json.loads(line)
        sal = rec.get("salience")
        return cls(
            id=rec["id"],
            article_src=rec["article_src"],
            summary_src=rec["summary_src"],
            pseudo_summary_tgt=rec.get("pseudo_summary_tgt"),
            salience=None if sal is None else [(int(p), float(q)) for p, q in sal],
            unit_mode=rec.get("unit_mode", "sentence"),
        )


def write_examples(path: str, examples: Iterable[Example]) -> None:
    write_text_atomic(path, "".join(ex.to_json() + "\n" for ex in examples))


def read_examples(path: str) -> list[Example]:
    with open(path, encoding="utf-8") as fh:
        return [Example.from_json(line) for line in fh if line.strip()]


def write_parallel(path: str, pairs: Iterable[tuple[str, str]]) -> None:
    lines = (json.dumps({"src": s, "tgt": t}, sort_keys=True, ensure_ascii=False) + "\n" for s, t in pairs)
    write_text_atomic(path, "".join(lines))


def read_parallel(path: str) -> list[tuple[str, str]]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                pairs.append((rec["src"], rec["tgt"]))
    return pairs


# ---------------------------------------------------------------------------
# synthetic corpus


@dataclass
class SyntheticSpec:
    """Generator settings; identical spec + n means byte-identical output."""

    seed: int = 0
    vocab_size: int = 50
    sentences_per_article: tuple[int, int] = (6, 12)
    sentence_length: tuple[int, int] = (4, 9)
    salient_fraction: float = 0.3
    lexicon: dict[str, str] | None = None
    mt_noise_rate: float = 0.1

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        for lo, hi in (self.sentences_per_article, self.sentence_length):
            if not (1 <= lo <= hi):
                raise ValueError("degenerate range in synthetic spec")
        if not 0.0 < self.salient_fraction <= 1.0:
            raise ValueError("salient_fraction must be in (0, 1]")
        if not 0.0 <= self.mt_noise_rate <= 1.0:
            raise ValueError("mt_noise_rate must be in [0, 1]")

    def resolve_lexicon(self) -> dict[str, str]:
        if self.lexicon is None:
            return default_lexicon(self.seed, self.vocab_size)
        values = set(self.lexicon.values())
        if len(values) != len(self.lexicon):
            raise ValueError("lexicon must be a bijection")
        return self.lexicon


def _make_words(rng: np.random.Generator, count: int, alphabet: str) -> list[str]:
    words: list[str] = []
    seen = set()
    letters = list(alphabet)
    while len(words) < count:
        length = int(rng.integers(3, 7))
        word = "".join(letters[int(rng.integers(len(letters)))] for _ in range(length))
        if word not in seen:
            seen.add(word)
            words.append(word)
    return words


def default_lexicon(seed: int, vocab_size: int) -> dict[str, str]:
    """Bijective map between two disjoint scripts (lowercase vs uppercase)."""
    rng = np.random.default_rng([seed, 0xC0DE])
    src = _make_words(rng, vocab_size, "abcdefghijklmnopqrstuvwxyz")
    tgt = _make_words(rng, vocab_size, "ABCDEFGHIJKLMNOPQRSTUVWXYZ")
    return dict(zip(src, tgt))


def generate_synthetic(spec: SyntheticSpec, n: int) -> tuple[list[Example], list[tuple[str, str]]]:
    """Build ``n`` articles plus an MT parallel corpus of fresh sentences.

    Each article marks its salient sentences by containing a designated topic
    token (the first lexicon entry); the source summary is the in-order
    concatenation of those sentences. MT pairs are independent sentences with
    their noise-free lexicon translations.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    lexicon = spec.resolve_lexicon()
    src_words = list(lexicon)
    topic = src_words[0]
    body_words = src_words[1:]
    rng = np.random.default_rng([spec.seed, 1])

    def sample_sentence(words: list[str]) -> list[str]:
        lo, hi = spec.sentence_length
        length = int(rng.integers(lo, hi + 1))
        return [words[int(rng.integers(len(words)))] for _ in range(length)]

    examples: list[Example] = []
    parallel: list[tuple[str, str]] = []
    for idx in range(n):
        lo, hi = spec.sentences_per_article
        n_sents = int(rng.integers(lo, hi + 1))
        n_salient = max(1, round(spec.salient_fraction * n_sents))
        salient = set(rng.choice(n_sents, size=n_salient, replace=False).tolist())
        sentences = []
        for s in range(n_sents):
            toks = sample_sentence(body_words)
            if s in salient:
                # sentence-initial marker keeps the selection rule learnable
                # at desk scale while leaving the round-trip oracle exact
                toks.insert(0, topic)
            sentences.append(" ".join(toks))
        summary = join_sentences([sentences[s] for s in sorted(salient)])
        examples.append(Example(id=idx, article_src=join_sentences(sentences), summary_src=summary))
        for _ in range(n_sents):
            sent = " ".join(sample_sentence(src_words))
            parallel.append((sent, toy_translate(lexicon, sent, SRC2TGT)))
    return examples, parallel


# ---------------------------------------------------------------------------
# toy machine translation


def _swap_adjacent(tokens: list[str]) -> list[str]:
    out = list(tokens)
    for i in range(0, len(out) - 1, 2):
        out[i], out[i + 1] = out[i + 1], out[i]
    return out


def toy_translate(
    lexicon: dict[str, str],
    text: str,
    direction: str,
    noise_rate: float = 0.0,
    seed: int | Sequence[int] = 0,
    reorder: bool = True,
) -> str:
    """Token-wise lexicon mapping with adjacent-swap reordering and optional
    uniform substitution noise. Deterministic in ``seed``; out-of-lexicon
    tokens map to the unk token; sentence delimiters pass through."""
    if direction == SRC2TGT:
        mapping = lexicon
    elif direction == TGT2SRC:
        mapping = {v: k for k, v in lexicon.items()}
    else:
        raise ValueError(f"direction must be {SRC2TGT!r} or {TGT2SRC!r}, got {direction!r}")
    out_vocab = sorted(mapping.values())
    rng = np.random.default_rng(seed) if noise_rate > 0.0 else None
    out_sentences = []
    for sentence in split_sentences(text):
        toks = [mapping.get(t, UNK_TOKEN) for t in sentence.split()]
        if reorder:
            toks = _swap_adjacent(toks)
        if rng is not None:
            for i in range(len(toks)):
                if rng.random() < noise_rate:
                    toks[i] = out_vocab[int(rng.integers(len(out_vocab)))]
        out_sentences.append(" ".join(toks))
    return join_sentences(out_sentences)


@dataclass
class ToyTranslator:
    """Seeded translator standing in for the MT system of the pseudo-corpus
    construction step; per-call keys keep example-level determinism."""

    lexicon: dict[str, str]
    noise_rate: float = 0.1
    seed: int = 0

    def translate(self, text: str, direction: str, key: int = 0) -> str:
        leg = 0 if direction == SRC2TGT else 1
        return toy_translate(
            self.lexicon, text, direction, noise_rate=self.noise_rate, seed=[self.seed, key, leg]
        )


@dataclass(frozen=True)
class FilterReport:
    kept: int
    dropped: int
    tau: float


def build_pseudo_corpus(
    examples: Sequence[Example], translator: ToyTranslator, tau: float
) -> tuple[list[Example], FilterReport]:
    """Round-trip filtering: translate the source summary, translate it back,
    keep the example iff reconstruction ROUGE-L F1 >= tau."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must be in [0, 1]")
    kept: list[Example] = []
    dropped = 0
    for i, ex in enumerate(examples):
        pseudo = translator.translate(ex.summary_src, SRC2TGT, key=ex.id if ex.id is not None else i)
        back = translator.translate(pseudo, TGT2SRC, key=ex.id if ex.id is not None else i)
        if rouge_l(back, ex.summary_src).f1 >= tau:
            kept.append(dataclasses.replace(ex, pseudo_summary_tgt=pseudo))
        else:
            dropped += 1
    return kept, FilterReport(kept=len(kept), dropped=dropped, tau=tau)


# ---------------------------------------------------------------------------
# separators


def insert_separators(article: str) -> tuple[str, list[int]]:
    """Insert one separator token before each sentence; returned positions
    index the separators in the resulting tokenization. Stripping the
    separators recovers the original tokenization exactly."""
    tokens = article.split()
    if not tokens:
        return "", []
    out: list[str] = []
    positions: list[int] = []
    at_start = True
    for tok in tokens:
        if at_start:
            positions.append(len(out))
            out.append(SEP_TOKEN)
            at_start = False
        out.append(tok)
        if tok[-1] in SENTENCE_END_TOKENS:
            at_start = True
    return " ".join(out), positions


# ---------------------------------------------------------------------------
# TextRank


def _is_wordlike(token: str) -> bool:
    return any(c.isalnum() for c in token)


def textrank_scores(
    text: str, window: int = 4, damping: float = 0.85, tol: float = 1e-6, max_iter: int = 100
) -> tuple[dict[str, float], int, list[float]]:
    """Undirected co-occurrence TextRank. Returns (scores, iterations, deltas);
    deltas are the per-iteration max score changes."""
    if window < 2:
        raise ValueError("window must be >= 2")
    tokens = [t for t in text.split() if _is_wordlike(t)]
    if not tokens:
        return {}, 0, []
    adj: dict[str, set[str]] = {t: set() for t in tokens}
    for i, tok in enumerate(tokens):
        for j in range(i + 1, min(i + window, len(tokens))):
            other = tokens[j]
            if other != tok:
                adj[tok].add(other)
                adj[other].add(tok)
    scores = {t: 1.0 for t in adj}
    deltas: list[float] = []
    iterations = 0
    for iterations in range(1, max_iter + 1):
        new_scores = {}
        for v in adj:
            pull = sum(scores[u] / len(adj[u]) for u in adj[v])
            new_scores[v] = (1.0 - damping) + damping * pull
        delta = max(abs(new_scores[v] - scores[v]) for v in adj)
        deltas.append(delta)
        scores = new_scores
        if delta < tol:
            break
    return scores, iterations, deltas


def textrank_keywords(
    text: str, window: int = 4, damping: float = 0.85, tol: float = 1e-6, max_iter: int = 100
) -> list[tuple[str, float]]:
    """Keywords ranked by TextRank score, ties broken lexicographically."""
    scores, _, _ = textrank_scores(text, window=window, damping=damping, tol=tol, max_iter=max_iter)
    return sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))


# ---------------------------------------------------------------------------
# salience labels and hard extraction


def make_salience_labels(example: Example, mode: str, teacher=None, window: int = 4) -> list[tuple[int, float]]:
    """Per-unit inclusion targets for the distillation objective.

    Sentence mode: one probability per separator position, from the teacher.
    Keyword mode: 1.0 for keywords appearing in the source summary, else 0.0,
    anchored at each keyword's first occurrence in the separator-inserted
    tokenization.
    """
    sep_text, sep_positions = insert_separators(example.article_src)
    if mode == "sentence":
        if teacher is None:
            raise ValueError("sentence mode requires a teacher model")
        probs = teacher.predict_sentence_probs(example.article_src)
        if len(probs) != len(sep_positions):
            raise ValueError("teacher returned wrong number of sentence probabilities")
        return [(pos, float(q)) for pos, q in zip(sep_positions, probs)]
    if mode == "keyword":
        keywords = textrank_keywords(example.article_src, window=window)
        summary_tokens = set(example.summary_src.split())
        tokens = sep_text.split()
        first_pos = {}
        for i, tok in enumerate(tokens):
            if tok not in first_pos:
                first_pos[tok] = i
        labels = [(first_pos[kw], 1.0 if kw in summary_tokens else 0.0) for kw, _ in keywords]
        return sorted(labels)
    raise ValueError(f"unknown salience mode: {mode!r}")


def hard_extract_top_k(example: Example, teacher, k: int) -> str:
    """The hard-selection ablation: keep the k most salient sentences (by
    teacher probability, earlier sentence wins ties) in original order."""
    if k < 1:
        raise ValueError("k must be >= 1")
    sentences = split_sentences(example.article_src)
    if len(sentences) <= k:
        return example.article_src
    probs = teacher.predict_sentence_probs(example.article_src)
    ranked = sorted(range(len(sentences)), key=lambda i: (-probs[i], i))[:k]
    return join_sentences([sentences[i] for i in sorted(ranked)])


# ---------------------------------------------------------------------------
# tokenizer


@dataclass
class Tokenizer:
    """Word-level (default) or character-level tokenizer with reserved ids.

    encode/decode are inverses on in-vocabulary text; reserved ids are fixed
    and never assigned to corpus tokens.
    """

    vocab: list[str]
    mode: str = "word"
    _index: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.mode not in ("word", "char"):
            raise ValueError(f"unknown tokenizer mode: {self.mode!r}")
        if tuple(self.vocab[: len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
            raise ValueError("vocabulary must start with the reserved tokens")
        self._index = {tok: i for i, tok in enumerate(self.vocab)}
        if len(self._index) != len(self.vocab):
            raise ValueError("vocabulary contains duplicates")

    @classmethod
    def from_texts(cls, texts: Iterable[str], mode: str = "word") -> "Tokenizer":
        units: set[str] = set()
        for text in texts:
            units.update(text.split() if mode == "word" else list(text))
        units -= set(RESERVED_TOKENS)
        return cls(vocab=list(RESERVED_TOKENS) + sorted(units), mode=mode)

    @property
    def size(self) -> int:
        return len(self.vocab)

    def units(self, text: str) -> list[str]:
        return text.split() if self.mode == "word" else list(text)

    def encode(self, text: str) -> list[int]:
        return [self._index.get(u, UNK_ID) for u in self.units(text)]

    def decode(self, ids: Sequence[int], keep_reserved: bool = False) -> str:
        toks = []
        for i in ids:
            tok = self.vocab[int(i)]
            if not keep_reserved and int(i) < len(RESERVED_TOKENS):
                continue
            toks.append(tok)
        return (" " if self.mode == "word" else "").join(toks)
