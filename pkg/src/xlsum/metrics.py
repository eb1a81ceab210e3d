"""Exact ROUGE-1/2/L with pluggable segmentation, plus corpus-level reports
bucketed by reference length. All functions are pure; F1 is the reported
variant throughout."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

WORD = "word"
CHAR = "char"

DEFAULT_BUCKETS: tuple[tuple[float, float], ...] = ((0, 10), (10, 20), (20, 40), (40, math.inf))


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float
    empty_input: bool = False


def _zero(empty: bool = True) -> RougeScore:
    return RougeScore(0.0, 0.0, 0.0, empty_input=empty)


def segment(text: str, mode) -> list[str]:
    """Split text into comparison units: words, characters, or via a callable
    (the hook for subword vocabularies)."""
    if callable(mode):
        return list(mode(text))
    if mode == WORD:
        return text.split()
    if mode == CHAR:
        return [c for c in text if not c.isspace()]
    raise ValueError(f"unknown segmentation mode: {mode!r}")


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _ngrams(units: Sequence[str], n: int) -> Counter:
    return Counter(tuple(units[i : i + n]) for i in range(len(units) - n + 1))


def rouge_n(candidate: str, reference: str, n: int, mode=WORD) -> RougeScore:
    """Clipped n-gram overlap F1; n must be 1 or 2."""
    if n not in (1, 2):
        raise ValueError(f"rouge_n supports n in {{1, 2}}, got {n}")
    cand = segment(candidate, mode)
    ref = segment(reference, mode)
    cand_counts = _ngrams(cand, n)
    ref_counts = _ngrams(ref, n)
    n_cand = sum(cand_counts.values())
    n_ref = sum(ref_counts.values())
    if n_cand == 0 or n_ref == 0:
        return _zero()
    overlap = sum(min(count, ref_counts[g]) for g, count in cand_counts.items())
    precision = overlap / n_cand
    recall = overlap / n_ref
    return RougeScore(precision, recall, _f1(precision, recall))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Longest common subsequence by the O(mn) dynamic program."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            if x == y:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str, mode=WORD) -> RougeScore:
    cand = segment(candidate, mode)
    ref = segment(reference, mode)
    if not cand or not ref:
        return _zero()
    lcs = lcs_length(cand, ref)
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    return RougeScore(precision, recall, _f1(precision, recall))


@dataclass(frozen=True)
class BucketRow:
    lo: float
    hi: float
    count: int
    rouge1: float
    rouge2: float
    rouge_l: float

    @property
    def label(self) -> str:
        hi = "inf" if math.isinf(self.hi) else f"{self.hi:g}"
        return f"[{self.lo:g},{hi})"


@dataclass(frozen=True)
class CorpusReport:
    rouge1: float
    rouge2: float
    rouge_l: float
    count: int
    buckets: tuple[BucketRow, ...]

    def as_text(self) -> str:
        lines = [f"{'bucket':>10} {'count':>6} {'R1':>8} {'R2':>8} {'RL':>8}"]
        rows = list(self.buckets) + [
            BucketRow(0, math.inf, self.count, self.rouge1, self.rouge2, self.rouge_l)
        ]
        for row in rows:
            label = "all" if row is rows[-1] else row.label
            lines.append(
                f"{label:>10} {row.count:>6d} {row.rouge1:>8.4f} {row.rouge2:>8.4f} {row.rouge_l:>8.4f}"
            )
        return "\n".join(lines) + "\n"

    def as_dict(self) -> dict:
        out = {
            "overall.count": self.count,
            "overall.rouge1_f1": self.rouge1,
            "overall.rouge2_f1": self.rouge2,
            "overall.rougeL_f1": self.rouge_l,
        }
        for row in self.buckets:
            key = row.label
            out[f"bucket.{key}.count"] = row.count
            out[f"bucket.{key}.rouge1_f1"] = row.rouge1
            out[f"bucket.{key}.rouge2_f1"] = row.rouge2
            out[f"bucket.{key}.rougeL_f1"] = row.rouge_l
        return out


def corpus_report(
    pairs: Iterable[tuple[str, str]],
    mode=WORD,
    length_buckets: Sequence[tuple[float, float]] = DEFAULT_BUCKETS,
) -> CorpusReport:
    """Mean ROUGE-1/2/L overall and per reference-length bucket.

    Bucket membership uses the reference length in segmentation units;
    edges are half-open [lo, hi).
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("corpus_report needs at least one (candidate, reference) pair")
    scored = []
    for cand, ref in pairs:
        r1 = rouge_n(cand, ref, 1, mode).f1
        r2 = rouge_n(cand, ref, 2, mode).f1
        rl = rouge_l(cand, ref, mode).f1
        scored.append((len(segment(ref, mode)), r1, r2, rl))

    def bucket_mean(rows, idx):
        # fsum: exactly rounded, so the report is invariant to input order
        return math.fsum(r[idx] for r in rows) / len(rows) if rows else 0.0

    buckets = []
    for lo, hi in length_buckets:
        rows = [r for r in scored if lo <= r[0] < hi]
        buckets.append(
            BucketRow(lo, hi, len(rows), bucket_mean(rows, 1), bucket_mean(rows, 2), bucket_mean(rows, 3))
        )
    return CorpusReport(
        rouge1=bucket_mean(scored, 1),
        rouge2=bucket_mean(scored, 2),
        rouge_l=bucket_mean(scored, 3),
        count=len(scored),
        buckets=tuple(buckets),
    )
