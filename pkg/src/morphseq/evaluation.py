"""Exact-match accuracy, mean Levenshtein distance, and report plumbing.

Distances are computed on Unicode codepoints of NFC-normalized strings,
matching the normalization applied at parse time. Reports format accuracy to
one decimal and distance to two, and can also be emitted as CSV.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .data import read_task1_file


def levenshtein(a: str, b: str) -> int:
    """Unit-cost insert/delete/substitute edit distance (two-row DP)."""
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


# Precomposed macron vowels and their short counterparts.
_MACRON_TABLE = str.maketrans("āēīōūȳĀĒĪŌŪȲ", "aeiouyAEIOUY")
_COMBINING_MACRON = "̄"
_VOWELS = set("aeiouyAEIOUY")


def strip_vowel_length(s: str) -> str:
    """Map macron-bearing vowels to their short counterparts.

    Handles both precomposed characters and a combining macron following a
    vowel; everything else is unchanged. Idempotent.
    """
    s = s.translate(_MACRON_TABLE)
    if _COMBINING_MACRON in s:
        out = []
        for ch in s:
            if ch == _COMBINING_MACRON and out and out[-1] in _VOWELS:
                continue
            out.append(ch)
        s = "".join(out)
    return s


@dataclass(frozen=True)
class LanguageScore:
    language: str
    accuracy: float  # percent
    edit_distance: float
    count: int


@dataclass(frozen=True)
class EvalReport:
    """Per-language scores plus unweighted macro-averages."""

    scores: tuple[LanguageScore, ...]

    @property
    def macro_accuracy(self) -> float:
        return sum(s.accuracy for s in self.scores) / len(self.scores)

    @property
    def macro_edit_distance(self) -> float:
        return sum(s.edit_distance for s in self.scores) / len(self.scores)

    def languages(self) -> tuple[str, ...]:
        return tuple(s.language for s in self.scores)

    def format_table(self) -> str:
        width = max(len("Language"), *(len(s.language) for s in self.scores))
        lines = [f"{'Language':<{width}}  Accuracy  Edit dist."]
        for s in self.scores:
            lines.append(f"{s.language:<{width}}  {s.accuracy:8.1f}  {s.edit_distance:10.2f}")
        if len(self.scores) > 1:
            lines.append(
                f"{'Average':<{width}}  {self.macro_accuracy:8.1f}  "
                f"{self.macro_edit_distance:10.2f}"
            )
        return "\n".join(lines)

    def to_csv_lines(self) -> list[str]:
        lines = ["language,accuracy,edit_distance"]
        for s in self.scores:
            lines.append(f"{s.language},{s.accuracy:.6f},{s.edit_distance:.6f}")
        return lines


def score_forms(golds: Sequence[str], preds: Sequence[str], language: str = "all") -> EvalReport:
    """Score aligned gold and predicted forms for one language."""
    if len(golds) != len(preds):
        raise ValueError(
            f"score: {len(golds)} gold lines but {len(preds)} predictions"
        )
    if not golds:
        raise ValueError("score: nothing to score")
    exact = sum(g == p for g, p in zip(golds, preds))
    total_dist = sum(levenshtein(g, p) for g, p in zip(golds, preds))
    row = LanguageScore(
        language=language,
        accuracy=100.0 * exact / len(golds),
        edit_distance=total_dist / len(golds),
        count=len(golds),
    )
    return EvalReport(scores=(row,))


def score_files(
    gold_path,
    pred_path,
    language: str | None = None,
    strip_macrons: bool = False,
) -> EvalReport:
    """Score a prediction file against a gold file (form columns compared)."""
    gold = read_task1_file(gold_path)
    pred = read_task1_file(pred_path)
    if len(gold) != len(pred):
        raise ValueError(
            f"score: {gold_path} has {len(gold)} lines but {pred_path} has {len(pred)}"
        )
    golds = [ex.form for ex in gold]
    preds = [ex.form for ex in pred]
    if strip_macrons:
        golds = [strip_vowel_length(g) for g in golds]
        preds = [strip_vowel_length(p) for p in preds]
    if language is None:
        language = Path(gold_path).stem
    return score_forms(golds, preds, language)


def merge_reports(reports: Iterable[EvalReport]) -> EvalReport:
    scores: list[LanguageScore] = []
    for report in reports:
        scores.extend(report.scores)
    if not scores:
        raise ValueError("merge_reports: nothing to merge")
    return EvalReport(scores=tuple(scores))


@dataclass(frozen=True)
class RunComparison:
    """Per-language accuracy deltas between two runs (b minus a)."""

    rows: tuple[tuple[str, float, float, float], ...]
    macro_a: float
    macro_b: float

    @property
    def macro_delta(self) -> float:
        return self.macro_b - self.macro_a

    def format_table(self) -> str:
        width = max(len("Language"), *(len(r[0]) for r in self.rows))
        lines = [f"{'Language':<{width}}  {'A':>7}  {'B':>7}  {'Delta':>7}"]
        for language, a, b, delta in self.rows:
            lines.append(f"{language:<{width}}  {a:7.1f}  {b:7.1f}  {delta:+7.1f}")
        lines.append(
            f"{'Average':<{width}}  {self.macro_a:7.1f}  {self.macro_b:7.1f}  "
            f"{self.macro_delta:+7.1f}"
        )
        return "\n".join(lines)


def compare_runs(report_a: EvalReport, report_b: EvalReport) -> RunComparison:
    """Per-language accuracy deltas between two evaluation reports."""
    by_lang_b = {s.language: s for s in report_b.scores}
    if set(by_lang_b) != set(report_a.languages()) or len(by_lang_b) != len(report_b.scores):
        raise ValueError("compare_runs: reports cover different language sets")
    rows = []
    for sa in report_a.scores:
        sb = by_lang_b[sa.language]
        rows.append((sa.language, sa.accuracy, sb.accuracy, sb.accuracy - sa.accuracy))
    return RunComparison(
        rows=tuple(rows),
        macro_a=report_a.macro_accuracy,
        macro_b=report_b.macro_accuracy,
    )
