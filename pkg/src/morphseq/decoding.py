"""Greedy and beam-search decoding with optional model ensembling.

Beam policy: at each step every frontier hypothesis is expanded with all
tokens, candidates are ranked by total log-probability (ties broken by the
lexicographically smaller token sequence), finished candidates that rank
within the top ``width`` retire into a pool, and the frontier refills with
the best ``width`` unfinished candidates. The search stops once the best
frontier score falls strictly below the best pooled score, because extending
a hypothesis can only lower its total log-probability. With width 1 this
reduces exactly to greedy argmax decoding.

The final answer is the pooled hypothesis with the highest total
log-probability (no length normalization); if nothing finished within
``max_len`` steps the best unfinished hypothesis is returned, flagged.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import BOS_ID, EOS_ID, read_covered_file, write_predictions
from .models import FeatureBundle, JointModel

# Generous slack beyond the source length for the default decode limit.
MAX_LEN_SLACK = 50


@dataclass(frozen=True)
class Hypothesis:
    """A partial decode: emitted tokens, their total log-probability, and
    the recurrent state to expand from. ``finished`` iff the last token is
    EOS; the log-probability never increases as tokens are appended."""

    tokens: tuple[int, ...]
    logprob: float
    state: object
    finished: bool


@dataclass(frozen=True)
class DecodeResult:
    """A finished decode. ``tokens`` includes the terminating EOS unless the
    search was truncated at ``max_len`` (then ``truncated`` is set)."""

    text: str
    tokens: tuple[int, ...]
    logprob: float
    truncated: bool


class Ensemble:
    """Several models decoded jointly; the per-step score is the arithmetic
    mean of the members' log-probabilities. All members must share both
    vocabularies index-for-index."""

    def __init__(self, models: Sequence[JointModel]):
        if not models:
            raise ValueError("ensemble: need at least one model")
        first = models[0]
        for other in models[1:]:
            if other.char_vocab.chars != first.char_vocab.chars:
                raise ValueError("ensemble: members have different character vocabularies")
            if other.feat_vocab.tokens != first.feat_vocab.tokens:
                raise ValueError("ensemble: members have different feature vocabularies")
        self.models = list(models)
        self.char_vocab = first.char_vocab
        self.feat_vocab = first.feat_vocab

    @property
    def vocab_size(self) -> int:
        return len(self.char_vocab)

    def start(self, source_ids, features, direction: str) -> tuple:
        return tuple(m.start(source_ids, features, direction) for m in self.models)

    def step(self, states: tuple, prev_id: int) -> tuple[np.ndarray, tuple]:
        outs = [m.step(s, prev_id) for m, s in zip(self.models, states)]
        logprobs = np.mean([lp for lp, _ in outs], axis=0)
        return logprobs, tuple(s for _, s in outs)


def _as_ensemble(model) -> Ensemble:
    return model if isinstance(model, Ensemble) else Ensemble([model])


def _prepare(ens: Ensemble, source: str, features, direction: str, max_len):
    source_ids = ens.char_vocab.encode(source)
    if features is not None and not isinstance(features, FeatureBundle):
        features = FeatureBundle.of(features)
    if max_len is None:
        max_len = len(source_ids) + MAX_LEN_SLACK
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    return source_ids, features, max_len


def _result(ens: Ensemble, tokens: tuple[int, ...], logprob: float, truncated: bool) -> DecodeResult:
    return DecodeResult(
        text=ens.char_vocab.decode(tokens),
        tokens=tokens,
        logprob=logprob,
        truncated=truncated,
    )


def greedy_decode(
    model,
    source: str,
    features=None,
    max_len: int | None = None,
    direction: str = "forward",
) -> DecodeResult:
    """Argmax decoding until EOS or ``max_len`` tokens.

    Ties take the lowest token id. Deterministic for a fixed model and input.
    """
    ens = _as_ensemble(model)
    source_ids, features, max_len = _prepare(ens, source, features, direction, max_len)
    states = ens.start(source_ids, features, direction)
    tokens: list[int] = []
    total = 0.0
    for _ in range(max_len):
        logprobs, states = ens.step(states, tokens[-1] if tokens else BOS_ID)
        tok = int(np.argmax(logprobs))
        tokens.append(tok)
        total += float(logprobs[tok])
        if tok == EOS_ID:
            return _result(ens, tuple(tokens), total, truncated=False)
    return _result(ens, tuple(tokens), total, truncated=True)


def beam_decode(
    model,
    source: str,
    features=None,
    width: int = 10,
    max_len: int | None = None,
    direction: str = "forward",
) -> DecodeResult:
    """Beam search over summed per-step log-probabilities (see module doc)."""
    if width < 1:
        raise ValueError(f"beam width must be >= 1, got {width}")
    ens = _as_ensemble(model)
    source_ids, features, max_len = _prepare(ens, source, features, direction, max_len)
    start = ens.start(source_ids, features, direction)
    frontier = [Hypothesis(tokens=(), logprob=0.0, state=start, finished=False)]
    pool: list[Hypothesis] = []
    for _ in range(max_len):
        candidates: list[Hypothesis] = []
        for hyp in frontier:
            prev = hyp.tokens[-1] if hyp.tokens else BOS_ID
            logprobs, state = ens.step(hyp.state, prev)
            for tok in range(len(logprobs)):
                candidates.append(
                    Hypothesis(
                        tokens=hyp.tokens + (tok,),
                        logprob=hyp.logprob + float(logprobs[tok]),
                        state=state,
                        finished=tok == EOS_ID,
                    )
                )
        candidates.sort(key=lambda h: (-h.logprob, h.tokens))
        pool.extend(h for h in candidates[:width] if h.finished)
        frontier = [h for h in candidates if not h.finished][:width]
        if not frontier:
            break
        if pool:
            best_pool = max(h.logprob for h in pool)
            if frontier[0].logprob < best_pool:
                break  # no unfinished hypothesis can beat the pool anymore
    if pool:
        best = min(pool, key=lambda h: (-h.logprob, h.tokens))
        return _result(ens, best.tokens, best.logprob, truncated=False)
    best = frontier[0]  # nothing finished within max_len
    return _result(ens, best.tokens, best.logprob, truncated=True)


def predict_file(model, input_path, output_path, width: int = 10) -> int:
    """Decode every line of a task-1 (possibly covered) file.

    Writes one three-column line per input line, same order, with the form
    column filled by the prediction. Returns the number of lines written.
    """
    ens = _as_ensemble(model)
    rows = read_covered_file(input_path)
    out = []
    for lemma, features in rows:
        result = beam_decode(ens, lemma, FeatureBundle.of(features), width=width)
        out.append((lemma, result.text, features))
    write_predictions(output_path, out)
    return len(out)
