"""Joint supervised training, semi-supervised round-trip training, Adam,
and checkpoint selection by development-set mean Levenshtein distance."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import decoding
from .autodiff import Tape, add
from .data import (
    CharVocabulary,
    FeatureVocabulary,
    InflectionExample,
    encode_batch,
    make_batches,
)
from .evaluation import levenshtein
from .models import FeatureBundle, JointModel, save_checkpoint

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 64
    keep_prob: float = 0.5  # dropout keep probability at every site
    hidden_size: int = 128
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_updates: int = 20_000
    max_hours: float | None = None
    eval_interval: int = 500
    seed: int = 0
    mode: str = "full"  # "full" or "semi"
    semi_ratio: int = 1  # unlabeled batches per supervised batch in semi mode
    clip_norm: float | None = 5.0  # None disables clipping

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 < self.keep_prob <= 1.0:
            raise ValueError(f"keep_prob must be in (0, 1], got {self.keep_prob}")
        if self.eval_interval < 1:
            raise ValueError(f"eval_interval must be >= 1, got {self.eval_interval}")
        if self.mode not in ("full", "semi"):
            raise ValueError(f"mode must be 'full' or 'semi', got {self.mode!r}")


@dataclass
class CheckpointRecord:
    updates: int
    dev_edit_distance: float
    dev_accuracy: float
    path: str | None
    persisted: bool


class Adam:
    """Adam with bias correction, keyed by parameter name.

    Each parameter keeps its own timestep so that updates touching only a
    subset of parameters (the semi-supervised reconstruction step) leave the
    rest entirely untouched.
    """

    def __init__(
        self,
        params: dict,
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = dict(params)
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.t = {k: 0 for k in self.params}

    def update(self, grads: dict) -> bool:
        """Apply one update for every parameter present in ``grads``.

        If any gradient is non-finite the whole update is skipped (and
        logged), leaving parameters, moments, and timesteps unchanged.
        Returns whether the update was applied.
        """
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                logger.warning("skipping update: non-finite gradient for %s", name)
                return False
        for name, g in grads.items():
            p = self.params[name]
            self.t[name] += 1
            t = self.t[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            p.data = p.data - (self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)).astype(
                p.data.dtype
            )
        return True


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale all gradients in place so their global norm is at most max_norm.

    Returns the pre-clip global norm.
    """
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.square(g, dtype=np.float64)))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for name in grads:
            grads[name] = grads[name] * scale
    return norm


def _named_grads(model: JointModel, tape_grads: dict, skip: frozenset = frozenset()) -> dict:
    out = {}
    for name, param in model.parameters().items():
        if name in skip:
            continue
        g = tape_grads.get(param)
        if g is not None:
            out[name] = g
    return out


def joint_step(
    model: JointModel,
    batch,
    adam: Adam,
    rng: np.random.Generator,
    keep_prob: float = 0.5,
    clip_norm: float | None = 5.0,
    freeze: Sequence[str] = (),
) -> tuple[float, float]:
    """One fully supervised update on both directions jointly.

    The two losses are summed on a single tape, so the shared embedding
    table accumulates gradient contributions from both directions before the
    one Adam update.
    """
    if batch.size < 1:
        raise ValueError("joint_step: empty batch")
    masks_fwd, masks_bwd = model.sample_masks(rng, batch.size, keep_prob)
    with Tape() as tape:
        loss_fwd = model.forward_loss(batch, masks_fwd)
        loss_bwd = model.backward_loss(batch, masks_bwd)
        total = add(loss_fwd, loss_bwd)
    grads = _named_grads(model, tape.backward(total), frozenset(freeze))
    if clip_norm is not None:
        clip_gradients(grads, clip_norm)
    adam.update(grads)
    return float(loss_fwd.data), float(loss_bwd.data)


def semi_step(
    model: JointModel,
    forms: Sequence[str],
    adam: Adam,
    rng: np.random.Generator,
    keep_prob: float = 0.5,
    clip_norm: float | None = 5.0,
    analyze: Callable[[str], tuple[str, Sequence[str]]] | None = None,
) -> float:
    """One round-trip update from unlabeled inflected forms.

    Each form is greedily lemmatized and its features predicted by the
    backward model; both are treated as constants (no gradient flows through
    the discrete decode), and the forward model is trained to reconstruct
    the original form from them. Only forward parameters and the shared
    embeddings are touched.

    Fallbacks: an empty decoded lemma is replaced by the form itself; an
    empty predicted bundle by the single highest-probability feature token.

    ``analyze`` overrides the backward-model analysis (used by tests).
    """
    if not forms:
        raise ValueError("semi_step: empty batch")
    if analyze is None:
        analyze = lambda form: _analyze_form(model, form)
    pseudo = []
    for form in forms:
        lemma, tokens = analyze(form)
        if not lemma:
            lemma = form
        if not tokens:
            tokens = (_top_feature(model, form),)
        pseudo.append(InflectionExample(lemma=lemma, form=form, features=tuple(tokens)))
    batch = encode_batch(pseudo, model.char_vocab, model.feat_vocab, model.dtype)
    masks_fwd, _ = model.sample_masks(rng, batch.size, keep_prob)
    with Tape() as tape:
        loss = model.forward_loss(batch, masks_fwd)
    grads = _named_grads(model, tape.backward(loss))
    if clip_norm is not None:
        clip_gradients(grads, clip_norm)
    adam.update(grads)
    return float(loss.data)


def _analyze_form(model: JointModel, form: str) -> tuple[str, tuple[str, ...]]:
    decoded = decoding.greedy_decode(model, form, direction="backward")
    bundle = model.predict_features(model.char_vocab.encode(form))
    return decoded.text, bundle.tokens


def _top_feature(model: JointModel, form: str) -> str:
    probs = model.feature_probs(model.char_vocab.encode(form))
    best = 1 + int(np.argmax(probs[1:]))  # skip the reserved UNK slot
    return model.feat_vocab.tokens[best]


def evaluate_model(
    model: JointModel, examples: Sequence[InflectionExample]
) -> tuple[float, float]:
    """Greedy-decode a dataset; returns (accuracy percent, mean distance)."""
    exact = 0
    total_dist = 0
    for ex in examples:
        result = decoding.greedy_decode(model, ex.lemma, FeatureBundle.of(ex.features))
        exact += result.text == ex.form
        total_dist += levenshtein(result.text, ex.form)
    n = len(examples)
    return 100.0 * exact / n, total_dist / n


class CheckpointError(RuntimeError):
    """Persisting a checkpoint failed; training must stop."""


def evaluate_and_checkpoint(
    model: JointModel,
    dev_examples: Sequence[InflectionExample],
    history: list[CheckpointRecord],
    path,
    updates: int,
    extra_header: dict | None = None,
) -> CheckpointRecord:
    """Evaluate on the dev set and persist iff strictly better than any
    previous evaluation (ties keep the earlier checkpoint)."""
    accuracy, distance = evaluate_model(model, dev_examples)
    best = min((r.dev_edit_distance for r in history), default=None)
    persist = best is None or distance < best
    if persist:
        try:
            save_checkpoint(path, model, extra_header)
        except OSError as exc:
            raise CheckpointError(f"failed to persist checkpoint to {path}: {exc}") from exc
    record = CheckpointRecord(
        updates=updates,
        dev_edit_distance=distance,
        dev_accuracy=accuracy,
        path=str(path) if persist else None,
        persisted=persist,
    )
    history.append(record)
    return record


def _cycle_batches(examples, char_vocab, feat_vocab, batch_size, rng, dtype):
    while True:
        for batch in make_batches(examples, char_vocab, feat_vocab, batch_size, rng, dtype):
            yield batch


def _cycle_forms(forms: Sequence[str], batch_size: int, rng: np.random.Generator):
    while True:
        order = rng.permutation(len(forms))
        for start in range(0, len(forms), batch_size):
            yield [forms[i] for i in order[start : start + batch_size]]


def train(
    config: TrainConfig,
    train_examples: Sequence[InflectionExample],
    dev_examples: Sequence[InflectionExample],
    char_vocab: CharVocabulary,
    feat_vocab: FeatureVocabulary,
    out_dir,
    unlabeled_forms: Sequence[str] | None = None,
    echo: bool = True,
) -> CheckpointRecord:
    """Run the training loop and return the best checkpoint record.

    Writes ``model.ckpt`` (best parameters) and ``train.log`` (one
    tab-separated line per evaluation: updates, train loss, dev accuracy,
    dev mean Levenshtein) into ``out_dir``. The same lines go to standard
    output when ``echo`` is set.
    """
    if not train_examples:
        raise ValueError("train: empty training set")
    if not dev_examples:
        raise ValueError("train: empty development set")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "model.ckpt"
    log_path = out_dir / "train.log"

    rng = np.random.default_rng(config.seed)
    model = JointModel(
        char_vocab, feat_vocab, hidden_size=config.hidden_size, rng=rng
    )
    adam = Adam(
        model.parameters(),
        learning_rate=config.learning_rate,
        beta1=config.beta1,
        beta2=config.beta2,
        eps=config.eps,
    )
    supervised = _cycle_batches(
        train_examples, char_vocab, feat_vocab, config.batch_size, rng, model.dtype
    )
    unlabeled = None
    if config.mode == "semi":
        if not unlabeled_forms:
            logger.warning(
                "semi mode without an unlabeled source; falling back to the "
                "training-form column"
            )
            unlabeled_forms = [ex.form for ex in train_examples]
        unlabeled = _cycle_forms(list(unlabeled_forms), config.batch_size, rng)

    header = {"seed": config.seed, "mode": config.mode}
    history: list[CheckpointRecord] = []
    updates = 0
    window_losses: list[float] = []
    start_time = time.monotonic()

    def out_of_budget() -> bool:
        if updates >= config.max_updates:
            return True
        if config.max_hours is not None:
            return (time.monotonic() - start_time) >= config.max_hours * 3600.0
        return False

    with open(log_path, "w", encoding="utf-8") as log:

        def evaluate_now():
            record = evaluate_and_checkpoint(
                model, dev_examples, history, ckpt_path, updates, header
            )
            mean_loss = sum(window_losses) / len(window_losses) if window_losses else float("nan")
            window_losses.clear()
            line = (
                f"{record.updates}\t{mean_loss:.6f}\t{record.dev_accuracy:.2f}"
                f"\t{record.dev_edit_distance:.4f}"
            )
            log.write(line + "\n")
            log.flush()
            if echo:
                print(line)

        while not out_of_budget():
            batch = next(supervised)
            lf, lb = joint_step(
                model, batch, adam, rng, config.keep_prob, config.clip_norm
            )
            updates += 1
            window_losses.append((lf + lb) / batch.size)
            if updates % config.eval_interval == 0:
                evaluate_now()
            if unlabeled is not None:
                for _ in range(config.semi_ratio):
                    if out_of_budget():
                        break
                    forms = next(unlabeled)
                    loss = semi_step(
                        model, forms, adam, rng, config.keep_prob, config.clip_norm
                    )
                    updates += 1
                    window_losses.append(loss / len(forms))
                    if updates % config.eval_interval == 0:
                        evaluate_now()
        if not history or history[-1].updates != updates:
            evaluate_now()

    best = min(history, key=lambda r: (r.dev_edit_distance, r.updates))
    return CheckpointRecord(
        updates=best.updates,
        dev_edit_distance=best.dev_edit_distance,
        dev_accuracy=best.dev_accuracy,
        path=str(ckpt_path),
        persisted=True,
    )
