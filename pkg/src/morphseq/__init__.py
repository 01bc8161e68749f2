"""Character-level morphological inflection toolkit.

Attentional LSTM encoder-decoder models for inflection (lemma + features ->
form) and the reverse analysis direction, trained jointly on shared character
embeddings, with optional semi-supervised round-trip training, beam-search
ensembling, and a TSV evaluation harness.
"""

__version__ = "0.1.0"

from .autodiff import Tape, Tensor, grad_check
from .data import (
    CharVocabulary,
    FeatureVocabulary,
    InflectionExample,
    build_vocabs,
    make_batches,
    parse_task1_line,
    read_task1_file,
)
from .decoding import Ensemble, beam_decode, greedy_decode, predict_file
from .evaluation import EvalReport, compare_runs, levenshtein, score_files, strip_vowel_length
from .models import FeatureBundle, JointModel, load_checkpoint, save_checkpoint
from .training import Adam, CheckpointRecord, TrainConfig, train

__all__ = [
    "__version__",
    "Tape",
    "Tensor",
    "grad_check",
    "CharVocabulary",
    "FeatureVocabulary",
    "InflectionExample",
    "build_vocabs",
    "make_batches",
    "parse_task1_line",
    "read_task1_file",
    "Ensemble",
    "beam_decode",
    "greedy_decode",
    "predict_file",
    "EvalReport",
    "compare_runs",
    "levenshtein",
    "score_files",
    "strip_vowel_length",
    "FeatureBundle",
    "JointModel",
    "load_checkpoint",
    "save_checkpoint",
    "Adam",
    "CheckpointRecord",
    "TrainConfig",
    "train",
]
