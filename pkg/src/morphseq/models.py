"""Forward (inflection) and backward (lemmatization + analysis) models.

Both directions are attentional LSTM encoder-decoders over one shared
character embedding table; all other parameters are direction-private. The
forward decoder is conditioned on an encoded feature vector at every
timestep. The backward model does not see features; instead it predicts them
from the final encoder state through a sigmoid head.

Conventions fixed here (and recorded in checkpoint headers):
  * packed LSTM gate order i, f, g, o;
  * decoder initial state = encoder final (h, c);
  * output projection reads the decoder hidden state only;
  * dropout sites: LSTM inputs, recurrent hidden states, projection input.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import layers
from .data import (
    BOS_ID,
    EOS_ID,
    CharVocabulary,
    EncodedBatch,
    FeatureVocabulary,
)

CHECKPOINT_MAGIC = b"MORPHSEQ1\n"

MODEL_FLAGS = {
    "gate_order": "ifgo",
    "decoder_init": "encoder_final",
    "output_projection_input": "decoder_hidden",
    "feature_conditioning": "every_step",
    "attention": "additive",
}


@dataclass(frozen=True)
class FeatureBundle:
    """A set of morphological feature tokens, order-insensitive."""

    tokens: tuple[str, ...]

    @classmethod
    def of(cls, tokens) -> "FeatureBundle":
        return cls(tuple(sorted(set(tokens))))

    def __bool__(self) -> bool:
        return bool(self.tokens)


@dataclass
class DirectionParams:
    """Parameters of one direction. ``feat_w``/``feat_b`` encode the feature
    bundle for the forward model and predict it for the backward model."""

    encoder: layers.LstmParams
    decoder: layers.LstmParams
    attention: layers.AttentionParams
    feat_w: ad.Tensor
    feat_b: ad.Tensor
    out_w: ad.Tensor  # (hidden, |V_char|)
    out_b: ad.Tensor  # (|V_char|,)


@dataclass
class DecodeState:
    """Inference-time decoder state plus the per-input encoder cache."""

    direction: str
    h: ad.Tensor
    c: ad.Tensor
    h_enc: ad.Tensor
    enc_proj: ad.Tensor
    enc_mask: np.ndarray
    fenc: ad.Tensor | None


class JointModel:
    """The forward and backward models with their shared embedding table."""

    def __init__(
        self,
        char_vocab: CharVocabulary,
        feat_vocab: FeatureVocabulary,
        hidden_size: int = 128,
        rng: np.random.Generator | None = None,
        dtype=np.float32,
    ):
        if rng is None:
            rng = np.random.default_rng(0)
        self.char_vocab = char_vocab
        self.feat_vocab = feat_vocab
        self.hidden_size = hidden_size
        self.dtype = dtype
        v, f, h = len(char_vocab), len(feat_vocab), hidden_size
        self.embeddings = layers.uniform_init(rng, (v, h), dtype=dtype)
        self.fwd = DirectionParams(
            encoder=layers.init_lstm(rng, h, h, dtype),
            decoder=layers.init_lstm(rng, 3 * h, h, dtype),
            attention=layers.init_attention(rng, h, dtype),
            feat_w=layers.uniform_init(rng, (f, h), dtype=dtype),
            feat_b=ad.Tensor(np.zeros(h, dtype=dtype)),
            out_w=layers.uniform_init(rng, (h, v), dtype=dtype),
            out_b=ad.Tensor(np.zeros(v, dtype=dtype)),
        )
        self.bwd = DirectionParams(
            encoder=layers.init_lstm(rng, h, h, dtype),
            decoder=layers.init_lstm(rng, 2 * h, h, dtype),
            attention=layers.init_attention(rng, h, dtype),
            feat_w=layers.uniform_init(rng, (h, f), dtype=dtype),
            feat_b=ad.Tensor(np.zeros(f, dtype=dtype)),
            out_w=layers.uniform_init(rng, (h, v), dtype=dtype),
            out_b=ad.Tensor(np.zeros(v, dtype=dtype)),
        )

    # ------------------------------------------------------------------
    # parameter bookkeeping

    def parameters(self) -> dict[str, ad.Tensor]:
        """Named parameters in a stable order (the checkpoint order)."""
        out: dict[str, ad.Tensor] = {"embeddings.table": self.embeddings}
        for prefix, direction in (("fwd", self.fwd), ("bwd", self.bwd)):
            out[f"{prefix}.encoder.wx"] = direction.encoder.wx
            out[f"{prefix}.encoder.wh"] = direction.encoder.wh
            out[f"{prefix}.encoder.b"] = direction.encoder.b
            out[f"{prefix}.decoder.wx"] = direction.decoder.wx
            out[f"{prefix}.decoder.wh"] = direction.decoder.wh
            out[f"{prefix}.decoder.b"] = direction.decoder.b
            out[f"{prefix}.attention.w_dec"] = direction.attention.w_dec
            out[f"{prefix}.attention.w_enc"] = direction.attention.w_enc
            out[f"{prefix}.attention.v"] = direction.attention.v
            out[f"{prefix}.features.w"] = direction.feat_w
            out[f"{prefix}.features.b"] = direction.feat_b
            out[f"{prefix}.out.w"] = direction.out_w
            out[f"{prefix}.out.b"] = direction.out_b
        return out

    def direction(self, name: str) -> DirectionParams:
        if name == "forward":
            return self.fwd
        if name == "backward":
            return self.bwd
        raise ValueError(f"unknown direction {name!r}")

    def sample_masks(
        self, rng: np.random.Generator, batch_size: int, keep_prob: float
    ) -> tuple[layers.DropoutMasks, layers.DropoutMasks]:
        """Draw per-sequence dropout masks for both directions."""
        if keep_prob >= 1.0:
            return layers.IDENTITY_MASKS, layers.IDENTITY_MASKS
        h = self.hidden_size
        fwd = layers.sample_masks(
            {"enc_in": h, "enc_h": h, "dec_in": 3 * h, "dec_h": h, "out_in": h},
            keep_prob,
            rng,
            batch_size,
            self.dtype,
        )
        bwd = layers.sample_masks(
            {"enc_in": h, "enc_h": h, "dec_in": 2 * h, "dec_h": h, "out_in": h},
            keep_prob,
            rng,
            batch_size,
            self.dtype,
        )
        return fwd, bwd

    # ------------------------------------------------------------------
    # encoding

    def encode(
        self,
        ids: np.ndarray,
        mask: np.ndarray,
        direction: DirectionParams,
        dropout: layers.DropoutMasks = layers.IDENTITY_MASKS,
    ):
        """Run the unidirectional encoder left to right.

        Returns all hidden states stacked (b, n, H) plus the final (h, c).
        For padded rows the state freezes at the row's last real symbol, so
        the final state is per-sequence correct.
        """
        b, n = ids.shape
        h = ad.Tensor(np.zeros((b, self.hidden_size), dtype=self.dtype))
        c = ad.Tensor(np.zeros((b, self.hidden_size), dtype=self.dtype))
        states = []
        for t in range(n):
            x = ad.lookup(self.embeddings, ids[:, t])
            h_new, c_new = layers.lstm_step(
                x, h, c, direction.encoder, dropout.enc_in, dropout.enc_h
            )
            col = mask[:, t : t + 1]
            if col.min() >= 1.0:
                h, c = h_new, c_new
            else:
                keep = 1.0 - col
                h = ad.add(ad.mul(h_new, col), ad.mul(h, keep))
                c = ad.add(ad.mul(c_new, col), ad.mul(c, keep))
            states.append(h)
        return ad.stack(states, axis=1), (h, c)

    def encode_features(self, multihot: np.ndarray) -> ad.Tensor:
        """Encode a multi-hot feature bundle: tanh(W x + b), shape (b, H)."""
        if len(self.feat_vocab) == 0:
            raise ValueError("encode_features: empty feature vocabulary")
        return layers.dense(ad.Tensor(multihot), self.fwd.feat_w, self.fwd.feat_b, "tanh")

    def _enc_proj(self, h_enc: ad.Tensor, direction: DirectionParams) -> ad.Tensor:
        b, n, h = h_enc.shape
        flat = ad.reshape(h_enc, (b * n, h))
        return ad.reshape(ad.matmul(flat, direction.attention.w_enc), (b, n, h))

    # ------------------------------------------------------------------
    # training losses

    def _decode_loss(
        self,
        direction: DirectionParams,
        encoded,
        enc_mask: np.ndarray,
        target_ids: np.ndarray,
        target_mask: np.ndarray,
        fenc: ad.Tensor | None,
        dropout: layers.DropoutMasks,
    ) -> ad.Tensor:
        """Teacher-forced decoder cross-entropy.

        Per example the loss is the mean over its real target positions; the
        batch loss is the sum of those per-example means.
        """
        if target_ids.shape[1] < 1:
            raise ValueError("decode loss: empty target")
        h_enc, (h, c) = encoded
        enc_proj = self._enc_proj(h_enc, direction)
        b, m = target_ids.shape
        bos = np.full((b, 1), BOS_ID, dtype=np.int64)
        dec_in = np.concatenate([bos, target_ids[:, :-1]], axis=1)
        # Per-position weights: mask / per-example length.
        weights = target_mask / target_mask.sum(axis=1, keepdims=True)
        total: ad.Tensor | None = None
        for t in range(m):
            context, _ = layers.attend(h, h_enc, direction.attention, enc_proj, enc_mask)
            parts = [ad.lookup(self.embeddings, dec_in[:, t]), context]
            if fenc is not None:
                parts.append(fenc)
            x = ad.concat(parts, axis=-1)
            h, c = layers.lstm_step(x, h, c, direction.decoder, dropout.dec_in, dropout.dec_h)
            out_in = h if dropout.out_in is None else ad.mul(h, dropout.out_in)
            logits = ad.add(ad.matmul(out_in, direction.out_w), direction.out_b)
            ce = ad.softmax_xent(logits, target_ids[:, t])
            step_loss = ad.reduce_sum(ad.mul(ce, weights[:, t]))
            total = step_loss if total is None else ad.add(total, step_loss)
        return total

    def forward_loss(
        self, batch: EncodedBatch, dropout: layers.DropoutMasks = layers.IDENTITY_MASKS
    ) -> ad.Tensor:
        """Inflection loss: decode the form from the lemma and features."""
        fenc = self.encode_features(batch.feats)
        encoded = self.encode(batch.lemma, batch.lemma_mask, self.fwd, dropout)
        return self._decode_loss(
            self.fwd, encoded, batch.lemma_mask, batch.form, batch.form_mask, fenc, dropout
        )

    def backward_loss(
        self, batch: EncodedBatch, dropout: layers.DropoutMasks = layers.IDENTITY_MASKS
    ) -> ad.Tensor:
        """Lemmatization cross-entropy plus feature-prediction BCE.

        The BCE term is summed over the feature vocabulary and added to the
        character loss with weight 1.0. Both heads share one encoder pass,
        so the final state feeds the decoder and the feature predictor.
        """
        encoded = self.encode(batch.form, batch.form_mask, self.bwd, dropout)
        ce = self._decode_loss(
            self.bwd, encoded, batch.form_mask, batch.lemma, batch.lemma_mask, None, dropout
        )
        h_final = encoded[1][0]
        logits = ad.add(ad.matmul(h_final, self.bwd.feat_w), self.bwd.feat_b)
        bce = ad.reduce_sum(ad.bce_logits(logits, batch.feats))
        return ad.add(ce, bce)

    # ------------------------------------------------------------------
    # feature prediction

    def feature_probs(self, form_ids: Sequence[int]) -> np.ndarray:
        """Sigmoid probabilities of each feature token given an inflected form."""
        ids = np.asarray(list(form_ids) + [EOS_ID], dtype=np.int64)[None, :]
        mask = np.ones_like(ids, dtype=self.dtype)
        _, (h_final, _) = self.encode(ids, mask, self.bwd)
        logits = ad.add(ad.matmul(h_final, self.bwd.feat_w), self.bwd.feat_b)
        return ad.sigmoid(logits).data[0]

    def predict_features(self, form_ids: Sequence[int]) -> FeatureBundle:
        """Feature tokens whose probability exceeds 0.5 (strict); may be empty."""
        probs = self.feature_probs(form_ids)
        tokens = [self.feat_vocab.tokens[i] for i in np.nonzero(probs > 0.5)[0]]
        return FeatureBundle.of(tokens)

    # ------------------------------------------------------------------
    # stepwise decoding interface

    def start(
        self,
        source_ids: Sequence[int],
        features: FeatureBundle | None = None,
        direction: str = "forward",
    ) -> DecodeState:
        """Encode one source sequence and return the initial decoder state."""
        params = self.direction(direction)
        ids = np.asarray(list(source_ids) + [EOS_ID], dtype=np.int64)[None, :]
        mask = np.ones_like(ids, dtype=self.dtype)
        h_enc, (h, c) = self.encode(ids, mask, params)
        fenc = None
        if direction == "forward":
            bundle = features if features is not None else FeatureBundle.of(())
            fenc = self.encode_features(self.feat_vocab.multihot(bundle.tokens, self.dtype)[None, :])
        return DecodeState(
            direction=direction,
            h=h,
            c=c,
            h_enc=h_enc,
            enc_proj=self._enc_proj(h_enc, params),
            enc_mask=mask,
            fenc=fenc,
        )

    def step(self, state: DecodeState, prev_id: int) -> tuple[np.ndarray, DecodeState]:
        """Advance one decoder step; returns float64 log-probabilities (|V|,)."""
        params = self.direction(state.direction)
        context, _ = layers.attend(
            state.h, state.h_enc, params.attention, state.enc_proj, state.enc_mask
        )
        parts = [ad.lookup(self.embeddings, np.asarray([prev_id], dtype=np.int64)), context]
        if state.fenc is not None:
            parts.append(state.fenc)
        x = ad.concat(parts, axis=-1)
        h, c = layers.lstm_step(x, state.h, state.c, params.decoder)
        logits = ad.add(ad.matmul(h, params.out_w), params.out_b).data[0].astype(np.float64)
        m = logits.max()
        logprobs = logits - (m + np.log(np.exp(logits - m).sum()))
        new_state = DecodeState(
            direction=state.direction,
            h=h,
            c=c,
            h_enc=state.h_enc,
            enc_proj=state.enc_proj,
            enc_mask=state.enc_mask,
            fenc=state.fenc,
        )
        return logprobs, new_state


# ----------------------------------------------------------------------
# checkpoint container
#
# Layout: magic line, decimal header length on its own line, UTF-8 JSON
# header, then the concatenated parameter payloads (row-major float32,
# little-endian) at the offsets listed in the header.


def save_checkpoint(path, model: JointModel, extra: dict | None = None) -> None:
    params = model.parameters()
    manifest = []
    offset = 0
    blobs = []
    for name, tensor in params.items():
        blob = np.ascontiguousarray(tensor.data, dtype="<f4").tobytes()
        manifest.append(
            {"name": name, "shape": list(tensor.shape), "offset": offset, "size": len(blob)}
        )
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format": 1,
        "hidden_size": model.hidden_size,
        "char_vocab": list(model.char_vocab.chars),
        "feat_vocab": list(model.feat_vocab.tokens),
        "flags": dict(MODEL_FLAGS),
        "params": manifest,
    }
    if extra:
        header.update(extra)
    blob = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(f"{len(blob)}\n".encode("ascii"))
        fh.write(blob)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path) -> tuple[JointModel, dict]:
    """Rebuild a model from a checkpoint; returns (model, header)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a morphseq checkpoint")
        header_len = int(fh.readline().decode("ascii").strip())
        header = json.loads(fh.read(header_len).decode("utf-8"))
        payload = fh.read()
    char_vocab = CharVocabulary(header["char_vocab"])
    feat_vocab = FeatureVocabulary(header["feat_vocab"])
    model = JointModel(char_vocab, feat_vocab, hidden_size=header["hidden_size"])
    params = model.parameters()
    for entry in header["params"]:
        name = entry["name"]
        if name not in params:
            raise ValueError(f"{path}: unknown parameter {name!r}")
        arr = np.frombuffer(
            payload, dtype="<f4", count=entry["size"] // 4, offset=entry["offset"]
        ).reshape(entry["shape"])
        target = params[name]
        if tuple(arr.shape) != target.shape:
            raise ValueError(
                f"{path}: parameter {name!r} has shape {arr.shape}, expected {target.shape}"
            )
        target.data = arr.astype(np.float32).copy()
    return model, header
