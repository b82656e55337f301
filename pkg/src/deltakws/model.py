"""Encoder pipeline in dense and delta modes.

The model is a stack of identical blocks: QKV projections, per-head scaled
dot-product attention, head concatenation + projection, residual / norm /
MLP. Delta mode gates six encoding sites with per-site thresholds: the
layer input, the per-head query and key rows, the scaled score rows, the
softmax rows, and the concatenated head rows. The class-embedding row and
the first token row are never thresholded.

Dense stages are computed row by row (one vector-matrix product per token).
That keeps the class-row-restricted last layer bit-identical to the
unrestricted run: restricting simply drops calls, it never changes any call
that still happens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor
from .accounting import StageId, MacReport, assemble_report
from .delta import (
    DeltaRowState,
    DeltaSoftmaxState,
    SparseDelta,
    delta_delta_product,
    delta_matmul_row,
    delta_softmax_update,
    encode_row,
    reconstruct_rows,
)
from .errors import NumericError, NumericRangeError, ShapeError
from .tensor import MacCounter, Matrix, add, gelu, layer_norm, row_softmax

#: encoding sites, in pipeline order
SITES = ("x", "q", "k", "att", "softmax", "head")


@dataclass
class ModelConfig:
    seq_tokens: int = 98
    feature_dim: int = 40
    embed_dim: int = 192
    mlp_dim: int = 768
    heads: int = 3
    layers: int = 12
    num_classes: int = 12
    norm_placement: str = "post"
    last_layer_opt: bool = False
    precision: str = "double"

    def __post_init__(self) -> None:
        for name in ("seq_tokens", "feature_dim", "embed_dim", "mlp_dim", "heads", "layers", "num_classes"):
            if getattr(self, name) < 1:
                raise ShapeError(f"{name} must be a positive integer")
        if self.embed_dim % self.heads != 0:
            raise ShapeError(
                f"embed_dim {self.embed_dim} is not divisible by heads {self.heads}"
            )
        if self.norm_placement not in ("post", "pre"):
            raise ShapeError(f"norm_placement must be 'post' or 'pre', got {self.norm_placement!r}")
        if self.precision not in ("single", "double"):
            raise ShapeError(f"precision must be 'single' or 'double', got {self.precision!r}")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads

    @property
    def seq_len(self) -> int:
        """Token rows including the class embedding."""
        return self.seq_tokens + 1

    @property
    def np_dtype(self):
        return np.float64 if self.precision == "double" else np.float32

    @classmethod
    def kwt3(cls, **overrides) -> "ModelConfig":
        base = dict(seq_tokens=98, feature_dim=40, embed_dim=192, mlp_dim=768,
                    heads=3, layers=12, num_classes=12)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return {
            "seq_tokens": self.seq_tokens,
            "feature_dim": self.feature_dim,
            "embed_dim": self.embed_dim,
            "mlp_dim": self.mlp_dim,
            "heads": self.heads,
            "layers": self.layers,
            "num_classes": self.num_classes,
            "norm_placement": self.norm_placement,
            "last_layer_opt": self.last_layer_opt,
            "precision": self.precision,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class LayerWeights:
    wq: Matrix
    wk: Matrix
    wv: Matrix
    wp: Matrix
    ln1_gamma: Matrix
    ln1_beta: Matrix
    ln2_gamma: Matrix
    ln2_beta: Matrix
    mlp_w1: Matrix
    mlp_b1: Matrix
    mlp_w2: Matrix
    mlp_b2: Matrix
    bq: Matrix | None = None
    bk: Matrix | None = None
    bv: Matrix | None = None
    bp: Matrix | None = None


@dataclass
class EncoderWeights:
    w0: Matrix
    class_token: Matrix
    pos_embed: Matrix
    layers: list = field(default_factory=list)
    head_w: Matrix = None
    head_b: Matrix | None = None

    def validate(self, config: ModelConfig) -> None:
        d = config.embed_dim
        expect = {
            "w0": (config.feature_dim, d),
            "class_token": (1, d),
            "pos_embed": (config.seq_len, d),
            "head_w": (d, config.num_classes),
        }
        for name, shape in expect.items():
            arr = getattr(self, name)
            if arr is None or arr.shape != shape:
                raise ShapeError(f"{name} must have shape {shape}, got "
                                 f"{None if arr is None else arr.shape}")
        if self.head_b is not None and self.head_b.shape != (1, config.num_classes):
            raise ShapeError(f"head_b must have shape (1, {config.num_classes})")
        if len(self.layers) != config.layers:
            raise ShapeError(f"expected {config.layers} layers, got {len(self.layers)}")
        for i, lw in enumerate(self.layers):
            for name in ("wq", "wk", "wv", "wp"):
                if getattr(lw, name).shape != (d, d):
                    raise ShapeError(f"layer {i} {name} must be {d}x{d}")
            for name in ("ln1_gamma", "ln1_beta", "ln2_gamma", "ln2_beta"):
                if getattr(lw, name).shape != (1, d):
                    raise ShapeError(f"layer {i} {name} must be 1x{d}")
            if lw.mlp_w1.shape != (d, config.mlp_dim) or lw.mlp_w2.shape != (config.mlp_dim, d):
                raise ShapeError(f"layer {i} MLP weights inconsistent with mlp_dim")
            if lw.mlp_b1.shape != (1, config.mlp_dim) or lw.mlp_b2.shape != (1, d):
                raise ShapeError(f"layer {i} MLP biases inconsistent")
            for name in ("bq", "bk", "bv", "bp"):
                b = getattr(lw, name)
                if b is not None and b.shape != (1, d):
                    raise ShapeError(f"layer {i} {name} must be 1x{d} when present")
        for name, arr in self.iter_tensors():
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"tensor {name} contains non-finite values")

    def iter_tensors(self):
        """Yield (canonical name, array) pairs in container order."""
        yield "embed.w0", self.w0
        yield "embed.class", self.class_token
        yield "embed.pos", self.pos_embed
        for i, lw in enumerate(self.layers):
            for short, bias in (("wq", lw.bq), ("wk", lw.bk), ("wv", lw.bv), ("wp", lw.bp)):
                yield f"layer.{i}.attn.{short}", getattr(lw, short)
                if bias is not None:
                    yield f"layer.{i}.attn.{short}.bias", bias
            yield f"layer.{i}.ln1.gamma", lw.ln1_gamma
            yield f"layer.{i}.ln1.beta", lw.ln1_beta
            yield f"layer.{i}.ln2.gamma", lw.ln2_gamma
            yield f"layer.{i}.ln2.beta", lw.ln2_beta
            yield f"layer.{i}.mlp.w1", lw.mlp_w1
            yield f"layer.{i}.mlp.b1", lw.mlp_b1
            yield f"layer.{i}.mlp.w2", lw.mlp_w2
            yield f"layer.{i}.mlp.b2", lw.mlp_b2
        yield "head.w", self.head_w
        if self.head_b is not None:
            yield "head.b", self.head_b

    def astype(self, dtype) -> "EncoderWeights":
        def cast(a):
            return None if a is None else a.astype(dtype)

        return EncoderWeights(
            w0=cast(self.w0),
            class_token=cast(self.class_token),
            pos_embed=cast(self.pos_embed),
            layers=[
                LayerWeights(**{k: cast(getattr(lw, k)) for k in LayerWeights.__dataclass_fields__})
                for lw in self.layers
            ],
            head_w=cast(self.head_w),
            head_b=cast(self.head_b),
        )


@dataclass
class ThresholdConfig:
    """The six per-site thresholds, in absolute units of the gated tensors."""

    theta_x: float = 0.0
    theta_q: float = 0.0
    theta_k: float = 0.0
    theta_att: float = 0.0
    theta_softmax: float = 0.0
    theta_head: float = 0.0

    def __post_init__(self) -> None:
        for name, v in self.as_dict().items():
            if v < 0:
                raise ShapeError(f"{name} must be non-negative, got {v}")

    def as_dict(self) -> dict:
        return {
            "theta_x": self.theta_x,
            "theta_q": self.theta_q,
            "theta_k": self.theta_k,
            "theta_att": self.theta_att,
            "theta_softmax": self.theta_softmax,
            "theta_head": self.theta_head,
        }

    def as_tuple(self) -> tuple:
        return (self.theta_x, self.theta_q, self.theta_k,
                self.theta_att, self.theta_softmax, self.theta_head)

    @classmethod
    def zeros(cls) -> "ThresholdConfig":
        return cls()

    @classmethod
    def square_preset(cls) -> "ThresholdConfig":
        """The reference six-tuple used for the per-keyword MAC tables."""
        return cls(0.2, 0.2, 0.2, 0.05, 0.001, 0.05)


def embed_input(features: Matrix, weights: EncoderWeights) -> Matrix:
    """Project features, prepend the class token, add positional embedding."""
    tensor.require_matrix(features, "features")
    if features.shape[1] != weights.w0.shape[0]:
        raise ShapeError(
            f"features with {features.shape[1]} columns do not match projection rows {weights.w0.shape[0]}"
        )
    if weights.pos_embed.shape[0] != features.shape[0] + 1:
        raise ShapeError(
            f"positional embedding rows {weights.pos_embed.shape[0]} do not match "
            f"{features.shape[0]} feature rows plus class token"
        )
    projected = tensor.matmul(features, weights.w0)
    x = np.concatenate([weights.class_token, projected], axis=0) + weights.pos_embed
    tensor.check_finite(x, "embedded input")
    return x


def classify(logits: np.ndarray) -> int:
    """Index of the maximum logit; ties go to the lowest index."""
    v = np.asarray(logits).ravel()
    if v.size == 0:
        raise ShapeError("cannot classify an empty logit vector")
    if not np.all(np.isfinite(v)):
        raise NumericError("logits contain non-finite values")
    return int(np.argmax(v))


def _rows_matmul(m: Matrix, w: Matrix, bias: Matrix | None, counter: MacCounter) -> Matrix:
    """Row-by-row dense product (one gemv per token row)."""
    out = np.empty((m.shape[0], w.shape[1]), dtype=np.result_type(m.dtype, w.dtype))
    for i in range(m.shape[0]):
        out[i] = np.dot(m[i], w)
    if bias is not None:
        out += bias
    macs = m.shape[0] * w.shape[0] * w.shape[1]
    counter.executed += macs
    counter.dense_equivalent += macs
    return out


def _softmax_row(v: np.ndarray) -> np.ndarray:
    return row_softmax(v.reshape(1, -1))[0]


def _exp_sum(logits: np.ndarray) -> float:
    """Plain sum of exponentials; may overflow to inf, callers must check."""
    with np.errstate(over="ignore"):
        return float(np.exp(logits).sum())


class _SoftmaxChain:
    """Softmax rows of one head, advanced incrementally across tokens.

    Owns both the logits reference (threshold site) and the softmax state.
    Falls back to a dense row whenever the incremental update leaves the
    representable range, and re-anchors the chain there.
    """

    def __init__(self, first_logits: np.ndarray, counter: MacCounter):
        self.counter = counter
        self.fallbacks = 0
        self.retained = 0
        self.candidates = 0
        self.enc = DeltaRowState(reference=first_logits.copy())
        self.first_row = _softmax_row(first_logits)
        counter.overhead_ops += 2 * first_logits.shape[0]
        self.state: DeltaSoftmaxState | None = None
        self._try_anchor(first_logits, self.first_row)

    def _try_anchor(self, logits: np.ndarray, softmax_row: np.ndarray) -> None:
        es = _exp_sum(logits)
        if np.isfinite(es) and es > 0.0:
            self.state = DeltaSoftmaxState(prev_softmax=softmax_row.copy(), exp_sum=es)
        else:
            self.state = None

    def advance(self, logits: np.ndarray, theta: float) -> np.ndarray:
        n = logits.shape[0]
        if self.state is not None:
            d = encode_row(logits, self.enc, theta)
            self.candidates += n
            self.retained += d.nnz
            try:
                return delta_softmax_update(self.state, d, self.counter)
            except NumericRangeError:
                pass
        # dense fallback: recompute and re-anchor the chain on this row
        self.fallbacks += 1
        row = _softmax_row(logits)
        self.counter.overhead_ops += 2 * n
        self.enc.reference[:] = logits
        self._try_anchor(logits, row)
        return row


class _Retained:
    """kept / candidate element tallies per (layer, site)."""

    def __init__(self):
        self.data: dict[tuple[int, str], list[int]] = {}

    def bump(self, layer: int, site: str, kept: int, candidates: int) -> None:
        cell = self.data.setdefault((layer, site), [0, 0])
        cell[0] += kept
        cell[1] += candidates

    def as_dict(self):
        return {k: (v[0], v[1]) for k, v in self.data.items()}


def _head_slices(config: ModelConfig):
    dh = config.head_dim
    return [slice(h * dh, (h + 1) * dh) for h in range(config.heads)]


def _mhsa_dense(src: Matrix, lw: LayerWeights, config: ModelConfig,
                counters, layer: int, restricted: bool, capture=None) -> Matrix:
    n = src.shape[0]
    dh = config.head_dim
    inv_scale = 1.0 / math.sqrt(dh)
    c_proj = counters[(layer, StageId.PROJ_QKV)]
    c_scores = counters[(layer, StageId.ATT_SCORES)]
    c_ctx = counters[(layer, StageId.ATT_CONTEXT)]
    c_head = counters[(layer, StageId.HEAD_PROJ)]

    if restricted:
        q = _rows_matmul(src[0:1], lw.wq, lw.bq, c_proj)
    else:
        q = _rows_matmul(src, lw.wq, lw.bq, c_proj)
    k = _rows_matmul(src, lw.wk, lw.bk, c_proj)
    v = _rows_matmul(src, lw.wv, lw.bv, c_proj)
    for arr in (q, k, v):
        tensor.check_finite(arr, f"layer {layer} stage proj_qkv")

    contexts = []
    for h, hs in enumerate(_head_slices(config)):
        qh, kh, vh = q[:, hs], k[:, hs], v[:, hs]
        scores = np.empty((qh.shape[0], n), dtype=src.dtype)
        for i in range(qh.shape[0]):
            scores[i] = np.dot(kh, qh[i])
            c_scores.executed += n * dh
            c_scores.dense_equivalent += n * dh
        scores = scores * inv_scale
        c_scores.overhead_ops += scores.size
        tensor.check_finite(scores, f"layer {layer} stage att_scores")
        probs = row_softmax(scores)
        c_scores.overhead_ops += 2 * scores.size
        if capture is not None and not restricted:
            capture[f"layer{layer}.softmax.h{h}"] = probs.copy()
        ctx = np.empty((probs.shape[0], dh), dtype=src.dtype)
        for i in range(probs.shape[0]):
            ctx[i] = np.dot(probs[i], vh)
            c_ctx.executed += n * dh
            c_ctx.dense_equivalent += n * dh
        contexts.append(ctx)

    concat = np.concatenate(contexts, axis=1)
    out = _rows_matmul(concat, lw.wp, lw.bp, c_head)
    tensor.check_finite(out, f"layer {layer} stage head_proj")
    return out


def _mhsa_delta(src: Matrix, lw: LayerWeights, config: ModelConfig, thresholds: ThresholdConfig,
                counters, layer: int, restricted: bool,
                retained: _Retained, fallbacks, trace=None) -> Matrix:
    n = src.shape[0]
    d = config.embed_dim
    dh = config.head_dim
    inv_scale = 1.0 / math.sqrt(dh)
    c_proj = counters[(layer, StageId.PROJ_QKV)]
    c_scores = counters[(layer, StageId.ATT_SCORES)]
    c_ctx = counters[(layer, StageId.ATT_CONTEXT)]
    c_head = counters[(layer, StageId.HEAD_PROJ)]

    def dense_row(x_row, w, b, counter):
        out = np.dot(x_row, w)
        if b is not None:
            out = out + b[0]
        counter.executed += w.shape[0] * w.shape[1]
        counter.dense_equivalent += w.shape[0] * w.shape[1]
        return out

    # ---- site X: one shared encoding feeds the QKV projections -----------
    k_rows = np.empty((n, d), dtype=src.dtype)
    v_rows = np.empty((n, d), dtype=src.dtype)
    k_rows[0] = dense_row(src[0], lw.wk, lw.bk, c_proj)
    v_rows[0] = dense_row(src[0], lw.wv, lw.bv, c_proj)
    if restricted:
        q_rows = np.empty((1, d), dtype=src.dtype)
        q_rows[0] = dense_row(src[0], lw.wq, lw.bq, c_proj)
    else:
        q_rows = np.empty((n, d), dtype=src.dtype)
        q_rows[0] = dense_row(src[0], lw.wq, lw.bq, c_proj)

    if n > 1:
        k_rows[1] = dense_row(src[1], lw.wk, lw.bk, c_proj)
        v_rows[1] = dense_row(src[1], lw.wv, lw.bv, c_proj)
        if not restricted:
            q_rows[1] = dense_row(src[1], lw.wq, lw.bq, c_proj)
        x_ref = src[1].copy()
        x_enc = DeltaRowState(reference=x_ref)
        k_out = DeltaRowState(reference=x_ref, accumulated_output=k_rows[1].copy())
        v_out = DeltaRowState(reference=x_ref, accumulated_output=v_rows[1].copy())
        q_out = None
        if not restricted:
            q_out = DeltaRowState(reference=x_ref, accumulated_output=q_rows[1].copy())
        for t in range(2, n):
            dx = encode_row(src[t], x_enc, thresholds.theta_x)
            retained.bump(layer, "x", dx.nnz, d)
            if trace is not None:
                trace.record(layer, "x", dx)
            k_rows[t] = delta_matmul_row(dx, lw.wk, k_out, c_proj)
            v_rows[t] = delta_matmul_row(dx, lw.wv, v_out, c_proj)
            if not restricted:
                q_rows[t] = delta_matmul_row(dx, lw.wq, q_out, c_proj)
    tensor.check_finite(k_rows, f"layer {layer} stage proj_qkv")
    tensor.check_finite(v_rows, f"layer {layer} stage proj_qkv")
    tensor.check_finite(q_rows, f"layer {layer} stage proj_qkv")

    contexts = []
    for h, hs in enumerate(_head_slices(config)):
        kh, vh = k_rows[:, hs], v_rows[:, hs]

        # ---- sites Q and K: per-head re-encoding of the projected rows ----
        k_deltas: list[SparseDelta] = []
        if n > 1:
            kenc = DeltaRowState(reference=kh[1].copy())
            for t in range(2, n):
                dk = encode_row(kh[t], kenc, thresholds.theta_k)
                retained.bump(layer, "k", dk.nnz, dh)
                if trace is not None:
                    trace.record(layer, "k", dk, head=h)
                k_deltas.append(dk)

        if restricted:
            # class-query row against the reconstructed keys: two dense
            # anchor cells, then the horizontal recurrence over key deltas
            q0h = q_rows[0, hs]
            khat = reconstruct_rows(kh[0:2], k_deltas) if n > 1 else kh[0:1]
            logits = np.empty(n, dtype=src.dtype)
            logits[0] = np.dot(q0h, khat[0])
            c_scores.executed += dh
            c_scores.dense_equivalent += dh
            if n > 1:
                logits[1] = np.dot(q0h, khat[1])
                c_scores.executed += dh
                c_scores.dense_equivalent += dh
            if n > 2:
                contrib = np.zeros(n - 2, dtype=src.dtype)
                for j, dk in enumerate(k_deltas):
                    if dk.nnz:
                        contrib[j] = np.dot(q0h[dk.indices], dk.values)
                        c_scores.executed += dk.nnz
                c_scores.dense_equivalent += (n - 2) * dh
                logits[2:] = logits[1] + np.cumsum(contrib)
            logits = logits * inv_scale
            c_scores.overhead_ops += n
            tensor.check_finite(logits, f"layer {layer} stage att_scores")
            probs0 = _softmax_row(logits)
            c_scores.overhead_ops += 2 * n
            ctx0 = np.dot(probs0, vh)
            c_ctx.executed += n * dh
            c_ctx.dense_equivalent += n * dh
            contexts.append(ctx0.reshape(1, dh))
            continue

        qh = q_rows[:, hs]
        q_deltas: list[SparseDelta] = []
        if n > 1:
            qenc = DeltaRowState(reference=qh[1].copy())
            for t in range(2, n):
                dq = encode_row(qh[t], qenc, thresholds.theta_q)
                retained.bump(layer, "q", dq.nnz, dh)
                if trace is not None:
                    trace.record(layer, "q", dq, head=h)
                q_deltas.append(dq)

        # ---- site scaled scores: delta-delta product then threshold -------
        raw = delta_delta_product(qh[0:2] if n > 1 else qh[0:1], q_deltas,
                                  (kh[0:2] if n > 1 else kh[0:1]).T, k_deltas, c_scores)
        scores = raw * inv_scale
        c_scores.overhead_ops += scores.size
        tensor.check_finite(scores, f"layer {layer} stage att_scores")

        probs = np.empty((n, n), dtype=src.dtype)
        probs[0] = _softmax_row(scores[0])
        c_scores.overhead_ops += 2 * n
        if n > 1:
            chain = _SoftmaxChain(scores[1], c_scores)
            probs[1] = chain.first_row
            for t in range(2, n):
                probs[t] = chain.advance(scores[t], thresholds.theta_att)
            retained.bump(layer, "att", chain.retained, chain.candidates)
            fallbacks[(layer, StageId.ATT_SCORES)] += chain.fallbacks

        # ---- site softmax rows: delta-regular product against values ------
        ctx = np.empty((n, dh), dtype=src.dtype)
        ctx[0] = np.dot(probs[0], vh)
        c_ctx.executed += n * dh
        c_ctx.dense_equivalent += n * dh
        if n > 1:
            ctx[1] = np.dot(probs[1], vh)
            c_ctx.executed += n * dh
            c_ctx.dense_equivalent += n * dh
            senc = DeltaRowState(reference=probs[1].copy())
            sout = DeltaRowState(reference=senc.reference, accumulated_output=ctx[1].copy())
            for t in range(2, n):
                ds = encode_row(probs[t], senc, thresholds.theta_softmax)
                retained.bump(layer, "softmax", ds.nnz, n)
                if trace is not None:
                    trace.record(layer, "softmax", ds, head=h)
                ctx[t] = delta_matmul_row(ds, vh, sout, c_ctx)
        contexts.append(ctx)

    concat = np.concatenate(contexts, axis=1)

    # ---- site head rows: delta-regular product against the projection ----
    rows_out = concat.shape[0]
    out = np.empty((rows_out, d), dtype=src.dtype)
    out[0] = dense_row(concat[0], lw.wp, lw.bp, c_head)
    if rows_out > 1:
        out[1] = dense_row(concat[1], lw.wp, lw.bp, c_head)
        henc = DeltaRowState(reference=concat[1].copy())
        hout = DeltaRowState(reference=henc.reference, accumulated_output=out[1].copy())
        for t in range(2, rows_out):
            dhd = encode_row(concat[t], henc, thresholds.theta_head)
            retained.bump(layer, "head", dhd.nnz, d)
            if trace is not None:
                trace.record(layer, "head", dhd)
            out[t] = delta_matmul_row(dhd, lw.wp, hout, c_head)
    tensor.check_finite(out, f"layer {layer} stage head_proj")
    return out


def _mlp(rows: Matrix, lw: LayerWeights, counter: MacCounter) -> Matrix:
    hidden = _rows_matmul(rows, lw.mlp_w1, lw.mlp_b1, counter)
    hidden = gelu(hidden)
    return _rows_matmul(hidden, lw.mlp_w2, lw.mlp_b2, counter)


def _forward(features: Matrix, weights: EncoderWeights, config: ModelConfig,
             thresholds: ThresholdConfig | None, capture=None, trace=None):
    weights.validate(config)
    if features.shape != (config.seq_tokens, config.feature_dim):
        raise ShapeError(
            f"features must be {config.seq_tokens}x{config.feature_dim}, got {features.shape}"
        )

    counters = {(l, s): MacCounter() for l in range(config.layers) for s in StageId}
    fallbacks = {(l, StageId.ATT_SCORES): 0 for l in range(config.layers)}
    retained = _Retained()

    x = embed_input(features, weights)
    for layer in range(config.layers):
        lw = weights.layers[layer]
        restricted = config.last_layer_opt and layer == config.layers - 1
        if capture is not None:
            capture[f"layer{layer}.input"] = x.copy()

        src = x if config.norm_placement == "post" else layer_norm(x, lw.ln1_gamma, lw.ln1_beta)
        # stage code raises NumericError messages that already name the
        # layer and stage, so no re-wrapping here
        if thresholds is None:
            mh = _mhsa_dense(src, lw, config, counters, layer, restricted, capture)
        else:
            mh = _mhsa_delta(src, lw, config, thresholds, counters, layer,
                             restricted, retained, fallbacks, trace)

        base = x[0:1] if restricted else x
        c_mlp = counters[(layer, StageId.MLP)]
        try:
            if config.norm_placement == "post":
                y = layer_norm(add(mh, base), lw.ln1_gamma, lw.ln1_beta)
                x = layer_norm(add(_mlp(y, lw, c_mlp), y), lw.ln2_gamma, lw.ln2_beta)
            else:
                y = add(mh, base)
                x = add(_mlp(layer_norm(y, lw.ln2_gamma, lw.ln2_beta), lw, c_mlp), y)
        except NumericError as e:
            raise NumericError(f"layer {layer} stage mlp: {e}") from e

    logits = np.dot(x[0], weights.head_w)
    if weights.head_b is not None:
        logits = logits + weights.head_b[0]
    tensor.check_finite(logits, "classifier logits")

    report = assemble_report(counters, config,
                             fallbacks=fallbacks if thresholds is not None else None,
                             retained=retained.as_dict() if thresholds is not None else None)
    return logits, report


def dense_forward(features: Matrix, weights: EncoderWeights, config: ModelConfig,
                  capture=None) -> tuple[np.ndarray, MacReport]:
    """Reference dense pass; returns class logits and the MAC report."""
    return _forward(features, weights, config, thresholds=None, capture=capture)


def delta_forward(features: Matrix, weights: EncoderWeights, config: ModelConfig,
                  thresholds: ThresholdConfig, trace=None) -> tuple[np.ndarray, MacReport]:
    """Threshold-gated pass over the six encoding sites."""
    return _forward(features, weights, config, thresholds=thresholds, trace=trace)


class DeltaTrace:
    """Optional capture of every emitted delta, for recount-style checks.

    The scaled-score site is not traced: its deltas never execute MACs
    (they only steer the incremental softmax), so a MAC recount does not
    need them.
    """

    def __init__(self):
        self.deltas: dict[tuple, list[SparseDelta]] = {}

    def record(self, layer: int, site: str, delta: SparseDelta, head: int | None = None) -> None:
        key = (layer, site) if head is None else (layer, site, head)
        self.deltas.setdefault(key, []).append(delta)
