"""On-disk formats, seeded fixture generators, and report emission.

Weight container ("DKWT"):
    magic          4 bytes, b"DKWT"
    version        uint32 little-endian, currently 1
    header length  uint64 little-endian
    header         UTF-8 JSON: {"dtype": "f32le", "config": {...},
                   "tensors": [{"name", "shape", "offset"}, ...]}
    payload        concatenated IEEE-754 binary32 little-endian, row-major;
                   offsets are byte positions from the payload start and
                   must tile the payload exactly in listing order

Feature file ("DKWF"):
    magic, version uint32, rows uint32, cols uint32, then rows*cols
    binary32 little-endian values. A CSV alternative is accepted: first
    line "rows,cols" as two integers, then one comma-separated numeric row
    per line (the same format the matrix dump helpers write).

Generators are pure functions of their arguments: a splitmix64 stream is
seeded per tensor from (seed, FNV-1a hash of the tensor name) and shaped
into Gaussians via Box-Muller, so fixtures are reproducible across runs
and across implementations. Generated values are rounded to binary32
(storage precision) before being cast to the compute precision.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .accounting import MacReport, StageId
from .errors import (
    BadMagicError,
    FormatError,
    NumericError,
    ShapeError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)
from .model import EncoderWeights, LayerWeights, ModelConfig, ThresholdConfig
from .tensor import Matrix

_WEIGHT_MAGIC = b"DKWT"
_FEATURE_MAGIC = b"DKWF"
_VERSION = 1

_MASK64 = (1 << 64) - 1


def _fnv1a64(name: str) -> int:
    h = 0xCBF29CE484222325
    for b in name.encode("utf-8"):
        h ^= b
        h = (h * 0x100000001B3) & _MASK64
    return h


def _splitmix64_stream(seed: int, count: int) -> np.ndarray:
    """First `count` outputs of splitmix64 starting from `seed`."""
    inc = np.uint64(0x9E3779B97F4A7C15)
    idx = np.arange(1, count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed & _MASK64) + idx * inc
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return z


def _uniforms(seed: int, count: int) -> np.ndarray:
    """Uniforms in (0, 1], 53-bit resolution."""
    bits = _splitmix64_stream(seed, count)
    return ((bits >> np.uint64(11)).astype(np.float64) + 1.0) * (2.0 ** -53)


def _gaussians(seed: int, count: int) -> np.ndarray:
    """Standard normals via Box-Muller on consecutive uniform pairs."""
    pairs = (count + 1) // 2
    u = _uniforms(seed, 2 * pairs)
    u1, u2 = u[0::2], u[1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    ang = 2.0 * np.pi * u2
    out = np.empty(2 * pairs, dtype=np.float64)
    out[0::2] = r * np.cos(ang)
    out[1::2] = r * np.sin(ang)
    return out[:count]


def _tensor_stream(seed: int, name: str, count: int) -> np.ndarray:
    return _gaussians((seed ^ _fnv1a64(name)) & _MASK64, count)


def tensor_shapes(config: ModelConfig, with_attn_bias: bool = False,
                  with_head_bias: bool = False) -> list[tuple[str, tuple[int, int]]]:
    """Canonical (name, shape) listing for a container of this config."""
    d = config.embed_dim
    out = [
        ("embed.w0", (config.feature_dim, d)),
        ("embed.class", (1, d)),
        ("embed.pos", (config.seq_len, d)),
    ]
    for i in range(config.layers):
        for short in ("wq", "wk", "wv", "wp"):
            out.append((f"layer.{i}.attn.{short}", (d, d)))
            if with_attn_bias:
                out.append((f"layer.{i}.attn.{short}.bias", (1, d)))
        out.append((f"layer.{i}.ln1.gamma", (1, d)))
        out.append((f"layer.{i}.ln1.beta", (1, d)))
        out.append((f"layer.{i}.ln2.gamma", (1, d)))
        out.append((f"layer.{i}.ln2.beta", (1, d)))
        out.append((f"layer.{i}.mlp.w1", (d, config.mlp_dim)))
        out.append((f"layer.{i}.mlp.b1", (1, config.mlp_dim)))
        out.append((f"layer.{i}.mlp.w2", (config.mlp_dim, d)))
        out.append((f"layer.{i}.mlp.b2", (1, d)))
    out.append(("head.w", (d, config.num_classes)))
    if with_head_bias:
        out.append(("head.b", (1, config.num_classes)))
    return out


def expected_shape(name: str, config: ModelConfig) -> tuple[int, int]:
    """Shape a canonically named tensor must have, or FormatError."""
    d = config.embed_dim
    fixed = {
        "embed.w0": (config.feature_dim, d),
        "embed.class": (1, d),
        "embed.pos": (config.seq_len, d),
        "head.w": (d, config.num_classes),
        "head.b": (1, config.num_classes),
    }
    if name in fixed:
        return fixed[name]
    parts = name.split(".")
    if len(parts) >= 3 and parts[0] == "layer" and parts[1].isdigit():
        i = int(parts[1])
        if not 0 <= i < config.layers:
            raise FormatError(f"tensor {name!r} names layer {i} outside 0..{config.layers - 1}")
        rest = parts[2:]
        if rest[0] == "attn" and len(rest) in (2, 3) and rest[1] in ("wq", "wk", "wv", "wp"):
            if len(rest) == 3 and rest[2] != "bias":
                raise FormatError(f"unknown tensor name {name!r}")
            return (1, d) if len(rest) == 3 else (d, d)
        if rest[0] in ("ln1", "ln2") and len(rest) == 2 and rest[1] in ("gamma", "beta"):
            return (1, d)
        if rest[0] == "mlp" and len(rest) == 2:
            if rest[1] == "w1":
                return (d, config.mlp_dim)
            if rest[1] == "b1":
                return (1, config.mlp_dim)
            if rest[1] == "w2":
                return (config.mlp_dim, d)
            if rest[1] == "b2":
                return (1, d)
    raise FormatError(f"unknown tensor name {name!r}")


def weights_from_tensors(tensors: dict[str, np.ndarray], config: ModelConfig) -> EncoderWeights:
    """Assemble EncoderWeights from a canonical name -> array mapping."""
    required = [n for n, _ in tensor_shapes(config)]
    missing = [n for n in required if n not in tensors]
    if missing:
        raise FormatError(f"missing required tensors: {', '.join(missing[:5])}")

    def get(name):
        return tensors.get(name)

    layers = []
    for i in range(config.layers):
        p = f"layer.{i}"
        layers.append(LayerWeights(
            wq=get(f"{p}.attn.wq"), wk=get(f"{p}.attn.wk"),
            wv=get(f"{p}.attn.wv"), wp=get(f"{p}.attn.wp"),
            bq=get(f"{p}.attn.wq.bias"), bk=get(f"{p}.attn.wk.bias"),
            bv=get(f"{p}.attn.wv.bias"), bp=get(f"{p}.attn.wp.bias"),
            ln1_gamma=get(f"{p}.ln1.gamma"), ln1_beta=get(f"{p}.ln1.beta"),
            ln2_gamma=get(f"{p}.ln2.gamma"), ln2_beta=get(f"{p}.ln2.beta"),
            mlp_w1=get(f"{p}.mlp.w1"), mlp_b1=get(f"{p}.mlp.b1"),
            mlp_w2=get(f"{p}.mlp.w2"), mlp_b2=get(f"{p}.mlp.b2"),
        ))
    return EncoderWeights(
        w0=get("embed.w0"), class_token=get("embed.class"), pos_embed=get("embed.pos"),
        layers=layers, head_w=get("head.w"), head_b=get("head.b"),
    )


def gen_weights(seed: int, config: ModelConfig) -> EncoderWeights:
    """Deterministic synthetic weights.

    Gaussian(0, 0.05) for weight matrices, zeros for biases and beta, ones
    for gamma. Each tensor gets its own stream keyed by (seed, name hash),
    so adding tensors never perturbs existing ones.
    """
    tensors: dict[str, np.ndarray] = {}
    for name, shape in tensor_shapes(config):
        count = shape[0] * shape[1]
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gamma":
            arr = np.ones(count, dtype=np.float64)
        elif leaf in ("beta", "b1", "b2") or name.endswith(".bias") or name == "head.b":
            arr = np.zeros(count, dtype=np.float64)
        else:
            arr = _tensor_stream(seed, name, count) * 0.05
        arr32 = arr.astype(np.float32)
        tensors[name] = arr32.astype(config.np_dtype).reshape(shape)
    return weights_from_tensors(tensors, config)


def gen_features(seed: int, seq_tokens: int, feature_dim: int, rho: float = 0.0,
                 jump_prob: float = 0.0, dtype=np.float64) -> Matrix:
    """Synthetic feature matrix with tunable token-to-token correlation.

    Row 0 is Gaussian; row t is rho * row(t-1) + sqrt(1-rho^2) * noise,
    except that with probability jump_prob the row is fully resampled
    (emulating a phoneme boundary). Deterministic per (seed, params).
    """
    if not 0.0 <= rho <= 1.0 or not 0.0 <= jump_prob <= 1.0:
        raise ShapeError("rho and jump_prob must lie in [0, 1]")
    if seq_tokens < 1 or feature_dim < 1:
        raise ShapeError("seq_tokens and feature_dim must be positive")
    noise = _tensor_stream(seed, "features.noise", seq_tokens * feature_dim)
    noise = noise.reshape(seq_tokens, feature_dim)
    jumps = _uniforms((seed ^ _fnv1a64("features.jump")) & _MASK64, max(seq_tokens - 1, 1))
    out = np.empty((seq_tokens, feature_dim), dtype=np.float64)
    out[0] = noise[0]
    blend = np.sqrt(1.0 - rho * rho)
    for t in range(1, seq_tokens):
        if jumps[t - 1] < jump_prob:
            out[t] = noise[t]
        else:
            out[t] = rho * out[t - 1] + blend * noise[t]
    return out.astype(np.float32).astype(dtype)


# --------------------------------------------------------------------------
# weight container


def save_weights(path, weights: EncoderWeights, config: ModelConfig) -> None:
    weights.validate(config)
    entries = []
    chunks = []
    offset = 0
    for name, arr in weights.iter_tensors():
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"dtype": "f32le", "config": config.to_dict(), "tensors": entries},
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_WEIGHT_MAGIC)
        f.write(struct.pack("<I", _VERSION))
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for raw in chunks:
            f.write(raw)


def load_weights(path) -> tuple[EncoderWeights, ModelConfig]:
    """Read and fully validate a weight container."""
    blob = Path(path).read_bytes()
    if len(blob) < 16:
        raise TruncatedPayloadError(f"{path}: file shorter than the fixed header")
    if blob[:4] != _WEIGHT_MAGIC:
        raise BadMagicError(f"{path}: bad magic {blob[:4]!r}, expected {_WEIGHT_MAGIC!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != _VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported container version {version}")
    (header_len,) = struct.unpack_from("<Q", blob, 8)
    if 16 + header_len > len(blob):
        raise TruncatedPayloadError(f"{path}: header length {header_len} overruns the file")
    try:
        header = json.loads(blob[16:16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: header is not valid JSON ({e})") from e
    if not isinstance(header, dict) or set(header) != {"dtype", "config", "tensors"}:
        raise FormatError(f"{path}: header must carry exactly dtype/config/tensors")
    if header["dtype"] != "f32le":
        raise FormatError(f"{path}: unsupported payload dtype {header['dtype']!r}")
    try:
        config = ModelConfig.from_dict(header["config"])
    except (TypeError, ShapeError) as e:
        raise FormatError(f"{path}: invalid config in header ({e})") from e

    payload = blob[16 + header_len:]
    entries = header["tensors"]
    if not isinstance(entries, list) or not entries:
        raise FormatError(f"{path}: header lists no tensors")

    names = [e.get("name") for e in entries]
    if len(set(names)) != len(names):
        raise FormatError(f"{path}: duplicate tensor names in header")

    tensors: dict[str, np.ndarray] = {}
    cursor = 0
    for e in entries:
        name, shape, offset = e.get("name"), e.get("shape"), e.get("offset")
        if (not isinstance(name, str) or not isinstance(shape, list) or len(shape) != 2
                or not all(isinstance(s, int) and s > 0 for s in shape)
                or not isinstance(offset, int) or offset < 0):
            raise FormatError(f"{path}: malformed tensor entry {e!r}")
        want = expected_shape(name, config)
        if tuple(shape) != want:
            raise FormatError(f"{path}: tensor {name!r} has shape {tuple(shape)}, expected {want}")
        nbytes = shape[0] * shape[1] * 4
        if offset != cursor:
            raise FormatError(f"{path}: tensor {name!r} at offset {offset} does not tile the payload")
        if offset + nbytes > len(payload):
            raise TruncatedPayloadError(f"{path}: tensor {name!r} overruns the payload")
        arr = np.frombuffer(payload, dtype="<f4", count=shape[0] * shape[1], offset=offset)
        tensors[name] = arr.reshape(shape[0], shape[1]).astype(config.np_dtype)
        cursor = offset + nbytes
    if cursor != len(payload):
        raise FormatError(f"{path}: payload has {len(payload) - cursor} trailing bytes")

    weights = weights_from_tensors(tensors, config)
    try:
        weights.validate(config)
    except (ShapeError, NumericError) as e:
        raise FormatError(f"{path}: {e}") from e
    return weights, config


# --------------------------------------------------------------------------
# feature files and CSV matrices


def save_features(path, m: Matrix) -> None:
    """Write a DKWF binary feature file (binary32 payload)."""
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"features must be a non-empty 2-D matrix, got {m.shape}")
    with open(path, "wb") as f:
        f.write(_FEATURE_MAGIC)
        f.write(struct.pack("<III", _VERSION, m.shape[0], m.shape[1]))
        f.write(np.ascontiguousarray(m, dtype="<f4").tobytes())


def save_matrix_csv(path, m: Matrix) -> None:
    """Write a matrix as CSV: a "rows,cols" line, then one row per line."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{m.shape[0]},{m.shape[1]}\n")
        for row in m:
            f.write(",".join(repr(float(v)) for v in row))
            f.write("\n")


def load_matrix_csv(path, dtype=np.float64) -> Matrix:
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"{path}: empty CSV matrix")
    head = lines[0].split(",")
    if len(head) != 2:
        raise FormatError(f"{path}: first CSV line must be 'rows,cols'")
    try:
        rows, cols = int(head[0]), int(head[1])
    except ValueError as e:
        raise FormatError(f"{path}: non-integer dimensions in CSV header") from e
    if rows < 1 or cols < 1 or len(lines) - 1 != rows:
        raise FormatError(f"{path}: CSV declares {rows} rows but carries {len(lines) - 1}")
    out = np.empty((rows, cols), dtype=np.float64)
    for i, ln in enumerate(lines[1:]):
        parts = ln.split(",")
        if len(parts) != cols:
            raise FormatError(f"{path}: row {i} has {len(parts)} values, expected {cols}")
        try:
            out[i] = [float(p) for p in parts]
        except ValueError as e:
            raise FormatError(f"{path}: non-numeric value in row {i}") from e
    if not np.all(np.isfinite(out)):
        raise FormatError(f"{path}: non-finite values in CSV matrix")
    return out.astype(dtype)


def load_features(path, dtype=np.float64) -> Matrix:
    """Load features from DKWF binary or the CSV alternative (sniffed)."""
    blob = Path(path).read_bytes()
    if blob[:4] == _FEATURE_MAGIC:
        if len(blob) < 16:
            raise TruncatedPayloadError(f"{path}: file shorter than the DKWF header")
        version, rows, cols = struct.unpack_from("<III", blob, 4)
        if version != _VERSION:
            raise UnsupportedVersionError(f"{path}: unsupported feature-file version {version}")
        if rows < 1 or cols < 1:
            raise FormatError(f"{path}: degenerate feature shape {rows}x{cols}")
        need = 16 + rows * cols * 4
        if len(blob) != need:
            raise TruncatedPayloadError(f"{path}: expected {need} bytes, found {len(blob)}")
        arr = np.frombuffer(blob, dtype="<f4", count=rows * cols, offset=16)
        out = arr.reshape(rows, cols).astype(dtype)
        if not np.all(np.isfinite(out)):
            raise FormatError(f"{path}: non-finite feature values")
        return out
    return load_matrix_csv(path, dtype=dtype)


# --------------------------------------------------------------------------
# reports


@dataclass
class RunRecord:
    """One evaluated (input, thresholds) pair, ready for emission."""

    input_id: str
    mode: str
    thresholds: ThresholdConfig
    predicted_class: int
    report: MacReport
    logits: np.ndarray | None = None
    logit_deviation: float | None = None
    label: int | None = None
    pareto: bool | None = None


CSV_COLUMNS = [
    "input_id", "theta_x", "theta_q", "theta_k", "theta_att", "theta_softmax",
    "theta_head", "pct_proj", "pct_scores", "pct_context", "pct_headproj",
    "pct_total", "speedup", "predicted_class",
]

SWEEP_EXTRA_COLUMNS = ["logit_dev", "accuracy", "pareto"]


def csv_row(record: RunRecord, sweep: bool = False) -> str:
    r = record.report
    t = record.thresholds
    cells = [
        record.input_id,
        *(f"{v:g}" for v in t.as_tuple()),
        f"{100.0 * r.stage_fraction_mean(StageId.PROJ_QKV):.2f}",
        f"{100.0 * r.stage_fraction_mean(StageId.ATT_SCORES):.2f}",
        f"{100.0 * r.stage_fraction_mean(StageId.ATT_CONTEXT):.2f}",
        f"{100.0 * r.stage_fraction_mean(StageId.HEAD_PROJ):.2f}",
        f"{100.0 * r.total_fraction_layer_mean():.2f}",
        f"{r.speedup():.2f}",
        str(record.predicted_class),
    ]
    if sweep:
        cells.append("" if record.logit_deviation is None else f"{record.logit_deviation:.6e}")
        cells.append("" if record.label is None else str(int(record.label == record.predicted_class)))
        cells.append("" if record.pareto is None else str(int(record.pareto)))
    return ",".join(cells)


def emit_report(record: RunRecord, fmt: str, path) -> None:
    """Write one run's report as CSV (fixed schema) or JSON (full detail)."""
    if fmt == "csv":
        body = ",".join(CSV_COLUMNS) + "\n" + csv_row(record) + "\n"
        Path(path).write_text(body, encoding="utf-8")
    elif fmt == "json":
        doc = {
            "input_id": record.input_id,
            "mode": record.mode,
            "thresholds": record.thresholds.as_dict(),
            "predicted_class": record.predicted_class,
            "logits": None if record.logits is None else [float(v) for v in record.logits],
            "logit_deviation": record.logit_deviation,
            "report": record.report.to_dict(),
        }
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    else:
        raise FormatError(f"unknown report format {fmt!r}")
