"""Encoder-decoder transformer built on the autodiff tensor module.

Attention is scaled dot-product over the last two axes, so one code path
serves single sequences, batches, and per-head batches. Blocks use
pre-layer-norm residuals. Checkpoints are a small versioned binary container
holding the config and every named parameter as little-endian float64.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .tensor import (
    Parameter,
    ShapeError,
    Tensor,
    add,
    concat_last,
    dropout,
    embedding,
    layer_norm,
    matmul,
    mul,
    relu,
    reshape,
    softmax_rows,
    swap_axes,
    transpose,
)

MASK_VALUE = -1e9


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int = 128
    num_heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    d_ff: int = 512
    max_positions: int = 512
    dropout: float = 0.1
    pad_id: int = 0
    bos_id: int = 2
    eos_id: int = 3
    share_embeddings: bool = True

    def __post_init__(self):
        if self.d_model % self.num_heads != 0:
            raise ValueError(
                f"d_model={self.d_model} not divisible by num_heads={self.num_heads}"
            )
        for name in ("vocab_size", "d_model", "num_heads", "enc_layers",
                     "dec_layers", "d_ff", "max_positions"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def d_head(self) -> int:
        return self.d_model // self.num_heads


def positional_encoding(max_len: int, d_model: int) -> Tensor:
    """Fixed sinusoidal position table: sin on even columns, cos on odd."""
    if max_len <= 0 or d_model <= 0:
        raise ValueError("positional_encoding dims must be positive")
    if d_model % 2 != 0:
        raise ValueError(f"d_model must be even, got {d_model}")
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    i = np.arange(0, d_model, 2, dtype=np.float64)
    angles = pos / np.power(10000.0, i / d_model)
    table = np.zeros((max_len, d_model))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return Tensor(table)


def attention(q, k, v, mask=None) -> Tensor:
    """softmax(q k^T / sqrt(d)) v over the last two axes.

    The scale is the square root of q's column count. mask, if given, is added
    to the raw scores (large negative entries forbid positions).
    """
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention: k rows {k.shape} != v rows {v.shape}")
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"attention: q cols {q.shape} != k cols {k.shape}")
    scale = 1.0 / np.sqrt(q.shape[-1])
    scores = mul(matmul(q, transpose(k)), scale)
    if mask is not None:
        scores = add(scores, mask)
    return matmul(softmax_rows(scores), v)


class MultiHeadParams:
    """Per-head query/key/value projections plus the shared output projection."""

    def __init__(self, d_model: int, num_heads: int, rng: np.random.Generator, prefix: str):
        d_head = d_model // num_heads
        self.num_heads = num_heads
        self.d_model = d_model
        self.wq = [
            Parameter(_xavier(rng, d_model, d_head), f"{prefix}.wq{i}")
            for i in range(num_heads)
        ]
        self.wk = [
            Parameter(_xavier(rng, d_model, d_head), f"{prefix}.wk{i}")
            for i in range(num_heads)
        ]
        self.wv = [
            Parameter(_xavier(rng, d_model, d_head), f"{prefix}.wv{i}")
            for i in range(num_heads)
        ]
        self.wo = Parameter(_xavier(rng, d_model, d_model), f"{prefix}.wo")

    def parameters(self) -> list[Parameter]:
        return [*self.wq, *self.wk, *self.wv, self.wo]


def multi_head(x_q, params: MultiHeadParams, mask=None, x_kv=None) -> Tensor:
    """Multi-head attention: project per head, attend, concatenate, project out.

    x_kv defaults to x_q (self-attention); pass the encoder output for
    cross-attention. Heads are evaluated together by stacking them on a
    leading axis, which is numerically identical to looping per head.
    """
    if x_kv is None:
        x_kv = x_q
    if x_q.shape[-1] != params.d_model:
        raise ShapeError(f"multi_head: input width {x_q.shape} != {params.d_model}")
    h, dh = params.num_heads, params.d_model // params.num_heads

    def project(x, weights):
        packed = matmul(x, concat_last(weights))  # (..., m, d_model)
        split = reshape(packed, (*x.shape[:-1], h, dh))
        return swap_axes(split, -3, -2)  # (..., h, m, d_head)

    q, k, v = project(x_q, params.wq), project(x_kv, params.wk), project(x_kv, params.wv)
    heads = attention(q, k, v, mask)  # (..., h, m, d_head)
    merged = reshape(swap_axes(heads, -3, -2), (*x_q.shape[:-1], params.d_model))
    return matmul(merged, params.wo)


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class _LayerNormParams:
    def __init__(self, d: int, prefix: str):
        self.gain = Parameter(np.ones(d), f"{prefix}.gain")
        self.bias = Parameter(np.zeros(d), f"{prefix}.bias")

    def __call__(self, x) -> Tensor:
        return layer_norm(x, self.gain, self.bias)

    def parameters(self) -> list[Parameter]:
        return [self.gain, self.bias]


class _FeedForward:
    def __init__(self, d_model: int, d_ff: int, rng, prefix: str):
        self.w1 = Parameter(_xavier(rng, d_model, d_ff), f"{prefix}.w1")
        self.b1 = Parameter(np.zeros(d_ff), f"{prefix}.b1")
        self.w2 = Parameter(_xavier(rng, d_ff, d_model), f"{prefix}.w2")
        self.b2 = Parameter(np.zeros(d_model), f"{prefix}.b2")

    def __call__(self, x) -> Tensor:
        return add(matmul(relu(add(matmul(x, self.w1), self.b1)), self.w2), self.b2)

    def parameters(self) -> list[Parameter]:
        return [self.w1, self.b1, self.w2, self.b2]


class _EncoderLayer:
    def __init__(self, cfg: ModelConfig, rng, prefix: str):
        self.ln1 = _LayerNormParams(cfg.d_model, f"{prefix}.ln1")
        self.attn = MultiHeadParams(cfg.d_model, cfg.num_heads, rng, f"{prefix}.attn")
        self.ln2 = _LayerNormParams(cfg.d_model, f"{prefix}.ln2")
        self.ffn = _FeedForward(cfg.d_model, cfg.d_ff, rng, f"{prefix}.ffn")
        self.rate = cfg.dropout

    def __call__(self, x, mask, rng) -> Tensor:
        x = add(x, dropout(multi_head(self.ln1(x), self.attn, mask), self.rate, rng))
        return add(x, dropout(self.ffn(self.ln2(x)), self.rate, rng))

    def parameters(self) -> list[Parameter]:
        return [
            *self.ln1.parameters(), *self.attn.parameters(),
            *self.ln2.parameters(), *self.ffn.parameters(),
        ]


class _DecoderLayer:
    def __init__(self, cfg: ModelConfig, rng, prefix: str):
        self.ln1 = _LayerNormParams(cfg.d_model, f"{prefix}.ln1")
        self.self_attn = MultiHeadParams(cfg.d_model, cfg.num_heads, rng, f"{prefix}.self_attn")
        self.ln2 = _LayerNormParams(cfg.d_model, f"{prefix}.ln2")
        self.cross_attn = MultiHeadParams(cfg.d_model, cfg.num_heads, rng, f"{prefix}.cross_attn")
        self.ln3 = _LayerNormParams(cfg.d_model, f"{prefix}.ln3")
        self.ffn = _FeedForward(cfg.d_model, cfg.d_ff, rng, f"{prefix}.ffn")
        self.rate = cfg.dropout

    def __call__(self, x, enc_out, self_mask, cross_mask, rng) -> Tensor:
        x = add(x, dropout(multi_head(self.ln1(x), self.self_attn, self_mask), self.rate, rng))
        x = add(
            x,
            dropout(
                multi_head(self.ln2(x), self.cross_attn, cross_mask, x_kv=enc_out),
                self.rate,
                rng,
            ),
        )
        return add(x, dropout(self.ffn(self.ln3(x)), self.rate, rng))

    def parameters(self) -> list[Parameter]:
        return [
            *self.ln1.parameters(), *self.self_attn.parameters(),
            *self.ln2.parameters(), *self.cross_attn.parameters(),
            *self.ln3.parameters(), *self.ffn.parameters(),
        ]


class TransformerModel:
    """Token embedding + sinusoidal positions + encoder/decoder stacks."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        d = config.d_model
        self.embed = Parameter(
            rng.normal(0.0, 1.0 / np.sqrt(d), size=(config.vocab_size, d)), "embed"
        )
        self.positions = positional_encoding(config.max_positions, d)
        self.enc_layers = [
            _EncoderLayer(config, rng, f"enc{i}") for i in range(config.enc_layers)
        ]
        self.dec_layers = [
            _DecoderLayer(config, rng, f"dec{i}") for i in range(config.dec_layers)
        ]
        self.enc_norm = _LayerNormParams(d, "enc_norm")
        self.dec_norm = _LayerNormParams(d, "dec_norm")
        if config.share_embeddings:
            self.out_proj = None
        else:
            self.out_proj = Parameter(_xavier(rng, d, config.vocab_size), "out_proj")
        self._parameters = self._collect_parameters()

    def _collect_parameters(self) -> list[Parameter]:
        params: list[Parameter] = [self.embed]
        for layer in self.enc_layers:
            params.extend(layer.parameters())
        params.extend(self.enc_norm.parameters())
        for layer in self.dec_layers:
            params.extend(layer.parameters())
        params.extend(self.dec_norm.parameters())
        if self.out_proj is not None:
            params.append(self.out_proj)
        names = [p.name for p in params]
        if len(set(names)) != len(names) or len(set(map(id, params))) != len(params):
            raise RuntimeError("parameter registered more than once")
        return params

    def parameters(self) -> list[Parameter]:
        return list(self._parameters)

    def zero_grads(self) -> None:
        for p in self._parameters:
            p.zero_grad()

    # -- masks ----------------------------------------------------------

    def _pad_mask(self, ids: np.ndarray) -> np.ndarray:
        """(B, 1, 1, m) additive mask hiding [PAD] key positions."""
        return np.where(ids == self.config.pad_id, MASK_VALUE, 0.0)[:, None, None, :]

    @staticmethod
    def _causal_mask(t: int) -> np.ndarray:
        return np.triu(np.full((t, t), MASK_VALUE), k=1)

    @staticmethod
    def _as_batch(ids) -> tuple[np.ndarray, bool]:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            return ids[None, :], True
        if ids.ndim == 2:
            return ids, False
        raise ShapeError(f"token ids must be 1-d or 2-d, got shape {ids.shape}")

    def _check_ids(self, ids: np.ndarray, what: str) -> None:
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise ShapeError(
                f"{what} id out of range [0, {self.config.vocab_size})"
            )
        if ids.shape[-1] > self.config.max_positions:
            raise ShapeError(
                f"{what} length {ids.shape[-1]} exceeds max positions "
                f"{self.config.max_positions}"
            )

    def _embed_sequence(self, ids: np.ndarray, rng) -> Tensor:
        x = mul(embedding(self.embed, ids), np.sqrt(self.config.d_model))
        pos = Tensor(self.positions.data[: ids.shape[-1]])
        return dropout(add(x, pos), self.config.dropout, rng)

    # -- forward passes --------------------------------------------------

    def encode(self, input_ids, rng=None) -> tuple[Tensor, np.ndarray]:
        """Returns (encoder output, batched input ids)."""
        ids, _ = self._as_batch(input_ids)
        self._check_ids(ids, "input")
        mask = self._pad_mask(ids)
        x = self._embed_sequence(ids, rng)
        for layer in self.enc_layers:
            x = layer(x, mask, rng)
        return self.enc_norm(x), ids

    def decode(self, enc_out: Tensor, src_ids: np.ndarray, dec_input_ids, rng=None) -> Tensor:
        """Teacher-forced decoder pass producing next-token logits.

        Decoder self-attention is causally masked; [PAD] positions of both
        streams are hidden as attention keys.
        """
        dec_ids, squeeze = self._as_batch(dec_input_ids)
        self._check_ids(dec_ids, "decoder input")
        t = dec_ids.shape[-1]
        self_mask = self._causal_mask(t) + self._pad_mask(dec_ids)
        cross_mask = self._pad_mask(src_ids)
        x = self._embed_sequence(dec_ids, rng)
        for layer in self.dec_layers:
            x = layer(x, enc_out, self_mask, cross_mask, rng)
        x = self.dec_norm(x)
        if self.out_proj is not None:
            logits = matmul(x, self.out_proj)
        else:
            logits = matmul(x, transpose(self.embed))
        if squeeze:
            logits = reshape(logits, logits.shape[1:])
        return logits

    def forward(self, input_ids, dec_input_ids, rng=None) -> Tensor:
        """Full pass: logits over the vocabulary for every decoder position."""
        enc_out, src_ids = self.encode(input_ids, rng)
        return self.decode(enc_out, src_ids, dec_input_ids, rng)

    # -- persistence ------------------------------------------------------

    def save(self, path) -> None:
        tensors = [(p.name, p.data) for p in self._parameters]
        write_container(path, {"config": asdict(self.config)}, tensors)

    @classmethod
    def load(cls, path) -> "TransformerModel":
        meta, arrays = read_container(path)
        if meta.get("config") is None:
            raise ValueError(f"checkpoint {path} carries no model config")
        model = cls(ModelConfig(**meta["config"]), seed=0)
        expected = [p.name for p in model._parameters]
        if expected != list(arrays):
            raise ValueError(f"checkpoint {path} parameter names do not match config")
        for p in model._parameters:
            stored = arrays[p.name]
            if stored.shape != p.data.shape:
                raise ValueError(
                    f"checkpoint {path}: {p.name} has shape {stored.shape}, "
                    f"expected {p.data.shape}"
                )
            p.data = stored
            p.zero_grad()
        return model


# ---------------------------------------------------------------------------
# versioned binary container: magic, version, JSON header, raw float64 blobs

_MAGIC = b"QGTC"
_CONTAINER_VERSION = 1


def write_container(path, meta: dict, tensors: list[tuple[str, np.ndarray]]) -> None:
    """Atomically write named float64 arrays plus a JSON header."""
    header = {
        "meta": meta,
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in tensors],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(np.uint32(_CONTAINER_VERSION).tobytes())
        fh.write(np.uint32(len(blob)).tobytes())
        fh.write(blob)
        for _, arr in tensors:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    os.replace(tmp, path)


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path} is not a checkpoint container")
        version = int(np.frombuffer(fh.read(4), dtype=np.uint32)[0])
        if version != _CONTAINER_VERSION:
            raise ValueError(f"{path}: unsupported container version {version}")
        header_len = int(np.frombuffer(fh.read(4), dtype=np.uint32)[0])
        header = json.loads(fh.read(header_len).decode("utf-8"))
        arrays: dict[str, np.ndarray] = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            n = int(np.prod(shape)) if shape else 1
            raw = fh.read(8 * n)
            if len(raw) != 8 * n:
                raise ValueError(f"{path}: truncated tensor {entry['name']!r}")
            arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return header["meta"], arrays
