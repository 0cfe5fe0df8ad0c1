"""Desk-scale transformer pair: a bidirectional encoder with a 4-class head
and a causal decoder with a weight-tied LM head.

Both share one parameter store keyed by canonical tensor names; blocks are
pre-layer-norm with learned positional embeddings.  Checkpoints use a small
binary container ("WPLM" magic, little-endian float64 buffers) plus a JSON
sidecar carrying the config, tensor table and vocab hash.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, asdict

import numpy as np

from . import tensorcore as tc
from .tensorcore import Tensor

NEG_INF = -1e9
CHECKPOINT_MAGIC = b"WPLM"
CHECKPOINT_VERSION = 1


class ModelError(ValueError):
    pass


@dataclass
class ModelConfig:
    vocab_size: int
    arch: str = "encoder"  # "encoder" | "decoder"
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ffn: int = 256
    max_len: int = 256
    n_classes: int = 4
    dropout: float = 0.0
    rel_window: int = 8  # relative-position bias clip window; buckets = 2w+1

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ModelError("d_model must be divisible by n_heads")
        if self.arch not in ("encoder", "decoder"):
            raise ModelError(f"unknown arch: {self.arch!r}")


def expected_parameter_count(cfg: ModelConfig) -> int:
    """Closed-form total: embeddings + per-layer attention/FFN/norms +
    final norm + (encoder only) classifier head.  The decoder LM head is
    tied to the token embedding and adds nothing."""
    d, f = cfg.d_model, cfg.d_ffn
    per_layer = (4 * (d * d + d) + 2 * (2 * d) + (d * f + f) + (f * d + d)
                 + cfg.n_heads * (2 * cfg.rel_window + 1))
    total = cfg.vocab_size * d + cfg.max_len * d + cfg.n_layers * per_layer + 2 * d
    if cfg.arch == "encoder":
        total += d * cfg.n_classes + cfg.n_classes
    return total


class ModelParams:
    """Ordered name -> Tensor store; insertion order is the canonical
    checkpoint order."""

    def __init__(self, config: ModelConfig, tensors: dict, lora_cfg=None):
        self.config = config
        self.tensors = tensors
        self.lora_cfg = lora_cfg

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def count_parameters(self, trainable_only: bool = False) -> int:
        return sum(t.values.size for t in self.tensors.values()
                   if t.requires_grad or not trainable_only)

    def trainable(self) -> list:
        return [t for t in self.tensors.values() if t.requires_grad]

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def clone(self) -> "ModelParams":
        copies = {}
        for name, t in self.tensors.items():
            c = Tensor(t.values.copy(), requires_grad=t.requires_grad, name=name)
            copies[name] = c
        return ModelParams(self.config, copies, self.lora_cfg)


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    rng = np.random.Generator(np.random.PCG64(seed))
    tensors: dict = {}

    def param(name, shape, init="normal"):
        if init == "normal":
            vals = rng.normal(0.0, 0.02, size=shape)
        elif init == "zeros":
            vals = np.zeros(shape)
        elif init == "ones":
            vals = np.ones(shape)
        tensors[name] = Tensor(vals, requires_grad=True, name=name)

    d, f = cfg.d_model, cfg.d_ffn
    param("tok_emb", (cfg.vocab_size, d))
    param("pos_emb", (cfg.max_len, d))
    for i in range(cfg.n_layers):
        p = f"layers.{i}"
        param(f"{p}.ln1.gain", (d,), "ones")
        param(f"{p}.ln1.bias", (d,), "zeros")
        for proj in ("wq", "wk", "wv", "wo"):
            param(f"{p}.attn.{proj}.weight", (d, d))
            param(f"{p}.attn.{proj}.bias", (d,), "zeros")
        param(f"{p}.attn.rel_bias", (cfg.n_heads, 2 * cfg.rel_window + 1), "zeros")
        param(f"{p}.ln2.gain", (d,), "ones")
        param(f"{p}.ln2.bias", (d,), "zeros")
        param(f"{p}.ffn.w1.weight", (d, f))
        param(f"{p}.ffn.w1.bias", (f,), "zeros")
        param(f"{p}.ffn.w2.weight", (f, d))
        param(f"{p}.ffn.w2.bias", (d,), "zeros")
    param("ln_f.gain", (d,), "ones")
    param("ln_f.bias", (d,), "zeros")
    if cfg.arch == "encoder":
        param("head.weight", (d, cfg.n_classes))
        param("head.bias", (cfg.n_classes,), "zeros")
    return ModelParams(cfg, tensors)


def attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None,
              bias: Tensor | None = None) -> Tensor:
    """Scaled dot-product attention over [b, h, t, dh] tensors; ``mask`` is
    an additive array broadcastable to [b, h, t, t] (0 keeps, -1e9 drops);
    ``bias`` is an optional learnable additive score term such as the
    relative-position bias."""
    dh = q.shape[-1]
    scores = tc.scale(tc.matmul(q, tc.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    if bias is not None:
        scores = tc.add(scores, bias)
    if mask is not None:
        scores = tc.add(scores, Tensor(mask))
    return tc.matmul(tc.softmax(scores), v)


def _linear(params: ModelParams, name: str, x: Tensor) -> Tensor:
    """x @ W + b on the trailing axis, with an optional LoRA branch
    W x + (alpha/r) B(Ax) when adapters are attached to this projection."""
    shape = x.shape
    d_in = shape[-1]
    x2 = tc.reshape(x, (-1, d_in))
    w = params[f"{name}.weight"]
    y = tc.matmul(x2, w)
    a_name = f"{name}.lora_A"
    if a_name in params:
        lc = params.lora_cfg
        a = params[a_name]  # [r, d_in]
        b = params[f"{name}.lora_B"]  # [d_out, r]
        delta = tc.matmul(tc.matmul(x2, tc.transpose(a, (1, 0))), tc.transpose(b, (1, 0)))
        y = tc.add(y, tc.scale(delta, lc.alpha / lc.rank))
    y = tc.add(y, params[f"{name}.bias"])
    return tc.reshape(y, shape[:-1] + (y.shape[-1],))


def _block(params: ModelParams, i: int, x: Tensor, mask: np.ndarray) -> Tensor:
    cfg = params.config
    b, t, d = x.shape
    h, dh = cfg.n_heads, cfg.d_model // cfg.n_heads
    p = f"layers.{i}"

    def split_heads(z):
        return tc.transpose(tc.reshape(z, (b, t, h, dh)), (0, 2, 1, 3))

    normed = tc.layer_norm(x, params[f"{p}.ln1.gain"], params[f"{p}.ln1.bias"])
    q = split_heads(_linear(params, f"{p}.attn.wq", normed))
    k = split_heads(_linear(params, f"{p}.attn.wk", normed))
    v = split_heads(_linear(params, f"{p}.attn.wv", normed))
    w = cfg.rel_window
    offsets = np.clip(np.arange(t)[:, None] - np.arange(t)[None, :], -w, w) + w
    bias = tc.gather_rows(params[f"{p}.attn.rel_bias"], offsets)
    att = attention(q, k, v, mask, bias)
    att = tc.reshape(tc.transpose(att, (0, 2, 1, 3)), (b, t, d))
    x = tc.add(x, _linear(params, f"{p}.attn.wo", att))

    normed = tc.layer_norm(x, params[f"{p}.ln2.gain"], params[f"{p}.ln2.bias"])
    hidden = tc.gelu(_linear(params, f"{p}.ffn.w1", normed))
    return tc.add(x, _linear(params, f"{p}.ffn.w2", hidden))


def _embed(params: ModelParams, ids: np.ndarray) -> Tensor:
    cfg = params.config
    b, t = ids.shape
    if t > cfg.max_len:
        raise ModelError(f"sequence length {t} exceeds max_len {cfg.max_len}")
    if ids.max() >= cfg.vocab_size:
        raise ModelError("token id out of vocab range")
    tok = tc.embedding(params["tok_emb"], ids)
    pos = tc.embedding(params["pos_emb"], np.tile(np.arange(t), (b, 1)))
    return tc.add(tok, pos)


def _final_norm(params: ModelParams, x: Tensor) -> Tensor:
    return tc.layer_norm(x, params["ln_f.gain"], params["ln_f.bias"])


def encoder_forward(params: ModelParams, ids: np.ndarray, attention_mask: np.ndarray) -> Tensor:
    """Bidirectional encoding with PAD keys masked out; classification
    logits come from the [CLS] (position 0) representation."""
    if params.config.arch != "encoder":
        raise ModelError("encoder_forward requires an encoder model")
    ids = np.asarray(ids)
    pad_mask = np.where(np.asarray(attention_mask)[:, None, None, :] == 1, 0.0, NEG_INF)
    x = _embed(params, ids)
    for i in range(params.config.n_layers):
        x = _block(params, i, x, pad_mask)
    pooled = tc.select_position(_final_norm(params, x), 0)
    return tc.add(tc.matmul(pooled, params["head.weight"]), params["head.bias"])


def decoder_forward(params: ModelParams, ids: np.ndarray,
                    attention_mask: np.ndarray | None = None) -> Tensor:
    """Causal decoding: position t attends to positions <= t.  Logits are
    tied to the token embedding."""
    if params.config.arch != "decoder":
        raise ModelError("decoder_forward requires a decoder model")
    ids = np.asarray(ids)
    b, t = ids.shape
    causal = np.where(np.tril(np.ones((t, t))) == 1, 0.0, NEG_INF)[None, None, :, :]
    if attention_mask is not None:
        pad = np.where(np.asarray(attention_mask)[:, None, None, :] == 1, 0.0, NEG_INF)
        causal = causal + pad
    x = _embed(params, ids)
    for i in range(params.config.n_layers):
        x = _block(params, i, x, causal)
    x = _final_norm(params, x)
    flat = tc.matmul(tc.reshape(x, (b * t, params.config.d_model)),
                     tc.transpose(params["tok_emb"], (1, 0)))
    return tc.reshape(flat, (b, t, params.config.vocab_size))


def count_parameters(params: ModelParams, trainable_only: bool = False) -> int:
    return params.count_parameters(trainable_only)


# --- checkpoint container -------------------------------------------------

_ARCH_CODE = {"encoder": 0, "decoder": 1}
_ARCH_NAME = {v: k for k, v in _ARCH_CODE.items()}
_HEADER_FMT = "<4sIIIIIIIII"  # magic, version, 8 config ints


def save_checkpoint(params: ModelParams, path: str, vocab_sha256: str = "") -> None:
    cfg = params.config
    header = struct.pack(
        _HEADER_FMT, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, cfg.d_model, cfg.n_heads,
        cfg.n_layers, cfg.d_ffn, cfg.max_len, cfg.vocab_size, cfg.n_classes,
        _ARCH_CODE[cfg.arch])
    with open(path, "wb") as fh:
        fh.write(header)
        for t in params.tensors.values():
            fh.write(np.ascontiguousarray(t.values, dtype="<f8").tobytes())
    sidecar = {
        "config": asdict(cfg),
        "vocab_sha256": vocab_sha256,
        "lora": asdict(params.lora_cfg) if params.lora_cfg is not None else None,
        "tensors": [{"name": n, "shape": list(t.shape), "trainable": bool(t.requires_grad)}
                    for n, t in params.tensors.items()],
    }
    with open(path + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")


def load_checkpoint(path: str) -> tuple:
    """Returns (params, vocab_sha256)."""
    with open(path + ".json", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    cfg = ModelConfig(**sidecar["config"])
    with open(path, "rb") as fh:
        header = fh.read(struct.calcsize(_HEADER_FMT))
        magic, version, d, h, l, f, ml, v, c, arch = struct.unpack(_HEADER_FMT, header)
        if magic != CHECKPOINT_MAGIC:
            raise ModelError(f"bad checkpoint magic: {magic!r}")
        if version != CHECKPOINT_VERSION:
            raise ModelError(f"unsupported checkpoint version: {version}")
        if (d, h, l, f, ml, v, c, _ARCH_NAME[arch]) != (
                cfg.d_model, cfg.n_heads, cfg.n_layers, cfg.d_ffn, cfg.max_len,
                cfg.vocab_size, cfg.n_classes, cfg.arch):
            raise ModelError("checkpoint header disagrees with sidecar config")
        tensors: dict = {}
        for entry in sidecar["tensors"]:
            shape = tuple(entry["shape"])
            n_elem = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * n_elem)
            vals = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
            tensors[entry["name"]] = Tensor(vals, requires_grad=entry["trainable"],
                                            name=entry["name"])
    lora_cfg = None
    if sidecar.get("lora") is not None:
        from .lora import LoraConfig

        lora_cfg = LoraConfig(**sidecar["lora"])
    return ModelParams(cfg, tensors, lora_cfg), sidecar.get("vocab_sha256", "")
