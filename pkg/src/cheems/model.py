"""Decoder stack: pre-norm residual blocks in a 7:1 scan/attention
pattern with a product-key expert layer after every mixer.

One block is seven state-space mixers followed by one attention mixer,
each trailed by its expert layer; the attention mixer of the last block
is always the final mixer of the stack. Setting ``attn_free`` swaps the
attention mixer for an eighth state-space mixer (the recall-control
configuration), leaving everything else identical.
"""

from __future__ import annotations

import io
import json
import os
import struct
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from . import tensor as T
from .attention import AttnConfig, AttnLayerParams, attention_forward, init_attn_params
from .cdmmoe import CdmmoeConfig, CdmmoeParams, cdmmoe_forward, init_cdmmoe_params
from .errors import ConfigError, InputError
from .rope import RopeTable, build_rope_table
from .seeds import stream
from .ssd import POSITIONAL_MODES, SsdConfig, SsdLayerParams, init_ssd_params, ssd_layer_forward
from .tensor import Tensor

SSD_PER_BLOCK = 7

CHECKPOINT_MAGIC = b"CHMS"
CHECKPOINT_VERSION = 1
_DTYPE_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}


@dataclass
class ModelConfig:
    vocab_size: int = 64
    d_model: int = 256
    n_cheems_blocks: int = 1
    n_heads: int = 4
    head_dim: int = 64
    d_state: int = 64
    chunk_len: int = 64
    conv_width: int = 4
    d_shared: int = 512
    d_private: int = 128
    n_experts: int = 4096
    top_k: int = 16
    d_query: int = 128
    inner_d_state: Optional[int] = None  # attention's inner scan; defaults to d_state
    positional_mode: str = "rope"
    max_positions: int = 4096
    rope_base: float = 10000.0
    norm_eps: float = 1e-6
    tie_embeddings: bool = False
    attn_free: bool = False
    seed: int = 0

    def validate(self) -> None:
        for f in ("vocab_size", "d_model", "n_cheems_blocks", "n_heads", "head_dim",
                  "d_state", "chunk_len", "d_shared", "d_private", "d_query",
                  "max_positions"):
            if getattr(self, f) < 1:
                raise ConfigError(f"model config field {f} must be positive")
        if self.positional_mode not in POSITIONAL_MODES:
            raise ConfigError(f"positional_mode must be one of {POSITIONAL_MODES}, "
                              f"got {self.positional_mode!r}")
        if self.positional_mode == "rope" and self.d_state % 2 != 0:
            raise ConfigError("positional_mode 'rope' needs even d_state")
        if self.head_dim % 2 != 0:
            raise ConfigError("head_dim must be even (attention Q/K rotation)")

    def ssd_config(self) -> SsdConfig:
        return SsdConfig(d_model=self.d_model, n_heads=self.n_heads, head_dim=self.head_dim,
                         d_state=self.d_state, chunk_len=self.chunk_len,
                         conv_width=self.conv_width)

    def attn_config(self) -> AttnConfig:
        inner_s = self.inner_d_state if self.inner_d_state is not None else self.d_state
        return AttnConfig(d_model=self.d_model, n_heads=self.n_heads, head_dim=self.head_dim,
                          inner_d_state=inner_s, inner_chunk_len=self.chunk_len)

    def moe_config(self) -> CdmmoeConfig:
        return CdmmoeConfig(d_model=self.d_model, d_shared=self.d_shared,
                            d_private=self.d_private, n_experts=self.n_experts,
                            top_k=self.top_k, d_query=self.d_query)


def model_config_from_dict(d: dict) -> ModelConfig:
    known = {f.name for f in fields(ModelConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown model config key: {sorted(unknown)[0]}")
    cfg = ModelConfig(**d)
    cfg.validate()
    return cfg


@dataclass
class LayerSpec:
    kind: str  # "ssd" | "attn" | "moe"
    name: str
    norm_w: Tensor
    params: object


class CheemsModel:
    """Owns the parameter tensors and runs the forward pass."""

    def __init__(self, config: ModelConfig, dtype=np.float32):
        config.validate()
        self.config = config
        self.dtype = np.dtype(dtype)
        seed = config.seed
        rng = stream(seed, "init", "embed")
        self.embed = Tensor(rng.normal(0.0, 0.02, size=(config.vocab_size, config.d_model)),
                            dtype=dtype, requires_grad=True)
        self.layers: list[LayerSpec] = []
        # residual output projections shrink with depth so the embedding
        # signal is not drowned by random mixer outputs at init
        n_sublayers = 2 * (SSD_PER_BLOCK + 1) * config.n_cheems_blocks
        out_scale = 1.0 / np.sqrt(2.0 * n_sublayers)

        def norm_w():
            return Tensor(np.ones(config.d_model), dtype=dtype, requires_grad=True)

        for blk in range(config.n_cheems_blocks):
            n_ssd = SSD_PER_BLOCK + (1 if config.attn_free else 0)
            for j in range(n_ssd):
                name = f"block{blk}.ssd{j}"
                params = init_ssd_params(config.ssd_config(), config.positional_mode,
                                         seed, name, dtype=dtype, out_scale=out_scale)
                self.layers.append(LayerSpec("ssd", name, norm_w(), params))
                moe_name = f"block{blk}.moe{j}"
                self.layers.append(LayerSpec("moe", moe_name, norm_w(),
                                             init_cdmmoe_params(config.moe_config(), seed,
                                                                moe_name, dtype=dtype,
                                                                out_scale=out_scale)))
            if not config.attn_free:
                name = f"block{blk}.attn"
                self.layers.append(LayerSpec("attn", name, norm_w(),
                                             init_attn_params(config.attn_config(), seed,
                                                              name, dtype=dtype,
                                                              out_scale=out_scale)))
                moe_name = f"block{blk}.moe{SSD_PER_BLOCK}"
                self.layers.append(LayerSpec("moe", moe_name, norm_w(),
                                             init_cdmmoe_params(config.moe_config(), seed,
                                                                moe_name, dtype=dtype,
                                                                out_scale=out_scale)))

        self.final_norm_w = norm_w()
        if config.tie_embeddings:
            self.head = None
        else:
            rng = stream(seed, "init", "head")
            self.head = Tensor(rng.normal(0.0, 0.02, size=(config.d_model, config.vocab_size)),
                               dtype=dtype, requires_grad=True)

        self.rope_attn = build_rope_table(config.rope_base, config.head_dim,
                                          config.max_positions)
        self.rope_ssd = None
        if config.positional_mode == "rope":
            self.rope_ssd = build_rope_table(config.rope_base, config.d_state,
                                             config.max_positions)

    # ---- parameters ----------------------------------------------------

    def named_params(self) -> list[tuple[str, Tensor, bool]]:
        out = [("embed", self.embed, False)]
        for layer in self.layers:
            out.append((f"{layer.name}.norm", layer.norm_w, False))
            out.extend(layer.params.named_params(f"{layer.name}."))
        out.append(("final_norm", self.final_norm_w, False))
        if self.head is not None:
            out.append(("head", self.head, True))
        return out

    def param_count(self) -> int:
        return sum(t.size for _, t, _ in self.named_params())

    def zero_grads(self) -> None:
        for _, t, _ in self.named_params():
            t.zero_grad()

    def manifest(self) -> list[dict]:
        """Per-layer kind and parameter count, in execution order."""
        rows = [{"kind": "embed", "name": "embed", "params": self.embed.size}]
        for layer in self.layers:
            n = layer.norm_w.size + sum(t.size for _, t, _ in layer.params.named_params())
            rows.append({"kind": layer.kind, "name": layer.name, "params": n})
        rows.append({"kind": "final_norm", "name": "final_norm", "params": self.final_norm_w.size})
        rows.append({"kind": "head", "name": "head",
                     "params": 0 if self.head is None else self.head.size})
        return rows

    # ---- forward ---------------------------------------------------------

    def forward(self, tokens, usage: dict | None = None) -> Tensor:
        """Logits [batch, len, vocab]. A ``usage`` dict accumulates expert
        hit counts per mixture layer name."""
        tokens = np.asarray(tokens.data if isinstance(tokens, Tensor) else tokens)
        tokens = tokens.astype(np.int64, copy=False)
        if tokens.ndim != 2:
            raise InputError(f"forward: tokens must be [batch, len], got {tokens.shape}")
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.config.vocab_size):
            raise InputError(f"forward: token id out of range [0, {self.config.vocab_size})")
        if tokens.shape[1] > self.config.max_positions:
            raise InputError(f"forward: sequence length {tokens.shape[1]} exceeds "
                             f"max_positions {self.config.max_positions}")
        eps = self.config.norm_eps
        x = T.embedding(self.embed, tokens)
        for layer in self.layers:
            normed = T.rmsnorm(x, layer.norm_w, eps)
            if layer.kind == "ssd":
                y = ssd_layer_forward(normed, layer.params, self.config.positional_mode,
                                      self.rope_ssd)
            elif layer.kind == "attn":
                y = attention_forward(normed, layer.params, self.rope_attn)
            else:
                u = None
                if usage is not None:
                    u = usage.setdefault(layer.name,
                                         np.zeros(self.config.n_experts, dtype=np.int64))
                y = cdmmoe_forward(normed, layer.params, usage=u)
            x = T.add(x, y)
        x = T.rmsnorm(x, self.final_norm_w, eps)
        head = T.transpose(self.embed, (1, 0)) if self.head is None else self.head
        return T.matmul(x, head)

    def __call__(self, tokens) -> Tensor:
        return self.forward(tokens)


def build_model(config: ModelConfig, dtype=np.float32) -> CheemsModel:
    return CheemsModel(config, dtype=dtype)


# ---- checkpoints ---------------------------------------------------------


def config_json(config: ModelConfig) -> str:
    return json.dumps(asdict(config), sort_keys=True, separators=(",", ":"))


def save_checkpoint(model: CheemsModel, path: str) -> None:
    """Binary checkpoint; save -> load -> save is byte-identical."""
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    cfg = config_json(model.config).encode()
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    params = model.named_params()
    buf.write(struct.pack("<I", len(params)))
    for name, t, _ in params:
        nb = name.encode()
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", _DTYPE_TAGS[t.data.dtype]))
        buf.write(struct.pack("<B", t.ndim))
        buf.write(struct.pack(f"<{t.ndim}I", *t.shape))
        arr = t.data.astype(t.data.dtype.newbyteorder("<"), copy=False)
        buf.write(arr.tobytes())
    data = buf.getvalue()
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def load_checkpoint(path: str, dtype=None) -> CheemsModel:
    with open(path, "rb") as f:
        raw = f.read()
    buf = io.BytesIO(raw)
    magic = buf.read(4)
    if magic != CHECKPOINT_MAGIC:
        raise InputError(f"checkpoint {path}: bad magic {magic!r}")
    (version,) = struct.unpack("<I", buf.read(4))
    if version != CHECKPOINT_VERSION:
        raise InputError(f"checkpoint {path}: unsupported version {version}")
    (clen,) = struct.unpack("<I", buf.read(4))
    config = model_config_from_dict(json.loads(buf.read(clen).decode()))
    (n_params,) = struct.unpack("<I", buf.read(4))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n_params):
        (nlen,) = struct.unpack("<I", buf.read(4))
        name = buf.read(nlen).decode()
        (tag,) = struct.unpack("<B", buf.read(1))
        (ndim,) = struct.unpack("<B", buf.read(1))
        shape = struct.unpack(f"<{ndim}I", buf.read(4 * ndim))
        dt = _TAG_DTYPES[tag]
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(buf.read(count * dt.itemsize), dtype=dt.newbyteorder("<"))
        tensors[name] = arr.reshape(shape).astype(dt)
    model_dtype = dtype or (next(iter(tensors.values())).dtype if tensors else np.float32)
    model = CheemsModel(config, dtype=model_dtype)
    for name, t, _ in model.named_params():
        if name not in tensors:
            raise InputError(f"checkpoint {path}: missing tensor {name}")
        saved = tensors[name]
        if saved.shape != t.shape:
            raise InputError(f"checkpoint {path}: tensor {name} shape {saved.shape} vs {t.shape}")
        t.data = np.ascontiguousarray(saved.astype(model_dtype))
    return model
