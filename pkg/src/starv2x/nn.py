"""Network layers and the Q-network used by the learners.

Built entirely on the :mod:`starv2x.autodiff` kernel: dense layers, layer
normalization, swish, residual blocks, scaled dot-product attention and
multi-head attention, plus a binary checkpoint format.

The Q-network consumes a token matrix (one token per scene entity: VUE, V2V
pair, element group) and emits one Q-value vector per factored action
dimension.  The attention variant runs multi-head attention across tokens;
the vanilla variant flattens the tokens and keeps only the residual trunk.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, concat
from .errors import ShapeMismatch


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


# -- functional layers -----------------------------------------------------

def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return x @ w + b


def swish(x: Tensor) -> Tensor:
    return x * x.sigmoid()


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / (var + eps).sqrt() * gamma + beta


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Scaled dot-product attention softmax(q k^T / sqrt(d_k)) v."""
    d_k = q.shape[-1]
    if k.shape[-1] != d_k:
        raise ShapeMismatch(f"query dim {d_k} != key dim {k.shape[-1]}")
    scores = (q @ k.swap_last()) * (1.0 / np.sqrt(d_k))
    return scores.softmax(axis=-1) @ v


def mse(pred: Tensor, target: Tensor) -> Tensor:
    diff = pred - target
    return (diff * diff).mean()


# -- network specification -------------------------------------------------

@dataclass(frozen=True)
class NetworkSpec:
    token_count: int
    token_features: int
    embed_dim: int = 16
    n_res_blocks: int = 1
    attention_heads: int = 2
    head_dim: int = 8
    fusion_width: int = 32
    head_sizes: tuple[int, ...] = ()
    use_attention: bool = True

    def __post_init__(self):
        if self.use_attention and self.embed_dim % self.attention_heads != 0:
            raise ValueError("embed_dim must be divisible by attention_heads")
        if not self.head_sizes:
            raise ValueError("at least one output head is required")

    def to_dict(self) -> dict:
        return {
            "token_count": self.token_count,
            "token_features": self.token_features,
            "embed_dim": self.embed_dim,
            "n_res_blocks": self.n_res_blocks,
            "attention_heads": self.attention_heads,
            "head_dim": self.head_dim,
            "fusion_width": self.fusion_width,
            "head_sizes": list(self.head_sizes),
            "use_attention": self.use_attention,
        }

    @staticmethod
    def from_dict(d: dict) -> "NetworkSpec":
        d = dict(d)
        d["head_sizes"] = tuple(d["head_sizes"])
        return NetworkSpec(**d)


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> dict[str, Tensor]:
    """Uniform fan-in initialization of every parameter tensor."""
    d = spec.embed_dim
    p: dict[str, np.ndarray] = {}
    p["embed.w"] = uniform_init(rng, spec.token_features, (spec.token_features, d))
    p["embed.b"] = np.zeros(d)
    for r in range(spec.n_res_blocks):
        p[f"res{r}.w1"] = uniform_init(rng, d, (d, d))
        p[f"res{r}.b1"] = np.zeros(d)
        p[f"res{r}.ln_g"] = np.ones(d)
        p[f"res{r}.ln_b"] = np.zeros(d)
        p[f"res{r}.w2"] = uniform_init(rng, d, (d, d))
        p[f"res{r}.b2"] = np.zeros(d)
    if spec.use_attention:
        for h in range(spec.attention_heads):
            for name in ("q", "k", "v"):
                p[f"mha.{name}{h}"] = uniform_init(rng, d, (d, spec.head_dim))
        p["mha.out"] = uniform_init(rng, spec.attention_heads * spec.head_dim,
                                    (spec.attention_heads * spec.head_dim, d))
        p["mha.out_b"] = np.zeros(d)
    flat = spec.token_count * d
    p["fuse.w"] = uniform_init(rng, flat, (flat, spec.fusion_width))
    p["fuse.b"] = np.zeros(spec.fusion_width)
    for j, size in enumerate(spec.head_sizes):
        p[f"head{j}.w"] = uniform_init(rng, spec.fusion_width, (spec.fusion_width, size))
        p[f"head{j}.b"] = np.zeros(size)
    return {k: Tensor(v, requires_grad=True) for k, v in p.items()}


def _residual_block(x: Tensor, params: dict[str, Tensor], r: int) -> Tensor:
    h = dense(x, params[f"res{r}.w1"], params[f"res{r}.b1"])
    h = layer_norm(h, params[f"res{r}.ln_g"], params[f"res{r}.ln_b"])
    h = swish(h)
    h = dense(h, params[f"res{r}.w2"], params[f"res{r}.b2"])
    return h + x


def multi_head_attention(x: Tensor, params: dict[str, Tensor], n_heads: int) -> Tensor:
    """Per-head projections, scaled dot-product attention, concat, out-projection."""
    heads = []
    for h in range(n_heads):
        q = x @ params[f"mha.q{h}"]
        k = x @ params[f"mha.k{h}"]
        v = x @ params[f"mha.v{h}"]
        heads.append(attention(q, k, v))
    cat = heads[0] if len(heads) == 1 else concat(heads, axis=-1)
    return cat @ params["mha.out"] + params["mha.out_b"]


def forward(spec: NetworkSpec, params: dict[str, Tensor], tokens) -> list[Tensor]:
    """Forward pass; ``tokens`` has shape (batch, T, F) or (T, F).

    Returns one Q-value tensor of shape (batch, head_size) per action
    dimension.
    """
    x = tokens if isinstance(tokens, Tensor) else Tensor(np.asarray(tokens, dtype=float))
    squeeze = x.data.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
    if x.shape[-2:] != (spec.token_count, spec.token_features):
        raise ShapeMismatch(
            f"expected tokens (.., {spec.token_count}, {spec.token_features}), got {x.shape}")

    x = dense(x, params["embed.w"], params["embed.b"])
    for r in range(spec.n_res_blocks):
        x = _residual_block(x, params, r)
    if spec.use_attention:
        x = multi_head_attention(x, params, spec.attention_heads) + x
    batch = x.shape[0]
    x = x.reshape(batch, spec.token_count * spec.embed_dim)
    x = swish(dense(x, params["fuse.w"], params["fuse.b"]))
    outs = [dense(x, params[f"head{j}.w"], params[f"head{j}.b"])
            for j in range(len(spec.head_sizes))]
    if squeeze:
        outs = [o.reshape(o.shape[-1]) for o in outs]
    return outs


def copy_params(params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {k: Tensor(v.data.copy(), requires_grad=True) for k, v in params.items()}


def params_equal(a: dict[str, Tensor], b: dict[str, Tensor]) -> bool:
    return a.keys() == b.keys() and all(np.array_equal(a[k].data, b[k].data) for k in a)


# -- checkpoint format -----------------------------------------------------

_MAGIC = b"STARV2XCKPT"
_VERSION = 1


def save_checkpoint(path, spec: NetworkSpec, params: dict[str, Tensor]) -> None:
    """Bit-exact binary checkpoint: magic, version, spec header, tensors, crc32."""
    body = bytearray()
    header = json.dumps({"spec": spec.to_dict(),
                         "names": sorted(params.keys())}).encode()
    body += struct.pack("<I", len(header)) + header
    for name in sorted(params.keys()):
        arr = np.ascontiguousarray(params[name].data, dtype="<f8")
        shape = arr.shape
        body += struct.pack("<I", len(shape)) + struct.pack(f"<{len(shape)}q", *shape)
        body += arr.tobytes()
    blob = _MAGIC + struct.pack("<I", _VERSION) + bytes(body)
    blob += struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(blob)


def load_checkpoint(path) -> tuple[NetworkSpec, dict[str, Tensor]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(_MAGIC)] != _MAGIC:
        raise ValueError("bad checkpoint magic")
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != crc:
        raise ValueError("checkpoint checksum mismatch")
    offset = len(_MAGIC)
    (version,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (hlen,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    header = json.loads(blob[offset: offset + hlen])
    offset += hlen
    params: dict[str, Tensor] = {}
    for name in header["names"]:
        (ndim,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        shape = struct.unpack_from(f"<{ndim}q", blob, offset)
        offset += 8 * ndim
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape)
        offset += 8 * count
        params[name] = Tensor(arr.copy(), requires_grad=True)
    return NetworkSpec.from_dict(header["spec"]), params
