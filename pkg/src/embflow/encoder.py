"""Small multimodal encoder: shared MLP over token/image pieces, mean pooling,
L2 normalization, and nested lower-dimension views of the full embedding.

The encoder is a stand-in for a large generative backbone: every input piece
(a title token or an image feature vector) is projected to a common width,
passed through a two-layer ReLU MLP, and mean-pooled, so the embedding is
invariant to piece order and to duplicated pieces. Forward and backward
passes are hand-rolled numpy; training owns all parameter mutation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractViolation, DegenerateViewError, SnapshotIntegrityError
from .numerics import Embedding

CHECKPOINT_MAGIC = b"MOONENC1"
DEGENERATE_NORM = 1e-12


@dataclass(frozen=True)
class EncoderDims:
    vocab: int = 512
    d_img: int = 32
    d_tok: int = 32
    hidden: int = 64
    d_full: int = 128


@dataclass
class EncoderParams:
    dims: EncoderDims
    tok: np.ndarray   # (vocab, d_tok)
    img: np.ndarray   # (d_img, d_tok)
    w1: np.ndarray    # (d_tok, hidden)
    b1: np.ndarray    # (hidden,)
    w2: np.ndarray    # (hidden, d_full)
    b2: np.ndarray    # (d_full,)

    def __post_init__(self):
        d = self.dims
        expected = {"tok": (d.vocab, d.d_tok), "img": (d.d_img, d.d_tok),
                    "w1": (d.d_tok, d.hidden), "b1": (d.hidden,),
                    "w2": (d.hidden, d.d_full), "b2": (d.d_full,)}
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ContractViolation(f"{name}: expected shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ContractViolation(f"{name}: non-finite parameters")
        self.param_count = sum(getattr(self, n).size for n in expected)

    @classmethod
    def init(cls, seed: int, dims: EncoderDims | None = None) -> "EncoderParams":
        """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init from a seeded generator."""
        d = dims or EncoderDims()
        rng = np.random.default_rng(seed)

        def u(fan_in, *shape):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        return cls(dims=d,
                   tok=u(d.d_tok, d.vocab, d.d_tok),
                   img=u(d.d_img, d.d_img, d.d_tok),
                   w1=u(d.d_tok, d.d_tok, d.hidden),
                   b1=u(d.d_tok, d.hidden),
                   w2=u(d.hidden, d.hidden, d.d_full),
                   b2=u(d.hidden, d.d_full))

    def copy(self) -> "EncoderParams":
        return EncoderParams(dims=self.dims, tok=self.tok.copy(), img=self.img.copy(),
                             w1=self.w1.copy(), b1=self.b1.copy(),
                             w2=self.w2.copy(), b2=self.b2.copy())

    def apply_update(self, grads: "EncoderGrads", lr: float) -> None:
        self.tok -= lr * grads.tok
        self.img -= lr * grads.img
        self.w1 -= lr * grads.w1
        self.b1 -= lr * grads.b1
        self.w2 -= lr * grads.w2
        self.b2 -= lr * grads.b2


@dataclass
class EncoderGrads:
    tok: np.ndarray
    img: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def zeros_like(cls, p: EncoderParams) -> "EncoderGrads":
        return cls(*(np.zeros_like(getattr(p, n)) for n in ("tok", "img", "w1", "b1", "w2", "b2")))

    def norm(self) -> float:
        total = 0.0
        for n in ("tok", "img", "w1", "b1", "w2", "b2"):
            g = getattr(self, n)
            total += float(np.dot(g.ravel(), g.ravel()))
        return float(np.sqrt(total))


@dataclass(frozen=True)
class EncoderInput:
    """One thing to embed: optional token ids plus zero or more image features."""

    token_ids: tuple[int, ...] | None = None
    image_features: np.ndarray | None = None  # (n_images, d_img)

    def __post_init__(self):
        n_tok = len(self.token_ids) if self.token_ids else 0
        imgs = self.image_features
        if imgs is not None:
            imgs = np.asarray(imgs, dtype=np.float64)
            if imgs.ndim == 1:
                imgs = imgs[None, :]
            object.__setattr__(self, "image_features", imgs)
        n_img = 0 if imgs is None else imgs.shape[0]
        if n_tok + n_img == 0:
            raise ContractViolation("encoder input must carry at least one token or image")

    @property
    def n_pieces(self) -> int:
        n_tok = len(self.token_ids) if self.token_ids else 0
        n_img = 0 if self.image_features is None else self.image_features.shape[0]
        return n_tok + n_img


@dataclass
class ForwardCache:
    inputs_n: int
    counts: np.ndarray
    offsets: np.ndarray
    tok_rows: np.ndarray
    tok_ids: np.ndarray
    img_rows: np.ndarray
    img_in: np.ndarray
    x: np.ndarray
    relu_mask: np.ndarray
    h: np.ndarray
    z: np.ndarray
    norms: np.ndarray
    e: np.ndarray


def forward_cached(params: EncoderParams, inputs: Sequence[EncoderInput]) -> tuple[np.ndarray, ForwardCache]:
    """Encode a batch and keep intermediates for backpropagation.

    Returns (E, cache) where E is (n, d_full) with unit-norm rows.
    """
    if not inputs:
        raise ContractViolation("empty batch")
    d = params.dims
    counts = np.array([inp.n_pieces for inp in inputs], dtype=np.int64)
    offsets = np.concatenate(([0], np.cumsum(counts)))[:-1]
    total = int(counts.sum())

    tok_rows_l, tok_ids_l, img_rows_l, img_feats_l = [], [], [], []
    row = 0
    for inp in inputs:
        if inp.token_ids:
            for t in inp.token_ids:
                if not 0 <= t < d.vocab:
                    raise ContractViolation(f"token id {t} outside vocab of {d.vocab}")
                tok_rows_l.append(row)
                tok_ids_l.append(t)
                row += 1
        if inp.image_features is not None:
            if inp.image_features.shape[1] != d.d_img:
                raise ContractViolation(
                    f"image feature dim {inp.image_features.shape[1]} != {d.d_img}")
            for j in range(inp.image_features.shape[0]):
                img_rows_l.append(row)
                row += 1
            img_feats_l.append(inp.image_features)

    tok_rows = np.asarray(tok_rows_l, dtype=np.int64)
    tok_ids = np.asarray(tok_ids_l, dtype=np.int64)
    img_rows = np.asarray(img_rows_l, dtype=np.int64)
    img_in = np.concatenate(img_feats_l, axis=0) if img_feats_l else np.zeros((0, d.d_img))

    x = np.empty((total, d.d_tok))
    if tok_rows.size:
        x[tok_rows] = params.tok[tok_ids]
    if img_rows.size:
        x[img_rows] = img_in @ params.img

    h_pre = x @ params.w1 + params.b1
    relu_mask = h_pre > 0
    h = np.where(relu_mask, h_pre, 0.0)
    y = h @ params.w2 + params.b2

    z = np.add.reduceat(y, offsets, axis=0) / counts[:, None]
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms == 0.0):
        raise ContractViolation("pooled state collapsed to the zero vector")
    e = z / norms[:, None]
    cache = ForwardCache(inputs_n=len(inputs), counts=counts, offsets=offsets,
                         tok_rows=tok_rows, tok_ids=tok_ids, img_rows=img_rows,
                         img_in=img_in, x=x, relu_mask=relu_mask, h=h, z=z,
                         norms=norms, e=e)
    return e, cache


def backward(params: EncoderParams, cache: ForwardCache, d_e: np.ndarray) -> EncoderGrads:
    """Backpropagate dLoss/dE through normalization, pooling, and the MLP."""
    e, norms, counts = cache.e, cache.norms, cache.counts
    inner = np.sum(d_e * e, axis=1, keepdims=True)
    d_z = (d_e - inner * e) / norms[:, None]
    d_y = np.repeat(d_z / counts[:, None], counts, axis=0)

    grads = EncoderGrads.zeros_like(params)
    grads.w2 = cache.h.T @ d_y
    grads.b2 = d_y.sum(axis=0)
    d_h = d_y @ params.w2.T
    d_h_pre = np.where(cache.relu_mask, d_h, 0.0)
    grads.w1 = cache.x.T @ d_h_pre
    grads.b1 = d_h_pre.sum(axis=0)
    d_x = d_h_pre @ params.w1.T
    if cache.tok_rows.size:
        np.add.at(grads.tok, cache.tok_ids, d_x[cache.tok_rows])
    if cache.img_rows.size:
        grads.img = cache.img_in.T @ d_x[cache.img_rows]
    return grads


def encode_batch(params: EncoderParams, inputs: Sequence[EncoderInput]) -> np.ndarray:
    e, _ = forward_cached(params, inputs)
    return e


def encode(params: EncoderParams, inp: EncoderInput) -> Embedding:
    e = encode_batch(params, [inp])[0]
    return Embedding(dim=params.dims.d_full, values=e, normalized=True)


# ---------------------------------------------------------------------------
# nested multi-dimension views

@dataclass(frozen=True)
class MrlConfig:
    dims: tuple[int, ...] = (16, 32, 64, 128)
    weights: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0)

    def __post_init__(self):
        if not self.dims:
            raise ContractViolation("at least one view dimension required")
        if any(d <= 0 for d in self.dims) or list(self.dims) != sorted(set(self.dims)):
            raise ContractViolation("view dims must be positive and strictly increasing")
        if len(self.weights) != len(self.dims) or any(w <= 0 for w in self.weights):
            raise ContractViolation("one positive weight per view dim required")

    def validate_for(self, d_full: int) -> None:
        if self.dims[-1] != d_full:
            raise ContractViolation(
                f"largest view dim {self.dims[-1]} must equal the full dimension {d_full}")


def mrl_views(e: Embedding, cfg: MrlConfig) -> list[Embedding]:
    """Renormalized prefixes of a unit-norm embedding, one per configured dim."""
    if not e.normalized:
        raise ContractViolation("views are defined on normalized embeddings")
    cfg.validate_for(e.dim)
    views = []
    for m in cfg.dims:
        prefix = e.values[:m]
        norm = float(np.linalg.norm(prefix))
        if norm <= DEGENERATE_NORM:
            raise DegenerateViewError(f"prefix of length {m} is numerically zero")
        views.append(Embedding(dim=m, values=prefix / norm, normalized=True))
    return views


def renorm_prefix(x: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-wise renormalized m-prefix of (n, d) embeddings.

    Returns (views, norms, ok_mask); rows with a numerically-zero prefix are
    flagged False in ok_mask and returned as zeros.
    """
    prefix = x[:, :m]
    norms = np.linalg.norm(prefix, axis=1)
    ok = norms > DEGENERATE_NORM
    safe = np.where(ok, norms, 1.0)
    return prefix / safe[:, None], norms, ok


def renorm_prefix_backward(d_view: np.ndarray, view: np.ndarray, norms: np.ndarray,
                           ok: np.ndarray, d_x: np.ndarray) -> None:
    """Accumulate the view gradient into d_x (full width); skipped rows get nothing."""
    m = view.shape[1]
    safe = np.where(ok, norms, 1.0)
    inner = np.sum(d_view * view, axis=1, keepdims=True)
    contrib = (d_view - inner * view) / safe[:, None]
    contrib[~ok] = 0.0
    d_x[:, :m] += contrib


# ---------------------------------------------------------------------------
# checkpoint format: magic, five u32 dims, then f32 row-major blocks

_PARAM_ORDER = ("tok", "img", "w1", "b1", "w2", "b2")


def save_checkpoint(params: EncoderParams, path: str | Path) -> None:
    d = params.dims
    header = struct.pack("<5I", d.vocab, d.d_img, d.d_tok, d.hidden, d.d_full)
    blocks = b"".join(np.ascontiguousarray(getattr(params, n), dtype="<f4").tobytes()
                      for n in _PARAM_ORDER)
    Path(path).write_bytes(CHECKPOINT_MAGIC + header + blocks)


def load_checkpoint(path: str | Path) -> EncoderParams:
    raw = Path(path).read_bytes()
    if len(raw) < len(CHECKPOINT_MAGIC) + 20 or raw[:8] != CHECKPOINT_MAGIC:
        raise SnapshotIntegrityError(f"{path}: not an encoder checkpoint")
    vocab, d_img, d_tok, hidden, d_full = struct.unpack_from("<5I", raw, 8)
    dims = EncoderDims(vocab=vocab, d_img=d_img, d_tok=d_tok, hidden=hidden, d_full=d_full)
    shapes = {"tok": (vocab, d_tok), "img": (d_img, d_tok), "w1": (d_tok, hidden),
              "b1": (hidden,), "w2": (hidden, d_full), "b2": (d_full,)}
    expect = 28 + 4 * sum(int(np.prod(s)) for s in shapes.values())
    if len(raw) != expect:
        raise SnapshotIntegrityError(f"{path}: expected {expect} bytes, found {len(raw)}")
    offset = 28
    arrays = {}
    for name in _PARAM_ORDER:
        shape = shapes[name]
        n = int(np.prod(shape))
        arrays[name] = np.frombuffer(raw, dtype="<f4", count=n, offset=offset) \
            .astype(np.float64).reshape(shape)
        offset += 4 * n
    return EncoderParams(dims=dims, **arrays)
