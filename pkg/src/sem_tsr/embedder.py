"""Grid-level features from vision (RoIAlign over P2) and text, blended by a transformer."""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .structure import BBox, GridLattice


@dataclass
class FFNParams:
    W1: torch.Tensor  # (d_in, d_ff)
    b1: torch.Tensor
    W2: torch.Tensor  # (d_ff, d_out)
    b2: torch.Tensor


def ffn(x: torch.Tensor, p: FFNParams) -> torch.Tensor:
    """max(0, x W1 + b1) W2 + b2 over the last axis of ``x``."""
    if x.shape[-1] != p.W1.shape[0]:
        raise ValueError(f"input dim {x.shape[-1]} != d_in {p.W1.shape[0]}")
    return F.relu(x @ p.W1 + p.b1) @ p.W2 + p.b2


class FFN(nn.Module):
    def __init__(self, d_in: int, d_out: int, d_ff: int | None = None):
        super().__init__()
        d_ff = d_out if d_ff is None else d_ff
        self.lin1 = nn.Linear(d_in, d_ff)
        self.lin2 = nn.Linear(d_ff, d_out)

    @property
    def params(self) -> FFNParams:
        return FFNParams(self.lin1.weight.T, self.lin1.bias, self.lin2.weight.T, self.lin2.bias)

    def forward(self, x):
        return ffn(x, self.params)


def roi_pool(p2: torch.Tensor, boxes, size: int = 3, sampling: int = 2) -> torch.Tensor:
    """RoIAlign of (D, H, W) features over pixel boxes; returns (K, D, size, size).

    Feature (i, j) sits at pixel center (j + 0.5, i + 0.5). Every bin averages
    ``sampling`` x ``sampling`` bilinear samples. Boxes thinner than one pixel
    are widened to one pixel about their center.
    """
    if size < 1:
        raise ValueError("pool size must be >= 1")
    d, h, w = p2.shape
    if isinstance(boxes, BBox):
        boxes = [boxes]
    if not torch.is_tensor(boxes):
        boxes = torch.tensor([b.as_list() if isinstance(b, BBox) else list(b) for b in boxes], dtype=p2.dtype)
    boxes = boxes.to(p2.dtype).reshape(-1, 4)
    k = boxes.shape[0]
    cx, cy = (boxes[:, 0] + boxes[:, 2]) / 2, (boxes[:, 1] + boxes[:, 3]) / 2
    bw = (boxes[:, 2] - boxes[:, 0]).clamp(min=1.0)
    bh = (boxes[:, 3] - boxes[:, 1]).clamp(min=1.0)
    x0, y0 = cx - bw / 2, cy - bh / 2
    n = size * sampling
    offs = (torch.arange(n, dtype=p2.dtype) + 0.5) / n  # fractions of the box side
    xs = (x0[:, None] + offs[None] * bw[:, None] - 0.5).clamp(0, w - 1)
    ys = (y0[:, None] + offs[None] * bh[:, None] - 0.5).clamp(0, h - 1)
    xl, yl = xs.floor().long(), ys.floor().long()
    xh, yh = (xl + 1).clamp(max=w - 1), (yl + 1).clamp(max=h - 1)
    ax, ay = xs - xl, ys - yl
    flat = p2.reshape(d, h * w)

    def gather(yi, xi):
        idx = (yi[:, :, None] * w + xi[:, None, :]).reshape(-1)
        return flat[:, idx].reshape(d, k, n, n)

    wy0, wy1 = (1 - ay)[:, :, None], ay[:, :, None]
    wx0, wx1 = (1 - ax)[:, None, :], ax[:, None, :]
    vals = (gather(yl, xl) * (wy0 * wx0) + gather(yl, xh) * (wy0 * wx1)
            + gather(yh, xl) * (wy1 * wx0) + gather(yh, xh) * (wy1 * wx1))
    vals = vals.reshape(d, k, size, sampling, size, sampling).mean(dim=(3, 5))
    return vals.permute(1, 0, 2, 3)


# ---------------------------------------------------------------------------
# text encoders


class TextEncoder(Protocol):
    dim: int

    def encode(self, text: str) -> np.ndarray: ...


class HashedCharEncoder:
    """Bag of characters hashed into ``dim`` buckets with CRC32, L2-normalized.

    Case-sensitive; the empty string maps to the zero vector.
    """

    def __init__(self, dim: int = 64):
        self.dim = dim

    def encode(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim, dtype=np.float64)
        for ch in text or "":
            v[zlib.crc32(ch.encode("utf-8")) % self.dim] += 1.0
        norm = np.linalg.norm(v)
        return v / norm if norm > 0 else v

    def encode_batch(self, texts: Sequence[str]) -> np.ndarray:
        return np.stack([self.encode(t) for t in texts]) if texts else np.zeros((0, self.dim))


SIDECAR_VERSION = 1


def write_text_sidecar(path, vectors: dict[tuple[str, int], np.ndarray]) -> None:
    """JSON header line ``{B, count, keys}`` then ``count*B`` little-endian float32 values."""
    keys = sorted(vectors)
    dims = {np.asarray(vectors[k]).shape[-1] for k in keys}
    if len(dims) > 1:
        raise ValueError("all vectors must share one dimension")
    b = dims.pop() if dims else 0
    header = {"version": SIDECAR_VERSION, "B": b, "count": len(keys), "keys": [[k[0], int(k[1])] for k in keys]}
    data = np.stack([np.asarray(vectors[k], dtype="<f4") for k in keys]) if keys else np.zeros((0, b), "<f4")
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(data.astype("<f4").tobytes())


def read_text_sidecar(path) -> dict[tuple[str, int], np.ndarray]:
    raw = Path(path).read_bytes()
    cut = raw.index(b"\n")
    header = json.loads(raw[:cut])
    b, count = int(header["B"]), int(header["count"])
    data = np.frombuffer(raw[cut + 1:], dtype="<f4")
    if data.size != b * count:
        raise ValueError(f"sidecar payload has {data.size} floats, header promises {b * count}")
    data = data.reshape(count, b)
    return {(str(k[0]), int(k[1])): data[i].astype(np.float64) for i, k in enumerate(header["keys"])}


class PrecomputedTextEncoder:
    """Serves per-grid text vectors loaded from a sidecar file."""

    def __init__(self, path):
        self.table = read_text_sidecar(path)
        self.dim = next(iter(self.table.values())).shape[0] if self.table else 0

    def grid_vectors(self, image_id: str, n_grids: int) -> np.ndarray:
        out = np.zeros((n_grids, self.dim))
        for i in range(n_grids):
            v = self.table.get((image_id, i))
            if v is not None:
                out[i] = v
        return out


# ---------------------------------------------------------------------------
# embedder


def grid_positional_encoding(n_rows: int, n_cols: int, dim: int) -> torch.Tensor:
    """2-D sinusoidal encoding, first half of channels for the row index, second for the column."""
    half = dim // 2

    def enc(pos: torch.Tensor, d: int) -> torch.Tensor:
        i = torch.arange(d // 2, dtype=torch.float64)
        freq = torch.exp(-math.log(10000.0) * 2 * i / max(d, 1))
        ang = pos[:, None].double() * freq[None]
        out = torch.zeros(len(pos), d, dtype=torch.float64)
        out[:, 0:2 * (d // 2):2] = torch.sin(ang)
        out[:, 1:2 * (d // 2):2] = torch.cos(ang)
        return out

    rr = torch.arange(n_rows).repeat_interleave(n_cols)
    cc = torch.arange(n_cols).repeat(n_rows)
    return torch.cat([enc(rr, half), enc(cc, dim - half)], dim=1)


@dataclass
class GridFeatures:
    visual: torch.Tensor   # (M*N, D)
    textual: torch.Tensor  # (M*N, D)
    fused: torch.Tensor    # (M*N, D)


class Embedder(nn.Module):
    def __init__(self, channels: int = 64, pool_size: int = 3, text_dim: int = 64, layers: int = 1,
                 heads: int = 4, use_visual: bool = True, use_text: bool = True, positional: bool = False):
        super().__init__()
        d = channels
        self.pool_size = pool_size
        self.use_visual, self.use_text, self.positional = use_visual, use_text, positional
        self.visual_ffn = FFN(pool_size * pool_size * d, d)
        self.text_ffn = FFN(text_dim, d)
        self.blend_ffn = FFN(2 * d, d)
        self.layers = nn.ModuleList(
            nn.TransformerEncoderLayer(d, heads, dim_feedforward=d, dropout=0.0, batch_first=True, norm_first=True)
            for _ in range(layers))

    def embed_visual(self, p2: torch.Tensor, lattice: GridLattice) -> torch.Tensor:
        boxes = torch.as_tensor(lattice.grid_array(), dtype=p2.dtype)
        pooled = roi_pool(p2, boxes, self.pool_size)
        return self.visual_ffn(pooled.reshape(pooled.shape[0], -1))

    def embed_textual(self, text_vectors: torch.Tensor) -> torch.Tensor:
        # encoder output is frozen: never let gradients flow into it
        return self.text_ffn(text_vectors.detach())

    def blend(self, visual: torch.Tensor, textual: torch.Tensor, shape: tuple[int, int] | None = None) -> torch.Tensor:
        x = self.blend_ffn(torch.cat([visual, textual], dim=-1))
        if self.positional and shape is not None:
            x = x + grid_positional_encoding(*shape, x.shape[-1]).to(x.dtype)
        if self.layers:
            x = x.unsqueeze(0)
            for layer in self.layers:
                x = layer(x)
            x = x[0]
        return x

    def forward(self, p2: torch.Tensor, lattice: GridLattice, text_vectors: torch.Tensor | None = None) -> GridFeatures:
        n = lattice.n_grids
        d = self.blend_ffn.lin2.out_features
        if self.use_visual:
            ev = self.embed_visual(p2, lattice)
        else:
            ev = p2.new_zeros(n, d)
        if self.use_text and text_vectors is not None:
            et = self.embed_textual(torch.as_tensor(text_vectors, dtype=p2.dtype))
        elif self.use_text:
            et = self.embed_textual(p2.new_zeros(n, self.text_ffn.lin1.in_features))
        else:
            et = p2.new_zeros(n, d)
        return GridFeatures(ev, et, self.blend(ev, et, lattice.shape))
