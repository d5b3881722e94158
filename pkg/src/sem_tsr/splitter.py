"""Row/column separator segmentation and its post-processing into a grid lattice."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .structure import GridLattice

MIN_GRID = 2.0


@dataclass
class SeparatorMaps:
    row_logits: torch.Tensor  # (H, W)
    col_logits: torch.Tensor  # (H, W)


@dataclass
class SeparatorLabels:
    row_mask: np.ndarray  # (H, W) in {0, 1}
    col_mask: np.ndarray

    def __post_init__(self):
        for m in (self.row_mask, self.col_mask):
            if m.shape != self.row_mask.shape:
                raise ValueError("row and column masks differ in shape")
            if not np.isin(m, (0, 1)).all():
                raise ValueError("separator masks must be binary")


@dataclass
class ProjectionProfiles:
    row_profile: np.ndarray  # (H,)
    col_profile: np.ndarray  # (W,)
    row_binary: np.ndarray
    col_binary: np.ndarray


class Segmenter(nn.Module):
    """conv3x3 -> ReLU -> conv3x3 to a single logit channel, stride 1."""

    def __init__(self, channels: int, hidden: int = 16):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, hidden, 3, padding=1)
        self.conv2 = nn.Conv2d(hidden, 1, 3, padding=1)

    def forward(self, p2: torch.Tensor) -> torch.Tensor:
        squeeze = p2.dim() == 3
        x = p2.unsqueeze(0) if squeeze else p2
        out = self.conv2(F.relu(self.conv1(x)))[:, 0]
        return out[0] if squeeze else out


class Splitter(nn.Module):
    def __init__(self, channels: int, hidden: int = 16):
        super().__init__()
        self.row_head = Segmenter(channels, hidden)
        self.col_head = Segmenter(channels, hidden)

    def forward(self, p2: torch.Tensor) -> SeparatorMaps:
        return SeparatorMaps(self.row_head(p2), self.col_head(p2))


def segment(p2: torch.Tensor, splitter: Splitter) -> SeparatorMaps:
    """Predict separator logits for a (D, H, W) feature map."""
    return splitter(p2)


def bce(x, y):
    """Binary cross-entropy on logits, elementwise, in the overflow-safe softplus form."""
    x = torch.as_tensor(x, dtype=torch.get_default_dtype()) if not torch.is_tensor(x) else x
    y = torch.as_tensor(y, dtype=x.dtype)
    return torch.clamp(x, min=0) - x * y + torch.log1p(torch.exp(-x.abs()))


def normalized_bce(logits: torch.Tensor, mask) -> torch.Tensor:
    """Summed BCE over all pixels divided by the number of positive pixels."""
    mask = torch.as_tensor(mask, dtype=logits.dtype, device=logits.device)
    n_pos = mask.sum()
    if n_pos <= 0:
        raise ValueError("separator mask has no positive pixel")
    return bce(logits, mask).sum() / n_pos


def splitter_loss(maps: SeparatorMaps, labels: SeparatorLabels) -> tuple[torch.Tensor, torch.Tensor]:
    if tuple(maps.row_logits.shape) != labels.row_mask.shape:
        raise ValueError(f"logits {tuple(maps.row_logits.shape)} vs labels {labels.row_mask.shape}")
    return normalized_bce(maps.row_logits, labels.row_mask), normalized_bce(maps.col_logits, labels.col_mask)


def project(maps: SeparatorMaps, threshold: float = 0.5) -> ProjectionProfiles:
    with torch.no_grad():
        row = torch.sigmoid(maps.row_logits.double()).mean(dim=1).cpu().numpy()
        col = torch.sigmoid(maps.col_logits.double()).mean(dim=0).cpu().numpy()
    return ProjectionProfiles(row, col, (row > threshold).astype(np.int64), (col > threshold).astype(np.int64))


def _runs(binary: np.ndarray) -> list[tuple[int, int]]:
    padded = np.concatenate([[0], np.asarray(binary, dtype=np.int64), [0]])
    edges = np.flatnonzero(np.diff(padded))
    return [(int(a), int(b) - 1) for a, b in zip(edges[::2], edges[1::2])]


def lines_from_profile(profile: np.ndarray, binary: np.ndarray) -> list[int]:
    """Peak index of every maximal run of ones that does not touch either border."""
    n = len(binary)
    lines = []
    for a, b in _runs(binary):
        if a == 0 or b == n - 1:
            continue
        lines.append(a + int(np.argmax(profile[a:b + 1])))
    return lines


def extract_lines(profiles: ProjectionProfiles) -> tuple[list[int], list[int]]:
    return (lines_from_profile(profiles.row_profile, profiles.row_binary),
            lines_from_profile(profiles.col_profile, profiles.col_binary))


def _guard(lines, limit: float) -> tuple[float, ...]:
    kept = []
    last = 0.0
    for v in sorted(set(float(v) for v in lines)):
        if v - last >= MIN_GRID and limit - v >= MIN_GRID:
            kept.append(v)
            last = v
    return tuple(kept)


def lattice_from_lines(row_lines, col_lines, height: int, width: int) -> GridLattice:
    """Grid lattice from internal lines; duplicates and lines within 2 px of a boundary are dropped."""
    return GridLattice(int(height), int(width), _guard(row_lines, height), _guard(col_lines, width))


def predict_lattice(maps: SeparatorMaps, threshold: float = 0.5) -> tuple[GridLattice, ProjectionProfiles]:
    profiles = project(maps, threshold)
    rows, cols = extract_lines(profiles)
    h, w = maps.row_logits.shape
    return lattice_from_lines(rows, cols, h, w), profiles


def dump_debug(maps: SeparatorMaps, profiles: ProjectionProfiles, out_dir) -> None:
    """Write sigmoid separator maps as grayscale PNGs plus the profiles as JSON."""
    import json
    from pathlib import Path

    from PIL import Image

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, logits in (("row", maps.row_logits), ("col", maps.col_logits)):
        prob = torch.sigmoid(logits.detach().double()).cpu().numpy()
        Image.fromarray((prob * 255).round().astype(np.uint8), mode="L").save(out / f"{name}_separator.png")
    (out / "profiles.json").write_text(json.dumps({
        "row_profile": profiles.row_profile.tolist(), "col_profile": profiles.col_profile.tolist(),
        "row_binary": profiles.row_binary.tolist(), "col_binary": profiles.col_binary.tolist(),
    }))
