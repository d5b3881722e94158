"""The full split/embed/merge network and its per-sample training/inference passes."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .backbone import Backbone, BackboneConfig
from .embedder import Embedder, GridFeatures, HashedCharEncoder
from .merger import MergeMapSequence, Merger
from .splitter import ProjectionProfiles, SeparatorLabels, SeparatorMaps, Splitter, predict_lattice, splitter_loss
from .structure import (BBox, GridLattice, TableStructure, assemble_structure, assign_tokens, join_tokens,
                        match_content)
from .supervision import Annotation, flip_annotation, gt_lattice, make_merge_targets, make_separator_labels, separator_bands
from .validation import check_image

MODEL_SCHEMA_VERSION = 1


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    splitter_hidden: int = 16
    pool_size: int = 3
    text_dim: int = 64
    transformer_layers: int = 1
    heads: int = 4
    use_visual: bool = True
    use_text: bool = True
    positional: bool = False
    merger_hidden: int = 256
    attn_dim: int = 256
    history_channels: int = 32
    history_kernel: int = 3
    threshold: float = 0.5
    version: int = MODEL_SCHEMA_VERSION

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        bb = d.pop("backbone", {})
        return cls(backbone=bb if isinstance(bb, BackboneConfig) else BackboneConfig(**bb), **d)


@dataclass
class Sample:
    """An annotated image with every training target precomputed."""

    image: torch.Tensor        # (3, H, W), normalized
    annotation: Annotation
    labels: SeparatorLabels
    lattice: GridLattice       # ground-truth lattice from the label bands
    targets: np.ndarray        # (C, M*N)
    text_vectors: np.ndarray   # (M*N, B) on the ground-truth lattice
    bands: tuple = ((), ())    # half-open separator bands (rows, cols)

    def jittered_lattice(self, rng: np.random.Generator) -> GridLattice:
        """A ground-truth lattice with every line drawn uniformly from its separator band."""
        rows, cols = ([float(rng.integers(a, b)) for a, b in bands] for bands in self.bands)
        return GridLattice(self.lattice.image_h, self.lattice.image_w, tuple(rows), tuple(cols))


@dataclass
class Prediction:
    structure: TableStructure
    lattice: GridLattice
    separators: SeparatorMaps
    profiles: ProjectionProfiles
    merge: MergeMapSequence
    unassigned_tokens: list[int] = field(default_factory=list)


def grid_texts(lattice: GridLattice, tokens) -> list[str]:
    """Text per grid: tokens routed to the max-IOU grid box, joined in reading order."""
    groups, _ = assign_tokens(lattice.grid_boxes, tokens)
    return [join_tokens([tokens[k] for k in g]) for g in groups]


class SEMNet(nn.Module):
    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or ModelConfig()
        d = cfg.backbone.channels
        self.backbone = Backbone(cfg.backbone)
        self.splitter = Splitter(d, cfg.splitter_hidden)
        self.embedder = Embedder(d, cfg.pool_size, cfg.text_dim, cfg.transformer_layers, cfg.heads,
                                 cfg.use_visual, cfg.use_text, cfg.positional)
        self.merger = Merger(d, cfg.merger_hidden, cfg.attn_dim, cfg.history_channels, cfg.history_kernel)
        self.text_encoder = HashedCharEncoder(cfg.text_dim)

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def text_vectors(self, lattice: GridLattice, tokens) -> np.ndarray:
        return self.text_encoder.encode_batch(grid_texts(lattice, tokens or []))

    def prepare(self, image, annotation: Annotation) -> Sample:
        return self._sample(check_image(image), annotation)

    def _sample(self, x: torch.Tensor, annotation: Annotation) -> Sample:
        lattice = gt_lattice(annotation)
        return Sample(x, annotation, make_separator_labels(annotation), lattice,
                      make_merge_targets(annotation, lattice), self.text_vectors(lattice, annotation.tokens),
                      separator_bands(annotation))

    def flip_sample(self, sample: Sample, horizontal: bool = False, vertical: bool = False) -> Sample:
        """``sample`` mirrored left-right and/or top-bottom, with every target rebuilt."""
        dims = [d for d, on in ((2, horizontal), (1, vertical)) if on]
        x = torch.flip(sample.image, dims) if dims else sample.image
        return self._sample(x, flip_annotation(sample.annotation, horizontal, vertical))

    def losses(self, sample: Sample, lattice: GridLattice | None = None) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Row/column splitter losses and the teacher-forced merger loss on a ground-truth lattice.

        ``lattice`` defaults to the band-midpoint lattice of the sample; any
        other lattice must have the same shape.
        """
        p2 = self.backbone(sample.image[None].to(self.dtype))[0][0]
        l_row, l_col = splitter_loss(self.splitter(p2), sample.labels)
        if lattice is None or lattice == sample.lattice:
            lattice, tv = sample.lattice, sample.text_vectors
        else:
            if lattice.shape != sample.lattice.shape:
                raise ValueError(f"lattice {lattice.shape} does not match the annotation {sample.lattice.shape}")
            tv = self.text_vectors(lattice, sample.annotation.tokens)
        feats = self.embedder(p2, lattice, torch.as_tensor(tv, dtype=self.dtype))
        _, l_m = self.merger.decode_train(feats.fused, sample.targets, lattice.shape)
        return l_row, l_col, l_m

    def features(self, p2: torch.Tensor, lattice: GridLattice, tokens=None) -> GridFeatures:
        tv = torch.as_tensor(self.text_vectors(lattice, tokens), dtype=self.dtype)
        return self.embedder(p2, lattice, tv)

    @torch.no_grad()
    def predict(self, image, tokens: list[tuple[str, BBox]] | None = None) -> Prediction:
        x = check_image(image).to(self.dtype)
        p2 = self.backbone(x[None])[0][0]
        maps = self.splitter(p2)
        lattice, profiles = predict_lattice(maps, self.cfg.threshold)
        feats = self.features(p2, lattice, tokens)
        merge = self.merger.decode_infer(feats.fused, lattice.shape)
        structure = assemble_structure(lattice, merge)
        unassigned: list[int] = []
        if tokens:
            structure, unassigned = match_content(structure, tokens)
        return Prediction(structure, lattice, maps, profiles, merge, unassigned)
