"""scikit-learn style front end: ``fit(images, annotations)`` / ``predict(images)``."""

from __future__ import annotations

import logging
from dataclasses import replace

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .backbone import BackboneConfig
from .metrics import exact_structure, f1
from .model import ModelConfig, Prediction, SEMNet
from .structure import TableStructure, to_html
from .supervision import Annotation, InvalidAnnotation, gt_lattice
from .training import TrainConfig, TrainHistory, load_checkpoint, save_checkpoint, train
from .validation import check_images

log = logging.getLogger(__name__)


def annotation_structure(ann: Annotation) -> TableStructure:
    """Ground-truth TableStructure of an annotation on its band-midpoint lattice."""
    lattice = gt_lattice(ann)
    cells = [replace(c, bbox=lattice.span_box(*c.span)) for c in ann.cells]
    return TableStructure(lattice, cells)


class SEMTableRecognizer(BaseEstimator):
    """Table structure recognizer: separator segmentation, grid embedding and merging.

    Parameters mirror :class:`ModelConfig` and :class:`TrainConfig`; see those
    for meanings. ``fit`` takes images as (H, W, 3) uint8 arrays together with
    :class:`Annotation` objects; ``predict`` returns :class:`TableStructure`.
    """

    def __init__(self, channels=64, widths=(16, 32, 64, 64), blocks=(1, 1, 1, 1), splitter_hidden=16,
                 pool_size=3, text_dim=64, transformer_layers=1, heads=4, use_visual=True, use_text=True,
                 positional=False, merger_hidden=256, attn_dim=256, history_channels=32, history_kernel=3,
                 threshold=0.5, epochs=10, batch_size=4, lr_max=1e-4, lr_min=1e-6, optimizer="adam",
                 beta1=0.9, beta2=0.999, eps=1e-9, lambda_row=1.0, lambda_col=1.0, lambda_merge=1.0,
                 grad_clip=None, lattice_jitter=0.0, flip_augment=False, random_state=0, log_every=50):
        self.channels = channels
        self.widths = widths
        self.blocks = blocks
        self.splitter_hidden = splitter_hidden
        self.pool_size = pool_size
        self.text_dim = text_dim
        self.transformer_layers = transformer_layers
        self.heads = heads
        self.use_visual = use_visual
        self.use_text = use_text
        self.positional = positional
        self.merger_hidden = merger_hidden
        self.attn_dim = attn_dim
        self.history_channels = history_channels
        self.history_kernel = history_kernel
        self.threshold = threshold
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_max = lr_max
        self.lr_min = lr_min
        self.optimizer = optimizer
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.lambda_row = lambda_row
        self.lambda_col = lambda_col
        self.lambda_merge = lambda_merge
        self.grad_clip = grad_clip
        self.lattice_jitter = lattice_jitter
        self.flip_augment = flip_augment
        self.random_state = random_state
        self.log_every = log_every

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            backbone=BackboneConfig(tuple(self.widths), tuple(self.blocks), self.channels),
            splitter_hidden=self.splitter_hidden, pool_size=self.pool_size, text_dim=self.text_dim,
            transformer_layers=self.transformer_layers, heads=self.heads, use_visual=self.use_visual,
            use_text=self.use_text, positional=self.positional, merger_hidden=self.merger_hidden,
            attn_dim=self.attn_dim, history_channels=self.history_channels,
            history_kernel=self.history_kernel, threshold=self.threshold)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lambda_row=self.lambda_row, lambda_col=self.lambda_col, lambda_merge=self.lambda_merge,
            lr_max=self.lr_max, lr_min=self.lr_min, epochs=self.epochs, batch_size=self.batch_size,
            optimizer=self.optimizer, beta1=self.beta1, beta2=self.beta2, eps=self.eps,
            grad_clip=self.grad_clip, lattice_jitter=self.lattice_jitter, flip_augment=self.flip_augment,
            seed=self.random_state, log_every=self.log_every)

    def fit(self, X, y, out_dir=None, callback=None):
        X = check_images(X)
        y = list(y)
        if len(X) != len(y):
            raise ValueError(f"{len(X)} images but {len(y)} annotations")
        torch.manual_seed(self.random_state)
        model = SEMNet(self.model_config())
        samples, rejected = [], []
        for img, ann in zip(X, y):
            try:
                samples.append(model.prepare(img, ann))
            except InvalidAnnotation as exc:
                rejected.append((ann.image_id, str(exc)))
        if rejected:
            log.warning("rejected %d samples with unusable supervision", len(rejected))
        if not samples:
            raise ValueError("no usable training samples")
        self.history_: TrainHistory = train(samples, model, self.train_config(), out_dir, callback)
        self.model_ = model
        self.rejected_ = rejected
        self.n_samples_ = len(samples)
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit() or load() first")

    def predict_full(self, X, tokens=None) -> list[Prediction]:
        self._check_fitted()
        X = check_images(X)
        tokens = tokens if tokens is not None else [None] * len(X)
        self.model_.eval()
        return [self.model_.predict(img, tok) for img, tok in zip(X, tokens)]

    def predict(self, X, tokens=None) -> list[TableStructure]:
        return [p.structure for p in self.predict_full(X, tokens)]

    def predict_html(self, X, tokens=None) -> list[str]:
        return [to_html(s) for s in self.predict(X, tokens)]

    def evaluate(self, X, y, use_tokens: bool = True) -> dict:
        """Exact-structure accuracy and micro/macro adjacency F1 against annotations."""
        y = list(y)
        tokens = [a.tokens for a in y] if use_tokens else None
        preds = self.predict(X, tokens)
        gts = [annotation_structure(a) for a in y]
        scores = [f1(p, g) for p, g in zip(preds, gts)]
        tp = sum(s.tp for s in scores)
        n_pred = sum(s.n_pred for s in scores)
        n_gt = sum(s.n_gt for s in scores)
        p = tp / n_pred if n_pred else 0.0
        r = tp / n_gt if n_gt else 0.0
        return {
            "exact": float(np.mean([exact_structure(a, b) for a, b in zip(preds, gts)])),
            "f1_macro": float(np.mean([s.f1 for s in scores])),
            "precision": p, "recall": r, "f1": 2 * p * r / (p + r) if p + r else 0.0,
            "n": len(gts),
        }

    def score(self, X, y) -> float:
        return self.evaluate(X, y)["f1"]

    def save(self, path) -> None:
        self._check_fitted()
        save_checkpoint(path, self.model_, self.train_config(), getattr(self, "history_", None))

    @classmethod
    def load(cls, path) -> "SEMTableRecognizer":
        model = load_checkpoint(path)
        c = model.cfg
        est = cls(channels=c.backbone.channels, widths=c.backbone.widths, blocks=c.backbone.blocks,
                  splitter_hidden=c.splitter_hidden, pool_size=c.pool_size, text_dim=c.text_dim,
                  transformer_layers=c.transformer_layers, heads=c.heads, use_visual=c.use_visual,
                  use_text=c.use_text, positional=c.positional, merger_hidden=c.merger_hidden,
                  attn_dim=c.attn_dim, history_channels=c.history_channels, history_kernel=c.history_kernel,
                  threshold=c.threshold)
        est.model_ = model
        return est

