"""Autoregressive grid merger.

Each step emits a binary map over the M*N grids marking the grids of one
table cell. Attention energies are conditioned on the running sum of earlier
maps through a small convolution over the grid, and are binarized rather
than softmax-normalized.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .splitter import bce


@dataclass
class MergeMapSequence:
    maps: np.ndarray      # (C, M*N) in {0, 1}
    energies: np.ndarray  # (C, M*N) pre-binarization

    def __len__(self):
        return len(self.maps)


@dataclass
class DecoderState:
    hidden: torch.Tensor
    context: torch.Tensor
    history: torch.Tensor
    steps: int = 0


def binarize(x):
    """1 where sigmoid(x) > 0.5, i.e. where x > 0."""
    return (x > 0).to(x.dtype) if torch.is_tensor(x) else (np.asarray(x) > 0).astype(np.int64)


def context(m: torch.Tensor, E: torch.Tensor) -> torch.Tensor:
    """Mean of the rows of ``E`` selected by the binary map ``m``; zeros for an empty map."""
    total = m.sum()
    if total <= 0:
        return E.new_zeros(E.shape[-1])
    return (m / total) @ E


class Merger(nn.Module):
    def __init__(self, channels: int = 64, hidden: int = 256, attn_dim: int = 256,
                 history_channels: int = 32, history_kernel: int = 3):
        super().__init__()
        self.gru_pred = nn.GRUCell(channels, hidden)
        self.gru_out = nn.GRUCell(channels, hidden)
        self.W_att = nn.Linear(hidden, attn_dim, bias=False)
        self.U_att = nn.Linear(channels, attn_dim, bias=False)
        self.U_F = nn.Linear(history_channels, attn_dim, bias=False)
        self.nu = nn.Parameter(torch.empty(attn_dim))
        self.Q = nn.Conv2d(1, history_channels, history_kernel, padding=history_kernel // 2, bias=False)
        nn.init.uniform_(self.nu, -1 / attn_dim ** 0.5, 1 / attn_dim ** 0.5)

    @property
    def hidden_size(self) -> int:
        return self.gru_pred.hidden_size

    def init_state(self, E: torch.Tensor) -> DecoderState:
        return DecoderState(E.new_zeros(self.hidden_size), E.new_zeros(E.shape[-1]), E.new_zeros(E.shape[0]))

    def energies(self, E: torch.Tensor, h_pred: torch.Tensor, history: torch.Tensor,
                 shape: tuple[int, int], proj_E: torch.Tensor | None = None) -> torch.Tensor:
        m, n = shape
        f = self.Q(history.reshape(1, 1, m, n))[0].reshape(self.Q.out_channels, m * n).T
        ue = self.U_att(E) if proj_E is None else proj_E
        return torch.tanh(self.W_att(h_pred)[None] + ue + self.U_F(f)) @ self.nu

    def attention_step(self, E, h_pred, history, shape, proj_E=None):
        e = self.energies(E, h_pred, history, shape, proj_E)
        return e, binarize(e.detach())

    def decode_step(self, state: DecoderState, E: torch.Tensor, shape: tuple[int, int],
                    forced: torch.Tensor | None = None, proj_E: torch.Tensor | None = None):
        """One step. With ``forced`` (teacher forcing) the context and history use it instead of the prediction."""
        h_pred = self.gru_pred(state.context[None], state.hidden[None])[0]
        e, m = self.attention_step(E, h_pred, state.history, shape, proj_E)
        chosen = m if forced is None else forced
        c = context(chosen, E)
        h = self.gru_out(c[None], h_pred[None])[0]
        new = DecoderState(h, c, state.history + chosen, state.steps + 1)
        return new, e, m

    def decode_train(self, E: torch.Tensor, targets, shape: tuple[int, int]):
        """Teacher-forced unroll; returns the (C, M*N) energies and the merge loss."""
        y = torch.as_tensor(np.asarray(targets), dtype=E.dtype)
        if y.dim() != 2 or y.shape[1] != E.shape[0]:
            raise ValueError(f"targets {tuple(y.shape)} do not match {E.shape[0]} grids")
        state = self.init_state(E)
        proj_E = self.U_att(E)
        energies = []
        for t in range(y.shape[0]):
            state, e, _ = self.decode_step(state, E, shape, forced=y[t], proj_E=proj_E)
            energies.append(e)
        energies = torch.stack(energies)
        return energies, merger_loss(energies, y)

    @torch.no_grad()
    def decode_infer(self, E: torch.Tensor, shape: tuple[int, int], max_steps: int | None = None) -> MergeMapSequence:
        """Greedy decoding until every grid is claimed.

        Grids already claimed are masked out of each new map; an empty map
        falls back to the unclaimed grid with the highest energy.
        """
        n = E.shape[0]
        max_steps = n if max_steps is None else max_steps
        state = self.init_state(E)
        proj_E = self.U_att(E)
        maps, energies = [], []
        claimed = torch.zeros(n, dtype=torch.bool)
        while not claimed.all() and len(maps) < max_steps:
            h_pred = self.gru_pred(state.context[None], state.hidden[None])[0]
            e, m = self.attention_step(E, h_pred, state.history, shape, proj_E)
            m = (m > 0) & ~claimed
            if not m.any():
                masked = e.masked_fill(claimed, float("-inf"))
                m = torch.zeros_like(claimed)
                m[int(torch.argmax(masked))] = True
            mf = m.to(E.dtype)
            c = context(mf, E)
            h = self.gru_out(c[None], h_pred[None])[0]
            state = DecoderState(h, c, state.history + mf, state.steps + 1)
            claimed |= m
            maps.append(m.numpy().astype(np.int64))
            energies.append(e.cpu().numpy())
        if not claimed.all():
            # step budget exhausted: leftover grids become their own cells
            for i in torch.nonzero(~claimed).flatten().tolist():
                one = np.zeros(n, dtype=np.int64)
                one[i] = 1
                maps.append(one)
                energies.append(np.full(n, np.nan))
        return MergeMapSequence(np.stack(maps) if maps else np.zeros((0, n), np.int64),
                                np.stack(energies) if energies else np.zeros((0, n)))


def merger_loss(energies: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """sum_t sum_i BCE(e_ti, y_ti) / (C * |y_t|_1)."""
    y = torch.as_tensor(targets, dtype=energies.dtype)
    sizes = y.sum(dim=1)
    if (sizes <= 0).any():
        raise ValueError("every merge target needs at least one grid")
    c = y.shape[0]
    return (bce(energies, y).sum(dim=1) / (c * sizes)).sum()


def dump_debug(seq: MergeMapSequence, shape: tuple[int, int], path) -> None:
    """Per-step energy heatmaps over the grid as JSON."""
    m, n = shape
    steps = [{"step": t, "energies": np.nan_to_num(e, nan=0.0).reshape(m, n).tolist(),
              "map": mp.reshape(m, n).tolist()} for t, (e, mp) in enumerate(zip(seq.energies, seq.maps))]
    with open(path, "w") as fh:
        json.dump({"shape": [m, n], "steps": steps}, fh)


__all__ = ["DecoderState", "MergeMapSequence", "Merger", "binarize", "context", "merger_loss"]
