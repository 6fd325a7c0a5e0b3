"""Local sensorimotor pattern encoder.

Maps a channels x time trial to a token sequence: multi-scale temporal
convolutions (same-length padding), a depthwise spatial convolution that
collapses the channel axis, a pointwise fusion back to the embedding
dimension, a smooth nonlinearity, and average pooling that fixes the token
count at floor(T / pooling_size).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigurationError, ShapeError
from .signals import EpochedTrial


@dataclass
class EncoderConfig:
    temporal_kernel_sizes: tuple[int, ...] = (36, 24, 18)
    filters_per_branch: int = 10
    spatial_multiplier: int = 3
    pooling_size: int = 8
    embedding_dim: int = 30

    def __post_init__(self) -> None:
        self.temporal_kernel_sizes = tuple(self.temporal_kernel_sizes)
        if self.pooling_size < 1:
            raise ConfigurationError("pooling_size must be >= 1")
        if any(k < 1 for k in self.temporal_kernel_sizes):
            raise ConfigurationError("temporal kernel sizes must be >= 1")
        expected = self.filters_per_branch * len(self.temporal_kernel_sizes)
        if self.embedding_dim != expected:
            raise ConfigurationError(
                f"embedding_dim must equal filters_per_branch * n_branches "
                f"({self.filters_per_branch} * {len(self.temporal_kernel_sizes)} = {expected}), "
                f"got {self.embedding_dim}"
            )

    def token_count(self, n_samples: int) -> int:
        return n_samples // self.pooling_size


class TokenEncoder(nn.Module):
    """Trial (C, T) -> token sequence (L, D), differentiable end to end."""

    def __init__(self, cfg: EncoderConfig, n_channels: int):
        super().__init__()
        self.cfg = cfg
        self.n_channels = n_channels
        d = cfg.embedding_dim
        self.branches = nn.ModuleList(
            nn.Conv2d(1, cfg.filters_per_branch, (1, k)) for k in cfg.temporal_kernel_sizes
        )
        self.spatial = nn.Conv2d(d, d * cfg.spatial_multiplier, (n_channels, 1), groups=d)
        self.fuse = nn.Conv2d(d * cfg.spatial_multiplier, d, 1)
        self.pool = nn.AvgPool2d((1, cfg.pooling_size))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """x: (batch, C, T) -> tokens (batch, L, D)."""
        if x.ndim != 3 or x.shape[1] != self.n_channels:
            raise ShapeError(
                f"expected input (batch, {self.n_channels}, T), got {tuple(x.shape)}"
            )
        n_samples = x.shape[2]
        max_k = max(self.cfg.temporal_kernel_sizes)
        if n_samples < max_k:
            raise ConfigurationError(
                f"trial length {n_samples} shorter than largest temporal kernel {max_k}"
            )
        x = x.unsqueeze(1)
        outs = []
        for conv, k in zip(self.branches, self.cfg.temporal_kernel_sizes):
            left = (k - 1) // 2
            padded = F.pad(x, (left, k - 1 - left))
            outs.append(conv(padded))
        feats = torch.cat(outs, dim=1)
        feats = self.fuse(self.spatial(feats))
        feats = F.silu(feats)
        feats = self.pool(feats)
        return feats.squeeze(2).transpose(1, 2)


def encode_tokens(trial: EpochedTrial, encoder: TokenEncoder) -> np.ndarray:
    """Convenience wrapper: run one trial through ``encoder`` without grad."""
    dtype = next(encoder.parameters()).dtype
    with torch.no_grad():
        x = torch.as_tensor(trial.data, dtype=dtype).unsqueeze(0)
        return encoder(x).squeeze(0).numpy()
