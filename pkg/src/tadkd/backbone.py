"""Small trainable video encoder.

Maps a (T, C_in, H, W) frame or motion-map sequence to a spatially
pooled feature sequence of shape (floor(T / r_T), C_feat). Trailing
frames that do not fill a temporal stride window are dropped.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn


@dataclass(frozen=True)
class BackboneConfig:
    in_channels: int = 3
    feat_dim: int = 16
    temporal_stride: int = 4
    depth: int = 2
    width: int = 8

    def __post_init__(self):
        if self.temporal_stride < 1:
            raise ValueError(f"temporal_stride must be >= 1, got {self.temporal_stride}")
        if self.feat_dim < 1 or self.depth < 1 or self.width < 1:
            raise ValueError("feat_dim, depth and width must be positive")
        if self.in_channels not in (2, 3):
            raise ValueError(f"in_channels must be 2 (flow) or 3 (frames), got {self.in_channels}")


class VideoEncoder(nn.Module):
    """Stacked 3D-conv stages, global spatial pooling, temporal striding."""

    def __init__(self, config: BackboneConfig, bias: bool = True):
        super().__init__()
        self.config = config
        layers = []
        c_in = config.in_channels
        for i in range(config.depth):
            c_out = config.width * (2 ** i)
            layers.append(nn.Conv3d(c_in, c_out, kernel_size=3, padding=1, bias=bias))
            layers.append(nn.ReLU())
            layers.append(nn.AvgPool3d(kernel_size=(1, 2, 2)))
            c_in = c_out
        layers.append(nn.Conv3d(c_in, config.feat_dim, kernel_size=(3, 1, 1), padding=(1, 0, 0), bias=bias))
        layers.append(nn.ReLU())
        self.stages = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Encode one video (T, C_in, H, W) to features (T', C_feat)."""
        if x.ndim != 4:
            raise ValueError(f"expected (T, C, H, W), got shape {tuple(x.shape)}")
        t, c, h, w = x.shape
        r = self.config.temporal_stride
        if c != self.config.in_channels:
            raise ValueError(f"expected {self.config.in_channels} input channels, got {c}")
        if t < r:
            raise ValueError(f"need at least temporal_stride={r} frames, got {t}")
        # (T, C, H, W) -> (1, C, T, H, W)
        y = self.stages(x.permute(1, 0, 2, 3).unsqueeze(0))
        y = y.mean(dim=(3, 4))  # global spatial pooling -> (1, C_feat, T)
        t_out = (t // r) * r
        y = torch.nn.functional.avg_pool1d(y[:, :, :t_out], kernel_size=r, stride=r)
        return y.squeeze(0).transpose(0, 1)  # (T', C_feat)

    encode = forward
