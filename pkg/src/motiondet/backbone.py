"""Tiny shared-weight convolutional feature extractor.

Four 3x3 conv stages (strides 2, 2, 2, 1) with batch-statistics
normalization and ReLU, producing stride-8 feature maps. All frames of a
window pass through the same parameters, so identical frames map to
identical features.
"""

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn


@dataclass
class FeatureMapSet:
    """Per-frame feature maps of one window.

    maps: list of [C, H', W'] tensors, one per frame, identical shapes.
    stride: input pixels per feature cell.
    reference: list position of the reference frame.
    """

    maps: list
    stride: int
    reference: int

    def __post_init__(self):
        shapes = {tuple(m.shape) for m in self.maps}
        if len(shapes) > 1:
            raise ValueError(f"feature maps differ in shape: {shapes}")


class Backbone(nn.Module):
    """Stride-8 extractor: widths (16, 32, 64, 64) at the default config."""

    def __init__(self, in_channels: int = 3, widths=(16, 32, 64, 64)):
        super().__init__()
        strides = (2, 2, 2, 1)
        layers = []
        prev = in_channels
        for width, stride in zip(widths, strides):
            layers += [
                nn.Conv2d(prev, width, kernel_size=3, stride=stride, padding=1),
                nn.BatchNorm2d(width, track_running_stats=False),
                nn.ReLU(inplace=False),
            ]
            prev = width
        self.stages = nn.Sequential(*layers)
        self.out_channels = prev
        self.stride = 8

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        """Map a [T, 3, H, W] frame stack to [T, C, H/8, W/8] features."""
        if frames.ndim != 4:
            raise ValueError(f"expected [T, C, H, W] input, got shape {tuple(frames.shape)}")
        return self.stages(frames)


def normalize_frames(frames, device=None, dtype=torch.float32) -> torch.Tensor:
    """Standardize uint8 frames to zero-mean unit-variance channels.

    Accepts a list of [H, W, 3] uint8 arrays (or an equivalent stacked
    array) and returns a [T, 3, H, W] tensor standardized per frame and
    channel.
    """
    arr = np.stack([np.asarray(f) for f in frames])
    stack = torch.as_tensor(arr, device=device).to(dtype).permute(0, 3, 1, 2)
    mean = stack.mean(dim=(2, 3), keepdim=True)
    std = stack.std(dim=(2, 3), keepdim=True, unbiased=False)
    return (stack - mean) / (std + 1e-6)


def backbone_forward(window_frames, backbone: Backbone, reference: int) -> FeatureMapSet:
    """Run the shared-weight backbone over all frames of one window."""
    sizes = {f.shape[:2] if hasattr(f, "shape") else None for f in window_frames}
    if len(sizes) > 1:
        raise ValueError(f"non-uniform frame sizes in window: {sizes}")
    dtype = next(backbone.parameters()).dtype
    device = next(backbone.parameters()).device
    stack = normalize_frames(window_frames, device=device, dtype=dtype)
    maps = backbone(stack)
    return FeatureMapSet(maps=list(maps.unbind(0)), stride=backbone.stride, reference=reference)
