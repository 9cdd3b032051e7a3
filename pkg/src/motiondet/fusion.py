"""Pixel-level temporal fusion: complementary gates, gated aggregation,
and difference-based motion maps with channel attention.

All pairwise operations compare one non-reference frame map against the
reference map. Gates have a single channel broadcast over feature
channels; the two gates of a pair sum to one everywhere.
"""

import torch
from torch import nn


class PairwiseGate(nn.Module):
    """Predicts the complementary gate pair for (reference, other) maps.

    Two 3x3 convs with a ReLU between map the concatenated pair to one
    sigmoid channel; the other frame's gate is its complement.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(2 * channels, channels, kernel_size=3, padding=1),
            nn.ReLU(),
            nn.Conv2d(channels, 1, kernel_size=3, padding=1),
        )

    def forward(self, ref_map: torch.Tensor, other_map: torch.Tensor):
        if ref_map.shape != other_map.shape:
            raise ValueError(
                f"gate inputs differ in shape: {tuple(ref_map.shape)} vs {tuple(other_map.shape)}"
            )
        logits = self.net(torch.cat([ref_map, other_map], dim=-3))
        gate_ref = torch.sigmoid(logits)
        return gate_ref, 1.0 - gate_ref


def gated_fuse(ref_map, other_map, gate_ref, gate_other) -> torch.Tensor:
    """Pixel-wise convex combination: gate_ref * ref + gate_other * other."""
    if ref_map.shape != other_map.shape:
        raise ValueError("fusion inputs differ in shape")
    return gate_ref * ref_map + gate_other * other_map


def aggregate_maps(gated_maps, mode: str = "sum") -> torch.Tensor:
    """Combine the gated non-reference maps element-wise (sum or mean)."""
    if len(gated_maps) == 0:
        raise ValueError("nothing to aggregate")
    total = torch.stack(list(gated_maps), dim=0).sum(dim=0)
    if mode == "sum":
        return total
    if mode == "mean":
        return total / len(gated_maps)
    raise ValueError(f"unknown aggregation mode {mode!r}")


class ChannelAttention(nn.Module):
    """Squeeze-excite channel rescale: GAP -> bottleneck -> sigmoid weights."""

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        pooled = x.mean(dim=(-2, -1))
        weights = torch.sigmoid(self.fc2(torch.relu(self.fc1(pooled))))
        return x * weights[..., None, None]


class MotionEncoder(nn.Module):
    """Motion map from the temporal difference against the reference frame.

    The difference passes through two bias-free 3x3 convs (so identical
    maps yield an exactly-zero motion map) and a channel attention rescale.
    """

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, kernel_size=3, padding=1, bias=False)
        self.conv2 = nn.Conv2d(channels, channels, kernel_size=3, padding=1, bias=False)
        self.attention = ChannelAttention(channels, reduction)

    def forward(self, ref_map: torch.Tensor, other_map: torch.Tensor) -> torch.Tensor:
        if ref_map.shape != other_map.shape:
            raise ValueError("motion inputs differ in shape")
        diff = other_map - ref_map
        out = self.conv2(torch.relu(self.conv1(diff)))
        return self.attention(out)


def motion_map_set(motion_encoder: MotionEncoder, maps, reference: int) -> list:
    """Per-frame motion maps; the reference entry is the zero map.

    All non-reference pairs run through the encoder as one batch.
    """
    ref_map = maps[reference]
    others = [m for i, m in enumerate(maps) if i != reference]
    if others:
        stacked = torch.stack(others, dim=0)
        encoded = motion_encoder(ref_map.expand_as(stacked), stacked)
    out = []
    j = 0
    for i in range(len(maps)):
        if i == reference:
            out.append(torch.zeros_like(ref_map))
        else:
            out.append(encoded[j])
            j += 1
    return out


def fuse_window(gate: PairwiseGate, maps, reference: int, mode: str = "sum") -> torch.Tensor:
    """Aggregated reference-frame map from all non-reference pairs."""
    ref_map = maps[reference]
    others = torch.stack([m for i, m in enumerate(maps) if i != reference], dim=0)
    ref = ref_map.expand_as(others)
    g_ref, g_other = gate(ref, others)
    gated = gated_fuse(ref, others, g_ref, g_other)
    return aggregate_maps(list(gated.unbind(0)), mode=mode)
