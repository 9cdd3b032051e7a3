"""Second-stage temporal box refinement and RoI feature pooling.

Given reference-frame proposals, the calibration head predicts per-frame
offsets against the *same* proposal (used as anchor) from motion-aware
maps, producing a linked box for every window frame. RoI features for the
detection head are then pooled at the frame-matched boxes.
"""

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .boxes import MAX_DELTA_WH


def motion_aware_maps(feature_maps, motion_maps) -> list:
    """Element-wise sum of per-frame visual and motion maps."""
    if len(feature_maps) != len(motion_maps):
        raise ValueError(
            f"length mismatch: {len(feature_maps)} feature vs {len(motion_maps)} motion maps"
        )
    return [f + m for f, m in zip(feature_maps, motion_maps)]


def roi_align_batched(fmaps: torch.Tensor, boxes: torch.Tensor, stride: int, out_size: int) -> torch.Tensor:
    """Bilinear RoI pooling of [T, C, H, W] maps at [T, K, 4] boxes.

    Each output cell is sampled once at its center. Feature cell (r, c) is
    treated as located at image point ((c + 0.5) * stride,
    (r + 0.5) * stride), so a box covering an exact cell block reproduces
    those cell values. Samples outside the map read zeros. Differentiable
    w.r.t. both the maps and the box coordinates. Returns [T, K, C, P, P].
    """
    t, c, fh, fw = fmaps.shape
    k = boxes.shape[1]
    p = out_size
    if k == 0:
        return fmaps.new_zeros((t, 0, c, p, p))
    widths = boxes[..., 2] - boxes[..., 0]
    heights = boxes[..., 3] - boxes[..., 1]
    if bool((widths.detach() <= 0).any()) or bool((heights.detach() <= 0).any()):
        raise ValueError("roi_align requires non-degenerate boxes")

    steps = torch.arange(p, dtype=fmaps.dtype, device=fmaps.device) + 0.5
    sx = boxes[..., 0, None] + steps * (widths[..., None] / p)  # [T, K, P]
    sy = boxes[..., 1, None] + steps * (heights[..., None] / p)
    u = (sx / stride - 0.5).clamp(-1.0, float(fw))
    v = (sy / stride - 0.5).clamp(-1.0, float(fh))

    u0 = u.detach().floor()
    v0 = v.detach().floor()
    fu = (u - u0)[:, :, None, :]  # [T, K, 1, P] fraction along x
    fv = (v - v0)[:, :, :, None]  # [T, K, P, 1] fraction along y
    iu = u0.long()[:, :, None, :].expand(t, k, p, p) + 1  # into padded coords
    iv = v0.long()[:, :, :, None].expand(t, k, p, p) + 1

    padded = fmaps.new_zeros((t, c, fh + 2, fw + 2))
    padded[:, :, 1 : fh + 1, 1 : fw + 1] = fmaps
    flat = padded.reshape(t, c, -1)

    # one gather for all four bilinear corners
    base = (iv * (fw + 2) + iu).reshape(t, -1)
    idx = torch.cat([base, base + 1, base + (fw + 2), base + (fw + 2) + 1], dim=1)
    gathered = flat.gather(2, idx[:, None, :].expand(t, c, idx.shape[1]))
    g00, g01, g10, g11 = gathered.reshape(t, c, 4, k, p, p).unbind(2)

    w00 = ((1 - fv) * (1 - fu))[:, None]
    w01 = ((1 - fv) * fu)[:, None]
    w10 = (fv * (1 - fu))[:, None]
    w11 = (fv * fu)[:, None]
    out = g00 * w00 + g01 * w01 + g10 * w10 + g11 * w11  # [T, C, K, P, P]
    return out.permute(0, 2, 1, 3, 4)


def roi_align(fmap: torch.Tensor, boxes, stride: int, out_size: int) -> torch.Tensor:
    """Single-map RoI pooling: [C, H, W] + [K, 4] boxes -> [K, C, P, P]."""
    if not torch.is_tensor(boxes):
        boxes = torch.as_tensor(np.asarray(boxes, dtype=np.float64), dtype=fmap.dtype)
    boxes = boxes.reshape(-1, 4).to(fmap.dtype)
    return roi_align_batched(fmap[None], boxes[None], stride, out_size)[0]


def decode_deltas_torch(anchors: torch.Tensor, deltas: torch.Tensor, image_size) -> torch.Tensor:
    """Differentiable delta decoding with clipping and a 1px minimum size."""
    h, w = float(image_size[0]), float(image_size[1])
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    ax = anchors[:, 0] + 0.5 * aw
    ay = anchors[:, 1] + 0.5 * ah
    cx = ax + deltas[:, 0] * aw
    cy = ay + deltas[:, 1] * ah
    bw = aw * torch.exp(deltas[:, 2].clamp(max=MAX_DELTA_WH))
    bh = ah * torch.exp(deltas[:, 3].clamp(max=MAX_DELTA_WH))
    x1 = (cx - 0.5 * bw).clamp(0.0, w - 1.0)
    y1 = (cy - 0.5 * bh).clamp(0.0, h - 1.0)
    x2 = torch.minimum(torch.maximum(cx + 0.5 * bw, x1 + 1.0), torch.full_like(x1, w))
    y2 = torch.minimum(torch.maximum(cy + 0.5 * bh, y1 + 1.0), torch.full_like(y1, h))
    return torch.stack([x1, y1, x2, y2], dim=1)


@dataclass
class LinkedProposals:
    """Reference-frame anchors with their per-frame linked boxes.

    anchors: [K, 4] reference-frame proposals serving as shared anchors.
    boxes: [K, W, 4] decoded per-frame boxes (W = window length); the
        entry at the reference position is the refined reference box.
    deltas: [K, W, 4] raw predicted offsets (training signal).
    class_logits: [K, num_classes + 1], trained but unused at inference.
    """

    anchors: torch.Tensor
    boxes: torch.Tensor
    deltas: torch.Tensor
    class_logits: torch.Tensor


class TemporalBoxHead(nn.Module):
    """Shared-weight per-frame offset head plus an averaged class head.

    The offset head maps globally pooled motion-aware RoI features of one
    frame to a box delta against the shared anchor; the class head reads
    the across-frame feature average (training supervision only).
    """

    def __init__(self, channels: int, num_classes: int):
        super().__init__()
        self.offset = nn.Sequential(
            nn.Linear(channels, channels), nn.ReLU(), nn.Linear(channels, 4)
        )
        self.classify = nn.Linear(channels, num_classes + 1)
        with torch.no_grad():
            self.offset[-1].weight.mul_(0.1)  # near-anchor start for linked boxes
            self.offset[-1].bias.zero_()
            self.classify.bias.zero_()
            self.classify.bias[0] = 2.0  # background prior

    def forward(self, aware_maps, anchors, stride: int, out_size: int, image_size) -> LinkedProposals:
        """Predict linked boxes for every frame from motion-aware maps."""
        device = aware_maps[0].device
        dtype = aware_maps[0].dtype
        if not torch.is_tensor(anchors):
            anchors = torch.as_tensor(np.asarray(anchors, dtype=np.float64), dtype=dtype, device=device)
        anchors = anchors.reshape(-1, 4).to(dtype)
        k = anchors.shape[0]
        window = len(aware_maps)
        if k == 0:
            empty = torch.zeros((0, window, 4), dtype=dtype, device=device)
            logits = torch.zeros((0, self.classify.out_features), dtype=dtype, device=device)
            return LinkedProposals(anchors=anchors, boxes=empty, deltas=empty.clone(), class_logits=logits)

        stacked = torch.stack(list(aware_maps), dim=0)  # [W, C, H', W']
        shared = anchors[None].expand(window, k, 4)
        pooled = roi_align_batched(stacked, shared, stride, out_size).mean(dim=(3, 4))  # [W, K, C]
        deltas = self.offset(pooled)  # [W, K, 4]
        flat_boxes = decode_deltas_torch(
            anchors.repeat(window, 1), deltas.reshape(window * k, 4), image_size
        )
        class_logits = self.classify(pooled.mean(dim=0))
        return LinkedProposals(
            anchors=anchors,
            boxes=flat_boxes.reshape(window, k, 4).permute(1, 0, 2),
            deltas=deltas.permute(1, 0, 2),
            class_logits=class_logits,
        )


@dataclass
class RoIFeatureBundle:
    """RoI features pooled for one proposal batch.

    pooled_ref: [K, C, P, P] from the aggregated map at the refined
        reference boxes.
    pooled_frames: per-frame list of [K, C, P, P] from the visual maps at
        the frame-matched linked boxes.
    pooled_motion: same, from the motion maps.
    """

    pooled_ref: torch.Tensor
    pooled_frames: list
    pooled_motion: list


def pool_all(
    aggregated_map,
    feature_maps,
    motion_maps,
    linked: LinkedProposals,
    reference: int,
    stride: int,
    out_size: int,
) -> RoIFeatureBundle:
    """Pool reference, per-frame visual, and per-frame motion RoI features."""
    frame_boxes = linked.boxes.permute(1, 0, 2)  # [W, K, 4]
    pooled_frames = roi_align_batched(
        torch.stack(list(feature_maps), dim=0), frame_boxes, stride, out_size
    )
    pooled_motion = roi_align_batched(
        torch.stack(list(motion_maps), dim=0), frame_boxes, stride, out_size
    )
    pooled_ref = roi_align(aggregated_map, linked.boxes[:, reference, :], stride, out_size)
    return RoIFeatureBundle(
        pooled_ref=pooled_ref,
        pooled_frames=list(pooled_frames.unbind(0)),
        pooled_motion=list(pooled_motion.unbind(0)),
    )
