"""Region proposal network over the aggregated reference-frame map."""

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import boxes as boxops


def anchor_grid(feature_size, stride: int, scales, ratios, offsets=((0.0, 0.0),)) -> np.ndarray:
    """Anchor boxes for every feature cell, shape [H'*W'*A, 4].

    Anchors of area scale**2 and aspect ratio h/w = ratio sit at feature
    cell centers, optionally replicated at sub-cell pixel ``offsets`` so the
    anchor lattice can be denser than the feature stride. Ordering is
    row-major over cells, then (offset, scale, ratio) within a cell.
    """
    fh, fw = feature_size
    base = []
    for dx, dy in offsets:
        for scale in scales:
            for ratio in ratios:
                w = scale / np.sqrt(ratio)
                h = scale * np.sqrt(ratio)
                base.append([dx - w / 2, dy - h / 2, dx + w / 2, dy + h / 2])
    base = np.asarray(base, dtype=np.float64)
    cy, cx = np.mgrid[0:fh, 0:fw]
    centers = np.stack([cx, cy, cx, cy], axis=-1).reshape(-1, 1, 4) * stride + stride / 2.0
    return (centers + base[None, :, :]).reshape(-1, 4)


@dataclass
class RpnOutput:
    """Raw per-anchor predictions plus the filtered proposal set."""

    objectness: torch.Tensor  # [num_anchors]
    deltas: torch.Tensor  # [num_anchors, 4]
    anchors: np.ndarray  # [num_anchors, 4]
    proposals: np.ndarray  # [K, 4] decoded, clipped, NMS-filtered
    proposal_scores: np.ndarray  # [K]


class RpnHead(nn.Module):
    """3x3 conv trunk with 1x1 objectness and box-delta branches."""

    def __init__(self, channels: int, anchors_per_cell: int):
        super().__init__()
        self.trunk = nn.Conv2d(channels, channels, kernel_size=3, padding=1)
        self.objectness = nn.Conv2d(channels, anchors_per_cell, kernel_size=1)
        self.deltas = nn.Conv2d(channels, anchors_per_cell * 4, kernel_size=1)
        self.anchors_per_cell = anchors_per_cell
        # bias toward the background prior so early ranking is stable
        nn.init.constant_(self.objectness.bias, -2.0)

    def forward(self, fmap: torch.Tensor):
        """Flatten predictions to anchor order matching :func:`anchor_grid`."""
        x = torch.relu(self.trunk(fmap.unsqueeze(0)))
        obj = self.objectness(x)[0]  # [A, H, W]
        del_ = self.deltas(x)[0]  # [4A, H, W]
        a = self.anchors_per_cell
        h, w = obj.shape[-2:]
        obj = obj.permute(1, 2, 0).reshape(h * w * a)
        del_ = del_.reshape(a, 4, h, w).permute(2, 3, 0, 1).reshape(h * w * a, 4)
        return obj, del_


def select_proposals(
    objectness,
    deltas,
    anchors: np.ndarray,
    image_size,
    pre_nms_topk: int,
    nms_iou: float,
    post_nms_topk: int,
    min_size: float = 1.0,
):
    """Decode, clip, filter, and NMS anchor predictions into proposals.

    Scores and deltas may be torch tensors (detached here) or arrays; ties
    in the top-k selections fall back to ascending anchor index.
    """
    scores = objectness.detach().cpu().numpy() if torch.is_tensor(objectness) else np.asarray(objectness)
    raw = deltas.detach().cpu().numpy() if torch.is_tensor(deltas) else np.asarray(deltas)
    scores = scores.astype(np.float64)
    order = np.lexsort((np.arange(len(scores)), -scores))[:pre_nms_topk]
    decoded = boxops.decode_delta(anchors[order], raw[order], image_size=image_size)
    w = decoded[:, 2] - decoded[:, 0]
    h = decoded[:, 3] - decoded[:, 1]
    valid = (w >= min_size) & (h >= min_size)
    decoded = decoded[valid]
    kept_scores = scores[order][valid]
    keep = boxops.nms(decoded, kept_scores, nms_iou)[:post_nms_topk]
    return decoded[keep], kept_scores[keep]


def rpn_forward(
    fmap: torch.Tensor,
    head: RpnHead,
    stride: int,
    scales,
    ratios,
    image_size,
    offsets=((0.0, 0.0),),
    pre_nms_topk: int = 600,
    nms_iou: float = 0.7,
    post_nms_topk: int = 300,
    min_size: float = 1.0,
) -> RpnOutput:
    """Full RPN pass on one aggregated map: predictions plus proposals."""
    obj, deltas = head(fmap)
    anchors = anchor_grid(fmap.shape[-2:], stride, scales, ratios, offsets)
    proposals, scores = select_proposals(
        obj, deltas, anchors, image_size, pre_nms_topk, nms_iou, post_nms_topk, min_size
    )
    return RpnOutput(
        objectness=obj, deltas=deltas, anchors=anchors, proposals=proposals, proposal_scores=scores
    )
