"""Multi-task losses: proposal network, temporal refinement, detection head.

Target assignment for each stage lives here as well. Class labels use 0
for background and ``class_id + 1`` for dataset classes.
"""

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from . import boxes as boxops


def smooth_l1(x: torch.Tensor) -> torch.Tensor:
    """Elementwise smooth-L1 with the quadratic/linear switch at |x| = 1."""
    ax = x.abs()
    return torch.where(ax < 1.0, 0.5 * x * x, ax - 0.5)


def sample_balanced(labels: np.ndarray, batch_size: int, pos_fraction: float, rng) -> np.ndarray:
    """Sample up to ``batch_size`` candidates with a capped positive share.

    Ignored candidates are never sampled. Returns sorted indices for a
    deterministic downstream ordering given the generator state.
    """
    pos = np.flatnonzero(labels == boxops.POSITIVE)
    neg = np.flatnonzero(labels == boxops.NEGATIVE)
    n_pos = min(len(pos), int(round(batch_size * pos_fraction)))
    if len(pos) > n_pos:
        pos = rng.choice(pos, size=n_pos, replace=False)
    n_neg = min(len(neg), batch_size - len(pos))
    if len(neg) > n_neg:
        neg = rng.choice(neg, size=n_neg, replace=False)
    return np.sort(np.concatenate([pos, neg]).astype(np.int64))


def rpn_loss(
    rpn_out,
    gt_boxes,
    rng,
    pos_iou: float = 0.7,
    neg_iou: float = 0.3,
    batch_size: int = 256,
    pos_fraction: float = 0.5,
):
    """Binary objectness cross-entropy plus smooth-L1 box regression.

    Anchors are assigned against ground truth, a balanced sample is drawn,
    and the regression term (positives only) is normalized by the sample
    count. Returns (l_cls, l_reg) tensors.
    """
    assignment = boxops.assign_targets(rpn_out.anchors, gt_boxes, pos_iou, neg_iou)
    sample = sample_balanced(assignment.labels, batch_size, pos_fraction, rng)
    device = rpn_out.objectness.device
    dtype = rpn_out.objectness.dtype
    if len(sample) == 0:
        zero = torch.zeros((), dtype=dtype, device=device)
        return zero, zero.clone()
    labels = torch.as_tensor(
        (assignment.labels[sample] == boxops.POSITIVE).astype(np.float64), dtype=dtype, device=device
    )
    l_cls = F.binary_cross_entropy_with_logits(rpn_out.objectness[sample], labels)
    pos = sample[assignment.labels[sample] == boxops.POSITIVE]
    if len(pos) == 0:
        l_reg = torch.zeros((), dtype=dtype, device=device)
    else:
        targets = torch.as_tensor(assignment.deltas[pos], dtype=dtype, device=device)
        l_reg = smooth_l1(rpn_out.deltas[pos] - targets).sum() / len(sample)
    return l_cls, l_reg


@dataclass
class RefinementTargets:
    """Supervision for the temporal refinement stage.

    class_targets: [K] labels at the reference frame (0 = background).
    reg_targets: [K, W, 4] per-frame deltas against each proposal-anchor.
    reg_mask: [K, W] True where the matched track exists at that frame
        (positives only): exactly the supervised (proposal, frame) pairs.
    ref_boxes: [K, 4] matched ground-truth box at the reference frame
        (zeros for non-positives); the detection head regresses onto it.
    """

    class_targets: np.ndarray
    reg_targets: np.ndarray
    reg_mask: np.ndarray
    ref_boxes: np.ndarray


def refinement_targets(
    anchors: np.ndarray,
    window_annotations,
    reference: int,
    pos_iou: float = 0.5,
    neg_iou: float = 0.5,
) -> RefinementTargets:
    """Build per-frame linked-box targets by following matched track ids."""
    anchors = boxops.as_boxes(anchors)
    k = anchors.shape[0]
    window = len(window_annotations)
    ref_objs = window_annotations[reference]
    class_targets = np.zeros(k, dtype=np.int64)
    reg_targets = np.zeros((k, window, 4))
    reg_mask = np.zeros((k, window), dtype=bool)
    ref_boxes = np.zeros((k, 4))
    if k == 0 or len(ref_objs) == 0:
        return RefinementTargets(class_targets, reg_targets, reg_mask, ref_boxes)

    assignment = boxops.assign_targets(anchors, [o.bbox for o in ref_objs], pos_iou, neg_iou)
    track_boxes = [{o.track_id: o.bbox for o in objs} for objs in window_annotations]
    positives = np.flatnonzero(assignment.labels == boxops.POSITIVE)
    tracks = np.full(k, -1, dtype=np.int64)
    for i in positives:
        matched = ref_objs[assignment.matched_gt[i]]
        class_targets[i] = matched.class_id + 1
        ref_boxes[i] = matched.bbox
        tracks[i] = matched.track_id
    for j in range(window):
        present = [i for i in positives if tracks[i] in track_boxes[j]]
        if not present:
            continue
        gt = [track_boxes[j][tracks[i]] for i in present]
        reg_targets[present, j] = boxops.encode_delta(anchors[present], gt)
        reg_mask[present, j] = True
    return RefinementTargets(class_targets, reg_targets, reg_mask, ref_boxes)


def ref_loss(linked, targets: RefinementTargets):
    """Refinement loss: mean reference-frame class CE plus the per-frame
    box term summed over supervised (proposal, frame) pairs and normalized
    by their total count."""
    logits = linked.class_logits
    k = logits.shape[0]
    dtype = logits.dtype
    device = logits.device
    if k == 0:
        return torch.zeros((), dtype=dtype, device=device)
    labels = torch.as_tensor(targets.class_targets, dtype=torch.long, device=device)
    l_cls = F.cross_entropy(logits, labels)
    n_supervised = int(targets.reg_mask.sum())
    if n_supervised == 0:
        return l_cls
    mask = torch.as_tensor(targets.reg_mask, device=device)
    reg_t = torch.as_tensor(targets.reg_targets, dtype=dtype, device=device)
    per_pair = smooth_l1(linked.deltas - reg_t).sum(dim=2)
    l_reg = (per_pair * mask).sum() / n_supervised
    return l_cls + l_reg


def det_loss(class_logits, deltas, class_targets, reg_targets, positive_mask):
    """Detection head loss: class CE over all sampled proposals plus
    smooth-L1 over positives, normalized by the sample count."""
    k = class_logits.shape[0]
    dtype = class_logits.dtype
    device = class_logits.device
    if k == 0:
        return torch.zeros((), dtype=dtype, device=device)
    labels = torch.as_tensor(np.asarray(class_targets), dtype=torch.long, device=device)
    l_cls = F.cross_entropy(class_logits, labels)
    pos = np.flatnonzero(np.asarray(positive_mask))
    if len(pos) == 0:
        return l_cls
    reg_t = torch.as_tensor(np.asarray(reg_targets)[pos], dtype=dtype, device=device)
    l_reg = smooth_l1(deltas[pos] - reg_t).sum() / k
    return l_cls + l_reg


def total_loss(l_rpn, l_ref, l_det, alpha: float = 1.0, beta: float = 1.0, gamma: float = 1.0):
    """Weighted multi-task sum; a non-finite component is a hard error."""
    for name, value in (("l_rpn", l_rpn), ("l_ref", l_ref), ("l_det", l_det)):
        v = float(value.detach()) if torch.is_tensor(value) else float(value)
        if not np.isfinite(v):
            raise FloatingPointError(f"loss component {name} is not finite: {v}")
    return alpha * l_rpn + beta * l_ref + gamma * l_det


@dataclass
class LossReport:
    """Per-iteration loss breakdown for logging."""

    l_rpn: float
    l_ref: float
    l_det: float
    l_total: float
    breakdown: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    def as_record(self, iteration: int) -> dict:
        return {
            "iter": iteration,
            "L_rpn": self.l_rpn,
            "L_ref": self.l_ref,
            "L_det": self.l_det,
            "L_total": self.l_total,
        }
