"""Box geometry shared by every detection stage.

Boxes are corner-format ``(x1, y1, x2, y2)`` in pixels everywhere; the
center/size parameterization only appears inside the regression encoding.
All functions accept array-likes and operate on float64 numpy arrays.
"""

from dataclasses import dataclass

import numpy as np

# Label values used by assign_targets.
POSITIVE = 1
NEGATIVE = 0
IGNORE = -1

# Guard against exp overflow when decoding large predicted log-size ratios.
MAX_DELTA_WH = float(np.log(1000.0 / 16.0))


def as_boxes(boxes) -> np.ndarray:
    """Return input as a float64 array of shape [N, 4]."""
    arr = np.asarray(boxes, dtype=np.float64)
    if arr.size == 0:
        return arr.reshape(0, 4)
    if arr.ndim == 1:
        arr = arr.reshape(1, 4)
    if arr.shape[-1] != 4:
        raise ValueError(f"boxes must have 4 coordinates, got shape {arr.shape}")
    return arr


def box_area(boxes) -> np.ndarray:
    boxes = as_boxes(boxes)
    w = np.maximum(0.0, boxes[:, 2] - boxes[:, 0])
    h = np.maximum(0.0, boxes[:, 3] - boxes[:, 1])
    return w * h


def clip_boxes(boxes, image_size) -> np.ndarray:
    """Clip boxes to ``image_size`` = (height, width)."""
    h, w = image_size
    boxes = as_boxes(boxes).copy()
    boxes[:, 0::2] = np.clip(boxes[:, 0::2], 0.0, float(w))
    boxes[:, 1::2] = np.clip(boxes[:, 1::2], 0.0, float(h))
    return boxes


def iou(a, b) -> float:
    """IoU of two single boxes; degenerate (zero-area) input gives 0."""
    return float(iou_matrix(as_boxes(a), as_boxes(b))[0, 0])


def iou_matrix(a, b) -> np.ndarray:
    """Pairwise IoU table of shape [len(a), len(b)]."""
    a = as_boxes(a)
    b = as_boxes(b)
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]))
    x1 = np.maximum(a[:, None, 0], b[None, :, 0])
    y1 = np.maximum(a[:, None, 1], b[None, :, 1])
    x2 = np.minimum(a[:, None, 2], b[None, :, 2])
    y2 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.maximum(0.0, x2 - x1) * np.maximum(0.0, y2 - y1)
    union = box_area(a)[:, None] + box_area(b)[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def encode_delta(anchors, targets) -> np.ndarray:
    """Regression offsets (dx, dy, dw, dh) that map ``anchors`` onto ``targets``.

    dx, dy are the center shift normalized by anchor size; dw, dh are log
    size ratios. Zero-size anchors are rejected.
    """
    anchors = as_boxes(anchors)
    targets = as_boxes(targets)
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    if np.any(aw <= 0) or np.any(ah <= 0):
        raise ValueError("encode_delta requires non-degenerate anchors")
    ax = anchors[:, 0] + 0.5 * aw
    ay = anchors[:, 1] + 0.5 * ah
    tw = targets[:, 2] - targets[:, 0]
    th = targets[:, 3] - targets[:, 1]
    tx = targets[:, 0] + 0.5 * tw
    ty = targets[:, 1] + 0.5 * th
    return np.stack(
        [(tx - ax) / aw, (ty - ay) / ah, np.log(tw / aw), np.log(th / ah)], axis=1
    )


def decode_delta(anchors, deltas, image_size=None) -> np.ndarray:
    """Apply regression offsets to anchors; optionally clip to image bounds."""
    anchors = as_boxes(anchors)
    deltas = np.asarray(deltas, dtype=np.float64).reshape(anchors.shape)
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    if np.any(aw <= 0) or np.any(ah <= 0):
        raise ValueError("decode_delta requires non-degenerate anchors")
    ax = anchors[:, 0] + 0.5 * aw
    ay = anchors[:, 1] + 0.5 * ah
    cx = ax + deltas[:, 0] * aw
    cy = ay + deltas[:, 1] * ah
    w = aw * np.exp(np.minimum(deltas[:, 2], MAX_DELTA_WH))
    h = ah * np.exp(np.minimum(deltas[:, 3], MAX_DELTA_WH))
    boxes = np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=1)
    if image_size is not None:
        boxes = clip_boxes(boxes, image_size)
    return boxes


def nms(boxes, scores, iou_threshold: float) -> np.ndarray:
    """Greedy descending-score suppression; returns kept indices.

    Tie-break: higher score first, then lower original index, so the kept
    set is deterministic and independent of input order.
    """
    boxes = as_boxes(boxes)
    scores = np.asarray(scores, dtype=np.float64)
    if boxes.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    if not np.all(np.isfinite(scores)):
        raise ValueError("nms requires finite scores")
    order = np.lexsort((np.arange(len(scores)), -scores))
    table = iou_matrix(boxes[order], boxes[order])
    keep = []
    suppressed = np.zeros(len(order), dtype=bool)
    for rank, idx in enumerate(order):
        if suppressed[rank]:
            continue
        keep.append(idx)
        suppressed |= table[rank] > iou_threshold
    return np.asarray(keep, dtype=np.int64)


@dataclass
class AssignmentResult:
    """Per-candidate assignment against a ground-truth set.

    labels: POSITIVE / NEGATIVE / IGNORE per candidate.
    matched_gt: index of the matched ground truth (-1 unless positive).
    deltas: regression target for positives, zeros elsewhere.
    max_iou: best IoU of each candidate over all ground truths.
    """

    labels: np.ndarray
    matched_gt: np.ndarray
    deltas: np.ndarray
    max_iou: np.ndarray


def assign_targets(candidates, gt_boxes, pos_iou: float, neg_iou: float) -> AssignmentResult:
    """Label candidates positive/negative/ignore against ground-truth boxes.

    A candidate is positive when its best IoU reaches ``pos_iou`` or when it
    is the best candidate for some ground truth (argmax forcing, applied only
    when that IoU is > 0). It is negative below ``neg_iou`` and ignored in
    between. Regression targets are encoded only for positives.
    """
    if not 0.0 <= neg_iou <= pos_iou <= 1.0:
        raise ValueError("need 0 <= neg_iou <= pos_iou <= 1")
    candidates = as_boxes(candidates)
    gt_boxes = as_boxes(gt_boxes)
    n = candidates.shape[0]
    labels = np.full(n, NEGATIVE, dtype=np.int64)
    matched = np.full(n, -1, dtype=np.int64)
    deltas = np.zeros((n, 4))
    if n == 0:
        return AssignmentResult(labels, matched, deltas, np.zeros(0))
    if gt_boxes.shape[0] == 0:
        return AssignmentResult(labels, matched, deltas, np.zeros(n))

    table = iou_matrix(candidates, gt_boxes)
    max_iou = table.max(axis=1)
    best_gt = table.argmax(axis=1)

    labels[max_iou >= neg_iou] = IGNORE
    labels[max_iou >= pos_iou] = POSITIVE
    # Argmax forcing: every ground truth with any overlap keeps a positive.
    for j in range(gt_boxes.shape[0]):
        col = table[:, j]
        if col.max() > 0:
            forced = int(col.argmax())
            labels[forced] = POSITIVE
            best_gt[forced] = j

    pos = labels == POSITIVE
    matched[pos] = best_gt[pos]
    if pos.any():
        deltas[pos] = encode_delta(candidates[pos], gt_boxes[matched[pos]])
    return AssignmentResult(labels, matched, deltas, max_iou)
