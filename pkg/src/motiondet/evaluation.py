"""Detection evaluation: VOC-style mAP, motion-split scoring, and Seq-NMS.

Ground truth carries track ids so object instances can be bucketed by how
far they move between neighboring frames (slow / medium / fast); split
mAPs restrict the ground truth, and the detections matched to it, to one
bucket at a time.
"""

import json
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from . import boxes as boxops

SLOW_IOU = 0.9
FAST_IOU = 0.7
BUCKETS = ("slow", "medium", "fast")


@dataclass
class DetectionRecord:
    video_id: str
    frame: int
    class_id: int
    score: float
    bbox: tuple


@dataclass
class GroundTruthRecord:
    video_id: str
    frame: int
    track_id: int
    class_id: int
    bbox: tuple


def gt_records_from_sample(sample, frames=None) -> list:
    """Flatten a VideoSample's annotations into evaluation records."""
    keep = set(range(len(sample.frames))) if frames is None else set(frames)
    records = []
    for f, objs in enumerate(sample.annotations):
        if f not in keep:
            continue
        for obj in objs:
            records.append(
                GroundTruthRecord(
                    video_id=sample.video_id,
                    frame=f,
                    track_id=obj.track_id,
                    class_id=obj.class_id,
                    bbox=tuple(obj.bbox),
                )
            )
    return records


def write_detections(records, path):
    """Line-delimited detection dump (the Seq-NMS exchange format)."""
    with open(path, "w") as fh:
        for r in records:
            fh.write(
                json.dumps(
                    {
                        "video_id": r.video_id,
                        "frame": r.frame,
                        "class_id": r.class_id,
                        "score": r.score,
                        "bbox": list(r.bbox),
                    }
                )
                + "\n"
            )


def read_detections(path) -> list:
    records = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            records.append(
                DetectionRecord(
                    video_id=rec["video_id"],
                    frame=int(rec["frame"]),
                    class_id=int(rec["class_id"]),
                    score=float(rec["score"]),
                    bbox=tuple(float(v) for v in rec["bbox"]),
                )
            )
    return records


def _match_class(dets, gts, iou_thresh):
    """Greedy highest-score-first matching for one class.

    Returns (ordered detection indices, matched gt index or -1 per det).
    Each ground truth is matched at most once; a detection whose best
    overlap is an already-matched ground truth counts as unmatched.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    by_frame = defaultdict(list)
    for g, gt in enumerate(gts):
        by_frame[(gt.video_id, gt.frame)].append(g)
    taken = np.zeros(len(gts), dtype=bool)
    matches = np.full(len(dets), -1, dtype=np.int64)
    for i in order:
        det = dets[i]
        candidates = by_frame.get((det.video_id, det.frame), [])
        if not candidates:
            continue
        ious = boxops.iou_matrix([det.bbox], [gts[g].bbox for g in candidates])[0]
        best = int(np.argmax(ious))
        if ious[best] >= iou_thresh and not taken[candidates[best]]:
            taken[candidates[best]] = True
            matches[i] = candidates[best]
    return order, matches


def _ap_from_flags(tp_flags, n_gt) -> float:
    """All-point interpolated AP from score-ordered true-positive flags."""
    if n_gt == 0:
        raise ValueError("AP undefined without ground truth")
    tp = np.cumsum(np.asarray(tp_flags, dtype=np.float64))
    fp = np.cumsum(1.0 - np.asarray(tp_flags, dtype=np.float64))
    recall = tp / n_gt
    precision = tp / np.maximum(tp + fp, 1e-12)
    recall = np.concatenate([[0.0], recall])
    precision = np.concatenate([[1.0], precision])
    for i in range(len(precision) - 2, -1, -1):
        precision[i] = max(precision[i], precision[i + 1])
    return float(np.sum((recall[1:] - recall[:-1]) * precision[1:]))


def average_precision(dets, gts, class_id: int, iou_thresh: float = 0.5, bucket_keys=None):
    """AP of one class; ``None`` when the class has no ground truth.

    ``bucket_keys``: optional set of (video_id, frame, track_id) keys;
    when given, ground truth is restricted to those instances and
    detections matched to out-of-bucket instances are dropped.
    """
    class_gts = [g for g in gts if g.class_id == class_id]
    class_dets = [d for d in dets if d.class_id == class_id]
    order, matches = _match_class(class_dets, class_gts, iou_thresh)

    def in_bucket(g):
        return bucket_keys is None or (
            (class_gts[g].video_id, class_gts[g].frame, class_gts[g].track_id) in bucket_keys
        )

    n_gt = sum(1 for g in range(len(class_gts)) if in_bucket(g))
    if n_gt == 0:
        return None
    tp_flags = []
    for i in order:
        g = matches[i]
        if g >= 0 and not in_bucket(g):
            continue  # matched out-of-bucket ground truth: excluded entirely
        tp_flags.append(1.0 if g >= 0 else 0.0)
    if not tp_flags:
        return 0.0
    return _ap_from_flags(tp_flags, n_gt)


def motion_split(gts, window_radius: int = 2) -> dict:
    """Bucket every ground-truth instance by mean IoU against the same
    track's boxes in neighboring frames; instances without neighbors (for
    example singleton tracks) default to slow."""
    tracks = defaultdict(dict)
    for g in gts:
        tracks[(g.video_id, g.track_id)][g.frame] = g.bbox
    buckets = {}
    for g in gts:
        track = tracks[(g.video_id, g.track_id)]
        ious = []
        for off in range(1, window_radius + 1):
            for f in (g.frame - off, g.frame + off):
                if f in track:
                    ious.append(boxops.iou(g.bbox, track[f]))
        if not ious:
            bucket = "slow"
        else:
            mean_iou = float(np.mean(ious))
            bucket = "slow" if mean_iou > SLOW_IOU else "fast" if mean_iou < FAST_IOU else "medium"
        buckets[(g.video_id, g.frame, g.track_id)] = bucket
    return buckets


def seq_nms(dets, link_iou: float = 0.5, suppress_iou: float = 0.5) -> list:
    """Rescore one video's detections along best cross-frame paths.

    Per class: same-class detections in adjacent frames with IoU at or
    above ``link_iou`` are linked; the maximum-total-score path is found by
    dynamic programming, its members are rescored to the path's mean score
    and removed, and remaining same-frame detections overlapping a member
    at ``suppress_iou`` or more are dropped. This repeats until no links
    remain; untouched detections pass through unchanged. Boxes and class
    ids are never modified.
    """
    out = []
    by_class = defaultdict(list)
    for i, d in enumerate(dets):
        by_class[d.class_id].append(i)

    for class_id in sorted(by_class):
        pool = set(by_class[class_id])

        def links_exist():
            frames = defaultdict(list)
            for i in pool:
                frames[dets[i].frame].append(i)
            for f in frames:
                if f + 1 not in frames:
                    continue
                for i in frames[f]:
                    for j in frames[f + 1]:
                        if boxops.iou(dets[i].bbox, dets[j].bbox) >= link_iou:
                            return True
            return False

        while pool and links_exist():
            frames = defaultdict(list)
            for i in pool:
                frames[dets[i].frame].append(i)
            for f in frames:
                frames[f].sort()
            best_score = {}
            parent = {}
            for f in sorted(frames):
                for i in frames[f]:
                    best_score[i] = dets[i].score
                    parent[i] = None
                    for p in frames.get(f - 1, []):
                        if boxops.iou(dets[p].bbox, dets[i].bbox) >= link_iou:
                            if best_score[p] + dets[i].score > best_score[i]:
                                best_score[i] = best_score[p] + dets[i].score
                                parent[i] = p
            end = max(sorted(best_score), key=lambda i: best_score[i])
            path = []
            node = end
            while node is not None:
                path.append(node)
                node = parent[node]
            path.reverse()
            mean_score = float(np.mean([dets[i].score for i in path]))
            for i in path:
                d = dets[i]
                out.append(
                    DetectionRecord(
                        video_id=d.video_id,
                        frame=d.frame,
                        class_id=d.class_id,
                        score=mean_score,
                        bbox=d.bbox,
                    )
                )
                pool.discard(i)
            for i in path:
                same_frame = [j for j in pool if dets[j].frame == dets[i].frame]
                for j in same_frame:
                    if boxops.iou(dets[i].bbox, dets[j].bbox) >= suppress_iou:
                        pool.discard(j)
        out.extend(dets[i] for i in sorted(pool))
    return sorted(out, key=lambda d: (d.frame, d.class_id, -d.score, d.bbox))


@dataclass
class EvalConfig:
    iou_thresh: float = 0.5
    motion_window_radius: int = 2


def evaluate(dets, gts, config: EvalConfig = None) -> dict:
    """Overall and motion-split mAP report.

    Per-class APs average into mAP (classes without ground truth are
    excluded); split mAPs restrict ground truth and matched detections to
    each motion bucket.
    """
    config = config or EvalConfig()
    class_ids = sorted({g.class_id for g in gts})
    per_class = {}
    for class_id in class_ids:
        per_class[class_id] = average_precision(dets, gts, class_id, config.iou_thresh)
    valid = [v for v in per_class.values() if v is not None]
    report = {
        "map": float(np.mean(valid)) if valid else 0.0,
        "per_class_ap": {str(k): v for k, v in per_class.items()},
        "num_detections": len(dets),
        "num_ground_truth": len(gts),
    }
    buckets = motion_split(gts, config.motion_window_radius)
    for bucket in BUCKETS:
        keys = {k for k, b in buckets.items() if b == bucket}
        aps = []
        for class_id in class_ids:
            ap = average_precision(dets, gts, class_id, config.iou_thresh, bucket_keys=keys)
            if ap is not None:
                aps.append(ap)
        report[f"map_{bucket}"] = float(np.mean(aps)) if aps else None
        report[f"num_gt_{bucket}"] = len(keys)
    return report
