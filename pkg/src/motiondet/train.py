"""Training loop, checkpointing, and the dataset-level evaluation harness.

Training is single-threaded and deterministic for a fixed seed: window
sampling, flips, and loss sampling all draw from one seeded generator,
and the optimizer walks windows in the sampled order with plain gradient
accumulation across each mini-batch.
"""

import json
from pathlib import Path

import numpy as np
import torch

from .config import PipelineConfig
from .datagen import (
    GroundTruthObject,
    FrameWindow,
    VideoSample,
    read_dataset,
    valid_reference_range,
    window_at,
)
from .detector import TemporalDetector
from .evaluation import (
    DetectionRecord,
    EvalConfig,
    evaluate,
    gt_records_from_sample,
    seq_nms,
)


class TrainingDiverged(RuntimeError):
    """Raised when the total loss stops being finite."""


def flip_window(window: FrameWindow, image_width: int) -> FrameWindow:
    """Horizontal flip applied consistently to all frames and boxes."""
    frames = [np.ascontiguousarray(f[:, ::-1]) for f in window.frames]
    annotations = []
    for objs in window.annotations:
        flipped = []
        for o in objs:
            x1, y1, x2, y2 = o.bbox
            flipped.append(
                GroundTruthObject(
                    track_id=o.track_id,
                    class_id=o.class_id,
                    bbox=(image_width - x2, y1, image_width - x1, y2),
                    occluded=o.occluded,
                    blur_level=o.blur_level,
                )
            )
        annotations.append(flipped)
    return FrameWindow(frames=frames, annotations=annotations, reference=window.reference, start=window.start)


def static_window(window: FrameWindow) -> FrameWindow:
    """Replace every frame with the reference frame (still-clip phase)."""
    ref_f = window.frames[window.reference]
    ref_a = window.annotations[window.reference]
    n = len(window.frames)
    return FrameWindow(
        frames=[ref_f] * n, annotations=[ref_a] * n, reference=window.reference, start=window.start
    )


def split_dataset(samples, val_fraction: float):
    """Deterministic split: the trailing fraction becomes validation."""
    n_val = max(1, int(round(len(samples) * val_fraction))) if len(samples) > 1 else 0
    return samples[: len(samples) - n_val], samples[len(samples) - n_val :]


def load_datasets(cfg: PipelineConfig):
    samples = read_dataset(cfg.data_root)
    if cfg.val_root:
        return samples, read_dataset(cfg.val_root)
    return split_dataset(samples, cfg.val_fraction)


def interior_frames(sample: VideoSample, cfg: PipelineConfig) -> range:
    lo, hi = valid_reference_range(len(sample.frames), cfg.past_frames, cfg.future_frames)
    return range(lo, hi + 1)


def collect_detections(model: TemporalDetector, samples, apply_seq_nms: bool = False) -> list:
    """Run the detector over every interior frame of every video.

    Reference frames near video boundaries have no valid window (windows
    clamp to the interior), so evaluation covers interior frames only.
    """
    cfg = model.cfg
    model.eval()
    records = []
    for sample in samples:
        video_records = []
        for t in interior_frames(sample, cfg):
            window = window_at(sample, t, cfg.past_frames, cfg.future_frames)
            for class_id, score, box in model.detect(window):
                video_records.append(
                    DetectionRecord(
                        video_id=sample.video_id,
                        frame=t,
                        class_id=class_id,
                        score=score,
                        bbox=box,
                    )
                )
        if apply_seq_nms:
            video_records = seq_nms(
                video_records,
                link_iou=cfg.seqnms_link_iou,
                suppress_iou=cfg.seqnms_suppress_iou,
            )
        records.extend(video_records)
    return records


def evaluation_ground_truth(samples, cfg: PipelineConfig) -> list:
    records = []
    for sample in samples:
        records.extend(gt_records_from_sample(sample, frames=interior_frames(sample, cfg)))
    return records


def evaluate_model(model: TemporalDetector, samples, apply_seq_nms: bool = False):
    """Detections plus mAP report for a list of videos."""
    dets = collect_detections(model, samples, apply_seq_nms=apply_seq_nms)
    gts = evaluation_ground_truth(samples, model.cfg)
    report = evaluate(dets, gts, EvalConfig(motion_window_radius=model.cfg.past_frames))
    report["seq_nms_applied"] = bool(apply_seq_nms)
    return dets, report


def learning_rate_at(cfg: PipelineConfig, epoch: int) -> float:
    lr = cfg.learning_rate
    for boundary in cfg.lr_decay_epochs:
        if epoch >= boundary:
            lr *= cfg.lr_decay_factor
    return lr


def save_checkpoint(path, model: TemporalDetector, optimizer, epoch: int, rng):
    payload = {
        "config": model.cfg.to_dict(),
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "epoch": epoch,
        "numpy_rng": rng.bit_generator.state if rng is not None else None,
        "torch_rng": torch.get_rng_state(),
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path, variant_override: str = ""):
    """Rebuild the model (and config) stored in a checkpoint."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    cfg = PipelineConfig.from_dict(payload["config"])
    if variant_override:
        if variants_compatible(cfg.variant, variant_override):
            cfg.variant = variant_override
        else:
            raise ValueError(
                f"checkpoint was trained as variant {cfg.variant!r}; "
                f"cannot evaluate as {variant_override!r}"
            )
    model = TemporalDetector(cfg)
    model.load_state_dict(payload["model"])
    return model, payload


def variants_compatible(trained: str, requested: str) -> bool:
    # e and f share parameters and wiring; everything else must match.
    return trained == requested or {trained, requested} == {"e", "f"}


def sample_epoch_windows(train_samples, cfg: PipelineConfig, rng) -> list:
    """Ordered (video index, reference frame) pairs for one epoch."""
    pairs = []
    for vi, sample in enumerate(train_samples):
        lo, hi = valid_reference_range(len(sample.frames), cfg.past_frames, cfg.future_frames)
        for t in rng.integers(lo, hi + 1, size=cfg.windows_per_video):
            pairs.append((vi, int(t)))
    order = rng.permutation(len(pairs))
    return [pairs[i] for i in order]


def train(cfg: PipelineConfig, log_fn=None, resume_from: str = ""):
    """Train one variant; returns a summary dict with paths and metrics.

    Writes per-iteration loss records to ``out_dir/metrics.jsonl``, a
    checkpoint per epoch, and a final evaluation report over the
    validation split.
    """
    cfg.validate()
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_samples, val_samples = load_datasets(cfg)
    if not train_samples:
        raise ValueError(f"no training videos under {cfg.data_root}")

    torch.manual_seed(cfg.seed)
    model = TemporalDetector(cfg)
    optimizer = torch.optim.SGD(
        model.parameters(),
        lr=cfg.learning_rate,
        momentum=cfg.momentum,
        weight_decay=cfg.weight_decay,
    )
    rng = np.random.default_rng(cfg.seed)
    start_epoch = 0
    if resume_from:
        payload = torch.load(resume_from, map_location="cpu", weights_only=False)
        model.load_state_dict(payload["model"])
        optimizer.load_state_dict(payload["optimizer"])
        start_epoch = payload["epoch"] + 1
        rng = np.random.default_rng(cfg.seed)
        rng.bit_generator.state = payload["numpy_rng"]
        torch.set_rng_state(payload["torch_rng"])

    total_epochs = cfg.static_pretrain_epochs + cfg.epochs
    metrics_path = out_dir / "metrics.jsonl"
    history = []
    iteration = 0
    mode = "a" if resume_from else "w"
    with open(metrics_path, mode) as metrics_fh:
        for epoch in range(start_epoch, total_epochs):
            static_phase = epoch < cfg.static_pretrain_epochs
            lr = learning_rate_at(cfg, max(0, epoch - cfg.static_pretrain_epochs))
            for group in optimizer.param_groups:
                group["lr"] = lr
            model.train()
            pairs = sample_epoch_windows(train_samples, cfg, rng)
            for batch_start in range(0, len(pairs), cfg.batch_size):
                batch = pairs[batch_start : batch_start + cfg.batch_size]
                optimizer.zero_grad()
                batch_report = {"L_rpn": 0.0, "L_ref": 0.0, "L_det": 0.0, "L_total": 0.0}
                for vi, t in batch:
                    sample = train_samples[vi]
                    window = window_at(sample, t, cfg.past_frames, cfg.future_frames)
                    if static_phase:
                        window = static_window(window)
                    if rng.uniform() < cfg.flip_prob:
                        window = flip_window(window, cfg.image_size[1])
                    try:
                        total, report = model.training_losses(window, rng)
                    except FloatingPointError as exc:
                        raise TrainingDiverged(
                            f"epoch {epoch} iter {iteration} video {sample.video_id}: {exc}"
                        ) from exc
                    if not np.isfinite(report.l_total):
                        raise TrainingDiverged(
                            f"non-finite loss at epoch {epoch} iter {iteration}: {report}"
                        )
                    (total / len(batch)).backward()
                    for key, value in (
                        ("L_rpn", report.l_rpn),
                        ("L_ref", report.l_ref),
                        ("L_det", report.l_det),
                        ("L_total", report.l_total),
                    ):
                        batch_report[key] += value / len(batch)
                optimizer.step()
                iteration += 1
                record = {"iter": iteration, **{k: round(v, 6) for k, v in batch_report.items()}}
                metrics_fh.write(json.dumps(record) + "\n")
            metrics_fh.flush()

            epoch_val = val_samples
            if cfg.val_videos_during_training and len(val_samples) > cfg.val_videos_during_training:
                epoch_val = val_samples[: cfg.val_videos_during_training]
            _, val_report = evaluate_model(model, epoch_val) if epoch_val else (None, {"map": None})
            epoch_record = {
                "epoch": epoch,
                "static_phase": static_phase,
                "lr": lr,
                "val_map": val_report["map"],
            }
            history.append(epoch_record)
            if log_fn:
                log_fn(epoch_record)
            save_checkpoint(out_dir / f"checkpoint_epoch_{epoch}.pt", model, optimizer, epoch, rng)

    final_path = out_dir / "checkpoint_final.pt"
    save_checkpoint(final_path, model, optimizer, total_epochs - 1, rng)
    apply_seq = cfg.variant == "f"
    dets, report = evaluate_model(model, val_samples, apply_seq_nms=apply_seq) if val_samples else ([], {})
    (out_dir / "history.json").write_text(json.dumps(history, indent=2))
    return {
        "checkpoint": str(final_path),
        "metrics": str(metrics_path),
        "history": history,
        "val_report": report,
        "val_detections": dets,
        "model": model,
        "val_samples": val_samples,
    }
