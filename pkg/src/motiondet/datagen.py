"""Synthetic moving-shapes video generation, serialization, and windowing.

Each video is a short clip of colored shapes (disc, square, triangle, ...)
drifting over a textured noise background. Objects carry persistent track
ids, can be motion-blurred along their velocity, and can disappear behind
an occlusion for a contiguous span while their ground-truth box persists.

On-disk layout written by :func:`write_dataset`::

    root/manifest.txt                  one video id per line
    root/<video_id>/frame_%04d.png     8-bit RGB frames
    root/<video_id>/annotations.jsonl  one object record per line

Annotation record: ``{"frame": int, "track_id": int, "class_id": int,
"bbox": [x1, y1, x2, y2], "occluded": bool, "blur": float}`` with pixel
coordinates, origin top-left.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

SHAPE_NAMES = ("disc", "square", "triangle", "diamond")


class DatasetError(Exception):
    """Base class for dataset I/O and validation failures."""


class IncompleteDatasetError(DatasetError):
    """The root carries an incomplete-write marker or lacks a manifest."""


class MissingFrameError(DatasetError):
    """A frame file named by the layout is absent."""


class AnnotationFormatError(DatasetError):
    """An annotation line is malformed or violates box invariants."""


class FrameCountMismatchError(DatasetError):
    """Annotation frame indices do not match the stored frame files."""


@dataclass
class GroundTruthObject:
    track_id: int
    class_id: int
    bbox: tuple  # (x1, y1, x2, y2) pixels, corner format
    occluded: bool = False
    blur_level: float = 0.0


@dataclass
class VideoSample:
    video_id: str
    frames: list  # uint8 arrays [H, W, 3]
    annotations: list  # per-frame lists of GroundTruthObject


@dataclass
class FrameWindow:
    """An (M+N+1)-frame slice of a video centered on a reference frame."""

    frames: list
    annotations: list
    reference: int  # position of the reference frame inside the window
    start: int  # index of the first window frame in the source video

    @property
    def reference_frame_index(self) -> int:
        return self.start + self.reference


@dataclass
class SceneConfig:
    """Parameters of the synthetic scene generator."""

    image_size: tuple = (96, 96)  # (H, W)
    num_classes: int = 2
    velocity_range: tuple = ((-4.0, 4.0), (-4.0, 4.0))  # per-axis (min, max)
    static_prob: float = 0.2
    blur_prob: float = 0.3
    blur_strength: float = 1.5  # kernel length = blur_strength * speed
    occlusion_prob: float = 0.4
    occlusion_duration: int = 2
    objects_per_video: tuple = (2, 4)
    frames_per_video: int = 10
    size_range: tuple = (16, 34)  # object bbox side length in pixels
    seed: int = 0
    background_smoothing: float = 3.0
    extra: dict = field(default_factory=dict)

    def validate(self):
        h, w = self.image_size
        if not (2 <= self.num_classes <= len(SHAPE_NAMES)):
            raise ValueError(f"num_classes must be in [2, {len(SHAPE_NAMES)}]")
        for lo, hi in self.velocity_range:
            if lo > hi:
                raise ValueError("empty velocity range")
        for p in (self.static_prob, self.blur_prob, self.occlusion_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")
        if self.objects_per_video[0] > self.objects_per_video[1]:
            raise ValueError("empty objects_per_video range")
        if self.size_range[0] > self.size_range[1]:
            raise ValueError("empty size range")
        if self.size_range[1] + 2 >= min(h, w):
            raise ValueError("objects cannot fit the image")
        if self.frames_per_video < 1:
            raise ValueError("frames_per_video must be >= 1")


def _render_shape(canvas, mask_layer, shape: str, cx: float, cy: float, half: float):
    """Paint a binary coverage mask for one shape instance into mask_layer."""
    h, w = mask_layer.shape
    ys, xs = np.mgrid[0:h, 0:w]
    if shape == "disc":
        mask = (xs - cx) ** 2 + (ys - cy) ** 2 <= half**2
    elif shape == "square":
        mask = (np.abs(xs - cx) <= half) & (np.abs(ys - cy) <= half)
    elif shape == "triangle":
        # upward triangle inscribed in the box
        inside_y = (ys >= cy - half) & (ys <= cy + half)
        frac = (ys - (cy - half)) / (2.0 * half)
        mask = inside_y & (np.abs(xs - cx) <= half * frac)
    else:  # diamond
        mask = (np.abs(xs - cx) + np.abs(ys - cy)) <= half
    mask_layer[mask] = 1.0
    return mask


def _motion_blur_kernel(vx: float, vy: float, length: int) -> np.ndarray:
    """Normalized line kernel of ``length`` taps along the velocity direction."""
    size = 2 * length + 1
    kernel = np.zeros((size, size))
    speed = float(np.hypot(vx, vy))
    ux, uy = (vx / speed, vy / speed) if speed > 0 else (1.0, 0.0)
    for step in np.linspace(-length / 2.0, length / 2.0, length):
        x = length + step * ux
        y = length + step * uy
        x0, y0 = int(np.floor(x)), int(np.floor(y))
        fx, fy = x - x0, y - y0
        for dy, wy in ((0, 1 - fy), (1, fy)):
            for dx, wx in ((0, 1 - fx), (1, fx)):
                if 0 <= y0 + dy < size and 0 <= x0 + dx < size:
                    kernel[y0 + dy, x0 + dx] += wx * wy
    return kernel / kernel.sum()


def generate_video(config: SceneConfig, seed: int) -> VideoSample:
    """Generate one deterministic clip for ``(config, seed)``.

    Objects move with piecewise-constant velocity (reflecting off image
    borders), occlusion events hide the object's pixels for a contiguous
    span while the annotation persists with ``occluded=True``, and motion
    blur smears the rendered pixels along the velocity direction.
    """
    config.validate()
    rng = np.random.default_rng([config.seed, seed])
    h, w = config.image_size
    frames_n = config.frames_per_video

    background = rng.uniform(40, 110, size=(h, w, 3))
    background = ndimage.gaussian_filter(
        background, sigma=(config.background_smoothing, config.background_smoothing, 0)
    )

    n_objects = int(rng.integers(config.objects_per_video[0], config.objects_per_video[1] + 1))
    objects = []
    for track_id in range(n_objects):
        side = float(rng.uniform(*config.size_range))
        half = side / 2.0
        cx = float(rng.uniform(half + 1, w - half - 1))
        cy = float(rng.uniform(half + 1, h - half - 1))
        if rng.uniform() < config.static_prob:
            vx = vy = 0.0
        else:
            (vx_lo, vx_hi), (vy_lo, vy_hi) = config.velocity_range
            vx = float(rng.uniform(vx_lo, vx_hi))
            vy = float(rng.uniform(vy_lo, vy_hi))
        color = rng.uniform(120, 255, size=3)
        occluded_span = ()
        if rng.uniform() < config.occlusion_prob and frames_n - config.occlusion_duration >= 2:
            start = int(rng.integers(1, frames_n - config.occlusion_duration))
            occluded_span = tuple(range(start, start + config.occlusion_duration))
        blurred = rng.uniform(size=frames_n) < config.blur_prob
        objects.append(
            {
                "track_id": track_id,
                "class_id": int(rng.integers(0, config.num_classes)),
                "half": half,
                "cx": cx,
                "cy": cy,
                "vx": vx,
                "vy": vy,
                "color": color,
                "occluded_span": occluded_span,
                "blurred": blurred,
            }
        )

    frames = []
    annotations = []
    for f in range(frames_n):
        canvas = background.copy()
        per_frame = []
        for obj in objects:
            half = obj["half"]
            occluded = f in obj["occluded_span"]
            speed = float(np.hypot(obj["vx"], obj["vy"]))
            blur_len = 0
            if obj["blurred"][f] and speed > 0:
                blur_len = int(round(config.blur_strength * speed))
            if not occluded:
                layer = np.zeros((h, w))
                _render_shape(canvas, layer, SHAPE_NAMES[obj["class_id"]], obj["cx"], obj["cy"], half)
                if blur_len >= 2:
                    kernel = _motion_blur_kernel(obj["vx"], obj["vy"], blur_len)
                    layer = ndimage.convolve(layer, kernel, mode="constant")
                alpha = layer[..., None]
                canvas = canvas * (1 - alpha) + obj["color"][None, None, :] * alpha
            bbox = (
                max(0.0, obj["cx"] - half),
                max(0.0, obj["cy"] - half),
                min(float(w), obj["cx"] + half),
                min(float(h), obj["cy"] + half),
            )
            per_frame.append(
                GroundTruthObject(
                    track_id=obj["track_id"],
                    class_id=obj["class_id"],
                    bbox=bbox,
                    occluded=occluded,
                    blur_level=float(blur_len if blur_len >= 2 else 0.0),
                )
            )
            # advance with reflection at the borders (piecewise-constant velocity)
            obj["cx"] += obj["vx"]
            obj["cy"] += obj["vy"]
            if obj["cx"] - half < 0 or obj["cx"] + half > w:
                obj["vx"] = -obj["vx"]
                obj["cx"] = float(np.clip(obj["cx"], half, w - half))
            if obj["cy"] - half < 0 or obj["cy"] + half > h:
                obj["vy"] = -obj["vy"]
                obj["cy"] = float(np.clip(obj["cy"], half, h - half))
        frames.append(np.clip(canvas, 0, 255).astype(np.uint8))
        annotations.append(per_frame)

    return VideoSample(video_id=f"video_{seed:05d}", frames=frames, annotations=annotations)


def _incomplete_marker(root: Path) -> Path:
    return root / ".incomplete"


def write_dataset(samples, root) -> dict:
    """Write samples under ``root`` and return the manifest summary.

    The manifest file is written last; while writing, an ``.incomplete``
    marker is present so interrupted writes are detectable.
    """
    root = Path(root)
    try:
        root.mkdir(parents=True, exist_ok=True)
        marker = _incomplete_marker(root)
        marker.write_text("writing\n")
        n_frames = 0
        for sample in samples:
            vdir = root / sample.video_id
            vdir.mkdir(parents=True, exist_ok=True)
            for f, frame in enumerate(sample.frames):
                Image.fromarray(frame, mode="RGB").save(vdir / f"frame_{f:04d}.png")
                n_frames += 1
            with open(vdir / "annotations.jsonl", "w") as fh:
                for f, objs in enumerate(sample.annotations):
                    for obj in objs:
                        fh.write(
                            json.dumps(
                                {
                                    "frame": f,
                                    "track_id": obj.track_id,
                                    "class_id": obj.class_id,
                                    "bbox": list(obj.bbox),
                                    "occluded": obj.occluded,
                                    "blur": obj.blur_level,
                                }
                            )
                            + "\n"
                        )
        with open(root / "manifest.txt", "w") as fh:
            for sample in samples:
                fh.write(sample.video_id + "\n")
        marker.unlink()
    except OSError as exc:
        raise DatasetError(f"failed writing dataset under {root}: {exc}") from exc
    return {"root": str(root), "num_videos": len(samples), "num_frames": n_frames}


def read_dataset(root) -> list:
    """Read a dataset written by :func:`write_dataset` (its exact inverse)."""
    root = Path(root)
    if _incomplete_marker(root).exists():
        raise IncompleteDatasetError(f"{root} carries an incomplete-write marker")
    manifest = root / "manifest.txt"
    if not manifest.exists():
        raise IncompleteDatasetError(f"{root} has no manifest.txt")
    samples = []
    for video_id in manifest.read_text().splitlines():
        video_id = video_id.strip()
        if not video_id:
            continue
        vdir = root / video_id
        if not vdir.is_dir():
            raise MissingFrameError(f"video directory missing: {vdir}")
        frame_paths = sorted(vdir.glob("frame_*.png"))
        if not frame_paths:
            raise MissingFrameError(f"no frames under {vdir}")
        frames = []
        for f, path in enumerate(frame_paths):
            expected = vdir / f"frame_{f:04d}.png"
            if path != expected:
                raise MissingFrameError(f"missing frame file {expected}")
            frames.append(np.asarray(Image.open(path).convert("RGB")))
        annotations = [[] for _ in frames]
        ann_path = vdir / "annotations.jsonl"
        if not ann_path.exists():
            raise AnnotationFormatError(f"missing annotations file {ann_path}")
        for lineno, line in enumerate(ann_path.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                frame = int(rec["frame"])
                bbox = tuple(float(v) for v in rec["bbox"])
                obj = GroundTruthObject(
                    track_id=int(rec["track_id"]),
                    class_id=int(rec["class_id"]),
                    bbox=bbox,
                    occluded=bool(rec["occluded"]),
                    blur_level=float(rec["blur"]),
                )
            except (KeyError, ValueError, TypeError, json.JSONDecodeError) as exc:
                raise AnnotationFormatError(
                    f"{ann_path}:{lineno}: malformed annotation line: {exc}"
                ) from exc
            if len(bbox) != 4 or bbox[0] >= bbox[2] or bbox[1] >= bbox[3]:
                raise AnnotationFormatError(
                    f"{ann_path}:{lineno}: invalid bbox {list(bbox)} (needs x1 < x2, y1 < y2)"
                )
            if frame < 0 or frame >= len(frames):
                raise FrameCountMismatchError(
                    f"{ann_path}:{lineno}: frame index {frame} outside 0..{len(frames) - 1}"
                )
            if any(o.track_id == obj.track_id for o in annotations[frame]):
                raise AnnotationFormatError(
                    f"{ann_path}:{lineno}: duplicate track_id {obj.track_id} in frame {frame}"
                )
            annotations[frame].append(obj)
        samples.append(VideoSample(video_id=video_id, frames=frames, annotations=annotations))
    return samples


def valid_reference_range(num_frames: int, m: int, n: int) -> tuple:
    """Inclusive range of reference indices with a full in-bounds window."""
    if num_frames < m + n + 1:
        raise ValueError(f"video of {num_frames} frames is shorter than window {m + n + 1}")
    return m, num_frames - 1 - n


def window_at(sample: VideoSample, t: int, m: int, n: int) -> FrameWindow:
    """Return the (m+n+1)-frame window whose reference is ``t``.

    Reference indices near the video boundary are clamped to the valid
    interior, so every returned window lies fully in bounds.
    """
    lo, hi = valid_reference_range(len(sample.frames), m, n)
    t = int(np.clip(t, lo, hi))
    start = t - m
    stop = t + n + 1
    return FrameWindow(
        frames=sample.frames[start:stop],
        annotations=sample.annotations[start:stop],
        reference=m,
        start=start,
    )
