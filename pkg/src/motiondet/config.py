"""Pipeline configuration and the plain-text config file format.

Config files are ``key = value`` lines; ``#`` starts a comment. Values are
Python literals where they parse as such (ints, floats, booleans, tuples,
strings), otherwise taken as bare strings. One flat namespace feeds both
the scene generator and the pipeline; shared keys (``image_size``,
``num_classes``, ``seed``, ...) appear once.
"""

import ast
import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .datagen import SceneConfig

VARIANTS = ("a", "b", "c", "d", "e", "f")


@dataclass
class PipelineConfig:
    """Everything the training/eval pipeline needs, with desk-scale defaults."""

    # temporal window
    past_frames: int = 2  # M
    future_frames: int = 2  # N
    variant: str = "e"

    # data
    image_size: tuple = (96, 96)
    num_classes: int = 2
    data_root: str = "data/train"
    val_root: str = ""  # empty: split data_root by val_fraction
    val_fraction: float = 0.2
    windows_per_video: int = 2
    flip_prob: float = 0.5
    val_videos_during_training: int = 0  # 0: full validation split every epoch

    # backbone / anchors / heads
    backbone_widths: tuple = (16, 32, 64, 64)
    anchor_scales: tuple = (14.0, 18.0, 24.0, 30.0, 38.0)
    anchor_ratios: tuple = (1.0,)
    anchor_offsets: tuple = ((-2.0, -2.0), (-2.0, 2.0), (2.0, -2.0), (2.0, 2.0))
    roi_size: int = 7
    visual_dim: int = 256
    disp_hidden: int = 64
    gru_hidden: int = 64
    aggregate_mode: str = "sum"

    # proposal filtering
    rpn_pre_nms_topk: int = 600
    rpn_nms_iou: float = 0.7
    rpn_post_nms_topk_train: int = 300
    rpn_post_nms_topk_eval: int = 100
    rpn_min_box_size: float = 1.0

    # assignment and sampling
    rpn_pos_iou: float = 0.7
    rpn_neg_iou: float = 0.3
    rpn_batch: int = 256
    rpn_pos_fraction: float = 0.5
    stage2_pos_iou: float = 0.5
    stage2_neg_iou: float = 0.5
    stage2_batch: int = 64
    stage2_pos_fraction: float = 0.25
    add_gt_proposals: bool = True

    # optimization
    learning_rate: float = 0.03
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 4
    epochs: int = 8
    lr_decay_factor: float = 0.1
    static_pretrain_epochs: int = 0
    seed: int = 0

    # loss weights
    loss_alpha: float = 1.0
    loss_beta: float = 1.0
    loss_gamma: float = 1.0

    # inference
    score_thresh: float = 0.05
    det_nms_iou: float = 0.5
    max_dets_per_frame: int = 50

    # seq-nms post-processing
    seqnms_link_iou: float = 0.5
    seqnms_suppress_iou: float = 0.5

    # output
    out_dir: str = "runs/default"

    @property
    def window_length(self) -> int:
        return self.past_frames + self.future_frames + 1

    @property
    def lr_decay_epochs(self) -> tuple:
        return (self.epochs // 2, (3 * self.epochs) // 4)

    def validate(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.aggregate_mode not in ("sum", "mean"):
            raise ValueError("aggregate_mode must be 'sum' or 'mean'")
        if self.past_frames < 0 or self.future_frames < 0:
            raise ValueError("window half-widths must be non-negative")
        h, w = self.image_size
        if h % 8 or w % 8:
            raise ValueError("image size must be divisible by the backbone stride 8")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "PipelineConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        kwargs = {k: v for k, v in values.items() if k in names}
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


def parse_value(text: str):
    text = text.strip()
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def load_config_file(path) -> dict:
    """Parse a key = value config file into a flat dict."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = parse_value(value)
    return values


def scene_config_from(values: dict) -> SceneConfig:
    names = {f.name for f in dataclasses.fields(SceneConfig)}
    kwargs = {k: _as_tuple(v) for k, v in values.items() if k in names}
    cfg = SceneConfig(**kwargs)
    cfg.validate()
    return cfg


def pipeline_config_from(values: dict) -> PipelineConfig:
    return PipelineConfig.from_dict({k: _as_tuple(v) for k, v in values.items()})


def _as_tuple(value):
    return tuple(_as_tuple(v) for v in value) if isinstance(value, list) else value
