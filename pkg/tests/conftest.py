import numpy as np
import pytest
import torch

from motiondet.config import PipelineConfig
from motiondet.datagen import SceneConfig, generate_video, window_at


def micro_pipeline_config(**overrides):
    """16x16 configuration small enough for exhaustive gradient checks."""
    base = dict(
        variant="e",
        image_size=(16, 16),
        num_classes=2,
        backbone_widths=(4, 6, 8, 8),
        anchor_scales=(6, 10),
        anchor_ratios=(1.0,),
        anchor_offsets=((0.0, 0.0),),
        roi_size=3,
        visual_dim=16,
        disp_hidden=8,
        gru_hidden=8,
        rpn_pre_nms_topk=16,
        rpn_post_nms_topk_train=8,
        rpn_post_nms_topk_eval=8,
        rpn_batch=16,
        stage2_batch=8,
        score_thresh=0.01,
    )
    base.update(overrides)
    return PipelineConfig(**base)


def micro_scene_config(**overrides):
    base = dict(
        image_size=(16, 16),
        num_classes=2,
        velocity_range=((-1.0, 1.0), (-1.0, 1.0)),
        objects_per_video=(1, 2),
        frames_per_video=5,
        size_range=(6, 9),
        blur_prob=0.0,
        occlusion_prob=0.0,
        seed=0,
    )
    base.update(overrides)
    return SceneConfig(**base)


def small_scene_config(**overrides):
    """48x48 scenes for fast end-to-end training smoke tests."""
    base = dict(
        image_size=(48, 48),
        num_classes=2,
        velocity_range=((-2.0, 2.0), (-2.0, 2.0)),
        objects_per_video=(1, 2),
        frames_per_video=7,
        size_range=(10, 18),
        blur_prob=0.2,
        occlusion_prob=0.3,
        seed=10,
    )
    base.update(overrides)
    return SceneConfig(**base)


def small_pipeline_config(**overrides):
    base = dict(
        variant="a",
        image_size=(48, 48),
        num_classes=2,
        anchor_scales=(12, 16, 22),
        anchor_ratios=(1.0,),
        anchor_offsets=((-2.0, -2.0), (-2.0, 2.0), (2.0, -2.0), (2.0, 2.0)),
        rpn_pre_nms_topk=200,
        rpn_post_nms_topk_train=64,
        rpn_post_nms_topk_eval=32,
        stage2_batch=32,
        epochs=2,
        batch_size=2,
        windows_per_video=1,
        learning_rate=0.002,
        seed=3,
    )
    base.update(overrides)
    return PipelineConfig(**base)


@pytest.fixture
def micro_window():
    sample = generate_video(micro_scene_config(), 0)
    return window_at(sample, 2, 2, 2)


@pytest.fixture
def micro_cfg():
    return micro_pipeline_config()


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    from motiondet.datagen import write_dataset

    root = tmp_path_factory.mktemp("small_ds")
    samples = [generate_video(small_scene_config(), seed) for seed in range(6)]
    write_dataset(samples, root)
    return root


@pytest.fixture(autouse=True)
def _deterministic_torch():
    torch.manual_seed(1234)
    np.random.seed(1234)
