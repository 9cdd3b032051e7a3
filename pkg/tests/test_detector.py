import numpy as np
import pytest
import torch

from conftest import micro_pipeline_config, micro_scene_config
from motiondet.config import PipelineConfig
from motiondet.datagen import generate_video, window_at
from motiondet.detector import TemporalDetector, parameter_names


def build(variant, **overrides):
    torch.manual_seed(0)
    return TemporalDetector(micro_pipeline_config(variant=variant, **overrides))


class TestVariantWiring:
    def test_parameter_superset_chain(self):
        names = {v: parameter_names(build(v)) for v in "abcdef"}
        assert names["a"] < names["b"]
        assert names["b"] < names["c"]
        assert names["c"] == names["d"]  # cosine attention adds no parameters
        assert names["d"] < names["e"]
        assert names["e"] == names["f"]

    def test_variant_a_has_no_temporal_branches(self):
        names = parameter_names(build("a"))
        for prefix in ("gate.", "motion.", "calib.", "disp.", "gru."):
            assert not any(n.startswith(prefix) for n in names)

    def test_branch_ownership(self):
        assert any(n.startswith("gate.") for n in parameter_names(build("b")))
        named_c = parameter_names(build("c"))
        assert any(n.startswith("motion.") for n in named_c)
        assert any(n.startswith("calib.") for n in named_c)
        named_e = parameter_names(build("e"))
        assert any(n.startswith("disp.") for n in named_e)
        assert any(n.startswith("gru.") for n in named_e)

    def test_invalid_variant_rejected(self):
        with pytest.raises(ValueError):
            PipelineConfig(variant="z").validate()


class TestForward:
    def test_training_losses_all_variants(self, micro_window):
        for variant in "abcde":
            model = build(variant)
            rng = np.random.default_rng(0)
            total, report = model.training_losses(micro_window, rng)
            assert np.isfinite(report.l_total)
            assert report.l_total == pytest.approx(report.l_rpn + report.l_ref + report.l_det, abs=1e-5)
            if variant in "ab":
                assert report.l_ref == 0.0
            total.backward()
            grads = [p.grad for p in model.parameters() if p.grad is not None]
            assert len(grads) > 0

    def test_deterministic_given_rng(self, micro_window):
        model = build("e")
        t1, r1 = model.training_losses(micro_window, np.random.default_rng(5))
        t2, r2 = model.training_losses(micro_window, np.random.default_rng(5))
        assert r1.l_total == r2.l_total

    def test_backbone_gradients_flow_through_pooling(self, micro_window):
        # zero out the proposal-network loss path contributions by checking a
        # backbone gradient is nonzero even when only stage-2 losses backprop
        model = build("e")
        rng = np.random.default_rng(1)
        cfg = model.cfg
        from motiondet.losses import total_loss

        fset, aggregated, motion = model.feature_stage(micro_window)
        out = model.box_stage(np.array([[2.0, 2.0, 12.0, 12.0]]), fset, aggregated, motion)
        loss = out["class_logits"].square().sum() + out["deltas"].square().sum()
        loss.backward()
        backbone_grads = [p.grad.abs().sum() for n, p in model.named_parameters() if n.startswith("backbone.")]
        assert float(sum(backbone_grads)) > 0

    def test_detect_output_contract(self, micro_window):
        for variant in "abcde":
            model = build(variant)
            model.eval()
            detections = model.detect(micro_window)
            h, w = model.cfg.image_size
            for class_id, score, box in detections:
                assert 0 <= class_id < model.cfg.num_classes
                assert 0.0 <= score <= 1.0
                assert 0 <= box[0] <= box[2] <= w
                assert 0 <= box[1] <= box[3] <= h

    def test_proposal_override_path(self, micro_window):
        model = build("e")
        rng = np.random.default_rng(0)
        fixed = np.array([[2.0, 2.0, 12.0, 12.0], [4.0, 1.0, 10.0, 9.0]])
        total, report = model.training_losses(micro_window, rng, proposal_override=fixed)
        assert report.counts["num_proposals"] == 2

    def test_empty_proposals_stage2(self, micro_window):
        model = build("e")
        fset, aggregated, motion = model.feature_stage(micro_window)
        out = model.box_stage(np.zeros((0, 4)), fset, aggregated, motion)
        assert out["class_logits"].shape == (0, model.cfg.num_classes + 1)
        assert out["deltas"].shape == (0, 4)

    def test_variant_a_single_frame_equivalence(self):
        # variant a ignores every non-reference frame: scrambling them leaves
        # the losses untouched
        sample = generate_video(micro_scene_config(), 3)
        window = window_at(sample, 2, 2, 2)
        scrambled_frames = list(window.frames)
        rng_noise = np.random.default_rng(0)
        for i in (0, 1, 3, 4):
            scrambled_frames[i] = rng_noise.integers(0, 256, size=scrambled_frames[i].shape, dtype=np.uint8)
        from motiondet.datagen import FrameWindow

        scrambled = FrameWindow(
            frames=scrambled_frames,
            annotations=window.annotations,
            reference=window.reference,
            start=window.start,
        )
        model = build("a")
        _, base = model.training_losses(window, np.random.default_rng(4))
        _, scr = model.training_losses(scrambled, np.random.default_rng(4))
        assert base.l_total == pytest.approx(scr.l_total, abs=1e-9)


class TestAblationZeroMasking:
    def test_variant_d_head_slots_are_zero_masked(self, micro_window):
        # method (d): displacement and motion slots enter the head as zeros
        model = build("d")
        fset, aggregated, motion = model.feature_stage(micro_window)
        proposals = np.array([[2.0, 2.0, 12.0, 12.0]])
        out = model.box_stage(proposals, fset, aggregated, motion)

        # reproduce by hand with explicit zero slots through the same head
        from motiondet.box_features import cosine_weights, global_pool
        from motiondet.refine import motion_aware_maps, pool_all

        aware = motion_aware_maps(fset.maps, motion)
        linked = model.calib(aware, proposals, model.backbone.stride, model.cfg.roi_size, model.cfg.image_size)
        bundle = pool_all(
            aggregated, fset.maps, motion, linked, fset.reference, model.backbone.stride, model.cfg.roi_size
        )
        ref_vec = global_pool(bundle.pooled_ref)
        frame_vecs = [global_pool(f) for f in bundle.pooled_frames]
        weights = cosine_weights(ref_vec, frame_vecs)
        visual = model.visual(ref_vec, frame_vecs, weights)
        logits, deltas = model.head(
            visual,
            torch.zeros(1, model.cfg.disp_hidden),
            torch.zeros(1, 2 * model.cfg.gru_hidden),
        )
        assert torch.allclose(out["class_logits"], logits, atol=1e-6)
        assert torch.allclose(out["deltas"], deltas, atol=1e-6)
