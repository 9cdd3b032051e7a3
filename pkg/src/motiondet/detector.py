"""Full detector assembly and the runtime-selectable pipeline variants.

Variants form a superset chain of parameter names:

    a: single-frame two-stage baseline (backbone, proposal network,
       visual projection, detection head)
    b: a + pairwise gated temporal fusion (proposals and detection read
       the aggregated reference map)
    c: b + motion maps and the temporal box calibration head; detection
       reads the element-wise sum of all pooled RoI features
    d: c with cosine-weighted box-level visual aggregation (no new
       parameters; displacement/motion slots stay zero-masked)
    e: d + displacement encoding and the recurrent motion summary
    f: e with sequence-level rescoring applied at evaluation time

Proposal coordinates from the proposal network are constants to the
optimizer (standard two-stage practice); calibrated per-frame boxes stay
differentiable so pooling passes gradients back into the offset head.
"""

import numpy as np
import torch
from torch import nn

from . import boxes as boxops
from .backbone import Backbone, backbone_forward
from .box_features import (
    BoxFeatureAggregator,
    DetectionHead,
    DisplacementEncoder,
    MotionSequenceEncoder,
    cosine_weights,
    global_pool,
)
from .config import PipelineConfig
from .datagen import FrameWindow
from .fusion import MotionEncoder, PairwiseGate, fuse_window, motion_map_set
from .losses import (
    LossReport,
    det_loss,
    ref_loss,
    refinement_targets,
    rpn_loss,
    sample_balanced,
    total_loss,
)
from .refine import TemporalBoxHead, motion_aware_maps, pool_all, roi_align
from .rpn import RpnHead, rpn_forward

VARIANT_RANK = {"a": 0, "b": 1, "c": 2, "d": 3, "e": 4, "f": 4}


class TemporalDetector(nn.Module):
    """Two-stage video object detector over (M+N+1)-frame windows."""

    def __init__(self, cfg: PipelineConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.rank = VARIANT_RANK[cfg.variant]
        self.backbone = Backbone(3, cfg.backbone_widths)
        channels = self.backbone.out_channels
        anchors_per_cell = len(cfg.anchor_scales) * len(cfg.anchor_ratios) * len(cfg.anchor_offsets)
        self.rpn_head = RpnHead(channels, anchors_per_cell)
        self.visual = BoxFeatureAggregator(channels, cfg.visual_dim)
        self.head = DetectionHead(
            cfg.visual_dim, cfg.disp_hidden, 2 * cfg.gru_hidden, cfg.num_classes
        )
        if self.rank >= 1:
            self.gate = PairwiseGate(channels)
        if self.rank >= 2:
            self.motion = MotionEncoder(channels)
            self.calib = TemporalBoxHead(channels, cfg.num_classes)
        if self.rank >= 4:
            self.disp = DisplacementEncoder(cfg.window_length, cfg.disp_hidden)
            self.gru = MotionSequenceEncoder(channels, cfg.gru_hidden)

    # ---------------------------------------------------------------- stage 1
    def feature_stage(self, window: FrameWindow):
        """Backbone + temporal fusion. Returns (fset, aggregated, motion)."""
        if self.rank == 0:
            fset = backbone_forward([window.frames[window.reference]], self.backbone, 0)
            return fset, fset.maps[0], None
        fset = backbone_forward(window.frames, self.backbone, window.reference)
        aggregated = fuse_window(self.gate, fset.maps, fset.reference, self.cfg.aggregate_mode)
        motion = (
            motion_map_set(self.motion, fset.maps, fset.reference) if self.rank >= 2 else None
        )
        return fset, aggregated, motion

    def propose(self, aggregated, train: bool):
        cfg = self.cfg
        topk = cfg.rpn_post_nms_topk_train if train else cfg.rpn_post_nms_topk_eval
        return rpn_forward(
            aggregated,
            self.rpn_head,
            self.backbone.stride,
            cfg.anchor_scales,
            cfg.anchor_ratios,
            cfg.image_size,
            offsets=cfg.anchor_offsets,
            pre_nms_topk=cfg.rpn_pre_nms_topk,
            nms_iou=cfg.rpn_nms_iou,
            post_nms_topk=topk,
            min_size=cfg.rpn_min_box_size,
        )

    # ---------------------------------------------------------------- stage 2
    def box_stage(self, proposals: np.ndarray, fset, aggregated, motion):
        """Run calibration, pooling, and box-level features for a proposal set.

        Returns a dict with the refined reference boxes (tensor [K, 4]),
        class logits, head deltas, and the linked proposals (or None below
        variant c).
        """
        cfg = self.cfg
        stride = self.backbone.stride
        p = cfg.roi_size
        device = aggregated.device
        dtype = aggregated.dtype
        prop_t = torch.as_tensor(proposals, dtype=dtype, device=device).reshape(-1, 4)
        k = prop_t.shape[0]
        if k == 0:
            logits = aggregated.new_zeros((0, cfg.num_classes + 1))
            deltas = aggregated.new_zeros((0, 4))
            return {"ref_boxes": prop_t, "class_logits": logits, "deltas": deltas, "linked": None}

        if self.rank < 2:
            pooled = roi_align(aggregated, prop_t, stride, p)
            visual_slot = self.visual.project(global_pool(pooled))
            cls_logits, deltas = self.head(visual_slot)
            return {"ref_boxes": prop_t, "class_logits": cls_logits, "deltas": deltas, "linked": None}

        aware = motion_aware_maps(fset.maps, motion)
        linked = self.calib(aware, prop_t, stride, p, cfg.image_size)
        bundle = pool_all(aggregated, fset.maps, motion, linked, fset.reference, stride, p)
        ref_vec = global_pool(bundle.pooled_ref)
        frame_vecs = [global_pool(f) for f in bundle.pooled_frames]

        if self.rank == 2:
            summed = bundle.pooled_ref.clone()
            for fm, mm in zip(bundle.pooled_frames, bundle.pooled_motion):
                summed = summed + fm + mm
            visual_slot = self.visual.project(global_pool(summed))
            disp_slot = motion_slot = None
        else:
            weights = cosine_weights(ref_vec, frame_vecs)
            visual_slot = self.visual(ref_vec, frame_vecs, weights)
            disp_slot = motion_slot = None
            if self.rank >= 4:
                disp_slot = self.disp(linked.boxes, fset.reference)
                motion_slot = self.gru([global_pool(m) for m in bundle.pooled_motion])

        cls_logits, deltas = self.head(visual_slot, disp_slot, motion_slot)
        return {
            "ref_boxes": linked.boxes[:, fset.reference, :],
            "class_logits": cls_logits,
            "deltas": deltas,
            "linked": linked,
        }

    # ---------------------------------------------------------------- training
    def training_losses(self, window: FrameWindow, rng, proposal_override=None):
        """Loss of one window. Returns (total tensor, LossReport).

        ``proposal_override`` pins the stage-2 proposal set (bypassing
        proposal selection); used by gradient tests where the selection's
        discreteness would otherwise enter the comparison.
        """
        cfg = self.cfg
        fset, aggregated, motion = self.feature_stage(window)
        ref_objs = window.annotations[window.reference]
        gt_boxes = np.asarray([o.bbox for o in ref_objs], dtype=np.float64).reshape(-1, 4)

        rpn_out = self.propose(aggregated, train=True)
        l_rpn_cls, l_rpn_reg = rpn_loss(
            rpn_out,
            gt_boxes,
            rng,
            pos_iou=cfg.rpn_pos_iou,
            neg_iou=cfg.rpn_neg_iou,
            batch_size=cfg.rpn_batch,
            pos_fraction=cfg.rpn_pos_fraction,
        )
        l_rpn = l_rpn_cls + l_rpn_reg

        if proposal_override is not None:
            sampled = boxops.as_boxes(proposal_override)
        else:
            proposals = rpn_out.proposals
            if cfg.add_gt_proposals and len(gt_boxes):
                proposals = np.concatenate([proposals.reshape(-1, 4), gt_boxes], axis=0)
            assignment = boxops.assign_targets(
                proposals, gt_boxes, cfg.stage2_pos_iou, cfg.stage2_neg_iou
            )
            chosen = sample_balanced(
                assignment.labels, cfg.stage2_batch, cfg.stage2_pos_fraction, rng
            )
            sampled = boxops.as_boxes(proposals)[chosen]

        targets = refinement_targets(
            sampled,
            window.annotations,
            window.reference,
            pos_iou=cfg.stage2_pos_iou,
            neg_iou=cfg.stage2_neg_iou,
        )
        out = self.box_stage(sampled, fset, aggregated, motion)

        zero = l_rpn_cls.detach().new_zeros(())
        l_ref = ref_loss(out["linked"], targets) if out["linked"] is not None else zero.clone()

        pos = targets.class_targets > 0
        det_reg = np.zeros((len(sampled), 4))
        if pos.any():
            ref_anchor = out["ref_boxes"].detach().cpu().numpy()[pos]
            det_reg[pos] = boxops.encode_delta(ref_anchor, targets.ref_boxes[pos])
        l_det = det_loss(out["class_logits"], out["deltas"], targets.class_targets, det_reg, pos)

        total = total_loss(
            l_rpn, l_ref, l_det, cfg.loss_alpha, cfg.loss_beta, cfg.loss_gamma
        )
        report = LossReport(
            l_rpn=float(l_rpn.detach()),
            l_ref=float(l_ref.detach()),
            l_det=float(l_det.detach()),
            l_total=float(total.detach()),
            breakdown={"rpn_cls": float(l_rpn_cls.detach()), "rpn_reg": float(l_rpn_reg.detach())},
            counts={
                "num_proposals": int(len(sampled)),
                "num_positive": int(pos.sum()),
                "pos_per_frame": targets.reg_mask.sum(axis=0).tolist(),
            },
        )
        return total, report

    # ---------------------------------------------------------------- inference
    @torch.no_grad()
    def detect(self, window: FrameWindow):
        """Detections at the window's reference frame.

        Returns a list of (class_id, score, box) with dataset-space class
        ids, after score thresholding and per-class NMS.
        """
        cfg = self.cfg
        fset, aggregated, motion = self.feature_stage(window)
        rpn_out = self.propose(aggregated, train=False)
        if len(rpn_out.proposals) == 0:
            return []
        out = self.box_stage(rpn_out.proposals, fset, aggregated, motion)
        probs = torch.softmax(out["class_logits"], dim=1).cpu().numpy()
        ref_boxes = out["ref_boxes"].detach().cpu().numpy()
        deltas = out["deltas"].detach().cpu().numpy()
        final = boxops.decode_delta(ref_boxes, deltas, image_size=cfg.image_size)

        scores = probs[:, 1:].max(axis=1)
        labels = probs[:, 1:].argmax(axis=1)  # dataset-space class ids
        keep = scores >= cfg.score_thresh
        detections = []
        for class_id in range(cfg.num_classes):
            mask = keep & (labels == class_id)
            if not mask.any():
                continue
            idx = np.flatnonzero(mask)
            kept = boxops.nms(final[idx], scores[idx], cfg.det_nms_iou)
            for i in idx[kept]:
                detections.append((class_id, float(scores[i]), tuple(float(v) for v in final[i])))
        detections.sort(key=lambda d: -d[1])
        return detections[: cfg.max_dets_per_frame]


def parameter_names(model: nn.Module) -> set:
    return {name for name, _ in model.named_parameters()}
