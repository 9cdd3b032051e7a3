import numpy as np
import pytest
import torch

from motiondet import boxes as boxops
from motiondet.rpn import RpnHead, anchor_grid, rpn_forward, select_proposals


class TestAnchorGrid:
    def test_count_12x12_3x3(self):
        anchors = anchor_grid((12, 12), 8, (16, 32, 64), (0.5, 1, 2))
        assert anchors.shape == (1296, 4)

    def test_centered_on_cells(self):
        anchors = anchor_grid((2, 2), 8, (16,), (1.0,))
        centers_x = (anchors[:, 0] + anchors[:, 2]) / 2
        centers_y = (anchors[:, 1] + anchors[:, 3]) / 2
        assert centers_x.tolist() == [4.0, 12.0, 4.0, 12.0]
        assert centers_y.tolist() == [4.0, 4.0, 12.0, 12.0]

    def test_scale_and_ratio(self):
        anchors = anchor_grid((1, 1), 8, (16,), (0.5, 1.0, 2.0))
        w = anchors[:, 2] - anchors[:, 0]
        h = anchors[:, 3] - anchors[:, 1]
        assert np.allclose(w * h, 16.0 * 16.0)
        assert np.allclose(h / w, [0.5, 1.0, 2.0])


class TestSelectProposals:
    def test_tied_scores_fall_back_to_index_order(self):
        anchors = anchor_grid((2, 2), 8, (8,), (1.0,))
        scores = np.zeros(4)
        deltas = np.zeros((4, 4))
        proposals, kept_scores = select_proposals(
            scores, deltas, anchors, (16, 16), pre_nms_topk=4, nms_iou=0.9, post_nms_topk=2
        )
        expected = boxops.clip_boxes(anchors, (16, 16))
        assert np.allclose(proposals, expected[:2])
        assert kept_scores.tolist() == [0.0, 0.0]

    def test_perfect_oracle_deltas_recover_gt(self):
        anchors = anchor_grid((12, 12), 8, (16, 32), (1.0,))
        gt = np.array([30.0, 40.0, 62.0, 70.0])
        deltas = boxops.encode_delta(anchors, np.tile(gt, (len(anchors), 1)))
        scores = np.linspace(0, 1, len(anchors))
        proposals, _ = select_proposals(
            scores, deltas, anchors, (96, 96), pre_nms_topk=300, nms_iou=0.7, post_nms_topk=5
        )
        assert np.max(np.abs(proposals[0] - gt)) < 1e-4

    def test_min_size_filters_degenerate(self):
        anchors = np.array([[0.0, 0.0, 8.0, 8.0], [90.0, 90.0, 98.0, 98.0]])
        deltas = np.zeros((2, 4))
        deltas[1] = [5.0, 5.0, 0.0, 0.0]  # pushed far outside, clips to a sliver
        proposals, _ = select_proposals(
            np.array([0.5, 0.9]), deltas, anchors, (96, 96), 10, 0.7, 10, min_size=1.0
        )
        assert len(proposals) == 1
        assert np.allclose(proposals[0], [0, 0, 8, 8])


class TestRpnForward:
    def test_output_shapes_and_clipping(self):
        torch.manual_seed(0)
        head = RpnHead(16, 9)
        fmap = torch.randn(16, 12, 12)
        out = rpn_forward(fmap, head, 8, (16, 32, 64), (0.5, 1, 2), (96, 96), post_nms_topk=50)
        assert out.objectness.shape == (1296,)
        assert out.deltas.shape == (1296, 4)
        assert out.anchors.shape == (1296, 4)
        assert len(out.proposals) <= 50
        assert np.all(out.proposals[:, 0] >= 0) and np.all(out.proposals[:, 2] <= 96)
        assert np.all(out.proposals[:, 1] >= 0) and np.all(out.proposals[:, 3] <= 96)

    def test_proposals_sorted_by_score(self):
        torch.manual_seed(1)
        head = RpnHead(8, 9)
        fmap = torch.randn(8, 6, 6)
        out = rpn_forward(fmap, head, 8, (16, 32, 64), (0.5, 1, 2), (48, 48), post_nms_topk=20)
        assert np.all(np.diff(out.proposal_scores) <= 1e-12)

    def test_head_flattening_matches_anchor_order(self):
        # one anchor per cell: objectness map position (r, c) must land at
        # flat index r * W + c, matching the anchor grid ordering
        torch.manual_seed(2)
        head = RpnHead(4, 1)
        fmap = torch.randn(4, 3, 5)
        obj, deltas = head(fmap)
        with torch.no_grad():
            x = torch.relu(head.trunk(fmap.unsqueeze(0)))
            raw = head.objectness(x)[0, 0]
        assert torch.allclose(obj.reshape(3, 5), raw)
        assert deltas.shape == (15, 4)
