"""Box-level feature generation and the final detection head.

Three per-proposal feature vectors are produced and concatenated: a
cosine-weighted aggregation of pooled visual features, an encoding of the
linked boxes' displacements against the reference box, and a recurrent
summary of the pooled motion features. Ablation variants zero-mask the
slots they do not compute; the head consumes a fixed-width concatenation
either way.
"""

import torch
from torch import nn

COSINE_EPS = 1e-8


def global_pool(features: torch.Tensor) -> torch.Tensor:
    """Spatial global average pooling: [K, C, P, P] -> [K, C]."""
    return features.mean(dim=(-2, -1))


def cosine_weights(ref_vecs: torch.Tensor, frame_vecs) -> torch.Tensor:
    """Cosine similarity of each frame's pooled vector to the reference.

    Returns [K, W] weights in [-1, 1]; a zero vector on either side yields
    weight 0 through the epsilon guard.
    """
    stacked = torch.stack(list(frame_vecs), dim=1)  # [K, W, C]
    dots = (stacked * ref_vecs[:, None, :]).sum(dim=2)
    norms = stacked.norm(dim=2) * ref_vecs.norm(dim=1)[:, None]
    return dots / (norms + COSINE_EPS)


class BoxFeatureAggregator(nn.Module):
    """Weighted sum of pooled frame features plus the reference vector.

    The weighted sum runs over every window position (reference included);
    a single fully-connected layer with ReLU maps the result to the visual
    feature slot.
    """

    def __init__(self, channels: int, out_dim: int):
        super().__init__()
        self.fc = nn.Linear(channels, out_dim)
        self.out_dim = out_dim

    def project(self, vecs: torch.Tensor) -> torch.Tensor:
        """Plain projection of one pooled vector (single-frame variants)."""
        return torch.relu(self.fc(vecs))

    def forward(self, ref_vecs: torch.Tensor, frame_vecs, weights: torch.Tensor) -> torch.Tensor:
        stacked = torch.stack(list(frame_vecs), dim=1)  # [K, W, C]
        combined = (weights[..., None] * stacked).sum(dim=1) + ref_vecs
        return self.project(combined)


class DisplacementEncoder(nn.Module):
    """Encodes per-frame box displacements relative to the reference box.

    Differences are normalized by the reference box size, concatenated
    over the window, and passed through two fully-connected layers.
    """

    def __init__(self, window: int, hidden: int = 64):
        super().__init__()
        self.window = window
        self.net = nn.Sequential(
            nn.Linear(window * 4, hidden), nn.ReLU(), nn.Linear(hidden, hidden), nn.ReLU()
        )
        self.out_dim = hidden

    def displacements(self, linked_boxes: torch.Tensor, reference: int) -> torch.Tensor:
        """Normalized coordinate differences, [K, W, 4]; zero at reference."""
        ref = linked_boxes[:, reference, :]
        diff = linked_boxes - ref[:, None, :]
        w = (ref[:, 2] - ref[:, 0]).clamp(min=1e-3)
        h = (ref[:, 3] - ref[:, 1]).clamp(min=1e-3)
        scale = torch.stack([w, h, w, h], dim=1)
        return diff / scale[:, None, :]

    def forward(self, linked_boxes: torch.Tensor, reference: int) -> torch.Tensor:
        p = self.displacements(linked_boxes, reference)
        return self.net(p.reshape(p.shape[0], -1))


class MotionSequenceEncoder(nn.Module):
    """Bi-directional GRU over pooled per-frame motion vectors.

    The output concatenates the final hidden states of both directions
    (dimension 2 * hidden). ``tie_directions`` copies the forward
    parameters onto the reverse direction; used only to exercise the
    sequence-reversal symmetry in tests.
    """

    def __init__(self, channels: int, hidden: int = 64):
        super().__init__()
        self.gru = nn.GRU(input_size=channels, hidden_size=hidden, bidirectional=True, batch_first=True)
        self.out_dim = 2 * hidden

    def tie_directions(self):
        with torch.no_grad():
            for name in ("weight_ih_l0", "weight_hh_l0", "bias_ih_l0", "bias_hh_l0"):
                getattr(self.gru, name + "_reverse").copy_(getattr(self.gru, name))

    def forward(self, motion_vecs) -> torch.Tensor:
        seq = torch.stack(list(motion_vecs), dim=1)  # [K, W, C]
        _, hidden = self.gru(seq)  # [2, K, H]
        return torch.cat([hidden[0], hidden[1]], dim=1)


class DetectionHead(nn.Module):
    """Two fully-connected layers over the concatenated box-level features,
    emitting class logits (num_classes + background) and one class-agnostic
    box delta applied to the reference box."""

    def __init__(self, visual_dim: int, disp_dim: int, motion_dim: int, num_classes: int, hidden: int = 256):
        super().__init__()
        self.in_dims = (visual_dim, disp_dim, motion_dim)
        self.trunk = nn.Sequential(
            nn.Linear(visual_dim + disp_dim + motion_dim, hidden),
            nn.ReLU(),
            nn.Linear(hidden, hidden),
            nn.ReLU(),
        )
        self.classify = nn.Linear(hidden, num_classes + 1)
        self.regress = nn.Linear(hidden, 4)
        with torch.no_grad():
            self.classify.bias.zero_()
            self.classify.bias[0] = 2.0  # background prior
            self.regress.bias.zero_()

    def forward(self, visual_feat, disp_feat=None, motion_feat=None):
        """Returns (class_logits [K, num_classes+1], deltas [K, 4]).

        Missing displacement/motion slots are zero-filled (ablation wiring).
        """
        k = visual_feat.shape[0]
        if disp_feat is None:
            disp_feat = visual_feat.new_zeros((k, self.in_dims[1]))
        if motion_feat is None:
            motion_feat = visual_feat.new_zeros((k, self.in_dims[2]))
        x = self.trunk(torch.cat([visual_feat, disp_feat, motion_feat], dim=1))
        return self.classify(x), self.regress(x)
