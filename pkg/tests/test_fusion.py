import pytest
import torch

from fdcheck import assert_grad_matches, model_param_check
from motiondet.fusion import (
    ChannelAttention,
    MotionEncoder,
    PairwiseGate,
    aggregate_maps,
    fuse_window,
    gated_fuse,
    motion_map_set,
)


def rand_map(*shape, seed=0, dtype=torch.float32):
    torch.manual_seed(seed)
    return torch.randn(*shape, dtype=dtype)


class TestPairwiseGate:
    def test_zero_parameters_give_half_gates(self):
        torch.manual_seed(0)
        gate = PairwiseGate(8)
        with torch.no_grad():
            for p in gate.parameters():
                p.zero_()
        a_ref, a_other = gate(rand_map(8, 6, 6, seed=1), rand_map(8, 6, 6, seed=2))
        assert torch.allclose(a_ref, torch.full_like(a_ref, 0.5))
        assert torch.allclose(a_other, torch.full_like(a_other, 0.5))

    def test_complementarity(self):
        torch.manual_seed(1)
        gate = PairwiseGate(8)
        for seed in range(5):
            a_ref, a_other = gate(rand_map(8, 6, 6, seed=seed), rand_map(8, 6, 6, seed=seed + 50))
            assert float((a_ref + a_other - 1.0).abs().max()) < 1e-6

    def test_open_interval_range(self):
        torch.manual_seed(2)
        gate = PairwiseGate(4)
        a_ref, a_other = gate(10 * rand_map(4, 5, 5, seed=3), -10 * rand_map(4, 5, 5, seed=4))
        for g in (a_ref, a_other):
            assert float(g.min()) > 0.0
            assert float(g.max()) < 1.0

    def test_single_output_channel(self):
        torch.manual_seed(0)
        gate = PairwiseGate(8)
        a_ref, _ = gate(rand_map(8, 6, 6, seed=1), rand_map(8, 6, 6, seed=2))
        assert tuple(a_ref.shape) == (1, 6, 6)

    def test_shape_mismatch_rejected(self):
        torch.manual_seed(0)
        gate = PairwiseGate(8)
        with pytest.raises(ValueError):
            gate(rand_map(8, 6, 6), rand_map(8, 5, 5))

    def test_gradients(self):
        torch.manual_seed(3)
        gate = PairwiseGate(3).double()
        x = rand_map(3, 8, 8, seed=5, dtype=torch.float64).requires_grad_()
        y = rand_map(3, 8, 8, seed=6, dtype=torch.float64).requires_grad_()

        def forward():
            a_ref, a_other = gate(x, y)
            return (a_ref * 1.3 + a_other.square()).sum()

        assert_grad_matches(forward, [x, y], max_coords=40)
        model_param_check(forward, gate, max_coords=4)


class TestGatedFuse:
    def test_equal_inputs_any_gate(self):
        f = rand_map(4, 5, 5, seed=7)
        gate = torch.sigmoid(rand_map(1, 5, 5, seed=8))
        fused = gated_fuse(f, f, gate, 1.0 - gate)
        assert torch.allclose(fused, f, atol=1e-6)

    def test_scalar_arithmetic(self):
        ref = torch.full((1, 1, 1), 4.0)
        other = torch.full((1, 1, 1), 8.0)
        gate = torch.full((1, 1, 1), 0.25)
        assert float(gated_fuse(ref, other, gate, 1 - gate)) == pytest.approx(7.0)

    def test_boundary_gate_passes_reference(self):
        ref = rand_map(4, 5, 5, seed=9)
        other = rand_map(4, 5, 5, seed=10)
        fused = gated_fuse(ref, other, torch.ones(1, 5, 5), torch.zeros(1, 5, 5))
        assert torch.equal(fused, ref)

    def test_gradients(self):
        x = rand_map(2, 6, 6, seed=11, dtype=torch.float64).requires_grad_()
        y = rand_map(2, 6, 6, seed=12, dtype=torch.float64).requires_grad_()
        g = torch.sigmoid(rand_map(1, 6, 6, seed=13, dtype=torch.float64)).requires_grad_()

        def forward():
            return gated_fuse(x, y, g, 1.0 - g).square().sum()

        assert_grad_matches(forward, [x, y, g], max_coords=30)


class TestAggregate:
    def test_sum_of_equal_maps(self):
        g = rand_map(4, 3, 3, seed=14)
        out = aggregate_maps([g, g, g, g], mode="sum")
        assert torch.allclose(out, 4 * g, atol=1e-6)

    def test_mean_of_equal_maps(self):
        g = rand_map(4, 3, 3, seed=15)
        assert torch.allclose(aggregate_maps([g, g, g, g], mode="mean"), g, atol=1e-6)

    def test_shape_contract(self):
        maps = [rand_map(64, 12, 12, seed=s) for s in range(4)]
        assert tuple(aggregate_maps(maps).shape) == (64, 12, 12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            aggregate_maps([])

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            aggregate_maps([rand_map(1, 2, 2)], mode="median")


class TestMotionEncoder:
    def test_identical_maps_give_zero_motion(self):
        torch.manual_seed(4)
        enc = MotionEncoder(8)
        f = rand_map(8, 6, 6, seed=16)
        out = enc(f, f.clone())
        assert torch.equal(out, torch.zeros_like(out))

    def test_channel_attention_weights_in_unit_interval(self):
        torch.manual_seed(5)
        att = ChannelAttention(8)
        pooled = rand_map(8, 4, 4, seed=17).mean(dim=(-2, -1))
        weights = torch.sigmoid(att.fc2(torch.relu(att.fc1(pooled))))
        assert float(weights.min()) > 0.0
        assert float(weights.max()) < 1.0

    def test_window_motion_set_zero_at_reference(self):
        torch.manual_seed(6)
        enc = MotionEncoder(4)
        maps = [rand_map(4, 5, 5, seed=s) for s in range(5)]
        motion = motion_map_set(enc, maps, reference=2)
        assert len(motion) == 5
        assert torch.equal(motion[2], torch.zeros_like(maps[0]))

    def test_gradients(self):
        torch.manual_seed(7)
        enc = MotionEncoder(3).double()
        ref = rand_map(3, 8, 8, seed=18, dtype=torch.float64).requires_grad_()
        other = rand_map(3, 8, 8, seed=19, dtype=torch.float64).requires_grad_()

        def forward():
            return enc(ref, other).sum()

        assert_grad_matches(forward, [other, ref], max_coords=40)
        model_param_check(forward, enc, max_coords=4)


class TestFuseWindow:
    def test_static_sequence_idempotent_in_mean_mode(self):
        torch.manual_seed(8)
        gate = PairwiseGate(4)
        f = rand_map(4, 6, 6, seed=20)
        fused = fuse_window(gate, [f, f.clone(), f.clone(), f.clone(), f.clone()], 2, mode="mean")
        assert torch.allclose(fused, f, atol=1e-6)

    def test_sum_mode_scales_with_window(self):
        torch.manual_seed(9)
        gate = PairwiseGate(4)
        f = rand_map(4, 6, 6, seed=21)
        fused = fuse_window(gate, [f, f.clone(), f.clone()], 1, mode="sum")
        assert torch.allclose(fused, 2 * f, atol=1e-5)
