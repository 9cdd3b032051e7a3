"""Central finite-difference gradient checking against autograd.

The forward callable is re-evaluated with single coordinates perturbed in
place, so it must be a pure function of the checked tensors (fixed RNG
seeds inside). Everything runs at float64.
"""

import numpy as np
import torch

RTOL = 1e-4
ATOL = 1e-6
EPS = 1e-6


def numeric_gradient(fn, tensor: torch.Tensor, coords, eps: float = EPS) -> dict:
    """Central differences of scalar ``fn()`` w.r.t. selected coordinates."""
    flat = tensor.detach().reshape(-1)
    grads = {}
    for i in coords:
        original = flat[i].item()
        with torch.no_grad():
            flat[i] = original + eps
        plus = float(fn().detach())
        with torch.no_grad():
            flat[i] = original - eps
        minus = float(fn().detach())
        with torch.no_grad():
            flat[i] = original
        grads[i] = (plus - minus) / (2.0 * eps)
    return grads


def pick_coords(numel: int, max_coords, seed: int):
    if max_coords is None or numel <= max_coords:
        return list(range(numel))
    rng = np.random.default_rng(seed)
    return sorted(rng.choice(numel, size=max_coords, replace=False).tolist())


def assert_grad_matches(fn, tensors, max_coords=None, rtol=RTOL, atol=ATOL, eps=EPS):
    """Compare autograd gradients of scalar ``fn()`` against central FD.

    tensors: leaf float64 tensors with requires_grad that ``fn`` reads.
    ``max_coords`` caps the checked coordinates per tensor (None = all).
    """
    tensors = list(tensors)
    assert all(t.dtype == torch.float64 for t in tensors), "gradient checks run at float64"
    out = fn()
    analytic = torch.autograd.grad(out, tensors, allow_unused=True)
    for t_idx, (tensor, grad) in enumerate(zip(tensors, analytic)):
        if grad is None:
            grad = torch.zeros_like(tensor)
        flat_grad = grad.detach().reshape(-1)
        coords = pick_coords(tensor.numel(), max_coords, seed=1234 + t_idx)
        numeric = numeric_gradient(fn, tensor, coords, eps=eps)
        for i, fd in numeric.items():
            got = float(flat_grad[i])
            assert abs(got - fd) <= atol + rtol * abs(fd), (
                f"tensor {t_idx} coord {i}: autograd {got:.10g} vs finite difference {fd:.10g}"
            )


def model_param_check(fn, module: torch.nn.Module, max_coords=4, rtol=RTOL, atol=ATOL, eps=EPS):
    """FD-check every parameter tensor of ``module`` on a coordinate sample."""
    params = [p for p in module.parameters() if p.requires_grad]
    assert_grad_matches(fn, params, max_coords=max_coords, rtol=rtol, atol=atol, eps=eps)
