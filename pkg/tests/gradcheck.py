"""Central finite-difference gradient oracle, independent of autograd.

All checks run at float64. The relative-error criterion per coordinate is
|analytic - fd| <= atol + rtol * max(|analytic|, |fd|); coordinates are
deterministically subsampled for large tensors so the whole suite stays fast.
"""

from __future__ import annotations

import numpy as np
import torch

RTOL = 1e-4
ATOL = 1e-8


def central_differences(loss_fn, tensors, n_coords=20, h=1e-6, seed=0):
    """Yield (tensor_idx, flat_coord, fd_gradient) for sampled coordinates."""
    rng = np.random.default_rng(seed)
    for ti, tensor in enumerate(tensors):
        flat = tensor.detach().reshape(-1)
        n = flat.numel()
        if n <= n_coords:
            coords = range(n)
        else:
            coords = sorted(int(c) for c in rng.choice(n, size=n_coords, replace=False))
        for ci in coords:
            orig = flat[ci].item()
            with torch.no_grad():
                flat[ci] = orig + h
                f_plus = float(loss_fn())
                flat[ci] = orig - h
                f_minus = float(loss_fn())
                flat[ci] = orig
            yield ti, ci, (f_plus - f_minus) / (2.0 * h)


def assert_gradients_match(loss_fn, tensors, n_coords=20, h=1e-6, rtol=RTOL, atol=ATOL, seed=0):
    """Compare autograd gradients of loss_fn against central differences."""
    tensors = list(tensors)
    assert tensors, "no tensors to check"
    assert all(t.dtype == torch.float64 for t in tensors), "gradient checks require float64"
    for t in tensors:
        t.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [
        t.grad.detach().reshape(-1).clone() if t.grad is not None
        else torch.zeros(t.numel(), dtype=t.dtype)
        for t in tensors
    ]
    checked = 0
    for ti, ci, fd in central_differences(loss_fn, tensors, n_coords, h, seed):
        a = float(analytic[ti][ci])
        err = abs(a - fd)
        bound = atol + rtol * max(abs(a), abs(fd))
        assert err <= bound, (
            f"gradient mismatch at tensor {ti} coord {ci}: analytic={a:.10g} fd={fd:.10g} "
            f"(err {err:.3g} > bound {bound:.3g})"
        )
        checked += 1
    assert checked > 0
