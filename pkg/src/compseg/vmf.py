"""Learnable von Mises-Fisher kernel bank and compositional activation maps.

Each kernel is a unit-norm direction vector mu_j in feature space; the
activation of kernel j at spatial position i is the vMF likelihood of the
(unit-normalized) feature vector z_i under mean mu_j with a fixed, shared
concentration sigma. Because sigma is a constant, the likelihood's
normalizing constant is a shared positive factor, so the implementation
uses the max-shifted form exp(sigma * (mu_j . z_i - 1)). This is bounded in
(0, 1], never overflows (sigma=30 would overflow the direct exponent in
32-bit), and preserves likelihood ratios and argmax exactly. Normalized
mode divides by the per-position sum over kernels, which is the softmax of
the logits sigma * mu_j . z_i.
"""

from __future__ import annotations

import logging

import torch
import torch.nn as nn

logger = logging.getLogger(__name__)

UNIT_NORM_TOL = 1e-4


class KernelBank(nn.Module):
    """J learnable unit-norm kernel directions with fixed concentration."""

    def __init__(self, num_kernels: int, feature_channels: int, sigma: float = 30.0):
        super().__init__()
        if num_kernels < 1:
            raise ValueError(f"num_kernels must be >= 1, got {num_kernels}")
        if sigma <= 0:
            raise ValueError(f"sigma must be positive, got {sigma}")
        self.sigma = float(sigma)
        self.mu = nn.Parameter(torch.empty(num_kernels, feature_channels))
        nn.init.xavier_uniform_(self.mu)
        renormalize_kernels(self)

    @property
    def num_kernels(self) -> int:
        return self.mu.shape[0]

    @property
    def feature_channels(self) -> int:
        return self.mu.shape[1]


def normalize_features(z: torch.Tensor) -> torch.Tensor:
    """Unit-normalize each spatial position's feature vector (channel dim 1).

    All-zero vectors are mapped to zero rather than NaN; their occurrence is
    reported through the module logger since they carry no direction.
    """
    norms = z.norm(dim=1, keepdim=True)
    zero = norms <= 1e-12
    if bool(zero.any()):
        logger.warning("normalize_features: %d zero-norm feature vectors left at zero", int(zero.sum()))
    return torch.where(zero, torch.zeros_like(z), z / norms.clamp_min(1e-12))


def _check_unit_norm(z: torch.Tensor) -> None:
    norms = z.norm(dim=1)
    bad = (norms - 1.0).abs() > UNIT_NORM_TOL
    bad &= norms > UNIT_NORM_TOL  # zero vectors are the guarded degenerate case
    if bool(bad.any()):
        worst = float(norms[bad].max())
        raise ValueError(
            f"features must be unit-normalized per position (worst norm {worst:.6g}); "
            "call normalize_features first"
        )


def _kernel_logits(mu: torch.Tensor, z: torch.Tensor, sigma: float) -> torch.Tensor:
    # (J, C) x (B, C, H, W) -> (B, J, H, W) of sigma * mu_j . z_i
    return sigma * torch.einsum("jc,bchw->bjhw", mu, z)


def activations(
    bank: KernelBank,
    z: torch.Tensor,
    normalize_over_kernels: bool = True,
    detach_kernels: bool = False,
) -> torch.Tensor:
    """Compositional activation map (B, J, H_z, W_z) from unit features.

    Raw mode: exp(sigma * (mu_j . z_i - 1)), the kernel likelihood up to the
    shared positive constant; a feature aligned with kernel j scores exactly
    1. Normalized mode (default) rescales each position to sum to 1 over
    kernels. Raises if z is not unit-normalized within tolerance.
    """
    if z.ndim != 4 or z.shape[1] != bank.feature_channels:
        raise ValueError(
            f"expected (B, {bank.feature_channels}, H, W) features, got {tuple(z.shape)}"
        )
    _check_unit_norm(z)
    mu = bank.mu.detach() if detach_kernels else bank.mu
    logits = _kernel_logits(mu, z, bank.sigma)
    if normalize_over_kernels:
        return torch.softmax(logits, dim=1)
    return torch.exp(logits - bank.sigma)


def cluster_loss(bank: KernelBank, z: torch.Tensor) -> torch.Tensor:
    """Clustering objective: negative mean best cosine between features and kernels.

    Averages -max_j mu_j . z_i over all positions (and batch); lies in
    [-1, 1] for unit inputs and pulls kernels toward feature clusters while
    pulling features toward their nearest kernel.
    """
    if z.ndim != 4 or z.shape[1] != bank.feature_channels:
        raise ValueError(
            f"expected (B, {bank.feature_channels}, H, W) features, got {tuple(z.shape)}"
        )
    _check_unit_norm(z)
    dots = torch.einsum("jc,bchw->bjhw", bank.mu, z)
    return -dots.max(dim=1).values.mean()


def renormalize_kernels(bank: KernelBank) -> KernelBank:
    """Project every kernel row back onto the unit sphere (in place).

    Called after each optimizer step; a zero-norm row means the bank has
    collapsed and is reported as an error rather than silently rescaled.
    Rows already unit-norm up to float roundoff (~1 ulp) are left untouched,
    so the projection is a bit-exact no-op on an already-projected bank.
    """
    with torch.no_grad():
        norms = bank.mu.norm(dim=1, keepdim=True)
        if bool((norms <= 1e-12).any()):
            raise RuntimeError("kernel bank has a zero-norm row; training diverged")
        if float((norms - 1.0).abs().max()) > 2e-7:
            bank.mu.div_(norms)
    return bank
