"""Shared fixtures-by-function for the test suite: tiny configs, tiny float64
networks for gradient checks, and independent brute-force metric oracles."""

from __future__ import annotations

import numpy as np
import torch

from compseg.baselines import UNet
from compseg.segmentation import SegmentationHead
from compseg.training import TrainConfig
from compseg.translation import Encoder, Generator, PatchDiscriminator, TranslationNets
from compseg.vmf import KernelBank


def tiny_config(**overrides) -> TrainConfig:
    """Small, fast configuration for unit tests on 32x32 toy images."""
    base = dict(
        epochs=1,
        batch_size=2,
        num_kernels=4,
        num_folds=2,
        num_classes=3,
        image_size=32,
        feature_channels=16,
        base_channels=8,
        n_res_blocks=1,
        disc_base_channels=8,
        head_base_channels=8,
        unet_base_channels=4,
        seed=11,
    )
    base.update(overrides)
    return TrainConfig(**base)


def tiny_float64_nets(image_size=8, feature_channels=4, seed=0) -> TranslationNets:
    """Miniature translation networks in float64 for finite-difference checks."""
    torch.manual_seed(seed)
    kwargs = dict(base_channels=3, feature_channels=feature_channels, n_res_blocks=1)
    nets = TranslationNets(
        e_x=Encoder(image_size, 1, **kwargs).double(),
        e_y=Encoder(image_size, 1, **kwargs).double(),
        g_x=Generator(image_size, 1, **kwargs).double(),
        g_y=Generator(image_size, 1, **kwargs).double(),
        d_x=PatchDiscriminator(1, 3, n_strided=2).double(),
        d_y=PatchDiscriminator(1, 3, n_strided=2).double(),
    )
    return nets


def tiny_float64_bank(num_kernels=3, feature_channels=4, sigma=5.0, seed=1) -> KernelBank:
    torch.manual_seed(seed)
    return KernelBank(num_kernels, feature_channels, sigma).double()


def tiny_float64_head(num_kernels=3, num_classes=2, seed=2) -> SegmentationHead:
    torch.manual_seed(seed)
    return SegmentationHead(num_kernels, num_classes, base_channels=4).double()


def random_unit_features(shape, seed=0, dtype=torch.float64) -> torch.Tensor:
    """(B, C, H, W) feature grid with exactly unit-norm position vectors."""
    rng = np.random.default_rng(seed)
    z = torch.from_numpy(rng.standard_normal(shape)).to(dtype)
    return z / z.norm(dim=1, keepdim=True)


def jitter_parameters(modules, scale=0.05, seed=0) -> None:
    """Nudge every parameter to a generic point.

    Freshly built nets sit exactly on ReLU kinks (zero-initialized biases
    meet exactly-zero activation patches), where the losses are genuinely
    non-differentiable and central differences straddle the corner. Gradient
    checks are only meaningful at generic differentiable points.
    """
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        for module in modules:
            for p in module.parameters():
                noise = torch.from_numpy(rng.uniform(-scale, scale, size=tuple(p.shape)))
                p.add_(noise.to(p.dtype))


# ---------------------------------------------------------------------------
# Brute-force metric oracles (independent of compseg.metrics internals)


def oracle_dsc(pred: np.ndarray, target: np.ndarray, class_id: int) -> float:
    a = {tuple(p) for p in np.argwhere(pred == class_id)}
    b = {tuple(p) for p in np.argwhere(target == class_id)}
    if not a and not b:
        return 100.0
    return 100.0 * 2.0 * len(a & b) / (len(a) + len(b))


def oracle_boundary(binary: np.ndarray) -> list[tuple[int, int]]:
    """Foreground pixels with a 4-neighbor outside the foreground (border counts)."""
    h, w = binary.shape
    pts = []
    for r in range(h):
        for c in range(w):
            if not binary[r, c]:
                continue
            for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                rr, cc = r + dr, c + dc
                if rr < 0 or rr >= h or cc < 0 or cc >= w or not binary[rr, cc]:
                    pts.append((r, c))
                    break
    return pts


def oracle_assd(pred, target, class_id, spacing=(1.0, 1.0)) -> float:
    """Exhaustive pairwise symmetric surface distance."""
    a = oracle_boundary(np.asarray(pred) == class_id)
    b = oracle_boundary(np.asarray(target) == class_id)
    if not a or not b:
        return float("nan")
    pa = np.asarray(a, dtype=np.float64) * np.asarray(spacing)
    pb = np.asarray(b, dtype=np.float64) * np.asarray(spacing)
    dists = np.sqrt(((pa[:, None, :] - pb[None, :, :]) ** 2).sum(-1))
    return 0.5 * (dists.min(axis=1).mean() + dists.min(axis=0).mean())


def random_mask_pair(rng: np.random.Generator, size=16, num_classes=3):
    """Random blobby label grids for metric property tests."""
    def blobs():
        mask = np.zeros((size, size), dtype=np.int64)
        for class_id in range(1, num_classes + 1):
            if rng.random() < 0.15:
                continue  # leave the class empty sometimes
            n = rng.integers(1, 3)
            for _ in range(n):
                cy, cx = rng.integers(0, size, 2)
                r = rng.uniform(1.0, size / 3)
                yy, xx = np.mgrid[0:size, 0:size]
                mask[(yy - cy) ** 2 + (xx - cx) ** 2 <= r**2] = class_id
        return mask

    return blobs(), blobs()
