"""Segmentation head over compositional maps, Dice objective, and the
translate-then-segment training loss.

The head consumes the J-channel compositional activation map at feature
resolution and predicts per-pixel class probabilities at image resolution
through two learned 2x upsampling stages (matching the encoder's fixed
downsampling factor of 4).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .translation import DOWNSAMPLE_FACTOR, TranslationNets, _init_weights
from .vmf import KernelBank, activations, normalize_features

DICE_EPS = 1e-5


@dataclass
class SegPrediction:
    probs: torch.Tensor  # (K+1, H, W), per-pixel probabilities summing to 1
    argmax_mask: np.ndarray  # (H, W) int64 labels


class SegmentationHead(nn.Module):
    """J-channel composition map -> (K+1)-class probability grid at image size."""

    def __init__(self, num_kernels: int, num_classes: int, base_channels: int = 32):
        super().__init__()
        self.num_kernels = num_kernels
        self.num_classes = num_classes
        c = base_channels
        stages = [
            nn.Conv2d(num_kernels, c, 3, padding=1),
            nn.InstanceNorm2d(c),
            nn.ReLU(inplace=True),
            nn.Conv2d(c, c, 3, padding=1),
            nn.InstanceNorm2d(c),
            nn.ReLU(inplace=True),
        ]
        n_up = int(round(np.log2(DOWNSAMPLE_FACTOR)))
        for _ in range(n_up):
            stages += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(c, c, 3, padding=1),
                nn.ReLU(inplace=True),
            ]
        stages.append(nn.Conv2d(c, num_classes + 1, 1))
        self.layers = nn.Sequential(*stages)
        _init_weights(self)

    def forward(self, comp: torch.Tensor) -> torch.Tensor:
        if comp.ndim != 4 or comp.shape[1] != self.num_kernels:
            raise ValueError(
                f"expected (B, {self.num_kernels}, h, w) composition map, got {tuple(comp.shape)}"
            )
        return torch.softmax(self.layers(comp), dim=1)


def predict(head: SegmentationHead, comp: torch.Tensor) -> list[SegPrediction]:
    """Inference wrapper returning probabilities and argmax masks per batch item."""
    with torch.no_grad():
        probs = head(comp)
    masks = probs.argmax(dim=1).cpu().numpy().astype(np.int64)
    return [SegPrediction(probs=probs[i], argmax_mask=masks[i]) for i in range(probs.shape[0])]


def dice_loss(pred_probs: torch.Tensor, target: torch.Tensor, eps: float = DICE_EPS) -> torch.Tensor:
    """Soft Dice loss over foreground classes.

    pred_probs: (B, K+1, H, W) probabilities; target: (B, H, W) integer
    labels, one-hot encoded internally. Per foreground class the soft Dice
    (2*sum(p*t) + eps) / (sum(p) + sum(t) + eps) is aggregated over batch and
    space; the loss is 1 minus the mean over the K foreground classes, in
    [0, 1]. The eps smoothing makes empty-prediction/empty-target classes
    score ~1 instead of being undefined.
    """
    if pred_probs.ndim != 4:
        raise ValueError(f"expected (B, C, H, W) probabilities, got {tuple(pred_probs.shape)}")
    if target.shape != (pred_probs.shape[0], pred_probs.shape[2], pred_probs.shape[3]):
        raise ValueError(
            f"target shape {tuple(target.shape)} does not match predictions {tuple(pred_probs.shape)}"
        )
    num_classes = pred_probs.shape[1]
    onehot = torch.nn.functional.one_hot(target.long(), num_classes)
    onehot = onehot.permute(0, 3, 1, 2).to(pred_probs.dtype)
    p = pred_probs[:, 1:]  # background excluded from the Dice average
    t = onehot[:, 1:]
    intersection = (p * t).sum(dim=(0, 2, 3))
    denom = p.sum(dim=(0, 2, 3)) + t.sum(dim=(0, 2, 3))
    dice = (2.0 * intersection + eps) / (denom + eps)
    return 1.0 - dice.mean()


def seg_training_loss(
    x: torch.Tensor,
    m_x: torch.Tensor,
    nets: TranslationNets,
    bank: KernelBank,
    head: SegmentationHead,
    normalize_over_kernels: bool = True,
    kernel_grad: bool = True,
) -> torch.Tensor:
    """Translate-then-segment objective on source images and source labels.

    Composes the exact training path: encode the source image, generate a
    fake target-domain image, re-encode it with the target encoder, convert
    the unit-normalized features into kernel activations, segment, and score
    with the Dice loss against the source mask. Target-domain labels never
    enter this loss. With kernel_grad False the kernel bank is treated as a
    constant for this term.
    """
    fake_y = nets.g_y(nets.e_x(x))
    z = normalize_features(nets.e_y(fake_y))
    comp = activations(bank, z, normalize_over_kernels=normalize_over_kernels,
                       detach_kernels=not kernel_grad)
    return dice_loss(head(comp), m_x)
