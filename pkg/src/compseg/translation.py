"""Domain-specific encoders, generators, discriminators, and translation losses.

The encoders downsample by a fixed factor of 4 (two strided blocks), so a
H x W image maps to feature grids of C_z x H/4 x W/4. Generators mirror the
encoders with two nearest-neighbor upsampling stages and a tanh output, so
generated images land in [-1, 1]. Discriminators are strided patch
discriminators producing a least-squares score map; the adversarial losses
average over the map, which estimates the expectations in the objectives.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import torch
import torch.nn as nn

DOWNSAMPLE_FACTOR = 4


def _init_weights(module: nn.Module) -> None:
    # Xavier initialization for every learnable layer.
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            nn.init.xavier_uniform_(m.weight)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1, padding_mode="reflect"),
            nn.InstanceNorm2d(channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1, padding_mode="reflect"),
            nn.InstanceNorm2d(channels),
        )

    def forward(self, x):
        return x + self.block(x)


class Encoder(nn.Module):
    """Image -> C_z x H/4 x W/4 feature grid."""

    def __init__(
        self,
        image_size: int,
        in_channels: int = 1,
        base_channels: int = 32,
        feature_channels: int = 64,
        n_res_blocks: int = 4,
    ):
        super().__init__()
        if image_size % DOWNSAMPLE_FACTOR != 0:
            raise ValueError(f"image_size must be divisible by {DOWNSAMPLE_FACTOR}, got {image_size}")
        self.image_size = image_size
        self.in_channels = in_channels
        self.feature_channels = feature_channels
        self.layers = nn.Sequential(
            nn.Conv2d(in_channels, base_channels, 7, padding=3, padding_mode="reflect"),
            nn.InstanceNorm2d(base_channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(base_channels, 2 * base_channels, 3, stride=2, padding=1),
            nn.InstanceNorm2d(2 * base_channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(2 * base_channels, feature_channels, 3, stride=2, padding=1),
            nn.InstanceNorm2d(feature_channels),
            nn.ReLU(inplace=True),
            *[ResidualBlock(feature_channels) for _ in range(n_res_blocks)],
        )
        _init_weights(self)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValueError(f"expected (B, {self.in_channels}, H, W) input, got {tuple(x.shape)}")
        if x.shape[2] != self.image_size or x.shape[3] != self.image_size:
            raise ValueError(
                f"encoder configured for {self.image_size}x{self.image_size} images, "
                f"got {x.shape[2]}x{x.shape[3]}"
            )
        return self.layers(x)


class Generator(nn.Module):
    """C_z x H/4 x W/4 feature grid -> image in [-1, 1] at H x W."""

    def __init__(
        self,
        image_size: int,
        out_channels: int = 1,
        base_channels: int = 32,
        feature_channels: int = 64,
        n_res_blocks: int = 4,
    ):
        super().__init__()
        self.feature_size = image_size // DOWNSAMPLE_FACTOR
        self.feature_channels = feature_channels
        self.layers = nn.Sequential(
            *[ResidualBlock(feature_channels) for _ in range(n_res_blocks)],
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(feature_channels, 2 * base_channels, 3, padding=1, padding_mode="reflect"),
            nn.InstanceNorm2d(2 * base_channels),
            nn.ReLU(inplace=True),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(2 * base_channels, base_channels, 3, padding=1, padding_mode="reflect"),
            nn.InstanceNorm2d(base_channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(base_channels, out_channels, 7, padding=3, padding_mode="reflect"),
            nn.Tanh(),
        )
        _init_weights(self)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.ndim != 4 or z.shape[1] != self.feature_channels:
            raise ValueError(f"expected (B, {self.feature_channels}, h, w) features, got {tuple(z.shape)}")
        if z.shape[2] != self.feature_size or z.shape[3] != self.feature_size:
            raise ValueError(
                f"generator configured for {self.feature_size}x{self.feature_size} features, "
                f"got {z.shape[2]}x{z.shape[3]}"
            )
        return self.layers(z)


class PatchDiscriminator(nn.Module):
    """Strided patch discriminator; returns a real-valued score map.

    n_strided stride-2 conv blocks (first without normalization) followed by
    a stride-1 scoring conv; inputs must keep at least 2x2 spatial extent
    after the strided blocks.
    """

    def __init__(self, in_channels: int = 1, base_channels: int = 32, n_strided: int = 3):
        super().__init__()
        c = base_channels
        layers: list[nn.Module] = [
            nn.Conv2d(in_channels, c, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
        ]
        for _ in range(n_strided - 1):
            layers += [
                nn.Conv2d(c, 2 * c, 4, stride=2, padding=1),
                nn.InstanceNorm2d(2 * c),
                nn.LeakyReLU(0.2, inplace=True),
            ]
            c *= 2
        layers.append(nn.Conv2d(c, 1, 4, stride=1, padding=1))
        self.layers = nn.Sequential(*layers)
        _init_weights(self)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.layers(x)


@dataclass
class TranslationNets:
    """The six translation networks: per-domain encoder, generator, discriminator."""

    e_x: nn.Module
    e_y: nn.Module
    g_x: nn.Module
    g_y: nn.Module
    d_x: nn.Module
    d_y: nn.Module

    def modules(self) -> dict[str, nn.Module]:
        return {"e_x": self.e_x, "e_y": self.e_y, "g_x": self.g_x, "g_y": self.g_y,
                "d_x": self.d_x, "d_y": self.d_y}

    def generator_side_parameters(self) -> Iterator[nn.Parameter]:
        for net in (self.e_x, self.e_y, self.g_x, self.g_y):
            yield from net.parameters()

    def discriminator_parameters(self) -> Iterator[nn.Parameter]:
        for net in (self.d_x, self.d_y):
            yield from net.parameters()


def build_translation_nets(
    image_size: int,
    base_channels: int = 32,
    feature_channels: int = 64,
    n_res_blocks: int = 4,
    disc_base_channels: int = 32,
) -> TranslationNets:
    def enc():
        return Encoder(image_size, 1, base_channels, feature_channels, n_res_blocks)

    def gen():
        return Generator(image_size, 1, base_channels, feature_channels, n_res_blocks)

    return TranslationNets(
        e_x=enc(), e_y=enc(), g_x=gen(), g_y=gen(),
        d_x=PatchDiscriminator(1, disc_base_channels),
        d_y=PatchDiscriminator(1, disc_base_channels),
    )


# ---------------------------------------------------------------------------
# Losses


def cycle_loss(x: torch.Tensor, y: torch.Tensor, nets: TranslationNets) -> torch.Tensor:
    """Cross-cycle consistency: mean L1 of double translation, both directions.

    x-direction: G_x(E_y(G_y(E_x(x)))) vs x; y-direction symmetric. Returns
    the sum of the two direction terms (each a mean absolute error).
    """
    rec_x = nets.g_x(nets.e_y(nets.g_y(nets.e_x(x))))
    rec_y = nets.g_y(nets.e_x(nets.g_x(nets.e_y(y))))
    return cycle_direction_loss(rec_x, x) + cycle_direction_loss(rec_y, y)


def cycle_direction_loss(reconstruction: torch.Tensor, original: torch.Tensor) -> torch.Tensor:
    if reconstruction.shape != original.shape:
        raise ValueError(f"shape mismatch: {tuple(reconstruction.shape)} vs {tuple(original.shape)}")
    return (reconstruction - original).abs().mean()


def gen_loss(fake_scores: torch.Tensor) -> torch.Tensor:
    """Least-squares generator objective: 0.5 * mean((score - 1)^2)."""
    return 0.5 * ((fake_scores - 1.0) ** 2).mean()


def disc_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    """Least-squares discriminator objective.

    0.5 * mean((real - 1)^2) + 0.5 * mean(fake^2); fake images must be
    detached from generator gradients before scoring.
    """
    return 0.5 * ((real_scores - 1.0) ** 2).mean() + 0.5 * (fake_scores**2).mean()


def set_requires_grad(nets: list[nn.Module], flag: bool) -> None:
    for net in nets:
        for p in net.parameters():
            p.requires_grad_(flag)
