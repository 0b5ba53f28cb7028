"""Finite-difference verification of every training objective's gradients.

Tiny float64 networks (4 feature channels, 8x8 images, 3 kernels) keep the
central-difference sweeps fast; the comparison criterion is relative error
<= 1e-4 per sampled coordinate.
"""

import numpy as np
import pytest
import torch

from compseg.segmentation import dice_loss, seg_training_loss
from compseg.translation import cycle_loss, disc_loss, gen_loss
from compseg.vmf import cluster_loss

from .gradcheck import assert_gradients_match
from .helpers import (
    jitter_parameters,
    random_unit_features,
    tiny_float64_bank,
    tiny_float64_head,
    tiny_float64_nets,
)


def _rand_images(shape, seed):
    rng = np.random.default_rng(seed)
    return torch.from_numpy(rng.uniform(-1, 1, size=shape))


class TestCycleLossGradients:
    def test_all_encoder_generator_parameters(self):
        nets = tiny_float64_nets(seed=0)
        jitter_parameters([nets.e_x, nets.e_y, nets.g_x, nets.g_y], seed=100)
        x = _rand_images((2, 1, 8, 8), seed=1)
        y = _rand_images((2, 1, 8, 8), seed=2)
        params = [p for net in (nets.e_x, nets.e_y, nets.g_x, nets.g_y)
                  for p in net.parameters()]

        assert_gradients_match(lambda: cycle_loss(x, y, nets), params, n_coords=6, h=1e-6)


class TestAdversarialGradients:
    def test_gen_loss_through_translation_path(self):
        nets = tiny_float64_nets(seed=3)
        jitter_parameters([nets.e_y, nets.g_x, nets.d_x], seed=101)
        y = _rand_images((2, 1, 8, 8), seed=4)
        params = [p for net in (nets.e_y, nets.g_x, nets.d_x) for p in net.parameters()]

        def loss():
            return gen_loss(nets.d_x(nets.g_x(nets.e_y(y))))

        assert_gradients_match(loss, params, n_coords=6, h=1e-6)

    def test_disc_loss_wrt_discriminator(self):
        nets = tiny_float64_nets(seed=5)
        jitter_parameters([nets.d_x], seed=102)
        real = _rand_images((2, 1, 8, 8), seed=6)
        fake = _rand_images((2, 1, 8, 8), seed=7)  # detached by construction

        def loss():
            return disc_loss(nets.d_x(real), nets.d_x(fake))

        assert_gradients_match(loss, list(nets.d_x.parameters()), n_coords=10, h=1e-6)


class TestClusterLossGradients:
    def test_wrt_kernels_and_features(self):
        bank = tiny_float64_bank(num_kernels=3, feature_channels=4, sigma=30.0)
        z = random_unit_features((1, 4, 4, 4), seed=8).requires_grad_(True)
        # unique argmax per position: random unit vectors have distinct
        # cosines with margin far above the finite-difference step
        dots = torch.einsum("jc,bchw->bjhw", bank.mu.detach(), z.detach())
        top2 = dots.topk(2, dim=1).values
        assert float((top2[:, 0] - top2[:, 1]).min()) > 1e-3

        assert_gradients_match(lambda: cluster_loss(bank, z), [bank.mu, z],
                               n_coords=30, h=1e-6)


class TestDiceLossGradients:
    def test_wrt_probabilities(self):
        rng = np.random.default_rng(9)
        raw = torch.from_numpy(rng.uniform(0.05, 1.0, size=(1, 3, 6, 6)))
        probs = (raw / raw.sum(dim=1, keepdim=True)).requires_grad_(True)
        target = torch.from_numpy(rng.integers(0, 3, size=(1, 6, 6)))

        assert_gradients_match(lambda: dice_loss(probs, target), [probs],
                               n_coords=40, h=1e-6)


class TestSegPathGradients:
    def test_translate_then_segment_wrt_all_components(self):
        nets = tiny_float64_nets(seed=10)
        bank = tiny_float64_bank(num_kernels=3, feature_channels=4, sigma=5.0)
        head = tiny_float64_head(num_kernels=3, num_classes=2)
        jitter_parameters([nets.e_x, nets.g_y, nets.e_y, head], seed=103)
        x = _rand_images((1, 1, 8, 8), seed=11)
        rng = np.random.default_rng(12)
        m_x = torch.from_numpy(rng.integers(0, 3, size=(1, 8, 8)))
        params = ([p for net in (nets.e_x, nets.g_y, nets.e_y) for p in net.parameters()]
                  + [bank.mu] + list(head.parameters()))

        def loss():
            return seg_training_loss(x, m_x, nets, bank, head)

        assert_gradients_match(loss, params, n_coords=5, h=1e-5)


class TestJointObjectiveGradients:
    def test_weighted_sum_matches_finite_differences(self):
        # the full generator-side objective as optimized in a training step
        nets = tiny_float64_nets(seed=13)
        bank = tiny_float64_bank(num_kernels=3, feature_channels=4, sigma=5.0)
        head = tiny_float64_head(num_kernels=3, num_classes=2)
        jitter_parameters([nets.e_x, nets.e_y, nets.g_x, nets.g_y, nets.d_x, nets.d_y, head],
                          seed=104)
        x = _rand_images((1, 1, 8, 8), seed=14)
        y = _rand_images((1, 1, 8, 8), seed=15)
        rng = np.random.default_rng(16)
        m_x = torch.from_numpy(rng.integers(0, 3, size=(1, 8, 8)))

        from compseg.vmf import normalize_features

        def loss():
            l_cyc = cycle_loss(x, y, nets)
            l_gx = gen_loss(nets.d_x(nets.g_x(nets.e_y(y))))
            l_gy = gen_loss(nets.d_y(nets.g_y(nets.e_x(x))))
            l_vmf = cluster_loss(bank, normalize_features(nets.e_y(y)))
            l_seg = seg_training_loss(x, m_x, nets, bank, head)
            return 10.0 * l_cyc + (l_gx + l_gy) + l_vmf + 5.0 * l_seg

        params = ([p for net in (nets.e_x, nets.e_y, nets.g_x, nets.g_y) for p in net.parameters()]
                  + [bank.mu] + list(head.parameters()))
        # the loss magnitude (~30) raises the FD cancellation-noise floor on
        # dead coordinates; the relative criterion is unchanged
        assert_gradients_match(loss, params, n_coords=4, h=1e-5, atol=1e-7)
