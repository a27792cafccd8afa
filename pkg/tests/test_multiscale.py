import math

import numpy as np
import pytest
import torch

from conftest import tiny_discriminator_spec
from urdehaze import losses
from urdehaze.discriminator import SppDiscriminator, discriminate
from urdehaze.generator import NoiseSource, init_parameters, reconstruct_from_haze_map
from urdehaze.multiscale import (
    MultiScaleGenerator,
    build_multiscale_generator,
    build_pyramid,
    init_select_scale,
    init_uniform_fusion,
    multiscale_loss,
    multiscale_specs,
)


def rand_image(rng, h, w, dtype=torch.float32):
    return torch.from_numpy(rng.uniform(-1, 1, (1, 3, h, w))).to(dtype)


def tiny_msg(seed=0, dtype=torch.float32):
    model = build_multiscale_generator(channel_scale=1 / 16, seed=seed)
    return model.to(dtype)


def tiny_discriminators(seed0=10, dtype=torch.float32):
    ds = []
    for j in range(4):
        d = init_parameters(SppDiscriminator(tiny_discriminator_spec()), seed0 + j)
        ds.append(d.to(dtype))
    return ds


class TestPyramid:
    def test_exact_halving(self):
        pyr = build_pyramid(torch.zeros(1, 3, 256, 256))
        assert pyr.haze2.shape[-2:] == (128, 128)
        assert pyr.haze3.shape[-2:] == (64, 64)

    def test_ceil_halving_odd(self):
        pyr = build_pyramid(torch.zeros(1, 3, 363, 517))
        assert pyr.haze2.shape[-2:] == (182, 259)
        assert pyr.haze3.shape[-2:] == (91, 130)

    def test_constant_preserved(self):
        pyr = build_pyramid(torch.full((1, 3, 41, 37), 0.625))
        for level in (pyr.haze2, pyr.haze3):
            np.testing.assert_allclose(level.numpy(), 0.625, atol=1e-6)

    def test_undersized_rejected(self):
        with pytest.raises(ValueError, match="too small"):
            build_pyramid(torch.zeros(1, 3, 3, 64))


class TestForward:
    def test_scale_depths_and_star_enforced(self):
        specs = multiscale_specs(1 / 16)
        assert tuple(s.depth_k for s in specs) == (7, 6, 5)
        assert all(s.star for s in specs)
        bad = multiscale_specs(1 / 16)
        bad[0].star = False
        with pytest.raises(ValueError, match="star"):
            MultiScaleGenerator(bad)

    def test_output_shapes_non_multiple_of_four(self):
        model = tiny_msg()
        rng = np.random.default_rng(0)
        for h, w in [(130, 131), (97, 141)]:
            outs = model(build_pyramid(rand_image(rng, h, w)), NoiseSource(0))
            assert outs.hf_fusion.shape[-2:] == (h, w)
            assert outs.m_fusion.shape[-2:] == (h, w)
            assert outs.hf1.shape[-2:] == (h, w)
            assert outs.hf2.shape[-2:] == (math.ceil(h / 2), math.ceil(w / 2))
            assert outs.hf3.shape[-2:] == (math.ceil(h / 4), math.ceil(w / 4))

    def test_zeroed_output_convs_give_zero_images(self):
        model = tiny_msg()
        with torch.no_grad():
            for gen in model.generators:
                gen.out_deconv.weight.zero_()
                gen.out_deconv.bias.zero_()
        outs = model(build_pyramid(rand_image(np.random.default_rng(1), 64, 64)), NoiseSource(0))
        for hf in (outs.hf1, outs.hf2, outs.hf3):
            assert torch.equal(hf, torch.zeros_like(hf))

    def test_uniform_fusion_averages_maps(self):
        model = tiny_msg()
        init_uniform_fusion(model.fusion)
        rng = np.random.default_rng(2)
        x = rand_image(rng, 96, 80)
        outs = model(build_pyramid(x), NoiseSource(3))
        from urdehaze.multiscale import bicubic_resize

        expect = (
            outs.m1 + bicubic_resize(outs.m2, (96, 80)) + bicubic_resize(outs.m3, (96, 80))
        ) / 3.0
        np.testing.assert_allclose(outs.m_fusion.detach(), expect.detach(), atol=1e-6)

    def test_one_hot_fusion_reproduces_single_scale_reconstruction(self):
        model = tiny_msg()
        init_select_scale(model.fusion, 0)
        rng = np.random.default_rng(3)
        x = rand_image(rng, 72, 88)
        outs = model(build_pyramid(x), NoiseSource(4))
        recon, j_g = reconstruct_from_haze_map(x, outs.scales[0].i_r, outs.m1)
        assert torch.equal(outs.hf_fusion, recon)
        assert torch.equal(outs.j_g_fusion, j_g)

    def test_forward_deterministic(self):
        model = tiny_msg()
        x = rand_image(np.random.default_rng(4), 64, 64)
        a = model(build_pyramid(x), NoiseSource(9))
        b = model(build_pyramid(x), NoiseSource(9))
        assert torch.equal(a.hf_fusion, b.hf_fusion)


class TestMultiscaleLoss:
    def test_composition_equals_four_single_scale_objectives(self):
        torch.manual_seed(0)
        model = tiny_msg(dtype=torch.float64)
        discs = tiny_discriminators(dtype=torch.float64)
        weights = losses.LossWeights()
        rng = np.random.default_rng(5)
        haze = rand_image(rng, 128, 128, torch.float64)
        clear = rand_image(rng, 128, 128, torch.float64)
        haze_pyr, clear_pyr = build_pyramid(haze), build_pyramid(clear)
        outs = model(haze_pyr, NoiseSource(7))
        wd = sum(p.pow(2).sum() for p in model.parameters())

        g_total, d_total, parts = multiscale_loss(
            outs, haze_pyr, clear_pyr, discs, weights, weight_decay=wd
        )

        # independent recomposition from the single-scale pieces
        triples = [
            (haze_pyr.haze1, clear_pyr.haze1, outs.hf1, outs.scales[0].i_r, outs.scales[0].j_g),
            (haze_pyr.haze2, clear_pyr.haze2, outs.hf2, outs.scales[1].i_r, outs.scales[1].j_g),
            (haze_pyr.haze3, clear_pyr.haze3, outs.hf3, outs.scales[2].i_r, outs.scales[2].j_g),
            (haze_pyr.haze1, clear_pyr.haze1, outs.hf_fusion, outs.scales[0].i_r, outs.j_g_fusion),
        ]
        expected = 0.0
        expected_d = 0.0
        for k, (hz, cl, out, i_r, j_g) in enumerate(triples):
            out, i_r, j_g = out.detach(), i_r.detach(), j_g.detach()
            with torch.no_grad():
                p_fake = discriminate(discs[k], hz, out)
                p_real = discriminate(discs[k], hz, cl)
            term = (
                float(losses.consistency_loss(hz, out, i_r, j_g))
                + weights.lambda1 * float(losses.generator_adversarial_loss(p_fake))
                + weights.lambda2 * float(losses.l1_loss(cl, out))
                + weights.lambda3 * float(losses.ssim_loss(cl, out))
                + weights.lambda4 * float(losses.psnr_loss(cl, out, weights.thresh))
            )
            if k == 0:
                term += weights.lambda_wd * float(wd.detach())
            expected += term
            expected_d += float(losses.discriminator_adversarial_loss(p_real, p_fake))

        assert float(g_total.detach()) == pytest.approx(expected, abs=1e-6)
        assert float(d_total.detach()) == pytest.approx(expected_d, abs=1e-6)
        assert len(parts) == 4
        assert parts[0].weight_decay > 0 and parts[1].weight_decay == 0

    def test_fusion_triple_consistency_is_zero(self):
        # hf_fusion is built through the very identity the consistency
        # loss measures, so its term vanishes
        model = tiny_msg(dtype=torch.float64)
        rng = np.random.default_rng(6)
        haze = rand_image(rng, 64, 64, torch.float64)
        pyr = build_pyramid(haze)
        outs = model(pyr, NoiseSource(1))
        val = float(
            losses.consistency_loss(
                haze, outs.hf_fusion, outs.scales[0].i_r, outs.j_g_fusion
            ).detach()
        )
        assert val < 1e-12

    def test_wrong_discriminator_count(self):
        model = tiny_msg()
        rng = np.random.default_rng(7)
        haze = rand_image(rng, 64, 64)
        pyr = build_pyramid(haze)
        outs = model(pyr, NoiseSource(0))
        with pytest.raises(ValueError, match="4 discriminators"):
            multiscale_loss(outs, pyr, pyr, [None] * 3, losses.LossWeights())


class TestNonSharing:
    def test_discriminators_have_disjoint_parameters(self):
        discs = tiny_discriminators()
        ids = [set(id(p) for p in d.parameters()) for d in discs]
        for i in range(4):
            for j in range(i + 1, 4):
                assert not (ids[i] & ids[j])

    def test_mutating_one_leaves_others_unchanged(self):
        discs = tiny_discriminators()
        rng = np.random.default_rng(8)
        cond, cand = rand_image(rng, 48, 48), rand_image(rng, 48, 48)
        with torch.no_grad():
            before = [float(d(cond, cand)) for d in discs]
            for p in discs[1].parameters():
                p.add_(1.0)
            after = [float(d(cond, cand)) for d in discs]
        assert after[0] == before[0]
        assert after[2] == before[2]
        assert after[3] == before[3]
        assert after[1] != before[1]
