import math

import pytest
import torch
import torch.nn as nn
from pydantic import ValidationError

from training.Losses import (
    LOG_FLOOR, AdversarialConvention, LossWeights, VGGFeatureExtractor, attention_l1,
    build_feature_extractor, d_adversarial, d_mask_loss, discriminator_mask_objective,
    discriminator_objective, g_adversarial_entire, g_mask_loss, generator_mask_objective,
    generator_objective, generator_total, l1_content, perceptual, plain_gan_losses,
)
from utils.exceptions import ConfigurationError, TrainingDivergenceError

LN_HALF = 2.0 * math.log(0.5)


def _sig(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def _gradcheck(fn, *inputs):
    assert torch.autograd.gradcheck(fn, inputs, eps=1e-4, atol=1e-8, rtol=1e-3)


class TestContentLosses:
    def test_identical_images(self):
        x = torch.rand(2, 3, 8, 8)
        assert float(l1_content(x, x)) == 0.0

    def test_constant_offset(self):
        hr = torch.rand(2, 3, 8, 8, dtype=torch.float64)
        assert float(l1_content(hr + 0.1, hr)) == pytest.approx(0.1, abs=1e-12)

    def test_hand_summed_mean(self):
        sr = torch.tensor([[[[0.1, 0.7], [0.4, 0.2]]]], dtype=torch.float64)
        hr = torch.tensor([[[[0.3, 0.5], [0.4, 0.9]]]], dtype=torch.float64)
        assert float(l1_content(sr, hr)) == pytest.approx((0.2 + 0.2 + 0.0 + 0.7) / 4, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ConfigurationError):
            l1_content(torch.rand(1, 3, 4, 4), torch.rand(1, 3, 4, 5))


class TestAttention:
    def test_zero_mask_reduces_to_l1(self):
        gerador = torch.Generator().manual_seed(0)
        for _ in range(20):
            sr = torch.rand(2, 3, 6, 6, generator=gerador, dtype=torch.float64)
            hr = torch.rand(2, 3, 6, 6, generator=gerador, dtype=torch.float64)
            valor = attention_l1(sr, hr, torch.zeros_like(sr))
            assert abs(float(valor) - float(l1_content(sr, hr))) <= 1e-12

    def test_unit_mask_nullifies(self):
        sr, hr = torch.rand(1, 3, 4, 4), torch.rand(1, 3, 4, 4)
        assert float(attention_l1(sr, hr, torch.ones_like(sr))) == 0.0

    def test_half_mask_is_half_l1(self):
        sr = torch.rand(1, 3, 4, 4, dtype=torch.float64)
        hr = torch.rand(1, 3, 4, 4, dtype=torch.float64)
        valor = attention_l1(sr, hr, torch.full_like(sr, 0.5))
        assert float(valor) == pytest.approx(0.5 * float(l1_content(sr, hr)), abs=1e-12)

    def test_monotone_in_mask(self):
        gerador = torch.Generator().manual_seed(1)
        sr = torch.rand(2, 3, 5, 5, generator=gerador)
        hr = torch.rand(2, 3, 5, 5, generator=gerador)
        mask = torch.rand(2, 3, 5, 5, generator=gerador) * 0.5
        for _ in range(10):
            maior = (mask + torch.rand(mask.shape, generator=gerador) * 0.5).clamp(max=1.0)
            assert float(attention_l1(sr, hr, maior)) <= float(attention_l1(sr, hr, mask)) + 1e-7
            mask = maior

    def test_mask_receives_no_gradient(self):
        sr = torch.rand(1, 3, 4, 4, requires_grad=True)
        mask = torch.rand(1, 3, 4, 4, requires_grad=True)
        attention_l1(sr, torch.rand(1, 3, 4, 4), mask).backward()
        assert mask.grad is None
        assert sr.grad is not None

    def test_single_channel_mask_is_broadcast(self):
        sr = torch.rand(2, 3, 4, 4, dtype=torch.float64)
        hr = torch.rand(2, 3, 4, 4, dtype=torch.float64)
        mask = torch.rand(2, 1, 4, 4, dtype=torch.float64)
        esperado = attention_l1(sr, hr, mask.expand(-1, 3, -1, -1).clone())
        assert float(attention_l1(sr, hr, mask)) == pytest.approx(float(esperado), abs=1e-12)

    def test_mask_shape_mismatch(self):
        with pytest.raises(ConfigurationError):
            attention_l1(torch.rand(1, 3, 4, 4), torch.rand(1, 3, 4, 4), torch.rand(1, 3, 4, 5))


class TestPerceptual:
    def test_identical_images(self):
        phi = nn.Conv2d(3, 4, 3, padding=1)
        x = torch.rand(1, 3, 8, 8)
        assert float(perceptual(x, x, phi)) == 0.0

    def test_identity_stub_equals_l1(self):
        sr, hr = torch.rand(1, 3, 8, 8), torch.rand(1, 3, 8, 8)
        assert float(perceptual(sr, hr, build_feature_extractor("identity"))) == float(l1_content(sr, hr))

    def test_tiny_random_phi_composition(self):
        torch.manual_seed(0)
        phi = nn.Sequential(nn.Conv2d(3, 4, 3, padding=1), nn.ReLU())
        sr, hr = torch.rand(2, 3, 8, 8), torch.rand(2, 3, 8, 8)
        esperado = (phi(sr) - phi(hr)).abs().mean()
        assert float(perceptual(sr, hr, phi)) == pytest.approx(float(esperado), rel=1e-6)

    def test_extractor_selection(self):
        assert build_feature_extractor("none") is None
        assert isinstance(build_feature_extractor("identity"), nn.Identity)
        with pytest.raises(ConfigurationError):
            build_feature_extractor("alexnet")

    def test_vgg_extractor_is_frozen(self):
        phi = VGGFeatureExtractor(pretrained=False)
        assert all(not p.requires_grad for p in phi.parameters())
        phi.train()
        assert not phi.training
        x = torch.rand(1, 1, 32, 32)
        out = phi(x)
        assert out.shape[1] == 512
        assert torch.equal(out, phi(x))


class TestRelativisticLosses:
    def test_equal_logits(self):
        c = torch.randn(5, dtype=torch.float64)
        assert float(d_adversarial(c, c.clone())) == pytest.approx(LN_HALF, abs=1e-9)
        assert float(g_adversarial_entire(c, c.clone())) == pytest.approx(LN_HALF, abs=1e-9)

    def test_perfect_discrimination_drives_loss_down(self):
        valores = [float(d_adversarial(torch.tensor([s]), torch.tensor([-s]))) for s in (0.0, 2.0, 5.0, 10.0)]
        assert all(a > b for a, b in zip(valores, valores[1:]))
        assert math.isfinite(float(d_adversarial(torch.tensor([1e4]), torch.tensor([-1e4]))))

    def test_scalar_formula(self):
        c_r = torch.tensor([0.3, -1.2, 2.0], dtype=torch.float64)
        c_f = torch.tensor([-0.5, 0.8, 0.1], dtype=torch.float64)
        mr, mf = sum(c_r.tolist()) / 3, sum(c_f.tolist()) / 3
        d = sum(math.log(1 - _sig(r - mf)) for r in c_r.tolist()) / 3 \
            + sum(math.log(_sig(f - mr)) for f in c_f.tolist()) / 3
        g = sum(math.log(_sig(r - mf)) for r in c_r.tolist()) / 3 \
            + sum(math.log(1 - _sig(f - mr)) for f in c_f.tolist()) / 3
        assert float(d_adversarial(c_r, c_f)) == pytest.approx(d, rel=1e-10)
        assert float(g_adversarial_entire(c_r, c_f)) == pytest.approx(g, rel=1e-10)

    def test_swap_symmetry_is_exact(self):
        gerador = torch.Generator().manual_seed(7)
        for _ in range(1000):
            n_r, n_f = (int(v) for v in torch.randint(1, 9, (2,), generator=gerador))
            escala = float(torch.rand(1, generator=gerador)) * 20.0
            a = torch.randn(n_r, generator=gerador) * escala
            b = torch.randn(n_f, generator=gerador) * escala
            assert torch.equal(d_adversarial(a, b), g_adversarial_entire(b, a))

    def test_empty_batches(self):
        with pytest.raises(ConfigurationError):
            d_adversarial(torch.empty(0), torch.zeros(3))
        with pytest.raises(ConfigurationError):
            g_adversarial_entire(torch.zeros(3), torch.empty(0))


class TestMaskLosses:
    def test_uniform_half_maps(self):
        m = torch.full((2, 3, 4, 4), 0.5, dtype=torch.float64)
        assert float(d_mask_loss(m, m)) == pytest.approx(LN_HALF, abs=1e-9)
        assert float(g_mask_loss(m, m)) == pytest.approx(LN_HALF, abs=1e-9)

    def test_monotone_decrease_towards_separation(self):
        valores = []
        for t in torch.linspace(0.5, 0.999, 10):
            m_r = torch.full((1, 3, 2, 2), float(t))
            m_f = 1.0 - m_r
            valores.append(float(d_mask_loss(m_r, m_f)))
        assert all(a > b for a, b in zip(valores, valores[1:]))

    def test_hand_summed_mean(self):
        gerador = torch.Generator().manual_seed(3)
        m_r = torch.rand(1, 3, 2, 2, generator=gerador, dtype=torch.float64) * 0.9 + 0.05
        m_f = torch.rand(1, 3, 2, 2, generator=gerador, dtype=torch.float64) * 0.9 + 0.05
        d = sum(math.log(1 - r) + math.log(f) for r, f in zip(m_r.flatten().tolist(), m_f.flatten().tolist())) / 12
        g = sum(math.log(r) + math.log(1 - f) for r, f in zip(m_r.flatten().tolist(), m_f.flatten().tolist())) / 12
        assert float(d_mask_loss(m_r, m_f)) == pytest.approx(d, rel=1e-10)
        assert float(g_mask_loss(m_r, m_f)) == pytest.approx(g, rel=1e-10)

    def test_swap_symmetry_is_exact(self):
        gerador = torch.Generator().manual_seed(11)
        for _ in range(1000):
            forma = tuple(int(v) for v in torch.randint(1, 5, (4,), generator=gerador))
            a = torch.rand(forma, generator=gerador)
            b = torch.rand(forma, generator=gerador)
            assert torch.equal(d_mask_loss(a, b), g_mask_loss(b, a))

    def test_saturated_maps_stay_finite(self):
        zeros, ones = torch.zeros(1, 3, 2, 2), torch.ones(1, 3, 2, 2)
        for a, b in ((zeros, ones), (ones, zeros), (ones, ones), (zeros, zeros)):
            for fn in (d_mask_loss, g_mask_loss):
                valor = float(fn(a, b))
                assert math.isfinite(valor)
                assert valor >= 2 * math.log(LOG_FLOOR) - 1e-3

    def test_shape_mismatch(self):
        with pytest.raises(ConfigurationError):
            d_mask_loss(torch.rand(1, 3, 2, 2), torch.rand(1, 1, 2, 2))


class TestPlainGan:
    def test_half_probabilities(self):
        p = torch.full((4,), 0.5, dtype=torch.float64)
        loss_d, loss_g = plain_gan_losses(p, p, non_saturating=False)
        assert float(loss_d) == pytest.approx(LN_HALF, abs=1e-12)
        assert float(loss_g) == pytest.approx(math.log(0.5), abs=1e-12)
        _, loss_g_ns = plain_gan_losses(p, p, non_saturating=True)
        assert float(loss_g_ns) == pytest.approx(-math.log(0.5), abs=1e-12)

    def test_separation_drives_discriminator_loss_down(self):
        valores = []
        for t in (0.5, 0.7, 0.9, 0.99):
            loss_d, _ = plain_gan_losses(torch.tensor([t]), torch.tensor([1.0 - t]))
            valores.append(float(loss_d))
        assert all(a > b for a, b in zip(valores, valores[1:]))

    def test_scalar_formula_and_bce_convention(self):
        d_real = torch.tensor([0.8, 0.6, 0.3], dtype=torch.float64)
        d_fake = torch.tensor([0.2, 0.45, 0.9], dtype=torch.float64)
        impresso = sum(math.log(1 - r) for r in d_real.tolist()) / 3 + sum(math.log(f) for f in d_fake.tolist()) / 3
        bce = -sum(math.log(r) for r in d_real.tolist()) / 3 - sum(math.log(1 - f) for f in d_fake.tolist()) / 3
        loss_d, loss_g = plain_gan_losses(d_real, d_fake, non_saturating=False)
        assert float(loss_d) == pytest.approx(impresso, rel=1e-10)
        assert float(loss_g) == pytest.approx(sum(math.log(1 - f) for f in d_fake.tolist()) / 3, rel=1e-10)
        loss_d_bce, _ = plain_gan_losses(d_real, d_fake, convention=AdversarialConvention.BCE)
        assert float(loss_d_bce) == pytest.approx(bce, rel=1e-10)


class TestConventions:
    def test_bce_objectives_are_negated_swaps(self):
        gerador = torch.Generator().manual_seed(5)
        c_r, c_f = torch.randn(4, generator=gerador), torch.randn(4, generator=gerador)
        m_r, m_f = torch.rand(1, 3, 2, 2, generator=gerador), torch.rand(1, 3, 2, 2, generator=gerador)
        bce = AdversarialConvention.BCE
        assert torch.equal(discriminator_objective(c_r, c_f, bce), -g_adversarial_entire(c_r, c_f))
        assert torch.equal(generator_objective(c_r, c_f, bce), -d_adversarial(c_r, c_f))
        assert torch.equal(discriminator_mask_objective(m_r, m_f, bce), -g_mask_loss(m_r, m_f))
        assert torch.equal(generator_mask_objective(m_r, m_f, bce), -d_mask_loss(m_r, m_f))

    def test_printed_objectives_are_the_raw_losses(self):
        c_r, c_f = torch.randn(4), torch.randn(4)
        assert torch.equal(discriminator_objective(c_r, c_f, "printed"), d_adversarial(c_r, c_f))
        assert torch.equal(generator_objective(c_r, c_f, "printed"), g_adversarial_entire(c_r, c_f))


class TestGradients:
    def test_every_loss_matches_finite_differences(self):
        gerador = torch.Generator().manual_seed(9)
        for _ in range(20):
            def imagem():
                return (torch.rand(1, 1, 2, 2, generator=gerador, dtype=torch.float64) * 0.8 + 0.1) \
                    .requires_grad_(True)

            sr, hr, m_r, m_f = imagem(), imagem(), imagem(), imagem()
            c_r = torch.randn(3, generator=gerador, dtype=torch.float64).requires_grad_(True)
            c_f = torch.randn(3, generator=gerador, dtype=torch.float64).requires_grad_(True)
            mask = m_f.detach()

            _gradcheck(l1_content, sr, hr)
            _gradcheck(lambda a, b: attention_l1(a, b, mask), sr, hr)
            _gradcheck(lambda a, b: perceptual(a, b, nn.Identity()), sr, hr)
            _gradcheck(d_adversarial, c_r, c_f)
            _gradcheck(g_adversarial_entire, c_r, c_f)
            _gradcheck(d_mask_loss, m_r, m_f)
            _gradcheck(g_mask_loss, m_r, m_f)
            _gradcheck(lambda a, b: plain_gan_losses(a, b)[0], m_r, m_f)
            _gradcheck(lambda a, b: plain_gan_losses(a, b, non_saturating=False)[1], m_r, m_f)


class TestGeneratorTotal:
    def test_zero_weights_leave_l1(self):
        pesos = LossWeights(lambda1=0.0, lambda2=0.0, lambda3=0.0)
        partes = {"l1": torch.tensor(0.3), "l_adv": torch.tensor(2.0),
                  "l_attention": torch.tensor(5.0), "l_percep": torch.tensor(7.0)}
        assert float(generator_total(partes, pesos)) == pytest.approx(0.3)

    def test_additivity(self):
        pesos = LossWeights(lambda1=1.0, lambda2=1.0, lambda3=1.0)
        partes = {k: torch.tensor(1.0) for k in ("l1", "l_adv", "l_attention", "l_percep")}
        assert float(generator_total(partes, pesos)) == 4.0

    def test_entire_and_fine_terms_add_up(self):
        pesos = LossWeights(lambda1=1.0, lambda2=1.0, lambda3=1.0)
        partes = {"l1": 1.0, "l_adv_entire": 2.0, "l_adv_fine": 3.0}
        assert generator_total(partes, pesos) == 6.0

    def test_affine_combination(self):
        gerador = torch.Generator().manual_seed(2)
        for _ in range(20):
            valores = torch.rand(5, generator=gerador, dtype=torch.float64).tolist()
            l1, ent, fine, att, per = valores
            lambdas = torch.rand(3, generator=gerador, dtype=torch.float64).tolist()
            pesos = LossWeights(lambda1=lambdas[0], lambda2=lambdas[1], lambda3=lambdas[2])
            partes = {"l1": l1, "l_adv_entire": ent, "l_adv_fine": fine, "l_attention": att, "l_percep": per}
            esperado = l1 + lambdas[0] * (ent + fine) + lambdas[1] * att + lambdas[2] * per
            assert generator_total(partes, pesos) == pytest.approx(esperado, rel=1e-12)

    def test_absent_terms_are_omitted(self):
        pesos = LossWeights()
        assert generator_total({"l1": 0.25}, pesos) == 0.25

    def test_non_finite_part_raises_with_diagnostics(self):
        with pytest.raises(TrainingDivergenceError) as info:
            generator_total({"l1": torch.tensor(0.1), "l_adv": torch.tensor(float("nan"))}, LossWeights(), step=17)
        assert info.value.step == 17
        assert math.isnan(info.value.parts["l_adv"])
        assert info.value.parts["l1"] == pytest.approx(0.1)

    def test_l1_is_required(self):
        with pytest.raises(ConfigurationError):
            generator_total({"l_adv": 1.0}, LossWeights())

    def test_negative_weights_are_rejected(self):
        with pytest.raises(ValidationError):
            LossWeights(lambda1=-1.0)

    def test_default_weights(self):
        pesos = LossWeights()
        assert (pesos.lambda1, pesos.lambda2, pesos.lambda3) == (5e-3, 1.0, 1.0)
