"""Closed-form values and structural properties of the six objectives."""

import numpy as np
import pytest
import torch

from massvc import (LossWeights, ParameterError, build_model, loss_adv_d,
                    loss_adv_g, loss_cls_c, loss_cls_g, loss_cyc, loss_id,
                    total_losses)
from conftest import tiny_network_config

LN2 = float(np.log(2.0))
LN4 = float(np.log(4.0))


class ConstantDiscriminator(torch.nn.Module):
    def __init__(self, value):
        super().__init__()
        self.value = value

    def forward(self, x, labels):
        return torch.full((x.shape[0],), self.value, dtype=x.dtype)


class UniformClassifier(torch.nn.Module):
    def __init__(self, n_classes):
        super().__init__()
        self.n_classes = n_classes

    def forward(self, x):
        return torch.full((x.shape[0], self.n_classes), 1.0 / self.n_classes,
                          dtype=x.dtype)


class OneHotClassifier(torch.nn.Module):
    """Assigns probability ~1 to a fixed class."""

    def __init__(self, n_classes, hot):
        super().__init__()
        self.n_classes = n_classes
        self.hot = hot

    def forward(self, x):
        p = torch.full((x.shape[0], self.n_classes), 0.0, dtype=x.dtype)
        p[:, self.hot] = 1.0
        return p


class IdentityGenerator(torch.nn.Module):
    def forward(self, x, labels):
        return x


class ShiftGenerator(torch.nn.Module):
    def forward(self, x, labels):
        return x + 1.0


@pytest.fixture()
def stub_model():
    model = build_model(tiny_network_config(n_classes=4), seed=0)
    model.generator = ShiftGenerator()
    model.discriminator = ConstantDiscriminator(0.5)
    model.classifier = UniformClassifier(4)
    return model


@pytest.fixture()
def batch():
    rng = np.random.default_rng(1)
    mcc = rng.normal(size=(3, 40, 36))
    return mcc, np.array([0, 1, 2]), np.array([1, 2, 3])


class TestClosedForms:
    def test_adv_d_with_indifferent_discriminator(self, stub_model, batch):
        mcc, attr, target = batch
        value = float(loss_adv_d(stub_model, (mcc, attr), (mcc, target)).detach())
        assert value == pytest.approx(2 * LN2, abs=1e-6)

    def test_adv_d_perfect_discriminator_near_zero(self, stub_model, batch):
        mcc, attr, target = batch

        class Oracle(torch.nn.Module):
            def forward(self, x, labels):
                # shifted fakes have mean offset +1; reals do not
                is_fake = (x.mean(dim=(1, 2, 3)) > 0.5).to(x.dtype)
                return 1.0 - is_fake

        stub_model.discriminator = Oracle()
        stub_model.generator = ShiftGenerator()
        zero_mcc = np.zeros((3, 40, 36))
        value = float(loss_adv_d(stub_model, (zero_mcc, attr),
                                 (zero_mcc, target)).detach())
        assert 0.0 < value < 1e-5

    def test_adv_g_with_indifferent_discriminator(self, stub_model, batch):
        mcc, _, target = batch
        value = float(loss_adv_g(stub_model, (mcc, target)).detach())
        assert value == pytest.approx(LN2, abs=1e-6)

    def test_adv_g_fooled_discriminator_near_zero(self, stub_model, batch):
        mcc, _, target = batch
        stub_model.discriminator = ConstantDiscriminator(1.0)
        value = float(loss_adv_g(stub_model, (mcc, target)).detach())
        assert 0.0 < value < 1e-5

    def test_cls_c_uniform_gives_ln4(self, stub_model, batch):
        mcc, attr, _ = batch
        value = float(loss_cls_c(stub_model, (mcc, attr)).detach())
        assert value == pytest.approx(LN4, abs=1e-6)

    def test_cls_c_perfect_near_zero(self, stub_model, batch):
        mcc, _, _ = batch
        stub_model.classifier = OneHotClassifier(4, hot=2)
        value = float(loss_cls_c(stub_model, (mcc, np.array([2, 2, 2]))).detach())
        assert 0.0 < value < 1e-5

    def test_cls_g_uniform_gives_ln4(self, stub_model, batch):
        mcc, _, target = batch
        value = float(loss_cls_g(stub_model, (mcc, target)).detach())
        assert value == pytest.approx(LN4, abs=1e-6)

    def test_cyc_identity_generator_is_zero(self, stub_model, batch):
        mcc, attr, target = batch
        stub_model.generator = IdentityGenerator()
        assert float(loss_cyc(stub_model, (mcc, attr, target)).detach()) == 0.0

    def test_cyc_constant_shift_rho1(self, stub_model, batch):
        # G adds 1 per application; the round trip adds 2 to every element.
        mcc, attr, target = batch
        value = float(loss_cyc(stub_model, (mcc, attr, target)).detach())
        assert value == pytest.approx(2.0, abs=1e-6)

    def test_id_identity_generator_is_zero(self, stub_model, batch):
        mcc, attr, _ = batch
        stub_model.generator = IdentityGenerator()
        assert float(loss_id(stub_model, (mcc, attr)).detach()) == 0.0

    def test_id_constant_shift_rho1(self, stub_model, batch):
        mcc, attr, _ = batch
        assert float(loss_id(stub_model, (mcc, attr)).detach()) == \
            pytest.approx(1.0, abs=1e-6)

    def test_rho2_constant_shift(self, stub_model, batch):
        mcc, attr, target = batch
        assert float(loss_id(stub_model, (mcc, attr), rho=2).detach()) == \
            pytest.approx(1.0, abs=1e-6)
        assert float(loss_cyc(stub_model, (mcc, attr, target), rho=2).detach()) == \
            pytest.approx(2.0, abs=1e-6)


class TestTotalLosses:
    def test_weight_selection(self, stub_model, batch):
        weights = LossWeights(lambda_adv=1.0, lambda_cls=1e-9, lambda_cyc=1e-9,
                              lambda_id=1e-9)
        bundle = total_losses(stub_model, batch, weights)
        adv_g = float(loss_adv_g(stub_model, (batch[0], batch[2])).detach())
        assert float(bundle.l_g.detach()) == pytest.approx(adv_g, abs=1e-6)

    def test_linearity_in_cyc_weight(self, stub_model, batch):
        w1 = LossWeights(lambda_cyc=0.5)
        w2 = LossWeights(lambda_cyc=1.0)
        b1 = total_losses(stub_model, batch, w1)
        b2 = total_losses(stub_model, batch, w2)
        cyc = float(b1.cyc.detach())
        assert float(b2.l_g.detach()) - float(b1.l_g.detach()) == \
            pytest.approx(0.5 * cyc, abs=1e-6)

    def test_totals_mirror_components(self, stub_model, batch):
        bundle = total_losses(stub_model, batch, LossWeights())
        assert float(bundle.l_d.detach()) == float(bundle.adv_d.detach())
        assert float(bundle.l_c.detach()) == float(bundle.cls_c.detach())

    def test_finite_on_random_model(self, batch):
        model = build_model(tiny_network_config(n_classes=4), seed=9)
        bundle = total_losses(model, batch, LossWeights())
        for value in bundle.to_floats().values():
            assert np.isfinite(value)

    def test_matches_individual_ops(self, batch):
        model = build_model(tiny_network_config(n_classes=4), seed=9)
        mcc, attr, target = batch
        bundle = total_losses(model, batch, LossWeights())
        assert float(bundle.adv_d.detach()) == pytest.approx(
            float(loss_adv_d(model, (mcc, attr), (mcc, target)).detach()), abs=1e-6)
        assert float(bundle.adv_g.detach()) == pytest.approx(
            float(loss_adv_g(model, (mcc, target)).detach()), abs=1e-6)
        assert float(bundle.cls_c.detach()) == pytest.approx(
            float(loss_cls_c(model, (mcc, attr)).detach()), abs=1e-6)
        assert float(bundle.cyc.detach()) == pytest.approx(
            float(loss_cyc(model, (mcc, attr, target)).detach()), abs=1e-6)

    def test_weights_validation(self):
        with pytest.raises(ParameterError):
            LossWeights(lambda_adv=0.0)
        with pytest.raises(ParameterError):
            LossWeights(rho=3)


class TestDetachment:
    """Cross-network gradients must be exactly absent."""

    def _zero_grads(self, model):
        for module in (model.generator, model.discriminator, model.classifier):
            for p in module.parameters():
                p.grad = None

    def test_adv_d_sends_nothing_to_generator(self, batch):
        model = build_model(tiny_network_config(n_classes=4), seed=2)
        mcc, attr, target = batch
        self._zero_grads(model)
        loss_adv_d(model, (mcc, attr), (mcc, target)).backward()
        assert all(p.grad is None for p in model.generator.parameters())
        assert any(p.grad is not None for p in model.discriminator.parameters())

    def test_adv_g_sends_nothing_to_discriminator(self, batch):
        model = build_model(tiny_network_config(n_classes=4), seed=2)
        mcc, _, target = batch
        self._zero_grads(model)
        loss_adv_g(model, (mcc, target)).backward()
        assert all(p.grad is None for p in model.discriminator.parameters())
        assert all(p.grad is not None for p in model.generator.parameters())

    def test_cls_g_sends_nothing_to_classifier(self, batch):
        model = build_model(tiny_network_config(n_classes=4), seed=2)
        mcc, _, target = batch
        self._zero_grads(model)
        loss_cls_g(model, (mcc, target)).backward()
        assert all(p.grad is None for p in model.classifier.parameters())
        assert all(p.grad is not None for p in model.generator.parameters())

    def test_requires_grad_restored_after_frozen_losses(self, batch):
        model = build_model(tiny_network_config(n_classes=4), seed=2)
        mcc, _, target = batch
        loss_adv_g(model, (mcc, target))
        assert all(p.requires_grad for p in model.discriminator.parameters())
