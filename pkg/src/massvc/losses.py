"""Training objectives for the three-way adversarial game.

Six scalar terms: the discriminator/generator adversarial pair, the
classifier/generator classification pair, and the generator's
cycle-consistency and identity penalties. Each function returns a torch
scalar suitable for backward(). Gradients never leak across the game:
the discriminator objective sees generator output as a constant, and the
generator objectives see discriminator/classifier parameters as constants.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch

from .errors import NumericalError, ParameterError
from .nets import ConversionModel

# Probabilities are clamped away from {0, 1} before every log.
PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    """Weights for the combined generator objective, plus the norm order
    (1 or 2) used by the cycle and identity penalties."""

    lambda_adv: float = 1.0
    lambda_cls: float = 1.0
    lambda_cyc: float = 0.5
    lambda_id: float = 0.25
    rho: int = 1

    def __post_init__(self):
        for name in ("lambda_adv", "lambda_cls", "lambda_cyc", "lambda_id"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be > 0")
        if self.rho not in (1, 2):
            raise ParameterError("rho must be 1 or 2")


class LossBundle(NamedTuple):
    """All six terms plus the three combined objectives (torch scalars)."""

    adv_d: torch.Tensor
    adv_g: torch.Tensor
    cls_c: torch.Tensor
    cls_g: torch.Tensor
    cyc: torch.Tensor
    id: torch.Tensor
    l_g: torch.Tensor
    l_d: torch.Tensor
    l_c: torch.Tensor

    def to_floats(self) -> dict:
        return {k: float(v.detach()) for k, v in self._asdict().items()}


@contextmanager
def frozen(*modules):
    """Temporarily exclude module parameters from gradient computation."""
    flipped = []
    for module in modules:
        for p in module.parameters():
            if p.requires_grad:
                p.requires_grad_(False)
                flipped.append(p)
    try:
        yield
    finally:
        for p in flipped:
            p.requires_grad_(True)


def batch_to_tensor(model: ConversionModel, mcc_batch) -> torch.Tensor:
    """Normalize a (B, T, 36) MCC batch into network input (B, 1, 36, T)."""
    arr = np.asarray(mcc_batch, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[2] != model.config.input_dim:
        raise ParameterError(
            f"batch must be (B, T, {model.config.input_dim})")
    x = torch.as_tensor(np.swapaxes(arr, 1, 2), dtype=model.dtype)
    return model.normalize(x.unsqueeze(1))


def _label_tensor(labels, n_classes: int) -> torch.Tensor:
    t = torch.as_tensor(np.asarray(labels), dtype=torch.long).reshape(-1)
    if torch.any(t < 0) or torch.any(t >= n_classes):
        raise ParameterError("label index outside [0, n_classes)")
    return t


def _clamp(p: torch.Tensor) -> torch.Tensor:
    return p.clamp(PROB_EPS, 1.0 - PROB_EPS)


def _check_finite(value: torch.Tensor, term: str) -> torch.Tensor:
    if not torch.isfinite(value.detach()):
        raise NumericalError(f"{term} evaluated to a non-finite value")
    return value


def element_norm(diff: torch.Tensor, rho: int) -> torch.Tensor:
    """Per-element rho-norm: mean absolute for rho=1, RMS for rho=2."""
    if rho == 1:
        return diff.abs().mean()
    return diff.pow(2).mean().sqrt()


def loss_adv_d(model: ConversionModel, real, fake_input) -> torch.Tensor:
    """Discriminator objective: -E[log D(y,c)] - E[log(1 - D(G(x,c'),c'))].

    The generated batch is treated as a constant, so no gradient reaches
    the generator.
    """
    real_mcc, real_attr = real
    src_mcc, target = fake_input
    k = model.config.n_classes
    y = batch_to_tensor(model, real_mcc)
    x = batch_to_tensor(model, src_mcc)
    real_labels = _label_tensor(real_attr, k)
    fake_labels = _label_tensor(target, k)
    with torch.no_grad():
        fake = model.generator(x, fake_labels)
    d_real = _clamp(model.discriminator(y, real_labels))
    d_fake = _clamp(model.discriminator(fake, fake_labels))
    value = -d_real.log().mean() - (1.0 - d_fake).log().mean()
    return _check_finite(value, "adversarial discriminator loss")


def loss_adv_g(model: ConversionModel, batch) -> torch.Tensor:
    """Generator adversarial objective: -E[log D(G(x,c), c)], with the
    discriminator's parameters treated as constants."""
    mcc, target = batch
    k = model.config.n_classes
    x = batch_to_tensor(model, mcc)
    labels = _label_tensor(target, k)
    with frozen(model.discriminator):
        fake = model.generator(x, labels)
        d = _clamp(model.discriminator(fake, labels))
    return _check_finite(-d.log().mean(), "adversarial generator loss")


def loss_cls_c(model: ConversionModel, batch) -> torch.Tensor:
    """Classifier objective: cross-entropy on real features."""
    mcc, attr = batch
    labels = _label_tensor(attr, model.config.n_classes)
    p = _clamp(model.classifier(batch_to_tensor(model, mcc)))
    picked = p[torch.arange(labels.shape[0]), labels]
    return _check_finite(-picked.log().mean(), "classifier loss")


def loss_cls_g(model: ConversionModel, batch) -> torch.Tensor:
    """Generator classification objective: make G(x,c) classify as c.
    Classifier parameters are treated as constants."""
    mcc, target = batch
    labels = _label_tensor(target, model.config.n_classes)
    x = batch_to_tensor(model, mcc)
    with frozen(model.classifier):
        fake = model.generator(x, labels)
        p = _clamp(model.classifier(fake))
    picked = p[torch.arange(labels.shape[0]), labels]
    return _check_finite(-picked.log().mean(), "generator class loss")


def loss_cyc(model: ConversionModel, batch, rho: int = 1) -> torch.Tensor:
    """Cycle penalty: convert to the target and back to the source
    attribute, then take the per-element rho-norm against the input."""
    mcc, source_attr, target = batch
    k = model.config.n_classes
    x = batch_to_tensor(model, mcc)
    src = _label_tensor(source_attr, k)
    tgt = _label_tensor(target, k)
    back = model.generator(model.generator(x, tgt), src)
    return _check_finite(element_norm(back - x, rho), "cycle loss")


def loss_id(model: ConversionModel, batch, rho: int = 1) -> torch.Tensor:
    """Identity penalty: converting to the source's own attribute should
    leave the features unchanged."""
    mcc, attr = batch
    x = batch_to_tensor(model, mcc)
    labels = _label_tensor(attr, model.config.n_classes)
    return _check_finite(
        element_norm(model.generator(x, labels) - x, rho), "identity loss")


def total_losses(model: ConversionModel, batch,
                 weights: LossWeights) -> LossBundle:
    """All six terms on one batch of (mcc, source attribute, target).

    The combined generator objective is the weighted sum of its four terms;
    the discriminator and classifier objectives are their single terms.
    Shared generator passes are reused across the generator-side terms.
    """
    mcc, attr, target = batch
    k = model.config.n_classes
    x = batch_to_tensor(model, mcc)
    src = _label_tensor(attr, k)
    tgt = _label_tensor(target, k)
    arange = torch.arange(src.shape[0])

    with torch.no_grad():
        fake_const = model.generator(x, tgt)
    d_real = _clamp(model.discriminator(x, src))
    d_fake = _clamp(model.discriminator(fake_const, tgt))
    adv_d = -d_real.log().mean() - (1.0 - d_fake).log().mean()
    cls_c = -_clamp(model.classifier(x))[arange, src].log().mean()

    with frozen(model.discriminator, model.classifier):
        fake = model.generator(x, tgt)
        adv_g = -_clamp(model.discriminator(fake, tgt)).log().mean()
        cls_g = -_clamp(model.classifier(fake))[arange, tgt].log().mean()
        cyc = element_norm(model.generator(fake, src) - x, weights.rho)
        ident = element_norm(model.generator(x, src) - x, weights.rho)

    l_g = (weights.lambda_adv * adv_g + weights.lambda_cls * cls_g
           + weights.lambda_cyc * cyc + weights.lambda_id * ident)
    bundle = LossBundle(adv_d=adv_d, adv_g=adv_g, cls_c=cls_c, cls_g=cls_g,
                        cyc=cyc, id=ident, l_g=l_g, l_d=adv_d, l_c=cls_c)
    for name, value in bundle._asdict().items():
        _check_finite(value, name)
    return bundle
