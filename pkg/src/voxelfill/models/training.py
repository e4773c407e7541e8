"""Adversarial losses and the joint GAN training step.

Generator objectives follow the weighted three-term form (pixel L1,
perceptual, adversarial); the transformer variant drops the perceptual
term. The adversarial objective defaults to least squares for stability,
with logistic (BCE) selectable. Each step runs one discriminator update
followed by one generator update.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import NonFiniteLoss
from ..nn import Grid, backward, ops
from ..nn.optim import AdamState, adam_step
from .extractor import PerceptualExtractor, perceptual_loss

LSGAN = "lsgan"
BCE = "bce"


@dataclass(frozen=True)
class LossWeights:
    """The lambda coefficients weighting pixel / perceptual / adversarial terms."""

    pix: float = 100.0
    per: float = 100.0
    adv: float = 1.0

    def __post_init__(self):
        for name in ("pix", "per", "adv"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"lambda_{name} must be finite and >= 0, got {v}")


@dataclass
class TrainBatch:
    """Arrays shaped (B, 1, H, W): voided input, mask, ground truth."""

    masked: np.ndarray
    mask: np.ndarray
    target: np.ndarray


def _bce_with_logits(scores, target: float):
    # max(x,0) - x*t + log(1 + exp(-|x|)), elementwise-stable
    x = scores
    return ops.mean(ops.add(
        ops.sub(ops.relu(x), ops.mul(x, target)),
        ops.log(ops.add(ops.exp(ops.neg(ops.absolute(x))), 1.0))))


def adversarial_d_loss(real_scores, fake_scores, objective: str = LSGAN):
    """Discriminator objective on real/fake score maps."""
    if objective == LSGAN:
        real = ops.mean(ops.mul(ops.sub(real_scores, 1.0), ops.sub(real_scores, 1.0)))
        fake = ops.mean(ops.mul(fake_scores, fake_scores))
        return ops.mul(ops.add(real, fake), 0.5)
    if objective == BCE:
        return ops.mul(ops.add(_bce_with_logits(real_scores, 1.0),
                               _bce_with_logits(fake_scores, 0.0)), 0.5)
    raise ValueError(f"unknown adversarial objective {objective!r}")


def adversarial_g_loss(fake_scores, objective: str = LSGAN):
    """Generator-side adversarial term."""
    if objective == LSGAN:
        return ops.mean(ops.mul(ops.sub(fake_scores, 1.0), ops.sub(fake_scores, 1.0)))
    if objective == BCE:
        return _bce_with_logits(fake_scores, 1.0)
    raise ValueError(f"unknown adversarial objective {objective!r}")


def pixel_loss(pred, target):
    return ops.mean(ops.absolute(ops.sub(pred, target)))


def pgan_loss(weights: LossWeights, pred, target, disc_scores_on_pred,
              extractor: PerceptualExtractor = None, objective: str = LSGAN):
    """Three-term generator loss; returns (total Grid, component floats).

    Components are the raw unweighted terms, so the reported total always
    equals the lambda-weighted sum of the reported components.
    """
    l_pix = pixel_loss(pred, target)
    if weights.per > 0:
        if extractor is None:
            raise ValueError("perceptual weight > 0 requires an extractor")
        l_per = perceptual_loss(extractor, pred, target)
    else:
        l_per = Grid(np.zeros((), dtype=pred.dtype))
    l_adv = adversarial_g_loss(disc_scores_on_pred, objective)
    total = ops.add(
        ops.add(ops.mul(l_pix, weights.pix), ops.mul(l_per, weights.per)),
        ops.mul(l_adv, weights.adv))
    components = {"pix": l_pix.item(), "per": l_per.item(),
                  "adv": l_adv.item(), "total": total.item()}
    return total, components


def resvit_loss(weights: LossWeights, pred, target, disc_scores_on_pred,
                objective: str = LSGAN):
    """Two-term variant: identical contract with the perceptual weight forced to 0."""
    zeroed = LossWeights(pix=weights.pix, per=0.0, adv=weights.adv)
    return pgan_loss(zeroed, pred, target, disc_scores_on_pred, None, objective)


def _check_finite(value: float, what: str):
    if not np.isfinite(value):
        raise NonFiniteLoss(f"{what} is {value}")


def gan_train_step(gen, disc, extractor, batch: TrainBatch, weights: LossWeights,
                   opt_g: AdamState, opt_d: AdamState,
                   objective: str = LSGAN) -> dict:
    """One discriminator update then one generator update.

    Returns the component losses of the step. Raises NonFiniteLoss (and
    leaves parameters to the caller's checkpointing) on NaN/Inf.
    """
    masked = Grid(batch.masked)
    mask = Grid(batch.mask)
    target = Grid(batch.target)

    pred = gen(masked, mask)

    # discriminator sees the masked slice as its condition
    d_real = disc(masked, target)
    d_fake = disc(masked, pred.detach())
    d_loss = adversarial_d_loss(d_real, d_fake, objective)
    _check_finite(d_loss.item(), "discriminator loss")
    disc.zero_grad()
    backward(d_loss)
    adam_step(disc.parameters(), opt_d)

    d_on_pred = disc(masked, pred)
    if extractor is not None and weights.per > 0:
        total, components = pgan_loss(weights, pred, target, d_on_pred,
                                      extractor, objective)
    else:
        total, components = resvit_loss(weights, pred, target, d_on_pred, objective)
    _check_finite(components["total"], "generator loss")
    gen.zero_grad()
    disc.zero_grad()  # gradients leak into D through d_on_pred; discard them
    backward(total)
    adam_step(gen.parameters(), opt_g)
    disc.zero_grad()

    components["disc"] = d_loss.item()
    return components
