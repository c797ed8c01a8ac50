"""Generator and discriminator objectives.

The generator objective is the unweighted sum of reconstruction, KL,
adversarial and feature-matching terms plus the speaker consistency term,
which is scaled by a phase-dependent weight (0 until the schedule turns it
on).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch

from . import audio

C_MEL = 45.0


class LossError(ValueError):
    pass


class TrainingFault(RuntimeError):
    """Raised when training cannot continue (non-finite loss, empty batch)."""

    def __init__(self, message, term=None, step=None, batch_ids=None):
        super().__init__(message)
        self.term = term
        self.step = step
        self.batch_ids = batch_ids


@dataclass
class LossReport:
    recon: float
    kl: float
    adv_g: float
    fm: float
    scl: float
    total_g: float
    adv_d: float

    def as_dict(self) -> dict:
        return asdict(self)


def recon_loss(mel_true, mel_gen, c_mel=C_MEL):
    if mel_true.shape != mel_gen.shape:
        raise LossError(f"mel shapes differ: {tuple(mel_true.shape)} vs {tuple(mel_gen.shape)}")
    return c_mel * torch.mean(torch.abs(mel_true - mel_gen))


def kl_loss(z_p, logs_q, m_p, logs_p, z_mask=None):
    """Single-sample KL estimate between posterior and flow-mapped prior.

    Averaged over every unmasked frame and channel.
    """
    for name, t in (("z_p", z_p), ("logs_q", logs_q), ("m_p", m_p), ("logs_p", logs_p)):
        if not torch.isfinite(t).all():
            raise LossError(f"kl_loss: {name} has non-finite entries")
    kl = logs_p - logs_q - 0.5
    kl = kl + 0.5 * ((z_p - m_p) ** 2) * torch.exp(-2.0 * logs_p)
    if z_mask is None:
        return kl.mean()
    mask = z_mask.expand_as(kl)
    return torch.sum(kl * mask) / torch.sum(mask)


def _check_lists(a, b, what):
    if len(a) == 0 or len(a) != len(b):
        raise LossError(f"{what}: expected matching non-empty lists, got {len(a)} and {len(b)}")


def discriminator_loss(scores_real, scores_fake):
    _check_lists(scores_real, scores_fake, "discriminator_loss")
    loss = 0.0
    for dr, dg in zip(scores_real, scores_fake):
        loss = loss + torch.mean((dr - 1) ** 2) + torch.mean(dg ** 2)
    return loss


def generator_adv_loss(scores_fake):
    if len(scores_fake) == 0:
        raise LossError("generator_adv_loss: no score maps")
    loss = 0.0
    for dg in scores_fake:
        loss = loss + torch.mean((dg - 1) ** 2)
    return loss


def adversarial_losses(scores_real, scores_fake):
    """Least-squares GAN terms, returns ``(adv_g, adv_d)``."""
    return generator_adv_loss(scores_fake), discriminator_loss(scores_real, scores_fake)


def feature_matching_loss(fmaps_real, fmaps_fake):
    _check_lists(fmaps_real, fmaps_fake, "feature_matching_loss")
    loss = 0.0
    for dr, dg in zip(fmaps_real, fmaps_fake):
        _check_lists(dr, dg, "feature_matching_loss layer")
        for rl, gl in zip(dr, dg):
            if rl.shape != gl.shape:
                raise LossError(f"feature map shapes differ: {tuple(rl.shape)} vs {tuple(gl.shape)}")
            loss = loss + torch.mean(torch.abs(rl.detach() - gl))
    return loss * 2


def embedding_l1(e_true, e_gen):
    """Sum of absolute differences over the embedding axis, averaged over batch."""
    return torch.sum(torch.abs(e_true - e_gen), dim=-1).mean()


def speaker_consistency_loss(t, h, speaker_encoder):
    """L1 distance between speaker embeddings of paired real / generated segments.

    ``t`` and ``h`` are ``[B, samples]`` waveforms of equal length. Both go
    through the same differentiable mel path and the same (trainable)
    speaker encoder, so gradients reach the encoder from both sides and the
    generator through ``h``.
    """
    if t.shape != h.shape:
        raise LossError(f"segment lengths differ: {tuple(t.shape)} vs {tuple(h.shape)}")
    mel = audio.mel_spectrogram(torch.cat([t, h], dim=0))
    e = speaker_encoder(mel)
    e_t, e_h = e[: t.shape[0]], e[t.shape[0]:]
    return embedding_l1(e_t, e_h)


def total_generator_loss(recon, kl, adv_g, fm, scl, scl_weight=1.0):
    parts = {"recon": recon, "kl": kl, "adv_g": adv_g, "fm": fm, "scl": scl}
    for name, value in parts.items():
        v = float(value.detach()) if torch.is_tensor(value) else float(value)
        if not math.isfinite(v):
            raise TrainingFault(f"non-finite {name} loss ({v})", term=name)
    return recon + kl + adv_g + fm + scl_weight * scl
