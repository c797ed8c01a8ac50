"""Any-to-any conversion: content from the source, speaker from the reference."""

from __future__ import annotations

import torch

from . import audio, content
from .audio import HOP, Waveform
from .config import InferConfig
from .models import Generator


class ConversionError(ValueError):
    pass


def _check_duration(w: Waveform, what: str, cfg: InferConfig) -> None:
    if w.duration < cfg.min_seconds:
        raise ConversionError(f"{what} is {w.duration:.2f} s, shorter than the {cfg.min_seconds} s minimum")
    if w.duration > cfg.max_seconds:
        raise ConversionError(f"{what} is {w.duration:.2f} s, longer than the {cfg.max_seconds} s cap")


@torch.no_grad()
def embed_reference(reference: Waveform, net_g: Generator, cfg: InferConfig | None = None) -> torch.Tensor:
    """Speaker embedding ``[E]`` of a reference utterance."""
    cfg = cfg or InferConfig()
    if reference.duration < cfg.min_seconds:
        raise ConversionError(f"reference is {reference.duration:.2f} s, shorter than {cfg.min_seconds} s")
    net_g.eval()
    dev = next(net_g.parameters()).device
    mel = audio.mel_spectrogram(reference.tensor().to(dev))
    return net_g.enc_spk(mel[None])[0]


def content_for(source: Waveform, spec: content.ExtractorSpec, cache=None) -> content.ContentFeatures:
    feats, _ = content.cached_features(source, spec, cache)
    return feats


@torch.no_grad()
def convert_voice(source: Waveform, reference: Waveform, net_g: Generator, extractor: content.ExtractorSpec,
                  cfg: InferConfig | None = None, temperature: float | None = None, cache=None,
                  seed: int | None = None) -> Waveform:
    """Output has exactly ``320 * content_frames`` samples."""
    cfg = cfg or InferConfig()
    temperature = cfg.temperature if temperature is None else temperature
    _check_duration(source, "source", cfg)
    _check_duration(reference, "reference", cfg)

    feats = content_for(source, extractor, cache)
    if feats.dim != net_g.cfg.content_dim:
        raise ConversionError(
            f"extractor gives {feats.dim}-dim content, model expects {net_g.cfg.content_dim}"
        )
    g = embed_reference(reference, net_g, cfg)
    dev = g.device
    c = torch.from_numpy(feats.frames.T.copy())[None].to(dev)
    noise = None
    if seed is not None:
        gen = torch.Generator().manual_seed(seed)
        noise = torch.randn(1, net_g.cfg.latent_channels, c.shape[-1], generator=gen).to(dev)
    y = net_g.infer(c, g[None], temperature=temperature, noise=noise)[0]
    assert y.shape[-1] == HOP * feats.n_frames
    return Waveform(y.cpu().numpy())
