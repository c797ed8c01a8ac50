"""Generator-side networks.

All tensors are channel-first: content ``[B, D_c, T]``, spectrogram
``[B, 513, T]``, mel ``[B, 80, T]``, latents ``[B, L, T]``, speaker
embedding ``[B, E]``.
"""

from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F
from torch.nn.utils.parametrizations import weight_norm
from torch.nn.utils.rnn import pack_padded_sequence

from ..audio import HOP
from ..config import ModelConfig
from . import modules
from .modules import LRELU_SLOPE, sequence_mask

LOGS_MIN, LOGS_MAX = -9.0, 2.0


class ShapeError(ValueError):
    pass


def _lengths(x, lengths):
    if lengths is None:
        return torch.full((x.shape[0],), x.shape[-1], dtype=torch.long, device=x.device)
    return lengths


class StatsEncoder(nn.Module):
    """1x1 in, WaveNet stack, 1x1 out to per-frame mean and log std."""

    def __init__(self, in_channels, out_channels, hidden_channels, kernel_size, n_layers, gin_channels=0):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.pre = nn.Conv1d(in_channels, hidden_channels, 1)
        self.enc = modules.WN(hidden_channels, kernel_size, 1, n_layers, gin_channels=gin_channels)
        self.proj = nn.Conv1d(hidden_channels, out_channels * 2, 1)

    def stats(self, x, lengths=None, g=None):
        if x.shape[1] != self.in_channels:
            raise ShapeError(f"expected {self.in_channels} input channels, got {x.shape[1]}")
        x_mask = sequence_mask(_lengths(x, lengths), x.shape[2]).to(x.dtype)
        h = self.pre(x) * x_mask
        h = self.enc(h, x_mask, g=g)
        m, logs = torch.split(self.proj(h) * x_mask, self.out_channels, dim=1)
        return m, torch.clamp(logs, LOGS_MIN, LOGS_MAX), x_mask


class ContentEncoder(StatsEncoder):
    """Content features to prior mean / log std. Speaker independent."""

    def forward(self, c, lengths=None):
        return self.stats(c, lengths)


class PosteriorEncoder(StatsEncoder):
    def forward(self, spec, lengths=None, g=None, noise=None):
        """Returns ``(z, m, logs, mask)`` with ``z = m + exp(logs) * noise``."""
        m, logs, x_mask = self.stats(spec, lengths, g)
        if noise is None:
            noise = torch.randn_like(m)
        z = (m + noise * torch.exp(logs)) * x_mask
        return z, m, logs, x_mask


class SpeakerEncoder(nn.Module):
    """Recurrent mel encoder; the last layer's final hidden state feeds a linear head.

    With ``normalize`` the embedding is scaled to unit L2 norm, as in FreeVC-s,
    so a consistency loss on it cannot be satisfied by shrinking its scale.
    """

    def __init__(self, n_mels=80, hidden=256, num_layers=3, embedding=256, normalize=True):
        super().__init__()
        self.n_mels = n_mels
        self.normalize = normalize
        self.lstm = nn.LSTM(n_mels, hidden, num_layers, batch_first=True)
        self.linear = nn.Linear(hidden, embedding)

    def forward(self, mel, lengths=None):
        if mel.dim() != 3 or mel.shape[1] != self.n_mels:
            raise ShapeError(f"expected mel of shape [B, {self.n_mels}, T], got {tuple(mel.shape)}")
        if mel.shape[2] < 1:
            raise ShapeError("mel has no frames")
        x = mel.transpose(1, 2)
        if lengths is not None and bool((lengths != x.shape[1]).any()):
            x = pack_padded_sequence(x, lengths.cpu(), batch_first=True, enforce_sorted=False)
        _, (hidden, _) = self.lstm(x)
        e = self.linear(hidden[-1])
        if self.normalize:
            e = F.normalize(e, dim=-1, eps=1e-8)
        return e


class ResidualCouplingBlock(nn.Module):
    def __init__(self, channels, hidden_channels, kernel_size, n_layers, n_flows=4, gin_channels=0):
        super().__init__()
        self.flows = nn.ModuleList()
        for _ in range(n_flows):
            self.flows.append(modules.ResidualCouplingLayer(
                channels, hidden_channels, kernel_size, 1, n_layers, gin_channels=gin_channels))
            self.flows.append(modules.Flip())

    def forward(self, x, x_mask, g=None, reverse=False):
        flows = self.flows if not reverse else reversed(self.flows)
        for flow in flows:
            x = flow(x, x_mask, g=g, reverse=reverse)
        return x


class Decoder(nn.Module):
    """Transposed-conv upsampler from latent frames to waveform, one hop per frame."""

    def __init__(self, in_channels, upsample_rates, upsample_kernels, upsample_initial_channel,
                 resblock_kernels, resblock_dilations, gin_channels=0):
        super().__init__()
        self.num_kernels = len(resblock_kernels)
        self.conv_pre = nn.Conv1d(in_channels, upsample_initial_channel, 7, 1, padding=3)
        self.ups = nn.ModuleList()
        for i, (u, k) in enumerate(zip(upsample_rates, upsample_kernels)):
            self.ups.append(weight_norm(nn.ConvTranspose1d(
                upsample_initial_channel // (2 ** i), upsample_initial_channel // (2 ** (i + 1)),
                k, u, padding=(k - u) // 2)))

        self.resblocks = nn.ModuleList()
        for i in range(len(self.ups)):
            ch = upsample_initial_channel // (2 ** (i + 1))
            for k, d in zip(resblock_kernels, resblock_dilations):
                self.resblocks.append(modules.ResBlock(ch, k, d))

        self.conv_post = nn.Conv1d(ch, 1, 7, 1, padding=3, bias=False)
        self.ups.apply(modules.init_weights)
        if gin_channels:
            self.cond = nn.Conv1d(gin_channels, upsample_initial_channel, 1)

    def forward(self, x, g=None):
        if x.shape[-1] < 1:
            raise ShapeError("decoder needs at least one frame")
        x = self.conv_pre(x)
        if g is not None:
            x = x + self.cond(g.unsqueeze(-1))

        for i, up in enumerate(self.ups):
            x = F.leaky_relu(x, LRELU_SLOPE)
            x = up(x)
            xs = None
            for j in range(self.num_kernels):
                r = self.resblocks[i * self.num_kernels + j](x)
                xs = r if xs is None else xs + r
            x = xs / self.num_kernels
        x = F.leaky_relu(x)
        x = self.conv_post(x)
        return torch.tanh(x).squeeze(1)


class Generator(nn.Module):
    """Content encoder, posterior encoder, speaker encoder, flow and decoder."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        L, H, E = cfg.latent_channels, cfg.hidden_channels, cfg.speaker_dim
        self.enc_p = ContentEncoder(cfg.content_dim, L, H, cfg.enc_kernel, cfg.enc_layers)
        self.enc_q = PosteriorEncoder(cfg.spec_channels, L, H, cfg.enc_kernel, cfg.enc_layers, gin_channels=E)
        self.enc_spk = SpeakerEncoder(cfg.n_mels, cfg.speaker_hidden, cfg.speaker_layers, E, cfg.speaker_normalize)
        self.flow = ResidualCouplingBlock(L, H, cfg.enc_kernel, cfg.flow_wn_layers, cfg.flow_layers, gin_channels=E)
        self.dec = Decoder(L, cfg.upsample_rates, cfg.upsample_kernels, cfg.upsample_initial_channel,
                           cfg.resblock_kernels, cfg.resblock_dilations, gin_channels=E)

    def flow_forward(self, z, x_mask, g):
        return self.flow(z, x_mask, g=g)

    def flow_inverse(self, z_p, x_mask, g):
        return self.flow(z_p, x_mask, g=g, reverse=True)

    @torch.no_grad()
    def infer(self, c, g, temperature=0.667, lengths=None, noise=None):
        """Content ``[B, D_c, T]`` and embedding ``[B, E]`` to audio ``[B, 320 * T]``."""
        m_p, logs_p, x_mask = self.enc_p(c, lengths)
        if noise is None:
            noise = torch.randn_like(m_p)
        z_p = (m_p + noise * torch.exp(logs_p) * temperature) * x_mask
        z = self.flow_inverse(z_p, x_mask, g)
        return self.dec(z * x_mask, g=g)

    @staticmethod
    def samples_for(frames: int) -> int:
        return frames * HOP
