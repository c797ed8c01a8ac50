import torch
from torch import nn
from torch.nn import functional as F
from torch.nn.utils.parametrizations import weight_norm

from .modules import LRELU_SLOPE, get_padding


class DiscriminatorP(nn.Module):
    """Folds the waveform into ``[T / period, period]`` and applies 2-D convs."""

    def __init__(self, period, channels=(32, 128, 512, 1024, 1024), kernel_size=5, stride=3):
        super().__init__()
        self.period = period
        pad = (get_padding(kernel_size, 1), 0)
        chans = [1, *channels]
        self.convs = nn.ModuleList()
        for i in range(len(channels)):
            s = stride if i < len(channels) - 1 else 1
            self.convs.append(weight_norm(nn.Conv2d(chans[i], chans[i + 1], (kernel_size, 1), (s, 1), padding=pad)))
        self.conv_post = weight_norm(nn.Conv2d(channels[-1], 1, (3, 1), 1, padding=(1, 0)))

    def forward(self, x):
        fmap = []
        b, c, t = x.shape
        if t % self.period:
            n_pad = self.period - (t % self.period)
            x = F.pad(x, (0, n_pad), "reflect")
            t = t + n_pad
        x = x.view(b, c, t // self.period, self.period)

        for conv in self.convs:
            x = F.leaky_relu(conv(x), LRELU_SLOPE)
            fmap.append(x)
        x = self.conv_post(x)
        fmap.append(x)
        return torch.flatten(x, 1, -1), fmap


class DiscriminatorS(nn.Module):
    """Raw-waveform 1-D discriminator with grouped strided convs."""

    def __init__(self, channels=(16, 64, 256, 1024, 1024, 1024)):
        super().__init__()
        c = list(channels)
        layers = [nn.Conv1d(1, c[0], 15, 1, padding=7)]
        for i in range(1, len(c) - 1):
            groups = max(1, c[i - 1] // 4)
            layers.append(nn.Conv1d(c[i - 1], c[i], 41, 4, groups=groups, padding=20))
        layers.append(nn.Conv1d(c[-2], c[-1], 5, 1, padding=2))
        self.convs = nn.ModuleList([weight_norm(l) for l in layers])
        self.conv_post = weight_norm(nn.Conv1d(c[-1], 1, 3, 1, padding=1))

    def forward(self, x):
        fmap = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), LRELU_SLOPE)
            fmap.append(x)
        x = self.conv_post(x)
        fmap.append(x)
        return torch.flatten(x, 1, -1), fmap


class MultiPeriodDiscriminator(nn.Module):
    def __init__(self, periods=(2, 3, 5, 7, 11), channels=(32, 128, 512, 1024, 1024),
                 scale_channels=(16, 64, 256, 1024, 1024, 1024)):
        super().__init__()
        self.periods = list(periods)
        self.discriminators = nn.ModuleList(
            [DiscriminatorS(scale_channels)] + [DiscriminatorP(p, channels) for p in periods]
        )

    @classmethod
    def from_config(cls, cfg):
        return cls(cfg.disc_periods, cfg.disc_channels, cfg.disc_scale_channels)

    def forward(self, y):
        """``[B, samples]`` to ``(scores, fmaps)``, one entry per sub-discriminator."""
        if y.dim() == 2:
            y = y.unsqueeze(1)
        if y.shape[-1] < max(self.periods):
            raise ValueError(f"waveform of {y.shape[-1]} samples is shorter than the largest period")
        scores, fmaps = [], []
        for d in self.discriminators:
            s, f = d(y)
            scores.append(s)
            fmaps.append(f)
        return scores, fmaps
