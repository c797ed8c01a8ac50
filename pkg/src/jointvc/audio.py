"""Audio I/O and spectral features.

All spectral functions operate on torch tensors so the same code path is
used for data preparation and for differentiable losses on generated audio.
Shapes follow the usual ``[..., channels, frames]`` convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
import torch
from scipy.io import wavfile
from scipy.signal import resample_poly

SAMPLE_RATE = 16000
HOP = 320
WIN = 1024
N_FFT = 1024
N_FREQ = N_FFT // 2 + 1
N_MELS = 80
FMIN = 0.0
FMAX = 8000.0
LOG_FLOOR = 1e-5
# keeps sqrt differentiable at silent bins
_MAG_EPS = 1e-9


class AudioError(ValueError):
    """Invalid audio input (empty, too short, out of range)."""


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1:
            raise AudioError(f"expected mono samples, got shape {self.samples.shape}")

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    @property
    def n_frames(self) -> int:
        return math.ceil(len(self.samples) / HOP)

    def tensor(self) -> torch.Tensor:
        return torch.from_numpy(self.samples)


def load_waveform(path, target_sr: int = SAMPLE_RATE) -> Waveform:
    """Read a WAV file as mono float audio at ``target_sr``.

    Stereo input is averaged across channels; other rates are resampled with
    a polyphase windowed-sinc filter. Samples are scaled down only if their
    peak exceeds 1.
    """
    path = Path(path)
    try:
        sr, data = wavfile.read(path)
    except (OSError, ValueError) as e:
        raise OSError(f"cannot read audio file {path}: {e}") from e

    if data.dtype == np.int16:
        x = data.astype(np.float32) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float32) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float32) - 128.0) / 128.0
    else:
        x = data.astype(np.float32)
    if x.ndim == 2:
        x = x.mean(axis=1)
    if x.size == 0:
        raise AudioError(f"{path} contains no samples")

    if sr != target_sr:
        ratio = Fraction(target_sr, sr)
        x = resample_poly(x, ratio.numerator, ratio.denominator).astype(np.float32)

    if not np.all(np.isfinite(x)):
        raise AudioError(f"{path} contains non-finite samples")
    peak = float(np.max(np.abs(x)))
    if peak > 1.0:
        x = x / peak
    return Waveform(x, target_sr)


def save_waveform(w: Waveform, path) -> None:
    """Write 16-bit PCM WAV."""
    pcm = np.clip(np.round(w.samples * 32767.0), -32768, 32767).astype(np.int16)
    wavfile.write(Path(path), w.sample_rate, pcm)


def slice_waveform(w: Waveform, start_frame: int, n_frames: int) -> Waveform:
    if n_frames <= 0:
        raise AudioError("slice must cover at least one frame")
    if start_frame < 0 or (start_frame + n_frames) * HOP > len(w):
        raise AudioError(
            f"frames [{start_frame}, {start_frame + n_frames}) exceed waveform of {len(w)} samples"
        )
    lo = start_frame * HOP
    return Waveform(w.samples[lo : lo + n_frames * HOP], w.sample_rate)


def _reflect_index(n: int, left: int, right: int) -> torch.Tensor:
    # numpy-style 'reflect' indices, valid for pads longer than the signal
    idx = torch.arange(-left, n + right)
    if n == 1:
        return torch.zeros_like(idx)
    period = 2 * (n - 1)
    idx = torch.remainder(idx, period)
    return torch.where(idx >= n, period - idx, idx)


def frame_count(n_samples: int, hop: int = HOP) -> int:
    return math.ceil(n_samples / hop)


def linear_spectrogram(y: torch.Tensor, n_fft: int = N_FFT, hop: int = HOP, win: int = WIN) -> torch.Tensor:
    """Magnitude STFT, ``[..., samples] -> [..., n_fft // 2 + 1, frames]``.

    The signal is reflect-padded by ``(win - hop) / 2`` per side plus enough
    on the right to complete the last hop, giving ``ceil(len / hop)`` frames.
    """
    n = y.shape[-1]
    if n < hop:
        raise AudioError(f"waveform of {n} samples is shorter than one hop ({hop})")
    side = (win - hop) // 2
    extra = (-n) % hop
    y = y[..., _reflect_index(n, side, side + extra).to(y.device)]

    lead = y.shape[:-1]
    y = y.reshape(-1, y.shape[-1])
    window = torch.hann_window(win, dtype=y.dtype, device=y.device)
    spec = torch.stft(y, n_fft, hop_length=hop, win_length=win, window=window,
                      center=False, return_complex=True)
    mag = torch.sqrt(spec.real.pow(2) + spec.imag.pow(2) + _MAG_EPS)
    return mag.reshape(*lead, *mag.shape[-2:])


def _hz_to_mel(f):
    # Slaney scale: linear below 1 kHz, logarithmic above
    f = np.asarray(f, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = math.log(6.4) / 27.0
    return np.where(f >= min_log_hz, min_log_mel + np.log(np.maximum(f, 1e-10) / min_log_hz) / logstep, f / f_sp)


def _mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = math.log(6.4) / 27.0
    return np.where(m >= min_log_mel, min_log_hz * np.exp(logstep * (m - min_log_mel)), f_sp * m)


def mel_filterbank(sr: int = SAMPLE_RATE, n_fft: int = N_FFT, n_mels: int = N_MELS,
                   fmin: float = FMIN, fmax: float = FMAX) -> np.ndarray:
    """Slaney-normalised triangular filters, shape ``[n_mels, n_fft // 2 + 1]``."""
    fft_freqs = np.linspace(0, sr / 2, n_fft // 2 + 1)
    mel_pts = np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2)
    hz_pts = _mel_to_hz(mel_pts)
    fdiff = np.diff(hz_pts)
    ramps = hz_pts[:, None] - fft_freqs[None, :]

    weights = np.zeros((n_mels, len(fft_freqs)))
    for i in range(n_mels):
        lower = -ramps[i] / fdiff[i]
        upper = ramps[i + 2] / fdiff[i + 1]
        weights[i] = np.maximum(0, np.minimum(lower, upper))
    enorm = 2.0 / (hz_pts[2 : n_mels + 2] - hz_pts[:n_mels])
    return (weights * enorm[:, None]).astype(np.float32)


_FB_CACHE: dict[tuple, torch.Tensor] = {}


def _filterbank(dtype, device) -> torch.Tensor:
    key = (dtype, str(device))
    if key not in _FB_CACHE:
        _FB_CACHE[key] = torch.from_numpy(mel_filterbank()).to(device=device, dtype=dtype)
    return _FB_CACHE[key]


def mel_from_linear(spec: torch.Tensor) -> torch.Tensor:
    """``[..., 513, T] -> [..., 80, T]`` log-mel with floor ``log(1e-5)``."""
    if spec.shape[-2] != N_FREQ:
        raise AudioError(f"expected {N_FREQ} frequency bins, got {spec.shape[-2]}")
    fb = _filterbank(spec.dtype, spec.device)
    mel = torch.matmul(fb, spec)
    return torch.log(torch.clamp(mel, min=LOG_FLOOR))


def mel_spectrogram(y: torch.Tensor) -> torch.Tensor:
    return mel_from_linear(linear_spectrogram(y))
