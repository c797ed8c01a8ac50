"""Synthetic speech-like corpus for desk-scale runs.

Each utterance is a source-filter rendering: a harmonic glottal source with
a wandering pitch contour, shaped by time-varying formant resonators, with
interleaved fricative noise and short pauses. A speaker is a pitch range,
a vocal-tract scale and a spectral tilt; the phone sequence is the content.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from . import audio
from .audio import SAMPLE_RATE, Waveform
from .data import ManifestEntry, write_manifest

VOWELS = {
    "a": (730, 1090, 2440),
    "i": (270, 2290, 3010),
    "u": (300, 870, 2240),
    "e": (530, 1840, 2480),
    "o": (570, 840, 2410),
    "ae": (660, 1720, 2410),
}
BANDWIDTHS = (80.0, 100.0, 140.0)
BLOCK = 160


@dataclass(frozen=True)
class ToySpeaker:
    name: str
    f0: float
    f0_spread: float
    tract_scale: float
    tilt: float
    breath: float


DEFAULT_SPEAKERS = (
    ToySpeaker("spk_low", f0=105.0, f0_spread=0.12, tract_scale=0.92, tilt=1.6, breath=0.01),
    ToySpeaker("spk_high", f0=215.0, f0_spread=0.15, tract_scale=1.17, tilt=1.0, breath=0.04),
    ToySpeaker("spk_mid", f0=150.0, f0_spread=0.10, tract_scale=1.05, tilt=1.3, breath=0.02),
)


def _resonator(freq, bw, sr=SAMPLE_RATE):
    r = np.exp(-np.pi * bw / sr)
    theta = 2 * np.pi * freq / sr
    a = [1.0, -2 * r * np.cos(theta), r * r]
    b = [1.0 - r]
    return b, a


def _phone_plan(rng, n_samples):
    plan, t = [], 0
    names = list(VOWELS)
    while t < n_samples:
        r = rng.random()
        if r < 0.12:
            kind, dur = "fric", rng.uniform(0.06, 0.14)
        elif r < 0.18:
            kind, dur = "pause", rng.uniform(0.05, 0.12)
        else:
            kind, dur = names[rng.integers(len(names))], rng.uniform(0.08, 0.22)
        n = int(dur * SAMPLE_RATE)
        plan.append((kind, t, min(t + n, n_samples)))
        t += n
    return plan


def synthesize(speaker: ToySpeaker, seconds: float, seed: int) -> Waveform:
    rng = np.random.default_rng(seed)
    n = int(seconds * SAMPLE_RATE)
    plan = _phone_plan(rng, n)

    # per-sample targets: formants, voicing, frication
    formants = np.zeros((n, 3))
    voiced = np.zeros(n)
    fric = np.zeros(n)
    last = np.array(VOWELS["a"], dtype=float)
    for kind, lo, hi in plan:
        if kind in VOWELS:
            target = np.array(VOWELS[kind], dtype=float) * speaker.tract_scale
            ramp = np.linspace(0, 1, hi - lo)[:, None]
            w = np.minimum(ramp * 4, 1.0)
            formants[lo:hi] = last * (1 - w) + target * w
            voiced[lo:hi] = 1.0
            last = target
        else:
            formants[lo:hi] = last
            if kind == "fric":
                fric[lo:hi] = 1.0
    # soften on/offsets
    k = np.hanning(321)
    k /= k.sum()
    voiced = np.convolve(voiced, k, "same")
    fric = np.convolve(fric, k, "same")

    # pitch contour: declination plus slow random wander
    t = np.arange(n) / SAMPLE_RATE
    knots = rng.normal(0, speaker.f0_spread, int(seconds * 4) + 2)
    wander = np.interp(t, np.linspace(0, seconds, len(knots)), knots)
    f0 = speaker.f0 * np.exp(wander) * (1.0 - 0.08 * t / seconds)
    phase = 2 * np.pi * np.cumsum(f0) / SAMPLE_RATE

    n_harm = int(SAMPLE_RATE / 2 / (f0.min() * 1.0))
    source = np.zeros(n)
    for h in range(1, n_harm + 1):
        amp = h ** (-speaker.tilt)
        alias = (h * f0) < SAMPLE_RATE / 2 - 200
        source += amp * np.sin(h * phase) * alias
    source = source / np.max(np.abs(source)) + speaker.breath * rng.standard_normal(n)
    source *= voiced

    # time-varying cascade of formant resonators, block-wise with carried state
    out = np.zeros(n)
    zi = [np.zeros(2) for _ in range(3)]
    for lo in range(0, n, BLOCK):
        hi = min(lo + BLOCK, n)
        y = source[lo:hi]
        for j in range(3):
            b, a = _resonator(formants[lo, j], BANDWIDTHS[j] * speaker.tract_scale)
            y, zi[j] = lfilter(b, a, y, zi=zi[j])
        out[lo:hi] = y
    out /= np.max(np.abs(out)) + 1e-9

    noise = rng.standard_normal(n)
    noise = lfilter([1, -0.95], [1], noise)  # tilt towards high frequencies
    noise = noise / np.max(np.abs(noise)) * 0.3 * fric
    y = out + noise
    y = 0.5 * y / (np.max(np.abs(y)) + 1e-9)
    return Waveform(y.astype(np.float32))


def make_corpus(out_dir, n_speakers=2, train_per_speaker=5, test_per_speaker=3, seed=0,
                min_seconds=1.6, max_seconds=5.8) -> Path:
    """Write WAVs plus ``manifest.txt`` (``path|speaker|split``); returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if n_speakers > len(DEFAULT_SPEAKERS):
        raise ValueError(f"at most {len(DEFAULT_SPEAKERS)} toy speakers are defined")
    rng = np.random.default_rng(seed)
    entries = []
    for s in DEFAULT_SPEAKERS[:n_speakers]:
        for i in range(train_per_speaker + test_per_speaker):
            split = "train" if i < train_per_speaker else "test"
            seconds = float(rng.uniform(min_seconds, max_seconds))
            w = synthesize(s, seconds, int(rng.integers(2 ** 31)))
            path = out_dir / s.name / f"{s.name}_{i:03d}.wav"
            path.parent.mkdir(exist_ok=True)
            audio.save_waveform(w, path)
            entries.append(ManifestEntry(path, s.name, split))
    manifest = out_dir / "manifest.txt"
    write_manifest(entries, manifest)
    return manifest
