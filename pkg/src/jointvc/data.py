"""Manifests, train/test split and in-memory corpora for training."""

from __future__ import annotations

import logging
import math
import random
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import audio, content
from .audio import HOP, Waveform

log = logging.getLogger(__name__)

SPLITS = ("train", "test")


class ManifestError(ValueError):
    pass


@dataclass
class ManifestEntry:
    audio_path: Path
    speaker_id: str
    split: str = "train"

    @property
    def utt_id(self) -> str:
        return self.audio_path.stem

    def line(self, root: Path | None = None) -> str:
        p = self.audio_path
        if root is not None:
            try:
                p = p.relative_to(root)
            except ValueError:
                pass
        return f"{p}|{self.speaker_id}|{self.split}"


def read_manifest(path) -> list[ManifestEntry]:
    """Parse ``path|speaker_id[|split]`` lines; relative paths resolve against the manifest's folder."""
    path = Path(path)
    root = path.parent
    entries = []
    for n, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("|")
        if len(fields) not in (2, 3):
            raise ManifestError(f"{path}:{n}: expected path|speaker_id|split, got {line!r}")
        p, spk = fields[0].strip(), fields[1].strip()
        split = fields[2].strip() if len(fields) == 3 else "train"
        if not spk:
            raise ManifestError(f"{path}:{n}: empty speaker_id")
        if split not in SPLITS:
            raise ManifestError(f"{path}:{n}: split must be one of {SPLITS}, got {split!r}")
        ap = Path(p)
        entries.append(ManifestEntry(ap if ap.is_absolute() else root / ap, spk, split))
    return entries


def write_manifest(entries, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    root = path.parent.resolve()
    lines = [ManifestEntry(e.audio_path.resolve(), e.speaker_id, e.split).line(root) for e in entries]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def split_entries(entries, seed: int = 1234, test_ratio: float = 0.1) -> list[ManifestEntry]:
    """Assign train/test per speaker at ``1 - test_ratio : test_ratio``."""
    rng = random.Random(seed)
    by_spk = defaultdict(list)
    for e in entries:
        by_spk[e.speaker_id].append(e)
    out = []
    for spk in sorted(by_spk):
        utts = sorted(by_spk[spk], key=lambda e: str(e.audio_path))
        rng.shuffle(utts)
        n_test = min(math.floor(len(utts) * test_ratio + 0.5), len(utts) - 1)
        for i, e in enumerate(utts):
            out.append(ManifestEntry(e.audio_path, spk, "test" if i < n_test else "train"))
    return out


@dataclass
class Utterance:
    utt_id: str
    speaker_id: str
    wav: np.ndarray  # zero-padded to n_frames * HOP
    content: np.ndarray  # [T, D_c]
    spec: np.ndarray  # [T, 513]

    @property
    def n_frames(self) -> int:
        return self.content.shape[0]


def make_utterance(utt_id, speaker_id, w: Waveform, spec: content.ExtractorSpec,
                   cache: content.FeatureCache | None = None) -> tuple[Utterance, bool]:
    feats, hit_c = content.cached_features(w, spec, cache)
    lin, hit_s = content.cached_linear(w, cache)
    c, s = content.align(feats.frames, lin)
    n = c.shape[0]
    wav = np.zeros(n * HOP, dtype=np.float32)
    m = min(len(w), n * HOP)
    wav[:m] = w.samples[:m]
    return Utterance(utt_id, speaker_id, wav, c, s), hit_c and hit_s


def load_corpus(entries, spec: content.ExtractorSpec, cache=None, min_samples: int = 0,
                max_samples: int | None = None, split: str | None = "train") -> list[Utterance]:
    utts = []
    for e in entries:
        if split is not None and e.split != split:
            continue
        w = audio.load_waveform(e.audio_path)
        if len(w) < min_samples or (max_samples is not None and len(w) > max_samples):
            log.info("skipping %s: %d samples outside [%s, %s]", e.audio_path, len(w), min_samples, max_samples)
            continue
        utt, _ = make_utterance(e.utt_id, e.speaker_id, w, spec, cache)
        utts.append(utt)
    return utts


@dataclass
class Batch:
    ids: list[str]
    content: torch.Tensor  # [B, D_c, T]
    spec: torch.Tensor  # [B, 513, T]
    mel: torch.Tensor  # [B, 80, T]
    lengths: torch.Tensor  # [B]
    wav: torch.Tensor  # [B, T * HOP]

    def select(self, keep: torch.Tensor) -> "Batch":
        idx = torch.nonzero(keep).squeeze(1)
        t = int(self.lengths[idx].max())
        return Batch(
            [self.ids[i] for i in idx.tolist()],
            self.content[idx, :, :t],
            self.spec[idx, :, :t],
            self.mel[idx, :, :t],
            self.lengths[idx],
            self.wav[idx, : t * HOP],
        )


def collate(utts: list[Utterance]) -> Batch:
    t = max(u.n_frames for u in utts)
    b = len(utts)
    d = utts[0].content.shape[1]
    c = torch.zeros(b, d, t)
    s = torch.zeros(b, audio.N_FREQ, t)
    wav = torch.zeros(b, t * HOP)
    lengths = torch.tensor([u.n_frames for u in utts], dtype=torch.long)
    for i, u in enumerate(utts):
        c[i, :, : u.n_frames] = torch.from_numpy(u.content.T)
        s[i, :, : u.n_frames] = torch.from_numpy(u.spec.T)
        wav[i, : len(u.wav)] = torch.from_numpy(u.wav)
    mel = audio.mel_from_linear(s)
    # padded frames carry the log floor; the speaker encoder never reads them
    return Batch([u.utt_id for u in utts], c, s, mel, lengths, wav)
