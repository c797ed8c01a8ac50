"""Objective proxies: speaker similarity, F0 correlation, content distance.

The similarity judge is the model's own speaker encoder, which favours the
model being evaluated; reports say so in their summary block.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import audio, content
from .audio import Waveform

log = logging.getLogger(__name__)

F0_WIN = 400  # 25 ms
F0_HOP = 320  # 20 ms
F0_MIN, F0_MAX = 60.0, 400.0
VOICING_THRESHOLD = 0.3
MIN_VOICED = 10
UNVOICED = "unvoiced"


class MetricError(ValueError):
    pass


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise MetricError("similarity undefined for a zero-norm embedding")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


@torch.no_grad()
def embed(w: Waveform, speaker_encoder) -> np.ndarray:
    dev = next(speaker_encoder.parameters()).device
    mel = audio.mel_spectrogram(w.tensor().to(dev))
    return speaker_encoder(mel[None])[0].double().cpu().numpy()


def speaker_similarity(a: Waveform, b: Waveform, speaker_encoder, min_seconds: float = 1.0) -> float:
    for name, w in (("a", a), ("b", b)):
        if w.duration < min_seconds:
            raise MetricError(f"{name} is {w.duration:.2f} s, need at least {min_seconds} s")
    was_training = speaker_encoder.training
    speaker_encoder.eval()
    try:
        if a is b or np.array_equal(a.samples, b.samples):
            e = embed(a, speaker_encoder)
            return cosine(e, e)
        return cosine(embed(a, speaker_encoder), embed(b, speaker_encoder))
    finally:
        speaker_encoder.train(was_training)


def track_f0(w: Waveform) -> np.ndarray:
    """F0 per 20 ms frame from the normalised cross-correlation of 25 ms windows; NaN where unvoiced.

    Each window is correlated against lagged windows of the same length, so
    lags beyond half the window are usable without taper correction.
    """
    x = w.samples.astype(np.float64)
    sr = w.sample_rate
    lag_min = int(math.floor(sr / F0_MAX))
    lag_max = int(math.ceil(sr / F0_MIN))
    n_frames = max(0, (len(x) - F0_WIN) // F0_HOP + 1)
    f0 = np.full(n_frames, np.nan)
    x = np.concatenate([x - x.mean(), np.zeros(lag_max + 1)])
    for i in range(n_frames):
        p = i * F0_HOP
        frame = x[p : p + F0_WIN]
        energy = np.dot(frame, frame)
        if energy < 1e-10:
            continue
        lagged = np.lib.stride_tricks.sliding_window_view(x[p + lag_min : p + lag_max + 1 + F0_WIN], F0_WIN)
        lagged_energy = np.einsum("ij,ij->i", lagged, lagged)
        seg = lagged @ frame / np.sqrt(energy * np.maximum(lagged_energy, 1e-12))
        peak = float(seg.max())
        if peak < VOICING_THRESHOLD:
            continue
        # first local maximum close to the global one, which avoids octave-down errors
        is_peak = np.r_[False, (seg[1:-1] >= seg[:-2]) & (seg[1:-1] >= seg[2:]), False]
        cands = np.flatnonzero(is_peak & (seg >= 0.9 * peak))
        j = int(cands[0] if len(cands) else np.argmax(seg))
        k = float(j + lag_min)
        if 0 < j < len(seg) - 1:
            # parabolic refinement of the peak lag
            a, b, c = seg[j - 1], seg[j], seg[j + 1]
            denom = a - 2 * b + c
            if denom != 0:
                k += float(np.clip(0.5 * (a - c) / denom, -0.5, 0.5))
        f0[i] = sr / k
    return f0


def f0_pcc(a: Waveform, b: Waveform) -> float | None:
    """Pearson correlation of F0 over frames voiced in both; ``None`` if too few."""
    fa, fb = track_f0(a), track_f0(b)
    n = min(len(fa), len(fb))
    fa, fb = fa[:n], fb[:n]
    both = ~np.isnan(fa) & ~np.isnan(fb)
    if both.sum() < MIN_VOICED:
        return None
    xa, xb = fa[both], fb[both]
    if xa.std() == 0 or xb.std() == 0:
        return 1.0 if np.allclose(xa / xa.mean(), xb / xb.mean()) else 0.0
    return float(np.clip(np.corrcoef(xa, xb)[0, 1], -1.0, 1.0))


def content_distance(a: Waveform, b: Waveform, extractor: content.ExtractorSpec, cache=None,
                     min_seconds: float = 1.0) -> float:
    """Mean over frames of the L1 distance between content feature vectors."""
    for name, w in (("a", a), ("b", b)):
        if w.duration < min_seconds:
            raise MetricError(f"{name} is {w.duration:.2f} s, need at least {min_seconds} s")
    fa, _ = content.cached_features(a, extractor, cache)
    fb, _ = content.cached_features(b, extractor, cache)
    n = min(fa.n_frames, fb.n_frames)
    d = np.abs(fa.frames[:n].astype(np.float64) - fb.frames[:n].astype(np.float64)).sum(axis=1)
    return float(d.mean())


# --- reports ---------------------------------------------------------------

FIELDS = ["source_id", "converted_id", "reference_id", "speaker_similarity", "f0_pcc", "content_distance", "error"]


@dataclass
class PairResult:
    source_id: str
    converted_id: str
    reference_id: str
    speaker_similarity: float | None = None
    f0_pcc: float | None = None
    content_distance: float | None = None
    error: str = ""

    def row(self) -> dict:
        def fmt(v, unvoiced=False):
            if v is None:
                return UNVOICED if unvoiced and not self.error else ""
            return f"{v:.6f}"

        return {
            "source_id": self.source_id,
            "converted_id": self.converted_id,
            "reference_id": self.reference_id,
            "speaker_similarity": fmt(self.speaker_similarity),
            "f0_pcc": fmt(self.f0_pcc, unvoiced=True),
            "content_distance": fmt(self.content_distance),
            "error": self.error,
        }


@dataclass
class Summary:
    n_pairs: int = 0
    n_failed: int = 0
    n_unvoiced: int = 0
    means: dict = field(default_factory=dict)

    def lines(self) -> list[str]:
        out = [f"n_pairs\t{self.n_pairs}", f"n_failed\t{self.n_failed}", f"n_unvoiced\t{self.n_unvoiced}"]
        for k in ("speaker_similarity", "f0_pcc", "content_distance"):
            v = self.means.get(k)
            out.append(f"mean_{k}\t{'' if v is None else f'{v:.6f}'}")
        out.append("similarity_judge\tmodel speaker encoder (biased towards the evaluated model)")
        return out


def read_pairs(path) -> list[tuple[Path, Path, Path]]:
    """``source|converted|reference`` per line, relative to the file's folder."""
    path = Path(path)
    pairs = []
    for n, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split("|")]
        if len(parts) != 3:
            raise MetricError(f"{path}:{n}: expected source|converted|reference")
        pairs.append(tuple(p if Path(p).is_absolute() else path.parent / p for p in map(Path, parts)))
    return pairs


def evaluate_pairs(pairs, speaker_encoder, extractor: content.ExtractorSpec, cache=None) -> list[PairResult]:
    results = []
    for src_p, conv_p, ref_p in pairs:
        r = PairResult(Path(src_p).stem, Path(conv_p).stem, Path(ref_p).stem)
        try:
            src, conv, ref = (audio.load_waveform(p) for p in (src_p, conv_p, ref_p))
            r.speaker_similarity = speaker_similarity(conv, ref, speaker_encoder)
            r.f0_pcc = f0_pcc(src, conv)
            r.content_distance = content_distance(src, conv, extractor, cache)
        except (OSError, ValueError, RuntimeError) as e:
            log.warning("pair %s -> %s failed: %s", src_p, ref_p, e)
            r.error = f"{e.__class__.__name__}: {e}".replace("\t", " ").replace("\n", " ")
        results.append(r)
    return results


def summarize(results: list[PairResult]) -> Summary:
    s = Summary(n_pairs=len(results), n_failed=sum(1 for r in results if r.error))
    ok = [r for r in results if not r.error]
    s.n_unvoiced = sum(1 for r in ok if r.f0_pcc is None)
    for k in ("speaker_similarity", "f0_pcc", "content_distance"):
        vals = [getattr(r, k) for r in ok if getattr(r, k) is not None]
        s.means[k] = float(np.mean(vals)) if vals else None
    return s


def write_report(results: list[PairResult], path) -> Summary:
    """Tab-separated records, then a ``#``-prefixed summary block."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    summary = summarize(results)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, FIELDS, delimiter="\t", lineterminator="\n")
        writer.writeheader()
        for r in results:
            writer.writerow(r.row())
        fh.write("# summary\n")
        for line in summary.lines():
            fh.write(f"# {line}\n")
    return summary


def read_report(path) -> tuple[list[dict], dict]:
    rows, summary = [], {}
    lines = Path(path).read_text().splitlines()
    body = [l for l in lines if not l.startswith("#")]
    for l in lines:
        if l.startswith("# ") and "\t" in l:
            k, v = l[2:].split("\t", 1)
            summary[k] = v
    rows = list(csv.DictReader(body, delimiter="\t"))
    return rows, summary
