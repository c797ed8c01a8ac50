"""Frame-aligned content features and their on-disk cache.

Three extractors share one contract, audio in and a ``[T, D]`` matrix on the
hop-320 grid out:

* ``weo``  hidden states of the final Whisper encoder block
* ``ppg``  per-frame phoneme posteriors from a wav2vec2 CTC model
* ``stub`` log-mel frames through a fixed random projection (offline tests)

External models are loaded lazily through :func:`load_external`, or can be
injected with :func:`register_model` (useful for offline checks).
"""

from __future__ import annotations

import enum
import hashlib
import logging
import math
import os
import struct
import tempfile
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import torch

from . import audio
from .audio import HOP, Waveform

log = logging.getLogger(__name__)

WHISPER_WINDOW = 30 * audio.SAMPLE_RATE


class FeatureKind(str, enum.Enum):
    WEO = "weo"
    PPG = "ppg"
    STUB = "stub"
    LINEAR = "linear"


class ExtractorUnavailable(RuntimeError):
    pass


class FeatureError(ValueError):
    pass


@dataclass
class ContentFeatures:
    frames: np.ndarray
    kind: FeatureKind
    hop: int = HOP

    def __post_init__(self):
        self.kind = FeatureKind(self.kind)
        if self.frames.ndim != 2:
            raise FeatureError(f"content frames must be 2-D, got shape {self.frames.shape}")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass
class ExtractorSpec:
    kind: FeatureKind
    dimension: int | None
    external_model_id: str = ""
    cache_dir: str | None = None
    seed: int = 1234

    def __post_init__(self):
        self.kind = FeatureKind(self.kind)
        if self.dimension is not None and self.dimension <= 0:
            raise FeatureError("extractor dimension must be positive")

    @classmethod
    def from_config(cls, content_cfg) -> "ExtractorSpec":
        return cls(content_cfg.kind, content_cfg.dim, content_cfg.model_id,
                   content_cfg.cache_dir, content_cfg.seed)

    @property
    def identity(self) -> str:
        """String identifying the extractor; part of every cache key."""
        if self.kind is FeatureKind.STUB:
            return f"stub:{self.seed}:{self.dimension}"
        return self.external_model_id


_REGISTRY: dict[tuple[str, str], tuple] = {}


def register_model(kind, model_id: str, model, processor=None) -> None:
    """Make an already constructed model available under ``model_id``."""
    _REGISTRY[(FeatureKind(kind).value, model_id)] = (model.eval(), processor)


@lru_cache(maxsize=4)
def _from_pretrained(kind: str, model_id: str):
    try:
        if kind == "weo":
            from transformers import WhisperFeatureExtractor, WhisperModel

            model = WhisperModel.from_pretrained(model_id).encoder
            proc = WhisperFeatureExtractor.from_pretrained(model_id)
        else:
            from transformers import Wav2Vec2ForCTC

            model = Wav2Vec2ForCTC.from_pretrained(model_id)
            proc = None
    except Exception as e:  # noqa: BLE001 - any loader failure means "unavailable"
        raise ExtractorUnavailable(
            f"could not load {kind} model {model_id!r} ({e.__class__.__name__}: {e}). "
            "Download the checkpoint into the Hugging Face cache, point content.model_id at a "
            "local directory, or use content.kind='stub' for offline runs."
        ) from e
    return model.eval(), proc


def load_external(kind, model_id: str):
    kind = FeatureKind(kind).value
    if (kind, model_id) in _REGISTRY:
        return _REGISTRY[(kind, model_id)]
    return _from_pretrained(kind, model_id)


def _check_dim(frames: np.ndarray, spec: ExtractorSpec) -> None:
    if spec.dimension is not None and frames.shape[1] != spec.dimension:
        raise FeatureError(
            f"{spec.kind.value} extractor produced {frames.shape[1]}-dim features, "
            f"configured dimension is {spec.dimension}"
        )


def _to_grid(frames: np.ndarray, n_target: int) -> np.ndarray:
    """Nearest-neighbour map of a frame sequence onto ``n_target`` frames."""
    n = frames.shape[0]
    if n == n_target:
        return frames
    idx = np.minimum((np.arange(n_target) * n / n_target).astype(np.int64), n - 1)
    return frames[idx]


@torch.no_grad()
def extract_weo(w: Waveform, spec: ExtractorSpec) -> ContentFeatures:
    model, proc = load_external("weo", spec.external_model_id)
    if proc is None:
        from transformers import WhisperFeatureExtractor

        proc = WhisperFeatureExtractor(feature_size=model.config.num_mel_bins)
    pieces = []
    # zero overlap between 30 s windows; each window's padding frames are dropped
    for lo in range(0, len(w), WHISPER_WINDOW):
        chunk = w.samples[lo : lo + WHISPER_WINDOW]
        feats = proc(chunk, sampling_rate=audio.SAMPLE_RATE, return_tensors="pt").input_features
        hidden = model(feats.to(model.dtype)).last_hidden_state[0]
        pieces.append(hidden[: math.ceil(len(chunk) / HOP)].float().numpy())
    frames = np.concatenate(pieces, axis=0)
    _check_dim(frames, spec)
    return ContentFeatures(frames, FeatureKind.WEO)


@torch.no_grad()
def extract_ppg(w: Waveform, spec: ExtractorSpec) -> ContentFeatures:
    model, _ = load_external("ppg", spec.external_model_id)
    x = torch.from_numpy(w.samples)
    # wav2vec2 expects zero-mean unit-variance input
    x = (x - x.mean()) / torch.sqrt(x.var() + 1e-7)
    logits = model(x[None].to(model.dtype)).logits[0].double()
    post = torch.softmax(logits, dim=-1).numpy()
    post = _to_grid(post, w.n_frames)
    post = post / post.sum(axis=1, keepdims=True)
    frames = post.astype(np.float32)
    _check_dim(frames, spec)
    return ContentFeatures(frames, FeatureKind.PPG)


@lru_cache(maxsize=8)
def _stub_projection(seed: int, dim: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return (rng.standard_normal((audio.N_MELS, dim)) / math.sqrt(audio.N_MELS)).astype(np.float32)


def extract_stub(w: Waveform, spec: ExtractorSpec) -> ContentFeatures:
    if spec.dimension is None:
        raise FeatureError("stub extractor needs an explicit dimension")
    mel = audio.mel_spectrogram(w.tensor()).numpy().T  # [T, 80]
    frames = mel @ _stub_projection(spec.seed, spec.dimension)
    return ContentFeatures(frames.astype(np.float32), FeatureKind.STUB)


_EXTRACTORS = {
    FeatureKind.WEO: extract_weo,
    FeatureKind.PPG: extract_ppg,
    FeatureKind.STUB: extract_stub,
}


def extract(w: Waveform, spec: ExtractorSpec) -> ContentFeatures:
    if spec.kind not in _EXTRACTORS:
        raise FeatureError(f"{spec.kind.value} is not a content extractor")
    return _EXTRACTORS[spec.kind](w, spec)


# --- cache -----------------------------------------------------------------

MAGIC = b"JVCF"
VERSION = 1
_DTYPES = {1: np.float32, 2: np.float64, 3: np.float16}
_DTYPE_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}
_KIND_CODES = {FeatureKind.WEO: 0, FeatureKind.PPG: 1, FeatureKind.STUB: 2, FeatureKind.LINEAR: 3}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}
# magic, version, dtype, rank, kind, hop
_HEAD = struct.Struct("<4sBBBBI")


def cache_key(w: Waveform, kind, model_id: str) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(w.samples, dtype=np.float32).tobytes())
    h.update(b"\0" + FeatureKind(kind).value.encode())
    h.update(b"\0" + model_id.encode())
    return h.hexdigest()


def write_features(path, f: ContentFeatures) -> None:
    """Atomically write ``f`` to ``path`` (temp file, then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.ascontiguousarray(f.frames)
    if arr.dtype not in _DTYPE_CODES:
        arr = arr.astype(np.float32)
    head = _HEAD.pack(MAGIC, VERSION, _DTYPE_CODES[arr.dtype], arr.ndim, _KIND_CODES[f.kind], f.hop)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".feat")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(head + dims + arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def read_features(path) -> ContentFeatures:
    data = Path(path).read_bytes()
    if len(data) < _HEAD.size:
        raise FeatureError(f"{path}: truncated header")
    magic, version, dcode, rank, kcode, hop = _HEAD.unpack_from(data)
    if magic != MAGIC or version != VERSION or dcode not in _DTYPES or kcode not in _CODE_KINDS:
        raise FeatureError(f"{path}: not a feature file")
    off = _HEAD.size + 4 * rank
    shape = struct.unpack_from(f"<{rank}I", data, _HEAD.size)
    dtype = np.dtype(_DTYPES[dcode]).newbyteorder("<")
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(data) - off != expected:
        raise FeatureError(f"{path}: payload is {len(data) - off} bytes, expected {expected}")
    arr = np.frombuffer(data, dtype=dtype, offset=off).reshape(shape).astype(dtype.newbyteorder("="))
    return ContentFeatures(arr, _CODE_KINDS[kcode], hop)


class FeatureCache:
    """Directory of ``{kind}/{key}.feat`` files."""

    def __init__(self, root):
        self.root = Path(root)

    def path(self, kind, key: str) -> Path:
        return self.root / FeatureKind(kind).value / f"{key}.feat"

    def put(self, key: str, f: ContentFeatures) -> Path:
        p = self.path(f.kind, key)
        write_features(p, f)
        return p

    def get(self, key: str, kind) -> ContentFeatures | None:
        p = self.path(kind, key)
        if not p.exists():
            return None
        try:
            return read_features(p)
        except FeatureError:
            log.warning("corrupt cache entry %s, treating as a miss", p)
            return None

    def __len__(self):
        return sum(1 for _ in self.root.glob("*/*.feat"))


def cached_features(w: Waveform, spec: ExtractorSpec, cache: FeatureCache | None) -> tuple[ContentFeatures, bool]:
    """Return ``(features, hit)``, extracting and storing on a miss."""
    if cache is None:
        return extract(w, spec), False
    key = cache_key(w, spec.kind, spec.identity)
    f = cache.get(key, spec.kind)
    if f is not None:
        return f, True
    f = extract(w, spec)
    cache.put(key, f)
    return f, False


def cached_linear(w: Waveform, cache: FeatureCache | None) -> tuple[np.ndarray, bool]:
    """Linear spectrogram ``[T, 513]`` through the same cache."""
    if cache is not None:
        key = cache_key(w, FeatureKind.LINEAR, "stft-1024-320")
        f = cache.get(key, FeatureKind.LINEAR)
        if f is not None:
            return f.frames, True
    spec = audio.linear_spectrogram(w.tensor()).numpy().T.copy()
    if cache is not None:
        cache.put(key, ContentFeatures(spec, FeatureKind.LINEAR))
    return spec, False


def align(content: np.ndarray, spec: np.ndarray, tolerance: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Truncate both frame streams to the shorter one."""
    diff = abs(content.shape[0] - spec.shape[0])
    if diff > tolerance:
        raise FeatureError(f"content/spectrogram frame counts differ by {diff} (> {tolerance})")
    n = min(content.shape[0], spec.shape[0])
    return content[:n], spec[:n]
