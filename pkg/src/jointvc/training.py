"""Two-phase windowed training.

Phase 1 decodes short random latent windows with the speaker consistency
term switched off. From ``phase1_steps`` on, windows get longer, the batch
shrinks and the consistency term joins the generator objective.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import audio, losses
from .audio import HOP
from .config import Config, ConfigError, ModelConfig, TrainConfig
from .data import Batch, Utterance, collate
from .losses import LossReport, TrainingFault
from .models import Generator, MultiPeriodDiscriminator

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "jointvc-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


@dataclass(frozen=True)
class Phase:
    index: int
    seg_frames: int
    batch_size: int
    scl_weight: float

    def astuple(self):
        return self.seg_frames, self.batch_size, self.scl_weight


def phase_for_step(step: int, cfg: TrainConfig) -> Phase:
    if step < 0:
        raise ValueError("step must be non-negative")
    if step < cfg.phase1_steps:
        return Phase(1, cfg.seg_frames_phase1, cfg.batch_phase1, cfg.scl_weight_phase1)
    return Phase(2, cfg.seg_frames_phase2, cfg.batch_phase2, cfg.scl_weight_phase2)


def slice_latents(z: torch.Tensor, seg_frames: int, generator: torch.Generator | None = None):
    """Random ``seg_frames`` window of ``z [L, T]``.

    Returns ``(z_slice, start_frame)``, or ``None`` when ``T < seg_frames``.
    """
    t = z.shape[-1]
    if t < seg_frames:
        return None
    start = int(torch.randint(0, t - seg_frames + 1, (1,), generator=generator))
    return z[..., start : start + seg_frames], start


def slice_segments(x: torch.Tensor, starts: torch.Tensor, size: int) -> torch.Tensor:
    """Per-item windows ``x[i, ..., starts[i] : starts[i] + size]``."""
    return torch.stack([x[i, ..., s : s + size] for i, s in enumerate(starts.tolist())])


def random_starts(lengths: torch.Tensor, seg_frames: int, generator=None) -> torch.Tensor:
    out = []
    for t in lengths.tolist():
        _, s = slice_latents(torch.empty(0, t), seg_frames, generator)
        out.append(s)
    return torch.tensor(out, dtype=torch.long)


class Trainer:
    """Owns the networks, optimizers and all mutable training state."""

    def __init__(self, cfg: Config, device: str | None = None):
        cfg.validate()
        self.cfg = cfg
        self.device = torch.device(device or cfg.device)
        tc = cfg.train
        if tc.fp16 and self.device.type != "cuda":
            raise ConfigError("train.fp16 requires a CUDA device")
        torch.manual_seed(tc.seed)
        self.net_g = Generator(cfg.model).to(self.device)
        self.net_d = MultiPeriodDiscriminator.from_config(cfg.model).to(self.device)
        self.opt_g = torch.optim.AdamW(self.net_g.parameters(), tc.learning_rate, betas=tuple(tc.betas),
                                       eps=1e-9, weight_decay=tc.weight_decay)
        self.opt_d = torch.optim.AdamW(self.net_d.parameters(), tc.learning_rate, betas=tuple(tc.betas),
                                       eps=1e-9, weight_decay=tc.weight_decay)
        self.sched_g = torch.optim.lr_scheduler.ExponentialLR(self.opt_g, gamma=tc.lr_decay)
        self.sched_d = torch.optim.lr_scheduler.ExponentialLR(self.opt_d, gamma=tc.lr_decay)
        self.scaler = torch.amp.GradScaler("cuda", enabled=tc.fp16)
        self.data_rng = torch.Generator().manual_seed(tc.seed + 1)
        self.step = 0

    @property
    def phase(self) -> Phase:
        return phase_for_step(self.step, self.cfg.train)

    @property
    def total_steps(self) -> int:
        return self.cfg.train.phase1_steps + self.cfg.train.phase2_steps

    def sample_batch(self, corpus: list[Utterance], batch_size: int) -> Batch:
        n = len(corpus)
        if n == 0:
            raise TrainingFault("empty corpus", step=self.step)
        if batch_size <= n:
            idx = torch.randperm(n, generator=self.data_rng)[:batch_size]
        else:
            idx = torch.randint(0, n, (batch_size,), generator=self.data_rng)
        return collate([corpus[i] for i in idx.tolist()])

    def train_step(self, batch: Batch) -> LossReport:
        """One discriminator update, then one generator update."""
        tc = self.cfg.train
        phase = self.phase
        seg = phase.seg_frames

        keep = batch.lengths >= seg
        if not bool(keep.any()):
            raise TrainingFault("empty effective batch", step=self.step, batch_ids=batch.ids)
        if not bool(keep.all()):
            dropped = [i for i, k in zip(batch.ids, keep.tolist()) if not k]
            log.warning("step %d: skipping utterances shorter than %d frames: %s", self.step, seg, dropped)
            batch = batch.select(keep)

        dev = self.device
        c, spec, mel = batch.content.to(dev), batch.spec.to(dev), batch.mel.to(dev)
        lengths, wav = batch.lengths.to(dev), batch.wav.to(dev)
        g_net, d_net = self.net_g, self.net_d
        g_net.train()
        d_net.train()
        amp = torch.autocast(dev.type, dtype=torch.float16, enabled=tc.fp16)

        with amp:
            g = g_net.enc_spk(mel, lengths)
            z, m_q, logs_q, z_mask = g_net.enc_q(spec, lengths, g=g)
            m_p, logs_p, _ = g_net.enc_p(c, lengths)
            z_p = g_net.flow_forward(z, z_mask, g)

            starts = random_starts(batch.lengths, seg, self.data_rng)
            z_slice = slice_segments(z, starts, seg)
            y_hat = g_net.dec(z_slice, g=g)
            y = slice_segments(wav, starts * HOP, seg * HOP)

            scores_r, _ = d_net(y)
            scores_f, _ = d_net(y_hat.detach())
            loss_d = losses.discriminator_loss(scores_r, scores_f)
        self._check(loss_d, "adv_d", batch)
        self.opt_d.zero_grad(set_to_none=True)
        self.scaler.scale(loss_d).backward()
        self.scaler.step(self.opt_d)

        with amp:
            mel_y = audio.mel_spectrogram(y.float())
            mel_hat = audio.mel_spectrogram(y_hat.float())
            loss_recon = losses.recon_loss(mel_y, mel_hat, tc.c_mel)
            loss_kl = losses.kl_loss(z_p, logs_q, m_p, logs_p, z_mask) * tc.c_kl
            scores_r, fmap_r = d_net(y)
            scores_f, fmap_f = d_net(y_hat)
            loss_adv = losses.generator_adv_loss(scores_f)
            loss_fm = losses.feature_matching_loss(fmap_r, fmap_f)
            if phase.scl_weight:
                loss_scl = losses.speaker_consistency_loss(y, y_hat, g_net.enc_spk)
            else:
                # reported only; kept out of the graph
                with torch.no_grad():
                    loss_scl = losses.speaker_consistency_loss(y, y_hat, g_net.enc_spk)
            try:
                loss_g = losses.total_generator_loss(loss_recon, loss_kl, loss_adv, loss_fm, loss_scl,
                                                     phase.scl_weight)
            except TrainingFault as e:
                e.step, e.batch_ids = self.step, batch.ids
                log.error("step %d: %s (batch %s)", self.step, e, batch.ids)
                raise
        self.opt_g.zero_grad(set_to_none=True)
        self.scaler.scale(loss_g).backward()
        self.scaler.step(self.opt_g)
        self.scaler.update()
        self.sched_g.step()
        self.sched_d.step()
        self.step += 1

        return LossReport(
            recon=loss_recon.item(), kl=loss_kl.item(), adv_g=loss_adv.item(), fm=loss_fm.item(),
            scl=loss_scl.item(), total_g=loss_g.item(), adv_d=loss_d.item(),
        )

    def _check(self, loss, name, batch):
        if not torch.isfinite(loss.detach()).all():
            log.error("step %d: non-finite %s (batch %s)", self.step, name, batch.ids)
            raise TrainingFault(f"non-finite {name} loss", term=name, step=self.step, batch_ids=batch.ids)

    # --- checkpoints -------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": self.cfg.to_dict(),
            "step": self.step,
            "generator": self.net_g.state_dict(),
            "discriminator": self.net_d.state_dict(),
            "opt_g": self.opt_g.state_dict(),
            "opt_d": self.opt_d.state_dict(),
            "sched_g": self.sched_g.state_dict(),
            "sched_d": self.sched_d.state_dict(),
            "scaler": self.scaler.state_dict(),
            "rng": {"torch": torch.get_rng_state(), "data": self.data_rng.get_state()},
        }

    def load_state_dict(self, ckpt: dict) -> None:
        _check_checkpoint(ckpt, self.cfg.model)
        self.net_g.load_state_dict(ckpt["generator"])
        self.net_d.load_state_dict(ckpt["discriminator"])
        self.opt_g.load_state_dict(ckpt["opt_g"])
        self.opt_d.load_state_dict(ckpt["opt_d"])
        self.sched_g.load_state_dict(ckpt["sched_g"])
        self.sched_d.load_state_dict(ckpt["sched_d"])
        self.scaler.load_state_dict(ckpt["scaler"])
        torch.set_rng_state(ckpt["rng"]["torch"])
        self.data_rng.set_state(ckpt["rng"]["data"])
        self.step = int(ckpt["step"])

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        torch.save(self.state_dict(), tmp)
        tmp.replace(path)
        return path

    # --- loop --------------------------------------------------------------

    def fit(self, corpus: list[Utterance], out_dir, until: int | None = None, callback=None) -> list[dict]:
        """Train until ``until`` (default: end of phase 2), logging one JSON line per step."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        until = self.total_steps if until is None else until
        log_path = out_dir / "train_log.jsonl"
        _truncate_log(log_path, self.step)
        records = []
        ci = self.cfg.train.checkpoint_interval
        with open(log_path, "a") as fh:
            while self.step < until:
                t0 = time.perf_counter()
                phase = self.phase
                batch = self.sample_batch(corpus, phase.batch_size)
                lr = self.opt_g.param_groups[0]["lr"]
                report = self.train_step(batch)
                rec = {"step": self.step, "phase": phase.index, **report.as_dict(), "lr": lr,
                       "wall_time": time.perf_counter() - t0}
                fh.write(json.dumps(rec) + "\n")
                fh.flush()
                records.append(rec)
                if callback is not None:
                    callback(rec)
                if (ci and self.step % ci == 0) or self.step == self.cfg.train.phase1_steps or self.step == until:
                    self.save(checkpoint_path(out_dir, self.step))
        return records


def checkpoint_path(out_dir, step: int) -> Path:
    return Path(out_dir) / f"ckpt_{step:08d}.pt"


def latest_checkpoint(out_dir) -> Path | None:
    found = sorted(Path(out_dir).glob("ckpt_*.pt"))
    return found[-1] if found else None


def _truncate_log(path: Path, step: int) -> None:
    if not path.exists():
        return
    kept = [l for l in path.read_text().splitlines() if l.strip() and json.loads(l)["step"] <= step]
    path.write_text("".join(l + "\n" for l in kept))


def read_log(path) -> list[dict]:
    return [json.loads(l) for l in Path(path).read_text().splitlines() if l.strip()]


def _diff_keys(a: dict, b: dict, prefix="") -> list[str]:
    keys = []
    for k in sorted(set(a) | set(b)):
        if isinstance(a.get(k), dict) and isinstance(b.get(k), dict):
            keys += _diff_keys(a[k], b[k], f"{prefix}{k}.")
        elif a.get(k) != b.get(k):
            keys.append(f"{prefix}{k}")
    return keys


def _check_checkpoint(ckpt: dict, model_cfg: ModelConfig | None) -> None:
    if not isinstance(ckpt, dict) or ckpt.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError("not a jointvc checkpoint")
    if ckpt.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {ckpt.get('version')} != supported {CHECKPOINT_VERSION}")
    if model_cfg is not None:
        from dataclasses import asdict

        diff = _diff_keys(ckpt["config"]["model"], json.loads(json.dumps(asdict(model_cfg))))
        if diff:
            raise CheckpointError("checkpoint model config differs in: " + ", ".join(f"model.{k}" for k in diff))


def read_checkpoint(path, model_cfg: ModelConfig | None = None) -> dict:
    try:
        ckpt = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as e:  # noqa: BLE001
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    _check_checkpoint(ckpt, model_cfg)
    return ckpt


def load_trainer(path, cfg: Config | None = None, device=None) -> Trainer:
    """Rebuild a trainer from a checkpoint; ``cfg`` (if given) must match its model section."""
    ckpt = read_checkpoint(path, cfg.model if cfg is not None else None)
    if cfg is None:
        from .config import from_dict

        cfg = from_dict(ckpt["config"])
    trainer = Trainer(cfg, device)
    trainer.load_state_dict(ckpt)
    return trainer


def load_generator(path, cfg: Config | None = None, device="cpu") -> tuple[Generator, Config]:
    ckpt = read_checkpoint(path, cfg.model if cfg is not None else None)
    if cfg is None:
        from .config import from_dict

        cfg = from_dict(ckpt["config"])
    net_g = Generator(cfg.model)
    net_g.load_state_dict(ckpt["generator"])
    return net_g.to(device).eval(), cfg


def loss_means(records: list[dict], key: str, lo: int, hi: int) -> float:
    """Mean of ``key`` over log records with ``lo <= step <= hi``."""
    vals = [r[key] for r in records if lo <= r["step"] <= hi]
    if not vals:
        raise ValueError(f"no records between steps {lo} and {hi}")
    return float(np.mean(vals))
