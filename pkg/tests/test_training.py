import numpy as np
import pytest
import torch

from jointvc import audio, config, training
from jointvc.audio import Waveform
from jointvc.data import Utterance, collate
from jointvc.losses import TrainingFault
from jointvc.training import CheckpointError, Trainer, phase_for_step, slice_latents


def fake_corpus(n=4, frames=(80, 95, 110, 90), dim=16, seed=0):
    rng = np.random.default_rng(seed)
    utts = []
    for i in range(n):
        t = frames[i % len(frames)]
        wav = (rng.uniform(-0.5, 0.5, t * 320)).astype(np.float32)
        spec = audio.linear_spectrogram(torch.from_numpy(wav)).numpy().T.copy()
        utts.append(Utterance(f"u{i}", f"s{i % 2}", wav, rng.standard_normal((t, dim)).astype(np.float32), spec))
    return utts


@pytest.mark.parametrize("step, expected", [
    (0, (28, 108, 0.0)),
    (99_999, (28, 108, 0.0)),
    (100_000, (75, 42, 1.0)),
    (299_999, (75, 42, 1.0)),
])
def test_paper_schedule(step, expected):
    assert phase_for_step(step, config.build("paper").train).astuple() == expected


def test_toy_schedule_keeps_segment_lengths():
    tc = config.build("toy").train
    assert phase_for_step(499, tc).astuple() == (28, 4, 0.0)
    assert phase_for_step(500, tc).astuple() == (75, 4, 1.0)


def test_schedule_single_transition():
    tc = config.build("toy").train
    phases = [phase_for_step(s, tc).index for s in range(1500)]
    assert sum(a != b for a, b in zip(phases, phases[1:])) == 1


def test_slice_latents_ranges():
    gen = torch.Generator().manual_seed(0)
    z = torch.randn(8, 120)
    starts = set()
    for _ in range(200):
        s, start = slice_latents(z, 28, gen)
        assert s.shape == (8, 28) and 0 <= start <= 92
        assert torch.equal(s, z[:, start : start + 28])
        starts.add(start)
    assert min(starts) == 0 or len(starts) > 50
    assert slice_latents(torch.randn(8, 28), 28, gen)[1] == 0
    assert slice_latents(torch.randn(8, 20), 28, gen) is None


def test_segment_audio_correspondence():
    utts = fake_corpus()
    batch = collate(utts)
    gen = torch.Generator().manual_seed(3)
    starts = training.random_starts(batch.lengths, 28, gen)
    y = training.slice_segments(batch.wav, starts * 320, 28 * 320)
    for i, u in enumerate(utts):
        ref = audio.slice_waveform(Waveform(u.wav), int(starts[i]), 28)
        np.testing.assert_array_equal(y[i].numpy(), ref.samples)


def _run(cfg, steps, corpus):
    torch.manual_seed(0)
    tr = Trainer(cfg)
    reps = []
    for _ in range(steps):
        reps.append(tr.train_step(tr.sample_batch(corpus, tr.phase.batch_size)))
    return tr, reps


def test_train_step_deterministic(tiny_cfg):
    corpus = fake_corpus()
    _, a = _run(tiny_cfg, 2, corpus)
    _, b = _run(tiny_cfg, 2, corpus)
    assert a == b
    for r in a:
        assert all(np.isfinite(v) for v in r.as_dict().values())


def test_phase1_scl_reported_not_weighted(tiny_cfg):
    tr, (r,) = _run(tiny_cfg, 1, fake_corpus())
    assert r.scl > 0
    assert r.total_g == pytest.approx(r.recon + r.kl + r.adv_g + r.fm, rel=1e-5)
    assert tr.step == 1


def test_phase2_scl_weighted(tiny_cfg):
    tr = Trainer(tiny_cfg)
    tr.step = tiny_cfg.train.phase1_steps
    r = tr.train_step(tr.sample_batch(fake_corpus(), 2))
    assert r.total_g == pytest.approx(r.recon + r.kl + r.adv_g + r.fm + r.scl, rel=1e-5)


def test_empty_effective_batch(tiny_cfg):
    tr = Trainer(tiny_cfg)
    short = fake_corpus(2, frames=(20, 25))
    with pytest.raises(TrainingFault, match="empty effective batch"):
        tr.train_step(collate(short))


def test_short_utterances_skipped(tiny_cfg, caplog):
    tr = Trainer(tiny_cfg)
    mixed = fake_corpus(2, frames=(20, 90))
    r = tr.train_step(collate(mixed))
    assert np.isfinite(r.total_g)
    assert "u0" in caplog.text


def test_non_finite_loss_raises(tiny_cfg):
    tr = Trainer(tiny_cfg)
    with torch.no_grad():
        tr.net_g.dec.conv_pre.weight.fill_(float("nan"))
    with pytest.raises(TrainingFault) as exc:
        tr.train_step(collate(fake_corpus(2)))
    assert exc.value.batch_ids == ["u0", "u1"]


def test_checkpoint_roundtrip(tiny_cfg, tmp_path):
    tr, _ = _run(tiny_cfg, 1, fake_corpus())
    tr.step = 12
    tiny_cfg.train.phase1_steps = 100_000
    path = tr.save(tmp_path / "c.pt")
    back = training.load_trainer(path, tiny_cfg)
    assert back.step == 12 and back.phase.index == 1
    for (n, a), (_, b) in zip(tr.net_g.state_dict().items(), back.net_g.state_dict().items()):
        assert torch.equal(a, b), n
    tr.step = 100_001
    back = training.load_trainer(tr.save(tmp_path / "d.pt"), tiny_cfg)
    assert back.phase.index == 2


def test_checkpoint_config_mismatch(tiny_cfg, tmp_path):
    path = Trainer(tiny_cfg).save(tmp_path / "c.pt")
    other = config.build("toy")
    config.merge(other, {"content": {"dim": 24}, "model": {"content_dim": 24}})
    with pytest.raises(CheckpointError, match="content_dim"):
        training.load_trainer(path, other.validate())


def test_checkpoint_version_gate(tiny_cfg, tmp_path):
    tr = Trainer(tiny_cfg)
    state = tr.state_dict()
    state["version"] = 99
    torch.save(state, tmp_path / "v.pt")
    with pytest.raises(CheckpointError, match="version"):
        training.read_checkpoint(tmp_path / "v.pt")


def test_resume_equivalence(tiny_cfg, tmp_path):
    corpus = fake_corpus()
    tiny_cfg.train.checkpoint_interval = 5
    tiny_cfg.train.phase1_steps, tiny_cfg.train.phase2_steps = 6, 4

    straight = Trainer(tiny_cfg).fit(corpus, tmp_path / "a", until=10)

    first = Trainer(tiny_cfg)
    first.fit(corpus, tmp_path / "b", until=5)
    ckpt = training.latest_checkpoint(tmp_path / "b")
    assert ckpt.name == "ckpt_00000005.pt"
    torch.manual_seed(999)  # resume must not depend on ambient RNG state
    resumed = training.load_trainer(ckpt, tiny_cfg)
    resumed.fit(corpus, tmp_path / "b", until=10)

    strip = lambda recs: [{k: v for k, v in r.items() if k != "wall_time"} for r in recs]  # noqa: E731
    assert strip(training.read_log(tmp_path / "a" / "train_log.jsonl")) == \
        strip(training.read_log(tmp_path / "b" / "train_log.jsonl"))
    assert len(straight) == 10


def test_fit_writes_phase_boundary_checkpoint(tiny_cfg, tmp_path):
    tiny_cfg.train.checkpoint_interval = 0
    Trainer(tiny_cfg).fit(fake_corpus(), tmp_path)
    names = sorted(p.name for p in tmp_path.glob("ckpt_*.pt"))
    assert names == ["ckpt_00000003.pt", "ckpt_00000006.pt"]
    recs = training.read_log(tmp_path / "train_log.jsonl")
    assert [r["phase"] for r in recs] == [1, 1, 1, 2, 2, 2]
    assert {"step", "phase", "recon", "kl", "adv_g", "fm", "scl", "total_g", "adv_d", "lr", "wall_time"} <= set(recs[0])
