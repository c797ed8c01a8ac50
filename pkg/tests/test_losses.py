import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from jointvc import losses
from jointvc.losses import LossError, TrainingFault
from jointvc.models import Generator, SpeakerEncoder


def test_recon_identity_and_offset():
    mel = torch.randn(1, 80, 28)
    assert losses.recon_loss(mel, mel) == 0
    assert losses.recon_loss(mel, mel + 1) == pytest.approx(45.0)


def test_recon_shape_gate():
    with pytest.raises(LossError):
        losses.recon_loss(torch.zeros(1, 80, 28), torch.zeros(1, 80, 29))


def test_kl_pointwise_values():
    z = torch.zeros(1, 4, 6)
    # all log std 0 and z_p at the prior mean: each term is -0.5
    assert losses.kl_loss(z, z, z, z) == pytest.approx(-0.5)
    # log_std_p = 1, log_std_q = 0, z_p = mean_p: 1 - 0 - 0.5 + 0 = 0.5
    assert losses.kl_loss(z, z, z, torch.ones_like(z)) == pytest.approx(0.5)


def test_kl_identical_distributions_monte_carlo():
    gen = torch.Generator().manual_seed(0)
    n = 100_000
    m = torch.randn(1, 1, n, generator=gen, dtype=torch.float64)
    logs = torch.rand(1, 1, n, generator=gen, dtype=torch.float64) - 0.5
    z = m + torch.randn(1, 1, n, generator=gen, dtype=torch.float64) * torch.exp(logs)
    # per-sample terms straight from the closed form
    terms = logs - logs - 0.5 + 0.5 * (z - m) ** 2 * torch.exp(-2 * logs)
    est = losses.kl_loss(z, logs, m, logs)
    sigma = terms.std() / math.sqrt(n)
    assert float(est) == pytest.approx(float(terms.mean()), abs=1e-12)
    assert abs(float(est)) < 3 * float(sigma)


def test_kl_masking():
    z = torch.zeros(1, 2, 4)
    logs_p = torch.zeros(1, 2, 4)
    logs_p[..., 2:] = 100.0  # masked frames would dominate otherwise
    mask = torch.tensor([[[1.0, 1.0, 0.0, 0.0]]])
    assert losses.kl_loss(z, z, z, logs_p, mask) == pytest.approx(-0.5)


def test_kl_rejects_non_finite():
    z = torch.zeros(1, 2, 3)
    with pytest.raises(LossError):
        losses.kl_loss(z, z, z * float("nan"), z)


def test_adversarial_optima():
    ones, zeros = [torch.ones(2, 10)], [torch.zeros(2, 10)]
    adv_g, _ = losses.adversarial_losses(zeros, ones)
    assert adv_g == 0
    _, adv_d = losses.adversarial_losses(ones, zeros)
    assert adv_d == 0
    _, adv_d = losses.adversarial_losses(zeros, ones)
    assert adv_d == pytest.approx(2.0)


def test_adversarial_empty_lists():
    with pytest.raises(LossError):
        losses.adversarial_losses([], [])


def test_feature_matching():
    real = [[torch.randn(2, 4, 5), torch.randn(2, 3)]]
    assert losses.feature_matching_loss(real, real) == 0
    single = [[torch.randn(3, 7)]]
    shifted = [[single[0][0] + 0.5]]
    assert losses.feature_matching_loss(single, shifted) == pytest.approx(1.0)
    with pytest.raises(LossError):
        losses.feature_matching_loss(real, [[real[0][0]]])


def test_feature_matching_treats_real_as_constant():
    real = torch.randn(4, requires_grad=True)
    fake = torch.randn(4, requires_grad=True)
    losses.feature_matching_loss([[real]], [[fake]]).backward()
    assert real.grad is None and fake.grad is not None


def test_embedding_l1_hand_case():
    assert losses.embedding_l1(torch.tensor([1.0, 2.0]), torch.tensor([0.0, 0.0])) == 3.0


@pytest.fixture
def spk():
    torch.manual_seed(0)
    return SpeakerEncoder(hidden=16, embedding=8)


def test_scl_identity(spk):
    t = torch.rand(2, 8960) - 0.5
    assert losses.speaker_consistency_loss(t, t.clone(), spk) == 0


def test_scl_length_gate(spk):
    with pytest.raises(LossError):
        losses.speaker_consistency_loss(torch.zeros(1, 8960), torch.zeros(1, 9280), spk)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000))
def test_scl_symmetric_and_non_negative(seed):
    torch.manual_seed(0)
    enc = SpeakerEncoder(hidden=8, num_layers=1, embedding=4)
    g = torch.Generator().manual_seed(seed)
    t = torch.rand(1, 3200, generator=g) - 0.5
    h = torch.rand(1, 3200, generator=g) - 0.5
    a = losses.speaker_consistency_loss(t, h, enc)
    b = losses.speaker_consistency_loss(h, t, enc)
    assert a >= 0
    torch.testing.assert_close(a, b)


def test_scl_embedding_gradient_matches_central_differences():
    rng = np.random.default_rng(0)
    e_t = torch.tensor(rng.standard_normal(16), dtype=torch.float64, requires_grad=True)
    e_h = torch.tensor(rng.standard_normal(16), dtype=torch.float64, requires_grad=True)
    losses.embedding_l1(e_t, e_h).backward()
    eps = 1e-6
    for vec, grad in ((e_t, e_t.grad), (e_h, e_h.grad)):
        for i in range(16):
            with torch.no_grad():
                vec[i] += eps
                up = losses.embedding_l1(e_t, e_h)
                vec[i] -= 2 * eps
                down = losses.embedding_l1(e_t, e_h)
                vec[i] += eps
            fd = float(up - down) / (2 * eps)
            assert fd == pytest.approx(float(grad[i]), rel=1e-4)


def test_scl_waveform_gradient_matches_central_differences():
    torch.manual_seed(0)
    enc = SpeakerEncoder(hidden=8, num_layers=3, embedding=6).double()
    g = torch.Generator().manual_seed(1)
    t = (torch.rand(1, 3200, generator=g, dtype=torch.float64) - 0.5)
    h = (torch.rand(1, 3200, generator=g, dtype=torch.float64) - 0.5).requires_grad_(True)
    loss = losses.speaker_consistency_loss(t, h, enc)
    (grad,) = torch.autograd.grad(loss, h)
    v = torch.randn(1, 3200, generator=g, dtype=torch.float64)
    v = v / v.norm()
    eps = 1e-6
    with torch.no_grad():
        fd = (losses.speaker_consistency_loss(t, h + eps * v, enc)
              - losses.speaker_consistency_loss(t, h - eps * v, enc)) / (2 * eps)
    analytic = float((grad * v).sum())
    assert float(fd) == pytest.approx(analytic, rel=1e-4)


def test_total_generator_loss():
    assert losses.total_generator_loss(1, 1, 1, 1, 1, 1.0) == 5
    assert losses.total_generator_loss(1, 1, 1, 1, 7, 0.0) == 4
    with pytest.raises(TrainingFault) as exc:
        losses.total_generator_loss(1, float("nan"), 1, 1, 1)
    assert exc.value.term == "kl"


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=5, max_size=5), st.floats(-100, 100), st.floats(0, 2))
def test_total_is_linear_in_each_part(parts, delta, w):
    base = losses.total_generator_loss(*parts, scl_weight=w)
    for i in range(5):
        bumped = list(parts)
        bumped[i] += delta
        coef = w if i == 4 else 1.0
        assert losses.total_generator_loss(*bumped, scl_weight=w) == pytest.approx(
            base + coef * delta, abs=1e-6)


def _scl_only_grads(cfg, weight):
    torch.manual_seed(0)
    net = Generator(cfg.model)
    mel = torch.randn(2, 80, 40)
    g = net.enc_spk(mel)
    z = torch.randn(2, cfg.model.latent_channels, 28)
    y_hat = net.dec(z, g=g)
    y = torch.rand(2, 8960) - 0.5
    scl = losses.speaker_consistency_loss(y, y_hat, net.enc_spk)
    zero = torch.zeros(())
    total = losses.total_generator_loss(zero, zero, zero, zero, scl, weight)
    params = list(net.named_parameters())
    grads = torch.autograd.grad(total, [p for _, p in params], allow_unused=True)
    return {n: (torch.zeros_like(p) if gr is None else gr) for (n, p), gr in zip(params, grads)}


def test_gradient_routing(tiny_cfg):
    grads = _scl_only_grads(tiny_cfg, 1.0)
    assert any(v.norm() > 0 for k, v in grads.items() if k.startswith("enc_spk."))
    assert any(v.norm() > 0 for k, v in grads.items() if k.startswith("dec."))
    grads = _scl_only_grads(tiny_cfg, 0.0)
    assert all(torch.count_nonzero(v) == 0 for v in grads.values())
