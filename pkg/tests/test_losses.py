import numpy as np
import pytest

from pwgan import tensor as T
from pwgan.dsp import StftConfig, stft_magnitude
from pwgan.losses import (TABLE1_RESOLUTIONS, DegenerateReferenceError, LossWeights, MultiResConfig,
                          adv_loss_generator, log_stft_magnitude, loss_discriminator, loss_generator_total, mean_of_terms,
                          multi_res_stft_loss, spectral_convergence, stft_loss)
from pwgan.tensor import Tensor

from gradcheck import check_gradients
from oracles import naive_log_mag, naive_sc

RNG = np.random.default_rng(3)
CFG = StftConfig(1024, 600, 120)


def _pair(n=2048):
    return RNG.standard_normal(n) * 0.3, RNG.standard_normal(n) * 0.2


# ------------------------------------------------------------------ STFT losses

def test_identical_signals_give_zero():
    x, _ = _pair()
    assert spectral_convergence(x, x, CFG).item() < 1e-12
    assert log_stft_magnitude(x, x, CFG).item() == 0.0
    assert stft_loss(x, x, CFG).item() < 1e-12
    assert multi_res_stft_loss(x, x).item() < 1e-12


def test_sc_against_zero_prediction():
    x, _ = _pair()
    v = spectral_convergence(x, np.zeros_like(x), CFG).item()
    assert 1.0 - 1e-6 < v <= 1.0


def test_log_mag_of_scaled_copy_is_one():
    t = np.arange(4096)
    # broadband clip: white noise + a tone keeps every cell well above 1e-3
    x = 0.5 * RNG.standard_normal(4096) + 0.3 * np.sin(0.3 * t)
    assert stft_magnitude(x, CFG).data.min() > 1e-3
    v = log_stft_magnitude(x, np.e * x, CFG).item()
    assert v == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("cfg", TABLE1_RESOLUTIONS, ids=str)
def test_losses_match_naive_dft(cfg):
    x, y = _pair()
    assert abs(spectral_convergence(x, y, cfg).item() - naive_sc(x, y, cfg)) < 1e-9
    assert abs(log_stft_magnitude(x, y, cfg).item() - naive_log_mag(x, y, cfg)) < 1e-9
    total = naive_sc(x, y, cfg) + naive_log_mag(x, y, cfg)
    assert stft_loss(x, y, cfg).item() == pytest.approx(total, abs=1e-9)


def test_multi_res_is_mean_of_single_losses():
    x, y = _pair(4096)
    singles = [naive_sc(x, y, c) + naive_log_mag(x, y, c) for c in TABLE1_RESOLUTIONS]
    assert multi_res_stft_loss(x, y).item() == pytest.approx(np.mean(singles), abs=1e-9)


def test_multi_res_single_resolution_equals_stft_loss():
    x, y = _pair()
    assert multi_res_stft_loss(x, y, MultiResConfig((CFG,))).item() == stft_loss(x, y, CFG).item()


def test_multi_res_rejects_short_clip():
    with pytest.raises(ValueError, match="largest window"):
        multi_res_stft_loss(np.ones(1000), np.ones(1000))


def test_degenerate_reference():
    with pytest.raises(DegenerateReferenceError):
        spectral_convergence(np.zeros(2048), RNG.standard_normal(2048), CFG)


def test_sc_scale_invariance():
    x, y = _pair()
    a = spectral_convergence(x, y, CFG).item()
    b = spectral_convergence(7.5 * x, 7.5 * y, CFG).item()
    assert abs(a - b) < 1e-9


def test_losses_non_negative():
    for _ in range(5):
        x, y = _pair()
        assert stft_loss(x, y, CFG).item() >= 0
        assert multi_res_stft_loss(x, y).item() >= 0


def test_batched_losses_average_clips():
    x = RNG.standard_normal((3, 2048))
    y = RNG.standard_normal((3, 2048))
    per = [spectral_convergence(x[i], y[i], CFG).item() for i in range(3)]
    assert spectral_convergence(x, y, CFG).item() == pytest.approx(np.mean(per), rel=1e-12)
    per = [log_stft_magnitude(x[i], y[i], CFG).item() for i in range(3)]
    assert log_stft_magnitude(x, y, CFG).item() == pytest.approx(np.mean(per), rel=1e-12)


@pytest.mark.parametrize("fn", [spectral_convergence, log_stft_magnitude, stft_loss])
def test_loss_gradients(fn):
    x = RNG.standard_normal(1024) * 0.3
    y = Tensor(RNG.standard_normal(1024) * 0.3)
    cfg = StftConfig(256, 240, 50)
    assert check_gradients(lambda: fn(x, y, cfg), [y], max_per_leaf=60) < 1e-5


def test_multi_res_gradient():
    x = RNG.standard_normal(1500) * 0.3
    y = Tensor(RNG.standard_normal(1500) * 0.3)
    assert check_gradients(lambda: multi_res_stft_loss(x, y), [y], max_per_leaf=30) < 1e-5


# ------------------------------------------------------------------ adversarial

def _const(v, n=50):
    return Tensor(np.full(n, v))


@pytest.mark.parametrize("d, expected", [(1.0, 0.0), (0.0, 1.0), (0.5, 0.25)])
def test_adv_loss_generator(d, expected):
    assert abs(adv_loss_generator(_const(d)).item() - expected) < 1e-12


@pytest.mark.parametrize("real, fake, expected", [(1.0, 0.0, 0.0), (0.0, 1.0, 2.0), (0.5, 0.5, 0.5)])
def test_loss_discriminator(real, fake, expected):
    assert abs(loss_discriminator(_const(real), _const(fake)).item() - expected) < 1e-12


@pytest.mark.parametrize("aux, adv, lam, expected", [(0.5, 0.1, 4.0, 0.9), (0.5, 0.1, 0.0, 0.5), (0.0, 1.0, 4.0, 4.0)])
def test_generator_total(aux, adv, lam, expected):
    v = loss_generator_total(Tensor(aux), Tensor(adv), LossWeights(lam)).item()
    assert abs(v - expected) < 1e-12


def test_combination_arithmetic():
    assert mean_of_terms([(Tensor(0.3), Tensor(0.7))]).item() == 1.0
    terms = [(Tensor(v), Tensor(0.0)) for v in (0.6, 0.9, 1.5)]
    assert abs(mean_of_terms(terms).item() - 1.0) < 1e-12
    x, y = _pair()
    parts = spectral_convergence(x, y, CFG).item() + log_stft_magnitude(x, y, CFG).item()
    assert stft_loss(x, y, CFG).item() == parts


def test_mean_of_squares_not_square_of_mean():
    d = Tensor(np.array([0.0, 1.0]))
    assert adv_loss_generator(d).item() == 0.5  # averaging predictions first would give 0.25


def test_lsgan_fixed_point_by_direct_minimisation():
    # gradient descent on scalar (a, b) for the discriminator objective
    a, b = Tensor(0.3, requires_grad=True), Tensor(0.8, requires_grad=True)
    for _ in range(2000):
        a.grad = b.grad = None
        loss = loss_discriminator(T.reshape(a, (1,)), T.reshape(b, (1,)))
        loss.backward()
        a.data = a.data - 0.05 * a.grad
        b.data = b.data - 0.05 * b.grad
    assert abs(a.item() - 1.0) < 1e-9 and abs(b.item()) < 1e-9


def test_lambda_must_be_non_negative():
    with pytest.raises(ValueError):
        LossWeights(-1.0)


def test_adversarial_gradients():
    d = Tensor(RNG.standard_normal(40))
    r = Tensor(RNG.standard_normal(40))
    assert check_gradients(lambda: adv_loss_generator(d), [d]) < 1e-6
    assert check_gradients(lambda: loss_discriminator(r, d), [r, d]) < 1e-6
