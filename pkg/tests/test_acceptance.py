"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected into an "acceptance criteria" section of the
pytest terminal summary. Criterion 6 trains the desk-scale preset end to end
and dominates the runtime (about 1.5 h on one core).
"""

import math
import time

import numpy as np
import pytest

from pwgan import tensor as T
from pwgan.cli import main
from pwgan.config import PRESETS, TrainConfig
from pwgan.dsp import stft_magnitude
from pwgan.losses import (TABLE1_RESOLUTIONS, LossWeights, adv_loss_generator, log_stft_magnitude,
                          loss_discriminator, loss_generator_total, multi_res_stft_loss, spectral_convergence,
                          stft_loss)
from pwgan.models import Discriminator, DiscriminatorConfig, Generator, GeneratorConfig
from pwgan.synthbench import benchmark, context_frames, generate, synthesize, synthesize_chunked
from pwgan.tensor import Tensor
from pwgan.train import (TrainState, checkpoint_path, make_batch, read_metrics, run_training, train_step)

from acceptance_report import record
from gradcheck import check_gradients
from oracles import naive_log_mag, naive_sc, naive_stft_mag


def _verdict(number, title, ok, detail):
    assert record(number, title, ok, detail), detail


# ------------------------------------------------------------------ 1

def test_criterion_1_param_count():
    t0 = time.perf_counter()
    g = Generator(GeneratorConfig(), seed=0)
    n_gen = g.param_count(include_upsampler=False)
    n_all = g.param_count(include_upsampler=True)
    elapsed = time.perf_counter() - t0
    ok = 1_300_000 <= n_gen <= 1_580_000 and elapsed < 1.0
    _verdict(1, "parameter count", ok,
             f"generator-only {n_gen:,}, with upsampler {n_all:,} (target 1.44 M, range 1.30-1.58 M), {elapsed:.2f} s")


# ------------------------------------------------------------------ 2

def _op_cases(rng):
    def leaf(*shape, away_from_zero=False):
        v = rng.standard_normal(shape)
        if away_from_zero:
            v = np.sign(v) * (0.2 + np.abs(v))
        return Tensor(v)

    probes = {}

    def probe_sum(name, y):
        # one fixed random projection per op, reused by every evaluation
        if name not in probes:
            probes[name] = Tensor(rng.standard_normal(y.shape))
        return T.sum(y * probes[name])

    a, b = leaf(3, 5), leaf(3, 5)
    pos = Tensor(rng.uniform(0.5, 2.0, (3, 5)))
    kink = leaf(3, 5, away_from_zero=True)
    x1, w1, b1 = leaf(3, 40), leaf(4, 3, 3), leaf(4)
    x2, w2, b2 = leaf(2, 6, 7), leaf(3, 2, 3, 5), leaf(3)
    xu, wu, bu = leaf(1, 4, 5), leaf(1, 1, 3, 7), leaf(1)
    frames = leaf(3, 16)
    sig = leaf(64)
    v, gmag = leaf(4, 3, 3), Tensor(rng.uniform(0.5, 2.0, 4))
    parts = [leaf(2, 3), leaf(2, 4)]
    cases = {
        "add": ([a, b], lambda: T.add(a, b)), "sub": ([a, b], lambda: T.sub(a, b)),
        "mul": ([a, b], lambda: T.mul(a, b)), "div": ([a, pos], lambda: T.div(a, pos)),
        "scale": ([a], lambda: T.scale(a, -2.5)), "add_scalar": ([a], lambda: T.add_scalar(a, 0.7)),
        "neg": ([a], lambda: T.neg(a)), "tanh": ([a], lambda: T.tanh(a)), "sigmoid": ([a], lambda: T.sigmoid(a)),
        "relu": ([kink], lambda: T.relu(kink)), "leaky_relu": ([kink], lambda: T.leaky_relu(kink, 0.2)),
        "abs": ([kink], lambda: T.abs(kink)), "log": ([pos], lambda: T.log(pos)),
        "sqrt": ([pos], lambda: T.sqrt(pos)), "square": ([a], lambda: T.square(a)),
        "sum": ([a], lambda: T.sum(a, axis=1)), "mean": ([a], lambda: T.mean(a, axis=0)),
        "frobenius_norm": ([a], lambda: T.frobenius_norm(a)), "l1_norm": ([kink], lambda: T.l1_norm(kink)),
        "reshape": ([a], lambda: T.reshape(a, (5, 3))), "split": ([a], lambda: T.split(a, 3, axis=0)[1]),
        "concat": (parts, lambda: T.concat(parts, axis=1)), "repeat": ([a], lambda: T.repeat(a, 3)),
        "conv1d": ([x1, w1, b1], lambda: T.conv1d(x1, w1, b1, dilation=4)),
        "conv1d_valid": ([x1, w1, b1], lambda: T.conv1d(x1, w1, b1, dilation=2, padding="none")),
        "conv2d": ([x2, w2, b2], lambda: T.conv2d(x2, w2, b2)),
        "upsample_conv2d": ([xu, wu, bu], lambda: T.upsample_conv2d(xu, wu, bu, 3)),
        "rdft_re": ([frames], lambda: T.rdft(frames)[0]), "rdft_im": ([frames], lambda: T.rdft(frames)[1]),
        "frame": ([sig], lambda: T.frame(sig, 24, 10, np.hanning(24), 32)),
        "weight_norm": ([v, gmag], lambda: T.weight_norm(v, gmag)),
    }
    return {name: (leaves, lambda name=name, fn=fn: probe_sum(name, fn())) for name, (leaves, fn) in cases.items()}


def test_criterion_2_gradients():
    rng = np.random.default_rng(2024)
    ops = {}
    for name, (leaves, build) in _op_cases(rng).items():
        ops[name] = check_gradients(build, leaves)
    worst_op = max(ops, key=ops.get)

    # toy pipeline: 4 layers, 8 channels, T = 2048 (hop 256 so the length is a whole number of frames)
    cfg = GeneratorConfig(layers=4, cycles=1, residual_channels=8, skip_channels=8, hop=256,
                          upsample_scales=(4, 4, 4, 4))
    g = Generator(cfg, seed=3)
    z = Tensor(rng.standard_normal((1, 2048)))
    mel = Tensor(rng.standard_normal((80, 8)))
    x = 0.3 * np.sin(np.arange(2048) * 0.05) + 0.05 * rng.standard_normal(2048)

    def pipeline():
        return multi_res_stft_loss(x, T.reshape(g(z, mel), (2048,)))

    # the log-magnitude loss is smooth but stiff (4-point truncation error at h = 1e-4 is ~5e-3),
    # and each parameter feeds thousands of ReLUs, a few of them within h of the kink
    t0 = time.perf_counter()
    params = g.parameters()
    with T.no_grad():
        # ten times the stencil's rounding bound eps * |L| / h; only derivatives near 1e-8 feel it
        noise = 10 * np.finfo(float).eps * abs(pipeline().item()) / 1e-5
    stats = {}
    check = dict(h=1e-5, freeze_kinks=True, noise=noise, stats=stats)
    worst_params = check_gradients(pipeline, params, **check)
    worst_inputs = check_gradients(pipeline, [z, mel], max_per_leaf=100, rng=np.random.default_rng(1), **check)
    elapsed = time.perf_counter() - t0
    n_checked = sum(p.size for p in params) + 200
    ok = ops[worst_op] < 1e-6 and max(worst_params, worst_inputs) < 1e-4
    _verdict(2, "gradient suite", ok,
             f"{len(ops)} ops, worst {worst_op} {ops[worst_op]:.1e} (< 1e-6); toy pipeline {n_checked} elements, "
             f"worst {max(worst_params, worst_inputs):.1e} (< 1e-4; |a - n| <= {noise:.0e} is stencil noise; "
             f"raw worst {stats['raw']:.1e}, largest |a - n| {stats['gap']:.1e}) in {elapsed / 60:.1f} min")


# ------------------------------------------------------------------ 3

def test_criterion_3_oracles():
    rng = np.random.default_rng(33)
    worst = {"stft_magnitude": 0.0, "spectral_convergence": 0.0, "log_stft_magnitude": 0.0}
    for _ in range(20):
        x = rng.standard_normal(4800) * rng.uniform(0.05, 1.0)
        y = rng.standard_normal(4800) * rng.uniform(0.05, 1.0)
        for cfg in TABLE1_RESOLUTIONS:
            ref = naive_stft_mag(x, cfg.fft_size, cfg.win_size, cfg.hop)
            mag = stft_magnitude(x, cfg).data
            worst["stft_magnitude"] = max(worst["stft_magnitude"], float(np.max(np.abs(mag - ref) / ref)))
            sc, sc_ref = spectral_convergence(x, y, cfg).item(), naive_sc(x, y, cfg)
            worst["spectral_convergence"] = max(worst["spectral_convergence"], abs(sc - sc_ref) / sc_ref)
            lm, lm_ref = log_stft_magnitude(x, y, cfg).item(), naive_log_mag(x, y, cfg)
            worst["log_stft_magnitude"] = max(worst["log_stft_magnitude"], abs(lm - lm_ref) / lm_ref)
    ok = all(v < 1e-9 for v in worst.values())
    _verdict(3, "oracle equivalence", ok,
             "20 clips x 3 resolutions, worst relative: " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


# ------------------------------------------------------------------ 4

def test_criterion_4_closed_forms():
    def const(v, n=64):
        return Tensor(np.full(n, v))

    x = np.random.default_rng(4).standard_normal(2048)
    checks = {
        "L_adv(d=0.5)=0.25": (adv_loss_generator(const(0.5)).item(), 0.25),
        "L_adv(d=1)=0": (adv_loss_generator(const(1.0)).item(), 0.0),
        "L_adv(d=0)=1": (adv_loss_generator(const(0.0)).item(), 1.0),
        "L_D(1,0)=0": (loss_discriminator(const(1.0), const(0.0)).item(), 0.0),
        "L_D(0,1)=2": (loss_discriminator(const(0.0), const(1.0)).item(), 2.0),
        "L_D(0.5,0.5)=0.5": (loss_discriminator(const(0.5), const(0.5)).item(), 0.5),
        "L_G(0.5,0.1,4)=0.9": (loss_generator_total(Tensor(0.5), Tensor(0.1), LossWeights(4.0)).item(), 0.9),
        "L_G(0.5,0.1,0)=0.5": (loss_generator_total(Tensor(0.5), Tensor(0.1), LossWeights(0.0)).item(), 0.5),
        "L_s(x,x)=0": (stft_loss(x, x, TABLE1_RESOLUTIONS[0]).item(), 0.0),
        "L_aux(x,x)=0": (multi_res_stft_loss(x, x).item(), 0.0),
    }
    errors = {k: abs(got - want) for k, (got, want) in checks.items()}
    worst = max(errors, key=errors.get)
    _verdict(4, "closed-form losses", errors[worst] <= 1e-12,
             f"{len(checks)} identities, worst {worst} off by {errors[worst]:.1e} (<= 1e-12)")


# ------------------------------------------------------------------ 5

def _half_width(fn, length, t0, rng):
    # a NaN reaches every output that structurally reads it, however small the
    # weights on the path; a finite bump can vanish below one ulp at the edges
    z = rng.standard_normal(length)
    z[t0] = np.nan
    reached = np.flatnonzero(np.isnan(fn(z)))
    return t0 - reached.min(), reached.max() - t0


def test_criterion_5_locality():
    rng = np.random.default_rng(5)
    g = Generator(GeneratorConfig(), seed=0)
    mel = rng.standard_normal((80, 24))
    g_left, g_right = _half_width(lambda z: generate(g, z[None], mel), 24 * 300, 3600, rng)

    d = Discriminator(DiscriminatorConfig(), seed=1)

    def disc(x):
        with T.no_grad():
            return d(Tensor(x[None])).data

    d_left, d_right = _half_width(disc, 400, 200, rng)

    frames = 40
    mel = rng.standard_normal((80, frames))
    z = rng.standard_normal((1, frames * 300))
    whole = generate(g, z, mel)
    overlap = context_frames(g)
    chunked = {c: np.array_equal(synthesize_chunked(g, z, mel, c), whole) for c in (7, 10, 16)}
    ok = (g_left, g_right) == (3069, 3069) and (d_left, d_right) == (38, 38) and all(chunked.values())
    _verdict(5, "locality", ok,
             f"generator half-width {g_left}/{g_right} (3069), discriminator {d_left}/{d_right} (38); "
             f"chunked synthesis with {overlap * 300}-sample overlap bit-identical for chunks "
             f"{[c for c, same in chunked.items() if same]} of {list(chunked)}")


# ------------------------------------------------------------------ 6

@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    assert main(["gen-corpus", "--out", str(root / "wav"), "--minutes", "5", "--seed", "0"]) == 0
    assert main(["prepare", "--in", str(root / "wav"), "--out", str(root / "data")]) == 0
    t0 = time.perf_counter()
    code = main(["train", "--data", str(root / "data"), "--out", str(root / "run"), "--preset", "desk",
                 "--valid-clips", "6", "--log-every", "250"])
    return root / "run", code, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_6_desk_training(desk_run):
    run, code, elapsed = desk_run
    cfg = PRESETS["desk"]
    metrics = read_metrics(run / "metrics.txt")
    valid = {r["step"]: r for r in read_metrics(run / "validation.txt")}
    finite = all(math.isfinite(v) for r in metrics + list(valid.values()) for v in r.values() if isinstance(v, float))
    complete = code == 0 and len(metrics) == cfg.total_steps
    start = valid[0]["val_aux"]
    final = valid[cfg.total_steps]["val_aux"]
    at_unfreeze = valid[cfg.d_frozen_steps]["val_aux"]
    reduction = 1 - final / start

    # per-step training L_aux sees four random segments, so compare 100-step means
    def train_mean(end):
        return float(np.mean([r["l_aux"] for r in metrics[end - 100:end]]))

    train_ratio = train_mean(cfg.total_steps) / train_mean(cfg.d_frozen_steps)
    ok = (complete and finite and reduction >= 0.5 and final <= 1.2 * at_unfreeze and train_ratio <= 1.2
          and elapsed <= 7200)
    _verdict(6, "desk-scale training", ok,
             f"held-out L_aux {start:.3f} -> {final:.3f} ({100 * reduction:.1f}% lower, need >= 50%); "
             f"final / unfreeze = {final / at_unfreeze:.3f} held-out, {train_ratio:.3f} training (<= 1.2); "
             f"finite={finite}; {len(metrics)} steps in {elapsed / 60:.0f} min (<= 120)")


# ------------------------------------------------------------------ 7

def test_criterion_7_inference_speed():
    g = Generator(GeneratorConfig(), seed=0)
    calls = []
    original = Generator.__call__

    def counting(self, *args, **kwargs):
        calls.append(1)
        return original(self, *args, **kwargs)

    Generator.__call__ = counting
    try:
        clip = synthesize(g, np.random.default_rng(7).standard_normal((80, 40)))
    finally:
        Generator.__call__ = original
    rep = benchmark(g, seconds=1.0, trials=3)
    consistent = abs(rep.rtf * rep.wall_seconds - rep.audio_seconds_generated) < 1e-9
    ok = len(calls) == 1 and len(clip) == 12000 and 1.6 <= rep.linearity_ratio <= 2.6 and consistent and rep.rtf > 0
    _verdict(7, "inference speed", ok,
             f"{len(calls)} forward pass per clip; time(2T)/time(T) = {rep.linearity_ratio:.2f} (1.6-2.6); "
             f"rtf = {rep.rtf:.3f} on {rep.threads_used} thread(s), full-scale generator")


# ------------------------------------------------------------------ 8

TOY = TrainConfig(
    gen_layers=4, gen_cycles=1, gen_channels=8, gen_skip_channels=8, disc_layers=4, disc_channels=4,
    total_steps=24, d_frozen_steps=12, decay_half_every=5, batch_size=2, clip_samples=2400,
    checkpoint_interval=6, eval_interval=6, seed=8,
)


def test_criterion_8_determinism(toy_data, tmp_path):
    stats, utts, valid = toy_data
    a = run_training(utts, TOY, tmp_path / "a", stats=stats, valid=valid)
    run_training(utts, TOY, tmp_path / "b", stats=stats, valid=valid)
    same_trace = (tmp_path / "a" / "metrics.txt").read_bytes() == (tmp_path / "b" / "metrics.txt").read_bytes()

    run_training(utts, TOY, tmp_path / "c", stats=stats, valid=valid, stop_at=9)
    c = run_training(utts, TOY, tmp_path / "c", stats=stats, valid=valid, resume=checkpoint_path(tmp_path / "c", 9))
    resumed_trace = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "c" / f).read_bytes()
                        for f in ("metrics.txt", "validation.txt"))
    ta, tc = a.tensors(), c.tensors()
    resumed_state = ta.keys() == tc.keys() and all(ta[k].tobytes() == tc[k].tobytes() for k in ta)

    a.save(tmp_path / "round.pwg")
    back = TrainState.load(tmp_path / "round.pwg")
    tb = back.tensors()
    round_trip = (ta.keys() == tb.keys() and all(ta[k].tobytes() == tb[k].tobytes() for k in ta)
                  and back.cfg == a.cfg and back.step == a.step
                  and (back.opt_g.t, back.opt_d.t) == (a.opt_g.t, a.opt_d.t)
                  and back.rng.bit_generator.state == a.rng.bit_generator.state)
    ok = same_trace and resumed_trace and resumed_state and round_trip
    _verdict(8, "determinism and persistence", ok,
             f"repeat run identical={same_trace}; resume at step 9 identical trace={resumed_trace}, "
             f"final state={resumed_state}; checkpoint round trip bit-exact={round_trip}")


# ------------------------------------------------------------------ 9

@pytest.mark.slow
def test_criterion_9_schedule(toy_data, desk_run, tmp_path):
    stats, utts, _ = toy_data
    state = TrainState.create(TOY, stats)
    initial = {n: p.data.tobytes() for n, p in state.discriminator.named_parameters()}
    frozen_steps_identical = True
    records = []
    while state.step < TOY.total_steps:
        records.append(train_step(state, make_batch(utts, TOY, state.rng)))
        now = {n: p.data.tobytes() for n, p in state.discriminator.named_parameters()}
        if state.step <= TOY.d_frozen_steps:
            frozen_steps_identical &= now == initial
    moved_after = now != initial

    def lr_exact(recs, cfg):
        return all(r["lr_g"] == cfg.lr_g * 2.0 ** -(r["step"] // cfg.decay_half_every)
                   and r["lr_d"] == cfg.lr_d * 2.0 ** -(r["step"] // cfg.decay_half_every) for r in recs)

    toy_lr = lr_exact(records, TOY)

    run, _, _ = desk_run
    desk = PRESETS["desk"]
    desk_lr = lr_exact(read_metrics(run / "metrics.txt"), desk)
    fresh_d = Discriminator(desk.discriminator, seed=desk.seed + 1)
    at_unfreeze = TrainState.load(checkpoint_path(run, desk.d_frozen_steps)).discriminator
    desk_frozen = all(p.data.tobytes() == q.data.tobytes()
                      for p, q in zip(fresh_d.parameters(), at_unfreeze.parameters()))
    ok = toy_lr and desk_lr and frozen_steps_identical and moved_after and desk_frozen
    _verdict(9, "schedule exactness", ok,
             f"lr trace exact: toy={toy_lr}, desk={desk_lr}; D bit-identical through every frozen step "
             f"(toy)={frozen_steps_identical}, at desk unfreeze step {desk.d_frozen_steps}={desk_frozen}; "
             f"D updated once joint={moved_after}")
