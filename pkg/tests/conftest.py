import numpy as np
import pytest

from pwgan.config import TrainConfig
from pwgan.corpus import synth_clip, utterances_from_clips
from pwgan.dsp import MelConfig, compute_stats

TOY = TrainConfig(
    gen_layers=4, gen_cycles=1, gen_channels=8, gen_skip_channels=8,
    disc_layers=4, disc_channels=4,
    total_steps=20, d_frozen_steps=10, decay_half_every=8,
    batch_size=2, clip_samples=2400, checkpoint_interval=10, eval_interval=10, seed=3,
)


@pytest.fixture(scope="session")
def toy_cfg() -> TrainConfig:
    return TOY


@pytest.fixture(scope="session")
def toy_data():
    """(stats, train utterances, held-out utterances) from seeded synthetic clips."""
    rng = np.random.default_rng(0)
    clips = [synth_clip(rng) for _ in range(8)]
    stats = compute_stats(clips, MelConfig())
    utts = utterances_from_clips(clips, MelConfig(), stats)
    return stats, utts[:6], utts[6:]


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)
