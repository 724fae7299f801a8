import math

import numpy as np
import pytest

from mixcycle.dataio import Frame, SynthConfig, Tracklet, synth_sequence
from mixcycle.geometry import Box7


def random_box(rng, spread=3.0):
    return Box7(
        rng.uniform(-spread, spread, 3),
        rng.uniform(0.5, 4.0, 3),
        rng.uniform(-math.pi, math.pi),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def static_tracklet():
    cfg = SynthConfig(n_points=200, n_frames=6)
    return synth_sequence(cfg, seed=3)


@pytest.fixture
def moving_tracklet():
    cfg = SynthConfig(
        velocity=(0.5, 0.0, 0.0),
        n_frames=10,
        clutter_density=0.5,
        dropout=0.2,
        noise_std=0.02,
    )
    return synth_sequence(cfg, seed=11, tracklet_id="mv:1")


class AuditedFrame:
    """Frame stand-in that records every read of its label."""

    def __init__(self, frame: Frame, log: list, key):
        self.cloud = frame.cloud
        self.frame_index = frame.frame_index
        self._label = frame.label
        self._log = log
        self._key = key

    @property
    def label(self):
        self._log.append(self._key)
        return self._label


def audited(tracklets):
    """Copies of ``tracklets`` plus the shared list of (tracklet id, position) label reads."""
    log = []
    out = []
    for t in tracklets:
        frames = tuple(AuditedFrame(f, log, (t.id, i)) for i, f in enumerate(t.frames))
        out.append(Tracklet(frames, t.category, t.id))
    return out, log


ACCEPTANCE_FILE = "test_acceptance.py"


def pytest_terminal_summary(terminalreporter):
    rows = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if ACCEPTANCE_FILE in getattr(rep, "nodeid", "") and rep.when == "call":
                props = dict(rep.user_properties)
                rows.append((props.get("criterion", 99), outcome, props.get("detail", "")))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for crit, outcome, detail in sorted(rows):
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {crit}: {verdict}  {detail}")
