import math

import numpy as np
import pytest

from mixcycle.config import ALL_KEYS, RunConfig, derive_seed, load_config, parse_config_text
from mixcycle.cycles import CycleConfig, FitConfig
from mixcycle.dataio import SuiteConfig
from mixcycle.errors import ConfigError
from mixcycle.tracking import GridMatchParams


def test_defaults_match_library_defaults():
    cfg = RunConfig()
    assert cfg.suite() == SuiteConfig()
    assert cfg.tracker_params() == GridMatchParams()
    assert cfg.fit() == FitConfig()
    assert cfg.cycle(0) == CycleConfig()


def test_parse_types_and_comments():
    text = """
    # comment line
    n_frames = 7   # trailing comment
    speed_m_per_frame = 0.1, 0.4
    rho = 1, 0.5, 0, 2
    categories = car, pedestrian
    fit_method = cem
    """
    v = parse_config_text(text)
    assert v == {
        "n_frames": 7,
        "speed_m_per_frame": (0.1, 0.4),
        "rho": (1.0, 0.5, 0.0, 2.0),
        "categories": ("car", "pedestrian"),
        "fit_method": "cem",
    }
    cfg = RunConfig(v)
    assert cfg.suite().n_frames == 7
    assert cfg.cycle(3).loss.rho == (1.0, 0.5, 0.0, 2.0)


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match="sigmaa"):
        parse_config_text("sigmaa = 0.3\n", "run.cfg")


@pytest.mark.parametrize(
    "text",
    ["n_frames = lots", "n_frames 7", "= 3", "speed_m_per_frame = 0.1", "n_frames = 2\nn_frames = 3"],
)
def test_malformed_lines(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_semantic_errors_surface_as_config_errors():
    with pytest.raises(ConfigError):
        RunConfig({"sigma_m": -1.0}).tracker_params()
    with pytest.raises(ConfigError):
        RunConfig({"pos_dist_m": 0.9}).cycle(0)
    with pytest.raises(ConfigError):
        RunConfig({"fit_method": "adam"}).fit()


def test_degrees_become_radians():
    b = RunConfig({"xform_max_dtheta_deg": 90.0}).cycle(0).xform_bounds
    assert b.max_dtheta == pytest.approx(math.pi / 2)


def test_load_config(tmp_path):
    assert load_config(None) == RunConfig()
    p = tmp_path / "a.cfg"
    p.write_text("iterations = 3\n")
    assert load_config(p).fit().iterations == 3
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")


def test_snapshot_lists_every_key():
    snap = RunConfig({"n_frames": 4}).snapshot()
    assert set(snap) == set(ALL_KEYS) and snap["n_frames"] == 4


def test_derived_seeds():
    assert derive_seed(0, "train") == derive_seed(0, "train")
    assert len({derive_seed(0, n) for n in ("train", "eval", "mix", "synth")}) == 4
    assert derive_seed(0, "train") != derive_seed(1, "train")
    np.random.default_rng(derive_seed(2**40, "x"))
