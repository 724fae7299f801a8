"""Flat ``key = value`` run configuration with units spelled out in key names."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .cycles import DEFAULT_PARAM_BOUNDS, CycleConfig, FitConfig
from .errors import ConfigError
from .geometry import XformBounds
from .dataio import SuiteConfig
from .losses import LossConfig
from .sotmixup import MixConfig
from .tracking import GridMatchParams

_RANGE = "range"  # "lo, hi"
_FLOATS = "floats"
_STRS = "strs"

# key -> (kind, default)
SUITE_KEYS = {
    "n_tracklets": (int, 10),
    "n_frames": (int, 20),
    "categories": (_STRS, ("car",)),
    "width_m": (_RANGE, (1.6, 2.0)),
    "length_m": (_RANGE, (3.8, 4.8)),
    "height_m": (_RANGE, (1.4, 1.8)),
    "n_points": (_RANGE, (80, 250)),
    "speed_m_per_frame": (_RANGE, (0.2, 1.2)),
    "yaw_rate_deg_per_frame": (_RANGE, (-2.0, 2.0)),
    "clutter_density_per_m2": (float, 1.0),
    "dropout": (_RANGE, (0.1, 0.4)),
    "noise_std_m": (float, 0.02),
    "n_distractors": (_RANGE, (0, 3)),
    "distractor_gap_m": (_RANGE, (2.0, 3.0)),
    "arena_margin_m": (float, 6.0),
}

CYCLE_KEYS = {
    "n_steps": (int, 2),
    "xform_max_dx_m": (float, 0.3),
    "xform_max_dy_m": (float, 0.3),
    "xform_max_dz_m": (float, 0.0),
    "xform_max_dtheta_deg": (float, 5.0),
    "mix_eta": (float, 0.5),
    "rho": (_FLOATS, (1.0, 1.0, 1.0, 1.0)),
    "gamma1": (float, 1.0),
    "gamma2": (float, 2.0),
    "pos_dist_m": (float, 0.3),
    "neg_dist_m": (float, 0.6),
    "search_radius_m": (float, 2.0),
    "template_cap_points": (int, 512),
}

FIT_KEYS = {
    "fit_method": (str, "cem"),
    "objective": (str, "mixcycle"),
    "population": (int, 32),
    "elite_frac": (float, 0.25),
    "iterations": (int, 30),
    "batch_size": (int, 16),
    "init_std": (float, 0.25),
    "min_std": (float, 0.02),
    "sigma_m_bounds": (_RANGE, DEFAULT_PARAM_BOUNDS["sigma"]),
    "motion_weight_per_m_bounds": (_RANGE, DEFAULT_PARAM_BOUNDS["motion_weight"]),
    "temperature_bounds": (_RANGE, DEFAULT_PARAM_BOUNDS["temperature"]),
    "grid_extent_m_bounds": (_RANGE, DEFAULT_PARAM_BOUNDS["grid_extent"]),
    "grid_step_m_bounds": (_RANGE, DEFAULT_PARAM_BOUNDS["grid_step"]),
}

TRACKER_KEYS = {
    "sigma_m": (float, 0.3),
    "motion_weight_per_m": (float, 0.1),
    "temperature": (float, 10.0),
    "grid_extent_m": (float, 1.5),
    "grid_step_m": (float, 0.15),
    "yaw_steps": (int, 5),
}

ALL_KEYS = {**SUITE_KEYS, **CYCLE_KEYS, **FIT_KEYS, **TRACKER_KEYS}


def _parse_value(key: str, kind, text: str, where: str):
    try:
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind is str:
            return text
        parts = [p.strip() for p in text.split(",") if p.strip()]
        if kind == _STRS:
            return tuple(parts)
        nums = tuple(float(p) for p in parts)
        if kind == _RANGE and len(nums) != 2:
            raise ValueError("expected 'low, high'")
        return nums
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for {key!r}: {exc}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse and type-check; returns only the keys that were set."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        where = f"{source}:{lineno}"
        if not sep or not key:
            raise ConfigError(f"{where}: expected 'key = value'")
        if key not in ALL_KEYS:
            raise ConfigError(f"{where}: unknown config key {key!r}")
        if key in out:
            raise ConfigError(f"{where}: duplicate config key {key!r}")
        out[key] = _parse_value(key, ALL_KEYS[key][0], value, where)
    return out


@dataclass(frozen=True)
class RunConfig:
    values: dict = field(default_factory=dict)

    def get(self, key):
        return self.values.get(key, ALL_KEYS[key][1])

    def snapshot(self) -> dict:
        """Every key with its effective value, for the run manifest."""
        return {k: _jsonable(self.get(k)) for k in sorted(ALL_KEYS)}

    def suite(self) -> SuiteConfig:
        kw = {k: self.get(k) for k in SUITE_KEYS}
        kw["n_points"] = tuple(int(v) for v in kw["n_points"])
        kw["n_distractors"] = tuple(int(v) for v in kw["n_distractors"])
        names = {f.name for f in fields(SuiteConfig)}
        assert set(kw) == names
        if kw["n_tracklets"] < 0 or kw["n_frames"] < 1:
            raise ConfigError("n_tracklets must be >= 0 and n_frames >= 1")
        return SuiteConfig(**kw)

    def cycle(self, seed: int) -> CycleConfig:
        g = self.get
        try:
            return CycleConfig(
                n_steps=g("n_steps"),
                xform_bounds=XformBounds(
                    g("xform_max_dx_m"),
                    g("xform_max_dy_m"),
                    g("xform_max_dz_m"),
                    math.radians(g("xform_max_dtheta_deg")),
                ),
                mix=MixConfig(g("mix_eta")),
                loss=LossConfig(
                    tuple(g("rho")), g("gamma1"), g("gamma2"), g("pos_dist_m"), g("neg_dist_m")
                ),
                seed=seed,
                search_radius=g("search_radius_m"),
                template_cap=g("template_cap_points"),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def fit(self, objective: str | None = None) -> FitConfig:
        g = self.get
        return FitConfig(
            method=g("fit_method"),
            population=g("population"),
            elite_frac=g("elite_frac"),
            iterations=g("iterations"),
            batch_size=g("batch_size"),
            init_std=g("init_std"),
            min_std=g("min_std"),
            param_bounds={
                "sigma": g("sigma_m_bounds"),
                "motion_weight": g("motion_weight_per_m_bounds"),
                "temperature": g("temperature_bounds"),
                "grid_extent": g("grid_extent_m_bounds"),
                "grid_step": g("grid_step_m_bounds"),
            },
            objective=objective or g("objective"),
        )

    def tracker_params(self) -> GridMatchParams:
        g = self.get
        try:
            return GridMatchParams(
                sigma=g("sigma_m"),
                motion_weight=g("motion_weight_per_m"),
                temperature=g("temperature"),
                grid_extent=g("grid_extent_m"),
                grid_step=g("grid_step_m"),
                yaw_steps=g("yaw_steps"),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


def _jsonable(v):
    return list(v) if isinstance(v, tuple) else v


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {path}") from exc
    return RunConfig(parse_config_text(text, str(path)))


def derive_seed(root: int, consumer: str) -> int:
    """Independent, stable child seed for one named consumer of the root seed."""
    ss = np.random.SeedSequence([int(root), zlib.crc32(consumer.encode())])
    return int(ss.generate_state(1, dtype=np.uint32)[0])
