"""Batch command-line driver: synth, sample-labels, train, eval, mix."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, derive_seed, load_config
from .cycles import fit
from .dataio import (
    LabelMask,
    load_kitti_tracklets,
    sample_labels,
    synth_suite,
    write_cloud_bin,
    write_dataset,
)
from .errors import ConfigError, DataError, LoadError, ParseError
from .evaluation import frames_csv, run_ope, summarize, summary_csv
from .sotmixup import MixConfig, sample_lambda, sotmixup
from .tracking import GridMatchParams, GridTracker, OracleTracker

log = logging.getLogger("mixcycle")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3
MANIFEST_NAME = "run_manifest.json"


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_run_manifest(out_dir: Path, command, cfg: RunConfig, seed, inputs, outputs) -> Path:
    """Record what is about to run. Written before any computation starts."""
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": cfg.snapshot(),
        "seed": seed,
        "inputs": {k: (None if v is None else str(v)) for k, v in inputs.items()},
        "outputs": sorted(outputs),
        "version": __version__,
    }
    path = out_dir / MANIFEST_NAME
    path.write_text(_dump_json(manifest))
    return path


def _load_dataset(path) -> list:
    root = Path(path)
    return load_kitti_tracklets(root, root / "manifest.jsonl")


def _read_json(path, what):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise LoadError(path, f"cannot read {what}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.lineno, f"invalid JSON ({exc.msg})") from exc


def cmd_synth(args, cfg: RunConfig) -> None:
    out = Path(args.out)
    write_run_manifest(out, "synth", cfg, args.seed, {}, ["manifest.jsonl", "clouds/"])
    write_dataset(synth_suite(cfg.suite(), derive_seed(args.seed, "synth")), out)


def cmd_sample_labels(args, cfg: RunConfig) -> None:
    out = Path(args.out)
    write_run_manifest(
        out, "sample-labels", cfg, args.seed, {"dataset": args.dataset}, ["label_mask.json"]
    )
    tracklets = _load_dataset(args.dataset)
    try:
        mask = sample_labels(tracklets, args.rate, args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    (out / "label_mask.json").write_text(mask.to_json() + "\n")


def _load_mask(path, tracklets) -> LabelMask:
    mask = LabelMask.from_json(json.dumps(_read_json(path, "label mask")))
    for t in tracklets:
        if t.id not in mask.flags or len(mask.flags[t.id]) != len(t):
            raise DataError(f"label mask {path} does not match tracklet {t.id!r}")
    return mask


def _load_params(path) -> GridMatchParams:
    d = _read_json(path, "tracker parameters")
    try:
        return GridMatchParams.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def cmd_train(args, cfg: RunConfig) -> None:
    out = Path(args.out)
    inputs = {"dataset": args.dataset, "mask": args.mask, "params": args.params}
    write_run_manifest(out, "train", cfg, args.seed, inputs, ["params.json", "train_log.jsonl"])
    tracklets = _load_dataset(args.dataset)
    mask = _load_mask(args.mask, tracklets)
    initial = _load_params(args.params) if args.params else cfg.tracker_params()
    result = fit(
        initial,
        tracklets,
        mask,
        cfg.cycle(derive_seed(args.seed, "train")),
        cfg.fit(args.objective),
    )
    (out / "train_log.jsonl").write_text(result.log_jsonl())
    (out / "params.json").write_text(_dump_json(result.params.to_dict()))


def cmd_eval(args, cfg: RunConfig) -> None:
    out = Path(args.out)
    if args.oracle == bool(args.params):
        raise ConfigError("eval needs exactly one of --params or --oracle")
    inputs = {"dataset": args.dataset, "params": args.params}
    write_run_manifest(out, "eval", cfg, args.seed, inputs, ["frames.csv", "summary.csv"])
    tracklets = _load_dataset(args.dataset)
    tracker = OracleTracker() if args.oracle else GridTracker(_load_params(args.params))
    seed = derive_seed(args.seed, "eval")
    results = []
    for t in sorted(tracklets, key=lambda t: t.id):
        if len(t) < 2 or any(f.label is None for f in t.frames):
            log.warning("skipping tracklet %s: needs >= 2 frames, all with boxes", t.id)
            continue
        results.append(run_ope(tracker, t, seed=seed))
    if not results:
        raise DataError("no tracklet in the dataset can be evaluated")
    (out / "frames.csv").write_text(frames_csv(results))
    (out / "summary.csv").write_text(summary_csv(summarize(results)))


def _find_frame(tracklets, ref: str):
    tid, sep, idx = ref.rpartition("@")
    if not sep:
        raise ConfigError(f"frame reference {ref!r} must look like TRACKLET_ID@INDEX")
    try:
        idx = int(idx)
    except ValueError:
        raise ConfigError(f"frame reference {ref!r} has a non-integer index") from None
    for t in tracklets:
        if t.id == tid:
            if not 0 <= idx < len(t):
                raise DataError(f"{ref}: tracklet has {len(t)} frames")
            fr = t.frames[idx]
            if fr.label is None:
                raise DataError(f"{ref}: frame carries no box")
            return fr
    raise DataError(f"{ref}: no such tracklet")


def cmd_mix(args, cfg: RunConfig) -> None:
    out = Path(args.out)
    inputs = {"dataset": args.dataset, "frame_a": args.frame_a, "frame_b": args.frame_b}
    write_run_manifest(out, "mix", cfg, args.seed, inputs, ["mixed.bin", "mix_report.json"])
    tracklets = _load_dataset(args.dataset)
    fa, fb = _find_frame(tracklets, args.frame_a), _find_frame(tracklets, args.frame_b)
    rng = np.random.default_rng(derive_seed(args.seed, "mix"))
    if args.lam == "beta":
        lam = sample_lambda(MixConfig(cfg.get("mix_eta")), rng)
    else:
        try:
            lam = float(args.lam)
        except ValueError:
            raise ConfigError(f"--lambda must be a number or 'beta', got {args.lam!r}") from None
        if not 0.0 <= lam <= 1.0:
            raise ConfigError(f"--lambda must lie in [0, 1], got {lam}")
    mixed = sotmixup(fa.cloud, fa.label, fb.cloud, fb.label, lam, rng)
    write_cloud_bin(out / "mixed.bin", mixed.cloud)
    report = {
        "lambda": mixed.lam,
        "n_object_a": mixed.n_object,
        "k_a": mixed.k_a,
        "k_b": mixed.k_b,
        "n_background": mixed.n_background,
        "n_points": len(mixed.cloud),
        "n_foreground": int(mixed.fg_mask.sum()),
    }
    (out / "mix_report.json").write_text(_dump_json(report))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mixcycle", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, dataset=True):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--seed", type=int, default=0, help="root seed")
        sp.add_argument("--out", required=True, help="output directory")
        if dataset:
            sp.add_argument("--dataset", required=True, help="directory holding manifest.jsonl")

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    common(sp, dataset=False)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("sample-labels", help="choose which frames count as labeled")
    common(sp)
    sp.add_argument("--rate", type=float, required=True, help="labeled fraction in (0, 1]")
    sp.set_defaults(func=cmd_sample_labels)

    sp = sub.add_parser("train", help="fit tracker parameters")
    common(sp)
    sp.add_argument("--mask", required=True, help="label_mask.json from sample-labels")
    sp.add_argument("--params", help="initial parameters JSON (default: from config)")
    sp.add_argument("--objective", choices=("mixcycle", "supervised"))
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="one-pass evaluation")
    common(sp)
    sp.add_argument("--params", help="fitted parameters JSON")
    sp.add_argument("--oracle", action="store_true", help="use the ground-truth oracle")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("mix", help="mix two labeled frames and dump the result")
    common(sp)
    sp.add_argument("--frame-a", required=True, help="TRACKLET_ID@INDEX")
    sp.add_argument("--frame-b", required=True, help="TRACKLET_ID@INDEX (donor)")
    sp.add_argument("--lambda", dest="lam", default="beta", help="mixing rate or 'beta'")
    sp.set_defaults(func=cmd_mix)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
