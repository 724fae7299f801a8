import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from mixcycle.cli import MANIFEST_NAME, main
from mixcycle.dataio import read_cloud_bin

SMALL = """
n_tracklets = 3
n_frames = 6
population = 4
iterations = 2
batch_size = 3
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.cfg"
    cfg.write_text(SMALL)
    data = root / "data"
    assert main(["synth", "--config", str(cfg), "--seed", "4", "--out", str(data)]) == 0
    labels = root / "labels"
    assert main(["sample-labels", "--dataset", str(data), "--rate", "0.3", "--seed", "1", "--out", str(labels)]) == 0
    return root, cfg, data, labels / "label_mask.json"


def _first_id(data: Path) -> str:
    first = json.loads((data / "manifest.jsonl").read_text().splitlines()[0])
    return f"{first['seq']}:{first['track_id']}"


def _files(d: Path):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_synth_layout_and_rerun(workspace, tmp_path):
    root, cfg, data, _ = workspace
    files = _files(data)
    assert "manifest.jsonl" in files and MANIFEST_NAME in files
    assert any(k.startswith("clouds/") for k in files)
    again = tmp_path / "again"
    assert main(["synth", "--config", str(cfg), "--seed", "4", "--out", str(again)]) == 0
    assert _files(again) == files


def test_manifest_contents(workspace):
    _, _, data, mask = workspace
    m = json.loads((mask.parent / MANIFEST_NAME).read_text())
    assert m["command"] == "sample-labels" and m["seed"] == 1
    assert m["outputs"] == ["label_mask.json"]
    assert m["config"]["n_frames"] == 20  # no --config given: defaults
    assert json.loads((data / MANIFEST_NAME).read_text())["config"]["n_frames"] == 6
    assert m["inputs"]["dataset"] == str(data)


def test_train_and_eval_are_byte_identical(workspace, tmp_path):
    _, cfg, data, mask = workspace
    runs = []
    for k in range(2):
        tr, ev = tmp_path / f"train{k}", tmp_path / f"eval{k}"
        assert main(["train", "--config", str(cfg), "--dataset", str(data), "--mask", str(mask), "--seed", "3", "--out", str(tr)]) == 0
        params = tr / "params.json"
        assert main(["eval", "--dataset", str(data), "--params", str(params), "--seed", "3", "--out", str(ev)]) == 0
        runs.append((_files(tr), _files(ev)))
    assert runs[0][0] == runs[1][0]
    # the eval manifest records the params path, which differs per run
    strip = lambda fs: {k: v for k, v in fs.items() if k != MANIFEST_NAME}
    assert strip(runs[0][1]) == strip(runs[1][1])
    log = (tmp_path / "train0" / "train_log.jsonl").read_text().splitlines()
    assert len(log) == 3


def test_supervised_objective_flag(workspace, tmp_path):
    _, cfg, data, mask = workspace
    out = tmp_path / "sup"
    args = ["train", "--config", str(cfg), "--dataset", str(data), "--mask", str(mask), "--objective", "supervised", "--out", str(out)]
    assert main(args) == 0
    assert json.loads((out / "params.json").read_text())["yaw_steps"] == 5


def test_oracle_eval(workspace, tmp_path):
    _, _, data, _ = workspace
    out = tmp_path / "oracle"
    assert main(["eval", "--dataset", str(data), "--oracle", "--out", str(out)]) == 0
    rows = list(csv.DictReader((out / "summary.csv").open()))
    mean = rows[-1]
    assert mean["category"] == "Mean" and int(mean["tracklets"]) == 3
    assert float(mean["success"]) >= 99 and float(mean["precision"]) >= 99


def test_eval_needs_exactly_one_tracker(workspace, tmp_path, capsys):
    _, _, data, _ = workspace
    assert main(["eval", "--dataset", str(data), "--out", str(tmp_path / "e")]) == 2


def test_mix_pass_through_and_counts(workspace, tmp_path):
    _, _, data, _ = workspace
    tid = _first_id(data)
    out1 = tmp_path / "m1"
    assert main(["mix", "--dataset", str(data), "--frame-a", f"{tid}@0", "--frame-b", f"{tid}@1", "--lambda", "1", "--out", str(out1)]) == 0
    r = json.loads((out1 / "mix_report.json").read_text())
    assert r["k_b"] == 0 and r["k_a"] == r["n_object_a"]
    assert r["n_points"] == r["n_background"] + r["n_object_a"]
    assert len(read_cloud_bin(out1 / "mixed.bin")) == r["n_points"]

    out2 = tmp_path / "m2"
    assert main(["mix", "--dataset", str(data), "--frame-a", f"{tid}@2", "--frame-b", f"{tid}@2", "--lambda", "0.5", "--out", str(out2)]) == 0
    r = json.loads((out2 / "mix_report.json").read_text())
    assert r["k_a"] == int(0.5 * r["n_object_a"] + 0.5)
    assert r["n_foreground"] == r["n_object_a"]

    out3 = tmp_path / "m3"
    assert main(["mix", "--dataset", str(data), "--frame-a", f"{tid}@0", "--frame-b", f"{tid}@1", "--seed", "5", "--out", str(out3)]) == 0
    assert 0 <= json.loads((out3 / "mix_report.json").read_text())["lambda"] <= 1


@pytest.mark.parametrize(
    "args,code",
    [
        (["--frame-a", "nope@0", "--frame-b", "nope@0"], 3),
        (["--frame-a", "noindex", "--frame-b", "x@0"], 2),
        (["--lambda", "1.5"], 2),
    ],
)
def test_mix_errors(workspace, tmp_path, args, code):
    _, _, data, _ = workspace
    tid = _first_id(data)
    base = {"--frame-a": f"{tid}@0", "--frame-b": f"{tid}@1"}
    for k, v in zip(args[::2], args[1::2]):
        base[k] = v
    argv = ["mix", "--dataset", str(data), "--out", str(tmp_path / "x")]
    for k, v in base.items():
        argv += [k, v]
    assert main(argv) == code


def test_unknown_config_key_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("n_frames = 3\ngrid_stepp_m = 0.2\n")
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "grid_stepp_m" in capsys.readouterr().err


def test_missing_dataset_exit_code(tmp_path):
    assert main(["sample-labels", "--dataset", str(tmp_path / "none"), "--rate", "0.1", "--out", str(tmp_path / "o")]) == 3


def test_bad_rate_exit_code(workspace, tmp_path):
    _, _, data, _ = workspace
    assert main(["sample-labels", "--dataset", str(data), "--rate", "0", "--out", str(tmp_path / "o")]) == 2


def test_bad_params_file(workspace, tmp_path):
    _, _, data, _ = workspace
    p = tmp_path / "p.json"
    p.write_text('{"sigma": -1}')
    assert main(["eval", "--dataset", str(data), "--params", str(p), "--out", str(tmp_path / "o")]) == 2
    p.write_text("{not json")
    assert main(["eval", "--dataset", str(data), "--params", str(p), "--out", str(tmp_path / "o")]) == 3


def test_manifest_written_before_failure(workspace, tmp_path):
    _, _, data, _ = workspace
    out = tmp_path / "o"
    assert main(["train", "--dataset", str(data), "--mask", str(tmp_path / "nomask.json"), "--out", str(out)]) == 3
    assert json.loads((out / MANIFEST_NAME).read_text())["command"] == "train"
    assert not (out / "params.json").exists()


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "mixcycle.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip()
