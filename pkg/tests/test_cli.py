import csv
import hashlib
import json

import numpy as np
import pytest

from ams import cli, infer, training
from ams.config import PRESETS, RunConfig
from ams.nn import BranchParams
from ams.sampler import uniform_grid
from ams.synthgen import read_dataset

SPEC = {"num_videos": 10, "T": 24, "D": 6, "C": 2, "instances_per_video": [1, 2], "instance_length": [5, 8]}
FAST = ["--hidden_dim", "8", "--phase0_epochs", "3", "--phase_epochs", "1", "--interp_factor", "4"]


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.setenv("AMS_OUTPUT_DIR", str(tmp_path / "default_out"))
    (tmp_path / "spec.json").write_text(json.dumps(SPEC))
    return tmp_path


@pytest.fixture
def dataset_path(workdir, capsys):
    path = workdir / "data.json"
    assert run(["generate", workdir / "spec.json", "--out", path], capsys)[0] == 0
    return path


@pytest.fixture
def trained(workdir, dataset_path, capsys):
    out = workdir / "run"
    code, _, err = run(["train", "--dataset", dataset_path, "--out-dir", out, "--num_iterations", 1, *FAST], capsys)
    assert code == 0, err
    return out


def test_generate_default_uses_env_dir(workdir, capsys):
    code, out, _ = run(["generate", "--seed", 3], capsys)
    assert code == 0
    path = workdir / "default_out" / "dataset.json"
    assert out.strip() == str(path)
    assert len(read_dataset(path).videos) == 60


def test_generate_is_deterministic(workdir, capsys):
    for name in ("a.json", "b.json"):
        assert run(["generate", workdir / "spec.json", "--out", workdir / name], capsys)[0] == 0
    assert (workdir / "a.json").read_bytes() == (workdir / "b.json").read_bytes()


@pytest.mark.parametrize(
    "spec, code",
    [({"T": 0}, 3), ({"frames": 3}, 3), ({"T": "long"}, 2)],
)
def test_generate_bad_spec(workdir, capsys, spec, code):
    (workdir / "bad.json").write_text(json.dumps(spec))
    got, out, err = run(["generate", workdir / "bad.json", "--out", workdir / "x.json"], capsys)
    assert got == code
    assert err.count("\n") == 1 and err.startswith("error[")
    assert not (workdir / "x.json").exists()


def test_train_outputs(trained):
    names = {p.name for p in trained.iterdir()}
    assert {"checkpoint.json", "loss_history.csv", "metrics.csv", "config.json"} <= names
    with open(trained / "loss_history.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["phase"] for r in rows} == {"zero", "one", "two"}
    assert all(np.isfinite(float(r["L_total"])) for r in rows)
    with open(trained / "metrics.csv") as fh:
        assert {r["iteration"] for r in csv.DictReader(fh)} == {"0", "1"}


def test_train_zero_iterations(workdir, dataset_path, capsys):
    out = workdir / "z"
    assert run(["train", "--dataset", dataset_path, "--out-dir", out, "--num_iterations", 0, *FAST], capsys)[0] == 0
    with open(out / "metrics.csv") as fh:
        assert {r["iteration"] for r in csv.DictReader(fh)} == {"0"}
    with open(out / "loss_history.csv") as fh:
        assert {r["phase"] for r in csv.DictReader(fh)} == {"zero"}


def test_train_rerun_identical_metrics(workdir, dataset_path, capsys):
    for name in ("r1", "r2"):
        assert run(["train", "--dataset", dataset_path, "--out-dir", workdir / name, *FAST], capsys)[0] == 0
    assert (workdir / "r1" / "metrics.csv").read_bytes() == (workdir / "r2" / "metrics.csv").read_bytes()
    assert (workdir / "r1" / "loss_history.csv").read_bytes() == (workdir / "r2" / "loss_history.csv").read_bytes()


def test_config_file_preset_and_override(workdir, dataset_path, capsys):
    cfg = workdir / "cfg.json"
    cfg.write_text(json.dumps({"dataset": str(dataset_path), "preset": "E", "hidden_dim": 8, "phase0_epochs": 2}))
    out = workdir / "c"
    code, _, err = run(["train", cfg, "--out-dir", out, "--phase-epochs", 1, "--num_iterations", 1], capsys)
    assert code == 0, err
    saved = json.loads((out / "config.json").read_text())
    assert (saved["branch_count"], saved["sampling_mode"], saved["supervision_mode"]) == PRESETS["E"]
    assert saved["phase_epochs"] == 1 and saved["hidden_dim"] == 8


def test_inputs_not_mutated(workdir, dataset_path, trained, capsys):
    before = digest(dataset_path), digest(trained / "checkpoint.json")
    run(["eval", trained / "checkpoint.json", dataset_path, "--out-dir", workdir / "e"], capsys)
    run(["dump-cas", trained / "checkpoint.json", dataset_path, "video_0000", "--out-dir", workdir / "e"], capsys)
    assert (digest(dataset_path), digest(trained / "checkpoint.json")) == before


def test_eval_matches_library(workdir, dataset_path, trained, capsys):
    code, out, _ = run(["eval", trained / "checkpoint.json", dataset_path, "--out-dir", workdir / "e"], capsys)
    assert code == 0
    model = training.load_checkpoint(trained / "checkpoint.json")
    videos = read_dataset(dataset_path).test
    table = infer.map_table(
        training.predict(model, videos), training.ground_truth(videos), model.cfg.iou_thresholds, model.cfg.report_ranges
    )
    with open(workdir / "e" / "eval_metrics.csv") as fh:
        rows = [(r["iou_threshold"], float(r["mAP"])) for r in csv.DictReader(fh)]
    assert [n for n, _ in rows] == [n for n, _ in table.rows()]
    assert np.allclose([v for _, v in rows], [v for _, v in table.rows()], atol=1e-6)
    recs = [json.loads(line) for line in (workdir / "e" / "proposals.jsonl").read_text().splitlines()]
    assert all(set(r) >= {"video_id", "start", "end", "class", "score"} for r in recs)


def _write_checkpoint(path, kind, cfg=None, states=None):
    if kind == "oracle":
        path.write_text(json.dumps({"version": 1, "kind": "oracle", "config": RunConfig().to_dict()}))
    else:
        training.save_checkpoint(path, cfg, states)


def test_eval_oracle_is_perfect(workdir, dataset_path, capsys):
    ck = workdir / "oracle.json"
    _write_checkpoint(ck, "oracle")
    code, out, _ = run(["eval", ck, dataset_path, "--thresholds", "0.1,0.5,0.9", "--out-dir", workdir / "o"], capsys)
    assert code == 0
    assert [line.split("\t") for line in out.splitlines()[:3]] == [["0.1", "1.0000"], ["0.5", "1.0000"], ["0.9", "1.0000"]]


def constant_state(cfg, bias):
    D, H, C = cfg.D, cfg.hidden_dim, cfg.C
    p = BranchParams(np.zeros((D, H)), np.zeros(H), np.zeros((H, C)), np.full(C, bias))
    from ams.nn import AdamState

    return training.TrainingState(p, p.copy(), AdamState.zeros(p), AdamState.zeros(p), 0)


def test_eval_empty_proposals_score_zero(workdir, dataset_path, capsys):
    cfg = RunConfig(T=24, D=6, C=2, hidden_dim=4)
    st = constant_state(cfg, -20.0)  # CAS ~ 2e-9 everywhere: no class passes theta_cls
    st.iteration = 1
    ck = workdir / "flat.json"
    _write_checkpoint(ck, "model", cfg, [st])
    code, out, _ = run(["eval", ck, dataset_path, "--out-dir", workdir / "f"], capsys)
    assert code == 0
    assert (workdir / "f" / "proposals.jsonl").read_text() == ""
    assert all(float(line.split("\t")[1]) == 0.0 for line in out.splitlines())


def test_dump_cas_columns_and_values(workdir, dataset_path, trained, capsys):
    out = workdir / "d"
    assert run(["dump-cas", trained / "checkpoint.json", dataset_path, "video_0003", "--out-dir", out], capsys)[0] == 0
    with open(out / "cas_video_0003.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["snippet", "class", "base", "supp_aligned", "final"]
    for c in ("0", "1"):
        assert len([r for r in rows if r["class"] == c]) == 24
    model = training.load_checkpoint(trained / "checkpoint.json")
    video = [v for v in read_dataset(dataset_path).videos if v.video_id == "video_0003"][0]
    final = infer.fuse_cas(model.outputs(video))
    got = np.array([float(r["final"]) for r in rows]).reshape(24, 2)
    assert np.array_equal(got, final)
    with open(out / "cas_video_0003_sampler.csv") as fh:
        srows = list(csv.DictReader(fh))
    assert list(srows[0]) == ["snippet", "m", "w", "K"] and len(srows) == 24


def test_dump_cas_constant_checkpoint_gives_uniform_K(workdir, dataset_path, capsys):
    cfg = RunConfig(T=24, D=6, C=2, hidden_dim=4, interp_factor=4)
    st = constant_state(cfg, 0.0)
    st.iteration = 1
    ck = workdir / "const.json"
    _write_checkpoint(ck, "model", cfg, [st])
    assert run(["dump-cas", ck, dataset_path, "video_0001", "--out-dir", workdir / "k"], capsys)[0] == 0
    with open(workdir / "k" / "cas_video_0001_sampler.csv") as fh:
        K = [int(r["K"]) for r in csv.DictReader(fh)]
    assert K == uniform_grid(24, 4).astype(int).tolist()


def test_dump_cas_unknown_video(dataset_path, trained, capsys):
    code, _, err = run(["dump-cas", trained / "checkpoint.json", dataset_path, "nope"], capsys)
    assert code == 3 and err.startswith("error[data]:")


def test_ablate_table(workdir, dataset_path, capsys):
    out = workdir / "ab"
    argv = ["ablate", "--dataset", dataset_path, "--out-dir", out, "--seeds", 2, "--setups", "A,B,F/random", "--num_iterations", 1, *FAST]
    code, stdout, err = run(argv, capsys)
    assert code == 0, err
    with open(out / "ablation.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [(r["setup"], r["seed"]) for r in rows] == [
        ("A", "0"), ("A", "1"), ("A", "mean"), ("B", "0"), ("B", "1"), ("B", "mean"),
        ("F/random", "0"), ("F/random", "1"), ("F/random", "mean"),
    ]
    a = [float(r["0.5"]) for r in rows[:2]]
    assert float(rows[2]["0.5"]) == pytest.approx(np.mean(a), abs=1e-6)


def test_presets_a_b_differ_only_in_branch_count():
    a = dict(zip(("branch_count", "sampling_mode", "supervision_mode"), PRESETS["A"]))
    b = dict(zip(("branch_count", "sampling_mode", "supervision_mode"), PRESETS["B"]))
    assert {k for k in a if a[k] != b[k]} == {"branch_count"}


@pytest.mark.parametrize(
    "argv, code, tag",
    [
        (["train", "--dataset", "missing.json"], 3, "data"),
        (["train"], 2, "config"),
        (["train", "--sampling_mode", "sideways", "--dataset", "x"], 2, "config"),
        (["train", "--learning_rate", "fast"], 2, "config"),
        (["train", "--preset", "Z"], 2, "config"),
        (["frobnicate"], 2, "config"),
        (["eval", "nope.json", "nope.json"], 3, "data"),
    ],
)
def test_error_exit_codes(workdir, capsys, argv, code, tag):
    got, _, err = run(argv, capsys)
    assert got == code
    assert err.startswith(f"error[{tag}]:") and err.count("\n") == 1


def test_numeric_failure_exit_code(workdir, dataset_path, capsys):
    code, _, err = run(["train", "--dataset", dataset_path, "--out-dir", workdir / "n", "--learning_rate", "1e300", *FAST], capsys)
    assert code == 4 and err.startswith("error[")
