"""End-to-end command-line workflows through main()."""

import hashlib

import pytest

from ivnet.cli import dump_config, main, parse_config_file


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """synth -> stats -> train once, shared by the read-only CLI tests."""
    ws = tmp_path_factory.mktemp("cli")
    data = ws / "data"
    assert main(["synth", "--out", str(data), "--videos-per-class", "2",
                 "--frames", "6", "--size", "32", "--seed", "3"]) == 0
    assert main(["stats", "--manifest", str(data / "manifest.txt"),
                 "--out", str(ws / "stats.tnsr")]) == 0
    assert main(["train", "--manifest", str(data / "manifest.txt"),
                 "--stats", str(ws / "stats.tnsr"), "--preset", "tiny",
                 "--iters", "3", "--seed", "1", "--out", str(ws / "run")]) == 0
    return ws


def test_synth_reports_counts(tmp_path, capsys):
    code, out, _ = run(capsys, "synth", "--out", str(tmp_path / "d"),
                       "--videos-per-class", "1", "--frames", "4", "--size", "32")
    assert code == 0
    assert "wrote 3 videos" in out
    assert "approach;retreat;pass" in out


def test_synth_is_reproducible(tmp_path, capsys):
    def digest(d):
        h = hashlib.sha256()
        for p in sorted(d.rglob("*")):
            if p.is_file():
                h.update(p.relative_to(d).as_posix().encode())
                h.update(p.read_bytes())
        return h.hexdigest()

    for name in ("a", "b"):
        assert run(capsys, "synth", "--out", str(tmp_path / name),
                   "--videos-per-class", "1", "--frames", "4", "--size", "32",
                   "--seed", "7")[0] == 0
    assert digest(tmp_path / "a") == digest(tmp_path / "b")


def test_stats_prints_channels(workspace, capsys):
    code, out, _ = run(capsys, "stats",
                       "--manifest", str(workspace / "data" / "manifest.txt"),
                       "--out", str(workspace / "stats2.tnsr"))
    assert code == 0
    assert out.startswith("mean:")
    assert "std:" in out


def test_train_writes_artifacts(workspace):
    assert (workspace / "run" / "checkpoint.clck").exists()
    csv = (workspace / "run" / "metrics.csv").read_text()
    assert csv.splitlines()[0] == "iteration,loss,train_acc,val_acc"
    assert len(csv.strip().splitlines()) == 4  # header + 3 iterations


def test_train_print_config_round_trips(workspace, capsys):
    code, out, _ = run(capsys, "train",
                       "--manifest", str(workspace / "data" / "manifest.txt"),
                       "--stats", str(workspace / "stats.tnsr"),
                       "--preset", "tiny", "--iters", "1", "--seed", "1",
                       "--out", str(workspace / "run_pc"), "--print-config")
    assert code == 0
    config_text = "".join(l + "\n" for l in out.splitlines() if " = " in l)
    values = parse_config_file(config_text)
    assert values["preset"] == "tiny"
    assert values["iterations"] == 1
    assert parse_config_file(dump_config(values)) == values


def test_train_config_file_supplies_values(workspace, tmp_path, capsys):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("preset = tiny\niterations = 2\nseed = 9\nlr = 0.0005\n")
    code, out, _ = run(capsys, "train",
                       "--manifest", str(workspace / "data" / "manifest.txt"),
                       "--stats", str(workspace / "stats.tnsr"),
                       "--config", str(cfg),
                       "--out", str(tmp_path / "run"), "--print-config")
    assert code == 0
    values = parse_config_file(
        "".join(l + "\n" for l in out.splitlines() if " = " in l))
    assert values["iterations"] == 2 and values["seed"] == 9
    assert values["lr"] == 0.0005


def test_flag_overrides_config_file(workspace, tmp_path, capsys):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("iterations = 2\n")
    code, out, _ = run(capsys, "train",
                       "--manifest", str(workspace / "data" / "manifest.txt"),
                       "--stats", str(workspace / "stats.tnsr"),
                       "--preset", "tiny", "--config", str(cfg), "--iters", "1",
                       "--out", str(tmp_path / "run"), "--print-config")
    assert code == 0
    values = parse_config_file(
        "".join(l + "\n" for l in out.splitlines() if " = " in l))
    assert values["iterations"] == 1


def test_unknown_config_key_is_exit_1(workspace, tmp_path, capsys):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("learning_rate = 0.1\n")
    code, _, err = run(capsys, "train",
                       "--manifest", str(workspace / "data" / "manifest.txt"),
                       "--stats", str(workspace / "stats.tnsr"),
                       "--config", str(cfg), "--out", str(tmp_path / "run"))
    assert code == 1
    assert err.startswith("error:")
    assert "learning_rate" in err


def test_eval_prints_accuracy_and_csv(workspace, tmp_path, capsys):
    csv_path = tmp_path / "confusion.csv"
    code, out, _ = run(capsys, "eval",
                       "--checkpoint", str(workspace / "run" / "checkpoint.clck"),
                       "--manifest", str(workspace / "data" / "manifest.txt"),
                       "--crops", "1", "--csv", str(csv_path))
    assert code == 0
    assert "accuracy:" in out
    assert any(l.startswith("time:") for l in out.splitlines())
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0] == "true_class,approach,retreat,pass"
    assert len(lines) == 4


def test_predict_names_a_class(workspace, capsys):
    code, out, _ = run(capsys, "predict",
                       "--checkpoint", str(workspace / "run" / "checkpoint.clck"),
                       "--frames-dir", str(workspace / "data" / "approach_000"),
                       "--crops", "1",
                       "--manifest", str(workspace / "data" / "manifest.txt"))
    assert code == 0
    assert out.splitlines()[0].split(": ")[1] in ("approach", "retreat", "pass")
    assert "probabilities:" in out


def test_gradcheck_single_op(capsys):
    code, out, _ = run(capsys, "gradcheck", "--op", "sigmoid", "--trials", "2")
    assert code == 0
    assert "sigmoid" in out and "pass" in out


def test_gradcheck_unknown_op(capsys):
    code, _, err = run(capsys, "gradcheck", "--op", "nosuch")
    assert code == 1
    assert err.startswith("error:")


def test_params_full_preset(capsys):
    code, out, _ = run(capsys, "params", "--preset", "full", "--classes", "7")
    assert code == 0
    assert "convlstm: 4719616" in out
    assert "fusion: 1179904" in out
    assert "classifier: 16135" in out


def test_missing_manifest_is_exit_1(tmp_path, capsys):
    code, _, err = run(capsys, "stats", "--manifest",
                       str(tmp_path / "nope.txt"), "--out", str(tmp_path / "s"))
    assert code == 1
    assert err.startswith("error:")


def test_corrupt_checkpoint_is_exit_1(workspace, tmp_path, capsys):
    bad = tmp_path / "bad.clck"
    bad.write_bytes(b"JUNKJUNKJUNK")
    code, _, err = run(capsys, "eval", "--checkpoint", str(bad),
                       "--manifest", str(workspace / "data" / "manifest.txt"))
    assert code == 1
    assert err.startswith("error:")


def test_missing_required_flag_is_exit_1(capsys):
    code, _, err = run(capsys, "synth")
    assert code == 1
    assert err.startswith("error:")
