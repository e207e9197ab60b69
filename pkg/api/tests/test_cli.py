import json

import pytest

from api.cli import main
from services.generation_service import EvaluationReport
from services.storage_service import RunManifest

TOY_SETTINGS = """\
K = 2
n = 2
d_v = 4
vocab_per_topic = 4
sentence_len_range = 4,5
n_h = 6
n_x = 5
n_f = 3
n_m = 4
worker_mlp_dim = 6
T_max = 6
batch_size = 2
epochs = 1
warmup_epochs = 1
ramp_epochs = 1
gamma_max = 0.5
"""


@pytest.fixture
def settings_file(tmp_path, monkeypatch):
    for name in ("HSRL_SEED", "HSRL_EPOCHS", "HSRL_K"):
        monkeypatch.delenv(name, raising=False)
    path = tmp_path / "toy.env"
    path.write_text(TOY_SETTINGS)
    return str(path)


@pytest.fixture
def data_dir(tmp_path, settings_file):
    raw = tmp_path / "raw"
    assert main(["synth-data", "--config", settings_file, "--records", "4", "--valid-records", "2",
                 "--test-records", "2", "--seed", "7", "--out", str(raw)]) == 0
    labelled = tmp_path / "data"
    assert main(["fit-topics", "--config", settings_file, "--data", str(raw), "--out", str(labelled)]) == 0
    return labelled


def test_synth_data_is_deterministic(tmp_path, settings_file):
    for name in ("a", "b"):
        assert main(["synth-data", "--config", settings_file, "--records", "3", "--seed", "7",
                     "--out", str(tmp_path / name)]) == 0
    for name in ("train.jsonl", "valid.jsonl", "test.jsonl", "vocab.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert RunManifest.read(tmp_path / "a").run_key == RunManifest.read(tmp_path / "b").run_key


def test_fit_topics_writes_labelled_splits(data_dir):
    topics = json.loads((data_dir / "topics.json").read_text())
    assert topics["K"] == 2
    first = json.loads((data_dir / "train.jsonl").read_text().splitlines()[0])
    assert all(0 <= t < 2 for t in first["topics"])
    manifest = RunManifest.read(data_dir)
    assert manifest.command == "fit-topics"
    assert set(manifest.inputs) >= {"train", "valid", "test", "vocab", "config"}


def test_fit_topics_accepts_seeds_beyond_32_bits(tmp_path, settings_file, data_dir):
    out = tmp_path / "wide-seed"
    assert main(["fit-topics", "--config", settings_file, "--data", str(tmp_path / "raw"), "--seed", "5000000000",
                 "--out", str(out)]) == 0
    assert json.loads((out / "topics.json").read_text())["K"] == 2


def test_train_generate_evaluate(tmp_path, settings_file, data_dir, capsys):
    capsys.readouterr()
    run = tmp_path / "run"
    assert main(["train", "--config", settings_file, "--data", str(data_dir), "--scheme", "joint",
                 "--gamma1", "0.7", "--gamma2", "0.9", "--out", str(run)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["variant"] == "hsrl" and summary["steps"] == 2
    assert (run / "history.csv").read_text().startswith("epoch,phase,gamma")
    assert RunManifest.read(run).config["gamma1"] == 0.7

    traces = tmp_path / "traces"
    assert main(["generate", "--data", str(data_dir), "--checkpoint", str(run / "policy.bin"),
                 "--split", "test", "--out", str(traces)]) == 0
    lines = (traces / "traces.jsonl").read_text().splitlines()
    assert len(lines) == 2
    assert len(json.loads(lines[0])["slots"]) == 2

    scored = tmp_path / "scored"
    assert main(["evaluate", "--data", str(data_dir), "--checkpoint", str(run / "policy.bin"),
                 "--split", "test", "--out", str(scored)]) == 0
    report = json.loads((scored / "report.json").read_text())
    assert set(report) == set(EvaluationReport.model_fields)
    assert report["split"] == "test" and report["num_records"] == 2


def test_training_is_reproducible(tmp_path, settings_file, data_dir):
    for name in ("a", "b"):
        assert main(["train", "--config", settings_file, "--data", str(data_dir), "--variant", "flat_mle",
                     "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "policy.bin").read_bytes() == (tmp_path / "b" / "policy.bin").read_bytes()
    assert (tmp_path / "a" / "report.json").read_text() == (tmp_path / "b" / "report.json").read_text()


def test_sweep(tmp_path, settings_file, data_dir):
    out = tmp_path / "sweep"
    assert main(["evaluate", "--sweep", "--config", settings_file, "--data", str(data_dir),
                 "--gamma1-values", "0.5,0.7", "--gamma2-values", "0.9", "--out", str(out)]) == 0
    sweep = json.loads((out / "sweep.json").read_text())
    assert len(sweep["scores"]) == 2
    assert sweep["best"]["gamma2"] == 0.9


def test_grad_check(tmp_path, capsys):
    assert main(["grad-check", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "max_rel_error=" in out
    payload = json.loads((tmp_path / "gradcheck.json").read_text())
    assert payload["passed"] and set(payload["errors"]) == {"worker_mle", "manager_mle", "worker_rl", "joint"}


def test_unknown_flag_is_a_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--data", str(tmp_path), "--bogus"])
    assert exc.value.code == 2


def test_invalid_setting_reports_config_error(tmp_path, settings_file, data_dir, capsys):
    code = main(["train", "--config", settings_file, "--data", str(data_dir), "--gamma1", "1.5",
                 "--out", str(tmp_path / "bad")])
    assert code == 1
    errors = [line for line in capsys.readouterr().err.splitlines() if line.startswith("error:")]
    assert len(errors) == 1 and errors[0].startswith("error: config:")


def test_missing_split_reports_config_error(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path / "x")]) == 1
    assert "error: config:" in capsys.readouterr().err


def test_evaluate_needs_checkpoint_or_sweep(tmp_path, data_dir, capsys):
    assert main(["evaluate", "--data", str(data_dir), "--out", str(tmp_path / "x")]) == 1
    assert "error: config:" in capsys.readouterr().err
