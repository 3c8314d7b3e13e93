import csv
import io
import json

import pytest

from qkdsim.cli import EXIT_ABORTED, EXIT_OK, EXIT_USAGE, UsageError, main, parse_and_validate
from qkdsim.config import CONFIG_DIR_ENV, preset_names
from qkdsim.harness import CSV_HEADER

FAST = ["--set", "bb84.n_pulses=2000"]


def test_presets_shipped():
    assert set(preset_names()) >= {"bb84_clean", "bb84_pns", "bb84_intercept", "kak_honest",
                                   "kak_mitm", "kak_auth_mitm", "replay"}


def test_seed_override():
    inv = parse_and_validate(["run", "--config", "bb84_clean.toml", "--seed", "42"])
    assert inv.scenario.seed == 42 and "seed=42" in inv.overrides


def test_set_override_applies_after_file():
    inv = parse_and_validate(["run", "-c", "bb84_pns", "--set", "bb84.mean_photon_number=1.0"])
    assert inv.scenario.mean_photon_number == 1.0


def test_missing_config_exit_2(capsys):
    assert main(["run", "--config", "/nope/missing.toml"]) == EXIT_USAGE
    assert "/nope/missing.toml" in capsys.readouterr().err


def test_batch_zero_trials(capsys):
    assert main(["batch", "-c", "bb84_clean", "--trials", "0"]) == EXIT_USAGE
    assert "trials" in capsys.readouterr().err


def test_every_problem_listed():
    with pytest.raises(UsageError) as exc:
        parse_and_validate(["run", "-c", "bb84_clean", "--set", "bb84.bogus=1",
                            "--set", "bb84.sample_fraction=2", "--set", "auth.window_millis=-1"])
    msg = str(exc.value)
    assert "bb84.bogus" in msg and "sample_fraction" in msg and "window_millis" in msg


def test_unknown_flag_exit_2():
    assert main(["run", "-c", "bb84_clean", "--frobnicate"]) == EXIT_USAGE


def test_bad_toml_exit_2(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("protocol = [")
    assert main(["run", "-c", str(p)]) == EXIT_USAGE


def test_no_output_written_on_parse_failure(tmp_path):
    out = tmp_path / "r.json"
    assert main(["run", "-c", "bb84_clean", "--set", "seed=-3", "-o", str(out)]) == EXIT_USAGE
    assert not out.exists()


def test_config_dir_env(tmp_path, monkeypatch):
    (tmp_path / "mine.toml").write_text('protocol = "three_stage"\nmessage_bits = "11"\n')
    monkeypatch.setenv(CONFIG_DIR_ENV, str(tmp_path))
    out = tmp_path / "r.json"
    assert main(["run", "-c", "mine.toml", "-o", str(out)]) == EXIT_OK
    assert json.loads(out.read_text())["recovered_bits"] == "11"


def test_auth_mitm_json(tmp_path):
    out = tmp_path / "r.json"
    assert main(["run", "-c", "kak_auth_mitm", "-o", str(out)]) == EXIT_ABORTED
    doc = json.loads(out.read_text())
    assert doc["aborted"] is True and doc["abort_step"] in (2, 3)


@pytest.mark.parametrize("preset,code", [("bb84_clean", EXIT_OK), ("bb84_intercept", EXIT_ABORTED),
                                         ("bb84_pns", EXIT_OK), ("kak_honest", EXIT_OK),
                                         ("kak_mitm", EXIT_OK), ("replay", EXIT_ABORTED)])
def test_preset_exit_codes(preset, code, tmp_path):
    assert main(["run", "-c", preset, *FAST, "-o", str(tmp_path / "r.json")]) == code


def test_same_report_twice_byte_identical(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        main(["run", "-c", "kak_honest", "-o", str(p)])
    assert a.read_bytes() == b.read_bytes()


def test_transcript_export(tmp_path):
    t = tmp_path / "t.jsonl"
    main(["run", "-c", "kak_honest", "--set", "protocol=three_stage_auth", "--transcript", str(t),
          "-o", str(tmp_path / "r.json")])
    records = [json.loads(line) for line in t.read_text().splitlines()]
    assert [r["step"] for r in records if r["kind"] == "auth_message"] == [1, 2, 3, 4]


def test_batch_csv_rows(tmp_path):
    out = tmp_path / "b.csv"
    assert main(["batch", "-c", "bb84_clean", *FAST, "--trials", "20", "--format", "csv", "-o", str(out)]) == EXIT_OK
    rows = list(csv.reader(io.StringIO(out.read_text())))
    assert tuple(rows[0]) == CSV_HEADER
    assert len(rows) == 21


def test_batch_detection_exit_1(tmp_path):
    out = tmp_path / "b.json"
    assert main(["batch", "-c", "kak_auth_mitm", "-n", "5", "-o", str(out)]) == EXIT_ABORTED
    assert json.loads(out.read_text())["detections"] == 5


def test_unwritable_output(tmp_path):
    assert main(["run", "-c", "kak_honest", "-o", str(tmp_path / "no" / "such" / "dir.json")]) == EXIT_USAGE


def test_attacks_list_and_explain(capsys):
    assert main(["attacks-list"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "beam_splitting" in out and "replay" in out
    assert main(["explain", "-c", "bb84_pns"]) == EXIT_OK
    assert "mean photon number 0.5" in capsys.readouterr().out


def test_single_run_csv(capsys):
    assert main(["run", "-c", "kak_mitm", "--format", "csv"]) == EXIT_OK
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert len(rows) == 2 and rows[1][CSV_HEADER.index("recovered_bits")] == "00000"
