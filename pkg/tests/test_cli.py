import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from gaitradar.cli import REPORT_COLUMNS, feature_row, main
from gaitradar.features import feature_vector
from gaitradar.formats import (
    format_cohort,
    format_feature_row,
    read_measurement,
    sha256_file,
    write_feature_table,
    write_measurement,
)
from gaitradar.gaitparams import gait_stats
from gaitradar.pipeline import PipelineConfig, analyze_signal, parse_config
from gaitradar.sim import (
    CohortSpec,
    Direction,
    IqSignal,
    Label,
    Measurement,
    RadarConfig,
    SubjectSpec,
    WalkerConfig,
    synthesize_return,
)
from gaitradar.stepext import step_pair
from gaitradar.tfa import denoise, stft_spectrogram


@pytest.fixture(scope="module")
def cohort_file(tmp_path_factory):
    cohort = CohortSpec(subjects=(
        SubjectSpec("H01", torso_speed=0.7, step_rate=1.7, asymmetry=0.97, n_toward=1, n_away=1,
                    simulated_limp=True, limp_asymmetry=0.65),
        SubjectSpec("P1", torso_speed=0.6, step_rate=1.6, asymmetry=0.6, label=Label.ASYMMETRIC,
                    n_toward=1, n_away=0),
    ), master_seed=17)
    path = tmp_path_factory.mktemp("cohort") / "cohort.ini"
    path.write_text(format_cohort(cohort))
    return path


@pytest.fixture(scope="module")
def simulated(tmp_path_factory, cohort_file):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--cohort", str(cohort_file), "--out", str(out)]) == 0
    return out


def symmetric_walk(tmp_path, name="sym.mdgs", seed=3):
    sig = synthesize_return(WalkerConfig(torso_speed=0.8, step_rate=1.7), RadarConfig(snr=20, rng_seed=seed))
    return write_measurement(tmp_path / name, Measurement(sig, Label.SYMMETRIC, "H09", Direction.TOWARD, seed))


def load_manifest(path):
    return json.loads(path.read_text())


def test_simulate_is_reproducible(tmp_path, simulated, cohort_file):
    again = tmp_path / "again"
    assert main(["simulate", "--cohort", str(cohort_file), "--out", str(again)]) == 0
    m1 = load_manifest(simulated / "manifest_simulate.json")
    m2 = load_manifest(again / "manifest_simulate.json")
    assert m1["data_hash"] == m2["data_hash"]
    assert m1["n_measurements"] == 5
    for entry in m1["outputs"]:
        assert sha256_file(again / entry["path"]) == entry["sha256"]
    other = tmp_path / "other"
    assert main(["simulate", "--cohort", str(cohort_file), "--out", str(other), "--seed", "18"]) == 0
    assert load_manifest(other / "manifest_simulate.json")["data_hash"] != m1["data_hash"]


def test_simulate_manifest_contents(simulated):
    m = load_manifest(simulated / "manifest_simulate.json")
    assert {"config_hash", "seed", "versions", "timings_s", "outputs"} <= set(m)
    assert m["seed"] == 17
    listed = {e["path"] for e in m["outputs"]}
    on_disk = {str(p.relative_to(simulated)) for p in simulated.rglob("*") if p.is_file()}
    assert on_disk - listed == {"manifest_simulate.json"}


def test_analyze_symmetric_walk(tmp_path):
    path = symmetric_walk(tmp_path)
    out = tmp_path / "an"
    assert main(["analyze", str(path), "--out", str(out), "--csv"]) == 0
    with open(out / "features.csv", newline="") as fh:
        row = next(csv.DictReader(fh))
    assert float(row["r"]) >= 0.9
    assert row["flags"] == ""
    for name in ("spectrogram.pgm", "spectrogram_db.csv", "gaitstats.json", "step_A.pgm", "step_B.pgm",
                 "window.pgm", "steps.json", "manifest_analyze.json"):
        assert (out / name).exists()
    steps = json.loads((out / "steps.json").read_text())
    assert len(steps["step_frames"]) == 4 and len(steps["gamma_max"]) == 4


def test_analyze_matches_library_composition(tmp_path):
    path = symmetric_walk(tmp_path, seed=9)
    out = tmp_path / "an"
    assert main(["analyze", str(path), "--out", str(out)]) == 0
    m = read_measurement(path)
    cfg = PipelineConfig()
    spec = denoise(stft_spectrogram(m.signal.zero_mean(), cfg.stft), cfg.margin_db)
    stats, _ = gait_stats(spec, m.direction)
    _, pair = step_pair(spec, stats)
    fv = feature_vector(pair.a, pair.b, stats.step_peaks)
    meta = {"measurement": path.stem, "subject": "H09", "direction": "toward", "label": "symmetric"}
    direct = tmp_path / "direct.csv"
    write_feature_table(direct, [format_feature_row(meta, fv.as_array(), list(pair.flags) + list(fv.flags))])
    assert (out / "features.csv").read_bytes() == direct.read_bytes()


def test_infer_direction(tmp_path):
    sig = synthesize_return(WalkerConfig(direction="away", start_range=1.0), RadarConfig(snr=20, rng_seed=2))
    # header deliberately wrong
    path = write_measurement(tmp_path / "w.mdgs", Measurement(sig, Label.SYMMETRIC, "X", Direction.TOWARD, 2))
    out = tmp_path / "inf"
    assert main(["analyze", str(path), "--out", str(out), "--infer-direction"]) == 0
    assert json.loads((out / "gaitstats.json").read_text())["direction"] == "away"


def test_gaitstats_and_steps_commands(tmp_path, capsys):
    path = symmetric_walk(tmp_path)
    assert main(["gaitstats", str(path)]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert set(stats) >= {"f_step", "f_max", "f_torso", "peaks"}
    assert main(["steps", str(path), "--out", str(tmp_path / "st")]) == 0
    assert (tmp_path / "st" / "step_A.pgm").exists() and (tmp_path / "st" / "manifest_steps.json").exists()


def test_rejected_measurement_is_flagged(tmp_path):
    rng = np.random.default_rng(0)
    noise = IqSignal(rng.normal(size=15360) + 1j * rng.normal(size=15360), 2560.0)
    path = write_measurement(tmp_path / "n.mdgs", Measurement(noise, Label.SYMMETRIC, "N", Direction.TOWARD, 0))
    out = tmp_path / "an"
    assert main(["analyze", str(path), "--out", str(out)]) == 3
    with open(out / "features.csv", newline="") as fh:
        row = next(csv.DictReader(fh))
    assert row["flags"].startswith("rejected:") and row["r"] == ""
    a = analyze_signal(noise, "toward")
    assert feature_row({"subject": "N", "direction": "toward", "label": "symmetric"}, a)[-1].startswith("rejected")


def test_features_command(simulated):
    assert main(["features", str(simulated), "--out", str(simulated), "--jobs", "2"]) == 0
    with open(simulated / "features.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 5
    assert {r["subject"] for r in rows} == {"H01", "P1"}
    serial = simulated / "serial"
    assert main(["features", str(simulated), "--out", str(serial)]) == 0
    assert (serial / "features.csv").read_bytes() == (simulated / "features.csv").read_bytes()


def planted_table(path, n_subjects=6, per=12, seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    for s in range(n_subjects):
        for i in range(per):
            y = i % 2 if s < n_subjects - 1 else 1
            x = rng.normal(size=8) + 1.2 * y * np.array([1, 0, 0, 0, 0, 0, 0, 1.0])
            meta = {"measurement": f"S{s}_{i}", "subject": f"S{s}", "direction": ("toward", "away")[i // 2 % 2],
                    "label": ("symmetric", "asymmetric")[y]}
            rows.append(format_feature_row(meta, x, []))
    write_feature_table(path, rows)
    return path


def test_select_command(tmp_path):
    table = planted_table(tmp_path / "t.csv")
    out = tmp_path / "sel"
    assert main(["select", str(table), "--out", str(out), "--scenario", "both", "--exclude", "S5"]) == 0
    doc = json.loads((out / "model_both.json").read_text())
    assert doc["excluded_subjects"] == ["S5"]
    assert [c["predictor"] for c in doc["coefficients"]][0] == "intercept"
    assert {"coefficient", "std_error", "p_value"} <= set(doc["coefficients"][0])
    with open(out / "bic_both.csv", newline="") as fh:
        assert [int(r["order"]) for r in csv.DictReader(fh)] == list(range(1, 9))


def test_evaluate_command(tmp_path):
    table = planted_table(tmp_path / "t.csv")
    out = tmp_path / "ev"
    assert main(["evaluate", str(table), "--out", str(out), "--holdout", "S5", "--holdout", "S0"]) == 0
    with open(out / "evaluation.csv", newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    assert tuple(reader.fieldnames) == REPORT_COLUMNS
    assert [(r["subject"], r["direction"]) for r in rows] == [
        ("S5", "toward"), ("S5", "away"), ("S0", "toward"), ("S0", "away")]
    assert all(r["tau"] and r["pd_train"] for r in rows)
    assert "fa_test_undefined" in rows[0]["flags"]
    assert (out / "roc" / "roc_S5_away.csv").exists()
    assert (out / "manifest_evaluate.json").exists()


def test_exit_codes(tmp_path, cohort_file):
    assert main(["analyze", str(tmp_path / "missing.mdgs")]) == 3
    bad = tmp_path / "bad.mdgs"
    bad.write_bytes(b"not a measurement")
    assert main(["analyze", str(bad), "--out", str(tmp_path)]) == 3
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[stft]\nwindow = 3\n")
    assert main(["--config", str(cfg), "analyze", str(bad)]) == 2
    assert main(["--hop", "0", "analyze", str(bad)]) == 2
    assert main(["--jobs", "0", "features", str(tmp_path)]) == 2
    broken = tmp_path / "c.ini"
    broken.write_text("[cohort]\nmaster_seed = x\n")
    assert main(["simulate", "--cohort", str(broken), "--out", str(tmp_path / "s")]) == 2
    assert main(["evaluate", str(tmp_path / "none.csv"), "--out", str(tmp_path / "e")]) == 3
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_config_parsing(tmp_path):
    cfg = parse_config("[stft]\nhop = 16\n[denoise]\nmargin_db = 6\n[model]\nscenario = away\n", hop=None)
    assert (cfg.hop, cfg.margin_db, cfg.scenario) == (16, 6.0, "away")
    assert parse_config("[stft]\nhop = 16\n", hop=4).hop == 4
    for text in ("[stft]\nhop = x\n", "[nope]\n", "[model]\nscenario = sideways\n", "[steps]\ndb_floor = 5\n"):
        with pytest.raises(ValueError):
            parse_config(text)
    assert cfg.digest() != PipelineConfig().digest()
    assert replace(cfg).digest() == cfg.digest()


def test_config_file_drives_cli(tmp_path):
    path = symmetric_walk(tmp_path)
    cfg = tmp_path / "run.ini"
    cfg.write_text("[stft]\nhop = 16\n")
    out = tmp_path / "an"
    assert main(["--config", str(cfg), "analyze", str(path), "--out", str(out)]) == 0
    assert load_manifest(out / "manifest_analyze.json")["config"]["hop"] == 16
