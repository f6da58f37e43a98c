import csv
import io
import json

import jsonschema
import numpy as np
import pytest

from qdtele import engine
from qdtele import quantum as q
from qdtele.cli import EXIT_CONFIG, EXIT_DATA, EXIT_FIT, EXIT_OK, load_schema, main
from qdtele.engine import Scenario
from qdtele.taglab.coincidences import Histogram
from qdtele.taglab.io import write_tag_file
from qdtele.taglab.synth import synthesize_decay_tags, synthesize_hbt_tags, synthesize_hom_tags

SMALL = ["--set", "synth.duration_s=7.5e-4", "--set", "synth.efficiency=1.0"]


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def validate(doc, name):
    jsonschema.validate(doc, load_schema(name))


# simulate -----------------------------------------------------------------------------

def test_simulate_default(capsys):
    code, out, _ = run(["simulate"], capsys)
    assert code == EXIT_OK
    doc = json.loads(out)
    validate(doc, "simulate")
    assert doc["average"] == pytest.approx(0.652, abs=5e-4)
    assert doc["verdict"] == "below classical limit 2/3"
    assert doc["chi_max_abs_diff"] < 1e-10
    assert doc["reference"]["targets"]["average"]["value"] == 0.644


def test_simulate_setups(capsys, tmp_path):
    out = tmp_path / "s.json"
    assert main(["simulate", "--setup", "pbs", "--six-state", "-o", str(out)]) == EXIT_OK
    doc = json.loads(out.read_text())
    validate(doc, "simulate")
    assert doc["average"] == pytest.approx(0.793, abs=5e-4)
    assert set(doc["per_input"]) == set(engine.SIX_INPUTS)
    assert set(doc["gate_fidelity_by_signature"]) == {"psi_minus", "psi_plus"}
    code, o, _ = run(["simulate", "--setup", "pbs", "--v-filtered", "0.79"], capsys)
    assert json.loads(o)["average"] == pytest.approx(0.851, abs=5e-4)


def test_simulate_six_state_average_matches(capsys):
    code, out, _ = run(["simulate", "--six-state"], capsys)
    doc = json.loads(out)
    assert doc["average_six"] == pytest.approx(doc["average"], abs=1e-12)


# config errors --------------------------------------------------------------------------

def test_unknown_key_reports_line(tmp_path, capsys):
    cfg = tmp_path / "run.toml"
    cfg.write_text("[source]\nv = 0.5\nvisibilty = 0.3\n")
    code, _, err = run(["simulate", "-c", cfg], capsys)
    assert code == EXIT_CONFIG
    assert f"{cfg}:3:" in err and "visibilty" in err


def test_out_of_range_value(tmp_path, capsys):
    cfg = tmp_path / "run.toml"
    cfg.write_text("[bsm]\nsetup = \"bs\"\n\n[source]\nv = 1.7\n")
    code, _, err = run(["simulate", "-c", cfg], capsys)
    assert code == EXIT_CONFIG
    assert ":5:" in err and "[source] v:" in err


@pytest.mark.parametrize("override", ["bsm.setup='mirror'", "source.k=2", "nosuch.key=1", "source.v", "sweep.steps=1"])
def test_bad_overrides(override, capsys):
    code, _, err = run(["simulate", "--set", override], capsys)
    assert code == EXIT_CONFIG
    assert "config error" in err


def test_bs_cannot_tag_psi_plus(capsys):
    code, _, err = run(["simulate", "--tagged", "psi_plus"], capsys)
    assert code == EXIT_CONFIG


def test_malformed_toml(tmp_path, capsys):
    cfg = tmp_path / "run.toml"
    cfg.write_text("[source\nv = 0.5\n")
    code, _, err = run(["simulate", "-c", cfg], capsys)
    assert code == EXIT_CONFIG


def test_missing_config_file(tmp_path, capsys):
    code, _, _ = run(["simulate", "-c", tmp_path / "nope.toml"], capsys)
    assert code in (EXIT_CONFIG, EXIT_DATA)


def test_help_lists_defaults(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    assert "[source]" in out and "tau_x" in out


# sweep ----------------------------------------------------------------------------------

def test_sweep_stdout(capsys):
    code, out, err = run(["sweep"], capsys)
    assert code == EXIT_OK
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["V", "F_bs", "F_pbs", "F_bs_S0", "F_pbs_S0"]
    data = np.array(rows[1:], dtype=float)
    assert data.shape == (101, 5)
    assert np.all(np.diff(data[:, 1:], axis=0) >= -1e-12)
    assert np.all(data[:, 2] >= data[:, 1] - 1e-12)
    assert "0.58" in err or "0.59" in err


def test_sweep_out_dir(tmp_path, capsys):
    code, _, _ = run(["sweep", "--out-dir", tmp_path, "--steps", 11, "--workers", 2], capsys)
    assert code == EXIT_OK
    names = {p.name for p in tmp_path.iterdir()}
    assert {"sweep.csv", "crossings.json", "conditionals_bs.csv", "conditionals_pbs_S0.csv"} <= names
    validate(json.loads((tmp_path / "crossings.json").read_text()), "crossings")
    head = (tmp_path / "conditionals_pbs.csv").read_text().splitlines()
    assert head[0] == "V,p_phi_plus,p_phi_minus,p_psi_plus,p_psi_minus"
    assert len(head) == 12


# process tomography -----------------------------------------------------------------------

def test_process_tomography_from_states(tmp_path, capsys):
    sc = Scenario()
    outputs = {s: q.matrix_to_json(engine.teleport(s, sc).rho_out) for s in q.PROCESS_INPUTS}
    path = tmp_path / "states.json"
    path.write_text(json.dumps({"outputs": outputs}))
    code, out, _ = run(["process-tomography", path], capsys)
    assert code == EXIT_OK
    doc = json.loads(out)
    validate(doc, "process")
    assert doc["gate_fidelity"]["Y"] == pytest.approx(engine.gate_fidelity(sc), abs=1e-10)


def test_process_tomography_from_counts(tmp_path, capsys):
    counts = {"H": [0, 100, 50, 50, 50, 50], "V": [100, 0, 50, 50, 50, 50],
              "D": [50, 50, 0, 100, 50, 50], "R": [50, 50, 50, 50, 100, 0]}
    path = tmp_path / "counts.json"
    path.write_text(json.dumps({"counts": counts}))
    code, out, _ = run(["process-tomography", path], capsys)
    assert code == EXIT_OK
    assert json.loads(out)["process_fidelity"]["Y"] == pytest.approx(1.0, abs=1e-12)


def test_process_tomography_bad_input(tmp_path, capsys):
    path = tmp_path / "x.json"
    path.write_text(json.dumps({"outputs": {}}))
    assert run(["process-tomography", path], capsys)[0] == EXIT_DATA
    path.write_text("{not json")
    assert run(["process-tomography", path], capsys)[0] == EXIT_DATA
    path.write_text(json.dumps({"other": 1}))
    assert run(["process-tomography", path], capsys)[0] == EXIT_DATA


# synth / analyze ------------------------------------------------------------------------------

def synth(tmp_path, capsys, name="tags", *extra):
    out = tmp_path / name
    code, _, err = run(["synth", "--seed", 5, "--out-dir", out, *SMALL, *extra], capsys)
    assert code == EXIT_OK, err
    return out


def test_synth_writes_manifest(tmp_path, capsys):
    out = synth(tmp_path, capsys)
    man = json.loads((out / "manifest.json").read_text())
    validate(man, "manifest")
    assert len(man["files"]) == 12
    assert {f["input"] for f in man["files"]} == {"H", "V", "D", "R"}
    for f in man["files"]:
        assert (out / f["file"]).read_bytes()[:4] == b"QTG1"


def test_synth_requires_seed(tmp_path, capsys):
    code, _, err = run(["synth", "--out-dir", tmp_path], capsys)
    assert code == EXIT_CONFIG and "seed" in err


def test_synth_deterministic_across_runs_and_workers(tmp_path, capsys):
    a = synth(tmp_path, capsys, "a")
    b = synth(tmp_path, capsys, "b", "--workers", "4")
    for p in sorted(a.iterdir()):
        assert p.read_bytes() == (b / p.name).read_bytes(), p.name


def test_synth_csv_format(tmp_path, capsys):
    out = synth(tmp_path, capsys, "c", "--set", "io.format='csv'")
    assert (out / "tags_H_HV.csv").read_text().startswith("channel,time_ps\n")
    code, o, _ = run(["analyze", "--tags-dir", out], capsys)
    assert code == EXIT_OK


def test_analyze_round_trip(tmp_path, capsys):
    out = synth(tmp_path, capsys)
    code, o, err = run(["analyze", "--tags-dir", out, *SMALL], capsys)
    assert code == EXIT_OK, err
    doc = json.loads(o)
    validate(doc, "analyze")
    bs = doc["signatures"]["bs"]
    assert bs["predicted_average"] == pytest.approx(0.652, abs=5e-4)
    assert abs(bs["average"] - bs["predicted_average"]) < 4 * bs["average_error"]
    assert doc["total_threefold"] > 0
    # analysis does not depend on run order
    assert run(["analyze", "--tags-dir", out / "manifest.json"], capsys)[1] == o


def test_analyze_without_coincidences(tmp_path, capsys):
    out = tmp_path / "dark"
    assert main(["synth", "--seed", "1", "--out-dir", str(out), "--set", "synth.duration_s=1e-5",
                 "--set", "synth.efficiency=0.0"]) == EXIT_OK
    code, o, err = run(["analyze", "--tags-dir", out], capsys)
    assert code == EXIT_DATA
    assert "refused" in err
    doc = json.loads(o)
    assert doc["signatures"]["bs"]["average"] is None


def test_analyze_corrupted_tags(tmp_path, capsys):
    out = synth(tmp_path, capsys)
    (out / "tags_H_HV.qtg").write_bytes(b"junk")
    code, _, err = run(["analyze", "--tags-dir", out], capsys)
    assert code == EXIT_DATA


def test_analyze_missing_dir(tmp_path, capsys):
    assert run(["analyze", "--tags-dir", tmp_path / "none"], capsys)[0] == EXIT_DATA


# fits --------------------------------------------------------------------------------------

def test_fit_hom_from_tags(tmp_path, capsys):
    s, _ = synthesize_hom_tags(0.55, 400_000, seed=2)
    write_tag_file(tmp_path / "hom.qtg", s)
    hist = tmp_path / "h.csv"
    code, out, err = run(["fit-hom", "--tags", tmp_path / "hom.qtg", "--span-ps", 6000, "--bin-ps", 50,
                          "--histogram-out", hist], capsys)
    assert code == EXIT_OK, err
    doc = json.loads(out)
    validate(doc, "fit")
    assert abs(doc["result"]["visibility"] - 0.55) < 0.03
    assert hist.read_text().startswith("bin_center_ps,counts")
    # refit from the written histogram gives the same answer
    code, out2, _ = run(["fit-hom", "--histogram", hist], capsys)
    assert json.loads(out2)["result"]["visibility"] == pytest.approx(doc["result"]["visibility"], abs=1e-9)


def test_fit_hom_degenerate(tmp_path, capsys):
    h = tmp_path / "h.csv"
    x = np.arange(-5000, 5001, 100)
    h.write_text(Histogram(x, np.zeros(x.size, np.int64), 100).to_csv())
    assert run(["fit-hom", "--histogram", h], capsys)[0] == EXIT_FIT
    h.write_text("bin_center_ps,counts\n0,5\n")
    assert run(["fit-hom", "--histogram", h], capsys)[0] == EXIT_DATA
    assert run(["fit-hom"], capsys)[0] == EXIT_DATA


def test_g2_from_tags(tmp_path, capsys):
    s, ledger = synthesize_hbt_tags(1_000_000, 0.9, 0.02, seed=3, efficiency=0.3)
    write_tag_file(tmp_path / "hbt.qtg", s)
    code, out, err = run(["g2", "--tags", tmp_path / "hbt.qtg", "--span-ps", 62500], capsys)
    assert code == EXIT_OK, err
    doc = json.loads(out)
    validate(doc, "fit")
    r = doc["result"]
    assert abs(r["g2"] - ledger.expected_g2) < 3 * r["error"]


def test_fit_lifetime_from_tags(tmp_path, capsys):
    s = synthesize_decay_tags(230.0, 300.0, 400_000, seed=4)
    write_tag_file(tmp_path / "decay.qtg", s)
    code, out, err = run(["fit-lifetime", "--tags", tmp_path / "decay.qtg", "--irf-fwhm-ps", 300], capsys)
    assert code == EXIT_OK, err
    doc = json.loads(out)
    validate(doc, "fit")
    assert doc["result"]["tau_ns"] == pytest.approx(0.23, rel=0.05)


def test_fit_lifetime_wrong_channels(tmp_path, capsys):
    s = synthesize_decay_tags(230.0, 300.0, 1000, seed=4)
    write_tag_file(tmp_path / "decay.qtg", s)
    code, _, _ = run(["fit-lifetime", "--tags", tmp_path / "decay.qtg", "--irf-fwhm-ps", 300, "--det-ch", 7], capsys)
    assert code == EXIT_DATA


# report -----------------------------------------------------------------------------------------

def test_report_bundle(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["report", "--seed", "9", "--out-dir", str(a)]) == EXIT_OK
    assert main(["report", "--seed", "9", "--out-dir", str(b)]) == EXIT_OK
    index = json.loads((a / "index.json").read_text())
    assert len(index["files"]) >= 15
    for name in index["files"] + ["index.json"]:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    for name in ("teleport_bs.json", "teleport_pbs.json", "teleport_pbs_v079.json"):
        validate(json.loads((a / name).read_text()), "simulate")
    for name in ("hom_v055_fit.json", "hom_v079_fit.json", "lifetime_fit.json"):
        validate(json.loads((a / name).read_text()), "fit")
    rows = list(csv.DictReader((a / "comparison.csv").open()))
    assert rows[0].keys() == {"quantity", "model", "measured", "measured_error"}
    by = {r["quantity"]: r for r in rows}
    assert float(by["bs_average"]["model"]) == pytest.approx(0.652, abs=5e-4)
    hom = json.loads((a / "hom_v055_fit.json").read_text())["result"]
    assert abs(hom["visibility"] - 0.55) < 0.02
