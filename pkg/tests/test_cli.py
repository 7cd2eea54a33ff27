"""Command-line interface: JSON/CSV/pixmap outputs, config plumbing, exit codes."""

import json
import math

import numpy as np
import pytest

from treepolymer import CustomLaw, cli
from treepolymer.cli import (
    EXIT_CHECK_FAILED,
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_UNDETERMINED,
    EXPERIMENT_HEADER,
    _fmt,
    _parse_grid,
    main,
    rows_to_csv,
)
from treepolymer.errors import ConfigError

LN2 = math.log(2.0)


def strict_loads(text):
    def no_constants(token):
        raise ValueError(f"non-strict JSON token: {token}")

    return json.loads(text, parse_constant=no_constants)


def run(argv, capsys):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# ------------------------------------------------------------- serializers


def test_cell_formatting_is_round_trip_stable():
    assert _fmt(True) == "true"
    assert _fmt(False) == "false"
    assert _fmt(3) == "3"
    assert _fmt(np.int64(7)) == "7"
    assert _fmt(0.1) == "0.1"
    assert _fmt(np.float64(0.25)) == "0.25"
    assert float(_fmt(1.0 / 3.0)) == 1.0 / 3.0
    assert _fmt("R2a") == "R2a"


def test_csv_layout():
    text = rows_to_csv(["a", "b"], [[1, 2.5], ["x", True]])
    assert text == "a,b\n1,2.5\nx,true\n"


def test_grid_parsing():
    assert _parse_grid("0:2:5") == ((0.0, 2.0, 5), (0.0, 2.0, 5))
    assert _parse_grid("0:1:3,0.5:0.9:2") == ((0.0, 1.0, 3), (0.5, 0.9, 2))
    for bad in ("0:2", "0:2:0", "2:0:5", "a:b:c", "0:2:5,0:1:2,0:1:2", "0:inf:4"):
        with pytest.raises(ConfigError):
            _parse_grid(bad)


# ------------------------------------------------------------- phase-point


def test_phase_point_reports_both_classifiers(capsys):
    code, out, err = run(["phase-point", "--beta", "0.3", "--gamma", "0.3"], capsys)
    assert code == EXIT_OK
    payload = strict_loads(out)
    assert payload["generic"]["region"] == "R1"
    assert payload["closed_form"]["region"] == "R1"
    assert payload["agree"] is True
    assert payload["generic"]["predicted_f"] == pytest.approx(LN2, abs=1e-9)
    assert payload["critical"]["beta_c"] == pytest.approx(math.sqrt(2 * LN2), abs=1e-8)
    # closed-form reports carry no minimizer; NaN must arrive as null
    assert payload["closed_form"]["alpha_min"] is None
    assert "region R1" in err


def test_phase_point_strong_disorder_example(capsys):
    code, out, _ = run(["phase-point", "--beta", "1.5", "--gamma", "0.1"], capsys)
    assert code == EXIT_OK
    payload = strict_loads(out)
    assert payload["generic"]["region"] == "R2a"
    assert payload["generic"]["predicted_f"] == pytest.approx(
        1.5 * math.sqrt(2 * LN2), abs=1e-6)


def test_phase_point_writes_json_artifact(tmp_path, capsys):
    out_file = tmp_path / "point.json"
    code, out, _ = run(["phase-point", "--beta", "0.8", "--gamma", "0.8",
                        "--out", str(out_file)], capsys)
    assert code == EXIT_OK
    assert strict_loads(out_file.read_text()) == strict_loads(out)


def test_phase_point_infinite_critical_values_serialize_as_strings(capsys):
    code, out, _ = run(["phase-point", "--model", "constant", "--c", "1", "0"],
                       capsys)
    assert code == EXIT_OK
    payload = strict_loads(out)
    assert payload["critical"]["beta_c"] == "inf"
    assert payload["generic"]["region"] == "R1"
    assert payload["agree"] is True


def test_strict_flag_turns_undetermined_into_exit_3(capsys, monkeypatch):
    def polar(raw):
        count = raw.shape[0]
        return np.ones(count), np.zeros(count)

    table = {a: 0.5 * (0.8 * a) ** 2 for a in (0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0)}
    coupled = CustomLaw(polar=polar, log_moments=table, mean=0.9 + 0j,
                        independent=False)
    monkeypatch.setattr(cli, "_law", lambda cfg: coupled)
    code, out, _ = run(["phase-point", "--strict"], capsys)
    assert code == EXIT_UNDETERMINED
    payload = strict_loads(out)
    assert payload["generic"]["region"] == "Undetermined"
    assert payload["generic"]["predicted_f"] is None  # NaN sanitized
    assert payload["closed_form"] is None
    code, _, _ = run(["phase-point"], capsys)
    assert code == EXIT_OK


# ----------------------------------------------------------------- diagram


def test_diagram_writes_grid_cells_and_pixmap(tmp_path, capsys):
    stem = tmp_path / "map"
    code, out, err = run(["diagram", "--grid", "0:2:3", "--out", str(stem)],
                         capsys)
    assert code == EXIT_OK
    payload = strict_loads(out)
    assert payload["grid"] == {"beta": [0.0, 2.0, 3], "gamma": [0.0, 2.0, 3]}
    assert sum(payload["region_counts"].values()) == 9

    csv_lines = (stem.with_suffix(".csv")).read_text().splitlines()
    assert csv_lines[0].startswith("# critical beta_0=")
    assert csv_lines[1] == "beta,gamma,region,f"
    assert len(csv_lines) == 2 + 9
    first = csv_lines[2].split(",")
    assert first[0] == "0.0" and first[1] == "0.0"  # gamma-major, ascending

    ppm = (stem.with_suffix(".ppm")).read_bytes()
    assert ppm.startswith(b"P6\n# critical ")
    header_end = ppm.index(b"255\n") + 4
    assert b"3 3\n" in ppm[:header_end]
    pixels = ppm[header_end:]
    assert len(pixels) == 3 * 9
    top_left = tuple(pixels[0:3])        # beta=0, gamma=2: diagonal regime
    bottom_left = tuple(pixels[6 * 3: 6 * 3 + 3])   # beta=0, gamma=0: weak
    bottom_right = tuple(pixels[8 * 3: 8 * 3 + 3])  # beta=2, gamma=0: strong
    assert top_left == cli._REGION_COLORS["R3"]
    assert bottom_left == cli._REGION_COLORS["R1"]
    assert bottom_right == cli._REGION_COLORS["R2a"]
    assert "diagram 3x3" in err


def test_diagram_reruns_are_byte_identical(tmp_path, capsys):
    first = tmp_path / "a"
    second = tmp_path / "b"
    for stem in (first, second):
        code, _, _ = run(["diagram", "--grid", "0:2:21,0:1.5:17",
                          "--out", str(stem)], capsys)
        assert code == EXIT_OK
    assert first.with_suffix(".csv").read_bytes() == second.with_suffix(".csv").read_bytes()
    assert first.with_suffix(".ppm").read_bytes() == second.with_suffix(".ppm").read_bytes()


def test_diagram_zero_phase_slice_has_no_diagonal_region(tmp_path, capsys):
    stem = tmp_path / "slice"
    code, out, _ = run(["diagram", "--grid", "0:2:40,0:0:1", "--out", str(stem)],
                       capsys)
    assert code == EXIT_OK
    counts = strict_loads(out)["region_counts"]
    assert "R3" not in counts
    assert counts.get("R1", 0) > 0
    assert counts.get("R2a", 0) > 0


def test_diagram_with_cell_estimates_extends_the_header(tmp_path, capsys):
    stem = tmp_path / "est"
    code, _, _ = run(["diagram", "--grid", "0.2:1:2,0.2:0.8:2",
                      "--n", "4", "--replicas", "3", "--out", str(stem)],
                     capsys)
    assert code == EXIT_OK
    lines = stem.with_suffix(".csv").read_text().splitlines()
    assert lines[1] == "beta,gamma,region,f,mc_mean,mc_ci_lo,mc_ci_hi"
    cells = lines[2].split(",")
    assert len(cells) == 7
    assert math.isfinite(float(cells[4]))


def test_diagram_guards(tmp_path, capsys):
    code, _, err = run(["diagram", "--grid", "0:2:4", "--out",
                        str(tmp_path / "x"), "--model", "constant",
                        "--c", "1", "0"], capsys)
    assert code == EXIT_CONFIG and "error:" in err
    code, _, err = run(["diagram", "--grid", "0:2:4,0:2:4", "--out",
                        str(tmp_path / "y"), "--model", "uniform"], capsys)
    assert code == EXIT_CONFIG  # uniform phase scale cannot exceed 1
    code, _, err = run(["diagram", "--grid", "0:2:4"], capsys)
    assert code == EXIT_CONFIG  # diagram requires --out
    code, _, err = run(["diagram", "--grid", "nope", "--out",
                        str(tmp_path / "z")], capsys)
    assert code == EXIT_CONFIG


# ---------------------------------------------------------------- simulate


def test_simulate_constant_law_writes_exact_experiment_rows(tmp_path, capsys):
    out_file = tmp_path / "run.csv"
    code, out, err = run(["simulate", "--model", "constant", "--c", "1", "0",
                          "--n", "3", "--replicas", "4", "--out",
                          str(out_file)], capsys)
    assert code == EXIT_OK
    payload = strict_loads(out)
    result = payload["results"]["free_energy"]
    assert result["mean"] == pytest.approx(LN2, rel=1e-12)
    assert result["std_error"] == 0.0
    assert result["region"] == "R1"
    assert result["predicted"] == pytest.approx(LN2, rel=1e-12)
    lines = out_file.read_text().splitlines()
    assert lines[0] == ",".join(EXPERIMENT_HEADER)
    cells = lines[1].split(",")
    assert cells[0] == "constant"
    assert cells[7] == "free_energy"
    assert float(cells[8]) == pytest.approx(LN2, rel=1e-12)
    assert cells[13] == "R1"
    assert cells[14] == "0"
    assert "free_energy: mean" in err


def test_simulate_both_functionals_yields_two_rows(tmp_path, capsys):
    out_file = tmp_path / "both.csv"
    code, out, _ = run(["simulate", "--beta", "0.3", "--gamma", "0.3",
                        "--n", "4", "--replicas", "3", "--only", "both",
                        "--out", str(out_file)], capsys)
    assert code == EXIT_OK
    payload = strict_loads(out)
    assert set(payload["results"]) == {"free_energy", "w_free_energy"}
    lines = out_file.read_text().splitlines()
    assert len(lines) == 3
    assert lines[1].split(",")[7] == "free_energy"
    assert lines[2].split(",")[7] == "w_free_energy"
    # weak-disorder pair prediction: ln b dominates the damped route
    assert payload["results"]["w_free_energy"]["predicted"] == pytest.approx(
        LN2, abs=1e-9)


def test_simulate_trace_mode(tmp_path, capsys):
    out_file = tmp_path / "trace.csv"
    code, out, _ = run(["simulate", "--beta", "0.5", "--gamma", "0.5",
                        "--n", "5", "--replicas", "1", "--only", "trace",
                        "--out", str(out_file)], capsys)
    assert code == EXIT_OK
    assert strict_loads(out)["trace_rows"] == 5
    lines = out_file.read_text().splitlines()
    assert lines[0] == "n,ln_abs_z_over_n,ln_z_abs_over_n,ln_z_abs2_over_n,ln_w_cond_over_2n"
    assert len(lines) == 6
    assert [row.split(",")[0] for row in lines[1:]] == ["1", "2", "3", "4", "5"]


def test_simulate_reruns_are_byte_identical(tmp_path, capsys):
    files = []
    for name in ("one.csv", "two.csv"):
        out_file = tmp_path / name
        code, _, _ = run(["simulate", "--beta", "0.8", "--gamma", "0.8",
                          "--n", "6", "--replicas", "8", "--only", "both",
                          "--out", str(out_file)], capsys)
        assert code == EXIT_OK
        files.append(out_file.read_bytes())
    assert files[0] == files[1]


def test_simulate_guards(capsys):
    code, _, err = run(["simulate", "--beta", "0.5", "--gamma", "0.5",
                        "--replicas", "4"], capsys)
    assert code == EXIT_CONFIG and "missing required parameter: --n" in err
    code, _, err = run(["simulate", "--beta", "0.5", "--gamma", "0.5",
                        "--n", "4", "--replicas", "4", "--only", "bogus"],
                       capsys)
    assert code == EXIT_CONFIG and "unknown simulate selector" in err
    code, _, err = run(["simulate", "--beta", "0.5", "--gamma", "0.5",
                        "--n", "40", "--replicas", "1"], capsys)
    assert code == EXIT_CONFIG and "budget" in err


# ------------------------------------------------------------------ verify


def test_verify_single_check_passes(tmp_path, capsys):
    out_file = tmp_path / "verify.csv"
    code, out, err = run(["verify", "--only", "pz", "--out", str(out_file)],
                         capsys)
    assert code == EXIT_OK
    payload = strict_loads(out)
    assert payload["passed"] is True
    assert payload["checks"][0]["name"] == "pz"
    assert payload["checks"][0]["min_margin"] >= -1e-12
    assert out_file.read_text() == "check,passed\npz,true\n"
    assert "pz: pass" in err


def test_verify_rejects_unknown_check(capsys):
    code, _, err = run(["verify", "--only", "nonsense"], capsys)
    assert code == EXIT_CONFIG and "unknown check" in err


def test_verify_detects_injected_defect(capsys):
    code, out, err = run(["verify", "--only", "oracle", "--inject-defect"],
                         capsys)
    assert code == EXIT_CHECK_FAILED
    payload = strict_loads(out)
    assert payload["passed"] is False
    assert payload["checks"][0]["failing_invariant"] == "w_cond_pair_recursion"
    assert "oracle: FAIL" in err


def test_verify_oracle_clean_run_passes(capsys):
    code, out, _ = run(["verify", "--only", "oracle"], capsys)
    assert code == EXIT_OK
    payload = strict_loads(out)
    assert payload["checks"][0]["worst_rel_err"] <= 1e-12


# ------------------------------------------------------------------ config


def test_config_file_fills_flags_and_flags_override(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": "gaussian", "beta": 0.3,
                               "gamma": 0.3, "b": 2}))
    code, out, _ = run(["phase-point", "--config", str(cfg)], capsys)
    assert code == EXIT_OK
    assert strict_loads(out)["generic"]["region"] == "R1"
    code, out, _ = run(["phase-point", "--config", str(cfg), "--beta", "1.5"],
                       capsys)
    assert code == EXIT_OK
    payload = strict_loads(out)
    assert payload["beta"] == 1.5
    assert payload["generic"]["region"] == "R2a"


def test_config_rejects_unknown_keys_and_bad_files(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    code, _, err = run(["phase-point", "--config", str(cfg)], capsys)
    assert code == EXIT_CONFIG and "unknown config key: bogus" in err
    cfg.write_text("[1, 2]")
    code, _, err = run(["phase-point", "--config", str(cfg)], capsys)
    assert code == EXIT_CONFIG and "JSON object" in err
    code, _, err = run(["phase-point", "--config", str(tmp_path / "missing.json")],
                       capsys)
    assert code == EXIT_CONFIG and "cannot read config" in err


def test_budget_environment_variable_sets_the_default(monkeypatch, capsys):
    monkeypatch.setenv("TREEPOLYMER_BUDGET_NODES", "64")
    code, _, err = run(["simulate", "--beta", "0.5", "--gamma", "0.5",
                        "--n", "8", "--replicas", "2"], capsys)
    assert code == EXIT_CONFIG and "exceeds per-tree budget 64" in err
    code, _, _ = run(["simulate", "--beta", "0.5", "--gamma", "0.5",
                      "--n", "8", "--replicas", "2",
                      "--budget-nodes", "16777216"], capsys)
    assert code == EXIT_OK  # explicit flag overrides the environment


def test_missing_law_parameters_exit_as_config_errors(capsys):
    code, _, err = run(["phase-point", "--model", "rademacher"], capsys)
    assert code == EXIT_CONFIG and "missing field" in err
