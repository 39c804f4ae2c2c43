"""End-to-end CLI: every subcommand, deterministic artifacts, error paths."""

import json

import pytest

from iontrap_bench.cli import main

CIRCUIT = """PREPARE
R 1.5707963267948966 0.0 all
MS 0.7853981633974483 0,1 axial
MEASURE m0
"""


@pytest.fixture
def circuit_file(tmp_path):
    path = tmp_path / "bell.circ"
    path.write_text(CIRCUIT)
    return str(path)


def test_chain_csv_output(tmp_path, capsys):
    out = tmp_path / "chain.csv"
    assert main(["chain", "--n", "3", "--fax", "450e3", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "ion_index,position_um"
    assert lines[4] == "mode_index,freq_hz,direction"
    # 3 positions + header, then 3 axial and 3 radial modes
    assert sum(l.endswith(",axial") for l in lines) == 3
    assert sum(l.endswith(",radial") for l in lines) == 3
    freq0 = float(lines[5].split(",")[1])
    assert freq0 == pytest.approx(450e3, rel=1e-9)


def test_chain_stdout(capsys):
    assert main(["chain", "--n", "2"]) == 0
    assert capsys.readouterr().out.startswith("ion_index,position_um")


def test_compile_schedule_json(tmp_path, circuit_file):
    out = tmp_path / "schedule.json"
    assert main(["compile", "--circuit", circuit_file, "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    kinds = [e["kind"] for e in data["events"]]
    assert kinds == ["carrier", "bichromatic", "measure"]
    assert data["n_qubits"] == 2


def test_simulate_deterministic_across_threads(tmp_path, circuit_file):
    outs = {}
    for name, threads in (("t1", "1"), ("t4", "4"), ("t1b", "1")):
        d = tmp_path / name
        assert main(["simulate", "--circuit", circuit_file, "--shots", "50",
                     "--seed", "5", "--threads", threads, "--out", str(d)]) == 0
        outs[name] = (d / "shots.csv").read_bytes()
    assert outs["t1"] == outs["t4"] == outs["t1b"]
    summary = json.loads((tmp_path / "t1" / "summary.json").read_text())
    assert summary["shots"] == 50
    assert summary["provenance"]["seed"] == 5


def test_simulate_seed_changes_shots(tmp_path, circuit_file):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["simulate", "--circuit", circuit_file, "--shots", "50",
          "--seed", "1", "--out", str(a)])
    main(["simulate", "--circuit", circuit_file, "--shots", "50",
          "--seed", "2", "--out", str(b)])
    assert (a / "shots.csv").read_bytes() != (b / "shots.csv").read_bytes()


def test_experiment_rerun_byte_identical(tmp_path):
    outs = []
    for name in ("r1", "r2"):
        d = tmp_path / name
        assert main(["experiment", "rb", "--shots", "200", "--seed", "7",
                     "--out", str(d)]) == 0
        outs.append({f.name: f.read_bytes() for f in d.iterdir()})
    assert outs[0] == outs[1]
    summary = json.loads((tmp_path / "r1" / "summary.json").read_text())
    assert "gate_fidelity" in summary
    assert "decay" in summary["fits"]


def test_experiment_respects_config(tmp_path):
    cfg = tmp_path / "noise.cfg"
    cfg.write_text("noise.t2_ground_s = 0.010\nexperiment.shots = 150\n")
    d = tmp_path / "out"
    assert main(["experiment", "ramsey", "--noise", str(cfg),
                 "--qubit-kind", "ground", "--seed", "3", "--out", str(d)]) == 0
    summary = json.loads((d / "summary.json").read_text())
    t2 = summary["t2_s"]
    assert abs(t2 - 0.010) / 0.010 < 0.35


def test_fit_subcommand(tmp_path, capsys):
    data = tmp_path / "points.csv"
    rows = ["x,y,yerr,shots"]
    for x in range(9):
        rows.append(f"{x},{3.1 * x - 0.2},0.01,100")
    data.write_text("\n".join(rows) + "\n")
    assert main(["fit", "--model", "linear", "--data", str(data)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["fit"]["params"]["slope"]["value"] == pytest.approx(3.1)


def test_cli_error_paths(tmp_path, capsys):
    assert main(["compile", "--circuit", str(tmp_path / "missing.circ")]) == 1
    assert "error:" in capsys.readouterr().err
    bad = tmp_path / "bad.circ"
    bad.write_text("FOO 1 2\n")
    assert main(["compile", "--circuit", str(bad)]) == 1
    assert main(["chain", "--n", "0"]) == 1
