import json
import math
import subprocess
import sys

import numpy as np
import pytest

from spiralfield.cli import main
from spiralfield.output import read_csv

SMALL_FLEET = {"fleet": {"batch_sizes": [5, 9], "batches_per_size": 3, "pool_size": 200}}
SMALL_PERCEPTION = {"perception": {"frames": 40}}


def scenario(tmp_path, data, name="scenario.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def test_gen_spiral(tmp_path, capsys):
    out = tmp_path / "s.json"
    assert main(["gen", "--kind", "spiral", "--s", "0.75", "--d", "11.5", "-o", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert sum(seg["kind"] == "straight" for seg in doc["segments"]) == 31
    assert "31 straight segments" in capsys.readouterr().out


def test_gen_linear(tmp_path):
    out = tmp_path / "l.json"
    assert main(["gen", "--kind", "linear", "--rows", "16", "--row-length", "10.5", "-o", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert sum(seg["kind"] == "straight" for seg in doc["segments"]) == 16
    assert doc["spec"]["row_length"] == 10.5


def test_gen_missing_spacing_exits_2(tmp_path, capsys):
    assert main(["gen", "--kind", "spiral", "--d", "11.5", "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_gen_invalid_spec_exits_2(tmp_path):
    assert main(["gen", "--kind", "spiral", "--s", "-1", "--d", "11.5", "--out", str(tmp_path)]) == 2


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("SPIRALFIELD_OUT", str(tmp_path / "env_out"))
    assert main(["gen", "--kind", "spiral", "--s", "1", "--d", "4"]) == 0
    assert (tmp_path / "env_out" / "layout_spiral.json").exists()


def test_graph_and_plan(tmp_path):
    lay = tmp_path / "s.json"
    main(["gen", "--kind", "spiral", "--s", "0.75", "--d", "11.5", "-o", str(lay)])
    assert main(["graph", str(lay), "--out", str(tmp_path)]) == 0
    verts = read_csv(tmp_path / "graph_vertices.csv")
    edges = read_csv(tmp_path / "graph_edges.csv")
    assert len(verts) > 100 and len(edges) > len(verts)
    for e in edges[:50]:
        a, b = verts[int(e["from"])], verts[int(e["to"])]
        assert float(e["weight"]) == math.dist((float(a["x"]), float(a["y"])), (float(b["x"]), float(b["y"])))
    tour = tmp_path / "tour.json"
    rc = main(["plan", str(lay), "--start", "0,0", "--targets", "5,11.5;11.5,3;2,0.75", "-o", str(tour)])
    assert rc == 0
    doc = json.loads(tour.read_text())
    assert len(doc["order"]) == 3
    assert doc["total_length"] == pytest.approx(sum(doc["leg_lengths"]))


def test_plan_bad_points_exit_2(tmp_path):
    lay = tmp_path / "s.json"
    main(["gen", "--kind", "spiral", "--s", "1", "--d", "4", "-o", str(lay)])
    assert main(["plan", str(lay), "--start", "a,b", "--targets", "1,1"]) == 2


def test_unknown_experiment_exit_2(tmp_path):
    assert main(["experiment", "nope", "--out", str(tmp_path)]) == 2


def test_unknown_scenario_key_exit_2(tmp_path):
    path = scenario(tmp_path, {"fleet": {"robotz": 3}})
    assert main(["experiment", "allocation", "--scenario", path, "--out", str(tmp_path)]) == 2


def test_missing_scenario_file_exit_2(tmp_path):
    assert main(["experiment", "perception", "--scenario", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 2


def test_runtime_guard_exit_3(tmp_path, capsys):
    path = scenario(tmp_path, {"controller": {"divergence_limit": 1e-9}})
    assert main(["experiment", "coverage", "--scenario", path, "--out", str(tmp_path)]) == 3
    diag = json.loads((tmp_path / "coverage_diagnostics.json").read_text())
    assert "exceeds" in diag["error"]
    assert "diagnostics" in capsys.readouterr().err


def test_allocation_csv_recomputes(tmp_path):
    path = scenario(tmp_path, SMALL_FLEET)
    assert main(["experiment", "allocation", "--scenario", path, "--m", "3", "--out", str(tmp_path)]) == 0
    runs = read_csv(tmp_path / "allocation_runs.csv")
    summary = read_csv(tmp_path / "allocation_summary.csv")
    assert len(summary) == 4
    for row in summary:
        mine = [r for r in runs if (r["method"], r["m"], r["batch_size"]) == (row["method"], row["m"], row["batch_size"])]
        assert len(mine) == 3
        bt = [float(r["BT_b"]) for r in mine]
        assert float(row["avg_batch_time"]) == sum(bt) / len(bt)
        cvs = []
        for r in mine:
            z = [int(c) for c in r["Z"].split(";")]
            assert sum(z) == int(r["batch_size"])
            mu = sum(z) / len(z)
            sd = math.sqrt(sum((c - mu) ** 2 for c in z) / len(z))
            assert float(r["CV_b"]) == pytest.approx(sd / mu, rel=1e-12)
            cvs.append(float(r["CV_b"]))
        assert float(row["mean_cv"]) == pytest.approx(sum(cvs) / len(cvs), rel=1e-12)


def test_waypoint_csv_recomputes(tmp_path):
    path = scenario(tmp_path, {"waypoints": {"count": 40}})
    assert main(["experiment", "waypoints", "--scenario", path, "--out", str(tmp_path)]) == 0
    batches = read_csv(tmp_path / "waypoints_batches.csv")
    (summary,) = read_csv(tmp_path / "waypoints_summary.csv")
    means = {}
    for name in ("linear", "spiral"):
        d = [float(r["distance"]) for r in batches if r["layout"] == name]
        assert len(d) == 8
        means[name] = float(np.mean(d))
        assert float(summary[f"{name}_mean_distance"]) == means[name]
    red = 100 * (means["linear"] - means["spiral"]) / means["linear"]
    assert float(summary["distance_reduction_pct"]) == pytest.approx(red, rel=1e-12)


def test_csv_format(tmp_path):
    path = scenario(tmp_path, SMALL_PERCEPTION)
    main(["experiment", "perception", "--scenario", path, "--out", str(tmp_path)])
    raw = (tmp_path / "perception_summary.csv").read_bytes()
    assert b"\r" not in raw
    assert raw.decode("utf-8").splitlines()[0] == "sigma,epsilon,mean_dtheta,mean_dLx,scene_accuracy"
    assert not list(tmp_path.glob(".*.tmp"))


@pytest.mark.parametrize(
    "name, data, files",
    [
        ("perception", SMALL_PERCEPTION, ["perception_frames.csv", "perception_summary.csv"]),
        ("allocation", SMALL_FLEET, ["allocation_runs.csv", "allocation_summary.csv"]),
        ("waypoints", {"waypoints": {"count": 30}}, ["waypoints_batches.csv", "waypoints_summary.csv"]),
    ],
)
def test_same_seed_byte_identical(tmp_path, name, data, files):
    path = scenario(tmp_path, data)
    for run in ("a", "b"):
        assert main(["experiment", name, "--scenario", path, "--seed", "5", "--out", str(tmp_path / run)]) == 0
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_figures_are_opt_in(tmp_path):
    path = scenario(tmp_path, SMALL_PERCEPTION)
    main(["experiment", "perception", "--scenario", path, "--out", str(tmp_path / "plain")])
    assert not list((tmp_path / "plain").glob("*.png"))
    main(["experiment", "perception", "--scenario", path, "--figures", "--out", str(tmp_path / "fig")])
    assert (tmp_path / "fig" / "perception.png").stat().st_size > 0


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "spiralfield.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0
    assert out.stdout.strip() == "0.1.0"
