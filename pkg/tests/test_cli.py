import json
import subprocess
import sys

import numpy as np
import pytest

from tubeswarm.cli import main
from tubeswarm.tube import load_tube


def test_validate_scenario_ok(capsys):
    assert main(["validate-tube", "scenarios/swarm20_sine.json", "--r-s", "0.4"]) == 0
    out = capsys.readouterr().out
    assert "proper" in out and "r_s'=" in out and "initial state PASS" in out


def test_validate_improper_tube_exit_3(capsys):
    assert main(["validate-tube", "tubes/improper_corner.json"]) == 3
    assert "geometry error" in capsys.readouterr().err


def test_missing_and_malformed_input_exit_2(tmp_path, capsys):
    assert main(["validate-tube", str(tmp_path / "nope.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert main(["run", str(bad)]) == 2
    partial = tmp_path / "partial.json"
    partial.write_text(json.dumps({"tube": {"type": "waypoints", "waypoints": [[0, 0], [5, 0]],
                                            "half_widths": 1}}))
    assert main(["run", str(partial)]) == 2
    assert "config error" in capsys.readouterr().err


def test_run_writes_csvs(tmp_path, capsys):
    code = main(["run", "scenarios/swarm20_sine.json", "--duration", "0.2", "--stride", "10",
                 "--out", str(tmp_path)])
    assert code == 0
    traj = (tmp_path / "swarm20_sine_trajectory.csv").read_text().splitlines()
    met = (tmp_path / "swarm20_sine_metrics.csv").read_text().splitlines()
    assert traj[0] == "t,robot_id,x,y,vx,vy,finished"
    assert met[0] == "t,min_pair_dist,min_boundary_dist,V,Vdot,finished_count"
    assert len(traj) == 1 + 3 * 20 and len(met) == 1 + 3
    assert "min pair" in capsys.readouterr().out


def test_run_safety_violation_exit_1(tmp_path, capsys):
    code = main(["run", "scenarios/swarm20_sine.json", "--dt", "0.6", "--out", str(tmp_path)])
    assert code == 1
    assert "safety violation" in capsys.readouterr().err
    # what happened up to the abort is still written out
    assert (tmp_path / "swarm20_sine_metrics.csv").exists()


def test_run_variant_override(tmp_path):
    code = main(["run", "scenarios/full3_straight.json", "--duration", "0.1", "--variant", "modified",
                 "--out", str(tmp_path)])
    assert code == 0
    met = np.genfromtxt(tmp_path / "full3_straight_metrics.csv", delimiter=",", names=True)
    assert np.all(np.isnan(met["V"]))


def test_teach_builds_proper_tube(tmp_path):
    recorded = json.loads(open("scenarios/teach_repeat.json").read())["tube"]
    rec = tmp_path / "rec.json"
    rec.write_text(json.dumps({"trajectory": recorded["trajectory"], "obstacles": recorded["obstacles"]}))
    out = tmp_path / "taught.json"
    assert main(["teach", str(rec), "--clearance-cap", "3.0", "--r-s", "0.4", "--out", str(out)]) == 0
    assert main(["validate-tube", str(out)]) == 0
    tube = load_tube(out)
    assert tube.r_t.max() <= 3.0 + 1e-12
    # the same recording as CSV files
    traj_csv, obs_csv = tmp_path / "traj.csv", tmp_path / "obs.csv"
    np.savetxt(traj_csv, recorded["trajectory"], delimiter=",", header="x,y", comments="")
    np.savetxt(obs_csv, recorded["obstacles"], delimiter=",")
    out2 = tmp_path / "taught2.json"
    assert main(["teach", str(traj_csv), "--obstacles", str(obs_csv), "--clearance-cap", "3.0",
                 "--out", str(out2)]) == 0
    np.testing.assert_allclose(load_tube(out2).r_t, tube.r_t, atol=1e-9)


def test_bench_small(tmp_path, capsys):
    out = tmp_path / "bench.csv"
    assert main(["bench", "--sizes", "2,3", "--steps", "1", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "M,variant,mean_step_ns,p99_step_ns,infeasible_steps"
    assert len(lines) == 1 + 2 * 4
    assert main(["bench", "--sizes", "2", "--variants", "bogus", "--out", str(out)]) == 2


def test_gradcheck(capsys):
    assert main(["gradcheck", "--only", "pair_barrier,panel"]) == 0
    assert "max relative error" in capsys.readouterr().out
    assert main(["gradcheck", "--only", "nonsense"]) == 2


def test_bad_arguments_exit_2():
    with pytest.raises(SystemExit) as info:
        main(["run"])
    assert info.value.code == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "tubeswarm.cli", "validate-tube",
                          "tubes/improper_corner.json"], capture_output=True, text=True)
    assert res.returncode == 3
