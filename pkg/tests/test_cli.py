import csv
import json

import pytest

from netmech import bench
from netmech.cli import main
from netmech.distributions import AgentPrior, Uniform, dump_priors
from netmech.market import dump_instance, instance_to_dict, load_instance

GOLDEN = {
    "n": 2, "demand": [0.3, 0.3], "edges": [{"a": 0, "b": 1, "r": 1.0}],
    "q_bar": 10.0, "N": 1, "slopes": [[1.0], [2.0]], "c_lo": 1.0, "c_hi": 2.0,
}


@pytest.fixture
def golden_file(tmp_path):
    p = tmp_path / "golden.json"
    p.write_text(json.dumps(GOLDEN))
    return p


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_solve_golden(golden_file, tmp_path):
    out = tmp_path / "sol.json"
    assert main(["--command", "solve", "--instance", str(golden_file), "--out", str(out)]) == 0
    sol = json.loads(out.read_text())
    assert sol["primal_cost"] == pytest.approx(0.733333, abs=1e-6)
    assert sol["h"] == [{"from": 0, "to": 1, "flow": pytest.approx(1 / 3)}]
    assert set(sol) == {"lambda", "q", "q_seg", "h", "primal_cost", "dual_value", "iterations", "trace"}


def test_solve_trajectory_csv(golden_file, tmp_path):
    out = tmp_path / "traj.csv"
    assert main(["--command", "solve", "--instance", str(golden_file), "--format", "csv", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert list(rows[0]) == ["iteration", "node", "lambda", "decrement"]


def test_generate_round_trip(tmp_path):
    out = tmp_path / "inst.json"
    assert main(["--command", "generate", "--n-nodes", "100", "--m", "2", "--seed", "1", "--out", str(out)]) == 0
    net, costs = load_instance(out)
    again = tmp_path / "again.json"
    dump_instance(again, net, costs)
    assert instance_to_dict(*load_instance(again)) == instance_to_dict(net, costs)


def test_bench_missing_file(tmp_path, capsys):
    code = main(["--command", "bench", "--instance", str(tmp_path / "nope.json")])
    assert code != 0
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "ConfigError"


def test_config_errors(golden_file, capsys):
    assert main(["--command", "solve", "--instance", str(golden_file), "--tol", "0"]) != 0
    assert main(["--command", "mechanism", "--instance", str(golden_file)]) != 0
    assert main(["--command", "solve"]) != 0
    assert main(["--command", "solve", "--instance", str(golden_file), "--quad-points", "4"]) != 0


def test_bench_csv_schema(tmp_path):
    out = tmp_path / "bench.csv"
    args = ["--command", "bench", "--n-instances", "1", "--n-nodes", "5", "--format", "csv", "--out", str(out)]
    assert main(args) == 0
    rows = read_csv(out)
    assert list(rows[0]) == bench.BENCH_COLUMNS
    assert {r["solver"] for r in rows} == {"fixed_point", "reference"}
    assert all(r["converged"] == "True" for r in rows)


def test_bench_deterministic_costs():
    a, _ = bench.run_benchmark(2, 20, "piecewise", seed=5)
    b, _ = bench.run_benchmark(2, 20, "piecewise", seed=5, parallel=True)
    assert [r.cost for r in a] == [r.cost for r in b]


def test_mechanism_and_audit(tmp_path):
    inst = dict(GOLDEN, c_lo=0.5, c_hi=2.5)
    ip = tmp_path / "m.json"
    ip.write_text(json.dumps(inst))
    pp = tmp_path / "p.json"
    dump_priors(pp, [AgentPrior((Uniform(0.5, 1.5),)), AgentPrior((Uniform(1.5, 2.5),))])
    out = tmp_path / "mech.json"
    assert main(["--command", "mechanism", "--instance", str(ip), "--priors", str(pp), "--out", str(out)]) == 0
    d = json.loads(out.read_text())
    assert len(d["x"]) == 2 and d["virtual_profile"]["slopes"] == [[1.5], [2.5]]
    rep = tmp_path / "audit.csv"
    args = ["--command", "audit", "--instance", str(ip), "--priors", str(pp), "--mc-samples", "50",
            "--n-misreports", "5", "--format", "csv", "--out", str(rep)]
    assert main(args) == 0
    rows = read_csv(rep)
    assert list(rows[0]) == ["instance_id", "agent", "segment", "metric", "estimate", "std_err", "verdict"]
    assert all(r["verdict"] in ("PASS", "") for r in rows)
