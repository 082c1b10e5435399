import csv
import json
import math

import numpy as np
import pytest

from gsls.bench import (
    ExperimentConfig,
    _worker_count,
    make_instance,
    percentile,
    run_benchmark,
    trial_seeds,
)
from gsls.cli import main

SMALL = dict(n_nodes=5, n_trials=3, f_range=(1, 3, 5), grid_size=128, seed=11)


@pytest.fixture(scope="module")
def small_bench(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench")
    return run_benchmark(ExperimentConfig(**SMALL, output_path=str(out), workers=1)), out


class TestSeeds:
    def test_trial_seeds(self):
        a = trial_seeds(0, 5)
        assert a == trial_seeds(0, 5) and len(set(a)) == 5
        assert trial_seeds(0, 6)[:5] == a
        assert trial_seeds(1, 5) != a

    def test_instance_deterministic(self):
        s = trial_seeds(0, 1)[0]
        assert np.array_equal(make_instance(s).lam_a, make_instance(s).lam_a)


class TestPercentile:
    def test_finite(self):
        assert percentile([1.0, 2.0, 3.0, 4.0], 50) == pytest.approx(np.percentile([1, 2, 3, 4], 50))

    def test_inf_absorbs(self):
        vals = [1.0, 2.0, math.inf, math.inf]
        assert percentile(vals, 25) == pytest.approx(1.75)
        assert percentile(vals, 50) == math.inf
        assert percentile([math.inf] * 3, 25) == math.inf


class TestBenchmark:
    def test_outputs(self, small_bench):
        result, out = small_bench
        fig1 = list(csv.DictReader(open(out / "fig1.csv")))
        fig2 = list(csv.DictReader(open(out / "fig2.csv")))
        trials = list(csv.DictReader(open(out / "trials.csv")))
        assert list(fig1[0]) == ["F", "method", "pct_stable"]
        assert list(fig2[0]) == ["F", "method", "p25", "p50", "p75"]
        assert len(fig1) == len(fig2) == 3 * 3 and len(trials) == 3 * 3 * 3
        assert {r["method"] for r in trials} == {"naive", "robust_sls", "robust_projection"}
        assert {"seed", "F", "method", "status", "certified", "exact_stable", "nominal_cost",
                "achieved_cost", "bound_eq15", "delta_norm", "wall_time_ms"} <= set(trials[0])
        # Unstable or infeasible cells are written as the literal "inf".
        infs = [r for r in trials if r["achieved_cost"] == "inf"]
        assert infs and all(r["status"] != "feasible" or r["exact_stable"] == "False" for r in infs)
        meta = json.load(open(out / "metadata.json"))
        assert meta["trial_seeds"] == trial_seeds(11, 3)
        assert "x(0) = 0" in meta["initial_state"]

    def test_status_vocabulary(self, small_bench):
        result, _ = small_bench
        for t in result.trials:
            if t.method == "naive":
                assert t.status in {"projected", "error"}
            else:
                assert t.status in {"feasible", "infeasible", "solver_failure", "error"}
                if t.status == "feasible":
                    assert t.delta_norm <= 0.98 and t.exact_stable and t.certified

    def test_deterministic_across_workers(self, small_bench):
        result, _ = small_bench
        again = run_benchmark(ExperimentConfig(**SMALL, workers=2))
        key = lambda t: (t.seed, t.F, t.method, t.status, t.achieved_cost, t.nominal_cost)
        assert [key(t) for t in again.trials] == [key(t) for t in result.trials]
        assert again.fig1 == result.fig1

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ExperimentConfig.from_dict({"bogus": 1})
        with pytest.raises(ValueError):
            ExperimentConfig(methods=("naive", "magic"))
        with pytest.raises(ValueError):
            ExperimentConfig(n_nodes=5, f_range=(6,))

    def test_worker_env(self, monkeypatch):
        monkeypatch.setenv("GSLS_WORKERS", "1")
        assert _worker_count(8) == 1
        monkeypatch.delenv("GSLS_WORKERS")
        assert _worker_count(1) == 1


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestCli:
    def test_gen_synth_eval(self, capsys, tmp_path):
        system = tmp_path / "sys.json"
        code, out, _ = run_cli(capsys, "gen", "--seed", "4", "--nodes", "6", "--out", str(system))
        assert code == 0 and json.loads(out)["n"] == 6
        resp = tmp_path / "resp.json"
        code, out, _ = run_cli(capsys, "synth", "--system", str(system), "--method", "naive", "-F", "5",
                               "--out", str(resp))
        report = json.loads(out)
        assert code == 0 and report["status"] == "projected"
        code, out, _ = run_cli(capsys, "eval", "--system", str(system), "--response", str(resp))
        ev = json.loads(out)
        assert code == 0 and ev["nominal_cost"] == pytest.approx(report["nominal_cost"])

    def test_robust_synth_infeasible_is_strict_json(self, capsys):
        code, out, _ = run_cli(capsys, "synth", "--seed", "0", "--nodes", "6", "--method", "robust_sls",
                               "-F", "1", "--grid-size", "128")
        report = json.loads(out)
        assert code == 0 and report["status"] == "infeasible" and report["objective_value"] == "inf"

    def test_invalid_args(self, capsys):
        code, _, err = run_cli(capsys, "synth", "--seed", "0", "--method", "nope")
        assert code == 2 and json.loads(err)["error"] == "InvalidArgs"
        code, _, err = run_cli(capsys, "bench")
        assert code == 2 and json.loads(err)["error"] == "InvalidArgs"

    def test_library_errors(self, capsys, tmp_path):
        code, _, err = run_cli(capsys, "synth", "--seed", "0", "--method", "naive", "-F", "12")
        assert code == 1 and json.loads(err)["error"] == "InvalidArg"
        code, _, err = run_cli(capsys, "eval", "--system", str(tmp_path / "missing.json"),
                               "--response", str(tmp_path / "r.json"))
        assert code == 1 and json.loads(err)["error"] == "FileNotFoundError"

    def test_bench_with_config(self, capsys, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n_trials": 2, "f_range": [2, 4], "methods": ["naive"]}))
        code, out, _ = run_cli(capsys, "bench", "--seed", "1", "--nodes", "5", "--config", str(cfg),
                               "--out", str(tmp_path / "o"))
        data = json.loads(out)
        assert code == 0 and [r["F"] for r in data["fig1"]] == [2, 4]
        assert data["status_counts"] == {"naive:projected": 4}
        assert (tmp_path / "o" / "trials.csv").exists()

    def test_validate(self, capsys):
        code, out, _ = run_cli(capsys, "validate", "--trials", "2")
        checks = json.loads(out)
        assert code == 0 and all(c["passed"] for c in checks)
        assert "message_passing_equivalence" in {c["name"] for c in checks} or len(checks) > 5
