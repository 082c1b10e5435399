"""End-to-end acceptance suite.

Each test carries a ``criterion`` marker; the terminal summary prints one
PASS/FAIL line per criterion. Criteria 5 to 8 share one run of the default
benchmark (50 seeds, N = 10, F = 1..10, all three methods).
"""
import math
import time

import numpy as np
import pytest
from scipy.linalg import solve_discrete_are

from gsls.bench import ExperimentConfig, make_instance, run_benchmark, trial_seeds
from gsls.gss import check_quadratic_invariance, verify_graph_symmetric
from gsls.lqr import centralized_solution, dense_h2_cost, diagonal_projection, h2_cost, optimal_responses
from gsls.simulate import run_distributed_controller, simulate_closed_loop
from gsls.sls import is_stabilizing, residual
from gsls.spectral import vandermonde
from gsls.synthesis import naive_projection

from conftest import feasible_dense_response, random_gss
from test_lqr import dare_iteration

ROBUST = ("robust_sls", "robust_projection")


def inversions(seq, rel=0.0, increasing=True):
    """Adjacent steps against the expected direction, beyond ``rel`` relative slack."""
    bad = []
    for a, b in zip(seq, seq[1:]):
        step = (a - b) if increasing else (b - a)
        if math.isinf(a) and math.isinf(b):
            continue
        if step > rel * (abs(b) if increasing else abs(a)):
            bad.append((a, b))
    return bad


@pytest.fixture(scope="module")
def default_bench(tmp_path_factory):
    out = tmp_path_factory.mktemp("default_bench")
    start = time.perf_counter()
    result = run_benchmark(ExperimentConfig(seed=0, output_path=str(out)))
    result.wall_time = time.perf_counter() - start
    print(f"\ndefault benchmark: {result.wall_time:.0f} s, status counts {result.metadata['status_counts']}")
    for f_hops in result.config.f_range:
        pct = {m: result.pct_stable(m, f_hops) for m in result.config.methods}
        med = {m: result.cost_quantiles(m, f_hops)[1] for m in ROBUST}
        print(f"F={f_hops:2d} pct={pct} median={med}")
    return result


@pytest.mark.criterion(1, "centralized consistency")
def test_centralized_consistency():
    start = time.perf_counter()
    for seed in range(20):
        gss = random_gss(seed)
        sol = centralized_solution(gss)
        assert abs(h2_cost(gss, optimal_responses(gss, 60, sol)) - sol.j_opt) <= 5e-3 * sol.j_opt
        assert abs(np.trace(solve_discrete_are(gss.a, gss.b, gss.q, gss.r)) - sol.j_opt) <= 1e-8 * sol.j_opt
    for seed in range(20):
        gss = random_gss(100 + seed, n_nodes=4)
        sol = centralized_solution(gss)
        p_dense = dare_iteration(gss.a, gss.b, gss.q, gss.r)
        p_modes = (gss.gmd.eigvecs * sol.p) @ gss.gmd.eigvecs.T
        assert np.abs(p_modes - p_dense).max() <= 1e-8 * max(1.0, np.abs(p_dense).max())
    assert time.perf_counter() - start < 10.0


@pytest.mark.criterion(2, "optimal lags are graph symmetric")
def test_optimal_lags_graph_symmetric():
    for seed in range(20):
        gss = random_gss(seed)
        px, pu = optimal_responses(gss, 60).dense(gss.gmd)
        for lag in np.concatenate([px, pu]):
            _, ratio = verify_graph_symmetric(lag, gss.gmd)
            assert ratio < 1e-8


@pytest.mark.criterion(3, "diagonal projection never increases cost")
def test_diagonal_projection():
    rng = np.random.default_rng(3)
    for seed in range(20):
        n_nodes = int(rng.integers(3, 7))
        gss = random_gss(200 + seed, n_nodes=n_nodes, k_nearest=min(3, n_nodes - 1))
        px, pu = feasible_dense_response(gss, rng, int(rng.integers(2, 6)))
        before = dense_h2_cost(gss, px, pu)
        after = h2_cost(gss, diagonal_projection(gss.gmd, px, pu))
        assert after <= before + 1e-10


@pytest.mark.criterion(4, "closed-form projection equals least squares")
def test_projection_vs_lstsq():
    rng = np.random.default_rng(4)
    for seed in range(20):
        gss = random_gss(300 + seed)
        f_hops = int(rng.integers(1, gss.n))
        opt = optimal_responses(gss, 10)
        proj = naive_projection(gss, opt, f_hops)
        lam = gss.gmd.eigvals
        full = vandermonde(lam, gss.n)
        for got, taps in ((proj.phi_x, opt.phi_x), (proj.phi_u, opt.phi_u)):
            ref = np.linalg.lstsq(vandermonde(lam, f_hops), full @ taps, rcond=None)[0]
            assert np.abs(got - ref).max() <= 1e-6


@pytest.mark.criterion(5, "robust certificates are sound")
def test_certificate_soundness(default_bench):
    feasible = [t for t in default_bench.trials if t.method in ROBUST and t.status == "feasible"]
    assert feasible
    violations = [
        t for t in feasible
        if not (t.delta_norm <= default_bench.config.gamma and t.exact_stable and t.certified
                and math.sqrt(t.achieved_cost) <= t.cor1_bound * (1 + 1e-9))
    ]
    assert violations == []


@pytest.mark.criterion(6, "tail-based suboptimality bound holds")
def test_eq15_bound(default_bench):
    cells = [t for t in default_bench.trials if t.method == "robust_sls" and t.bound_eq15 is not None]
    assert cells
    violations = [t for t in cells if not math.sqrt(t.achieved_cost) <= t.bound_eq15 * (1 + 1e-9)]
    assert violations == [], [(t.seed, t.F, t.status, t.achieved_cost, t.bound_eq15) for t in violations]


@pytest.mark.criterion(7, "stabilizing percentage trend")
class TestFigure1:
    def test_robust_nondecreasing(self, default_bench):
        pct = [default_bench.pct_stable("robust_sls", f) for f in default_bench.config.f_range]
        bad = inversions(pct)
        assert len(bad) <= 1 and all(a - b <= 4 * 100 / 50 for a, b in bad)

    def test_naive_at_least_robust_at_f3(self, default_bench):
        assert default_bench.pct_stable("naive", 3) >= default_bench.pct_stable("robust_sls", 3)

    def test_robust_at_least_naive_from_f5(self, default_bench):
        for f_hops in range(5, 11):
            assert default_bench.pct_stable("robust_sls", f_hops) >= default_bench.pct_stable("naive", f_hops)

    def test_runtime(self, default_bench):
        assert default_bench.wall_time <= 15 * 60


@pytest.mark.criterion(8, "median cost trend")
class TestFigure2:
    @pytest.mark.parametrize("method", ROBUST)
    def test_median_nonincreasing(self, default_bench, method):
        med = [default_bench.cost_quantiles(method, f)[1] for f in default_bench.config.f_range]
        bad = inversions(med, increasing=False)
        assert len(bad) <= 1 and all(b <= 1.02 * a for a, b in bad), med

    def test_sls_at_most_projection(self, default_bench):
        gaps = {}
        for f_hops in default_bench.config.f_range:
            sls = default_bench.cost_quantiles("robust_sls", f_hops)[1]
            proj = default_bench.cost_quantiles("robust_projection", f_hops)[1]
            if not sls <= proj:
                gaps[f_hops] = (sls, proj)
        assert gaps == {}

    def test_upper_quartile_infinite_for_small_f(self, default_bench):
        assert any(math.isinf(default_bench.cost_quantiles("robust_sls", f)[2]) for f in (1, 2, 3))


@pytest.mark.criterion(9, "message passing matches centralized execution")
def test_message_passing():
    rng = np.random.default_rng(9)
    found = 0
    for seed in range(400, 600):
        gss = random_gss(seed)
        resp = naive_projection(gss, optimal_responses(gss, 10), int(rng.integers(2, 9)))
        if not is_stabilizing(residual(gss, resp)).exact:
            continue
        ref = simulate_closed_loop(gss, resp, 100, seed=seed)
        dist, _ = run_distributed_controller(gss, resp, 100, disturbances=ref.disturbances)
        assert np.abs(dist.states - ref.states).max() < 1e-9
        found += 1
        if found == 10:
            break
    assert found == 10


@pytest.mark.criterion(10, "quadratic invariance")
def test_quadratic_invariance():
    for seed in range(4):
        report = check_quadratic_invariance(random_gss(500 + seed), seed, n_samples=5)
        assert report.max_ratio < 1e-8


@pytest.mark.criterion(11, "ensemble diameter")
def test_mean_diameter():
    diam = [make_instance(s).gmd.diameter() for s in trial_seeds(0, 50)]
    assert all(np.isfinite(diam))
    assert abs(np.mean(diam) - 5.92) <= 1.0
