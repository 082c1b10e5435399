"""Runtime property checks on random instances, used by ``gsls validate``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_discrete_are

from .gss import check_quadratic_invariance, generate_random_gss, verify_graph_symmetric
from .lqr import centralized_solution, h2_cost, optimal_responses
from .simulate import run_distributed_controller, simulate_closed_loop
from .sls import achieved_cost, cor1_bound, dense_residual_error, is_stabilizing, residual
from .spectral import eval_graph_filter, generate_random_gmd, spectral_to_taps
from .synthesis import SynthesisConfig, naive_projection, robust_sls_synthesize


@dataclass
class Check:
    name: str
    passed: bool
    worst: float
    tol: float


def _instance(ss, n_nodes):
    gmd_ss, gss_ss = ss.spawn(2)
    gmd = generate_random_gmd(n_nodes, 3 if n_nodes > 3 else 1, gmd_ss)
    return generate_random_gss(gmd, gss_ss)


def _checks_for(gss, rng):
    gmd = gss.gmd
    n = gss.n
    v = gmd.eigvecs
    out = {}
    out["eigvec_orthonormal"] = (np.abs(v.T @ v - np.eye(n)).max(), 1e-10)
    out["gmd_reconstruction"] = (
        np.linalg.norm((v * gmd.eigvals) @ v.T - gmd.s) / np.linalg.norm(gmd.s), 1e-10)
    taps = rng.standard_normal(rng.integers(1, n + 1))
    h = eval_graph_filter(gmd, taps)
    out["filter_commutes_with_S"] = (np.linalg.norm(h @ gmd.s - gmd.s @ h), 1e-9)
    vals = rng.standard_normal(n)
    back = np.diag(v.T @ eval_graph_filter(gmd, spectral_to_taps(gmd, vals)) @ v)
    out["taps_round_trip"] = (np.abs(back - vals).max(), 1e-8)

    sol = centralized_solution(gss)
    p_dense = solve_discrete_are(gss.a, gss.b, gss.q, gss.r)
    out["dare_vs_dense"] = (abs(np.trace(p_dense) - sol.j_opt) / sol.j_opt, 1e-8)

    opt = optimal_responses(gss, 40)
    px, pu = opt.dense(gmd)
    worst = max(max(verify_graph_symmetric(m, gmd)[1] for m in px), max(verify_graph_symmetric(m, gmd)[1] for m in pu))
    out["optimal_lags_graph_symmetric"] = (worst, 1e-8)
    out["h2_vs_trace"] = (abs(h2_cost(gss, opt) - sol.j_opt) / sol.j_opt, 5e-3)
    out["quadratic_invariance"] = (check_quadratic_invariance(gss, int(rng.integers(2**32)), n_samples=4).max_ratio, 1e-8)

    opt10 = optimal_responses(gss, 10)
    f_hops = int(rng.integers(1, n))
    naive = naive_projection(gss, opt10, f_hops)
    modes = naive.spectral(gmd)
    full = opt10.spectral(gmd)
    vand = np.vander(gmd.eigvals, f_hops, increasing=True)
    out["projection_orthogonality"] = (np.abs(vand.T @ (full.lx - modes.lx)).max(), 1e-8)
    res = residual(gss, naive)
    out["residual_dense_consistency"] = (dense_residual_error(gss, naive.with_modes(None), residual(gss, naive.with_modes(None))), 1e-10)
    stab = is_stabilizing(res)
    if stab.exact:
        ach = np.sqrt(achieved_cost(gss, naive, res))
        bound = cor1_bound(h2_cost(gss, naive), stab.hinf_upper)
        out["cor1_soundness"] = (max(0.0, ach - bound), 1e-9)
        a = simulate_closed_loop(gss, naive, 60, seed=int(rng.integers(2**32)))
        b, _ = run_distributed_controller(gss, naive, 60, seed=0, disturbances=a.disturbances)
        out["message_passing_equivalence"] = (np.abs(a.states - b.states).max(), 1e-9)
    return out


def run_validation(n_trials=20, seed=0, n_nodes=6, robust_checks=2):
    """Run all property checks; returns a list of :class:`Check` (worst case per property)."""
    root = np.random.SeedSequence(int(seed) % 2**64)
    worst = {}
    for trial_ss in root.spawn(n_trials):
        rng = np.random.default_rng(trial_ss.spawn(1)[0])
        gss = _instance(trial_ss, n_nodes)
        for name, (val, tol) in _checks_for(gss, rng).items():
            prev = worst.get(name, (-np.inf, tol))[0]
            worst[name] = (max(prev, float(val)), tol)
    for trial_ss in root.spawn(robust_checks):
        gss = _instance(trial_ss, n_nodes)
        out = robust_sls_synthesize(gss, SynthesisConfig(f_hops=n_nodes - 1, grid_size=256))
        if out.feasible:
            res = residual(gss, out.response.with_modes(None))
            upper = is_stabilizing(res, grid_size=4096).hinf_upper
            val = max(0.0, upper - 0.98)
            prev = worst.get("robust_post_verification", (-np.inf, 0.0))[0]
            worst["robust_post_verification"] = (max(prev, val), 1e-12)
    return [Check(name, val <= tol, val, tol) for name, (val, tol) in sorted(worst.items())]
