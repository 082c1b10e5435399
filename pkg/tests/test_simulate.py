import csv

import numpy as np
import pytest

from gsls.errors import DegenerateResponse, InvalidArg
from gsls.lqr import FilterResponse, centralized_solution, optimal_responses
from gsls.simulate import (
    impulse_energy_profile,
    lead_inverse_taps,
    run_distributed_controller,
    simulate_closed_loop,
)
from gsls.sls import achieved_cost, achieved_modes, is_stabilizing, residual
from gsls.synthesis import SynthesisConfig, naive_projection, robust_sls_synthesize

from conftest import random_gss


@pytest.fixture(scope="module")
def robust_case():
    gss = random_gss(3, n_nodes=6)
    out = robust_sls_synthesize(gss, SynthesisConfig(f_hops=4, grid_size=256))
    assert out.feasible
    return gss, out.response


def dense_impulse(gss, yx):
    """Column 0 of V diag(yx[:, t]) V^T for every lag t."""
    v = gss.gmd.eigvecs
    return np.einsum("ik,kt,k->ti", v, yx, v[0])


class TestCentralized:
    def test_impulse_matches_matrix_powers(self):
        gss = random_gss(2, n_nodes=6)
        sol = centralized_solution(gss)
        opt = optimal_responses(gss, 60)
        traj = simulate_closed_loop(gss, opt, 12, noise="impulse")
        cl = gss.a + gss.b @ sol.k_dense
        assert np.all(traj.states[0] == 0)
        power = np.eye(6)
        for t in range(1, 12):
            assert np.abs(traj.states[t] - power[:, 0]).max() < 1e-9
            assert np.abs(traj.inputs[t] - (sol.k_dense @ power)[:, 0]).max() < 1e-9
            power = cl @ power

    def test_estimate_recovers_disturbance(self):
        gss = random_gss(2, n_nodes=6)
        traj = simulate_closed_loop(gss, optimal_responses(gss, 60), 30, seed=4)
        assert np.abs(traj.w_hat[1:] - traj.disturbances[:-1]).max() < 1e-9
        assert np.all(traj.w_hat[0] == 0)

    def test_replay(self, robust_case):
        gss, resp = robust_case
        traj = simulate_closed_loop(gss, resp, 50, seed=1)
        assert traj.replay_error(gss) < 1e-12

    def test_normalized_realization_achieves_residual_map(self, robust_case):
        gss, resp = robust_case
        res = residual(gss, resp)
        assert abs(res.delta[:, 0]).max() > 0.1  # leading lag is far from the identity
        yx, yu = achieved_modes(gss, resp, res, 40)
        traj = simulate_closed_loop(gss, resp, 41, noise="impulse")
        assert np.abs(traj.states[1:] - dense_impulse(gss, yx)).max() < 1e-9
        assert np.abs(traj.inputs[1:] - dense_impulse(gss, yu)).max() < 1e-9

    def test_textbook_realization_differs(self, robust_case):
        gss, resp = robust_case
        good = simulate_closed_loop(gss, resp, 200, noise="impulse")
        raw = simulate_closed_loop(gss, resp, 200, noise="impulse", normalize_lead=False)
        assert np.abs(raw.states - good.states).max() > 1.0

    def test_empirical_cost(self, robust_case):
        gss, resp = robust_case
        traj = simulate_closed_loop(gss, resp, 40000, seed=7)
        ref = achieved_cost(gss, resp)
        assert abs(traj.empirical_cost - ref) < 0.1 * ref

    def test_deterministic(self, robust_case):
        gss, resp = robust_case
        a = simulate_closed_loop(gss, resp, 20, seed=5)
        b = simulate_closed_loop(gss, resp, 20, seed=5)
        assert np.array_equal(a.states, b.states)
        assert not np.array_equal(a.states, simulate_closed_loop(gss, resp, 20, seed=6).states)

    def test_csv(self, robust_case, tmp_path):
        gss, resp = robust_case
        traj = simulate_closed_loop(gss, resp, 3, seed=0)
        traj.to_csv(tmp_path / "t.csv")
        rows = list(csv.reader(open(tmp_path / "t.csv")))
        assert rows[0] == ["t", "node", "x", "u", "w"] and len(rows) == 1 + 3 * 6

    def test_errors(self, robust_case):
        gss, resp = robust_case
        with pytest.raises(InvalidArg):
            simulate_closed_loop(gss, resp, 0)
        with pytest.raises(InvalidArg):
            simulate_closed_loop(gss, resp, 5, noise="uniform")
        with pytest.raises(InvalidArg):
            simulate_closed_loop(gss, resp, 5, disturbances=np.zeros((4, 6)))
        zero = FilterResponse(np.zeros((2, 3)), np.zeros((2, 3)), gss.gmd.fingerprint())
        with pytest.raises(DegenerateResponse):
            simulate_closed_loop(gss, zero, 5)


class TestLeadInverse:
    def test_single_hop(self):
        gss = random_gss(1, n_nodes=5)
        taps = np.zeros((3, 2))
        taps[0, 0] = 0.25
        resp = FilterResponse(taps, taps, gss.gmd.fingerprint())
        assert np.array_equal(lead_inverse_taps(gss, resp), [4.0])

    def test_inverts_lead(self, robust_case):
        gss, resp = robust_case
        inv = lead_inverse_taps(gss, resp)
        lam = gss.gmd.eigvals
        lead = np.polyval(resp.phi_x[::-1, 0], lam)
        assert np.abs(np.polyval(inv[::-1], lam) * lead - 1).max() < 1e-8


class TestDistributed:
    def test_matches_centralized(self, robust_case):
        gss, resp = robust_case
        a = simulate_closed_loop(gss, resp, 100, seed=3)
        b, _ = run_distributed_controller(gss, resp, 100, disturbances=a.disturbances)
        assert np.abs(a.states - b.states).max() < 1e-9
        assert np.abs(a.inputs - b.inputs).max() < 1e-9

    def test_single_hop_needs_no_messages(self):
        gss = random_gss(4, n_nodes=5)
        opt = optimal_responses(gss, 5)
        taps = opt.phi_x[:1].copy()
        taps[0, 0] = 1.0
        resp = FilterResponse(taps, 0.1 * taps, gss.gmd.fingerprint())
        traj, messages = run_distributed_controller(gss, resp, 20, seed=1)
        assert messages == 0
        ref = simulate_closed_loop(gss, resp, 20, disturbances=traj.disturbances)
        assert np.abs(ref.states - traj.states).max() < 1e-12

    def test_message_count(self):
        gss = random_gss(4, n_nodes=6)
        resp = naive_projection(gss, optimal_responses(gss, 5), 3)
        steps = 7
        _, messages = run_distributed_controller(gss, resp, steps, seed=2)
        rounds_per_step = (3 - 1) + (len(lead_inverse_taps(gss, resp)) - 1) + (3 - 1)
        degree_sum = sum(len(gss.gmd.neighbors(i)) for i in range(6))
        assert degree_sum == 2 * len(gss.gmd.edges)
        assert messages == steps * rounds_per_step * degree_sum

    def test_identity_lead_skips_inverse(self):
        gss = random_gss(4, n_nodes=6)
        opt = optimal_responses(gss, 60)
        assert np.abs(opt.phi_x[1:, 0]).max() < 1e-9
        traj, _ = run_distributed_controller(gss, opt, 30, seed=2)
        ref = simulate_closed_loop(gss, opt, 30, disturbances=traj.disturbances)
        assert np.abs(ref.states - traj.states).max() < 1e-9


class TestStabilityConsistency:
    def test_stable_response_decays(self, robust_case):
        gss, resp = robust_case
        total, tail_share = impulse_energy_profile(gss, resp, 2000)
        assert np.isfinite(total) and tail_share < 1e-12
        # Impulse through node 0 only: the energy is the (0, 0) entry of the cost Gram.
        yx, yu = achieved_modes(gss, resp, None, 2000)
        ref = np.sum(dense_impulse(gss, yx) ** 2) + np.sum(dense_impulse(gss, yu) ** 2)
        assert abs(total - ref) < 1e-8 * ref

    def test_unstable_projection_grows(self):
        for seed in range(10):
            gss = random_gss(seed)
            resp = naive_projection(gss, optimal_responses(gss, 10), 3)
            stab = is_stabilizing(residual(gss, resp))
            _, share = impulse_energy_profile(gss, resp, 600)
            if stab.exact:
                assert share < 1e-3
            elif stab.max_root > 1.05:
                assert share > 0.5
