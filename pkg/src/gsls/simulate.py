"""Closed-loop simulation of the SLS controller and its message-passing form.

The controller ``K = Phi_u Phi_x^{-1}`` is realized through an internal
disturbance estimate::

    w_hat(t) = Phi_x[1]^{-1} (x(t) - sum_{t' >= 2} Phi_x[t'] w_hat(t - t' + 1))
    u(t)     = sum_{t' >= 1} Phi_u[t'] w_hat(t - t' + 1)

which gives ``x = Phi_x (I + Delta)^{-1} w`` and ``u = Phi_u (I + Delta)^{-1} w``
for any response with invertible leading lag. With ``Phi_x[1] = I`` it is the
textbook realization ``w_hat = x - x_hat``. ``normalize_lead=False`` drops the
inverse and runs the textbook form even when ``Phi_x[1] != I``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateResponse, InvalidArg
from .gss import GraphSymmetricSystem
from .lqr import FilterResponse
from .spectral import as_seed_sequence, eval_filter_bank, modes_to_taps, vandermonde

NOISE_KINDS = ("gaussian", "impulse")


@dataclass(eq=False)
class Trajectory:
    """``states[t]`` is ``x(t)`` for ``t = 0..T-1``; likewise ``inputs`` and ``disturbances``."""

    horizon: int
    states: np.ndarray
    inputs: np.ndarray
    disturbances: np.ndarray
    empirical_cost: float
    w_hat: np.ndarray = field(default=None, repr=False)

    def replay_error(self, gss: GraphSymmetricSystem) -> float:
        """Largest deviation from ``x(t+1) = A x(t) + B u(t) + w(t)``."""
        x, u, w = self.states, self.inputs, self.disturbances
        pred = x[:-1] @ gss.a.T + u[:-1] @ gss.b.T + w[:-1]
        return float(np.abs(x[1:] - pred).max(initial=0.0))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["t", "node", "x", "u", "w"])
            for t in range(self.horizon):
                for i in range(self.states.shape[1]):
                    out.writerow([t, i, repr(float(self.states[t, i])), repr(float(self.inputs[t, i])),
                                  repr(float(self.disturbances[t, i]))])


def _lead_values(gss, response):
    lead = vandermonde(gss.gmd.eigvals, response.f_hops) @ response.phi_x[:, 0]
    scale = max(1.0, float(np.abs(response.phi_x).max()))
    bad = np.nonzero(np.abs(lead) <= 1e-12 * scale)[0]
    if bad.size:
        i = int(bad[0])
        raise DegenerateResponse(f"mode {i}: leading lag of Phi_x is singular", mode=i)
    return lead


def lead_inverse_taps(gss: GraphSymmetricSystem, response: FilterResponse) -> np.ndarray:
    """Hop taps of ``Phi_x[1]^{-1}``, trimmed of trailing zero hops.

    A single-hop leading lag inverts to a single hop; otherwise the inverse
    is in general a full ``N``-hop filter.
    """
    if response.hop_offset:
        raise InvalidArg("cannot realize an F-tail")
    lead = _lead_values(gss, response)
    head = response.phi_x[:, 0]
    if not np.any(head[1:]):
        return np.array([1.0 / head[0]])
    taps = modes_to_taps(gss.gmd.eigvals, 1.0 / lead)
    nz = np.nonzero(np.abs(taps) > 1e-14 * np.abs(taps).max())[0]
    return taps[: nz[-1] + 1]


def _noise(gss, horizon, seed, noise):
    if noise not in NOISE_KINDS:
        raise InvalidArg(f"noise must be one of {NOISE_KINDS}")
    if noise == "impulse":
        w = np.zeros((horizon, gss.n))
        w[0, 0] = 1.0
        return w
    rng = np.random.default_rng(as_seed_sequence(seed))
    return rng.standard_normal((horizon, gss.n))


def _cost(gss, x, u):
    return float((np.einsum("ti,ij,tj->", x, gss.q, x) + np.einsum("ti,ij,tj->", u, gss.r, u)) / x.shape[0])


def simulate_closed_loop(gss: GraphSymmetricSystem, response: FilterResponse, horizon, seed=0,
                         noise="gaussian", normalize_lead=True, disturbances=None) -> Trajectory:
    """Centralized simulation from ``x(0) = 0`` with zero controller histories.

    Args:
        noise: ``"gaussian"`` for i.i.d. N(0, I) disturbances, ``"impulse"``
            for ``w(0) = e_1``.
        disturbances: optional ``T x N`` array overriding ``noise``.

    Raises:
        DegenerateResponse: if ``Phi_x[1]`` is singular.
    """
    horizon = int(horizon)
    if horizon < 1:
        raise InvalidArg("horizon must be positive")
    response.check_bound(gss.gmd)
    n_nodes, n = gss.n, response.fir_len
    _lead_values(gss, response)
    w = _noise(gss, horizon, seed, noise) if disturbances is None else np.asarray(disturbances, dtype=float)
    if w.shape != (horizon, n_nodes):
        raise InvalidArg("disturbances must be T x N")
    px, pu = response.dense(gss.gmd)
    if normalize_lead:
        lead_inv = eval_filter_bank(gss.gmd, lead_inverse_taps(gss, response)[:, None])[0]
    else:
        lead_inv = np.eye(n_nodes)

    x = np.zeros((horizon, n_nodes))
    u = np.zeros((horizon, n_nodes))
    w_hat = np.zeros((horizon, n_nodes))
    for t in range(horizon):
        pred = np.zeros(n_nodes)
        for lag in range(2, min(n, t + 1) + 1):
            pred += px[lag - 1] @ w_hat[t - lag + 1]
        w_hat[t] = lead_inv @ (x[t] - pred)
        for lag in range(1, min(n, t + 1) + 1):
            u[t] += pu[lag - 1] @ w_hat[t - lag + 1]
        if t + 1 < horizon:
            x[t + 1] = gss.a @ x[t] + gss.b @ u[t] + w[t]
    return Trajectory(horizon, x, u, w, _cost(gss, x, u), w_hat)


class _Node:
    """One controller node: its own scalar histories plus its row of ``S``."""

    def __init__(self, idx, s_row, neighbors, fir_len):
        self.idx = idx
        self.self_weight = float(s_row[idx])
        self.weights = {j: float(s_row[j]) for j in neighbors}
        self.neighbors = list(neighbors)
        self.history = np.zeros(fir_len)  # w_hat(t), w_hat(t-1), ...
        self.value = 0.0
        self.inbox = {}

    def shift_combine(self, inbox):
        """One application of ``S`` using the neighbour values in ``inbox``."""
        acc = self.self_weight * self.value
        for j in self.neighbors:
            acc += self.weights[j] * inbox[j]
        return acc


class _Network:
    """Synchronous one-hop rounds with message accounting."""

    def __init__(self, gss, fir_len):
        gmd = gss.gmd
        self.nodes = [_Node(i, gmd.s[i], gmd.neighbors(i), fir_len) for i in range(gmd.n_nodes)]
        self.messages = 0
        self.rounds = 0

    def _round(self):
        for node in self.nodes:
            node.inbox = {}
        for node in self.nodes:
            for j in node.neighbors:
                self.nodes[j].inbox[node.idx] = node.value
                self.messages += 1
        new = [node.shift_combine(node.inbox) for node in self.nodes]
        for node, val in zip(self.nodes, new):
            node.value = val
        self.rounds += 1

    def apply_filter(self, local_terms):
        """Horner evaluation of ``sum_k S^k g_k`` where node ``i`` holds ``g_k[i]``.

        ``local_terms[i]`` is node ``i``'s length-F vector of ``g_k``; the
        result is left in each node's ``value``. Uses ``F - 1`` rounds.
        """
        f = len(local_terms[0])
        for node, g in zip(self.nodes, local_terms):
            node.value = g[f - 1]
        for k in range(f - 2, -1, -1):
            self._round()
            for node, g in zip(self.nodes, local_terms):
                node.value += g[k]
        return np.array([node.value for node in self.nodes])


def run_distributed_controller(gss: GraphSymmetricSystem, response: FilterResponse, horizon, seed=0,
                               noise="gaussian", normalize_lead=True, disturbances=None):
    """Run the realization with every filter evaluated by one-hop exchanges.

    Each node keeps only its own histories of ``w_hat``. Temporal sums are
    formed locally per hop power and the spatial polynomial is evaluated by
    Horner's rule, one synchronous neighbour exchange per power of ``S``.

    Returns:
        ``(trajectory, message_count)`` where each round costs ``2 |E|``
        scalar messages.
    """
    horizon = int(horizon)
    if horizon < 1:
        raise InvalidArg("horizon must be positive")
    response.check_bound(gss.gmd)
    n_nodes, n = gss.n, response.fir_len
    _lead_values(gss, response)
    w = _noise(gss, horizon, seed, noise) if disturbances is None else np.asarray(disturbances, dtype=float)
    if w.shape != (horizon, n_nodes):
        raise InvalidArg("disturbances must be T x N")
    inv = lead_inverse_taps(gss, response) if normalize_lead else np.array([1.0])
    px = response.phi_x
    pu = response.phi_u
    net = _Network(gss, n)

    x = np.zeros((horizon, n_nodes))
    u = np.zeros((horizon, n_nodes))
    w_hat = np.zeros((horizon, n_nodes))
    for t in range(horizon):
        # Predicted state from lags 2..n of Phi_x acting on past estimates.
        terms = [px[:, 1:] @ node.history[: n - 1] for node in net.nodes]
        pred = net.apply_filter(terms)
        resid = x[t] - pred
        est = net.apply_filter([inv * r for r in resid])
        for node, val in zip(net.nodes, est):
            node.history = np.roll(node.history, 1)
            node.history[0] = val
        w_hat[t] = est
        u[t] = net.apply_filter([pu @ node.history for node in net.nodes])
        if t + 1 < horizon:
            x[t + 1] = gss.a @ x[t] + gss.b @ u[t] + w[t]
    return Trajectory(horizon, x, u, w, _cost(gss, x, u), w_hat), net.messages


def impulse_energy_profile(gss: GraphSymmetricSystem, response: FilterResponse, horizon=2000):
    """Total impulse-response energy and the share in the last 10% of steps."""
    # Unstable loops are expected to overflow; that shows up as an infinite total.
    with np.errstate(over="ignore", invalid="ignore"):
        traj = simulate_closed_loop(gss, response, horizon, noise="impulse")
        energy = np.sum(traj.states**2, axis=1) + np.sum(traj.inputs**2, axis=1)
    total = float(energy.sum())
    tail = float(energy[int(0.9 * horizon) :].sum())
    return total, tail / total if total > 0 and np.isfinite(total) else np.inf
