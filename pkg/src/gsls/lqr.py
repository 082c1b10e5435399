"""Centralized LQR in the spectral domain and FIR system responses.

Because ``A, B, Q, R`` share the eigenbasis of ``S``, the Riccati equation
splits into one scalar equation per mode and the optimal closed-loop maps
``Phi_x = (zI - A - BK)^{-1}``, ``Phi_u = K Phi_x`` are graph filters whose
taps are transfer functions. Taps are stored as FIR Markov parameters for
lags ``1..n`` (strictly proper, no lag-0 term).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import InvalidArg, Unstabilizable, UnstableClosedLoop
from .gss import GraphSymmetricSystem
from .spectral import Gmd, eval_filter_bank, modes_to_taps, vandermonde


@dataclass(frozen=True, eq=False)
class SpectralResponse:
    """Per-mode scalar FIR responses, ``lx[i, t]`` is lag ``t + 1`` of mode ``i``."""

    lx: np.ndarray
    lu: np.ndarray

    @property
    def n_modes(self) -> int:
        return self.lx.shape[0]

    @property
    def fir_len(self) -> int:
        return self.lx.shape[1]


@dataclass(frozen=True, eq=False)
class FilterResponse:
    """Graph filter system response ``(Phi_x, Phi_u)`` with FIR taps.

    ``phi_x[k, t]`` is the coefficient of ``S^(k + hop_offset) z^{-(t+1)}``;
    a nonzero offset represents an F-tail. ``modes`` may carry the exact
    per-mode values the taps were fitted from; when present it is used
    instead of re-evaluating the Vandermonde product.
    """

    phi_x: np.ndarray
    phi_u: np.ndarray
    gmd_hash: str
    modes: SpectralResponse | None = field(default=None, repr=False)
    tail_bound: float | None = None
    hop_offset: int = 0

    def __post_init__(self):
        px = np.atleast_2d(np.asarray(self.phi_x, dtype=float))
        pu = np.atleast_2d(np.asarray(self.phi_u, dtype=float))
        if px.shape != pu.shape:
            raise InvalidArg(f"phi_x {px.shape} and phi_u {pu.shape} differ in shape")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise InvalidArg("need F >= 1 and n >= 1")
        if not (np.all(np.isfinite(px)) and np.all(np.isfinite(pu))):
            raise InvalidArg("response taps must be finite")
        object.__setattr__(self, "phi_x", px)
        object.__setattr__(self, "phi_u", pu)

    @property
    def f_hops(self) -> int:
        return self.phi_x.shape[0]

    @property
    def fir_len(self) -> int:
        return self.phi_x.shape[1]

    def spectral(self, gmd: Gmd) -> SpectralResponse:
        self.check_bound(gmd)
        if self.modes is not None:
            return self.modes
        vand = self._vandermonde(gmd)
        return SpectralResponse(vand @ self.phi_x, vand @ self.phi_u)

    def _vandermonde(self, gmd):
        return vandermonde(gmd.eigvals, self.hop_offset + self.f_hops)[:, self.hop_offset :]

    def dense(self, gmd: Gmd):
        """Dense lag slices ``(Phi_x[t], Phi_u[t])``, each ``n x N x N``."""
        self.check_bound(gmd)
        if self.hop_offset:
            pad = np.zeros((self.hop_offset, self.fir_len))
            return eval_filter_bank(gmd, np.vstack([pad, self.phi_x])), eval_filter_bank(gmd, np.vstack([pad, self.phi_u]))
        return eval_filter_bank(gmd, self.phi_x), eval_filter_bank(gmd, self.phi_u)

    def check_bound(self, gmd: Gmd):
        if self.hop_offset + self.f_hops > gmd.n_nodes:
            raise InvalidArg(f"F={self.hop_offset + self.f_hops} exceeds N={gmd.n_nodes}")
        if self.gmd_hash and self.gmd_hash != gmd.fingerprint():
            raise InvalidArg("response is bound to a different GMD")

    def with_modes(self, modes: SpectralResponse | None) -> "FilterResponse":
        return FilterResponse(self.phi_x, self.phi_u, self.gmd_hash, modes, self.tail_bound, self.hop_offset)

    def to_dict(self) -> dict:
        out = {
            "F": self.f_hops,
            "n": self.fir_len,
            "phi_x": self.phi_x.tolist(),
            "phi_u": self.phi_u.tolist(),
            "gmd_hash": self.gmd_hash,
        }
        if self.hop_offset:
            out["hop_offset"] = self.hop_offset
        return out

    @classmethod
    def from_dict(cls, data) -> "FilterResponse":
        px = np.asarray(data["phi_x"], dtype=float).reshape(data["F"], data["n"])
        pu = np.asarray(data["phi_u"], dtype=float).reshape(data["F"], data["n"])
        return cls(px, pu, data.get("gmd_hash", ""), hop_offset=int(data.get("hop_offset", 0)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text) -> "FilterResponse":
        return cls.from_dict(json.loads(text))


def response_from_modes(gmd: Gmd, lx, lu, tail_bound=None) -> FilterResponse:
    """Fit full ``F = N`` hop taps to per-mode FIR responses."""
    lx = np.asarray(lx, dtype=float)
    lu = np.asarray(lu, dtype=float)
    return FilterResponse(
        modes_to_taps(gmd.eigvals, lx),
        modes_to_taps(gmd.eigvals, lu),
        gmd.fingerprint(),
        SpectralResponse(lx, lu),
        tail_bound,
    )


def solve_dare_scalar(a, b, q, r):
    """Stabilizing solution of the scalar discrete Riccati equation.

    Solves ``p = a^2 p - a^2 b^2 p^2 / (r + b^2 p) + q`` through the
    positive root of ``b^2 p^2 + (r - q b^2 - a^2 r) p - q r = 0``.

    Returns:
        ``(p, kappa)`` with gain ``kappa = -b p a / (r + b^2 p)``.

    Raises:
        Unstabilizable: if ``b == 0`` and ``|a| >= 1``.
    """
    a, b, q, r = float(a), float(b), float(q), float(r)
    if q < 0 or r <= 0:
        raise InvalidArg("need q >= 0 and r > 0")
    if b == 0.0:
        if abs(a) >= 1.0:
            raise Unstabilizable(f"b = 0 with |a| = {abs(a):.3g} >= 1")
        return q / (1.0 - a * a), 0.0
    b2 = b * b
    lin = r - q * b2 - a * a * r
    disc = np.sqrt(lin * lin + 4.0 * b2 * q * r)
    # Pick the cancellation-free form of the positive root.
    if lin > 0:
        p = 2.0 * q * r / (lin + disc)
    else:
        p = (disc - lin) / (2.0 * b2)
    p = a * a * p - (a * a * b2 * p * p) / (r + b2 * p) + q
    kappa = -b * p * a / (r + b2 * p)
    return p, kappa


class CentralizedSolution(NamedTuple):
    kappa: np.ndarray
    k_dense: np.ndarray
    p: np.ndarray
    j_opt: float
    closed_loop: np.ndarray


def centralized_solution(gss: GraphSymmetricSystem) -> CentralizedSolution:
    """Per-mode Riccati solves assembled into the dense optimal gain.

    ``j_opt = sum_i p_i`` is the stationary average cost under unit
    covariance noise (trace of the Riccati solution).
    """
    n = gss.n
    p = np.empty(n)
    kappa = np.empty(n)
    for i in range(n):
        try:
            p[i], kappa[i] = solve_dare_scalar(gss.lam_a[i], gss.lam_b[i], gss.lam_q[i], gss.lam_r[i])
        except Unstabilizable as exc:
            raise Unstabilizable(f"mode {i}: {exc}", mode=i) from exc
    v = gss.gmd.eigvecs
    return CentralizedSolution(
        kappa=kappa,
        k_dense=(v * kappa) @ v.T,
        p=p,
        j_opt=float(p.sum()),
        closed_loop=gss.lam_a + gss.lam_b * kappa,
    )


def optimal_responses(gss: GraphSymmetricSystem, n, solution: CentralizedSolution | None = None) -> FilterResponse:
    """FIR truncation of the optimal system responses as ``F = N`` graph filters.

    Mode ``i`` has ``lx[t] = c_i^(t-1)`` and ``lu[t] = kappa_i c_i^(t-1)`` for
    ``t = 1..n`` with ``c_i = a_i + b_i kappa_i``. The truncated tail is bounded
    by ``rho^n / (1 - rho)``, ``rho = max |c_i|``.

    Raises:
        UnstableClosedLoop: if ``rho >= 1``.
    """
    n = int(n)
    if n < 1:
        raise InvalidArg("FIR length must be >= 1")
    sol = solution if solution is not None else centralized_solution(gss)
    cl = sol.closed_loop
    rho = float(np.abs(cl).max())
    if rho >= 1.0:
        raise UnstableClosedLoop(f"closed-loop spectral radius {rho:.6g} >= 1")
    lags = np.arange(n)
    lx = cl[:, None] ** lags[None, :]
    lu = sol.kappa[:, None] * lx
    return response_from_modes(gss.gmd, lx, lu, tail_bound=rho**n / (1.0 - rho))


def h2_cost(gss: GraphSymmetricSystem, response) -> float:
    """Squared H2 norm ``||Q^1/2 Phi_x||^2 + ||R^1/2 Phi_u||^2`` of an FIR response.

    Accepts a :class:`FilterResponse` or a :class:`SpectralResponse`.
    """
    modes = response.spectral(gss.gmd) if isinstance(response, FilterResponse) else response
    if modes.n_modes != gss.n:
        raise InvalidArg("response and system sizes differ")
    return float(np.sum(gss.lam_q[:, None] * modes.lx**2) + np.sum(gss.lam_r[:, None] * modes.lu**2))


def dense_h2_cost(gss: GraphSymmetricSystem, px, pu) -> float:
    """Squared H2 cost ``sum_t ||Q^1/2 Phi_x[t]||_F^2 + ||R^1/2 Phi_u[t]||_F^2`` of dense lags."""
    px = np.asarray(px, dtype=float)
    pu = np.asarray(pu, dtype=float)
    return float(np.einsum("tij,ik,tkj->", px, gss.q, px) + np.einsum("tij,ik,tkj->", pu, gss.r, pu))


def diagonal_projection(gmd: Gmd, px, pu) -> SpectralResponse:
    """Keep only the diagonal of each dense lag in the GMD basis.

    For a graph symmetric plant the diagonal part of any achievable response
    is again achievable, and dropping the off-diagonal energy can only lower
    the cost.
    """
    v = gmd.eigvecs
    lx = np.einsum("ik,tij,jk->kt", v, np.asarray(px, dtype=float), v)
    lu = np.einsum("ik,tij,jk->kt", v, np.asarray(pu, dtype=float), v)
    return SpectralResponse(lx, lu)
