"""Achievability residuals, induced norms, stability tests and achieved cost.

For an approximate response ``(zI - A) Phi_x - B Phi_u = I + Delta`` the
residual is diagonal in the GMD basis, so every quantity here reduces to
scalar FIR polynomials ``Delta_i(z) = sum_t delta_i[t] z^{-t}``, one per mode.
The controller ``K = Phi_u Phi_x^{-1}`` then achieves ``Phi (I + Delta)^{-1}``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_discrete_lyapunov
from scipy.signal import lfilter

from .errors import DegenerateResponse, InvalidArg, Unstable
from .gss import GraphSymmetricSystem
from .lqr import FilterResponse, SpectralResponse

DEFAULT_GRID = 1024


@dataclass(frozen=True, eq=False)
class Residual:
    """``delta[i, t]`` is the lag-``t`` coefficient of mode ``i``, ``t = 0..n``."""

    delta: np.ndarray

    @property
    def n_modes(self) -> int:
        return self.delta.shape[0]

    @property
    def fir_len_plus(self) -> int:
        return self.delta.shape[1]

    def dense(self, gmd) -> np.ndarray:
        v = gmd.eigvecs
        return np.einsum("ik,kt,jk->tij", v, self.delta, v)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["mode", "tau", "value"])
            for i, row in enumerate(self.delta):
                for t, val in enumerate(row):
                    w.writerow([i, t, repr(float(val))])


def _modes(gss, response):
    if isinstance(response, SpectralResponse):
        return response
    return response.spectral(gss.gmd)


def achievability_map(lam_a, lam_b, lx, lu) -> np.ndarray:
    """Per-mode coefficients of ``(z - a) lx(z) - b lu(z)``, lags ``0..n``."""
    lam_a = np.asarray(lam_a)[:, None]
    lam_b = np.asarray(lam_b)[:, None]
    n_modes, n = lx.shape
    out = np.zeros((n_modes, n + 1))
    out[:, :n] = lx
    out[:, 1:] -= lam_a * lx + lam_b * lu
    return out


def residual(gss: GraphSymmetricSystem, response) -> Residual:
    """Residual ``Delta`` of a filter response on ``gss``."""
    m = _modes(gss, response)
    if m.n_modes != gss.n:
        raise InvalidArg("response and system sizes differ")
    delta = achievability_map(gss.lam_a, gss.lam_b, m.lx, m.lu)
    delta[:, 0] -= 1.0
    return Residual(delta)


def dense_residual_error(gss: GraphSymmetricSystem, response: FilterResponse, res: Residual) -> float:
    """Largest lag-wise entry of ``(zI - A) Phi_x - B Phi_u - I - Delta`` in dense form."""
    px, pu = response.dense(gss.gmd)
    n = response.fir_len
    lhs = np.zeros((n + 1, gss.n, gss.n))
    lhs[:n] += px
    lhs[1:] -= np.einsum("ij,tjk->tik", gss.a, px) + np.einsum("ij,tjk->tik", gss.b, pu)
    lhs[0] -= np.eye(gss.n)
    return float(np.abs(lhs - res.dense(gss.gmd)).max())


def _coeffs(residual_or_array):
    if isinstance(residual_or_array, Residual):
        return residual_or_array.delta
    d = np.asarray(residual_or_array, dtype=float)
    return d[None, :] if d.ndim == 1 else d


def frequency_response(delta, grid_size) -> np.ndarray:
    """``|Delta_i(e^{jw})|`` on ``w = 2 pi m / M`` for ``m = 0..M/2``.

    Real coefficients make the response conjugate symmetric, so the upper
    half of the circle carries no extra information.
    """
    delta = _coeffs(delta)
    n_taps = delta.shape[1]
    if grid_size >= n_taps:
        return np.abs(np.fft.rfft(delta, n=grid_size, axis=1))
    w = 2 * np.pi * np.arange(grid_size // 2 + 1) / grid_size
    e = np.exp(-1j * np.outer(np.arange(n_taps), w))
    return np.abs(delta @ e)


def hinf_norm(res, grid_size=DEFAULT_GRID):
    """Certified bracket on ``max_i ||Delta_i||_inf``.

    ``lower`` is the largest sampled magnitude; ``upper`` adds the derivative
    bound ``(pi / M) sum_t t |delta[t]|`` covering the gap to the nearest
    grid point.
    """
    if grid_size < 64:
        raise InvalidArg("grid_size must be at least 64")
    delta = _coeffs(res)
    lower = float(frequency_response(delta, grid_size).max())
    lags = np.arange(delta.shape[1])
    gap = float(np.max(np.abs(delta) @ lags)) * np.pi / grid_size
    return lower, lower + gap


def l1_induced_norm(dense_lags) -> float:
    """Max column absolute sum of ``sum_t |Delta[t]|``."""
    d = np.asarray(dense_lags, dtype=float)
    if d.size == 0:
        return 0.0
    if d.ndim == 2:
        d = d[None]
    return float(np.abs(d).sum(axis=(0, 1)).max())


@dataclass(frozen=True)
class StabilityReport:
    certified: bool
    exact: bool
    margin: float
    hinf_upper: float
    max_root: float


def _leading_check(delta):
    lead = 1.0 + delta[:, 0]
    scale = np.maximum(np.abs(delta).max(axis=1), 1.0)
    bad = np.nonzero(np.abs(lead) <= 1e-12 * scale)[0]
    if bad.size:
        i = int(bad[0])
        raise DegenerateResponse(f"mode {i}: leading coefficient of 1 + Delta vanishes", mode=i)
    return lead


def char_roots(delta_row) -> np.ndarray:
    """Zeros of ``1 + Delta_i(z)`` from the companion matrix."""
    c = np.array(delta_row, dtype=float)
    c[0] += 1.0
    c = c / c[0]
    n = c.size - 1
    if n == 0:
        return np.zeros(0)
    comp = np.zeros((n, n))
    comp[0, :] = -c[1:]
    comp[1:, :-1] = np.eye(n - 1)
    return np.linalg.eigvals(comp)


def is_stabilizing(res, grid_size=DEFAULT_GRID) -> StabilityReport:
    """Small-gain certificate plus the exact per-mode root test.

    ``certified`` means ``||Delta||_inf < 1`` via the upper bracket; ``exact``
    means all zeros of every ``1 + Delta_i(z)`` lie strictly inside the unit
    disk, i.e. ``(I + Delta)^{-1}`` is stable.

    Raises:
        DegenerateResponse: if ``1 + delta_i[0] = 0`` for some mode.
    """
    delta = _coeffs(res)
    _leading_check(delta)
    _, upper = hinf_norm(delta, grid_size)
    max_root = 0.0
    for row in delta:
        roots = char_roots(row)
        if roots.size:
            max_root = max(max_root, float(np.abs(roots).max()))
    certified = upper < 1.0
    exact = max_root < 1.0
    # Small gain excludes zeros of 1 + Delta on |z| >= 1.
    assert exact or not certified, "small-gain certificate contradicts root test"
    return StabilityReport(certified, exact, 1.0 - max_root, upper, max_root)


def _tail_gram(den):
    """Gram matrix of the free response beyond the numerator support."""
    c = -den[1:] / den[0]
    n = c.size
    comp = np.zeros((n, n))
    comp[0, :] = c
    comp[1:, :-1] = np.eye(n - 1)
    e1 = np.zeros((n, 1))
    e1[0] = 1.0
    q = comp.T @ e1 @ e1.T @ comp
    return solve_discrete_lyapunov(comp.T, q)


def achieved_modes(gss: GraphSymmetricSystem, response, res: Residual | None = None, eval_len=None):
    """Markov parameters of the achieved maps ``Lambda_i / (1 + Delta_i)``.

    Returns per-mode arrays ``(yx, yu)`` of shape ``N x eval_len`` holding
    lags ``1..eval_len``.
    """
    m = _modes(gss, response)
    res = res if res is not None else residual(gss, m)
    n = m.fir_len
    eval_len = int(eval_len) if eval_len is not None else 10 * n
    den = res.delta.copy()
    den[:, 0] += 1.0
    impulse = np.zeros(eval_len + 1)
    impulse[0] = 1.0
    yx = np.empty((gss.n, eval_len))
    yu = np.empty((gss.n, eval_len))
    for i in range(gss.n):
        yx[i] = lfilter(np.r_[0.0, m.lx[i]], den[i], impulse)[1:]
        yu[i] = lfilter(np.r_[0.0, m.lu[i]], den[i], impulse)[1:]
    return yx, yu


def achieved_cost(gss: GraphSymmetricSystem, response, res: Residual | None = None, eval_len=None,
                  rel_tol=1e-6, report=None) -> float:
    """Squared H2 cost of ``Phi (I + Delta)^{-1}``.

    The achieved maps are expanded by long division; the energy beyond the
    expansion is the free response of the common denominator and is added
    through its observability Gram matrix. The expansion grows until that
    tail is below ``rel_tol`` of the total, capped at ``10 n / margin`` lags.

    Raises:
        Unstable: if some ``1 + Delta_i`` has a zero outside the open unit disk.
    """
    m = _modes(gss, response)
    res = res if res is not None else residual(gss, m)
    stab = is_stabilizing(res)
    if not stab.exact:
        raise Unstable(f"achieved response is unstable (max root modulus {stab.max_root:.6g})")
    n = m.fir_len
    cap = int(np.ceil(10 * n / max(stab.margin, 1e-6)))
    length = int(eval_len) if eval_len is not None else 4 * n
    length = max(length, n + 1)
    den = res.delta.copy()
    den[:, 0] += 1.0
    grams = [_tail_gram(den[i]) if n > 0 else None for i in range(gss.n)]
    while True:
        yx, yu = achieved_modes(gss, m, res, length)
        head = float(np.sum(gss.lam_q[:, None] * yx**2) + np.sum(gss.lam_r[:, None] * yu**2))
        tail = 0.0
        for i in range(gss.n):
            sx = yx[i, -1 : -n - 1 : -1]
            su = yu[i, -1 : -n - 1 : -1]
            tail += gss.lam_q[i] * float(sx @ grams[i] @ sx) + gss.lam_r[i] * float(su @ grams[i] @ su)
        tail = max(tail, 0.0)
        total = head + tail
        if tail <= rel_tol * max(total, np.finfo(float).tiny) or length >= cap:
            break
        length = min(2 * length, cap)
    if report is not None:
        report.update(eval_len=length, tail=tail, head=head, margin=stab.margin)
    return total


def cor1_bound(nominal_sq, hinf_upper) -> float:
    """Unsquared bound ``sqrt(nominal) / (1 - ||Delta||)``; ``inf`` if not certified."""
    if hinf_upper >= 1.0:
        return np.inf
    return float(np.sqrt(nominal_sq) / (1.0 - hinf_upper))
