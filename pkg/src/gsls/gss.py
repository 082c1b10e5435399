"""Graph symmetric plants and cost weights.

A graph symmetric system stores ``A, B, Q, R`` through their spectra in the
shared eigenbasis of the GMD; dense matrices are caches rebuilt from those
spectra.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArg
from .spectral import Gmd, as_seed_sequence, eval_filter_bank

STABILIZABILITY_GUARD = 1e-3


def _from_spectrum(v, lam):
    return (v * lam) @ v.T


@dataclass(frozen=True, eq=False)
class GraphSymmetricSystem:
    gmd: Gmd
    lam_a: np.ndarray
    lam_b: np.ndarray
    lam_q: np.ndarray
    lam_r: np.ndarray
    a: np.ndarray = field(init=False, repr=False)
    b: np.ndarray = field(init=False, repr=False)
    q: np.ndarray = field(init=False, repr=False)
    r: np.ndarray = field(init=False, repr=False)
    # Mode indices whose lam_b was redrawn by the stabilizability guard.
    resampled_modes: tuple = ()

    def __post_init__(self):
        n = self.gmd.n_nodes
        for name in ("lam_a", "lam_b", "lam_q", "lam_r"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise InvalidArg(f"{name} must have shape ({n},), got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise InvalidArg(f"{name} has non-finite entries")
            object.__setattr__(self, name, arr)
        if np.any(self.lam_q < 0):
            raise InvalidArg("Q must be positive semidefinite")
        if np.any(self.lam_r <= 0):
            raise InvalidArg("R must be positive definite")
        v = self.gmd.eigvecs
        for name in ("a", "b", "q", "r"):
            object.__setattr__(self, name, _from_spectrum(v, getattr(self, "lam_" + name)))

    @property
    def n(self) -> int:
        return self.gmd.n_nodes

    def unstabilizable_modes(self) -> list[int]:
        return [int(i) for i in np.nonzero((np.abs(self.lam_a) >= 1) & (self.lam_b == 0))[0]]

    def to_dict(self) -> dict:
        return {
            "gmd": self.gmd.to_dict(),
            "lam_a": self.lam_a.tolist(),
            "lam_b": self.lam_b.tolist(),
            "lam_q": self.lam_q.tolist(),
            "lam_r": self.lam_r.tolist(),
        }

    @classmethod
    def from_dict(cls, data) -> "GraphSymmetricSystem":
        return cls(
            gmd=Gmd.from_dict(data["gmd"]),
            lam_a=data["lam_a"],
            lam_b=data["lam_b"],
            lam_q=data["lam_q"],
            lam_r=data["lam_r"],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text) -> "GraphSymmetricSystem":
        return cls.from_dict(json.loads(text))


def generate_random_gss(gmd: Gmd, seed) -> GraphSymmetricSystem:
    """Random plant on ``gmd`` with i.i.d. N(0, 1) spectra and ``Q = R = I``.

    Modes with ``|lam_a| >= 1`` and ``|lam_b| < 1e-3`` have ``lam_b`` redrawn
    so the Riccati equation stays solvable; redrawn indices are recorded in
    ``resampled_modes``.
    """
    rng = np.random.default_rng(as_seed_sequence(seed))
    n = gmd.n_nodes
    lam_a = rng.standard_normal(n)
    lam_b = rng.standard_normal(n)
    resampled = []
    for i in range(n):
        if abs(lam_a[i]) < 1:
            continue
        while abs(lam_b[i]) < STABILIZABILITY_GUARD:
            lam_b[i] = rng.standard_normal()
            if i not in resampled:
                resampled.append(i)
    return GraphSymmetricSystem(
        gmd=gmd,
        lam_a=lam_a,
        lam_b=lam_b,
        lam_q=np.ones(n),
        lam_r=np.ones(n),
        resampled_modes=tuple(resampled),
    )


def verify_graph_symmetric(m, gmd: Gmd, tol=1e-8):
    """Check that ``m`` is diagonalized by the GMD eigenbasis.

    Returns:
        ``(passed, ratio)`` with ``ratio`` the off-diagonal share of the
        Frobenius energy of ``V^T m V``.
    """
    m = np.asarray(m, dtype=float)
    if m.shape != (gmd.n_nodes, gmd.n_nodes):
        raise InvalidArg(f"matrix shape {m.shape} does not match N={gmd.n_nodes}")
    d = gmd.eigvecs.T @ m @ gmd.eigvecs
    total = float(np.sum(d * d))
    if total == 0.0:
        return True, 0.0
    ratio = max(total - float(np.sum(np.diag(d) ** 2)), 0.0) / total
    return ratio < tol, ratio


@dataclass
class QIReport:
    max_ratio: float
    passed: bool
    n_samples: int
    fir_len: int
    unstable_modes: list
    ratios: list = field(repr=False, default_factory=list)


def plant_markov(gss: GraphSymmetricSystem, fir_len):
    """Per-mode Markov parameters of ``(zI - A)^{-1} B`` for lags ``1..fir_len``.

    Returns an ``N x (fir_len + 1)`` array indexed by lag (lag 0 is zero).
    Unstable modes are expanded formally.
    """
    lags = np.arange(fir_len + 1)
    out = np.zeros((gss.n, fir_len + 1))
    out[:, 1:] = gss.lam_b[:, None] * gss.lam_a[:, None] ** (lags[1:] - 1)
    return out


def _truncated_conv(x, y, fir_len):
    out = np.zeros(x.shape[:-1] + (fir_len + 1,))
    for t in range(fir_len + 1):
        out[..., t] = np.einsum("...k,...k->...", x[..., : t + 1], y[..., t::-1])
    return out


def check_quadratic_invariance(gss: GraphSymmetricSystem, seed, n_samples=20, fir_len=8, tol=1e-8,
                               controllers=None) -> QIReport:
    """Check that ``K G K`` stays graph symmetric for random graph filters K.

    Each sample draws ``K(z) = sum_k phi_k(z) S^k`` with FIR taps over lags
    ``0..fir_len``; ``K G K`` is built by dense matrix convolution truncated to
    ``fir_len`` lags and every lag slice is tested with
    :func:`verify_graph_symmetric`.

    Args:
        controllers: optional list of ``F x (fir_len + 1)`` tap arrays used
            instead of random draws.
    """
    rng = np.random.default_rng(as_seed_sequence(seed))
    n = gss.n
    v = gss.gmd.eigvecs
    g_modes = plant_markov(gss, fir_len)
    g_dense = np.einsum("ik,kt,jk->tij", v, g_modes, v)
    if controllers is None:
        controllers = []
        for _ in range(n_samples):
            f = int(rng.integers(1, n + 1))
            controllers.append(rng.standard_normal((f, fir_len + 1)))
    ratios = []
    for taps in controllers:
        k_dense = eval_filter_bank(gss.gmd, taps)
        kg = np.zeros_like(g_dense)
        kgk = np.zeros_like(g_dense)
        for t in range(fir_len + 1):
            for s in range(t + 1):
                kg[t] += k_dense[s] @ g_dense[t - s]
        for t in range(fir_len + 1):
            for s in range(t + 1):
                kgk[t] += kg[s] @ k_dense[t - s]
        worst = 0.0
        for t in range(fir_len + 1):
            worst = max(worst, verify_graph_symmetric(kgk[t], gss.gmd, tol)[1])
        ratios.append(worst)
    max_ratio = max(ratios, default=0.0)
    unstable = [int(i) for i in np.nonzero(np.abs(gss.lam_a) >= 1)[0]]
    return QIReport(
        max_ratio=max_ratio,
        passed=max_ratio < tol,
        n_samples=len(controllers),
        fir_len=fir_len,
        unstable_modes=unstable,
        ratios=ratios,
    )


def kgk_per_mode(gss: GraphSymmetricSystem, k_modes, fir_len):
    """Scalar per-mode ``k_i * g_i * k_i`` truncated to ``fir_len`` lags."""
    g = plant_markov(gss, fir_len)
    return _truncated_conv(_truncated_conv(k_modes, g, fir_len), k_modes, fir_len)
