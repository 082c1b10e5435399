"""Localized F-hop controllers: naive projection, robust SLS and robust projection.

All programs are posed in the spectral domain. Shared hop taps map to mode
values through the truncated Vandermonde matrix, the residual of every mode
is an affine function of those values, and the H-infinity constraint
``|Delta_i(e^{jw})| <= gamma`` is sampled on a frequency grid as one
three-dimensional second-order cone per mode and frequency.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace

import clarabel
import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_triangular

from .errors import IllConditioned, InvalidArg
from .gss import GraphSymmetricSystem
from .lqr import FilterResponse, SpectralResponse, h2_cost
from .sls import hinf_norm, l1_induced_norm, residual
from .spectral import MAX_VANDERMONDE_COND, vandermonde

log = logging.getLogger(__name__)

NORM_MODES = ("hinf_grid", "l1_induced")
FEASIBLE, INFEASIBLE, SOLVER_FAILURE = "feasible", "infeasible", "solver_failure"

_SOLVED = {"Solved", "AlmostSolved"}
_INFEASIBLE = {"PrimalInfeasible", "AlmostPrimalInfeasible"}
# Budget exhaustion is a failure even when the last iterate happens to verify.
_EXHAUSTED = {"MaxIterations", "MaxTime"}


@dataclass(frozen=True)
class SynthesisConfig:
    """Knobs of the robust programs.

    Attributes:
        f_hops: number of hop taps F.
        fir_len: FIR horizon n.
        gamma: bound on the residual norm, ``0 < gamma < 1``.
        norm_mode: ``"hinf_grid"`` or ``"l1_induced"``.
        grid_size: frequencies M sampled on the full circle.
        constraint_margin: tightening applied to the sampled constraint.
        solver_tol: duality-gap tolerance handed to the conic solver.
        max_iters: interior-point iteration cap.
        bisect_gamma: minimize ``sqrt(J) / (1 - gamma)`` over gamma instead
            of fixing it.
        verify_factor: the post-verification grid is ``verify_factor * M``.
        max_refinements: rounds of adding violated frequencies when the
            post-verification fails between grid points.
    """

    f_hops: int
    fir_len: int = 10
    gamma: float = 0.98
    norm_mode: str = "hinf_grid"
    grid_size: int = 1024
    constraint_margin: float = 0.005
    solver_tol: float = 1e-8
    max_iters: int = 200
    bisect_gamma: bool = False
    verify_factor: int = 16
    max_refinements: int = 4

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise InvalidArg("gamma must lie in (0, 1)")
        if not 0.0 <= self.constraint_margin <= 0.05:
            raise InvalidArg("constraint_margin must lie in [0, 0.05]")
        if self.constraint_margin >= self.gamma:
            raise InvalidArg("constraint_margin must be smaller than gamma")
        if self.f_hops < 1 or self.fir_len < 1:
            raise InvalidArg("need F >= 1 and n >= 1")
        if self.norm_mode not in NORM_MODES:
            raise InvalidArg(f"norm_mode must be one of {NORM_MODES}")
        if self.grid_size < 64:
            raise InvalidArg("grid_size must be at least 64")
        if self.max_iters < 1 or self.verify_factor < 1:
            raise InvalidArg("max_iters and verify_factor must be positive")


@dataclass
class SynthesisOutcome:
    status: str
    response: FilterResponse | None = None
    certified_gamma: float = np.inf
    objective_value: float = np.inf
    diagnostics: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.status == FEASIBLE

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "response": None if self.response is None else self.response.to_dict(),
            "certified_gamma": _json_float(self.certified_gamma),
            "objective_value": _json_float(self.objective_value),
            "diagnostics": {k: _json_float(v) for k, v in self.diagnostics.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _json_float(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if np.isfinite(v) else repr(v)
    if isinstance(v, np.integer):
        return int(v)
    return v


# ---------------------------------------------------------------------------
# Truncation and naive projection


def truncate(response: FilterResponse, f_hops, gmd=None):
    """Split a response into its F-truncation and F-tail.

    The tail keeps hops ``F..`` with ``hop_offset = F`` so that evaluating
    head and tail and adding them reproduces the original. When ``gmd`` is
    given the tail also caches ``modes(original) - modes(head)``.
    """
    f_hops = int(f_hops)
    if not 1 <= f_hops <= response.f_hops:
        raise InvalidArg(f"need 1 <= F <= {response.f_hops}, got {f_hops}")
    if response.hop_offset:
        raise InvalidArg("cannot truncate a response that is itself a tail")
    n = response.fir_len
    head = FilterResponse(response.phi_x[:f_hops], response.phi_u[:f_hops], response.gmd_hash)
    if f_hops == response.f_hops:
        tail_x = tail_u = np.zeros((1, n))
        offset = f_hops - 1
        tail = FilterResponse(tail_x, tail_u, response.gmd_hash, hop_offset=offset)
        if gmd is not None:
            zero = np.zeros((gmd.n_nodes, n))
            tail = tail.with_modes(SpectralResponse(zero, zero))
        return head, tail
    tail = FilterResponse(response.phi_x[f_hops:], response.phi_u[f_hops:], response.gmd_hash,
                          hop_offset=f_hops)
    if gmd is not None:
        full = response.spectral(gmd)
        h = head.spectral(gmd)
        tail = tail.with_modes(SpectralResponse(full.lx - h.lx, full.lu - h.lu))
    return head, tail


def _projection_taps(eigvals, phi, f_hops):
    """``phi_head + gram^{-1} cross phi_tail`` through the QR factor of the head powers.

    With ``V_F = QR`` the Gram matrix is ``R^T R`` and ``cross = V_F^T V_tail``,
    so the correction is ``R^{-1} Q^T V_tail phi_tail``; never forming the Gram
    matrix keeps the error proportional to ``cond(V_F)`` instead of its square.
    """
    n_nodes = eigvals.size
    vand = vandermonde(eigvals, n_nodes)
    q, r = np.linalg.qr(vand[:, :f_hops])
    cond = np.linalg.cond(r) ** 2
    if not np.isfinite(cond) or cond > MAX_VANDERMONDE_COND:
        raise IllConditioned(f"Vandermonde Gram condition number {cond:.3g} exceeds 1e12", cond=cond)
    eps = solve_triangular(r, q.T @ (vand[:, f_hops:] @ phi[f_hops:]))
    return phi[:f_hops] + eps


def naive_projection(gss: GraphSymmetricSystem, opt_response: FilterResponse, f_hops,
                     check_tol=1e-6) -> FilterResponse:
    """H2-nearest F-hop response, lag by lag, in closed form.

    The projected taps are ``phi_head + gram^{-1} cross phi_tail``. The
    result is cross-checked against a generic least-squares fit of the
    per-mode values.

    Raises:
        IllConditioned: if the Gram matrix is too ill-conditioned, or if the
            closed form and the least-squares fit disagree by more than
            ``check_tol`` in some tap.
    """
    gmd = gss.gmd
    n_nodes = gmd.n_nodes
    f_hops = int(f_hops)
    if opt_response.f_hops != n_nodes:
        raise InvalidArg("naive projection needs a full N-hop response")
    if not 1 <= f_hops <= n_nodes:
        raise InvalidArg(f"need 1 <= F <= N, got {f_hops}")
    if f_hops == n_nodes:
        return opt_response
    px = _projection_taps(gmd.eigvals, opt_response.phi_x, f_hops)
    pu = _projection_taps(gmd.eigvals, opt_response.phi_u, f_hops)

    vand = vandermonde(gmd.eigvals, f_hops)
    full = opt_response.spectral(gmd)
    ls_x = np.linalg.lstsq(vand, vandermonde(gmd.eigvals, n_nodes) @ opt_response.phi_x, rcond=None)[0]
    ls_u = np.linalg.lstsq(vand, vandermonde(gmd.eigvals, n_nodes) @ opt_response.phi_u, rcond=None)[0]
    gap = max(np.abs(px - ls_x).max(), np.abs(pu - ls_u).max())
    if gap > check_tol:
        raise IllConditioned(f"closed-form and least-squares taps differ by {gap:.3g}", cond=np.linalg.cond(vand))

    # Exact orthogonal projection of the mode values onto span of the first F powers.
    q, _ = np.linalg.qr(vand)
    modes = SpectralResponse(q @ (q.T @ full.lx), q @ (q.T @ full.lu))
    return FilterResponse(px, pu, opt_response.gmd_hash, modes)


# ---------------------------------------------------------------------------
# Conic programs


@dataclass
class _Layout:
    f_hops: int
    fir_len: int
    n_modes: int

    def __post_init__(self):
        f, n, m = self.f_hops, self.fir_len, self.n_modes
        self.y = 0
        self.w = f * n
        self.lx = 2 * f * n
        self.lu = self.lx + m * n
        self.delta = self.lu + m * n
        self.aux = self.delta + m * (n + 1)

    def n_vars(self, extra=0):
        return self.aux + extra


def _residual_operator(lam_a, lam_b, n):
    """Sparse maps with ``delta = Dx lx + Du lu - e0`` on stacked mode vectors."""
    ident = sp.eye(n + 1, n, format="csc")
    shift = sp.eye(n + 1, n, k=-1, format="csc")
    dx = sp.kron(sp.eye(lam_a.size), ident) - sp.kron(sp.diags(lam_a), shift)
    du = -sp.kron(sp.diags(lam_b), shift)
    return dx.tocsc(), du.tocsc()


def _circle_freqs(grid_size):
    return 2 * np.pi * np.arange(grid_size // 2 + 1) / grid_size


class _Program:
    """Sparse conic model of the robust F-hop program for one system."""

    def __init__(self, gss, cfg: SynthesisConfig):
        self.gss = gss
        self.cfg = cfg
        n_modes = gss.n
        if cfg.f_hops > n_modes:
            raise InvalidArg(f"F={cfg.f_hops} exceeds N={n_modes}")
        self.lay = _Layout(cfg.f_hops, cfg.fir_len, n_modes)
        vand = vandermonde(gss.gmd.eigvals, cfg.f_hops)
        cond = np.linalg.cond(vand)
        if not np.isfinite(cond) or cond > MAX_VANDERMONDE_COND:
            raise IllConditioned(f"Vandermonde condition number {cond:.3g} exceeds 1e12", cond=cond)
        # Orthonormal coordinates keep the equality block well conditioned.
        self.q, self.r = np.linalg.qr(vand)
        self._equalities()

    def _equalities(self):
        lay, n, m = self.lay, self.cfg.fir_len, self.gss.n
        nv = lay.n_vars()
        qmap = sp.kron(sp.csc_matrix(self.q), sp.eye(n))
        eye_mn = sp.eye(m * n)
        zero = lambda r, c: sp.csc_matrix((r, c))
        dx, du = _residual_operator(self.gss.lam_a, self.gss.lam_b, n)
        fn = self.cfg.f_hops * n
        md = m * (n + 1)
        rows = [
            sp.hstack([-qmap, zero(m * n, fn), eye_mn, zero(m * n, m * n), zero(m * n, md)]),
            sp.hstack([zero(m * n, fn), -qmap, zero(m * n, m * n), eye_mn, zero(m * n, md)]),
            sp.hstack([zero(md, 2 * fn), -dx, -du, sp.eye(md)]),
        ]
        rhs = np.zeros(2 * m * n + md)
        e0 = np.zeros(md)
        e0[:: n + 1] = -1.0
        rhs[2 * m * n :] = e0
        self.eq_a = sp.vstack(rows).tocsc()
        assert self.eq_a.shape[1] == nv
        self.eq_b = rhs

    def _hinf_block(self, bound, freqs, extra):
        n, m = self.cfg.fir_len, self.gss.n
        taus = np.arange(n + 1)
        cos = np.cos(np.outer(freqs, taus))
        sin = np.sin(np.outer(freqs, taus))
        n_f = freqs.size
        # Per mode: rows (bound, -Re, +Im) for every frequency.
        blk = sp.vstack(
            [sp.csc_matrix((n_f, n + 1)), sp.csc_matrix(-cos), sp.csc_matrix(sin)]
        ).tocsr()
        order = np.arange(3 * n_f).reshape(3, n_f).T.ravel()
        blk = blk[order]
        a_delta = sp.kron(sp.eye(m), blk)
        lead = sp.csc_matrix((a_delta.shape[0], self.lay.delta))
        a = sp.hstack([lead, a_delta, sp.csc_matrix((a_delta.shape[0], extra))]).tocsc()
        b = np.zeros(a.shape[0])
        b[0::3] = bound
        cones = [clarabel.SecondOrderConeT(3)] * (m * n_f)
        return a, b, cones

    def _l1_block(self, bound):
        n, m = self.cfg.fir_len, self.gss.n
        v = self.gss.gmd.eigvecs
        # Delta[t]_{jk} = sum_i V_ji V_ki delta_i[t]; row (t, j, k), column (i, t).
        outer = np.einsum("ji,ki->jki", v, v).reshape(m * m, m)
        dense = sp.kron(sp.csc_matrix(outer), sp.eye(n + 1)).tocsr()
        # Reorder rows from (j, k, t) to (t, j, k).
        idx = np.arange(m * m * (n + 1)).reshape(m * m, n + 1).T.ravel()
        dense = dense[idx]
        n_aux = (n + 1) * m * m
        lead = sp.csc_matrix((n_aux, self.lay.delta))
        eye = sp.eye(n_aux)
        # s - Delta >= 0 and s + Delta >= 0, written as b - A x in the nonnegative cone.
        upper = sp.hstack([lead, dense, -eye])
        lower = sp.hstack([lead, -dense, -eye])
        colsum = sp.kron(sp.csc_matrix(np.ones((1, n + 1))), sp.kron(sp.csc_matrix(np.ones((1, m))), sp.eye(m)))
        budget = sp.hstack([sp.csc_matrix((m, self.lay.delta + m * (n + 1))), colsum])
        a = sp.vstack([upper, lower, budget]).tocsc()
        b = np.r_[np.zeros(2 * n_aux), np.full(m, bound)]
        return a, b, [clarabel.NonnegativeConeT(a.shape[0])], n_aux

    def solve(self, objective, gamma, freqs):
        """Solve the program at a fixed ``gamma``.

        Args:
            objective: ``"cost"`` or a :class:`SpectralResponse` target to
                project onto.
        """
        cfg, lay, m, n = self.cfg, self.lay, self.gss.n, self.cfg.fir_len
        bound = gamma - cfg.constraint_margin
        extra = 0
        if cfg.norm_mode == "l1_induced":
            a_c, b_c, cones_c, extra = self._l1_block(bound)
        else:
            a_c, b_c, cones_c = self._hinf_block(bound, freqs, 0)
        nv = lay.n_vars(extra)
        eq_a = sp.hstack([self.eq_a, sp.csc_matrix((self.eq_a.shape[0], extra))])
        a = sp.vstack([eq_a, a_c]).tocsc()
        b = np.r_[self.eq_b, b_c]
        cones = [clarabel.ZeroConeT(eq_a.shape[0])] + cones_c

        diag = np.zeros(nv)
        qvec = np.zeros(nv)
        const = 0.0
        if isinstance(objective, SpectralResponse):
            diag[lay.lx : lay.delta] = 2.0
            qvec[lay.lx : lay.lu] = -2.0 * objective.lx.ravel()
            qvec[lay.lu : lay.delta] = -2.0 * objective.lu.ravel()
            const = float(np.sum(objective.lx**2) + np.sum(objective.lu**2))
        else:
            diag[lay.lx : lay.lu] = 2.0 * np.repeat(self.gss.lam_q, n)
            diag[lay.lu : lay.delta] = 2.0 * np.repeat(self.gss.lam_r, n)
        p = sp.diags(diag).tocsc()

        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.max_iter = cfg.max_iters
        settings.tol_gap_abs = cfg.solver_tol
        settings.tol_gap_rel = cfg.solver_tol
        start = time.perf_counter()
        sol = clarabel.DefaultSolver(p, qvec, a, b, cones, settings).solve()
        elapsed = time.perf_counter() - start
        x = np.asarray(sol.x)
        info = {
            "solver_status": str(sol.status),
            "iterations": int(sol.iterations),
            "solve_time_s": elapsed,
            "solver_objective": float(sol.obj_val) + const,
            "n_freqs": int(0 if freqs is None else freqs.size),
        }
        if np.isfinite(sol.obj_val) and np.isfinite(sol.obj_val_dual):
            denom = max(1.0, abs(sol.obj_val + const))
            info["rel_gap"] = abs(sol.obj_val - sol.obj_val_dual) / denom
        return x, info

    def extract(self, x) -> FilterResponse:
        lay, f, n = self.lay, self.cfg.f_hops, self.cfg.fir_len
        y = x[lay.y : lay.w].reshape(f, n)
        w = x[lay.w : lay.lx].reshape(f, n)
        phi_x = np.linalg.solve(self.r, y)
        phi_u = np.linalg.solve(self.r, w)
        return FilterResponse(phi_x, phi_u, self.gss.gmd.fingerprint())


def _verify(gss, response, cfg, gamma):
    """Recompute the residual from the taps alone and certify it."""
    res = residual(gss, response.with_modes(None))
    verify_grid = cfg.grid_size * cfg.verify_factor
    lower, upper = hinf_norm(res, verify_grid)
    out = {"hinf_lower": lower, "hinf_upper": upper}
    ok = upper <= gamma
    if cfg.norm_mode == "l1_induced":
        l1 = l1_induced_norm(res.dense(gss.gmd))
        out["l1_norm"] = l1
        ok = ok and l1 <= gamma
    return ok, res, out


def _violations(res, cfg, gamma):
    """Fine-grid frequencies where some mode exceeds the tightened bound."""
    fine = cfg.grid_size * cfg.verify_factor
    freqs = _circle_freqs(fine)
    mags = np.abs(np.fft.rfft(res.delta, n=fine, axis=1))
    hot = np.nonzero((mags > gamma - cfg.constraint_margin).any(axis=0))[0]
    return freqs[hot]


def _solve_fixed(program: _Program, objective, gamma):
    cfg = program.cfg
    freqs = _circle_freqs(cfg.grid_size) if cfg.norm_mode == "hinf_grid" else None
    diag = {"gamma": gamma, "refinements": 0, "iterations": 0}
    for round_ in range(cfg.max_refinements + 1):
        x, info = program.solve(objective, gamma, freqs)
        diag["iterations"] += info.pop("iterations")
        diag.update(info)
        status = info["solver_status"]
        if status in _INFEASIBLE:
            return SynthesisOutcome(INFEASIBLE, diagnostics=diag)
        if status in _EXHAUSTED or not np.all(np.isfinite(x)):
            return SynthesisOutcome(SOLVER_FAILURE, diagnostics=diag)
        response = program.extract(x)
        ok, res, checks = _verify(program.gss, response, cfg, gamma)
        diag.update(checks)
        diag["objective_certified"] = status == "Solved" or (
            status == "AlmostSolved" and diag.get("rel_gap", np.inf) <= max(cfg.solver_tol, 1e-6)
        )
        if ok:
            if status not in _SOLVED:
                log.info("accepting post-verified point despite solver status %s", status)
            return SynthesisOutcome(FEASIBLE, response, checks["hinf_upper"], np.nan, diag)
        if status not in _SOLVED:
            return SynthesisOutcome(SOLVER_FAILURE, diagnostics=diag)
        if freqs is None:
            break
        extra = _violations(res, cfg, gamma)
        if extra.size == 0:
            break
        freqs = np.union1d(freqs, extra)
        diag["refinements"] = round_ + 1
    return SynthesisOutcome(SOLVER_FAILURE, diagnostics=diag)


def _objective_value(gss, response, objective):
    if isinstance(objective, SpectralResponse):
        m = response.spectral(gss.gmd)
        return float(np.sum((m.lx - objective.lx) ** 2) + np.sum((m.lu - objective.lu) ** 2))
    return h2_cost(gss, response)


def _finalize(gss, outcome, objective):
    if outcome.feasible:
        outcome.objective_value = _objective_value(gss, outcome.response, objective)
    return outcome


def _bisect(program, objective, gss, cfg, n_steps=24):
    """Minimize ``sqrt(objective) / (1 - gamma)`` over ``gamma``.

    Feasibility is monotone in gamma, so the smallest feasible gamma is
    located first; the quasi-convex objective is then minimized by golden
    section search between it and ``cfg.gamma``.
    """
    cache = {}

    def run(g):
        if g not in cache:
            out = _finalize(gss, _solve_fixed(program, objective, g), objective)
            val = np.sqrt(out.objective_value) / (1.0 - g) if out.feasible else np.inf
            cache[g] = (val, out)
        return cache[g]

    hi = cfg.gamma
    if not run(hi)[1].feasible:
        return run(hi)[1]
    lo = cfg.constraint_margin + 1e-3
    if not run(lo)[1].feasible:
        a, b = lo, hi
        for _ in range(n_steps // 2):
            mid = 0.5 * (a + b)
            if run(mid)[1].feasible:
                b = mid
            else:
                a = mid
        lo = b
    ratio = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - ratio * (b - a), a + ratio * (b - a)
    for _ in range(n_steps):
        if run(c)[0] <= run(d)[0]:
            b, d = d, c
            c = b - ratio * (b - a)
        else:
            a, c = c, d
            d = a + ratio * (b - a)
    best_g = min(cache, key=lambda g: cache[g][0])
    val, out = cache[best_g]
    out.diagnostics["bisect_evaluations"] = len(cache)
    out.diagnostics["bisect_objective"] = val
    out.objective_value = val
    return out


def _synthesize(gss, cfg, objective):
    program = _Program(gss, cfg)
    if cfg.bisect_gamma:
        return _bisect(program, objective, gss, cfg)
    return _finalize(gss, _solve_fixed(program, objective, cfg.gamma), objective)


def robust_sls_synthesize(gss: GraphSymmetricSystem, config: SynthesisConfig) -> SynthesisOutcome:
    """Minimum-cost F-hop response whose residual norm is at most gamma.

    The objective is the squared H2 cost of the nominal response. A
    ``feasible`` outcome has been re-verified from its taps on a grid
    ``verify_factor`` times finer than the constraint grid.
    """
    return _synthesize(gss, config, "cost")


def robust_projection(gss: GraphSymmetricSystem, opt_response: FilterResponse,
                      config: SynthesisConfig) -> SynthesisOutcome:
    """F-hop response nearest to ``opt_response`` in H2 under the same constraints."""
    target = opt_response.spectral(gss.gmd)
    if target.fir_len != config.fir_len:
        raise InvalidArg("opt_response FIR length must match config.fir_len")
    return _synthesize(gss, config, target)


def suboptimality_bound(gss: GraphSymmetricSystem, opt_response: FilterResponse, f_hops,
                        grid_size=1024):
    """Cost guarantee for robust truncation built from the optimal F-tail.

    ``Delta*`` is the residual of the truncated candidate ``P_F(Phi*)``. For
    an exactly achievable ``Phi*`` this is minus the image of the F-tail
    under ``(zI - A, -B)``; for an FIR ``Phi*`` it also carries the FIR
    truncation residual, which keeps the bound honest at finite ``n``.

    Returns:
        ``(bound, delta_star_norm)``; ``bound`` is ``None`` when the
        residual norm is not below one. Costs are unsquared H2 norms.
    """
    _, tail = truncate(opt_response, f_hops, gss.gmd)
    full = opt_response.spectral(gss.gmd)
    t = tail.spectral(gss.gmd)
    d_star = residual(gss, SpectralResponse(full.lx - t.lx, full.lu - t.lu)).delta
    norm = hinf_norm(d_star, grid_size)[1] if np.any(d_star) else 0.0
    if norm >= 1.0:
        return None, norm
    j_opt = np.sqrt(h2_cost(gss, full))
    j_tail = np.sqrt(h2_cost(gss, t))
    return float((j_opt + j_tail) / (1.0 - norm)), norm


def config_to_dict(cfg: SynthesisConfig) -> dict:
    return asdict(cfg)


def config_from_dict(data) -> SynthesisConfig:
    known = SynthesisConfig.__dataclass_fields__
    return SynthesisConfig(**{k: v for k, v in data.items() if k in known})


def with_hops(cfg: SynthesisConfig, f_hops) -> SynthesisConfig:
    return replace(cfg, f_hops=int(f_hops))
