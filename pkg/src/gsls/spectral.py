"""Graph matrix descriptions and matrix polynomials of the graph shift S.

A GMD is a symmetric matrix ``S`` whose off-diagonal sparsity matches the
communication graph. Everything downstream works in the orthonormal
eigenbasis ``V`` of ``S``: a graph filter ``sum_k h_k S^k`` acts on mode ``i``
as the scalar polynomial ``sum_k h_k lambda_i^k``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import shortest_path

from .errors import DegenerateGraph, IllConditioned, InvalidArg

# Minimum eigenvalue gap, relative to the spectral radius.
DISTINCTNESS_TOL = 1e-6
# Vandermonde systems above this 2-norm condition number are refused.
MAX_VANDERMONDE_COND = 1e12


@dataclass(frozen=True, eq=False)
class Gmd:
    """Graph matrix description with its eigendecomposition.

    Build instances with :meth:`from_matrix`; the eigendecomposition is
    always recomputed from ``s`` and never taken from outside.
    """

    n_nodes: int
    s: np.ndarray
    edges: frozenset
    eigvecs: np.ndarray = field(repr=False)
    eigvals: np.ndarray

    @classmethod
    def from_matrix(cls, s, edges=None, *, validate=True) -> "Gmd":
        s = np.array(s, dtype=float)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise InvalidArg(f"GMD must be square, got shape {s.shape}")
        n = s.shape[0]
        scale = max(np.abs(s).max(), 1.0)
        if np.abs(s - s.T).max() > 1e-12 * scale:
            raise InvalidArg("GMD must be symmetric")
        s = 0.5 * (s + s.T)
        if edges is None:
            edges = {(i, j) for i in range(n) for j in range(i + 1, n) if s[i, j] != 0.0}
        edges = frozenset(tuple(sorted((int(i), int(j)))) for i, j in edges)
        for i in range(n):
            for j in range(i + 1, n):
                if s[i, j] != 0.0 and (i, j) not in edges:
                    raise InvalidArg(f"S[{i},{j}] is nonzero but ({i},{j}) is not an edge")
        eigvals, eigvecs = np.linalg.eigh(s)
        # Deterministic sign: largest-magnitude entry of each eigenvector positive.
        pivots = np.argmax(np.abs(eigvecs), axis=0)
        eigvecs = eigvecs * np.sign(eigvecs[pivots, np.arange(n)])
        gmd = cls(n_nodes=n, s=s, edges=edges, eigvecs=eigvecs, eigvals=eigvals)
        if validate and not gmd.has_distinct_eigvals():
            raise InvalidArg("GMD eigenvalues are not pairwise distinct")
        return gmd

    @property
    def spectral_radius(self) -> float:
        return float(np.abs(self.eigvals).max())

    def min_eigengap(self) -> float:
        if self.n_nodes < 2:
            return np.inf
        return float(np.min(np.diff(self.eigvals)))

    def has_distinct_eigvals(self, tol=DISTINCTNESS_TOL) -> bool:
        return self.min_eigengap() > tol * max(self.spectral_radius, np.finfo(float).tiny)

    def neighbors(self, i) -> list[int]:
        """Nodes sharing an edge with node ``i``, ascending."""
        out = [b if a == i else a for a, b in self.edges if i in (a, b)]
        return sorted(out)

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.n_nodes, self.n_nodes), dtype=bool)
        for i, j in self.edges:
            adj[i, j] = adj[j, i] = True
        return adj

    def diameter(self) -> float:
        """Longest shortest-path hop count; ``inf`` for a disconnected graph."""
        dist = shortest_path(self.adjacency().astype(float), unweighted=True, directed=False)
        return float(dist.max())

    def is_connected(self) -> bool:
        return np.isfinite(self.diameter())

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.s).tobytes())
        h.update(repr(sorted(self.edges)).encode())
        return h.hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "n": self.n_nodes,
            "edges": [list(e) for e in sorted(self.edges)],
            "s": self.s.tolist(),
        }

    @classmethod
    def from_dict(cls, data) -> "Gmd":
        s = np.asarray(data["s"], dtype=float).reshape(data["n"], data["n"])
        return cls.from_matrix(s, edges=[tuple(e) for e in data["edges"]])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text) -> "Gmd":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class HopTapVector:
    """Coefficients ``[h_0, ..., h_{F-1}]`` of a matrix polynomial in S."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coeffs, dtype=float))
        if c.ndim != 1 or c.size == 0:
            raise InvalidArg("tap vector must be a non-empty 1-D array")
        if not np.all(np.isfinite(c)):
            raise InvalidArg("tap vector has non-finite entries")
        object.__setattr__(self, "coeffs", c)

    @property
    def f_hops(self) -> int:
        return self.coeffs.size


def as_seed_sequence(seed) -> np.random.SeedSequence:
    """Accept an integer seed or an existing ``SeedSequence``."""
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed) % 2**64)


def _knn_adjacency(points, k_nearest, self_inclusive):
    n = points.size
    dist = np.abs(points[:, None] - points[None, :])
    n_other = k_nearest - 1 if self_inclusive else k_nearest
    adj = np.zeros((n, n), dtype=bool)
    for i in range(n):
        order = np.argsort(dist[i], kind="stable")
        order = order[order != i]
        adj[i, order[:n_other]] = True
    return adj | adj.T


def generate_random_gmd(
    n_nodes,
    k_nearest,
    seed,
    *,
    self_inclusive=True,
    require_connected=True,
    max_retries=100,
) -> Gmd:
    """Sample a random GMD on a nearest-neighbour graph over ``[0, 1]``.

    Each node draws a uniform position; it is linked to its ``k_nearest``
    nearest points and the links are made bidirectional. With
    ``self_inclusive`` the point itself counts as one of its nearest points
    (so ``k_nearest=3`` yields two neighbours per node); this convention
    gives the ~5.9-hop mean diameter of the reference ensemble. ``S`` takes
    i.i.d. standard normal entries on the Laplacian pattern of the graph,
    symmetrized, and is rescaled to spectral radius 1.

    Draws are repeated on fresh substreams until the eigenvalues are
    distinct (and, if requested, the graph is connected).

    Raises:
        InvalidArg: on bad sizes.
        DegenerateGraph: if ``max_retries`` draws all fail.
    """
    n_nodes = int(n_nodes)
    k_nearest = int(k_nearest)
    if n_nodes < 2:
        raise InvalidArg("n_nodes must be at least 2")
    if not 1 <= k_nearest < n_nodes:
        raise InvalidArg("k_nearest must satisfy 1 <= k_nearest < n_nodes")
    if self_inclusive and k_nearest < 2:
        raise InvalidArg("self-inclusive neighbourhoods need k_nearest >= 2")

    root = as_seed_sequence(seed)
    for _ in range(max_retries):
        rng = np.random.default_rng(root.spawn(1)[0])
        points = rng.uniform(0.0, 1.0, size=n_nodes)
        adj = _knn_adjacency(points, k_nearest, self_inclusive)
        pattern = adj | np.eye(n_nodes, dtype=bool)
        m = rng.standard_normal((n_nodes, n_nodes))
        s = np.where(pattern, 0.5 * (m + m.T), 0.0)
        radius = np.abs(np.linalg.eigvalsh(s)).max()
        if radius == 0.0:
            continue
        s = s / radius
        edges = {(i, j) for i in range(n_nodes) for j in range(i + 1, n_nodes) if adj[i, j]}
        gmd = Gmd.from_matrix(s, edges, validate=False)
        if not gmd.has_distinct_eigvals():
            continue
        if require_connected and not gmd.is_connected():
            continue
        return gmd
    raise DegenerateGraph(f"no valid GMD after {max_retries} draws (seed={seed})")


def vandermonde(eigvals, f_hops) -> np.ndarray:
    """``N x F`` matrix with entries ``lambda_i^k``, ``k = 0..F-1``."""
    return np.vander(np.asarray(eigvals, dtype=float), int(f_hops), increasing=True)


def _as_taps(taps) -> np.ndarray:
    if isinstance(taps, HopTapVector):
        return taps.coeffs
    return HopTapVector(taps).coeffs


def eval_graph_filter(gmd: Gmd, taps) -> np.ndarray:
    """Dense ``sum_k h_k S^k`` by Horner recursion on S.

    Raises:
        InvalidArg: if there are more taps than nodes.
    """
    h = _as_taps(taps)
    if h.size > gmd.n_nodes:
        raise InvalidArg(f"F={h.size} exceeds N={gmd.n_nodes}")
    eye = np.eye(gmd.n_nodes)
    out = h[-1] * eye
    for hk in h[-2::-1]:
        out = out @ gmd.s + hk * eye
    return 0.5 * (out + out.T)


def eval_filter_bank(gmd: Gmd, taps) -> np.ndarray:
    """Evaluate a bank of filters at once.

    Args:
        taps: ``F x n`` array, one column of hop taps per lag.

    Returns:
        ``n x N x N`` array of dense lag slices.
    """
    taps = np.asarray(taps, dtype=float)
    # Spectral evaluation is exact for symmetric S and vectorizes over lags.
    per_mode = vandermonde(gmd.eigvals, taps.shape[0]) @ taps
    v = gmd.eigvecs
    return np.einsum("ik,kt,jk->tij", v, per_mode, v)


def modes_to_taps(eigvals, values) -> np.ndarray:
    """Solve the square Vandermonde system ``[lambda_i^k] h = values``.

    ``values`` may be ``(N,)`` or ``(N, m)``; the solve is column-wise.

    Raises:
        IllConditioned: if the condition number exceeds 1e12.
    """
    eigvals = np.asarray(eigvals, dtype=float)
    vand = vandermonde(eigvals, eigvals.size)
    cond = np.linalg.cond(vand)
    if not np.isfinite(cond) or cond > MAX_VANDERMONDE_COND:
        raise IllConditioned(f"Vandermonde condition number {cond:.3g} exceeds 1e12", cond=cond)
    q, r = np.linalg.qr(vand)
    return np.linalg.solve(r, q.T @ np.asarray(values, dtype=float))


def spectral_to_taps(gmd: Gmd, per_mode_values) -> HopTapVector:
    """Hop taps of the unique degree ``N-1`` filter with the given mode values."""
    values = np.asarray(per_mode_values, dtype=float)
    if values.shape != (gmd.n_nodes,):
        raise InvalidArg(f"expected {gmd.n_nodes} mode values, got shape {values.shape}")
    return HopTapVector(modes_to_taps(gmd.eigvals, values))


def vandermonde_projection_matrices(eigvals, f_hops):
    """Gram and cross matrices of the truncated power basis.

    Returns:
        ``gram = sum_i l_i l_i^T`` (``F x F``) and ``cross = sum_i l_i t_i^T``
        (``F x (N-F)``), where ``l_i`` holds powers ``0..F-1`` of
        ``lambda_i`` and ``t_i`` holds powers ``F..N-1``.
    """
    eigvals = np.asarray(eigvals, dtype=float)
    n = eigvals.size
    if not 1 <= f_hops < n:
        raise InvalidArg(f"need 1 <= F < N, got F={f_hops}, N={n}")
    full = vandermonde(eigvals, n)
    head, tail = full[:, :f_hops], full[:, f_hops:]
    return head.T @ head, head.T @ tail
