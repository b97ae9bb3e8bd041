"""Cumulative adjacency mass, internal dimensions and neuron color intensity.

Index convention: formulas use 1-based ``(i, j)`` ranges (``sum_{k <= i}``),
and :class:`InternalDims` reports 1-based counts of leading spectral neurons.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import haar_orthogonal, skew_expm

TIE_ATOL = 1e-12


def cumulative_matrix(A) -> np.ndarray:
    """``B[i, j] = sum of A[:i+1, :j+1]`` (0-based storage of the 1-based prefix sums)."""
    A = np.asarray(A, dtype=np.float64)
    return A.cumsum(axis=0).cumsum(axis=1)


def baseline_deviation(A, n: int) -> np.ndarray:
    """``B[i, j] - i j / n`` with 1-based ``i, j``."""
    B = cumulative_matrix(A)
    i = np.arange(1, B.shape[0] + 1)[:, None]
    j = np.arange(1, B.shape[1] + 1)[None, :]
    return B - i * j / n


@dataclass(frozen=True)
class InternalDims:
    d_out: int
    d_in: int
    deviation: float


def internal_dims(A, n: int) -> InternalDims:
    """Argmax of the cumulative mass above its random baseline.

    Ties (within rounding) resolve to the smallest row, then smallest column.
    """
    D = baseline_deviation(A, n)
    best = D.max()
    tol = TIE_ATOL * max(1.0, float(np.abs(cumulative_matrix(A)).max(initial=0.0)))
    flat = int(np.flatnonzero(D.ravel() >= best - tol)[0])
    i, j = divmod(flat, D.shape[1])
    return InternalDims(i + 1, j + 1, float(D[i, j]))


def projection_identity_check(U_cols, V_cols, i: int, j: int, swap: bool = False, atol: float = 1e-10) -> float:
    """``||p_F o p_G||_F^2`` with F spanned by the first ``j`` U columns, G by the first ``i`` V columns."""
    U_cols = np.asarray(U_cols, dtype=np.float64)
    V_cols = np.asarray(V_cols, dtype=np.float64)
    for name, M in (("U", U_cols), ("V", V_cols)):
        if np.abs(M.T @ M - np.eye(M.shape[1])).max(initial=0.0) > atol:
            raise ValueError(f"{name} columns are not orthonormal")
    Uf = U_cols[:, :j]
    Vg = V_cols[:, :i]
    pF = Uf @ Uf.T
    pG = Vg @ Vg.T
    comp = pG @ pF if swap else pF @ pG
    return float(np.sum(comp * comp))


def color_intensity(A, n: int) -> np.ndarray:
    """Per-column peak of cumulative mass over baseline, scaled to max 1 (clipped at 0)."""
    A = np.asarray(A, dtype=np.float64)
    i = np.arange(1, A.shape[0] + 1)[:, None]
    raw = (A.cumsum(axis=0) - i / n).max(axis=0)
    top = raw.max(initial=0.0)
    if top <= 0:
        return np.zeros(A.shape[1])
    return np.clip(raw / top, 0.0, 1.0)


def block_orthogonal(n: int, p: int, rng) -> np.ndarray:
    """diag(Q_p, Q_{n-p}) with both blocks Haar-distributed."""
    P = np.zeros((n, n))
    P[:p, :p] = haar_orthogonal(p, rng)
    P[p:, p:] = haar_orthogonal(n - p, rng)
    return P


def perturbed_block_dims(n: int, p: int, eps: float, rng, noise_scale: float | None = None) -> int:
    """Recovered output dimension of one noisy block-orthogonal matrix.

    The generator ``A - A^T`` has Gaussian entries of standard deviation
    ``noise_scale`` (default ``1/sqrt(n)``, keeping its spectral norm O(1)).
    """
    scale = 1.0 / np.sqrt(n) if noise_scale is None else noise_scale
    P = block_orthogonal(n, p, rng)
    A = scale * rng.standard_normal((n, n))
    P_eps = P @ skew_expm(A - A.T, eps) if eps > 0 else P
    return internal_dims(P_eps**2, n).d_out


@dataclass(frozen=True)
class BlockNoiseRow:
    eps: float
    mean_d_out: float
    ci_low: float
    ci_high: float
    trials: int


def block_noise_experiment(
    n: int, p: int, eps_grid, trials: int = 20, rng=None, seed=None, noise_scale: float | None = None
) -> list[BlockNoiseRow]:
    """Mean recovered d_out (with a normal 95% interval) per noise level.

    Trials draw from independent child streams so results do not depend on
    evaluation order.
    """
    from .stats import spawn_rngs

    if not 1 <= p < n:
        raise ValueError(f"need 1 <= p < n, got p={p}, n={n}")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if rng is not None:
        seed = int(rng.integers(2**63))
    rows = []
    for k, eps in enumerate(eps_grid):
        streams = spawn_rngs([0 if seed is None else seed, k], trials)
        dims = np.array([perturbed_block_dims(n, p, float(eps), s, noise_scale) for s in streams], dtype=float)
        mean = float(dims.mean())
        half = 1.96 * float(dims.std(ddof=1)) / np.sqrt(trials) if trials > 1 else 0.0
        rows.append(BlockNoiseRow(float(eps), mean, mean - half, mean + half, trials))
    return rows
