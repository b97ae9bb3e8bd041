"""Dense numerical kernels: SVD, 2-D convolution, conv flattening, skew expm."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

JACOBI_TOL = 1e-12
MAX_SWEEPS = 80
TAYLOR_TOL = 1e-14
TIE_RTOL = 1e-10


@dataclass(frozen=True)
class SvdFactors:
    """Thin SVD ``M = U @ diag(S) @ V.T`` with ``r = min(m, n)`` triplets."""

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    @property
    def rank(self) -> int:
        return self.S.shape[0]

    def reconstruct(self, keep: int | None = None) -> np.ndarray:
        k = self.rank if keep is None else keep
        return (self.U[:, :k] * self.S[:k]) @ self.V[:, :k].T

    def has_ties(self, rtol: float = TIE_RTOL) -> bool:
        """True when two consecutive singular values coincide (basis ambiguity)."""
        if self.rank < 2:
            return False
        scale = max(float(self.S[0]), np.finfo(float).tiny)
        return bool(np.any(np.abs(np.diff(self.S)) <= rtol * scale))


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    # circle-method schedule: n-1 rounds of n/2 disjoint pairs (n even)
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        half = n // 2
        p = np.array(players[:half])
        q = np.array(players[half:][::-1])
        rounds.append((p, q))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _jacobi_tall(a: np.ndarray, tol: float, max_sweeps: int):
    """One-sided (Hestenes) Jacobi on a tall matrix, disjoint pairs rotated together."""
    m, n = a.shape
    w = a.copy()
    v = np.eye(n)
    if n == 1:
        return w, v
    n_even = n + (n % 2)
    if n_even != n:
        # phantom zero column never rotates (gamma == 0)
        w = np.hstack([w, np.zeros((m, 1))])
        v = np.pad(v, ((0, 1), (0, 1)))
    rounds = _round_robin(n_even)
    for _ in range(max_sweeps):
        rotated = False
        for p, q in rounds:
            wp, wq = w[:, p], w[:, q]
            alpha = np.einsum("ij,ij->j", wp, wp)
            beta = np.einsum("ij,ij->j", wq, wq)
            gamma = np.einsum("ij,ij->j", wp, wq)
            active = np.abs(gamma) > tol * np.sqrt(alpha * beta)
            if not active.any():
                continue
            rotated = True
            p, q = p[active], q[active]
            alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            wp, wq = w[:, p], w[:, q]
            w[:, p] = c * wp - s * wq
            w[:, q] = s * wp + c * wq
            vp, vq = v[:, p], v[:, q]
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
        if not rotated:
            break
    else:
        raise np.linalg.LinAlgError("Jacobi SVD did not converge")
    return w[:, :n], v[:n, :n]


def _complete_columns(u: np.ndarray, missing: np.ndarray) -> np.ndarray:
    # fill columns flagged `missing` with an orthonormal complement, deterministically
    m = u.shape[0]
    basis = [u[:, j] for j in np.flatnonzero(~missing)]
    out = u.copy()
    candidates = iter(np.eye(m))
    for j in np.flatnonzero(missing):
        while True:
            e = next(candidates).copy()
            for _ in range(2):
                for b in basis:
                    e -= (b @ e) * b
            norm = np.linalg.norm(e)
            if norm > 0.5:
                break
        e /= norm
        out[:, j] = e
        basis.append(e)
    return out


def svd(M, tol: float = JACOBI_TOL, max_sweeps: int = MAX_SWEEPS) -> SvdFactors:
    """Thin SVD by one-sided Jacobi rotations.

    All ``min(m, n)`` triplets are kept, including numerically negligible
    ones. Triplets are ordered by decreasing singular value (stable on ties)
    and signed so the largest-magnitude entry of each ``V`` column is positive.

    Parameters
    ----------
    M : array_like, shape (m, n)
        Finite real matrix.

    Returns
    -------
    SvdFactors
    """
    a = np.asarray(M, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"svd expects a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("svd input contains non-finite values")
    m, n = a.shape
    transpose = m < n
    work = a.T if transpose else a
    rows, r = work.shape
    if r == 0:
        return SvdFactors(np.zeros((m, 0)), np.zeros(0), np.zeros((n, 0)))

    w, right = _jacobi_tall(work, tol, max_sweeps)
    sigma = np.linalg.norm(w, axis=0)
    tiny = np.finfo(float).tiny
    missing = sigma <= tiny
    left = np.divide(w, np.where(missing, 1.0, sigma))
    if missing.any():
        sigma[missing] = 0.0
        left = _complete_columns(left, missing)

    order = sorted(range(r), key=lambda k: (-sigma[k], k))
    sigma, left, right = sigma[order], left[:, order], right[:, order]

    U, V = (right, left) if transpose else (left, right)
    pivot = np.argmax(np.abs(V), axis=0)
    signs = np.where(V[pivot, np.arange(r)] < 0, -1.0, 1.0)
    return SvdFactors(U * signs, sigma, V * signs)


def flatten_conv(T) -> np.ndarray:
    """o x i x K x K tensor -> o x (i K^2), columns ordered (channel, row, col)."""
    T = np.asarray(T, dtype=np.float64)
    if T.ndim != 4 or T.shape[2] != T.shape[3]:
        raise ValueError(f"expected an o x i x K x K tensor, got shape {T.shape}")
    return T.reshape(T.shape[0], -1)


def unflatten_conv(M, in_channels: int, kernel: int) -> np.ndarray:
    M = np.asarray(M)
    return M.reshape(M.shape[0], in_channels, kernel, kernel)


def flatten_conv_co(T) -> np.ndarray:
    """o x i x K x K tensor -> (o K^2) x i, rows ordered (out-channel, row, col)."""
    T = np.asarray(T, dtype=np.float64)
    if T.ndim != 4 or T.shape[2] != T.shape[3]:
        raise ValueError(f"expected an o x i x K x K tensor, got shape {T.shape}")
    o, i, K, _ = T.shape
    return T.transpose(0, 2, 3, 1).reshape(o * K * K, i)


def unflatten_conv_co(M, out_channels: int, kernel: int) -> np.ndarray:
    M = np.asarray(M)
    i = M.shape[1]
    return M.reshape(out_channels, kernel, kernel, i).transpose(0, 3, 1, 2)


def _check_kernel(K: int) -> None:
    if K % 2 == 0:
        raise ValueError(f"kernel size must be odd for same-size convolution, got {K}")


def conv2d(x, filt) -> np.ndarray:
    """Same-size 2-D cross-correlation of an i-channel stack with an i x K x K filter.

    Stride 1, zero padding ``(K - 1) / 2``, no kernel flip.
    """
    x = np.asarray(x, dtype=np.float64)
    filt = np.asarray(filt, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if filt.ndim == 2:
        filt = filt[None]
    return conv2d_layer(x, filt[None])[0]


def conv2d_layer(x, T) -> np.ndarray:
    """Apply a full conv layer ``T`` (o x i x K x K) to ``x`` of shape (i, H, W) or (B, i, H, W)."""
    x = np.asarray(x, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    o, i, K, K2 = T.shape
    if K != K2:
        raise ValueError("conv kernels must be square")
    _check_kernel(K)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or x.shape[1] != i:
        raise ValueError(f"input with {i} channels expected, got shape {x.shape}")
    pad = (K - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(xp, (K, K), axis=(2, 3))  # B, i, H, W, K, K
    out = np.einsum("bihwkl,oikl->bohw", windows, T, optimize=True)
    return out[0] if single else out


def skew_expm(A, eps: float = 1.0, tol: float = TAYLOR_TOL) -> np.ndarray:
    """Orthogonal matrix ``exp(eps * A)`` for skew-symmetric ``A``.

    Scaling and squaring around a truncated Taylor series.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("skew_expm expects a square matrix")
    if np.max(np.abs(A + A.T), initial=0.0) > 1e-12:
        raise ValueError("skew_expm input is not skew-symmetric")
    if eps < 0:
        raise ValueError("eps must be non-negative")
    n = A.shape[0]
    X = eps * A
    norm = np.linalg.norm(X, 1)
    squarings = max(0, int(np.ceil(np.log2(norm / 0.5)))) if norm > 0 else 0
    X = X / 2.0**squarings
    result = np.eye(n)
    term = np.eye(n)
    for k in range(1, 60):
        term = term @ X / k
        result += term
        if np.max(np.abs(term)) <= tol:
            break
    for _ in range(squarings):
        result = result @ result
    return result


def haar_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample from O(n): QR of a Gaussian matrix with R's diagonal signs folded in."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)
