"""Null-distribution machinery for adjacency coefficients.

Chi-square CDF/quantiles (own regularized incomplete gamma), uniform sphere
sampling, closed-form moments and Monte Carlo checks of the rescaled
chi-square null models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

GAMMA_EPS = 1e-15
GAMMA_MAX_ITER = 10_000
MC_SIGMAS = 4.0


def make_rng(seed=None) -> np.random.Generator:
    """Counter-based (Philox) generator; accepts an int seed or a SeedSequence."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


def spawn_rngs(seed, count: int) -> list[np.random.Generator]:
    """Independent per-worker streams derived from a master seed."""
    children = np.random.SeedSequence(seed).spawn(count)
    return [make_rng(c) for c in children]


# -- regularized incomplete gamma -------------------------------------------------


def _gamma_series(a, x):
    # P(a, x) for x < a + 1
    out = np.zeros_like(x)
    pos = x > 0
    if not pos.any():
        return out
    a_, x_ = a[pos], x[pos]
    ap = a_.copy()
    term = 1.0 / a_
    total = term.copy()
    live = np.ones(a_.shape, dtype=bool)
    for _ in range(GAMMA_MAX_ITER):
        ap = ap + 1.0
        term = np.where(live, term * x_ / ap, term)
        total = np.where(live, total + term, total)
        live &= np.abs(term) >= np.abs(total) * GAMMA_EPS
        if not live.any():
            break
    log_pref = -x_ + a_ * np.log(x_) - np.vectorize(math.lgamma)(a_)
    out[pos] = total * np.exp(log_pref)
    return out


def _gamma_contfrac(a, x):
    # Q(a, x) for x >= a + 1, modified Lentz
    tiny = 1e-300
    b = x + 1.0 - a
    c = np.full_like(x, 1.0 / tiny)
    d = 1.0 / b
    h = d.copy()
    live = np.ones(x.shape, dtype=bool)
    for i in range(1, GAMMA_MAX_ITER):
        an = -i * (i - a)
        b = b + 2.0
        d = an * d + b
        d = np.where(np.abs(d) < tiny, tiny, d)
        c = b + an / c
        c = np.where(np.abs(c) < tiny, tiny, c)
        d = 1.0 / d
        delta = d * c
        h = np.where(live, h * delta, h)
        live &= np.abs(delta - 1.0) >= GAMMA_EPS
        if not live.any():
            break
    log_pref = -x + a * np.log(x) - np.vectorize(math.lgamma)(a)
    return np.exp(log_pref) * h


def regularized_gamma(a, x, upper: bool = False):
    """P(a, x) (or Q(a, x) when ``upper``), elementwise.

    Series below ``x = a + 1``, continued fraction above; each branch
    returns the tail it is accurate for.
    """
    a_arr, x_arr = np.broadcast_arrays(np.asarray(a, dtype=np.float64), np.asarray(x, dtype=np.float64))
    a_arr, x_arr = a_arr.ravel(), x_arr.ravel()
    if np.any(a_arr <= 0):
        raise ValueError("shape parameter must be positive")
    if np.any(x_arr < 0):
        raise ValueError("x must be non-negative")
    out = np.empty_like(x_arr)
    lo = x_arr < a_arr + 1.0
    if lo.any():
        p = _gamma_series(a_arr[lo], x_arr[lo])
        out[lo] = 1.0 - p if upper else p
    hi = ~lo
    if hi.any():
        q = _gamma_contfrac(a_arr[hi], x_arr[hi])
        out[hi] = q if upper else 1.0 - q
    shape = np.broadcast(np.asarray(a), np.asarray(x)).shape
    return out.reshape(shape) if shape else float(out[0])


def chi2_cdf(x, k):
    """CDF of the chi-square distribution with ``k`` degrees of freedom."""
    if np.any(np.asarray(x) < 0):
        raise ValueError("chi2_cdf is defined for x >= 0")
    if np.any(np.asarray(k) < 1):
        raise ValueError("degrees of freedom must be >= 1")
    return regularized_gamma(np.asarray(k, dtype=float) / 2.0, np.asarray(x, dtype=float) / 2.0)


def chi2_sf(x, k):
    """Survival function ``1 - chi2_cdf`` computed without cancellation."""
    if np.any(np.asarray(x) < 0):
        raise ValueError("chi2_sf is defined for x >= 0")
    return regularized_gamma(np.asarray(k, dtype=float) / 2.0, np.asarray(x, dtype=float) / 2.0, upper=True)


def _wilson_hilferty(p: float, k: float) -> float:
    z = NormalDist().inv_cdf(p)
    h = 2.0 / (9.0 * k)
    return max(k * (1.0 - h + z * math.sqrt(h)) ** 3, 1e-300)


def _bisect(f, target: float, lo: float, hi: float, increasing: bool) -> float:
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if (f(mid) < target) == increasing:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    return 0.5 * (lo + hi)


def _bracket(f, target: float, guess: float, increasing: bool) -> tuple[float, float]:
    lo = hi = guess
    # move lo left until f(lo) is on the "below target" side (cdf) / "above" side (sf)
    while lo > 1e-300 and ((f(lo) > target) if increasing else (f(lo) < target)):
        lo *= 0.5
    while (f(hi) < target) if increasing else (f(hi) > target):
        hi *= 2.0
    return (0.0 if lo <= 1e-300 else lo), hi


def _check_quantile_args(p: float, k: float) -> None:
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    if k < 1:
        raise ValueError("degrees of freedom must be >= 1")


def chi2_quantile(p: float, k: float) -> float:
    """Inverse CDF by bracketed bisection seeded with the Wilson-Hilferty approximation."""
    _check_quantile_args(p, k)
    f = lambda x: chi2_cdf(x, k)  # noqa: E731
    lo, hi = _bracket(f, p, _wilson_hilferty(p, k), increasing=True)
    return _bisect(f, p, lo, hi, increasing=True)


def chi2_isf(q: float, k: float) -> float:
    """Inverse survival function; accurate for tiny upper-tail probabilities."""
    _check_quantile_args(q, k)
    f = lambda x: chi2_sf(x, k)  # noqa: E731
    lo, hi = _bracket(f, q, _wilson_hilferty(1.0 - q, k) if q > 1e-15 else 2.0 * k + 50.0, increasing=False)
    return _bisect(f, q, lo, hi, increasing=False)


# -- null models ---------------------------------------------------------------


@dataclass(frozen=True)
class NullModel:
    """Rescaled chi-square law ``scale * chi2(dof)`` for adjacency coefficients."""

    dof: int
    scale: float
    n: int

    def __post_init__(self):
        if self.dof < 1:
            raise ValueError("dof must be >= 1")
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    @classmethod
    def fc(cls, n: int) -> "NullModel":
        return cls(dof=1, scale=1.0 / n, n=n)

    @classmethod
    def conv(cls, n: int, kernel: int) -> "NullModel":
        k2 = kernel * kernel
        return cls(dof=k2, scale=1.0 / (n * k2), n=n)

    def cdf(self, x):
        return chi2_cdf(np.maximum(np.asarray(x, dtype=float), 0.0) / self.scale, self.dof)

    def sf(self, x):
        return chi2_sf(np.maximum(np.asarray(x, dtype=float), 0.0) / self.scale, self.dof)

    def threshold(self, p: float) -> float:
        """Value exceeded with probability ``p`` under the null."""
        if not 0.0 < p < 1.0:
            raise ValueError(f"survival fraction must lie in (0, 1), got {p}")
        return self.scale * chi2_isf(p, self.dof)

    def to_dict(self) -> dict:
        return {"dof": self.dof, "scale": self.scale, "n": self.n}


# -- sampling and moments ------------------------------------------------------


def sample_sphere(n: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Uniform point(s) on the unit sphere of R^n (normalized Gaussians)."""
    if n < 1:
        raise ValueError("sphere dimension must be >= 1")
    shape = (n,) if size is None else (size, n)
    z = rng.standard_normal(shape)
    norm = np.linalg.norm(z, axis=-1, keepdims=True)
    while np.any(norm == 0):  # measure-zero, but keep the contract
        bad = (norm == 0).ravel()
        z[bad] = rng.standard_normal(z[bad].shape)
        norm = np.linalg.norm(z, axis=-1, keepdims=True)
    return z / norm


def analytic_moments(n: int, K: int = 1) -> dict[str, float]:
    """Closed-form moments of <X, Y> on S^{n-1} and std of r_1^2 with n channels."""
    if n < 1 or K < 1:
        raise ValueError("n and K must be >= 1")
    k2 = K * K
    return {
        "m2": 1.0 / n,
        "m4": 3.0 / (n * n + 2 * n),
        "gamma": 1.0 / (n * n + 2 * n),
        "std_r1sq": math.sqrt((2 * k2 - 2) / (n * k2 + 2)) / k2,
    }


@dataclass
class MomentReport:
    analytic: dict[str, float]
    empirical: dict[str, float]
    stderr: dict[str, float]
    n_samples: int
    seed: object = None
    flags: dict[str, bool] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not any(self.flags.values())

    def to_dict(self) -> dict:
        return {
            "analytic": self.analytic,
            "empirical": self.empirical,
            "stderr": self.stderr,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "flags": self.flags,
        }


def _std_stderr(x: np.ndarray) -> tuple[float, float]:
    # delta-method standard error of the sample standard deviation
    sd = float(np.std(x, ddof=1))
    if sd == 0.0:
        return sd, 0.0
    c4 = float(np.mean((x - x.mean()) ** 4))
    var_se = math.sqrt(max(c4 - sd**4, 0.0) / len(x))
    return sd, var_se / (2.0 * sd)


def r1_squared_samples(c: int, K: int, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Norm share of the first kernel cell for Y uniform on the sphere of R^{c x K^2}."""
    y = sample_sphere(c * K * K, rng, size=n_samples).reshape(n_samples, c, K * K)
    return np.sum(y[:, :, 0] ** 2, axis=1)


def validate_moments(n: int, K: int, c: int, n_samples: int, rng=None, seed=None) -> MomentReport:
    """Monte Carlo check of m2, m4, gamma (dimension n) and std(r_1^2) (c channels, kernel K)."""
    if n_samples < 1000:
        raise ValueError("validate_moments needs at least 1000 samples")
    rng = make_rng(seed) if rng is None else rng
    analytic = analytic_moments(n, K)
    analytic["std_r1sq"] = analytic_moments(c, K)["std_r1sq"]

    x = sample_sphere(n, rng, size=n_samples)
    y = sample_sphere(n, rng, size=n_samples)
    dots = np.einsum("ij,ij->i", x, y)
    d2, d4 = dots**2, dots**4
    empirical = {"m2": float(d2.mean()), "m4": float(d4.mean())}
    stderr = {
        "m2": float(d2.std(ddof=1) / math.sqrt(n_samples)),
        "m4": float(d4.std(ddof=1) / math.sqrt(n_samples)),
    }
    if n >= 2:
        g = x[:, 0] ** 2 * x[:, 1] ** 2
        empirical["gamma"] = float(g.mean())
        stderr["gamma"] = float(g.std(ddof=1) / math.sqrt(n_samples))
    r1 = r1_squared_samples(c, K, n_samples, rng)
    empirical["std_r1sq"], stderr["std_r1sq"] = _std_stderr(r1)
    empirical["mean_r1sq"] = float(r1.mean())
    stderr["mean_r1sq"] = float(r1.std(ddof=1) / math.sqrt(n_samples))
    analytic["mean_r1sq"] = 1.0 / (K * K)

    flags = {
        key: abs(empirical[key] - analytic[key]) > MC_SIGMAS * stderr[key] + 1e-12
        for key in empirical
    }
    return MomentReport(analytic, empirical, stderr, n_samples, seed=seed, flags=flags)


# -- goodness of fit -----------------------------------------------------------


def ks_distance(samples, model: NullModel) -> float:
    """Exact Kolmogorov-Smirnov statistic of sorted samples against ``model``."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1 or x.size < 100:
        raise ValueError("ks_distance needs at least 100 one-dimensional samples")
    if np.any(np.diff(x) < 0):
        raise ValueError("samples must be sorted in non-decreasing order")
    N = x.size
    F = model.cdf(x)
    i = np.arange(1, N + 1)
    return float(max(np.max(i / N - F), np.max(F - (i - 1) / N)))


def fc_coefficient_samples(n: int, n_samples: int, rng) -> np.ndarray:
    """Draws of <X, Y>^2 for X, Y independent uniform on S^{n-1}."""
    x = sample_sphere(n, rng, size=n_samples)
    y = sample_sphere(n, rng, size=n_samples)
    return np.einsum("ij,ij->i", x, y) ** 2


def conv_coefficient_samples(c: int, K: int, n_samples: int, rng) -> np.ndarray:
    """Draws of ||X^T Y||_F^2 with X on S^{c-1}, Y on the sphere of R^{c x K^2}."""
    x = sample_sphere(c, rng, size=n_samples)
    y = sample_sphere(c * K * K, rng, size=n_samples).reshape(n_samples, c, K * K)
    return np.sum(np.einsum("ic,icz->iz", x, y) ** 2, axis=1)


# -- survival validation on randomly initialized layers ---------------------------


@dataclass(frozen=True)
class LayerPair:
    """Two consecutive random layers ``(in, mid)`` then ``(mid, out)``; ``kernel`` 0 for fc."""

    in_dim: int
    mid_dim: int
    out_dim: int
    kernel: int = 0

    @property
    def null_model(self) -> NullModel:
        if self.kernel:
            return NullModel.conv(self.mid_dim, self.kernel)
        return NullModel.fc(self.mid_dim)


FC_PAIR = LayerPair(16, 64, 32)
CONV_PAIR = LayerPair(16, 64, 32, kernel=3)


def _random_weights(shape, init: str, rng) -> np.ndarray:
    if init == "normal":
        return rng.standard_normal(shape)
    if init == "uniform":
        return rng.uniform(-1.0, 1.0, size=shape)
    raise ValueError(f"unknown weight init {init!r}")


def random_pair_coefficients(pair: LayerPair, init: str, rng) -> np.ndarray:
    """Adjacency coefficients of one random initialization of ``pair``."""
    from .spectra import adjacency_between  # local import: spectra depends on stats

    if pair.kernel:
        K = pair.kernel
        w0 = _random_weights((pair.mid_dim, pair.in_dim, K, K), init, rng)
        w1 = _random_weights((pair.out_dim, pair.mid_dim, K, K), init, rng)
    else:
        w0 = _random_weights((pair.mid_dim, pair.in_dim), init, rng)
        w1 = _random_weights((pair.out_dim, pair.mid_dim), init, rng)
    return adjacency_between(w0, w1).values.ravel()


@dataclass
class SurvivalTable:
    pair: LayerPair
    init: str
    thresholds: np.ndarray
    empirical: np.ndarray
    model: np.ndarray
    n_coefficients: int
    seed: object = None

    def max_gap(self, min_model_survival: float = 1e-2) -> float:
        mask = self.model >= min_model_survival
        return float(np.max(np.abs(self.empirical[mask] - self.model[mask]), initial=0.0))

    def rows(self):
        return list(zip(self.thresholds.tolist(), self.empirical.tolist(), self.model.tolist()))


def survival_validation(
    pair: LayerPair = FC_PAIR,
    weight_init: str = "normal",
    rng=None,
    *,
    trials: int = 20,
    grid_size: int = 40,
    seed=None,
) -> SurvivalTable:
    """Empirical vs model survival of adjacency coefficients of random layer pairs.

    Coefficients from ``trials`` independent initializations are pooled; the
    log-spaced threshold grid spans model survival 0.99 down to 1e-3.
    """
    rng = make_rng(seed) if rng is None else rng
    coeffs = np.concatenate([random_pair_coefficients(pair, weight_init, rng) for _ in range(trials)])
    model = pair.null_model
    grid = np.geomspace(model.threshold(0.99), model.threshold(1e-3), grid_size)
    coeffs.sort()
    empirical = 1.0 - np.searchsorted(coeffs, grid, side="right") / coeffs.size
    return SurvivalTable(pair, weight_init, grid, empirical, np.asarray(model.sf(grid)), coeffs.size, seed)
