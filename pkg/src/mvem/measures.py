"""Discrete measures, Wasserstein distances and measure functionals.

All distances here are exact unless explicitly flagged otherwise:

* :func:`wasserstein_1d` integrates the quantile coupling of two weighted
  atomic measures on the line, which is the optimal transport in one
  dimension.
* :func:`wasserstein_exact` solves the assignment problem on the pairwise
  cost matrix for equal-size uniformly weighted clouds in any dimension.
* :func:`w2_to_gaussian` evaluates the quantile-coupling integral between
  an atomic measure and a normal law in closed form, using Gaussian
  partial moments per atom; no second sample cloud is involved.
* :func:`wasserstein_sliced` is a seeded Monte Carlo surrogate for large
  clouds in d > 1 and is always reported as approximate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad
from scipy.optimize import linear_sum_assignment
from scipy.special import ndtr, ndtri

from .errors import DomainError

__all__ = [
    "DiscreteMeasure",
    "moment",
    "wasserstein_1d",
    "wasserstein_exact",
    "wasserstein_sliced",
    "w2_to_gaussian",
    "w1_to_gaussian",
    "Functional",
    "LinearFunctional",
    "ComposedFunctional",
    "QuadraticFunctional",
    "functional_eval",
    "functional_on_gaussian",
    "functional_catalog",
    "make_functional",
    "EXACT_ASSIGNMENT_CAP",
]

EXACT_ASSIGNMENT_CAP = 4096

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class DiscreteMeasure:
    """Finitely supported probability measure: points (M, d), weights (M,)."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        w = np.asarray(self.weights, dtype=np.float64)
        if pts.ndim != 2:
            raise DomainError("points must be an (M, d) array")
        if w.shape != (pts.shape[0],):
            raise DomainError("weights must be one weight per point")
        if np.any(w < 0):
            raise DomainError("weights must be non-negative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise DomainError(f"weights sum to {w.sum()!r}, expected 1 within 1e-12")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points: np.ndarray) -> "DiscreteMeasure":
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if pts.shape[1] > pts.shape[0] and pts.shape[0] == 1:
            pts = pts.T  # a flat vector is a 1-D cloud, not one point in R^M
        m = pts.shape[0]
        return cls(pts, np.full(m, 1.0 / m))

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def is_uniform(self) -> bool:
        return bool(np.all(np.abs(self.weights - 1.0 / self.size) <= 1e-15))


def moment(mu: DiscreteMeasure, order: float) -> float:
    """Raw absolute moment sum_k w_k |x_k|^order (Euclidean norm in d > 1)."""
    if order < 1:
        raise DomainError(f"moment order must be >= 1, got {order}")
    norms = np.sqrt((mu.points**2).sum(axis=1))
    return float(np.sum(mu.weights * norms**order))


def _check_p(p) -> int:
    if p not in (1, 2):
        raise DomainError(f"only p in {{1, 2}} is supported, got {p}")
    return int(p)


def wasserstein_1d(mu: DiscreteMeasure, nu: DiscreteMeasure, p=2) -> float:
    """Exact W_p between two weighted atomic measures on the real line.

    Merges the two cumulative-weight staircases; on each merged interval
    both quantile functions are constant, so the transport cost is a finite
    sum of |x - y|^p weighted by interval length.
    """
    p = _check_p(p)
    if mu.dim != 1 or nu.dim != 1:
        raise DomainError("wasserstein_1d requires one-dimensional measures")
    xs, xw = _sorted_support(mu)
    ys, yw = _sorted_support(nu)
    cx = np.cumsum(xw)
    cy = np.cumsum(yw)
    cu = np.union1d(cx, cy)
    cu = cu[cu <= 1.0 + 1e-15]
    cu[-1] = 1.0
    du = np.diff(np.concatenate(([0.0], cu)))
    # right-continuous quantile: index of first cumulative weight >= u
    qx = xs[np.minimum(np.searchsorted(cx, cu - 1e-15), xs.size - 1)]
    qy = ys[np.minimum(np.searchsorted(cy, cu - 1e-15), ys.size - 1)]
    cost = np.sum(du * np.abs(qx - qy) ** p)
    return float(cost ** (1.0 / p))


def _sorted_support(mu: DiscreteMeasure):
    x = mu.points[:, 0]
    order = np.argsort(x, kind="stable")
    return x[order], mu.weights[order]


def wasserstein_exact(mu: DiscreteMeasure, nu: DiscreteMeasure, p=2) -> float:
    """Exact W_p between equal-size uniform clouds via optimal assignment.

    Solves the M x M assignment problem on the cost matrix |x_i - y_j|^p
    (shortest augmenting path, cubic worst case) and returns
    (total / M)^(1/p).  Capped at M <= 4096 points.
    """
    p = _check_p(p)
    if mu.size != nu.size:
        raise DomainError(f"cloud sizes differ: {mu.size} vs {nu.size}")
    if not (mu.is_uniform() and nu.is_uniform()):
        raise DomainError("wasserstein_exact requires uniform weights")
    if mu.dim != nu.dim:
        raise DomainError(f"dimensions differ: {mu.dim} vs {nu.dim}")
    if mu.size > EXACT_ASSIGNMENT_CAP:
        raise DomainError(
            f"exact assignment capped at {EXACT_ASSIGNMENT_CAP} points, got {mu.size};"
            " use wasserstein_sliced for larger clouds"
        )
    diff = mu.points[:, None, :] - nu.points[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    cost = dist if p == 1 else dist**2
    rows, cols = linear_sum_assignment(cost)
    total = cost[rows, cols].sum()
    return float((total / mu.size) ** (1.0 / p))


def wasserstein_sliced(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    p=2,
    n_projections: int = 64,
    seed: int = 0,
) -> float:
    """Approximate W_p via random one-dimensional projections.

    Averages the exact 1-D W_p^p over seeded uniform directions on the
    sphere and returns the p-th root.  Deterministic given the seed;
    approximate by construction and never used where exactness is claimed.
    """
    if n_projections < 1:
        raise DomainError("n_projections must be >= 1")
    p = _check_p(p)
    if mu.dim != nu.dim:
        raise DomainError(f"dimensions differ: {mu.dim} vs {nu.dim}")
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(n_projections):
        u = rng.normal(size=mu.dim)
        norm = np.sqrt((u**2).sum())
        if norm == 0.0:  # pragma: no cover - probability zero
            u = np.eye(mu.dim)[0]
            norm = 1.0
        u = u / norm
        pm = DiscreteMeasure(mu.points @ u[:, None], mu.weights)
        pn = DiscreteMeasure(nu.points @ u[:, None], nu.weights)
        total += wasserstein_1d(pm, pn, p) ** p
    return float((total / n_projections) ** (1.0 / p))


def _gaussian_segment_moments(cum: np.ndarray):
    """Partial moments of the standard normal quantile over weight segments.

    For consecutive cumulative weights u_0 = 0 < u_1 < ... < u_M = 1 and
    z_k = Phi^{-1}(u_k), returns per-segment integrals of 1, z and z^2
    against du:  I0_k = u_k - u_{k-1},
                 I1_k = phi(z_{k-1}) - phi(z_k),
                 I2_k = I0_k - (z_k phi(z_k) - z_{k-1} phi(z_{k-1})).
    """
    z = np.empty_like(cum)
    z[0] = -np.inf
    z[-1] = np.inf
    inner = cum[1:-1]
    z[1:-1] = ndtri(inner)
    finite = np.isfinite(z)
    phi = np.zeros_like(z)
    phi[finite] = np.exp(-0.5 * z[finite] ** 2) / _SQRT_2PI
    zphi = np.zeros_like(z)
    zphi[finite] = z[finite] * phi[finite]
    i0 = np.diff(cum)
    i1 = phi[:-1] - phi[1:]
    i2 = i0 - (zphi[1:] - zphi[:-1])
    return i0, i1, i2


def w2_to_gaussian(mu: DiscreteMeasure, mean: float, variance: float) -> float:
    """Exact W_2 between a 1-D atomic measure and Normal(mean, variance).

    Uses the quantile coupling: the k-th sorted atom is matched with the
    Gaussian quantile over its weight segment, and the squared cost
    integrates in closed form through Gaussian partial moments.
    """
    if mu.dim != 1:
        raise DomainError("w2_to_gaussian requires a one-dimensional measure")
    if variance < 0:
        raise DomainError(f"variance must be >= 0, got {variance}")
    xs, ws = _sorted_support(mu)
    if variance == 0.0:
        return float(np.sqrt(np.sum(ws * (xs - mean) ** 2)))
    cum = np.concatenate(([0.0], np.cumsum(ws)))
    cum[-1] = 1.0
    i0, i1, i2 = _gaussian_segment_moments(cum)
    s = math.sqrt(variance)
    c = xs - mean
    cost = np.sum(c * c * i0 - 2.0 * s * c * i1 + variance * i2)
    return float(np.sqrt(max(cost, 0.0)))


def _gaussian_cdf_antideriv(z: np.ndarray) -> np.ndarray:
    """Antiderivative of Phi on the standardised axis: z Phi(z) + phi(z)."""
    out = np.where(np.isfinite(z), z * ndtr(z) + np.exp(-0.5 * np.minimum(z * z, 1500.0)) / _SQRT_2PI, 0.0)
    return out


def w1_to_gaussian(mu: DiscreteMeasure, mean: float, variance: float) -> float:
    """Exact W_1 between a 1-D atomic measure and Normal(mean, variance).

    Evaluates the area between the two CDFs.  Between consecutive atoms the
    empirical CDF is the constant c, so each strip contributes
    int |c - Phi_s(x)| dx; the crossing point Phi_s(x) = c is explicit and
    int Phi has a closed antiderivative, making the whole integral exact.
    """
    if mu.dim != 1:
        raise DomainError("w1_to_gaussian requires a one-dimensional measure")
    if variance < 0:
        raise DomainError(f"variance must be >= 0, got {variance}")
    xs, ws = _sorted_support(mu)
    if variance == 0.0:
        return float(np.sum(ws * np.abs(xs - mean)))
    s = math.sqrt(variance)
    cum = np.cumsum(ws)
    cum[-1] = 1.0

    def int_phi(z_lo: float, z_hi: float) -> float:
        a = _gaussian_cdf_antideriv(np.array([z_lo, z_hi]))
        return float(a[1] - a[0])

    z_atoms = (xs - mean) / s
    total = 0.0
    # left tail: |0 - Phi| integrated up to the first atom
    total += s * int_phi(-np.inf, z_atoms[0])
    for k in range(xs.size - 1):
        c = cum[k]
        z_lo, z_hi = z_atoms[k], z_atoms[k + 1]
        z_cross = min(max(ndtri(c), z_lo), z_hi)
        # Phi <= c on [z_lo, z_cross], Phi >= c on [z_cross, z_hi]
        left = c * (z_cross - z_lo) - int_phi(z_lo, z_cross)
        right = int_phi(z_cross, z_hi) - c * (z_hi - z_cross)
        total += s * (left + right)
    # right tail: |1 - Phi| = integral of the survival function
    z_last = z_atoms[-1]
    # int_z^inf (1 - Phi) = phi(z) - z (1 - Phi(z))
    tail = math.exp(-0.5 * min(z_last * z_last, 1500.0)) / _SQRT_2PI - z_last * (1.0 - ndtr(z_last))
    total += s * tail
    return float(total)


# ---------------------------------------------------------------------------
# Measure functionals
# ---------------------------------------------------------------------------


class Functional:
    """A real-valued map on probability measures over R.

    Built-in families cover linear maps mu -> int F dmu, smooth
    compositions G(int F dmu) and quadratic double integrals
    mu x mu -> int int K(x, y).  All evaluate exactly on atomic measures;
    whether a user-supplied map has the smoothness the rate theory asks
    for is not checked at runtime.
    """

    functional_id: str = ""

    def on_measure(self, mu: DiscreteMeasure) -> float:
        raise NotImplementedError

    def on_gaussian(self, mean: float, variance: float) -> float:
        raise NotImplementedError


@dataclass(frozen=True)
class LinearFunctional(Functional):
    integrand: Callable[[np.ndarray], np.ndarray]
    functional_id: str = "linear"
    gaussian_expectation: Optional[Callable[[float, float], float]] = None

    def on_measure(self, mu: DiscreteMeasure) -> float:
        if mu.dim != 1:
            raise DomainError("built-in functionals act on 1-D measures")
        return float(np.sum(mu.weights * self.integrand(mu.points[:, 0])))

    def on_gaussian(self, mean: float, variance: float) -> float:
        if self.gaussian_expectation is not None:
            return float(self.gaussian_expectation(mean, variance))
        return _gaussian_quad(self.integrand, mean, variance)


@dataclass(frozen=True)
class ComposedFunctional(Functional):
    outer: Callable[[float], float] = lambda u: u
    inner: Callable[[np.ndarray], np.ndarray] = lambda x: x
    functional_id: str = "composed"
    inner_gaussian_expectation: Optional[Callable[[float, float], float]] = None

    def on_measure(self, mu: DiscreteMeasure) -> float:
        if mu.dim != 1:
            raise DomainError("built-in functionals act on 1-D measures")
        inner = float(np.sum(mu.weights * self.inner(mu.points[:, 0])))
        return float(self.outer(inner))

    def on_gaussian(self, mean: float, variance: float) -> float:
        if self.inner_gaussian_expectation is not None:
            inner = float(self.inner_gaussian_expectation(mean, variance))
        else:
            inner = _gaussian_quad(self.inner, mean, variance)
        return float(self.outer(inner))


@dataclass(frozen=True)
class QuadraticFunctional(Functional):
    kernel: Callable[[np.ndarray, np.ndarray], np.ndarray] = lambda x, y: (x - y) ** 2
    functional_id: str = "quadratic"
    gaussian_expectation: Optional[Callable[[float, float], float]] = None
    dense_cap: int = 8192
    subsample_pairs: int = 1 << 20
    subsample_seed: int = 0

    def on_measure(self, mu: DiscreteMeasure) -> float:
        if mu.dim != 1:
            raise DomainError("built-in functionals act on 1-D measures")
        x = mu.points[:, 0]
        w = mu.weights
        if mu.size <= self.dense_cap:
            kmat = self.kernel(x[:, None], x[None, :])
            return float(w @ kmat @ w)
        est, _ = self.on_measure_subsampled(mu)
        return est

    def on_measure_subsampled(self, mu: DiscreteMeasure):
        """Unbiased pair-sampled estimate of the double sum, with its
        standard error; used above the dense-evaluation cap."""
        if not mu.is_uniform():
            raise DomainError("subsampled evaluation assumes uniform weights")
        x = mu.points[:, 0]
        rng = np.random.default_rng(self.subsample_seed)
        i = rng.integers(0, mu.size, size=self.subsample_pairs)
        j = rng.integers(0, mu.size, size=self.subsample_pairs)
        vals = self.kernel(x[i], x[j])
        est = float(vals.mean())
        se = float(vals.std(ddof=1) / math.sqrt(self.subsample_pairs))
        return est, se

    def on_gaussian(self, mean: float, variance: float) -> float:
        if self.gaussian_expectation is not None:
            return float(self.gaussian_expectation(mean, variance))
        return _gaussian_double_quad(self.kernel, mean, variance)


def _gaussian_quad(f, mean: float, variance: float) -> float:
    """E[f(X)] for X ~ Normal(mean, variance) by adaptive quadrature on the
    standardised axis, absolute tolerance 1e-10."""
    if variance == 0.0:
        return float(f(np.array([mean]))[0])
    s = math.sqrt(variance)

    def integrand(z):
        return float(np.asarray(f(np.array([mean + s * z])))[0]) * math.exp(-0.5 * z * z) / _SQRT_2PI

    val, err = quad(integrand, -np.inf, np.inf, epsabs=1e-10, limit=200)
    if not math.isfinite(val) or err > 1e-6:
        raise DomainError("functional is not integrable against the Gaussian law")
    return val


def _gaussian_double_quad(kernel, mean: float, variance: float) -> float:
    if variance == 0.0:
        return float(np.asarray(kernel(np.array([mean]), np.array([mean])))[0])
    s = math.sqrt(variance)

    def inner(zy):
        def integrand(zx):
            v = float(np.asarray(kernel(np.array([mean + s * zx]), np.array([mean + s * zy])))[0])
            return v * math.exp(-0.5 * zx * zx) / _SQRT_2PI

        val, _ = quad(integrand, -np.inf, np.inf, epsabs=1e-10, limit=200)
        return val

    def outer(zy):
        return inner(zy) * math.exp(-0.5 * zy * zy) / _SQRT_2PI

    val, err = quad(outer, -np.inf, np.inf, epsabs=1e-10, limit=200)
    if not math.isfinite(val) or err > 1e-6:
        raise DomainError("kernel is not integrable against the Gaussian law")
    return val


def functional_eval(phi: Functional, mu: DiscreteMeasure) -> float:
    """Evaluate a functional exactly on an atomic measure."""
    return phi.on_measure(mu)


def functional_on_gaussian(phi: Functional, mean: float, variance: float) -> float:
    """Evaluate a functional on the normal law Normal(mean, variance),
    using closed forms where registered, otherwise quadrature."""
    return phi.on_gaussian(mean, variance)


def _make_mean() -> Functional:
    return LinearFunctional(
        integrand=lambda x: x,
        functional_id="mean",
        gaussian_expectation=lambda m, v: m,
    )


def _make_second_moment() -> Functional:
    return LinearFunctional(
        integrand=lambda x: x * x,
        functional_id="second_moment",
        gaussian_expectation=lambda m, v: m * m + v,
    )


def _make_square_of_mean() -> Functional:
    return ComposedFunctional(
        outer=lambda u: u * u,
        inner=lambda x: x,
        functional_id="square_of_mean",
        inner_gaussian_expectation=lambda m, v: m,
    )


def _make_smooth_mean() -> Functional:
    # bounded with bounded derivatives at every order
    return ComposedFunctional(
        outer=math.tanh,
        inner=lambda x: x,
        functional_id="tanh_of_mean",
        inner_gaussian_expectation=lambda m, v: m,
    )


def _make_pair_dist_sq() -> Functional:
    return QuadraticFunctional(
        kernel=lambda x, y: (x - y) ** 2,
        functional_id="pair_dist_sq",
        gaussian_expectation=lambda m, v: 2.0 * v,
    )


def _make_gauss_kernel(length_scale: float = 1.0) -> Functional:
    ell2 = length_scale * length_scale

    def kernel(x, y):
        return np.exp(-((x - y) ** 2) / (2.0 * ell2))

    def closed(m, v):
        return math.sqrt(ell2 / (ell2 + 2.0 * v))

    return QuadraticFunctional(
        kernel=kernel,
        functional_id=f"gauss_kernel[{length_scale:g}]",
        gaussian_expectation=closed,
    )


_FUNCTIONAL_FACTORIES = {
    "mean": _make_mean,
    "second_moment": _make_second_moment,
    "square_of_mean": _make_square_of_mean,
    "tanh_of_mean": _make_smooth_mean,
    "pair_dist_sq": _make_pair_dist_sq,
    "gauss_kernel": _make_gauss_kernel,
}


def functional_catalog() -> dict:
    """Mapping of built-in functional ids to a short description."""
    return {
        "mean": "mu -> int x dmu",
        "second_moment": "mu -> int x^2 dmu",
        "square_of_mean": "mu -> (int x dmu)^2",
        "tanh_of_mean": "mu -> tanh(int x dmu)",
        "pair_dist_sq": "mu -> int int (x - y)^2 dmu dmu",
        "gauss_kernel": "mu -> int int exp(-(x-y)^2 / 2 l^2) dmu dmu (param: length_scale)",
    }


def make_functional(functional_id: str, **params) -> Functional:
    try:
        factory = _FUNCTIONAL_FACTORIES[functional_id]
    except KeyError:
        raise DomainError(
            f"unknown functional {functional_id!r}; known: {sorted(_FUNCTIONAL_FACTORIES)}"
        ) from None
    return factory(**params)
