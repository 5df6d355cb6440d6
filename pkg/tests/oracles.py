"""Independent oracle implementations used only by the tests.

Each oracle recomputes a quantity by a route disjoint from the library
path it checks: factorial search instead of assignment solving, classical
Runge-Kutta instead of closed forms, scalar loops instead of vectorised
integrators, and exact moment recursions instead of Monte Carlo.
"""

import itertools
import math

import numpy as np


def scalar_euler_path(drift, x0, horizon, steps, increments, sigma=0.0):
    """Ten-line scalar explicit scheme for a single particle."""
    h = horizon / steps
    x = x0
    path = [x]
    for j in range(steps):
        x = x + drift(j * h, x) * h + sigma * increments[j]
        path.append(x)
    return path


def rk4(rhs, y0, t0, t1, steps):
    """Classical fourth-order Runge-Kutta for y' = rhs(t, y)."""
    y = np.asarray(y0, dtype=np.float64)
    h = (t1 - t0) / steps
    t = t0
    for _ in range(steps):
        k1 = rhs(t, y)
        k2 = rhs(t + h / 2, y + h / 2 * k1)
        k3 = rhs(t + h / 2, y + h / 2 * k2)
        k4 = rhs(t + h, y + h * k3)
        y = y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return y


def brute_force_wp(x, y, p):
    """W_p between equal-size uniform clouds by exhaustive permutation search."""
    x = np.atleast_2d(x)
    y = np.atleast_2d(y)
    m = x.shape[0]
    dist = np.sqrt(((x[:, None, :] - y[None, :, :]) ** 2).sum(axis=2))
    cost = dist if p == 1 else dist**2
    best = min(
        sum(cost[i, perm[i]] for i in range(m))
        for perm in itertools.permutations(range(m))
    )
    return (best / m) ** (1.0 / p)


def brute_force_w1d(xs, xw, ys, yw, p):
    """1-D W_p by dense quantile evaluation (independent of the merge code)."""
    grid = np.linspace(0.0, 1.0, 200001)[1:-1]
    cx = np.cumsum(xw)
    cy = np.cumsum(yw)
    qx = np.asarray(xs)[np.minimum(np.searchsorted(cx, grid), len(xs) - 1)]
    qy = np.asarray(ys)[np.minimum(np.searchsorted(cy, grid), len(ys) - 1)]
    return (np.mean(np.abs(qx - qy) ** p)) ** (1.0 / p)


def ou_moment_recursion(a, b_mean, sigma0, m0, v0, n_particles, steps, horizon):
    """Exact (mean, second moment, cross moment) recursion of the particle
    scheme for the linear mean-field model.

    Returns (mean, E[X_1^2], E[X_1 X_2]) after all steps; the second entry
    is the expectation of the empirical second-moment functional.
    """
    h = horizon / steps
    al = 1.0 + a * h
    be = b_mean * h
    m = m0
    s = m0 * m0 + v0
    c = m0 * m0
    inv_n = 1.0 / n_particles
    for _ in range(steps):
        g = s * inv_n + (1.0 - inv_n) * c
        s_new = al * al * s + 2.0 * al * be * g + be * be * g + sigma0 * sigma0 * h
        c_new = al * al * c + 2.0 * al * be * g + be * be * g
        m = (al + be) * m
        s, c = s_new, c_new
    return m, s, c


def ou_flow_exact(a, b_mean, sigma0, m0, v0, t):
    """Closed-form mean/variance, written independently of the library."""
    m = m0 * math.exp((a + b_mean) * t)
    if a != 0.0:
        r = sigma0 * sigma0 / (2.0 * a)
        v = (v0 + r) * math.exp(2.0 * a * t) - r
    else:
        v = v0 + sigma0 * sigma0 * t
    return m, v
