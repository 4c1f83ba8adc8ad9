"""Independent reference implementations used as test oracles.

Everything here is written as plainly as possible (explicit loops, no
vectorisation tricks) so it can be checked by eye against the model
definitions.
"""

import math

import numpy as np


def hr_field_loop(x, y, z, p):
    return (
        y - p.a * x**3 + p.b * x**2 - z + p.I,
        p.c - p.d * x**2 - y,
        p.r * (p.s * (x - p.x_R) - z),
    )


def network_field_loop(model, state):
    """Coupled vector field evaluated one term at a time."""
    A = model.network.weights
    N = A.shape[0]
    out = [0.0] * len(state)
    if model.kind == "kuramoto":
        p = model.params
        for i in range(N):
            acc = 0.0
            for j in range(N):
                acc += A[i, j] * math.sin(state[j] - state[i] - p.alpha)
            out[i] = p.sigma * acc
        return np.array(out)
    p = model.params
    for i in range(N):
        x, y, z = state[3 * i: 3 * i + 3]
        f = hr_field_loop(x, y, z, p)
        h = [0.0, 0.0, 0.0]
        for j in range(N):
            xj, yj, zj = state[3 * j: 3 * j + 3]
            if model.kind == "hr-diffusive":
                terms = (xj - x, yj - y, zj - z)
            else:
                c = model.chemical
                sig = 1.0 / (1.0 + math.exp(-c.lam * (xj - c.theta_syn)))
                terms = (-c.alpha * (x - c.V_syn) * sig, yj - y, 0.0)
            for q in range(3):
                h[q] += A[i, j] * terms[q]
        for q in range(3):
            out[3 * i + q] = f[q] + p.sigma * h[q]
    return np.array(out)


def henon_step_loop(model, state):
    A = model.network.weights
    p = model.params
    N = A.shape[0]
    fx = [1.0 - p.p * state[2 * i] ** 2 + state[2 * i + 1] for i in range(N)]
    out = []
    for i in range(N):
        acc = 0.0
        for j in range(N):
            acc += A[i, j] * (fx[j] - fx[i])
        out += [fx[i] + p.sigma * acc, p.b_map * state[2 * i]]
    return np.array(out)


def rk4_loop(f, z, dt, n):
    for _ in range(n):
        k1 = f(z)
        k2 = f(z + dt / 2 * k1)
        k3 = f(z + dt / 2 * k2)
        k4 = f(z + dt * k3)
        z = z + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return z


def xcorr_loop(a, b, max_lag, circular):
    """R(tau) = sum_t a(t) b(t - tau) for tau in [-max_lag, max_lag]."""
    T = len(a)
    out = {}
    for tau in range(-max_lag, max_lag + 1):
        acc = 0.0
        ts = range(T) if circular else range(max_lag, T - max_lag)
        for t in ts:
            acc += a[t] * b[(t - tau) % T]
        out[tau] = acc
    return out


def pick_lag(scores, maximise=True, rtol=1e-12):
    """Best lag with ties broken by smallest |tau|, then positive tau."""
    vals = np.array(list(scores.values()))
    best = vals.max() if maximise else vals.min()
    tol = rtol * max(np.abs(vals).max(), 1e-300)
    tied = [t for t, v in scores.items() if abs(v - best) <= tol]
    return min(tied, key=lambda t: (abs(t), -t))


def circular_cost_loop(X, Y, tau):
    """Mean over t of ||X[:, t] - Y[:, (t - tau) mod T]||^2."""
    d, T = X.shape
    acc = 0.0
    for t in range(T):
        u = (t - tau) % T
        acc += sum((X[c, t] - Y[c, u]) ** 2 for c in range(d))
    return acc / T


def sierpinski(n=256, depth=8):
    """Rasterised Sierpinski triangle: cell (r, c) is set iff (r & c) == 0.

    On an n = 2**depth grid this is the depth-``depth`` Pascal-triangle mod 2
    construction, a discrete Sierpinski gasket of dimension log 3 / log 2.
    """
    assert n == 2**depth
    r, c = np.indices((n, n))
    return (r & c) == 0


def random_periodic_pair(rng, T, d=3, harmonics=6):
    """Zero-mean periodic d-vector signals built on shared random integer harmonics.

    Both signals use the same frequencies per component with independent
    amplitudes and phases, so their cross-correlation varies with the lag.
    """
    t = np.arange(T)
    X = np.zeros((d, T))
    Y = np.zeros((d, T))
    for c in range(d):
        for k in rng.choice(np.arange(1, T // 4), size=harmonics, replace=False):
            for M in (X, Y):
                M[c] += rng.normal() * np.cos(2 * np.pi * k * t / T + rng.uniform(0, 2 * np.pi))
    X -= X.mean(axis=1, keepdims=True)
    Y -= Y.mean(axis=1, keepdims=True)
    return X, Y
