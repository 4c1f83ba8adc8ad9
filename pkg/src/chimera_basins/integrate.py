"""Fixed-step trajectory generation with transient discarding."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .dynsys import henon_network_step, network_vector_field

__all__ = [
    "IntegrationConfig",
    "TrajectorySet",
    "DivergenceError",
    "DIVERGENCE_BOUND",
    "integrate_ode",
    "iterate_map",
    "integrate",
    "integrate_batch",
    "observable_series",
    "write_trajectory_csv",
]

DIVERGENCE_BOUND = 1e6
MIN_SAMPLES = 32


class DivergenceError(ArithmeticError):
    """A state component left the divergence bound or became non-finite."""

    def __init__(self, message, time=None, step=None):
        super().__init__(message)
        self.time = time
        self.step = step


@dataclass(frozen=True)
class IntegrationConfig:
    """Step size, transient and analysis window.

    Continuous systems use ``dt``, ``transient_time`` and ``window_time``;
    maps use ``transient_steps`` and ``window_steps``. Only every
    ``sample_stride``-th step of the window is stored.
    """

    dt: float = 0.01
    transient_time: float = 500.0
    window_time: float = 500.0
    transient_steps: int = 5000
    window_steps: int = 2048
    sample_stride: int = 10

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.transient_time < 0 or self.transient_steps < 0:
            raise ValueError("transient must be nonnegative")
        if not self.window_time > 0 or self.window_steps <= 0:
            raise ValueError("window must be positive")
        if self.sample_stride < 1:
            raise ValueError("sample_stride must be >= 1")

    @classmethod
    def for_kind(cls, kind, **overrides):
        base = {
            "hr-diffusive": dict(dt=0.01, transient_time=500.0, window_time=500.0, sample_stride=10),
            "hr-electrochemical": dict(dt=0.01, transient_time=500.0, window_time=500.0, sample_stride=10),
            "kuramoto": dict(dt=0.01, transient_time=200.0, window_time=200.0, sample_stride=10),
            "henon": dict(transient_steps=5000, window_steps=2048, sample_stride=1),
        }[kind]
        base.update(overrides)
        return cls(**base)

    def as_dict(self):
        return asdict(self)

    def step_counts(self, continuous):
        """(transient steps, window steps) in integrator steps."""
        if continuous:
            n0 = _as_steps(self.transient_time, self.dt, "transient_time")
            n1 = _as_steps(self.window_time, self.dt, "window_time")
        else:
            n0, n1 = self.transient_steps, self.window_steps
        if n1 % self.sample_stride:
            raise ValueError(f"window of {n1} steps is not a multiple of sample_stride {self.sample_stride}")
        if n1 // self.sample_stride < MIN_SAMPLES:
            raise ValueError(f"window stores {n1 // self.sample_stride} samples, need >= {MIN_SAMPLES}")
        return n0, n1

    def n_samples(self, continuous):
        return self.step_counts(continuous)[1] // self.sample_stride

    def sample_dt(self, continuous):
        return (self.dt if continuous else 1.0) * self.sample_stride


def _as_steps(duration, dt, label):
    n = round(duration / dt)
    if abs(n * dt - duration) > 1e-9 * max(1.0, abs(duration)):
        raise ValueError(f"{label}={duration} is not a whole number of steps of dt={dt}")
    return int(n)


@dataclass(frozen=True, eq=False)
class TrajectorySet:
    """Post-transient samples of one initial condition, ``samples[node, component, time]``."""

    n_nodes: int
    node_dim: int
    sample_dt: float
    samples: np.ndarray
    origin: np.ndarray
    t0: float = 0.0

    @property
    def n_samples(self):
        return self.samples.shape[-1]

    @property
    def times(self):
        return self.t0 + self.sample_dt * np.arange(1, self.n_samples + 1)


def _rk4_step(model, z, h):
    k1 = network_vector_field(model, z)
    k2 = network_vector_field(model, z + 0.5 * h * k1)
    k3 = network_vector_field(model, z + 0.5 * h * k2)
    k4 = network_vector_field(model, z + h * k3)
    return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_batch(model, inits, cfg, engine="compiled"):
    """Advance a batch of initial conditions, shape ``(M, N*d)``.

    Returns ``(samples, diverged, blowup)`` where ``samples`` has shape
    ``(M, N, d, T)``, ``diverged`` flags initial conditions that left the
    divergence bound and ``blowup`` holds the step index at which that
    happened (``-1`` otherwise). Samples of diverged rows are NaN.

    ``engine="compiled"`` runs the numba loops, which treat each initial
    condition independently; ``engine="numpy"`` steps the whole batch with
    the vectorised reference fields in :mod:`.dynsys`.
    """
    z = np.array(inits, dtype=np.float64, ndmin=2, copy=True)
    M, S = z.shape
    if S != model.state_size:
        raise ValueError(f"initial state length {S} != {model.state_size}")
    n0, n1 = cfg.step_counts(model.continuous)
    if engine == "compiled":
        kind, prm, indptr, indices, data = _kernels.pack(model)
        return _kernels.run_batch(kind, prm, indptr, indices, data, z, model.n_nodes,
                                  model.node_dim, n0, n1, cfg.sample_stride,
                                  float(cfg.dt), DIVERGENCE_BOUND)
    if engine != "numpy":
        raise ValueError(f"unknown engine {engine!r}")
    stride = cfg.sample_stride
    T = n1 // stride
    N, d = model.n_nodes, model.node_dim
    samples = np.empty((M, N, d, T))
    diverged = np.zeros(M, dtype=bool)
    blowup = np.full(M, -1, dtype=np.int64)
    if model.continuous:
        h = cfg.dt

        def advance(state):
            return _rk4_step(model, state, h)
    else:

        def advance(state):
            return henon_network_step(model, state)

    with np.errstate(over="ignore", invalid="ignore"):
        bad = ~np.all(np.abs(z) <= DIVERGENCE_BOUND, axis=1)
        if bad.any():
            diverged |= bad
            blowup[bad] = 0
            z[bad] = 0.0
        for step in range(1, n0 + n1 + 1):
            z = advance(z)
            bad = ~np.all(np.abs(z) <= DIVERGENCE_BOUND, axis=1)
            if bad.any():
                new = bad & ~diverged
                blowup[new] = step
                diverged |= bad
                z[bad] = 0.0
            k = step - n0
            if k > 0 and k % stride == 0:
                samples[..., k // stride - 1] = z.reshape(M, N, d)
    samples[diverged] = np.nan
    return samples, diverged, blowup


def _single(model, init, cfg, engine):
    init = np.asarray(init, dtype=np.float64)
    if init.ndim != 1:
        raise ValueError("expected a single flat initial state")
    samples, diverged, blowup = integrate_batch(model, init[None, :], cfg, engine)
    if diverged[0]:
        step = int(blowup[0])
        t = step * cfg.dt if model.continuous else float(step)
        raise DivergenceError(f"trajectory diverged at step {step} (t={t:g})", time=t, step=step)
    n0, _ = cfg.step_counts(model.continuous)
    t0 = n0 * cfg.dt if model.continuous else float(n0)
    return TrajectorySet(
        n_nodes=model.n_nodes,
        node_dim=model.node_dim,
        sample_dt=cfg.sample_dt(model.continuous),
        samples=samples[0],
        origin=init.copy(),
        t0=t0,
    )


def integrate_ode(model, init, cfg, engine="compiled"):
    """Classical RK4 from t=0 to transient+window, keeping only the window."""
    if not model.continuous:
        raise ValueError(f"integrate_ode needs a continuous system, got {model.kind}")
    return _single(model, init, cfg, engine)


def iterate_map(model, init, cfg, engine="compiled"):
    if model.continuous:
        raise ValueError(f"iterate_map needs a map, got {model.kind}")
    return _single(model, init, cfg, engine)


def integrate(model, init, cfg, engine="compiled"):
    if model.continuous:
        return integrate_ode(model, init, cfg, engine)
    return iterate_map(model, init, cfg, engine)


def observable_series(traj, kind="component-0"):
    """Scalar series per node used for lag estimation, shape ``(N, T)``.

    Accepts a :class:`TrajectorySet` or a raw ``(..., N, d, T)`` sample array.
    """
    samples = traj.samples if isinstance(traj, TrajectorySet) else np.asarray(traj)
    if kind == "component-0":
        return samples[..., 0, :]
    if kind == "sin-phase":
        if samples.shape[-2] != 1:
            raise ValueError("sin-phase observable needs a phase model (node_dim=1)")
        return np.sin(samples[..., 0, :])
    raise ValueError(f"unknown observable {kind!r}")


def write_trajectory_csv(traj, path):
    path = Path(path)
    d = traj.node_dim
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "node"] + [f"c{c}" for c in range(d)])
        for k, t in enumerate(traj.times):
            for i in range(traj.n_nodes):
                w.writerow([repr(float(t)), i] + [repr(float(v)) for v in traj.samples[i, :, k]])
    return path
