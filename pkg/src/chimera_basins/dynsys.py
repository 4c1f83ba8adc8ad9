"""Right-hand sides and step maps of the networked systems.

All states are flat node-major vectors: node ``i`` occupies
``state[..., i*d:(i+1)*d]``. Every function here also accepts a leading
batch axis, so a ``(M, N*d)`` array advances ``M`` initial conditions at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .netgraph import Network

__all__ = [
    "HRParams",
    "ChemicalParams",
    "KuramotoParams",
    "HenonParams",
    "SystemModel",
    "WrongSystemError",
    "HR_FULL",
    "HR_SMALLNET",
    "CHEMICAL_FULL",
    "hr_local_field",
    "diffusive_coupling",
    "electrochemical_coupling",
    "sigmoid",
    "network_vector_field",
    "henon_network_step",
    "make_model",
    "KINDS",
]

KINDS = ("hr-diffusive", "hr-electrochemical", "kuramoto", "henon")
NODE_DIM = {"hr-diffusive": 3, "hr-electrochemical": 3, "kuramoto": 1, "henon": 2}


class WrongSystemError(TypeError):
    """Operation requested on a system kind that does not support it."""


@dataclass(frozen=True)
class HRParams:
    a: float = 1.0
    b: float = 3.0
    c: float = 1.0
    d: float = 5.0
    s: float = 4.0
    r: float = 0.005
    x_R: float = -1.6
    I: float = 3.25
    sigma: float = 0.5

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError("HR time-scale r must be positive")
        if self.sigma < 0:
            raise ValueError("coupling strength sigma must be nonnegative")


@dataclass(frozen=True)
class ChemicalParams:
    alpha: float = 0.03
    V_syn: float = 2.0
    theta_syn: float = -0.25
    lam: float = 10.0

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("sigmoid steepness lam must be positive")


@dataclass(frozen=True)
class KuramotoParams:
    sigma: float = 1.0
    gamma: float = 0.025
    alpha: float = field(init=False)

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("coupling strength sigma must be nonnegative")
        object.__setattr__(self, "alpha", math.pi / 2 - self.gamma)


@dataclass(frozen=True)
class HenonParams:
    p: float = 1.44
    b_map: float = 0.164
    sigma: float = 0.8

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.p, self.b_map, self.sigma)):
            raise ValueError("Henon parameters must be finite")


# DTI brain-network regime (electrical + chemical coupling).
HR_FULL = HRParams()
CHEMICAL_FULL = ChemicalParams()
# Small synthetic network regime with diffusive coupling.
HR_SMALLNET = HRParams(x_R=-0.5 * (1 + math.sqrt(5)), I=3.27, r=0.017, sigma=0.0004)


@dataclass(frozen=True)
class SystemModel:
    kind: str
    params: object
    network: Network
    chemical: ChemicalParams | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown system kind {self.kind!r}; expected one of {KINDS}")
        expected = {
            "hr-diffusive": HRParams,
            "hr-electrochemical": HRParams,
            "kuramoto": KuramotoParams,
            "henon": HenonParams,
        }[self.kind]
        if not isinstance(self.params, expected):
            raise TypeError(f"{self.kind} needs {expected.__name__}, got {type(self.params).__name__}")
        if self.kind == "hr-electrochemical" and self.chemical is None:
            object.__setattr__(self, "chemical", ChemicalParams())

    @property
    def node_dim(self):
        return NODE_DIM[self.kind]

    @property
    def n_nodes(self):
        return self.network.n_nodes

    @property
    def state_size(self):
        return self.n_nodes * self.node_dim

    @property
    def continuous(self):
        return self.kind != "henon"

    def with_params(self, **changes):
        return replace(self, params=replace(self.params, **changes))


def make_model(kind, network, **overrides):
    """Build a :class:`SystemModel` with default parameters for ``kind``.

    ``overrides`` go to the parameter record; for ``hr-electrochemical`` keys
    belonging to :class:`ChemicalParams` are routed there.
    """
    if kind in ("hr-diffusive", "hr-electrochemical"):
        chem_keys = {"alpha", "V_syn", "theta_syn", "lam"}
        chem = {k: overrides.pop(k) for k in list(overrides) if k in chem_keys}
        params = HRParams(**overrides)
        chemical = ChemicalParams(**chem) if kind == "hr-electrochemical" else None
        if chem and chemical is None:
            raise ValueError(f"chemical parameters given for {kind}")
        return SystemModel(kind, params, network, chemical)
    if kind == "kuramoto":
        return SystemModel(kind, KuramotoParams(**overrides), network)
    if kind == "henon":
        return SystemModel(kind, HenonParams(**overrides), network)
    raise ValueError(f"unknown system kind {kind!r}")


def hr_local_field(node_state, p):
    """Uncoupled Hindmarsh-Rose field; ``node_state[..., :3]`` is (x, y, z)."""
    u = np.asarray(node_state, dtype=np.float64)
    x, y, z = u[..., 0], u[..., 1], u[..., 2]
    out = np.empty(u.shape[:-1] + (3,))
    out[..., 0] = y - p.a * x**3 + p.b * x**2 - z + p.I
    out[..., 1] = p.c - p.d * x**2 - y
    out[..., 2] = p.r * (p.s * (x - p.x_R) - z)
    return out


def diffusive_coupling(state_i, state_j):
    u = np.asarray(state_i, dtype=np.float64)
    v = np.asarray(state_j, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"state shapes differ: {u.shape} vs {v.shape}")
    return v - u


def sigmoid(x, theta, lam):
    # exp overflow at very negative x saturates cleanly to 0
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-lam * (np.asarray(x) - theta)))


def electrochemical_coupling(state_i, state_j, p, c):
    """Electrical coupling through y plus chemical synapse on x.

    ``p`` is accepted for signature symmetry with the other coupling
    functions; the chemical term depends only on ``c``.
    """
    u = np.asarray(state_i, dtype=np.float64)
    v = np.asarray(state_j, dtype=np.float64)
    out = np.zeros(np.broadcast(u, v).shape)
    out[..., 0] = -c.alpha * (u[..., 0] - c.V_syn) * sigmoid(v[..., 0], c.theta_syn, c.lam)
    out[..., 1] = v[..., 1] - u[..., 1]
    return out


def _pairwise_sum(A, values):
    """sum_j A_ij (v_j - v_i) for values shaped (..., N); exact zero on equal values."""
    diff = values[..., None, :] - values[..., :, None]
    return np.einsum("ij,...ij->...i", A, diff)


def network_vector_field(model, state):
    """Time derivative of the full network state (continuous systems only)."""
    if not model.continuous:
        raise WrongSystemError("Henon networks are maps and have no vector field")
    z = np.asarray(state, dtype=np.float64)
    if z.shape[-1] != model.state_size:
        raise ValueError(f"state length {z.shape[-1]} != {model.state_size}")
    A = model.network.weights
    N, d = model.n_nodes, model.node_dim
    nodes = z.reshape(z.shape[:-1] + (N, d))
    p = model.params

    if model.kind == "kuramoto":
        theta = nodes[..., 0]
        phase = theta[..., None, :] - theta[..., :, None] - p.alpha
        dtheta = p.sigma * np.einsum("ij,...ij->...i", A, np.sin(phase))
        return dtheta.reshape(z.shape)

    out = hr_local_field(nodes, p)
    if model.kind == "hr-diffusive":
        for comp in range(3):
            out[..., comp] += p.sigma * _pairwise_sum(A, nodes[..., comp])
    else:
        c = model.chemical
        x = nodes[..., 0]
        drive = sigmoid(x, c.theta_syn, c.lam) @ A.T
        out[..., 0] += p.sigma * (-c.alpha) * (x - c.V_syn) * drive
        out[..., 1] += p.sigma * _pairwise_sum(A, nodes[..., 1])
    return out.reshape(z.shape)


def henon_network_step(model, state):
    """One iterate of the diffusively coupled Henon network."""
    if model.kind != "henon":
        raise WrongSystemError(f"henon_network_step needs a henon model, got {model.kind}")
    z = np.asarray(state, dtype=np.float64)
    if z.shape[-1] != model.state_size:
        raise ValueError(f"state length {z.shape[-1]} != {model.state_size}")
    p = model.params
    A = model.network.weights
    nodes = z.reshape(z.shape[:-1] + (model.n_nodes, 2))
    x, y = nodes[..., 0], nodes[..., 1]
    fx = 1.0 - p.p * x * x + y
    out = np.empty_like(nodes)
    if p.sigma == 0:
        out[..., 0] = fx
    else:
        out[..., 0] = fx + p.sigma * (fx @ A.T - fx * model.network.degrees)
    out[..., 1] = p.b_map * x
    return out.reshape(z.shape)
