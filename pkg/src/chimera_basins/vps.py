"""Vector Pattern State fingerprints.

For every node pair ``i < j`` the optimal lag ``tau*`` maximises the
cross-correlation ``R(tau) = sum_t s_i(t) s_j(t - tau)`` of a scalar
observable, and the alignment cost is the time-averaged squared distance
between the full node trajectories at that lag. The fingerprint is all lags
followed by all ``beta``-weighted costs, in pair order (0,1), (0,2), ...,
(N-2,N-1).
"""

from __future__ import annotations

import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _kernels
from .integrate import TrajectorySet

__all__ = [
    "VpsConfig",
    "VpsVector",
    "PairAlignment",
    "DegenerateSignalError",
    "best_lag",
    "alignment_cost",
    "build_vps",
    "vps_entries",
    "vps_distance",
    "lag_preference",
    "pair_index",
    "write_vps_matrix",
    "read_vps_matrix",
    "write_vps_csv",
    "VPS_MAGIC",
]

VPS_MAGIC = b"VPS1"
# Correlation values within this fraction of max|R| of the maximum count as ties.
TIE_RTOL = 1e-12
CORR_MODES = ("circular", "linear-valid")
NORMALIZATIONS = ("raw", "zero-mean-unit-norm")


class DegenerateSignalError(ValueError):
    pass


@dataclass(frozen=True)
class VpsConfig:
    beta: float = 1.0
    max_lag: int | None = None
    corr_mode: str = "linear-valid"
    corr_normalization: str = "raw"
    method: str = "auto"

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.max_lag is not None and self.max_lag < 0:
            raise ValueError("max_lag must be >= 0")
        if self.corr_mode not in CORR_MODES:
            raise ValueError(f"corr_mode must be one of {CORR_MODES}")
        if self.corr_normalization not in NORMALIZATIONS:
            raise ValueError(f"corr_normalization must be one of {NORMALIZATIONS}")
        if self.method not in ("auto", "direct", "fft"):
            raise ValueError("method must be 'auto', 'direct' or 'fft'")

    def lag_bound(self, n_samples):
        """Resolved ``max_lag`` for series of ``n_samples`` points."""
        L = n_samples // 4 if self.max_lag is None else self.max_lag
        if L >= n_samples:
            raise ValueError(f"max_lag={L} must be below the sample count {n_samples}")
        if self.corr_mode == "linear-valid" and n_samples <= 2 * L:
            raise ValueError(f"linear-valid mode needs more than 2*max_lag={2 * L} samples")
        return L

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True, eq=False)
class VpsVector:
    n_nodes: int
    entries: np.ndarray

    @property
    def n_pairs(self):
        return self.n_nodes * (self.n_nodes - 1) // 2

    @property
    def lags(self):
        return self.entries[: self.n_pairs]

    @property
    def costs(self):
        return self.entries[self.n_pairs:]


@dataclass(frozen=True)
class PairAlignment:
    tau_star: int
    correlation_at_tau: float
    cost_at_tau: float | None = None


def pair_index(n_nodes):
    """Row/column indices of the pairs i<j in fingerprint order."""
    return np.triu_indices(n_nodes, k=1)


def lag_preference(max_lag):
    """Candidate lags ordered by tie-break priority: 0, 1, -1, 2, -2, ..."""
    order = [0]
    for k in range(1, max_lag + 1):
        order += [k, -k]
    return np.array(order, dtype=np.int64)


def _pick(R, max_lag):
    """argmax over the last axis of ``R`` (lags -L..L) with the tie rule."""
    pref = lag_preference(max_lag)
    Rp = R[..., pref + max_lag]
    top = Rp.max(axis=-1, keepdims=True)
    scale = np.abs(Rp).max(axis=-1, keepdims=True)
    winners = Rp >= top - TIE_RTOL * scale
    k = np.argmax(winners, axis=-1)
    return pref[k], np.take_along_axis(Rp, k[..., None], axis=-1)[..., 0]


def _normalize(obs, mode):
    obs = np.asarray(obs, dtype=np.float64)
    if mode == "raw":
        return obs
    centered = obs - obs.mean(axis=-1, keepdims=True)
    norm = np.sqrt((centered**2).sum(axis=-1, keepdims=True))
    if np.any(norm == 0):
        raise DegenerateSignalError("constant series cannot be normalised to unit norm")
    return centered / norm


def _windows(s, L, mode):
    """Shifted copies of ``s`` such that row ``k`` aligns with lag ``L - k``."""
    T = s.shape[-1]
    if mode == "circular":
        ext = np.concatenate([s[..., T - L:], s, s[..., :L]], axis=-1) if L else s
        return sliding_window_view(ext, T, axis=-1)
    return sliding_window_view(s, T - 2 * L, axis=-1)


def _templates(obs, L, mode):
    if mode == "circular":
        return obs
    T = obs.shape[-1]
    return obs[..., L: T - L]


def _corr_direct(obs, L, mode):
    """R for all pairs i<j, shape (P, 2L+1), lags -L..L, by explicit summation."""
    return _kernels.pair_correlation(np.ascontiguousarray(obs), L, mode == "circular")


def _corr_reference(obs, L, mode):
    """Vectorised numpy twin of :func:`_corr_direct`."""
    N = obs.shape[0]
    a = _templates(obs, L, mode)
    out = np.empty((N * (N - 1) // 2, 2 * L + 1))
    row = 0
    for i in range(N - 1):
        # windows of all later nodes: (N-i-1, 2L+1, n)
        W = _windows(obs[i + 1:], L, mode)
        block = np.einsum("jkn,n->jk", W, a[i])
        out[row: row + N - i - 1] = block[:, ::-1]
        row += N - i - 1
    return out


def _corr_fft(obs, L, mode):
    N, T = obs.shape
    iu, ju = pair_index(N)
    if mode == "circular":
        F = np.fft.rfft(obs, axis=-1)
        c = np.fft.irfft(F[iu] * np.conj(F[ju]), n=T, axis=-1)
        lags = np.arange(-L, L + 1)
        return c[:, lags % T]
    n = T - 2 * L
    nfft = 1 << int(np.ceil(np.log2(T + n)))
    a = obs[:, L: T - L]
    Fa = np.fft.rfft(a, n=nfft, axis=-1)
    Fs = np.fft.rfft(obs, n=nfft, axis=-1)
    # c[m] = sum_u a_i[u] s_j[u + m], m = L - tau
    c = np.fft.irfft(Fs[ju] * np.conj(Fa[iu]), n=nfft, axis=-1)[:, : 2 * L + 1]
    return c[:, ::-1]


def _use_fft(method, L, T):
    if method == "auto":
        return (2 * L + 1) * T > 1 << 17
    return method == "fft"


def cross_correlation(obs, cfg, max_lag=None):
    """Cross-correlation of every pair i<j over lags -L..L, shape (P, 2L+1)."""
    obs = _normalize(obs, cfg.corr_normalization)
    L = cfg.lag_bound(obs.shape[-1]) if max_lag is None else max_lag
    if _use_fft(cfg.method, L, obs.shape[-1]):
        return _corr_fft(obs, L, cfg.corr_mode)
    return _corr_direct(obs, L, cfg.corr_mode)


def best_lag(series_i, series_j, cfg):
    """Lag maximising ``sum_t s_i(t) s_j(t - tau)`` with ``|tau| <= max_lag``.

    Ties (within a relative ``1e-12`` of the peak) go to the smallest
    ``|tau|``, then to the positive lag. Vector-valued ``(d, T)`` inputs
    use the inner product ``<x_i(t), x_j(t - tau)>`` summed over components.
    """
    s_i = np.asarray(series_i, dtype=np.float64)
    s_j = np.asarray(series_j, dtype=np.float64)
    if s_i.shape != s_j.shape or s_i.ndim not in (1, 2):
        raise ValueError("best_lag needs two series of equal shape, (T,) or (d, T)")
    if s_i.ndim == 1:
        R = cross_correlation(np.stack([s_i, s_j]), cfg)[0]
    else:
        R = sum(cross_correlation(np.stack([a, b]), cfg)[0] for a, b in zip(s_i, s_j))
    L = (R.size - 1) // 2
    tau, value = _pick(R, L)
    return PairAlignment(int(tau), float(value))


def alignment_cost(traj_i, traj_j, tau, mode="linear-valid", max_lag=None):
    """Mean of ``||x_i(t) - x_j(t - tau)||^2`` over the comparison window.

    ``traj_*`` are ``(d, T)`` arrays (a 1-D array is a single component).
    In circular mode every ``t`` is used with wrapped indices. In
    linear-valid mode the window is ``[max_lag, T - max_lag)`` when
    ``max_lag`` is given (matching the correlation window) and otherwise the
    full overlap of the two series at that lag.
    """
    xi = np.atleast_2d(np.asarray(traj_i, dtype=np.float64))
    xj = np.atleast_2d(np.asarray(traj_j, dtype=np.float64))
    if xi.shape != xj.shape:
        raise ValueError(f"trajectory shapes differ: {xi.shape} vs {xj.shape}")
    T = xi.shape[-1]
    tau = int(tau)
    if mode == "circular":
        diff = xi - np.roll(xj, tau, axis=-1)
    elif mode == "linear-valid":
        if max_lag is None:
            lo, hi = max(0, tau), min(T, T + tau)
        else:
            if abs(tau) > max_lag:
                raise ValueError(f"|tau|={abs(tau)} exceeds max_lag={max_lag}")
            lo, hi = max_lag, T - max_lag
        if hi <= lo:
            raise ValueError(f"no overlap at tau={tau} for series of length {T}")
        diff = xi[:, lo:hi] - xj[:, lo - tau: hi - tau]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return float(np.mean(np.sum(diff * diff, axis=0)))


def _cost_series(samples, observable):
    """Per-node vectors compared by the alignment cost, shape (N, d', T).

    Phases are compared on the unit circle so that the cost is blind to
    whole turns accumulated by unwrapped phase variables.
    """
    if observable == "sin-phase":
        theta = samples[:, 0, :]
        return np.stack([np.cos(theta), np.sin(theta)], axis=1)
    return samples


def _pair_costs(X, taus, L, mode):
    return _kernels.pair_costs(np.ascontiguousarray(X), taus.astype(np.int64), L, mode == "circular")


def _pair_costs_reference(X, taus, L, mode):
    N, d, T = X.shape
    iu, ju = pair_index(N)
    if mode == "circular":
        t = np.arange(T)
        idx = (t[None, :] - taus[:, None]) % T
    else:
        t = np.arange(L, T - L)
        idx = t[None, :] - taus[:, None]
    costs = np.empty(iu.size)
    # bounded temporary per block of pairs
    block = max(1, (1 << 22) // max(1, d * t.size))
    for s in range(0, iu.size, block):
        sl = slice(s, s + block)
        xj = X[ju[sl][:, None], :, idx[sl]]  # (p, n, d)
        xi = X[iu[sl]][:, :, t].transpose(0, 2, 1)
        diff = xi - xj
        costs[sl] = np.mean(np.sum(diff * diff, axis=-1), axis=-1)
    return costs


def vps_entries(samples, cfg, observable="component-0"):
    """Fingerprint entries for one trajectory array shaped ``(N, d, T)``."""
    samples = np.asarray(samples, dtype=np.float64)
    N, _, T = samples.shape
    if N < 2:
        raise ValueError("a fingerprint needs at least two nodes")
    if observable == "component-0":
        obs = samples[:, 0, :]
    elif observable == "sin-phase":
        if samples.shape[1] != 1:
            raise ValueError("sin-phase observable needs node_dim=1")
        obs = np.sin(samples[:, 0, :])
    else:
        raise ValueError(f"unknown observable {observable!r}")
    L = cfg.lag_bound(T)
    R = cross_correlation(obs, cfg, max_lag=L)
    taus, _ = _pick(R, L)
    costs = _pair_costs(_cost_series(samples, observable), taus, L, cfg.corr_mode)
    return np.concatenate([taus.astype(np.float64), cfg.beta * costs])


def build_vps(traj, cfg, observable="component-0"):
    if not isinstance(traj, TrajectorySet):
        raise TypeError("build_vps expects a TrajectorySet")
    return VpsVector(traj.n_nodes, vps_entries(traj.samples, cfg, observable))


def vps_distance(e1, e2):
    a = e1.entries if isinstance(e1, VpsVector) else np.asarray(e1, dtype=np.float64)
    b = e2.entries if isinstance(e2, VpsVector) else np.asarray(e2, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"fingerprint lengths differ: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def write_vps_matrix(rows, path):
    """Binary matrix: ``b"VPS1"``, u32 rows, u32 length, then little-endian f64 row-major."""
    rows = np.ascontiguousarray(rows, dtype="<f8")
    if rows.ndim != 2:
        raise ValueError("expected a 2-D array of fingerprints")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(VPS_MAGIC + struct.pack("<II", *rows.shape))
        rows.tofile(fh)
    tmp.replace(path)
    return path


def read_vps_matrix(path):
    with Path(path).open("rb") as fh:
        head = fh.read(12)
        if len(head) != 12 or head[:4] != VPS_MAGIC:
            raise ValueError(f"{path}: not a VPS1 matrix file")
        m, n = struct.unpack("<II", head[4:])
        data = np.fromfile(fh, dtype="<f8", count=m * n)
        extra = fh.read(1)
    if data.size != m * n or extra:
        raise ValueError(f"{path}: expected {m * n} values")
    return data.reshape(m, n).astype(np.float64, copy=False)


def write_vps_csv(rows, path):
    rows = np.asarray(rows, dtype=np.float64)
    n_pairs = rows.shape[1] // 2
    header = ",".join([f"tau{k}" for k in range(n_pairs)] + [f"cost{k}" for k in range(n_pairs)])
    np.savetxt(path, rows, delimiter=",", header=header, comments="", fmt="%.17g")
    return Path(path)
