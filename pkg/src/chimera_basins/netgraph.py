"""Weighted coupling networks: loading, generation, summaries."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from pathlib import Path

import numpy as np

__all__ = [
    "Network",
    "NetworkSummary",
    "NetworkError",
    "NetworkParseError",
    "NetworkValidationError",
    "load_network",
    "save_network",
    "generate_two_population",
    "network_info",
]


class NetworkError(ValueError):
    pass


class NetworkParseError(NetworkError):
    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class NetworkValidationError(NetworkError):
    pass


@dataclass(frozen=True, eq=False)
class Network:
    """Weighted adjacency over ``n_nodes`` nodes.

    ``weights[i, j]`` is the strength with which node ``j`` drives node ``i``.
    The matrix is copied and made read-only on construction.
    """

    weights: np.ndarray
    directed: bool = False
    name: str = ""
    n_nodes: int = field(init=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64, copy=True)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise NetworkValidationError(f"weights must be square, got shape {w.shape}")
        n = w.shape[0]
        if n < 2:
            raise NetworkValidationError("a network needs at least 2 nodes")
        if not np.all(np.isfinite(w)):
            raise NetworkValidationError("weights must be finite")
        if np.any(w < 0):
            i, j = np.argwhere(w < 0)[0]
            raise NetworkValidationError(f"negative weight {w[i, j]} at ({i}, {j})")
        if np.any(np.diag(w) != 0):
            raise NetworkValidationError("self-loops are not allowed (nonzero diagonal)")
        if not self.directed and not np.array_equal(w, w.T):
            raise NetworkValidationError("undirected network has an asymmetric weight matrix")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "n_nodes", n)

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented
        return (
            self.directed == other.directed
            and self.name == other.name
            and np.array_equal(self.weights, other.weights)
        )

    __hash__ = None

    @cached_property
    def degrees(self):
        return self.weights.sum(axis=1)


@dataclass(frozen=True)
class NetworkSummary:
    degree_per_node: list
    is_symmetric: bool
    edge_count: int
    min_weight: float
    max_weight: float

    def as_dict(self):
        return {
            "degree_per_node": list(self.degree_per_node),
            "is_symmetric": self.is_symmetric,
            "edge_count": self.edge_count,
            "min_weight": self.min_weight,
            "max_weight": self.max_weight,
        }


def _parse_dense(lines):
    rows = []
    for lineno, raw in enumerate(lines, start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        try:
            rows.append([float(tok) for tok in text.split()])
        except ValueError as exc:
            raise NetworkParseError(str(exc), lineno) from None
        if len(rows[-1]) != len(rows[0]):
            raise NetworkParseError(
                f"expected {len(rows[0])} columns, found {len(rows[-1])}", lineno
            )
    if not rows:
        raise NetworkParseError("empty matrix file")
    w = np.array(rows, dtype=np.float64)
    if w.shape[0] != w.shape[1]:
        raise NetworkValidationError(f"matrix is not square: shape {w.shape}")
    return w


def _parse_edge_list(lines):
    directed = False
    edges = []
    seen_data = False
    for lineno, raw in enumerate(lines, start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        if not seen_data and text.lower() == "directed":
            directed = True
            continue
        seen_data = True
        toks = text.split()
        if len(toks) != 3:
            raise NetworkParseError(f"expected 'i j w', got {text!r}", lineno)
        try:
            i, j, w = int(toks[0]), int(toks[1]), float(toks[2])
        except ValueError as exc:
            raise NetworkParseError(str(exc), lineno) from None
        if i < 0 or j < 0:
            raise NetworkParseError("node indices are 0-based and nonnegative", lineno)
        if w < 0:
            raise NetworkValidationError(f"line {lineno}: negative weight {w}")
        edges.append((i, j, w, lineno))
    if not edges:
        raise NetworkParseError("edge list contains no edges")
    n = max(max(i, j) for i, j, _, _ in edges) + 1
    a = np.zeros((n, n))
    for i, j, w, lineno in edges:
        if i == j:
            raise NetworkValidationError(f"line {lineno}: self-loop on node {i}")
        a[i, j] = w
        if not directed:
            a[j, i] = w
    return a, directed


def load_network(path, format="dense", symmetrize=False, name=None):
    """Read a network from a dense-matrix or edge-list text file.

    Parameters
    ----------
    path : str or Path
    format : {"dense", "edge-list"}
    symmetrize : bool
        Replace an asymmetric dense matrix by ``(A + A.T) / 2`` instead of
        treating it as directed. Without this flag an asymmetric dense
        matrix is rejected.
    name : str, optional
        Defaults to the file stem.
    """
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    name = path.stem if name is None else name
    if format in ("dense", "dense-matrix"):
        w = _parse_dense(lines)
        if not np.array_equal(w, w.T):
            if not symmetrize:
                raise NetworkValidationError(
                    "dense matrix is not symmetric; pass symmetrize=True to use (A+A^T)/2"
                )
            w = (w + w.T) / 2
        return Network(w, directed=False, name=name)
    if format == "edge-list":
        w, directed = _parse_edge_list(lines)
        return Network(w, directed=directed, name=name)
    raise ValueError(f"unknown network format {format!r}")


def save_network(net, path, format="dense"):
    """Write ``net`` so that :func:`load_network` reproduces the weights exactly."""
    path = Path(path)
    if format in ("dense", "dense-matrix"):
        body = "\n".join(" ".join(repr(float(v)) for v in row) for row in net.weights)
        path.write_text(body + "\n", encoding="utf-8")
    elif format == "edge-list":
        out = ["directed"] if net.directed else []
        w = net.weights
        for i, j in zip(*np.nonzero(w)):
            if net.directed or i < j:
                out.append(f"{i} {j} {float(w[i, j])!r}")
        path.write_text("\n".join(out) + "\n", encoding="utf-8")
    else:
        raise ValueError(f"unknown network format {format!r}")
    return path


def generate_two_population(pop_size, intra_weight=0.6, inter_weight=0.4, drop_edge_seed=0,
                            drop_edge=True):
    """Two globally coupled populations of ``pop_size`` nodes each.

    Every intra-population pair gets ``intra_weight`` and every
    inter-population pair ``inter_weight``. With ``drop_edge`` one existing
    undirected edge, drawn uniformly with ``numpy.random.default_rng(drop_edge_seed)``,
    is then removed.
    """
    if pop_size < 2:
        raise ValueError("pop_size must be >= 2")
    if intra_weight < 0 or inter_weight < 0:
        raise ValueError("weights must be nonnegative")
    n = 2 * pop_size
    pop = np.arange(n) // pop_size
    w = np.where(pop[:, None] == pop[None, :], float(intra_weight), float(inter_weight))
    np.fill_diagonal(w, 0.0)
    if drop_edge:
        edges = [(i, j) for i, j in combinations(range(n), 2) if w[i, j] > 0]
        rng = np.random.default_rng(drop_edge_seed)
        i, j = edges[int(rng.integers(len(edges)))]
        w[i, j] = w[j, i] = 0.0
    return Network(w, directed=False, name=f"two_population_{pop_size}")


def network_info(net):
    w = net.weights
    sym = bool(np.array_equal(w, w.T))
    nz = w[w > 0]
    if sym:
        edge_count = int(np.count_nonzero(np.triu(w)))
    else:
        edge_count = int(np.count_nonzero(w))
    return NetworkSummary(
        degree_per_node=[float(v) for v in w.sum(axis=1)],
        is_symmetric=sym,
        edge_count=edge_count,
        min_weight=float(nz.min()) if nz.size else 0.0,
        max_weight=float(nz.max()) if nz.size else 0.0,
    )
