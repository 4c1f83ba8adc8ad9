"""Initial-condition slices, parallel fingerprint sweeps, k-means basins."""

from __future__ import annotations

import hashlib
import json
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .integrate import integrate_batch
from .vps import DegenerateSignalError, vps_entries

__all__ = [
    "SliceSpec",
    "VpsMatrix",
    "Clustering",
    "BasinMap",
    "sample_slice",
    "sweep",
    "kmeans_cluster",
    "elbow_curve",
    "elbow_k",
    "select_k_elbow",
    "build_basin_map",
    "write_label_grid",
    "read_label_grid",
    "default_observable",
    "labels_to_grid",
    "model_description",
    "SENTINEL",
    "distinct_rows",
]

SENTINEL = -1


@dataclass(frozen=True, eq=False)
class SliceSpec:
    """A 2-D plane through initial-condition space.

    ``axis1``/``axis2`` are ``(node, component)`` pairs. Grid point
    ``(ix, iy)`` sits at ``range1[0] + ix*(range1[1]-range1[0])/(nx-1)`` on
    axis1 and likewise on axis2; flattened order is row-major with axis2
    varying fastest.
    """

    axis1: tuple
    axis2: tuple
    range1: tuple
    range2: tuple
    resolution: tuple
    base_state: np.ndarray
    node_dim: int = 1

    def __post_init__(self):
        for name in ("axis1", "axis2", "range1", "range2", "resolution"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "base_state", np.array(self.base_state, dtype=np.float64))
        if self.axis1 == self.axis2:
            raise ValueError("slice axes must differ")
        for r in (self.range1, self.range2):
            if not r[0] < r[1]:
                raise ValueError(f"range {r} must have min < max")
        nx, ny = self.resolution
        if nx < 2 or ny < 2:
            raise ValueError("resolution must be at least 2 x 2")
        if self.node_dim < 1 or self.base_state.size % self.node_dim:
            raise ValueError("base_state length must be a multiple of node_dim")

    @property
    def nx(self):
        return int(self.resolution[0])

    @property
    def ny(self):
        return int(self.resolution[1])

    @property
    def n_points(self):
        return self.nx * self.ny

    @property
    def cell_size(self):
        return (
            (self.range1[1] - self.range1[0]) / (self.nx - 1),
            (self.range2[1] - self.range2[0]) / (self.ny - 1),
        )

    def as_dict(self):
        return {
            "axis1": list(self.axis1),
            "axis2": list(self.axis2),
            "range1": list(self.range1),
            "range2": list(self.range2),
            "resolution": list(self.resolution),
            "base_state": self.base_state.tolist(),
            "node_dim": self.node_dim,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["axis1"], d["axis2"], d["range1"], d["range2"], d["resolution"],
                   d["base_state"], d.get("node_dim", 1))


@dataclass(eq=False)
class VpsMatrix:
    rows: np.ndarray
    slice: SliceSpec
    diverged: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        self.diverged = np.asarray(self.diverged, dtype=bool)
        if self.rows.ndim != 2 or self.rows.shape[0] != self.slice.n_points:
            raise ValueError(f"expected {self.slice.n_points} rows, got shape {self.rows.shape}")
        if self.diverged.shape != (self.rows.shape[0],):
            raise ValueError("diverged flag length must match the row count")

    @property
    def valid(self):
        return ~self.diverged

    def digest(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.rows, dtype="<f8").tobytes())
        h.update(self.diverged.tobytes())
        return h.hexdigest()


@dataclass(eq=False)
class Clustering:
    k: int
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    seed: int
    restarts: int
    n_iter: int = 0


@dataclass(eq=False)
class BasinMap:
    label_grid: np.ndarray
    clustering: Clustering | None
    slice: SliceSpec
    provenance: dict = field(default_factory=dict)


def default_observable(model):
    return "sin-phase" if model.kind == "kuramoto" else "component-0"


def sample_slice(spec, start=0, stop=None):
    """Initial states of the slice grid, shape ``(nx*ny, len(base_state))``.

    ``start``/``stop`` select a contiguous run of grid points in flattened
    order without materialising the rest.
    """
    base = spec.base_state
    flat = []
    for node, comp in (spec.axis1, spec.axis2):
        if not 0 <= comp < spec.node_dim:
            raise IndexError(f"component {comp} out of range for node_dim {spec.node_dim}")
        i = node * spec.node_dim + comp
        if node < 0 or i >= base.size:
            raise IndexError(f"node {node} out of range for a state of {base.size} entries")
        flat.append(i)
    stop = spec.n_points if stop is None else min(stop, spec.n_points)
    lin = np.arange(start, stop)
    ix, iy = np.divmod(lin, spec.ny)
    g1 = np.linspace(spec.range1[0], spec.range1[1], spec.nx)
    g2 = np.linspace(spec.range2[0], spec.range2[1], spec.ny)
    states = np.tile(base, (lin.size, 1))
    states[:, flat[0]] = g1[ix]
    states[:, flat[1]] = g2[iy]
    return states


# ---------------------------------------------------------------- sweep

def model_description(model):
    """JSON-able description of a model, used for provenance and checkpoint keys."""
    w = np.ascontiguousarray(model.network.weights, dtype="<f8")
    return {
        "kind": model.kind,
        "params": asdict(model.params),
        "chemical": asdict(model.chemical) if model.chemical is not None else None,
        "network": {
            "name": model.network.name,
            "n_nodes": model.n_nodes,
            "directed": model.network.directed,
            "sha256": hashlib.sha256(w.tobytes()).hexdigest(),
        },
    }


def _sweep_key(model, spec, icfg, vcfg, observable, chunk_size):
    doc = {
        "model": model_description(model),
        "slice": spec.as_dict(),
        "integration": icfg.as_dict(),
        "vps": vcfg.as_dict(),
        "observable": observable,
        "chunk_size": chunk_size,
    }
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


_JOB = {}


def _init_job(job):
    _JOB.clear()
    _JOB.update(job)


def _run_chunk(index):
    job = _JOB
    lo = index * job["chunk_size"]
    hi = min(lo + job["chunk_size"], job["spec"].n_points)
    states = sample_slice(job["spec"], lo, hi)
    samples, diverged, _ = integrate_batch(job["model"], states, job["icfg"])
    rows = np.full((hi - lo, job["row_len"]), np.inf)
    for m in range(hi - lo):
        if diverged[m]:
            continue
        try:
            rows[m] = vps_entries(samples[m], job["vcfg"], job["observable"])
        except DegenerateSignalError:
            diverged[m] = True
    return index, rows, diverged


class _Checkpoint:
    def __init__(self, root, key, n_chunks):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        manifest = self.root / "manifest.json"
        if manifest.exists():
            old = json.loads(manifest.read_text())
            if old.get("key") != key:
                raise ValueError(f"checkpoint in {self.root} belongs to a different sweep configuration")
        else:
            _atomic_write_text(manifest, json.dumps({"key": key, "n_chunks": n_chunks}, indent=2))

    def path(self, index):
        return self.root / f"chunk_{index:06d}.npz"

    def load(self, index):
        p = self.path(index)
        if not p.exists():
            return None
        with np.load(p) as z:
            return z["rows"], z["diverged"]

    def save(self, index, rows, diverged):
        tmp = self.path(index).with_suffix(".tmp")
        with tmp.open("wb") as fh:
            np.savez(fh, rows=rows, diverged=diverged)
        os.replace(tmp, self.path(index))


def _atomic_write_text(path, text):
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def sweep(model, spec, icfg, vcfg, workers=1, observable=None, chunk_size=256,
          checkpoint_dir=None, progress=None):
    """Fingerprint every initial condition of ``spec``.

    The slice is cut into fixed chunks of ``chunk_size`` initial conditions
    which are integrated as one batch each; the result is therefore
    independent of ``workers``. Completed chunks are stored in
    ``checkpoint_dir`` and skipped when the sweep is run again.
    Diverged or degenerate initial conditions get rows of ``+inf`` and are
    flagged in ``VpsMatrix.diverged``.
    """
    if spec.node_dim != model.node_dim:
        raise ValueError(f"slice node_dim {spec.node_dim} != model node_dim {model.node_dim}")
    if spec.base_state.size != model.state_size:
        raise ValueError(f"base_state has {spec.base_state.size} entries, model needs {model.state_size}")
    if chunk_size < 1:
        raise ValueError("chunk_size must be >= 1")
    observable = observable or default_observable(model)
    sample_slice(spec, 0, 1)  # validates axes before any work
    M = spec.n_points
    row_len = model.n_nodes * (model.n_nodes - 1)
    n_chunks = -(-M // chunk_size)
    job = dict(model=model, spec=spec, icfg=icfg, vcfg=vcfg, observable=observable,
               chunk_size=chunk_size, row_len=row_len)
    key = _sweep_key(model, spec, icfg, vcfg, observable, chunk_size)
    ckpt = _Checkpoint(checkpoint_dir, key, n_chunks) if checkpoint_dir is not None else None

    rows = np.empty((M, row_len))
    diverged = np.zeros(M, dtype=bool)
    todo = []
    for c in range(n_chunks):
        got = ckpt.load(c) if ckpt else None
        if got is None:
            todo.append(c)
        else:
            lo = c * chunk_size
            rows[lo: lo + len(got[1])], diverged[lo: lo + len(got[1])] = got
    done = n_chunks - len(todo)

    def collect(result):
        nonlocal done
        c, r, dv = result
        lo = c * chunk_size
        rows[lo: lo + len(dv)] = r
        diverged[lo: lo + len(dv)] = dv
        if ckpt:
            ckpt.save(c, r, dv)
        done += 1
        if progress is not None:
            progress(done, n_chunks)

    if workers <= 1 or len(todo) <= 1:
        _init_job(job)
        for c in todo:
            collect(_run_chunk(c))
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_job, initargs=(job,)) as ex:
            for result in ex.map(_run_chunk, todo):
                collect(result)

    provenance = {
        "model": model_description(model),
        "slice": spec.as_dict(),
        "integration": icfg.as_dict(),
        "vps": vcfg.as_dict(),
        "observable": observable,
        "chunk_size": chunk_size,
        "n_diverged": int(diverged.sum()),
        "diverged_indices": np.flatnonzero(diverged).tolist(),
        "sweep_key": key,
    }
    return VpsMatrix(rows, spec, diverged, provenance)


# ---------------------------------------------------------------- k-means

def _sq_dist(X, x2, C):
    d = x2[:, None] - 2.0 * (X @ C.T) + (C * C).sum(axis=1)[None, :]
    return np.maximum(d, 0.0)


def _kmeanspp(X, w, x2, k, rng):
    n = X.shape[0]
    first = rng.choice(n, p=w / w.sum())
    centers = [X[first]]
    closest = _sq_dist(X, x2, X[first][None, :])[:, 0]
    for _ in range(1, k):
        p = w * closest
        total = p.sum()
        if total <= 0:
            # every remaining point coincides with a centre; pick any unused point
            idx = int(rng.choice(np.flatnonzero(closest == closest.max())))
        else:
            idx = int(rng.choice(n, p=p / total))
        centers.append(X[idx])
        closest = np.minimum(closest, _sq_dist(X, x2, X[idx][None, :])[:, 0])
    return np.array(centers)


def _lloyd(X, w, x2, k, rng, max_iter):
    C = _kmeanspp(X, w, x2, k, rng)
    labels = None
    for it in range(1, max_iter + 1):
        D = _sq_dist(X, x2, C)
        new = np.argmin(D, axis=1)
        mass = np.bincount(new, weights=w, minlength=k)
        while np.any(mass == 0):
            empty = int(np.flatnonzero(mass == 0)[0])
            big = int(np.argmax(mass))
            members = np.flatnonzero(new == big)
            far = members[int(np.argmax(D[members, big]))]
            new[far] = empty
            mass = np.bincount(new, weights=w, minlength=k)
        onehot = np.zeros((X.shape[0], k))
        onehot[np.arange(X.shape[0]), new] = w
        C = (onehot.T @ X) / mass[:, None]
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
    return labels, C, it


def _inertia(X, w, labels, C):
    total = 0.0
    block = 4096
    for s in range(0, X.shape[0], block):
        diff = X[s: s + block] - C[labels[s: s + block]]
        total += float(np.dot(w[s: s + block], np.einsum("ij,ij->i", diff, diff)))
    return total


def _as_rows(data):
    if isinstance(data, VpsMatrix):
        return data.rows, data.valid
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("expected a 2-D array of fingerprints")
    valid = np.empty(X.shape[0], dtype=bool)
    for s in range(0, X.shape[0], 4096):
        valid[s: s + 4096] = np.isfinite(X[s: s + 4096]).all(axis=1)
    return X, valid


def distinct_rows(X):
    """Distinct rows in first-seen order, the row-to-distinct map and multiplicities.

    Rows are bucketed by a digest of their bytes and confirmed byte for byte,
    so no sorted copy of a large matrix is needed; if every row is distinct
    ``X`` itself is returned.
    """
    first = {}
    inverse = np.empty(X.shape[0], dtype=np.int64)
    keep = []
    for r in range(X.shape[0]):
        b = (X[r] + 0.0).tobytes()  # + 0.0 folds -0.0 into 0.0
        h = hashlib.blake2b(b, digest_size=16).digest()
        for u in first.get(h, ()):
            if (X[keep[u]] + 0.0).tobytes() == b:
                inverse[r] = u
                break
        else:
            first.setdefault(h, []).append(len(keep))
            inverse[r] = len(keep)
            keep.append(r)
    counts = np.bincount(inverse, minlength=len(keep))
    U = X if len(keep) == X.shape[0] else X[np.array(keep, dtype=np.int64)]
    return U, inverse, counts


def kmeans_cluster(data, k, seed=0, restarts=10, max_iter=300):
    """Lloyd's k-means with k-means++ seeding; best of ``restarts`` runs.

    ``data`` is a :class:`VpsMatrix` or a 2-D array; flagged (or non-finite)
    rows are left out and labelled ``-1``. Identical rows are clustered
    once with multiplicity weights, so duplicates always share a label.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    if k < 1:
        raise ValueError("k must be >= 1")
    rows, valid = _as_rows(data)
    X = rows if valid.all() else rows[valid]
    U, inverse, counts = distinct_rows(X)
    if k > U.shape[0]:
        raise ValueError(f"k={k} exceeds the {U.shape[0]} distinct rows")
    w = counts.astype(np.float64)
    x2 = np.einsum("ij,ij->i", U, U)
    best = None
    for child in np.random.SeedSequence(seed).spawn(restarts):
        rng = np.random.default_rng(child)
        labels, C, n_iter = _lloyd(U, w, x2, k, rng, max_iter)
        inertia = _inertia(U, w, labels, C)
        if best is None or inertia < best[0]:
            best = (inertia, labels, C, n_iter)
    inertia, ulabels, C, n_iter = best
    full = np.full(rows.shape[0], SENTINEL, dtype=np.int64)
    full[valid] = ulabels[inverse]
    return Clustering(k=k, labels=full, centroids=C, inertia=inertia, seed=seed,
                      restarts=restarts, n_iter=n_iter)


def elbow_curve(data, k_max, seed=0, restarts=10):
    """Within-cluster sum of squares W(k) for k = 1..k_max."""
    return np.array([kmeans_cluster(data, k, seed, restarts).inertia for k in range(1, k_max + 1)])


def elbow_k(curve):
    """k maximising W(k-1) - 2 W(k) + W(k+1) over 2 <= k <= k_max - 1."""
    W = np.asarray(curve, dtype=np.float64)
    if W.size < 3:
        raise ValueError("elbow needs k_max >= 3")
    if np.any(np.diff(W) > 1e-9 * max(1.0, W[0])):
        warnings.warn("inertia curve increases somewhere; consider more restarts", RuntimeWarning)
    second = W[:-2] - 2.0 * W[1:-1] + W[2:]
    return int(np.argmax(second)) + 2


def select_k_elbow(data, k_max, seed=0, restarts=10, return_curve=False):
    if k_max < 3:
        raise ValueError("k_max must be >= 3")
    curve = elbow_curve(data, k_max, seed, restarts)
    k = elbow_k(curve)
    return (k, curve) if return_curve else k


def labels_to_grid(labels, spec):
    labels = np.asarray(labels)
    if labels.shape != (spec.n_points,):
        raise ValueError(f"expected {spec.n_points} labels, got {labels.shape}")
    # flat index ix*ny + iy -> grid[iy, ix]
    return labels.reshape(spec.nx, spec.ny).T.copy()


def build_basin_map(vm, cl):
    grid = labels_to_grid(cl.labels, vm.slice)
    prov = dict(vm.provenance)
    prov["clustering"] = {"k": cl.k, "seed": cl.seed, "restarts": cl.restarts,
                          "inertia": cl.inertia}
    return BasinMap(grid, cl, vm.slice, prov)


def write_label_grid(grid, path):
    grid = np.asarray(grid, dtype=np.int64)
    text = "\n".join(",".join(str(int(v)) for v in row) for row in grid) + "\n"
    _atomic_write_text(Path(path), text)
    return Path(path)


def read_label_grid(path):
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rows.append([int(tok) for tok in line.split(",")])
        except ValueError:
            raise ValueError(f"{path}:{lineno}: non-integer label") from None
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise ValueError(f"{path}: label grid rows are empty or ragged")
    grid = np.array(rows, dtype=np.int64)
    if grid.min() < SENTINEL:
        raise ValueError(f"{path}: labels must be >= -1")
    return grid
