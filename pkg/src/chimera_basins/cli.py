"""Command-line pipeline: network, sweep, cluster, basin, fractal, render.

One JSON document configures a run. :func:`validate_config` resolves every
default so the normalized document fully determines the artifacts, and
:func:`run_pipeline` executes the stages in order, skipping those whose
artifacts already match the configuration.

Artifact layout of an output directory::

    provenance.json   normalized config, seeds, stage records, elbow curve
    vps.bin           fingerprint matrix (see vps.write_vps_matrix)
    clustering.json   k, centroids, inertia, flat labels
    labels.csv        ny x nx label grid, -1 for flagged initial conditions
    fractal.json      box counting and uncertainty exponent
    basin.ppm         one pixel per cell, row 0 at the bottom
    boundary.ppm      boundary cells in black on white
    checkpoints/      per-chunk sweep results for resuming

Exit codes: 0 success, 1 stage failure, 2 invalid configuration.
"""

from __future__ import annotations

import argparse
import colorsys
import copy
import dataclasses
import hashlib
import json
import math
import os
import re
import signal
import sys
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .basinmap import (
    Clustering,
    SliceSpec,
    VpsMatrix,
    build_basin_map,
    distinct_rows,
    elbow_curve,
    elbow_k,
    kmeans_cluster,
    read_label_grid,
    sweep,
    write_label_grid,
)
from .dynsys import NODE_DIM, ChemicalParams, HenonParams, HRParams, KuramotoParams, SystemModel
from .fractal import (
    EmptyBoundaryError,
    InsufficientScalesError,
    box_count,
    dimension_report,
    extract_boundary,
    fit_box_dimension,
    uncertainty_exponent,
    write_dimension_report,
)
from .integrate import IntegrationConfig
from .netgraph import NetworkError, generate_two_population, load_network, network_info, save_network
from .vps import VpsConfig, read_vps_matrix, write_vps_matrix

__all__ = [
    "ConfigError",
    "StageError",
    "RunArtifacts",
    "WORKERS_ENV",
    "bundled_configs",
    "load_config",
    "validate_config",
    "derive_seed",
    "run_pipeline",
    "render_basin",
    "read_ppm",
    "main",
]

WORKERS_ENV = "CHIMERA_BASINS_WORKERS"
EXIT_OK, EXIT_STAGE, EXIT_CONFIG = 0, 1, 2
STAGES = ("sweep", "cluster", "basin", "fractal", "render")
BUNDLED_NETWORKS = {"surrogate83": ("surrogate83.txt", "dense"), "six-node": ("six_node.txt", "edge-list")}
_SEED_STREAMS = {"base_state": 1, "kmeans": 2, "uncertainty": 3, "palette": 4}


class ConfigError(ValueError):
    """Invalid configuration; ``diagnostics`` holds ``(path, message)`` pairs."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(f"{p or '<root>'}: {m}" for p, m in self.diagnostics))


class StageError(RuntimeError):
    def __init__(self, stage, message):
        self.stage = stage
        super().__init__(f"stage '{stage}' failed: {message}")


# ---------------------------------------------------------------- schema

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_int_pos = {"type": "integer", "minimum": 1}
_pair_num = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}
_axis = {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 2, "maxItems": 2}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


CONFIG_SCHEMA = _obj(
    {
        "network": _obj(
            {
                "source": {"enum": ["file", "bundled", "two-population"]},
                "path": {"type": ["string", "null"]},
                "format": {"enum": ["dense", "dense-matrix", "edge-list"]},
                "symmetrize": {"type": "boolean"},
                "name": {"type": ["string", "null"]},
                "pop_size": {"type": "integer", "minimum": 2},
                "intra_weight": _nonneg,
                "inter_weight": _nonneg,
                "drop_edge": {"type": "boolean"},
                "drop_edge_seed": {"type": "integer", "minimum": 0},
            }
        ),
        "model": _obj(
            {
                "kind": {"enum": ["hr-diffusive", "hr-electrochemical", "kuramoto", "henon"]},
                "preset": {"enum": ["full", "smallnet"]},
                "params": {"type": "object", "additionalProperties": _num},
                "chemical": {"type": "object", "additionalProperties": _num},
            },
            required=["kind"],
        ),
        "integration": _obj(
            {
                "dt": _pos,
                "transient_time": _nonneg,
                "window_time": _pos,
                "transient_steps": {"type": "integer", "minimum": 0},
                "window_steps": _int_pos,
                "sample_stride": _int_pos,
            }
        ),
        "vps": _obj(
            {
                "beta": _nonneg,
                "max_lag": {"type": ["integer", "null"], "minimum": 0},
                "corr_mode": {"enum": ["circular", "linear-valid"]},
                "corr_normalization": {"enum": ["raw", "zero-mean-unit-norm"]},
                "method": {"enum": ["auto", "direct", "fft"]},
                "observable": {"enum": ["component-0", "sin-phase"]},
            }
        ),
        "slice": _obj(
            {
                "axis1": _axis,
                "axis2": _axis,
                "node_index_base": {"enum": [0, 1]},
                "range1": _pair_num,
                "range2": _pair_num,
                "resolution": {"type": "array", "items": {"type": "integer", "minimum": 2},
                               "minItems": 2, "maxItems": 2},
                "base_state": {"anyOf": [_num, {"type": "array", "items": _num, "minItems": 1},
                                         {"const": "random"}]},
                "random_range": {"anyOf": [_pair_num, {"type": "null"}]},
            }
        ),
        "clustering": _obj(
            {
                "k": {"type": ["integer", "null"], "minimum": 1},
                "elbow": {"anyOf": [_obj({"k_max": {"type": "integer", "minimum": 3}}),
                                    {"type": "null"}]},
                "restarts": _int_pos,
                "max_iter": _int_pos,
            }
        ),
        "fractal": _obj(
            {
                "scales": {"anyOf": [{"type": "array", "items": _int_pos, "minItems": 1},
                                     {"type": "null"}]},
                "min_count": _int_pos,
                "min_eps": _int_pos,
                "uncertainty": _obj(
                    {
                        "enabled": {"type": "boolean"},
                        "epsilons": {"anyOf": [{"type": "array", "items": _pos, "minItems": 2},
                                               {"type": "null"}]},
                        "n_pairs": {"type": "integer", "minimum": 1000},
                    }
                ),
            }
        ),
        "render": _obj(
            {
                "palette_seed": {"type": ["integer", "null"], "minimum": 0},
                "boundary_overlay": {"type": "boolean"},
            }
        ),
        "output_dir": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "workers": _int_pos,
        "chunk_size": _int_pos,
        "description": {"type": "string"},
    },
    required=["network", "model"],
)

_KIND_DEFAULTS = {
    "hr-diffusive": dict(range=[-2.5, 2.5], base_state=-0.5, observable="component-0"),
    "hr-electrochemical": dict(range=[-2.5, 2.5], base_state=-0.5, observable="component-0"),
    "kuramoto": dict(range=None, base_state="random", observable="sin-phase"),
    "henon": dict(range=[-1.5, 1.5], base_state="random", observable="component-0"),
}


# ---------------------------------------------------------------- loading and validation

def bundled_configs():
    """Names of the configuration documents shipped with the package."""
    root = resources.files("chimera_basins") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def _resolve_config_path(ref):
    path = Path(ref)
    if path.exists():
        return path
    name = str(ref)[:-5] if str(ref).endswith(".json") else str(ref)
    if name in bundled_configs():
        return Path(str(resources.files("chimera_basins") / "configs" / f"{name}.json"))
    raise FileNotFoundError(f"no config file or bundled config named {ref!r}")


def _parse_override(text):
    if "=" not in text:
        raise ConfigError([("", f"override {text!r} is not of the form key=value")])
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _apply_override(doc, key, value):
    parts = key.split(".")
    node = doc
    for part in parts[:-1]:
        nxt = node.get(part)
        if nxt is None:
            nxt = node[part] = {}
        if not isinstance(nxt, dict):
            raise ConfigError([(key, f"'{part}' is not an object")])
        node = nxt
    node[parts[-1]] = value


def load_config(source, overrides=()):
    """Read a config document and apply ``key=value`` dotted overrides.

    ``source`` is a path, a bundled config name, or an already parsed dict.
    Returns ``(document, base_dir)`` where relative network paths are
    resolved against ``base_dir``.
    """
    if isinstance(source, dict):
        doc, base = copy.deepcopy(source), Path.cwd()
    else:
        path = _resolve_config_path(source)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError([("", f"not valid JSON: {exc}")]) from None
        base = path.parent
    if not isinstance(doc, dict):
        raise ConfigError([("", "config must be a JSON object")])
    for item in overrides:
        key, value = item if isinstance(item, tuple) else _parse_override(item)
        _apply_override(doc, key, value)
    return doc, base


def _schema_errors(doc):
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    out = []
    for err in sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path))):
        path = ".".join(str(p) for p in err.absolute_path)
        if err.validator == "additionalProperties":
            extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
            msg = "unknown key(s): " + ", ".join(extra)
        else:
            msg = err.message
        out.append((path, msg))
    return out


def _field_names(cls):
    return [f.name for f in dataclasses.fields(cls) if f.init]


def _normalize_network(net, base, diag):
    source = net.get("source") or ("file" if net.get("path") else None)
    if source is None:
        diag.append(("network.source", "give a network source (file, bundled or two-population)"))
        return None
    if source == "two-population":
        return {
            "source": source,
            "pop_size": net.get("pop_size", 5),
            "intra_weight": net.get("intra_weight", 0.6),
            "inter_weight": net.get("inter_weight", 0.4),
            "drop_edge": net.get("drop_edge", True),
            "drop_edge_seed": net.get("drop_edge_seed", 0),
        }
    if source == "bundled":
        name = net.get("name")
        if name not in BUNDLED_NETWORKS:
            diag.append(("network.name", f"unknown bundled network {name!r}; "
                                         f"choose from {sorted(BUNDLED_NETWORKS)}"))
            return None
        return {"source": source, "name": name}
    path = net.get("path")
    if not path:
        diag.append(("network.path", "required for a file network"))
        return None
    p = Path(path)
    if not p.is_absolute():
        p = (base / p).resolve()
    if not p.exists():
        diag.append(("network.path", f"file not found: {p}"))
        return None
    return {
        "source": "file",
        "path": str(p),
        "format": net.get("format", "dense"),
        "symmetrize": net.get("symmetrize", False),
        "name": net.get("name"),
    }


def build_network(netcfg):
    src = netcfg["source"]
    if src == "two-population":
        return generate_two_population(netcfg["pop_size"], netcfg["intra_weight"],
                                       netcfg["inter_weight"], netcfg["drop_edge_seed"],
                                       netcfg["drop_edge"])
    if src == "bundled":
        fname, fmt = BUNDLED_NETWORKS[netcfg["name"]]
        path = resources.files("chimera_basins") / "data" / fname
        return load_network(Path(str(path)), fmt, name=netcfg["name"])
    return load_network(netcfg["path"], netcfg["format"], netcfg["symmetrize"], netcfg["name"])


def _normalize_model(model, diag):
    kind = model["kind"]
    preset = model.get("preset", "full")
    params = dict(model.get("params", {}))
    if kind.startswith("hr-"):
        defaults = HRParams() if preset == "full" else HRParams(
            x_R=-0.5 * (1 + math.sqrt(5)), I=3.27, r=0.017, sigma=0.0004)
        cls = HRParams
    else:
        if "preset" in model:
            diag.append(("model.preset", f"presets apply to HR models only, not {kind}"))
        cls = {"kuramoto": KuramotoParams, "henon": HenonParams}[kind]
        defaults = cls()
    names = _field_names(cls)
    for key in params:
        if key not in names:
            diag.append((f"model.params.{key}", f"unknown parameter for {kind}; expected one of {names}"))
    full = {n: params.get(n, getattr(defaults, n)) for n in names}
    try:
        cls(**full)
    except ValueError as exc:
        diag.append(("model.params", str(exc)))
    out = {"kind": kind, "params": full}
    if kind.startswith("hr-"):
        out["preset"] = preset
    chem = model.get("chemical")
    if kind == "hr-electrochemical":
        chem = dict(chem or {})
        cnames = _field_names(ChemicalParams)
        for key in chem:
            if key not in cnames:
                diag.append((f"model.chemical.{key}", f"unknown parameter; expected one of {cnames}"))
        cfull = {n: chem.get(n, getattr(ChemicalParams(), n)) for n in cnames}
        try:
            ChemicalParams(**cfull)
        except ValueError as exc:
            diag.append(("model.chemical", str(exc)))
        out["chemical"] = cfull
    elif chem:
        diag.append(("model.chemical", f"chemical coupling parameters are not used by {kind}"))
    return out


def build_model(modelcfg, network):
    kind = modelcfg["kind"]
    if kind.startswith("hr-"):
        params = HRParams(**modelcfg["params"])
    elif kind == "kuramoto":
        params = KuramotoParams(**modelcfg["params"])
    else:
        params = HenonParams(**modelcfg["params"])
    chem = ChemicalParams(**modelcfg["chemical"]) if kind == "hr-electrochemical" else None
    return SystemModel(kind, params, network, chem)


def _normalize_integration(kind, integ, diag):
    base = IntegrationConfig.for_kind(kind).as_dict()
    base.update(integ)
    try:
        cfg = IntegrationConfig(**base)
        cfg.step_counts(kind != "henon")
    except ValueError as exc:
        diag.append(("integration", str(exc)))
        return base, None
    return base, cfg


def _normalize_vps(kind, vps, icfg, diag):
    out = dataclasses.asdict(VpsConfig())
    out["observable"] = _KIND_DEFAULTS[kind]["observable"]
    out.update(vps)
    if out["observable"] == "sin-phase" and kind != "kuramoto":
        diag.append(("vps.observable", "sin-phase needs a phase model (kuramoto)"))
    cfg = VpsConfig(**{k: v for k, v in out.items() if k != "observable"})
    if icfg is not None:
        try:
            cfg.lag_bound(icfg.n_samples(kind != "henon"))
        except ValueError as exc:
            diag.append(("vps.max_lag", str(exc)))
    return out


def _normalize_slice(kind, sl, n_nodes, diag):
    d = NODE_DIM[kind]
    dflt = _KIND_DEFAULTS[kind]
    res = sl.get("resolution", [100, 100])
    rng = dflt["range"]
    nx, ny = res
    out = {
        "axis1": sl.get("axis1", [0, 0]),
        "axis2": sl.get("axis2", [min(1, n_nodes - 1), 0]),
        "node_index_base": sl.get("node_index_base", 0),
        "range1": sl.get("range1", rng if rng else [0.0, 2 * math.pi * (nx - 1) / nx]),
        "range2": sl.get("range2", rng if rng else [0.0, 2 * math.pi * (ny - 1) / ny]),
        "resolution": res,
        "base_state": sl.get("base_state", dflt["base_state"]),
        "random_range": sl.get("random_range"),
    }
    if out["base_state"] == "random" and out["random_range"] is None:
        out["random_range"] = [0.0, 2 * math.pi] if kind == "kuramoto" else list(out["range1"])
    off = out["node_index_base"]
    for name in ("axis1", "axis2"):
        node, comp = out[name]
        if not 0 <= node - off < n_nodes:
            diag.append((f"slice.{name}", f"node {node} outside the {n_nodes}-node network "
                                          f"(index base {off})"))
        if not 0 <= comp < d:
            diag.append((f"slice.{name}", f"component {comp} outside node dimension {d}"))
    if out["axis1"] == out["axis2"]:
        diag.append(("slice.axis2", "slice axes must differ"))
    for name in ("range1", "range2", "random_range"):
        r = out[name]
        if r is not None and not r[0] < r[1]:
            diag.append((f"slice.{name}", "min must be below max"))
    bs = out["base_state"]
    if isinstance(bs, list) and len(bs) != n_nodes * d:
        diag.append(("slice.base_state", f"expected {n_nodes * d} values, got {len(bs)}"))
    return out


def _normalize_clustering(cl, diag):
    k, elbow = cl.get("k"), cl.get("elbow")
    if k is not None and elbow is not None:
        diag.append(("clustering", "conflict: set either a fixed k or elbow, not both"))
    if k is None and elbow is None:
        elbow = {"k_max": 10}
    if elbow is not None:
        elbow = {"k_max": elbow.get("k_max", 10)}
    return {"k": k, "elbow": elbow, "restarts": cl.get("restarts", 10),
            "max_iter": cl.get("max_iter", 300)}


def _normalize_fractal(fr, res, diag):
    unc = fr.get("uncertainty", {})
    out = {
        "scales": fr.get("scales"),
        "min_count": fr.get("min_count", 8),
        "min_eps": fr.get("min_eps", 2),
        "uncertainty": {
            "enabled": unc.get("enabled", True),
            "epsilons": unc.get("epsilons"),
            "n_pairs": unc.get("n_pairs", 2000),
        },
    }
    if out["scales"] is not None:
        top = min(res) / 2
        bad = [e for e in out["scales"] if e > top]
        if bad:
            diag.append(("fractal.scales", f"box sizes {bad} exceed half the grid ({top:g} cells)"))
    return out


def validate_config(source, overrides=(), env=None):
    """Validate a config and return it with every default resolved.

    Raises :class:`ConfigError` listing each problem with its dotted path
    into the document (for instance ``integration.dt``).
    """
    env = os.environ if env is None else env
    doc, base = load_config(source, overrides)
    diag = _schema_errors(doc)
    if diag:
        raise ConfigError(diag)
    net = _normalize_network(doc["network"], base, diag)
    model = _normalize_model(doc["model"], diag)
    n_nodes = None
    if net is not None:
        try:
            n_nodes = build_network(net).n_nodes
        except (NetworkError, ValueError, OSError) as exc:
            diag.append(("network", str(exc)))
    kind = model["kind"]
    integ, icfg = _normalize_integration(kind, doc.get("integration", {}), diag)
    vps = _normalize_vps(kind, doc.get("vps", {}), icfg, diag)
    sl = _normalize_slice(kind, doc.get("slice", {}), n_nodes or 2, diag) if n_nodes else None
    clustering = _normalize_clustering(doc.get("clustering", {}), diag)
    res = sl["resolution"] if sl else [2, 2]
    fractal = _normalize_fractal(doc.get("fractal", {}), res, diag)
    seed = doc.get("seed", 0)
    render = {"palette_seed": doc.get("render", {}).get("palette_seed"),
              "boundary_overlay": doc.get("render", {}).get("boundary_overlay", False)}
    if render["palette_seed"] is None:
        render["palette_seed"] = derive_seed(seed, "palette")
    workers = doc.get("workers", 1)
    if env.get(WORKERS_ENV):
        try:
            workers = int(env[WORKERS_ENV])
            if workers < 1:
                raise ValueError
        except ValueError:
            diag.append((f"env:{WORKERS_ENV}", f"must be a positive integer, got {env[WORKERS_ENV]!r}"))
    if diag:
        raise ConfigError(diag)
    return {
        "description": doc.get("description", ""),
        "network": net,
        "model": model,
        "integration": integ,
        "vps": vps,
        "slice": sl,
        "clustering": clustering,
        "fractal": fractal,
        "render": render,
        "output_dir": doc.get("output_dir", "chimera-run"),
        "seed": seed,
        "workers": workers,
        "chunk_size": doc.get("chunk_size", 256),
    }


# ---------------------------------------------------------------- builders

def derive_seed(master, stream):
    """Seed for a named sub-operation, derived deterministically from ``master``."""
    ss = np.random.SeedSequence([int(master), _SEED_STREAMS[stream]])
    return int(ss.generate_state(1)[0])


def build_slice(cfg, model):
    sl = cfg["slice"]
    off = sl["node_index_base"]
    axis1 = (sl["axis1"][0] - off, sl["axis1"][1])
    axis2 = (sl["axis2"][0] - off, sl["axis2"][1])
    bs = sl["base_state"]
    if bs == "random":
        lo, hi = sl["random_range"]
        rng = np.random.default_rng(derive_seed(cfg["seed"], "base_state"))
        base = rng.uniform(lo, hi, model.state_size)
    elif isinstance(bs, list):
        base = np.array(bs, dtype=np.float64)
    else:
        base = np.full(model.state_size, float(bs))
    return SliceSpec(axis1, axis2, sl["range1"], sl["range2"], sl["resolution"], base,
                     model.node_dim)


def build_configs(cfg):
    icfg = IntegrationConfig(**cfg["integration"])
    v = dict(cfg["vps"])
    observable = v.pop("observable")
    return icfg, VpsConfig(**v), observable


# ---------------------------------------------------------------- rendering

def palette(n_labels, seed):
    """RGB colours for labels ``0..n_labels-1``: golden-ratio hue walk from a seeded start."""
    start = np.random.default_rng(seed).random()
    out = np.empty((max(n_labels, 0), 3), dtype=np.uint8)
    for i in range(n_labels):
        h = (start + i * 0.6180339887498949) % 1.0
        s = (0.55, 0.75, 0.95)[i % 3]
        v = (0.95, 0.75)[(i // 3) % 2]
        out[i] = np.round(np.array(colorsys.hsv_to_rgb(h, s, v)) * 255)
    return out


def write_ppm(rgb, path):
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    path = Path(path)
    tmp = Path(str(path) + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())
    os.replace(tmp, path)
    return path


def read_ppm(path):
    """Read a binary P6 image written by :func:`write_ppm`, shape ``(h, w, 3)``."""
    data = Path(path).read_bytes()
    # header is four whitespace-separated tokens; one whitespace byte precedes the pixels
    m = re.match(rb"P6\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if m is None or int(m.group(3)) != 255:
        raise ValueError(f"{path}: not an 8-bit P6 image")
    w, h = int(m.group(1)), int(m.group(2))
    pixels = data[m.end(): m.end() + w * h * 3]
    if len(pixels) != w * h * 3:
        raise ValueError(f"{path}: truncated pixel data")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w, 3)


def render_basin(grid, palette_seed, out, boundary=None):
    """Write the label grid as a P6 image, one pixel per cell.

    ``grid`` is a label array or a label-grid CSV path. Grid row 0 is drawn
    at the bottom so axis1 runs rightward and axis2 upward. Flagged cells
    (-1) are black; if ``boundary`` is given its cells are drawn at half
    brightness.
    """
    g = read_label_grid(grid) if isinstance(grid, (str, Path)) else np.asarray(grid, dtype=np.int64)
    if g.ndim != 2:
        raise ValueError("label grid must be 2-D")
    if g.min() < -1:
        raise ValueError("labels must be >= -1")
    colours = palette(int(g.max()) + 1, palette_seed)
    rgb = np.zeros(g.shape + (3,), dtype=np.uint8)
    ok = g >= 0
    rgb[ok] = colours[g[ok]]
    if boundary is not None:
        b = np.asarray(boundary, dtype=bool) & ok
        rgb[b] //= 2
    return write_ppm(rgb[::-1], out)


def render_boundary(boundary, out):
    b = np.asarray(boundary, dtype=bool)
    rgb = np.full(b.shape + (3,), 255, dtype=np.uint8)
    rgb[b] = 0
    return write_ppm(rgb[::-1], out)


# ---------------------------------------------------------------- pipeline

@dataclass(frozen=True)
class RunArtifacts:
    provenance: Path
    vps_matrix: Path
    label_grid: Path
    basin_image: Path
    boundary_image: Path
    dimension_report: Path
    checkpoints: Path
    clustering: Path

    @classmethod
    def in_dir(cls, root):
        root = Path(root)
        return cls(root / "provenance.json", root / "vps.bin", root / "labels.csv",
                   root / "basin.ppm", root / "boundary.ppm", root / "fractal.json",
                   root / "checkpoints", root / "clustering.json")

    def missing(self):
        return [p for p in dataclasses.astuple(self) if not Path(p).exists()]


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _key(*parts):
    return hashlib.sha256(json.dumps(parts, sort_keys=True, default=str).encode()).hexdigest()


def _write_json(path, doc):
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n")
    os.replace(tmp, path)


class _Run:
    """Shared state of one pipeline invocation on an output directory."""

    def __init__(self, cfg, log):
        self.cfg = cfg
        self.log = log
        self.art = RunArtifacts.in_dir(cfg["output_dir"])
        Path(cfg["output_dir"]).mkdir(parents=True, exist_ok=True)
        self._network = self._model = None
        if self.art.provenance.exists():
            self.prov = json.loads(self.art.provenance.read_text())
        else:
            self.prov = {}
        self.prov.setdefault("stages", {})
        self.prov["config"] = cfg
        self.prov["code_version"] = __version__
        self.prov["seeds"] = {
            "master": cfg["seed"],
            **{name: derive_seed(cfg["seed"], name) for name in _SEED_STREAMS},
        }
        self.prov.setdefault("created_utc", time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()))

    @property
    def model(self):
        if self._model is None:
            self._network = build_network(self.cfg["network"])
            self._model = build_model(self.cfg["model"], self._network)
        return self._model

    def stage_key(self, stage):
        c = self.cfg
        sweep_part = (c["network"], c["model"], c["integration"], c["vps"], c["slice"],
                      c["seed"] if c["slice"]["base_state"] == "random" else None, c["chunk_size"])
        if stage == "sweep":
            return _key("sweep", *sweep_part)
        cluster_part = (c["clustering"], derive_seed(c["seed"], "kmeans"))
        if stage in ("cluster", "basin"):
            return _key(stage, *sweep_part, *cluster_part)
        if stage == "fractal":
            return _key(stage, *sweep_part, *cluster_part, c["fractal"],
                        derive_seed(c["seed"], "uncertainty"))
        return _key(stage, *sweep_part, *cluster_part, c["render"])

    def outputs(self, stage):
        a = self.art
        return {"sweep": [a.vps_matrix], "cluster": [a.clustering], "basin": [a.label_grid],
                "fractal": [a.dimension_report], "render": [a.basin_image, a.boundary_image]}[stage]

    def is_current(self, stage):
        rec = self.prov["stages"].get(stage)
        if not rec or rec.get("key") != self.stage_key(stage):
            return False
        for p in self.outputs(stage):
            if not p.exists() or rec.get("sha256", {}).get(p.name) != _sha256(p):
                return False
        return True

    def record(self, stage, **extra):
        self.prov["stages"][stage] = {
            "key": self.stage_key(stage),
            "sha256": {p.name: _sha256(p) for p in self.outputs(stage)},
            **extra,
        }
        # later stages depend on this one; drop their records
        for later in STAGES[STAGES.index(stage) + 1:]:
            self.prov["stages"].pop(later, None)
        self.save()

    def save(self):
        _write_json(self.art.provenance, self.prov)

    def require(self, stage):
        if not self.is_current(stage):
            raise StageError(stage, f"artifacts of stage '{stage}' are missing or belong to a "
                                    f"different configuration; run it first")

    # -- stage bodies

    def load_vps(self):
        self.require("sweep")
        rec = self.prov["stages"]["sweep"]
        rows = read_vps_matrix(self.art.vps_matrix)
        spec = SliceSpec.from_dict(rec["slice"])
        diverged = np.zeros(rows.shape[0], dtype=bool)
        diverged[rec["diverged_indices"]] = True
        return VpsMatrix(rows, spec, diverged, rec)

    def sweep(self):
        model = self.model
        spec = build_slice(self.cfg, model)
        icfg, vcfg, observable = build_configs(self.cfg)

        def progress(done, total):
            self.log(f"sweep: {done}/{total} chunks")

        vm = sweep(model, spec, icfg, vcfg, workers=self.cfg["workers"], observable=observable,
                   chunk_size=self.cfg["chunk_size"], checkpoint_dir=self.art.checkpoints,
                   progress=progress)
        write_vps_matrix(vm.rows, self.art.vps_matrix)
        prov = {k: v for k, v in vm.provenance.items()}
        prov["digest"] = vm.digest()
        self.record("sweep", **prov)
        self.log(f"sweep: {vm.rows.shape[0]} rows, {prov['n_diverged']} flagged")

    def cluster(self):
        vm = self.load_vps()
        c = self.cfg["clustering"]
        seed = derive_seed(self.cfg["seed"], "kmeans")
        n_valid = int(vm.valid.sum())
        if n_valid == 0:
            raise StageError("cluster", "every initial condition was flagged (diverged or degenerate)")
        curve = None
        if c["k"] is not None:
            k = c["k"]
        else:
            distinct = distinct_rows(vm.rows if vm.valid.all() else vm.rows[vm.valid])[0].shape[0]
            k_max = min(c["elbow"]["k_max"], distinct)
            if k_max < 3:
                k = k_max
            else:
                curve = elbow_curve(vm, k_max, seed, c["restarts"])
                k = elbow_k(curve)
        try:
            cl = kmeans_cluster(vm, k, seed, c["restarts"], c["max_iter"])
        except ValueError as exc:
            raise StageError("cluster", str(exc)) from None
        doc = {
            "k": cl.k,
            "k_source": "fixed" if c["k"] is not None else "elbow",
            "elbow_curve": None if curve is None else [float(v) for v in curve],
            "inertia": cl.inertia,
            "seed": seed,
            "restarts": cl.restarts,
            "n_iter": cl.n_iter,
            "centroids": cl.centroids.tolist(),
            "labels": cl.labels.tolist(),
        }
        _write_json(self.art.clustering, doc)
        self.record("cluster", k=cl.k, k_source=doc["k_source"], elbow_curve=doc["elbow_curve"],
                    inertia=cl.inertia, seed=seed)
        self.log(f"cluster: k={cl.k} ({doc['k_source']}), inertia={cl.inertia:.6g}")

    def load_clustering(self):
        self.require("cluster")
        doc = json.loads(self.art.clustering.read_text())
        return Clustering(k=doc["k"], labels=np.array(doc["labels"], dtype=np.int64),
                          centroids=np.array(doc["centroids"]), inertia=doc["inertia"],
                          seed=doc["seed"], restarts=doc["restarts"], n_iter=doc["n_iter"])

    def basin(self):
        vm = self.load_vps()
        cl = self.load_clustering()
        bm = build_basin_map(vm, cl)
        write_label_grid(bm.label_grid, self.art.label_grid)
        counts = np.bincount(cl.labels[cl.labels >= 0], minlength=cl.k)
        self.record("basin", shape=list(bm.label_grid.shape), cluster_sizes=counts.tolist())
        self.log(f"basin: grid {bm.label_grid.shape[1]}x{bm.label_grid.shape[0]}, sizes {counts.tolist()}")

    def fractal(self):
        self.require("basin")
        grid = read_label_grid(self.art.label_grid)
        f = self.cfg["fractal"]
        bg = extract_boundary(grid)
        frac = float(bg.mean())
        box, note = None, None
        try:
            box = fit_box_dimension(box_count(bg, f["scales"]), f["min_count"], f["min_eps"])
        except EmptyBoundaryError as exc:
            note = str(exc)
        except InsufficientScalesError as exc:
            box = box_count(bg, f["scales"])
            note = str(exc)
        unc = None
        u = f["uncertainty"]
        if u["enabled"]:
            spec = SliceSpec.from_dict(self.prov["stages"]["sweep"]["slice"])
            cell = spec.cell_size
            eps = u["epsilons"]
            if eps is None:
                top = min(grid.shape) // 4
                eps = [e * min(cell) for e in (1, 2, 4, 8, 16, 32) if e <= max(top, 1)]
            try:
                unc = uncertainty_exponent(grid, eps, u["n_pairs"], derive_seed(self.cfg["seed"], "uncertainty"),
                                           cell_size=cell)
            except ValueError as exc:
                note = f"{note}; uncertainty: {exc}" if note else f"uncertainty: {exc}"
        if box is None:
            doc = {"box_counting": None, "boundary_fraction": frac,
                   "uncertainty": unc.as_dict() if unc else None}
        else:
            doc = dimension_report(box, unc, frac)
        doc["note"] = note
        write_dimension_report(doc, self.art.dimension_report)
        d_box = None if box is None or not math.isfinite(box.d_box) else box.d_box
        self.record("fractal", d_box=d_box, boundary_fraction=frac)
        self.log(f"fractal: boundary fraction {frac:.4f}, d_box {d_box}" + (f" ({note})" if note else ""))

    def render(self):
        self.require("basin")
        grid = read_label_grid(self.art.label_grid)
        bg = extract_boundary(grid)
        r = self.cfg["render"]
        render_basin(grid, r["palette_seed"], self.art.basin_image,
                     boundary=bg if r["boundary_overlay"] else None)
        render_boundary(bg, self.art.boundary_image)
        self.record("render")
        self.log("render: basin.ppm, boundary.ppm")


def _stderr_log(msg):
    print(msg, file=sys.stderr, flush=True)


def run_stage(cfg, stage, log=_stderr_log, force=False):
    """Run one stage on the artifacts of earlier stages in ``cfg['output_dir']``."""
    run = _Run(cfg, log)
    if not force and run.is_current(stage):
        log(f"{stage}: up to date, skipped")
        return run.art
    try:
        getattr(run, stage)()
    except StageError:
        raise
    except (ValueError, ArithmeticError, OSError, NetworkError) as exc:
        raise StageError(stage, str(exc)) from exc
    return run.art


def run_pipeline(cfg, log=_stderr_log):
    """Run every stage in order; stages whose artifacts are current are skipped.

    ``cfg`` is a normalized config from :func:`validate_config`.
    """
    for stage in STAGES:
        art = run_stage(cfg, stage, log)
    return art


# ---------------------------------------------------------------- command line

def _print_config_error(exc):
    print("invalid configuration:", file=sys.stderr)
    for path, msg in exc.diagnostics:
        print(f"  {path or '<root>'}: {msg}", file=sys.stderr)


def _cmd_net(args):
    if args.net_cmd == "info":
        net = (build_network({"source": "bundled", "name": args.path[len("bundled:"):]})
               if args.path.startswith("bundled:") else
               load_network(args.path, args.format, args.symmetrize))
        doc = {"name": net.name, "n_nodes": net.n_nodes, "directed": net.directed,
               **network_info(net).as_dict()}
        print(json.dumps(doc, indent=2))
    elif args.net_cmd == "generate":
        net = generate_two_population(args.pop_size, args.intra_weight, args.inter_weight,
                                      args.seed, not args.keep_all)
        save_network(net, args.out, args.format)
        print(f"wrote {net.n_nodes}-node network to {args.out}", file=sys.stderr)
    else:
        net = load_network(args.src, args.src_format, args.symmetrize)
        save_network(net, args.dst, args.dst_format)
        print(f"wrote {args.dst}", file=sys.stderr)
    return EXIT_OK


def _add_config_args(p):
    p.add_argument("config", help="config file or bundled config name")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key by dotted path, value parsed as JSON")
    p.add_argument("--out", help="output directory (same as --set output_dir=...)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="chimera-basins",
        description="Map basins of chimera states with vector pattern state fingerprints.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="cmd", required=True)

    net = sub.add_parser("net", help="inspect, generate or convert networks")
    nsub = net.add_subparsers(dest="net_cmd", required=True)
    info = nsub.add_parser("info", help="print a network summary as JSON")
    info.add_argument("path", help="network file, or bundled:<name>")
    info.add_argument("--format", default="dense", choices=["dense", "edge-list"])
    info.add_argument("--symmetrize", action="store_true")
    gen = nsub.add_parser("generate", help="two-population network")
    gen.add_argument("--pop-size", type=int, default=5)
    gen.add_argument("--intra-weight", type=float, default=0.6)
    gen.add_argument("--inter-weight", type=float, default=0.4)
    gen.add_argument("--seed", type=int, default=0, help="seed for the dropped edge")
    gen.add_argument("--keep-all", action="store_true", help="do not drop an edge")
    gen.add_argument("--format", default="edge-list", choices=["dense", "edge-list"])
    gen.add_argument("-o", "--out", required=True)
    conv = nsub.add_parser("convert", help="convert between dense and edge-list formats")
    conv.add_argument("src")
    conv.add_argument("dst")
    conv.add_argument("--from", dest="src_format", default="dense", choices=["dense", "edge-list"])
    conv.add_argument("--to", dest="dst_format", default="edge-list", choices=["dense", "edge-list"])
    conv.add_argument("--symmetrize", action="store_true")

    for name, text in [
        ("sweep", "integrate the slice and write vps.bin"),
        ("cluster", "k-means on vps.bin (fixed k or elbow)"),
        ("basin", "write the label grid labels.csv"),
        ("fractal", "boundary box counting and uncertainty exponent"),
        ("run", "full pipeline, resuming completed stages"),
    ]:
        p = sub.add_parser(name, help=text)
        _add_config_args(p)
        if name != "run":
            p.add_argument("--force", action="store_true", help="rerun even if up to date")

    ren = sub.add_parser("render", help="render a label grid as a P6 image")
    ren.add_argument("grid", help="label grid CSV")
    ren.add_argument("--palette-seed", type=int, default=0)
    ren.add_argument("--boundary-overlay", action="store_true")
    ren.add_argument("-o", "--out", required=True)

    val = sub.add_parser("validate", help="check a config and print it with defaults resolved")
    val.add_argument("config", nargs="?", help="config file or bundled config name")
    val.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    val.add_argument("--list", action="store_true", help="list bundled configs")
    return parser


def _sigterm(signum, frame):
    raise KeyboardInterrupt


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.cmd == "net":
            return _cmd_net(args)
        if args.cmd == "render":
            g = read_label_grid(args.grid)
            render_basin(g, args.palette_seed, args.out,
                         boundary=extract_boundary(g) if args.boundary_overlay else None)
            return EXIT_OK
        if args.cmd == "validate" and (args.list or args.config is None):
            print("\n".join(bundled_configs()))
            return EXIT_OK
    except (NetworkError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE

    overrides = list(args.overrides)
    if getattr(args, "out", None):
        overrides.append(("output_dir", args.out))
    try:
        cfg = validate_config(args.config, overrides)
    except ConfigError as exc:
        _print_config_error(exc)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.cmd == "validate":
        print(json.dumps(cfg, indent=2, sort_keys=True))
        return EXIT_OK

    previous = signal.signal(signal.SIGTERM, _sigterm)
    try:
        if args.cmd == "run":
            art = run_pipeline(cfg)
            print(json.dumps({k: str(v) for k, v in dataclasses.asdict(art).items()}, indent=2))
        else:
            run_stage(cfg, args.cmd, force=args.force)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except KeyboardInterrupt:
        print("interrupted; completed sweep chunks are checkpointed, rerun to resume", file=sys.stderr)
        return EXIT_STAGE
    finally:
        signal.signal(signal.SIGTERM, previous)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
