"""Basin boundaries and their fractality.

Boundary cells are found with 4-connectivity; the box-counting dimension
is the OLS slope of ``ln N(eps)`` against ``ln(1/eps)`` on a grid-anchored
box mesh. The uncertainty exponent gives an independent probe: the
fraction of eps-separated point pairs falling in different basins scales
as ``eps**alpha`` and the boundary dimension is ``2 - alpha``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

__all__ = [
    "BoxCountResult",
    "UncertaintyResult",
    "EmptyBoundaryError",
    "InsufficientScalesError",
    "extract_boundary",
    "box_count",
    "fit_box_dimension",
    "box_dimension",
    "default_scales",
    "uncertainty_exponent",
    "dimension_report",
    "write_dimension_report",
]

MIN_COUNT = 8
MIN_EPS = 2


class EmptyBoundaryError(ValueError):
    pass


class InsufficientScalesError(ValueError):
    pass


@dataclass(frozen=True)
class BoxCountResult:
    scales: tuple
    d_box: float = math.nan
    fit_intercept: float = math.nan
    fit_r2: float = math.nan
    scale_window: tuple | None = None
    min_count: int = MIN_COUNT
    min_eps: int = MIN_EPS

    @property
    def epsilons(self):
        return np.array([e for e, _ in self.scales])

    @property
    def counts(self):
        return np.array([c for _, c in self.scales])

    def as_dict(self):
        return {
            "scales": [[int(e), int(c)] for e, c in self.scales],
            "d_box": self.d_box,
            "fit_intercept": self.fit_intercept,
            "fit_r2": self.fit_r2,
            "scale_window": list(self.scale_window) if self.scale_window else None,
            "guards": {"min_count": self.min_count, "min_eps": self.min_eps},
        }


@dataclass(frozen=True)
class UncertaintyResult:
    epsilons: tuple
    uncertain_fraction: tuple
    alpha: float
    implied_dimension: float
    n_pairs: int
    fit_ok: bool = True
    pair_counts: tuple = field(default=())

    def as_dict(self):
        return {
            "epsilons": list(self.epsilons),
            "uncertain_fraction": list(self.uncertain_fraction),
            "alpha": self.alpha,
            "implied_dimension": self.implied_dimension,
            "n_pairs": self.n_pairs,
            "fit_ok": self.fit_ok,
        }


def _grid(bm):
    return np.asarray(getattr(bm, "label_grid", bm))


def extract_boundary(bm):
    """Cells whose label differs from a 4-neighbour; sentinel (-1) cells are ignored."""
    g = _grid(bm)
    valid = g >= 0
    out = np.zeros(g.shape, dtype=bool)
    for axis in (0, 1):
        n = g.shape[axis]
        a = [slice(None)] * 2
        b = [slice(None)] * 2
        a[axis] = slice(0, n - 1)
        b[axis] = slice(1, n)
        a, b = tuple(a), tuple(b)
        differ = (g[a] != g[b]) & valid[a] & valid[b]
        out[a] |= differ
        out[b] |= differ
    return out


def default_scales(shape):
    top = min(shape) // 2
    scales = []
    e = 1
    while e <= top:
        scales.append(e)
        e *= 2
    return scales


def box_count(bg, scales=None):
    bg = np.asarray(bg, dtype=bool)
    if not bg.any():
        raise EmptyBoundaryError("boundary set is empty; box dimension undefined")
    scales = default_scales(bg.shape) if scales is None else [int(e) for e in scales]
    ny, nx = bg.shape
    out = []
    for eps in scales:
        if eps < 1 or eps > min(nx, ny) / 2:
            raise ValueError(f"box size {eps} outside [1, {min(nx, ny) // 2}]")
        py, px = -ny % eps, -nx % eps
        padded = np.pad(bg, ((0, py), (0, px)))
        boxes = padded.reshape(padded.shape[0] // eps, eps, padded.shape[1] // eps, eps)
        out.append((eps, int(boxes.any(axis=(1, 3)).sum())))
    return BoxCountResult(scales=tuple(out))


def fit_box_dimension(counts, min_count=MIN_COUNT, min_eps=MIN_EPS):
    """Least-squares slope of ln N(eps) on ln(1/eps) within the guarded window."""
    eps = counts.epsilons.astype(np.float64)
    n = counts.counts.astype(np.float64)
    use = (n >= min_count) & (eps >= min_eps) & (n > 0)
    if use.sum() < 3:
        raise InsufficientScalesError(
            f"only {int(use.sum())} scales satisfy N>={min_count}, eps>={min_eps}; need 3"
        )
    x = np.log(1.0 / eps[use])
    y = np.log(n[use])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return replace(
        counts,
        d_box=float(slope),
        fit_intercept=float(intercept),
        fit_r2=r2,
        scale_window=(int(eps[use].min()), int(eps[use].max())),
        min_count=min_count,
        min_eps=min_eps,
    )


def box_dimension(bg, scales=None, **guards):
    return fit_box_dimension(box_count(bg, scales), **guards)


def uncertainty_exponent(bm, epsilons, n_pairs=2000, seed=0, cell_size=None):
    """Fraction of eps-separated pairs with different labels, and its scaling.

    Pairs are axis-aligned; ``eps`` is in slice units and rounded to whole
    cells along the chosen axis (``cell_size`` defaults to the slice's grid
    spacing, or 1 for a bare array). Pairs touching a sentinel cell are
    discarded.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be positive")
    g = _grid(bm)
    ny, nx = g.shape
    if cell_size is None:
        sl = getattr(bm, "slice", None)
        cell_size = sl.cell_size if sl is not None else (1.0, 1.0)
    cx, cy = cell_size
    rng = np.random.default_rng(seed)
    fractions, used = [], []
    for eps in epsilons:
        ex, ey = int(round(eps / cx)), int(round(eps / cy))
        if ex < 1 or ey < 1 or ex >= nx or ey >= ny:
            raise ValueError(f"eps={eps} does not fit the {nx}x{ny} grid at cell size {cell_size}")
        horizontal = rng.random(n_pairs) < 0.5
        iy = np.where(horizontal, rng.integers(0, ny, n_pairs), rng.integers(0, ny - ey, n_pairs))
        ix = np.where(horizontal, rng.integers(0, nx - ex, n_pairs), rng.integers(0, nx, n_pairs))
        jy = iy + np.where(horizontal, 0, ey)
        jx = ix + np.where(horizontal, ex, 0)
        a, b = g[iy, ix], g[jy, jx]
        ok = (a >= 0) & (b >= 0)
        used.append(int(ok.sum()))
        fractions.append(float((a[ok] != b[ok]).mean()) if ok.any() else 0.0)
    fr = np.array(fractions)
    pos = fr > 0
    fit_ok = pos.sum() >= 2
    if fit_ok:
        alpha = float(np.polyfit(np.log(np.asarray(epsilons, float)[pos]), np.log(fr[pos]), 1)[0])
    else:
        alpha = math.nan
    return UncertaintyResult(
        epsilons=tuple(float(e) for e in epsilons),
        uncertain_fraction=tuple(fractions),
        alpha=alpha,
        implied_dimension=2.0 - alpha,
        n_pairs=n_pairs,
        fit_ok=bool(fit_ok),
        pair_counts=tuple(used),
    )


def dimension_report(box, uncertainty=None, boundary_fraction=None):
    doc = {"box_counting": box.as_dict()}
    if boundary_fraction is not None:
        doc["boundary_fraction"] = boundary_fraction
    doc["uncertainty"] = uncertainty.as_dict() if uncertainty is not None else None
    return doc


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def write_dimension_report(doc, path):
    path = Path(path)
    path.write_text(json.dumps(_json_safe(doc), indent=2, sort_keys=True) + "\n")
    return path
