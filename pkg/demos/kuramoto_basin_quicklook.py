"""A coarse basin map for two populations of Kuramoto oscillators.

The full 200x200 map comes from ``chimera-basins run kuramoto-2pop``; this
script walks through the same steps by hand on a 40x40 grid, which takes a
minute or so on one core.

    python demos/kuramoto_basin_quicklook.py [resolution] [out.ppm]
"""

# %%
import sys
import time

import numpy as np

from chimera_basins import IntegrationConfig, VpsConfig, generate_two_population, make_model
from chimera_basins.basinmap import SliceSpec, build_basin_map, kmeans_cluster, select_k_elbow, sweep
from chimera_basins.cli import render_basin
from chimera_basins.fractal import box_count, extract_boundary, fit_box_dimension, InsufficientScalesError

n = int(sys.argv[1]) if len(sys.argv) > 1 else 40
out = sys.argv[2] if len(sys.argv) > 2 else "kuramoto_basins.ppm"

# %% ten oscillators in two all-to-all groups of five, one random edge removed
net = generate_two_population(5, 0.6, 0.4, drop_edge_seed=0)
model = make_model("kuramoto", net, sigma=1.0, gamma=0.025)
icfg = IntegrationConfig(dt=0.05, transient_time=200.0, window_time=200.0, sample_stride=2)
vcfg = VpsConfig()

# phases of node 0 and node 5 span the slice; the other eight are fixed at random
base = np.random.default_rng(0).uniform(0, 2 * np.pi, 10)
top = 2 * np.pi * (n - 1) / n
spec = SliceSpec((0, 0), (5, 0), (0.0, top), (0.0, top), (n, n), base, 1)

t = time.time()
vm = sweep(model, spec, icfg, vcfg, observable="sin-phase", chunk_size=64)
print(f"swept {spec.n_points} initial conditions in {time.time() - t:.1f}s")

# %% cluster count from the elbow of the inertia curve
k, curve = select_k_elbow(vm, 12, seed=0, restarts=5, return_curve=True)
print("inertia W(k)/W(1):", np.round(curve / curve[0], 3))
print("elbow k =", k)
bm = build_basin_map(vm, kmeans_cluster(vm, k, seed=0, restarts=10))
print("cluster sizes:", np.bincount(bm.clustering.labels))

# %% the boundary and its box-counting dimension
bg = extract_boundary(bm)
print(f"boundary cells: {bg.mean():.1%}")
counts = box_count(bg)
print("N(eps):", counts.scales)
try:
    print("d_box = %.3f" % fit_box_dimension(counts).d_box)
except InsufficientScalesError as exc:
    print("d_box unavailable:", exc)

render_basin(bm.label_grid, 0, out, boundary=bg)
print("wrote", out)
