"""Box counting and the uncertainty exponent on sets with known dimension.

    python demos/fractal_dimension_checks.py
"""

import math

import numpy as np

from chimera_basins.fractal import box_dimension, extract_boundary, uncertainty_exponent

n = 256

# %% Sierpinski gasket via Pascal's triangle mod 2
r, c = np.indices((n, n))
gasket = (r & c) == 0
res = box_dimension(gasket)
print(f"gasket   d_box = {res.d_box:.4f}  (log3/log2 = {math.log(3) / math.log(2):.4f}), "
      f"window {res.scale_window}, r^2 {res.fit_r2:.5f}")

# %% a straight interface between two basins
half = np.zeros((n, n), dtype=int)
half[:, n // 2:] = 1
print(f"line     d_box = {box_dimension(extract_boundary(half)).d_box:.4f}")
print(f"plane    d_box = {box_dimension(np.ones((n, n), bool)).d_box:.4f}")

# %% uncertainty exponent: pairs eps apart straddle the line with probability ~ eps
u = uncertainty_exponent(half, [2, 4, 8, 16, 32], n_pairs=20000, seed=1)
for e, f in zip(u.epsilons, u.uncertain_fraction):
    print(f"  eps {e:4.0f}: uncertain fraction {f:.4f}")
print(f"alpha = {u.alpha:.3f}, implied boundary dimension {u.implied_dimension:.3f}")

# %% a random speckle of labels has a plane-filling boundary
speckle = np.random.default_rng(0).integers(0, 3, size=(n, n))
print(f"speckle  d_box = {box_dimension(extract_boundary(speckle)).d_box:.4f}")
