"""Build the 83-node surrogate connectome bundled with the package.

The subject-level diffusion-imaging matrix used for brain-network runs is
not redistributed here. This script makes a stand-in with a similar
flavour: 83 regions in two hemispheres, each wired to its spatial
neighbours plus a few homotopic links, weights decaying with distance. The
matrix is balanced (symmetric Sinkhorn scaling) so every weighted degree is
1; diffusive map coupling with strength up to 1 then mixes node updates
convexly.

    python demos/make_surrogate_connectome.py src/chimera_basins/data/surrogate83.txt
"""

import sys

import numpy as np

from chimera_basins import Network, network_info, save_network


def surrogate_connectome(n=83, k_near=6, seed=2023):
    rng = np.random.default_rng(seed)
    left = n // 2
    hemi = np.r_[np.zeros(left), np.ones(n - left)]
    pos = rng.normal(size=(n, 3))
    pos /= np.linalg.norm(pos, axis=1, keepdims=True)
    pos[:, 0] = np.abs(pos[:, 0]) * np.where(hemi == 0, -1, 1)
    dist = np.linalg.norm(pos[:, None] - pos[None, :], axis=-1)
    same = hemi[:, None] == hemi[None, :]
    W = np.zeros((n, n))
    for i in range(n):
        cand = np.flatnonzero(same[i] & (np.arange(n) != i))
        near = cand[np.argsort(dist[i, cand])[:k_near]]
        W[i, near] = np.exp(-2.0 * dist[i, near]) * rng.uniform(0.5, 1.5, near.size)
    # sparse callosal links between mirrored regions
    for i in range(left):
        j = left + int(np.argmin(dist[i, left:] + 10 * (hemi[left:] == 0)))
        if rng.random() < 0.5:
            W[i, j] = np.exp(-2.0 * dist[i, j])
    W = np.maximum(W, W.T)
    # symmetric Sinkhorn: D W D with unit row sums
    d = np.ones(n)
    for _ in range(5000):
        d = np.sqrt(d / (W @ d))
    W = d[:, None] * W * d[None, :]
    W = np.round((W + W.T) / 2, 12)
    return Network(W, name="surrogate83")


if __name__ == "__main__":
    net = surrogate_connectome()
    info = network_info(net)
    print(f"{net.n_nodes} nodes, {info.edge_count} edges, degree range "
          f"[{min(info.degree_per_node):.6f}, {max(info.degree_per_node):.6f}]")
    if len(sys.argv) > 1:
        save_network(net, sys.argv[1])
