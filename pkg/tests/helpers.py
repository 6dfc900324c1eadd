"""Shared test utilities: random graphs, brute-force cut enumeration."""

import numpy as np

from bkcut.graph import Graph


def random_graph(rng, n, p=0.5, w_lo=0.2, w_hi=2.0, connected=False):
    """Erdos-Renyi style weighted graph; optionally force connectivity by
    adding a random spanning path."""
    ei, ej, w = [], [], []
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p:
                ei.append(i)
                ej.append(j)
                w.append(rng.uniform(w_lo, w_hi))
    if connected:
        perm = rng.permutation(n)
        have = {(min(a, b), max(a, b)) for a, b in zip(ei, ej)}
        for a, b in zip(perm[:-1], perm[1:]):
            key = (min(a, b), max(a, b))
            if key not in have:
                ei.append(key[0])
                ej.append(key[1])
                w.append(rng.uniform(w_lo, w_hi))
                have.add(key)
    if not ei:  # guarantee at least one edge
        ei, ej, w = [0], [1], [1.0]
    return Graph(n, ei, ej, w)


def random_simplex_rows(rng, n, k):
    return rng.dirichlet(np.ones(k), size=n)


def popcount(masks):
    return np.bitwise_count(masks.astype(np.uint64)).astype(np.int64)


def enumerate_two_cuts(g, vertex_weights=None, chunk=1 << 16):
    """Cut weight and set mass for every nonempty strict subset.

    Returns (masks, cuts, mass) where ``masks`` enumerates 1 .. 2^n - 2 and
    ``mass[m]`` is the total vertex weight of the subset encoded by mask m.
    Only for n <= ~22.
    """
    n = g.n
    if n > 22:
        raise ValueError("brute force limited to n <= 22")
    u = np.ones(n) if vertex_weights is None else np.asarray(vertex_weights, float)
    total = 1 << n
    masks = np.arange(1, total - 1, dtype=np.uint64)
    cuts = np.empty(masks.size)
    mass = np.empty(masks.size)
    ei = g.edge_i.astype(np.uint64)
    ej = g.edge_j.astype(np.uint64)
    w = g.weights
    bit_weights = u
    for lo in range(0, masks.size, chunk):
        part = masks[lo:lo + chunk]
        bi = (part[:, None] >> ei[None, :]) & np.uint64(1)
        bj = (part[:, None] >> ej[None, :]) & np.uint64(1)
        cuts[lo:lo + chunk] = ((bi ^ bj) * w[None, :]).sum(axis=1)
        bits = (part[:, None] >> np.arange(n, dtype=np.uint64)[None, :]) & np.uint64(1)
        mass[lo:lo + chunk] = (bits * bit_weights[None, :]).sum(axis=1)
    return masks, cuts, mass


def best_two_cut(g, bf):
    """Brute-force minimizer of cut(C)/S(C) over nonempty strict subsets.

    Returns (ratio, subset_indices).
    """
    masks, cuts, mass = enumerate_two_cuts(g, bf.vertex_weights)
    bal = bf.value_of_mass(mass)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(bal > 0, cuts / np.where(bal > 0, bal, 1.0), np.inf)
    best = int(np.argmin(ratio))
    subset = np.flatnonzero((int(masks[best]) >> np.arange(g.n)) & 1)
    return float(ratio[best]), subset
