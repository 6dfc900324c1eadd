"""Sparse weighted graphs: k-NN construction, cuts, total variation, components.

Edges of an undirected graph are stored exactly once in canonical orientation
``i < j``, so per-edge quantities (total variation terms, the per-edge LP
variables) have length ``|E|``.
"""

from __future__ import annotations

import csv

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .errors import InvalidInputError

# Gaussian edge weights below this are dropped to keep the edge set sparse.
WEIGHT_DROP_THRESHOLD = 1e-12


class Graph:
    """Immutable undirected weighted graph.

    Parameters
    ----------
    n : int
        Number of vertices, indexed ``0 .. n-1``.
    edge_i, edge_j : array_like of int
        Edge endpoints. Orientation does not matter; edges are canonicalized
        to ``i < j``. Self-loops and duplicate edges are rejected.
    weights : array_like of float
        Strictly positive edge weights.

    Attributes
    ----------
    n : int
        Vertex count.
    edge_i, edge_j : ndarray
        Canonical endpoints with ``edge_i < edge_j``, sorted lexicographically.
    weights : ndarray
        Edge weights aligned with the endpoint arrays.
    degrees : ndarray
        Weighted vertex degrees ``d_i = sum_j w_ij``.
    degree_counts : ndarray
        Number of incident edges per vertex.
    """

    def __init__(self, n, edge_i, edge_j, weights):
        n = int(n)
        if n < 1:
            raise InvalidInputError("graph needs at least one vertex")
        ei = np.asarray(edge_i, dtype=np.int64).ravel()
        ej = np.asarray(edge_j, dtype=np.int64).ravel()
        w = np.asarray(weights, dtype=np.float64).ravel()
        if not (ei.shape == ej.shape == w.shape):
            raise InvalidInputError("edge arrays must have identical length")
        if ei.size:
            if ei.min() < 0 or ej.min() < 0 or ei.max() >= n or ej.max() >= n:
                raise InvalidInputError("edge endpoint out of range")
            if np.any(ei == ej):
                raise InvalidInputError("self-loops are not allowed")
            if not np.all(np.isfinite(w)) or np.any(w <= 0):
                raise InvalidInputError("edge weights must be finite and strictly positive")
        lo = np.minimum(ei, ej)
        hi = np.maximum(ei, ej)
        order = np.lexsort((hi, lo))
        lo, hi, w = lo[order], hi[order], w[order]
        if lo.size > 1:
            same = (lo[1:] == lo[:-1]) & (hi[1:] == hi[:-1])
            if np.any(same):
                dup = np.flatnonzero(same)[0]
                raise InvalidInputError(
                    f"duplicate edge ({lo[dup]}, {hi[dup]})"
                )
        self.n = n
        self.edge_i = lo
        self.edge_j = hi
        self.weights = w
        deg = np.zeros(n)
        np.add.at(deg, lo, w)
        np.add.at(deg, hi, w)
        self.degrees = deg
        cnt = np.zeros(n, dtype=np.int64)
        np.add.at(cnt, lo, 1)
        np.add.at(cnt, hi, 1)
        self.degree_counts = cnt
        for arr in (self.edge_i, self.edge_j, self.weights, self.degrees,
                    self.degree_counts):
            arr.setflags(write=False)
        self._incidence = None

    @property
    def edge_count(self):
        return self.edge_i.size

    def incidence(self):
        """Signed incidence matrix ``B`` of shape ``(n, |E|)``.

        Column ``e`` of edge ``(i, j)`` (canonical ``i < j``) carries ``+1``
        at row ``i`` and ``-1`` at row ``j``, so ``(B z)_i`` sums ``z_e`` over
        edges leaving ``i`` minus edges entering it.
        """
        if self._incidence is None:
            m = self.edge_count
            rows = np.concatenate([self.edge_i, self.edge_j])
            cols = np.concatenate([np.arange(m), np.arange(m)])
            vals = np.concatenate([np.ones(m), -np.ones(m)])
            self._incidence = sparse.csr_matrix(
                (vals, (rows, cols)), shape=(self.n, m)
            )
        return self._incidence

    def incident_edges(self, v):
        """Indices of edges incident to vertex ``v``."""
        return np.flatnonzero((self.edge_i == v) | (self.edge_j == v))

    def adjacency(self):
        """Symmetric sparse weight matrix."""
        m = self.edge_count
        rows = np.concatenate([self.edge_i, self.edge_j])
        cols = np.concatenate([self.edge_j, self.edge_i])
        vals = np.concatenate([self.weights, self.weights])
        return sparse.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))


def cut_value(g, A):
    """Weight of the cut between vertex set ``A`` and its complement.

    ``A`` may be empty or the full vertex set; both give 0.
    """
    A = np.asarray(A, dtype=np.int64).ravel()
    mask = np.zeros(g.n, dtype=bool)
    if A.size:
        if A.min() < 0 or A.max() >= g.n:
            raise InvalidInputError("vertex set out of range")
        mask[A] = True
    crossing = mask[g.edge_i] ^ mask[g.edge_j]
    return float(g.weights[crossing].sum())


def total_variation(g, f):
    """Graph total variation ``sum_e w_e |f_i - f_j|`` over canonical edges.

    Equals the cut value when ``f`` is a 0/1 indicator vector.
    """
    f = np.asarray(f, dtype=np.float64).ravel()
    if f.size != g.n:
        raise InvalidInputError(f"expected vector of length {g.n}, got {f.size}")
    return float(np.abs(f[g.edge_i] - f[g.edge_j]) @ g.weights)


def connected_components(g):
    """Partition of the vertices into maximal connected components.

    Returns a list of sorted index arrays, ordered by smallest member.
    """
    ncomp, labels = csgraph.connected_components(g.adjacency(), directed=False)
    return [np.flatnonzero(labels == c) for c in range(ncomp)]


def build_knn_graph(points, k, s=1.0):
    """Symmetric k-NN graph with locally scaled Gaussian weights.

    An edge ``(x, y)`` exists iff ``y`` is among the ``k`` nearest neighbors
    of ``x`` or vice versa. Its weight is
    ``exp(-s * ||x - y||^2 / min(sigma_x^2, sigma_y^2))`` where ``sigma_x`` is
    the distance from ``x`` to its k-th nearest neighbor. Distance ties are
    broken toward the lower point index. Weights below
    ``WEIGHT_DROP_THRESHOLD`` are dropped.

    Parameters
    ----------
    points : array_like, shape (n, d)
    k : int
        Number of neighbors; requires ``n >= k + 1``.
    s : float
        Positive scale factor inside the Gaussian.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise InvalidInputError("points must be a 2-d array")
    n = pts.shape[0]
    k = int(k)
    if k < 1:
        raise InvalidInputError("k must be positive")
    if n < k + 1:
        raise InvalidInputError(f"need at least k+1={k + 1} points, got {n}")
    if not s > 0:
        raise InvalidInputError("scale s must be positive")

    # Exact neighbor search in chunks; stable argsort breaks distance ties
    # toward the lower index.
    d = pts.shape[1]
    sigma_sq = np.empty(n)
    nbrs = np.empty((n, k), dtype=np.int64)
    chunk = max(1, int(8_000_000 // max(1, n * d)))
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        block = ((pts[lo:hi, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        block[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        order = np.argsort(block, axis=1, kind="stable")[:, :k]
        nbrs[lo:hi] = order
        sigma_sq[lo:hi] = block[np.arange(hi - lo)[:, None], order][:, -1]

    pos = sigma_sq[sigma_sq > 0]
    floor = float(pos.min()) if pos.size else 1.0
    sigma_sq = np.where(sigma_sq > 0, sigma_sq, floor)

    src = np.repeat(np.arange(n, dtype=np.int64), k)
    dst = nbrs.ravel()
    lo_idx = np.minimum(src, dst)
    hi_idx = np.maximum(src, dst)
    keys = lo_idx * n + hi_idx
    uniq = np.unique(keys)
    ei = uniq // n
    ej = uniq % n

    dist_sq = ((pts[ei] - pts[ej]) ** 2).sum(axis=1)
    local = np.minimum(sigma_sq[ei], sigma_sq[ej])
    w = np.exp(-s * dist_sq / local)
    keep = w >= WEIGHT_DROP_THRESHOLD
    return Graph(n, ei[keep], ej[keep], w[keep])


def load_edge_list(path):
    """Read a graph from a text file with lines ``i j w`` (0-based indices).

    Blank lines and lines starting with ``#`` are skipped. Duplicate edges
    (in either orientation) and self-loops are rejected.
    """
    ei, ej, w = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise InvalidInputError(
                    f"{path}:{ln}: expected 'i j w', got {len(parts)} fields"
                )
            try:
                a, b = int(parts[0]), int(parts[1])
                weight = float(parts[2])
            except ValueError as exc:
                raise InvalidInputError(f"{path}:{ln}: {exc}") from None
            if a == b:
                raise InvalidInputError(f"{path}:{ln}: self-loop on vertex {a}")
            if weight <= 0:
                raise InvalidInputError(f"{path}:{ln}: weight must be positive")
            ei.append(a)
            ej.append(b)
            w.append(weight)
    if not ei:
        raise InvalidInputError(f"{path}: no edges found")
    n = max(max(ei), max(ej)) + 1
    try:
        return Graph(n, ei, ej, w)
    except InvalidInputError as exc:
        raise InvalidInputError(f"{path}: {exc}") from None


def load_points(path, label_column=False, delimiter=None):
    """Read a point set from a CSV/TSV/whitespace table.

    Parameters
    ----------
    path : str
    label_column : bool
        When true, the final column holds class labels and is returned as an
        integer array (classes mapped to ``0..c-1`` in sorted order).
    delimiter : str or None
        Field delimiter; sniffed from the first line when None.

    Returns
    -------
    (points, labels) : tuple of ndarray and (ndarray or None)
    """
    rows = []
    raw_labels = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
        if not first.strip():
            raise InvalidInputError(f"{path}: empty file")
        if delimiter is None:
            if "\t" in first:
                delimiter = "\t"
            elif "," in first:
                delimiter = ","
        fh.seek(0)
        if delimiter is None:
            reader = ((ln, line.split()) for ln, line in enumerate(fh, start=1))
        else:
            reader = enumerate(csv.reader(fh, delimiter=delimiter), start=1)
        for ln, parts in reader:
            parts = [p.strip() for p in parts if p.strip() != ""]
            if not parts:
                continue
            if width is None:
                width = len(parts)
                if width < (2 if label_column else 1):
                    raise InvalidInputError(f"{path}:{ln}: too few columns")
            elif len(parts) != width:
                raise InvalidInputError(
                    f"{path}:{ln}: expected {width} columns, got {len(parts)}"
                )
            feature_part = parts[:-1] if label_column else parts
            try:
                rows.append([float(v) for v in feature_part])
            except ValueError as exc:
                raise InvalidInputError(f"{path}:{ln}: {exc}") from None
            if label_column:
                raw_labels.append(parts[-1])
    if not rows:
        raise InvalidInputError(f"{path}: no data rows")
    points = np.asarray(rows, dtype=np.float64)
    labels = None
    if label_column:
        try:
            vals = np.asarray([float(v) for v in raw_labels])
            classes = np.unique(vals)
            labels = np.searchsorted(classes, vals).astype(np.int64)
        except ValueError:
            classes = sorted(set(raw_labels))
            lookup = {c: i for i, c in enumerate(classes)}
            labels = np.asarray([lookup[v] for v in raw_labels], dtype=np.int64)
    return points, labels
