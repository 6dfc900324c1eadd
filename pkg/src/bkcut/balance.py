"""Balancing set functions, their convex extensions, and greedy subgradients.

Six balance functions are supported. With ``|C|`` the cardinality of a vertex
set, ``vol(C)`` its weighted-degree volume, and ``k`` the target number of
clusters:

======== ===========================================
rcut      ``|C|``
rcc-sym   ``min(|C|, |V \\ C|)``
rcc-asym  ``min((k-1)|C|, |V \\ C|)``
ncut      ``vol(C)``
ncc-sym   ``min(vol(C), vol(V) - vol(C))``
ncc-asym  ``min((k-1)vol(C), vol(V) - vol(C))``
======== ===========================================

All are submodular and vanish on the empty set, so their extensions are
convex and positively 1-homogeneous.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError

KINDS = ("rcut", "rcc-sym", "rcc-asym", "ncut", "ncc-sym", "ncc-asym")


class BalanceFunction:
    """A balancing set function bound to a vertex-weight vector.

    Parameters
    ----------
    kind : str
        One of :data:`KINDS` (case insensitive).
    k : int
        Number of clusters; only the asymmetric kinds depend on it.
    graph : Graph, optional
        Required for the volume-weighted ``n*`` kinds; also supplies ``n``.
    n : int, optional
        Vertex count for cardinality kinds when no graph is given.
    """

    def __init__(self, kind, k, graph=None, n=None):
        kind = str(kind).lower()
        if kind not in KINDS:
            raise InvalidInputError(f"unknown balance kind {kind!r}; pick from {KINDS}")
        k = int(k)
        if k < 2:
            raise InvalidInputError("k must be at least 2")
        self.kind = kind
        self.k = k
        self.volume_weighted = kind.startswith("n")
        if self.volume_weighted:
            if graph is None:
                raise InvalidInputError(f"{kind} needs a graph for vertex volumes")
            weights = np.asarray(graph.degrees, dtype=np.float64)
            if weights.min() <= 0:
                raise InvalidInputError(
                    "volume-weighted balance undefined on graphs with isolated vertices"
                )
        else:
            if graph is not None:
                n = graph.n
            if n is None:
                raise InvalidInputError("need a graph or an explicit vertex count")
            weights = np.ones(int(n))
        self.n = weights.size
        if self.n < 2:
            raise InvalidInputError("need at least two vertices")
        if kind.endswith("asym") and k > self.n:
            raise InvalidInputError("asymmetric kinds require k <= n")
        self._weights = weights
        self._total = float(weights.sum())

    # ------------------------------------------------------------------
    @property
    def vertex_weights(self):
        """Per-vertex weights: all ones, or the degrees for volume kinds."""
        return self._weights

    def value_of_mass(self, mass):
        """Set-function value as a function of the weight mass of the set.

        Vectorized; every supported kind depends on a set only through its
        total vertex weight.
        """
        mass = np.asarray(mass, dtype=np.float64)
        if self.kind in ("rcut", "ncut"):
            return mass
        if self.kind.endswith("-asym"):
            return np.minimum((self.k - 1) * mass, self._total - mass)
        return np.minimum(mass, self._total - mass)

    def set_value(self, C):
        """Value on a vertex set given as an index array."""
        C = np.asarray(C, dtype=np.int64).ravel()
        if C.size:
            if C.min() < 0 or C.max() >= self.n:
                raise InvalidInputError("vertex set out of range")
            if np.unique(C).size != C.size:
                raise InvalidInputError("vertex set contains duplicates")
        return float(self.value_of_mass(self._weights[C].sum()))

    def _chain_values(self, f):
        """Sorted order and set values along the superlevel-set chain.

        Sorting is stable in (value, index) so runs are reproducible. Entry
        ``i`` of the returned value array is the set function evaluated on the
        vertices strictly after position ``i`` in the sorted order; entry 0
        corresponds to the full vertex set.
        """
        f = np.asarray(f, dtype=np.float64).ravel()
        if f.size != self.n:
            raise InvalidInputError(f"expected vector of length {self.n}, got {f.size}")
        order = np.lexsort((np.arange(self.n), f))
        suffix = np.empty(self.n + 1)
        suffix[0] = self._total
        suffix[1:] = self._total - np.cumsum(self._weights[order])
        suffix[-1] = 0.0
        return f, order, self.value_of_mass(suffix)

    def lovasz_value(self, f):
        """Convex extension value at a real vector.

        Agrees with :meth:`set_value` on 0/1 indicator vectors and is
        positively 1-homogeneous.
        """
        f, order, chain = self._chain_values(f)
        return float(f[order] @ (chain[:-1] - chain[1:]))

    def subgradient(self, f):
        """Greedy subgradient ``s`` of the extension at ``f``.

        Satisfies ``<s, f> == lovasz_value(f)`` and
        ``lovasz_value(g) >= <s, g>`` for every ``g``; ties in ``f`` are
        resolved by vertex index, making the result deterministic.
        """
        f, order, chain = self._chain_values(f)
        s = np.empty(self.n)
        s[order] = chain[:-1] - chain[1:]
        return s

    def min_value(self):
        """Lower bound ``m`` on the balance of any cluster of a k-partition."""
        base = 1.0 if not self.volume_weighted else float(self._weights.min())
        if self.kind.endswith("asym"):
            return (self.k - 1) * base
        return base

    def max_value(self):
        """Upper bound ``M`` on the extension over the unit box.

        Exact for the cardinality kinds (maximum over integer set sizes); for
        the volume-weighted kinds the continuous upper bound is used, which
        only loosens the constraint it feeds.
        """
        if not self.volume_weighted:
            sizes = np.arange(self.n + 1, dtype=np.float64)
            return float(self.value_of_mass(sizes).max())
        if self.kind == "ncut":
            return self._total
        if self.kind == "ncc-sym":
            return self._total / 2.0
        return (self.k - 1) * self._total / self.k
