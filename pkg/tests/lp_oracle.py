"""Independent dense materialization of the inner LP for oracle checks.

Builds the constraint matrices of an assembled problem from first principles
(explicit loops over constraint rows) so that tests can cross-check the
operator-form solver against a reference LP solver and the closed-form step
sizes against literal row/column sums.
"""

import numpy as np
from scipy.optimize import linprog


def variable_layout(p):
    """Column index maps for the free variables of a problem.

    Order: free F entries (row-major over (i, l)), alpha (edge-major over
    (e, l)), delta+, delta-. In eliminated mode labeled rows of F are
    constants and get index -1.
    """
    g, k = p.graph, p.k
    n, E = g.n, g.edge_count
    fmap = -np.ones((n, k), dtype=np.int64)
    nxt = 0
    for i in range(n):
        if p.eliminate_labels and not p.free[i]:
            continue
        for l in range(k):
            fmap[i, l] = nxt
            nxt += 1
    amap = np.arange(nxt, nxt + E * k).reshape(E, k)
    nxt += E * k
    dp0 = nxt
    dm0 = nxt + k
    return fmap, amap, dp0, dm0, nxt + 2 * k


def fixed_F_values(p):
    """Constant values of eliminated F entries (labeled rows)."""
    vals = np.zeros((p.graph.n, p.k))
    if p.eliminate_labels and p.label_idx.size:
        vals[p.label_idx, p.label_col] = 1.0
    return vals


def materialize(p):
    """Dense (A_ub, b_ub, A_eq, b_eq, c) of the LP over free variables."""
    g, k = p.graph, p.k
    n, E = g.n, g.edge_count
    fmap, amap, dp0, dm0, nvar = variable_layout(p)
    fixed = fixed_F_values(p)
    s, lam, w = p.subgrads, p.lam, g.weights

    c = np.zeros(nvar)
    c[dp0:dp0 + k] = 1.0
    c[dm0:dm0 + k] = -1.0

    A_ub_rows, b_ub = [], []
    A_eq_rows, b_eq = [], []

    # descent rows: <w, alpha_l> - lam_l <s_l, F_l> - m dp_l + M dm_l <= 0
    for l in range(k):
        row = np.zeros(nvar)
        rhs = 0.0
        for e in range(E):
            row[amap[e, l]] += w[e]
        for i in range(n):
            if fmap[i, l] >= 0:
                row[fmap[i, l]] -= lam[l] * s[i, l]
            else:
                rhs += lam[l] * s[i, l] * fixed[i, l]
        row[dp0 + l] = -p.m
        row[dm0 + l] = p.M
        A_ub_rows.append(row)
        b_ub.append(rhs)

    # simplex rows (one per non-eliminated vertex): sum_l F_il = 1
    for i in range(n):
        if p.eliminate_labels and not p.free[i]:
            continue
        row = np.zeros(nvar)
        for l in range(k):
            row[fmap[i, l]] = 1.0
        A_eq_rows.append(row)
        b_eq.append(1.0)

    # label rows (explicit mode only): F_{i, j_i} = 1
    if not p.eliminate_labels:
        for i, l in zip(p.label_idx, p.label_col):
            row = np.zeros(nvar)
            row[fmap[i, l]] = 1.0
            A_eq_rows.append(row)
            b_eq.append(1.0)

    # size rows: -<s_l, F_l> <= -m
    if p.size_constraints:
        for l in range(k):
            row = np.zeros(nvar)
            rhs = -p.m
            for i in range(n):
                if fmap[i, l] >= 0:
                    row[fmap[i, l]] = -s[i, l]
                else:
                    rhs += s[i, l] * fixed[i, l]
            A_ub_rows.append(row)
            b_ub.append(rhs)

    # linearization rows per edge and column
    ei, ej = g.edge_i, g.edge_j
    for variant in (+1.0, -1.0):  # eta then xi
        for l in range(k):
            for e in range(E):
                row = np.zeros(nvar)
                rhs = 0.0
                for vertex, sign in ((ei[e], variant), (ej[e], -variant)):
                    if fmap[vertex, l] >= 0:
                        row[fmap[vertex, l]] += sign
                    else:
                        rhs -= sign * fixed[vertex, l]
                row[amap[e, l]] -= 1.0
                A_ub_rows.append(row)
                b_ub.append(rhs)

    A_ub = np.asarray(A_ub_rows)
    A_eq = np.asarray(A_eq_rows) if A_eq_rows else np.zeros((0, nvar))
    return A_ub, np.asarray(b_ub), A_eq, np.asarray(b_eq), c


def solve_reference(p):
    """Optimal objective via scipy's LP solver on the materialized problem."""
    A_ub, b_ub, A_eq, b_eq, c = materialize(p)
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"reference LP solve failed: {res.message}")
    return res.fun, res


def row_column_sums(p):
    """Reciprocal |A| row/column sums of the full stacked matrix.

    Returns (tau, sigma) dictionaries keyed like the solver's preconditioner
    fields, derived purely from the materialized matrices.
    """
    A_ub, _, A_eq, _, _ = materialize(p)
    A = np.vstack([A_ub, A_eq])
    col = np.abs(A).sum(axis=0)
    row = np.abs(A).sum(axis=1)
    with np.errstate(divide="ignore"):
        tau = np.where(col > 0, 1.0 / np.where(col > 0, col, 1.0), 0.0)
        sigma = np.where(row > 0, 1.0 / np.where(row > 0, row, 1.0), 0.0)
    return tau, sigma
