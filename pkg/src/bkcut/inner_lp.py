"""Convex inner step: LP assembly and a diagonally preconditioned primal-dual solver.

Each outer iteration of the descent scheme solves the linear program

    minimize    sum_l  delta+_l - delta-_l
    subject to  <w, alpha_l> <= lam_l <s_l, F_l> + m delta+_l - M delta-_l   (descent)
                sum_l F_il = 1                                              (simplex)
                F_{i, j_i} = 1  for labeled vertices                        (labels)
                <s_l, F_l> >= m                                             (size)
                -alpha_el <= F_il - F_jl <= alpha_el  per edge e=(i,j)      (linearization)
                F, alpha, delta+, delta- >= 0

over ``F in R^{n x k}``, per-edge slacks ``alpha in R^{|E| x k}`` and scalars
``delta+- in R^k``. The solver is a primal-dual hybrid gradient iteration with
per-coordinate diagonal step sizes equal to the reciprocal absolute row/column
sums of the constraint matrix. The matrix itself is never materialized; one
iteration costs O(|E| k).

Label constraints are integrated by variable elimination by default: labeled
rows of F are frozen at their 0/1 values (their step sizes are zero), the
label multipliers disappear, and the remaining step sizes are the row/column
sums of the reduced matrix. ``eliminate_labels=False`` keeps the label rows
and their multipliers explicit, which is useful for cross-checking the
step-size formulas.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateRunError,
    InfeasibleIterateError,
    InvalidInputError,
    NumericFailureError,
)
from .graph import total_variation

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pure-numpy fallback, ~10x slower
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn
        return wrap

# Relative slack allowed on S(F_l) >= m when linearizing around an iterate
# produced by an approximate inner solve.
FEASIBILITY_RTOL = 1e-3

# Row-simplex tolerance for iterates entering assemble().
SIMPLEX_TOL = 1e-5

# Consecutive residual checks without improvement before a solve is declared
# stalled at its floating-point floor.
STALL_CHECKS = 20


@dataclass
class LPProblem:
    """Data of one inner LP."""

    graph: object
    k: int
    lam: np.ndarray          # (k,) current ratios
    subgrads: np.ndarray     # (n, k) per-column subgradients
    label_idx: np.ndarray    # (p,) labeled vertices, sorted
    label_col: np.ndarray    # (p,) their target columns
    m: float
    M: float
    F_ref: np.ndarray        # (n, k) linearization point (cold-start iterate)
    size_constraints: bool = True
    eliminate_labels: bool = True
    free: np.ndarray = field(init=False)  # (n,) rows not pinned by a label

    def __post_init__(self):
        free = np.ones(self.graph.n, dtype=bool)
        if self.eliminate_labels and self.label_idx.size:
            free[self.label_idx] = False
        self.free = free


@dataclass
class Preconditioners:
    tau_F: np.ndarray        # (n, k); zero on frozen entries
    tau_alpha: np.ndarray    # (E,)
    tau_dp: float
    tau_dm: float
    sigma_theta: np.ndarray  # (k,)
    sigma_mu: np.ndarray     # (n,); zero on eliminated simplex rows
    sigma_zeta: float        # explicit mode only
    sigma_nu: np.ndarray     # (k,); zero when the size row is absent
    sigma_eta: np.ndarray    # (E,)
    sigma_xi: np.ndarray     # (E,)


@dataclass
class LPState:
    """All primal and dual iterates, reusable as a warm start."""

    F: np.ndarray
    alpha: np.ndarray
    dp: np.ndarray
    dm: np.ndarray
    theta: np.ndarray
    mu: np.ndarray
    zeta: np.ndarray | None
    nu: np.ndarray
    eta: np.ndarray
    xi: np.ndarray

    def copy(self):
        return LPState(
            self.F.copy(), self.alpha.copy(), self.dp.copy(), self.dm.copy(),
            self.theta.copy(), self.mu.copy(),
            None if self.zeta is None else self.zeta.copy(),
            self.nu.copy(), self.eta.copy(), self.xi.copy(),
        )


@dataclass
class LPSolution:
    F: np.ndarray
    dp: np.ndarray
    dm: np.ndarray
    objective: float
    iterations: int
    converged: bool
    residuals: dict
    history: list
    state: LPState


def assemble(g, bf, F_t, labels=None, *, size_constraints=True,
             eliminate_labels=True, m=None, M=None):
    """Linearize the sum-of-ratios problem around ``F_t``.

    Parameters
    ----------
    g : Graph
    bf : BalanceFunction
    F_t : ndarray, shape (n, k)
        Current iterate; rows must lie on the simplex and every column must
        satisfy ``S(F_l) >= m`` up to a small relative slack.
    labels : tuple (idx, col) or None
        Hard label constraints ``F[idx, col] = 1``.
    size_constraints : bool
        Drop the per-column size rows when false (diagnostic mode).
    eliminate_labels : bool
        Integrate labels by freezing variables instead of keeping multipliers.
    m, M : float, optional
        Override the balance bounds (defaults come from ``bf``).
    """
    F_t = np.asarray(F_t, dtype=np.float64)
    n, k = g.n, bf.k
    if F_t.shape != (n, k):
        raise InvalidInputError(f"expected F of shape {(n, k)}, got {F_t.shape}")
    if np.any(F_t < -1e-9) or np.max(np.abs(F_t.sum(axis=1) - 1.0)) > SIMPLEX_TOL:
        raise InfeasibleIterateError("iterate rows are not on the simplex")
    m = bf.min_value() if m is None else float(m)
    M = bf.max_value() if M is None else float(M)
    if m > M:
        raise InvalidInputError("m must not exceed M")

    lam = np.empty(k)
    subgrads = np.empty((n, k))
    for l in range(k):
        col = F_t[:, l]
        s_val = bf.lovasz_value(col)
        if s_val <= m * 1e-8:
            if size_constraints:
                raise DegenerateRunError(
                    f"column {l} collapsed: balance value {s_val:.3g}"
                )
            lam[l] = 0.0  # 0/0 extended by continuity; see column_ratios
        elif size_constraints and s_val < m * (1.0 - FEASIBILITY_RTOL):
            raise InfeasibleIterateError(
                f"column {l} has balance value {s_val:.6g} below m={m:.6g}"
            )
        else:
            lam[l] = total_variation(g, col) / s_val
        subgrads[:, l] = bf.subgradient(col)

    if labels is None:
        label_idx = np.empty(0, dtype=np.int64)
        label_col = np.empty(0, dtype=np.int64)
    else:
        label_idx = np.asarray(labels[0], dtype=np.int64).ravel()
        label_col = np.asarray(labels[1], dtype=np.int64).ravel()
        if label_idx.size != label_col.size:
            raise InvalidInputError("label index/column arrays differ in length")
        if label_idx.size:
            order = np.argsort(label_idx)
            label_idx, label_col = label_idx[order], label_col[order]
            if np.unique(label_idx).size != label_idx.size:
                raise InvalidInputError("a vertex may carry at most one label")
            if label_idx.min() < 0 or label_idx.max() >= n:
                raise InvalidInputError("label vertex out of range")
            if label_col.min() < 0 or label_col.max() >= k:
                raise InvalidInputError("label column out of range")

    return LPProblem(
        graph=g, k=k, lam=lam, subgrads=subgrads,
        label_idx=label_idx, label_col=label_col, m=m, M=M,
        F_ref=F_t.copy(), size_constraints=size_constraints,
        eliminate_labels=eliminate_labels,
    )


def compute_preconditioners(p):
    """Diagonal step sizes: reciprocal absolute row/column sums.

    In explicit-label mode these equal the closed forms

        tau_F[il]    = 1 / ((1+lam_l)|s_il| + 2 dt_i + rho_il + 1)
        tau_alpha[e] = 1 / (w_e + 2)
        tau_dp       = 1/m,  tau_dm = 1/M
        sigma_theta  = 1 / (<w,1> + lam_l sum|s_l| + m + M)
        sigma_mu     = 1/k,  sigma_zeta = 1,  sigma_nu = 1 / sum|s_l|
        sigma_eta = sigma_xi = 1/3

    with ``dt_i`` the incident-edge count and ``rho_il = 1`` on labeled
    entries. In eliminated mode the sums skip the frozen variables and rows.
    """
    g, k = p.graph, p.k
    n, E = g.n, g.edge_count
    abs_s = np.abs(p.subgrads)
    dt = g.degree_counts.astype(np.float64)

    if p.eliminate_labels:
        rho = np.zeros((n, k))
    else:
        rho = np.zeros((n, k))
        if p.label_idx.size:
            rho[p.label_idx, p.label_col] = 1.0

    denom = (1.0 + p.lam)[None, :] * abs_s + 2.0 * dt[:, None] + rho + 1.0
    tau_F = 1.0 / denom
    if p.eliminate_labels:
        tau_F[~p.free, :] = 0.0

    tau_alpha = 1.0 / (g.weights + 2.0)

    if p.eliminate_labels:
        s_sum = abs_s[p.free, :].sum(axis=0)
    else:
        s_sum = abs_s.sum(axis=0)
    w_sum = float(g.weights.sum())
    sigma_theta = 1.0 / (w_sum + p.lam * s_sum + p.m + p.M)

    sigma_mu = np.full(n, 1.0 / k)
    if p.eliminate_labels:
        sigma_mu[~p.free] = 0.0

    if p.size_constraints:
        with np.errstate(divide="ignore"):
            sigma_nu = np.where(s_sum > 0, 1.0 / np.where(s_sum > 0, s_sum, 1.0), 0.0)
    else:
        sigma_nu = np.zeros(k)

    if p.eliminate_labels:
        free_ends = p.free[g.edge_i].astype(np.float64) + p.free[g.edge_j]
        sigma_eta = 1.0 / (1.0 + free_ends)
    else:
        sigma_eta = np.full(E, 1.0 / 3.0)

    return Preconditioners(
        tau_F=tau_F, tau_alpha=tau_alpha, tau_dp=1.0 / p.m, tau_dm=1.0 / p.M,
        sigma_theta=sigma_theta, sigma_mu=sigma_mu, sigma_zeta=1.0,
        sigma_nu=sigma_nu, sigma_eta=sigma_eta, sigma_xi=sigma_eta.copy(),
    )


def _initial_state(p):
    F = p.F_ref.copy()
    if p.label_idx.size:
        F[p.label_idx, :] = 0.0
        F[p.label_idx, p.label_col] = 1.0
    alpha = np.abs(F[p.graph.edge_i] - F[p.graph.edge_j])
    k, E, n = p.k, p.graph.edge_count, p.graph.n
    zeta = None if p.eliminate_labels else np.zeros(p.label_idx.size)
    return LPState(
        F=F, alpha=alpha, dp=np.zeros(k), dm=np.zeros(k),
        theta=np.zeros(k), mu=np.zeros(n), zeta=zeta,
        nu=np.zeros(k), eta=np.zeros((E, k)), xi=np.zeros((E, k)),
    )


def _adopt_warm_start(p, warm):
    st = _initial_state(p)
    if warm is None:
        return st
    shapes_ok = (
        warm.F.shape == st.F.shape and warm.alpha.shape == st.alpha.shape
        and warm.eta.shape == st.eta.shape
    )
    if not shapes_ok:
        return st
    st.F = warm.F.copy()
    if p.label_idx.size:
        st.F[p.label_idx, :] = 0.0
        st.F[p.label_idx, p.label_col] = 1.0
    st.alpha = warm.alpha.copy()
    st.dp = warm.dp.copy()
    st.dm = warm.dm.copy()
    st.theta = warm.theta.copy()
    st.mu = warm.mu.copy()
    st.nu = warm.nu.copy()
    st.eta = warm.eta.copy()
    st.xi = warm.xi.copy()
    if not p.eliminate_labels:
        if warm.zeta is not None and warm.zeta.size == p.label_idx.size:
            st.zeta = warm.zeta.copy()
    return st


@njit(cache=True)
def _run_chunk(iters, ei, ej, w, s, lam, m, M,
               tauF, tauA, taudp, taudm, sigth, sigmu, signu, sigeta, sigxi,
               li, lc, explicit,
               F, alpha, dp, dm, theta, mu, zeta, nu, eta, xi,
               Fb, ab, BT):
    """Run ``iters`` primal-dual iterations in place."""
    n, k = F.shape
    E = ei.size
    p = li.size
    dpb = np.empty(k)
    dmb = np.empty(k)
    wab = np.empty(k)
    sFb = np.empty(k)
    for _ in range(iters):
        # BT <- B(eta - xi) plus the label-multiplier scatter
        for i in range(n):
            for l in range(k):
                BT[i, l] = 0.0
        for e in range(E):
            a, b = ei[e], ej[e]
            for l in range(k):
                z = eta[e, l] - xi[e, l]
                BT[a, l] += z
                BT[b, l] -= z
        if explicit:
            for t in range(p):
                BT[li[t], lc[t]] += zeta[t]
        # primal updates with extrapolation
        for i in range(n):
            for l in range(k):
                gf = -(theta[l] * lam[l] + nu[l]) * s[i, l] + mu[i] + BT[i, l]
                fn = F[i, l] - tauF[i, l] * gf
                if fn < 0.0:
                    fn = 0.0
                Fb[i, l] = 2.0 * fn - F[i, l]
                F[i, l] = fn
        for e in range(E):
            for l in range(k):
                ga = w[e] * theta[l] - eta[e, l] - xi[e, l]
                an = alpha[e, l] - tauA[e] * ga
                if an < 0.0:
                    an = 0.0
                ab[e, l] = 2.0 * an - alpha[e, l]
                alpha[e, l] = an
        for l in range(k):
            dpn = dp[l] - taudp * (1.0 - m * theta[l])
            if dpn < 0.0:
                dpn = 0.0
            dmn = dm[l] - taudm * (M * theta[l] - 1.0)
            if dmn < 0.0:
                dmn = 0.0
            dpb[l] = 2.0 * dpn - dp[l]
            dmb[l] = 2.0 * dmn - dm[l]
            dp[l] = dpn
            dm[l] = dmn
        # dual updates at the extrapolated point
        for l in range(k):
            wab[l] = 0.0
            sFb[l] = 0.0
        for e in range(E):
            for l in range(k):
                wab[l] += w[e] * ab[e, l]
        for i in range(n):
            for l in range(k):
                sFb[l] += s[i, l] * Fb[i, l]
        for l in range(k):
            th = theta[l] + sigth[l] * (wab[l] - lam[l] * sFb[l]
                                        - m * dpb[l] + M * dmb[l])
            theta[l] = th if th > 0.0 else 0.0
            nv = nu[l] + signu[l] * (m - sFb[l])
            nu[l] = nv if nv > 0.0 else 0.0
        for i in range(n):
            rs = 0.0
            for l in range(k):
                rs += Fb[i, l]
            mu[i] += sigmu[i] * (rs - 1.0)
        if explicit:
            for t in range(p):
                zeta[t] += Fb[li[t], lc[t]] - 1.0
        for e in range(E):
            a, b = ei[e], ej[e]
            for l in range(k):
                dfb = Fb[a, l] - Fb[b, l]
                ev = eta[e, l] + sigeta[e] * (dfb - ab[e, l])
                eta[e, l] = ev if ev > 0.0 else 0.0
                xv = xi[e, l] + sigxi[e] * (-dfb - ab[e, l])
                xi[e, l] = xv if xv > 0.0 else 0.0


def _run_chunk_numpy(iters, B, ei, ej, w, s, lam, m, M, pre, li, lc, explicit,
                     F, alpha, dp, dm, theta, mu, zeta, nu, eta, xi):
    """Vectorized reference implementation of :func:`_run_chunk`."""
    for _ in range(iters):
        coef = -(theta * lam + nu)
        gF = s * coef[None, :] + mu[:, None] + (B @ (eta - xi))
        if explicit:
            gF[li, lc] += zeta
        F_new = np.maximum(0.0, F - pre.tau_F * gF)
        gA = w[:, None] * theta[None, :] - eta - xi
        alpha_new = np.maximum(0.0, alpha - pre.tau_alpha[:, None] * gA)
        dp_new = np.maximum(0.0, dp - pre.tau_dp * (1.0 - m * theta))
        dm_new = np.maximum(0.0, dm - pre.tau_dm * (M * theta - 1.0))

        Fb = 2.0 * F_new - F
        ab = 2.0 * alpha_new - alpha
        dpb = 2.0 * dp_new - dp
        dmb = 2.0 * dm_new - dm

        dFb = Fb[ei] - Fb[ej]
        sFb = (s * Fb).sum(axis=0)
        wab = w @ ab
        theta[:] = np.maximum(0.0, theta + pre.sigma_theta * (
            wab - lam * sFb - m * dpb + M * dmb))
        mu += pre.sigma_mu * (Fb.sum(axis=1) - 1.0)
        if explicit:
            zeta += pre.sigma_zeta * (Fb[li, lc] - 1.0)
        nu[:] = np.maximum(0.0, nu + pre.sigma_nu * (m - sFb))
        eta[:] = np.maximum(0.0, eta + pre.sigma_eta[:, None] * (dFb - ab))
        xi[:] = np.maximum(0.0, xi + pre.sigma_xi[:, None] * (-dFb - ab))
        F[:] = F_new
        alpha[:] = alpha_new
        dp[:] = dp_new
        dm[:] = dm_new


class _Operator:
    """Constraint operator applied in factored form."""

    def __init__(self, p):
        self.p = p
        self.g = p.graph
        self.B = self.g.incidence()
        self.ei = self.g.edge_i
        self.ej = self.g.edge_j
        self.w = self.g.weights
        self.s = p.subgrads
        self.lam = p.lam

    def adjoint_F(self, theta, mu, zeta, nu, eta, xi):
        """(A^T y) restricted to the F block."""
        coef = -(theta * self.lam + nu)
        out = self.s * coef[None, :] + mu[:, None] + (self.B @ (eta - xi))
        if zeta is not None and self.p.label_idx.size:
            out[self.p.label_idx, self.p.label_col] += zeta
        return out

    def adjoint_alpha(self, theta, eta, xi):
        return self.w[:, None] * theta[None, :] - eta - xi

    def forward(self, F, alpha, dp, dm):
        """Row blocks of A x (without right-hand sides)."""
        dF = F[self.ei] - F[self.ej]
        sF = (self.s * F).sum(axis=0)
        wa = self.w @ alpha
        desc = wa - self.lam * sF - self.p.m * dp + self.p.M * dm
        simplex = F.sum(axis=1)
        size = -sF
        return desc, simplex, size, dF


def _scaled_violations(p, pre, st, op):
    """Group-wise feasibility violations in the preconditioned metric."""
    desc, simplex, size, dF = op.forward(st.F, st.alpha, st.dp, st.dm)
    v = {}
    v["descent"] = float(np.max(pre.sigma_theta * np.maximum(desc, 0.0), initial=0.0))
    rows = np.abs(simplex - 1.0) * pre.sigma_mu
    v["simplex"] = float(np.max(rows, initial=0.0))
    if not p.eliminate_labels and p.label_idx.size:
        v["label"] = float(np.max(np.abs(st.F[p.label_idx, p.label_col] - 1.0)))
    else:
        v["label"] = 0.0
    v["size"] = float(np.max(pre.sigma_nu * np.maximum(p.m + size, 0.0), initial=0.0))
    v["linearize"] = float(max(
        np.max(pre.sigma_eta[:, None] * np.maximum(dF - st.alpha, 0.0), initial=0.0),
        np.max(pre.sigma_xi[:, None] * np.maximum(-dF - st.alpha, 0.0), initial=0.0),
    ))
    return v


def _step_residuals(p, pre, op, prev, cur):
    """Scaled fixed-point residuals of one iteration.

    Primal: (x_prev - x_cur) - tau * A^T (y_prev - y_cur);
    dual:   (y_prev - y_cur) - sigma * A (x_prev - x_cur).
    Both vanish exactly at a saddle point.
    """
    d_theta = prev.theta - cur.theta
    d_mu = prev.mu - cur.mu
    d_nu = prev.nu - cur.nu
    d_eta = prev.eta - cur.eta
    d_xi = prev.xi - cur.xi
    d_zeta = None
    if prev.zeta is not None:
        d_zeta = prev.zeta - cur.zeta

    pF = (prev.F - cur.F) - pre.tau_F * op.adjoint_F(d_theta, d_mu, d_zeta, d_nu, d_eta, d_xi)
    pA = (prev.alpha - cur.alpha) - pre.tau_alpha[:, None] * op.adjoint_alpha(d_theta, d_eta, d_xi)
    pDp = (prev.dp - cur.dp) - pre.tau_dp * (-p.m * d_theta)
    pDm = (prev.dm - cur.dm) - pre.tau_dm * (p.M * d_theta)
    primal = max(np.max(np.abs(pF), initial=0.0), np.max(np.abs(pA), initial=0.0),
                 np.max(np.abs(pDp), initial=0.0), np.max(np.abs(pDm), initial=0.0))

    deltaF = prev.F - cur.F
    deltaA = prev.alpha - cur.alpha
    desc, simplex, size, dF = op.forward(deltaF, deltaA,
                                         prev.dp - cur.dp, prev.dm - cur.dm)
    dTheta = d_theta - pre.sigma_theta * desc
    dMu = d_mu - pre.sigma_mu * simplex
    dNu = d_nu - pre.sigma_nu * size
    dEta = d_eta - pre.sigma_eta[:, None] * (dF - deltaA)
    dXi = d_xi - pre.sigma_xi[:, None] * (-dF - deltaA)
    dual = max(np.max(np.abs(dTheta), initial=0.0), np.max(np.abs(dMu), initial=0.0),
               np.max(np.abs(dNu), initial=0.0), np.max(np.abs(dEta), initial=0.0),
               np.max(np.abs(dXi), initial=0.0))
    if d_zeta is not None and p.label_idx.size:
        dZeta = d_zeta - pre.sigma_zeta * deltaF[p.label_idx, p.label_col]
        dual = max(dual, float(np.max(np.abs(dZeta), initial=0.0)))
    return float(primal), float(dual)


def pdhg_solve(p, warm_start=None, tol=1e-6, max_iter=50000, check_every=100,
               residual_log=None):
    """Run the preconditioned primal-dual iteration until the scaled
    feasibility violations and fixed-point residuals all drop below ``tol``.

    Parameters
    ----------
    p : LPProblem
    warm_start : LPState or None
        Iterates from a previous solve of a problem with identical shapes.
    tol : float
        Threshold on the preconditioner-scaled residual norms.
    max_iter : int
        Iteration cap; reaching it is flagged in the solution.
    check_every : int
        Residuals are evaluated every this many iterations.
    residual_log : list or None
        When given, tuples ``(iteration, primal, dual, violation)`` are
        appended at every check.
    """
    pre = compute_preconditioners(p)
    op = _Operator(p)
    st = _adopt_warm_start(p, warm_start)
    g = p.graph
    ei, ej, w = g.edge_i, g.edge_j, g.weights
    s, lam, m, M = p.subgrads, p.lam, p.m, p.M
    B = g.incidence()
    explicit = not p.eliminate_labels
    has_labels = p.label_idx.size > 0
    li, lc = p.label_idx, p.label_col

    F, alpha, dp, dm = st.F, st.alpha, st.dp, st.dm
    theta, mu, nu = st.theta, st.mu, st.nu
    eta, xi = st.eta, st.xi
    zeta = st.zeta if st.zeta is not None else np.zeros(0)
    Fb = np.empty_like(F)
    ab = np.empty_like(alpha)
    BT = np.empty_like(F)

    if HAVE_NUMBA:
        def advance(num):
            _run_chunk(
                num, ei, ej, w, s, lam, m, M,
                pre.tau_F, pre.tau_alpha, pre.tau_dp, pre.tau_dm,
                pre.sigma_theta, pre.sigma_mu, pre.sigma_nu,
                pre.sigma_eta, pre.sigma_xi,
                li, lc, explicit and has_labels,
                F, alpha, dp, dm, theta, mu, zeta, nu, eta, xi,
                Fb, ab, BT,
            )
    else:
        def advance(num):
            _run_chunk_numpy(
                num, B, ei, ej, w, s, lam, m, M, pre, li, lc,
                explicit and has_labels,
                F, alpha, dp, dm, theta, mu, zeta, nu, eta, xi,
            )

    def snapshot():
        return LPState(F.copy(), alpha.copy(), dp.copy(), dm.copy(),
                       theta.copy(), mu.copy(),
                       zeta.copy() if explicit else None,
                       nu.copy(), eta.copy(), xi.copy())

    history = []
    converged = False
    stalled = False
    residuals = {}
    it = 0
    best_res = np.inf
    checks_without_progress = 0
    while it < max_iter:
        steps = min(check_every - 1, max_iter - 1 - it)
        if steps:
            advance(steps)
        it += steps
        prev = snapshot()
        advance(1)
        it += 1
        cur = snapshot()
        viol = _scaled_violations(p, pre, cur, op)
        vmax = max(viol.values())
        pres, dres = _step_residuals(p, pre, op, prev, cur)
        if not (np.isfinite(vmax) and np.isfinite(pres) and np.isfinite(dres)):
            raise NumericFailureError(
                f"non-finite residuals at iteration {it}", iteration=it
            )
        history.append((it, pres, dres, vmax))
        if residual_log is not None:
            residual_log.append((it, pres, dres, vmax))
        residuals = {"primal": pres, "dual": dres, "violation": vmax,
                     "groups": viol}
        res_now = max(pres, dres, vmax)
        if res_now <= tol:
            converged = True
            break
        # Floating point limits the attainable residual: near the solution
        # the iterates can enter an exact cycle. Give up once the residual
        # stopped improving for a stretch of checks instead of burning the
        # whole budget.
        if res_now < 0.999 * best_res:
            best_res = res_now
            checks_without_progress = 0
        else:
            checks_without_progress += 1
            if checks_without_progress >= STALL_CHECKS:
                stalled = True
                break

    final = snapshot()
    objective = float(dp.sum() - dm.sum())
    residuals["stalled"] = stalled
    return LPSolution(
        F=F.copy(), dp=dp.copy(), dm=dm.copy(), objective=objective,
        iterations=it, converged=converged, residuals=residuals,
        history=history, state=final,
    )
