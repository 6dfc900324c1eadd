"""Outer loop: monotone descent on the sum of column ratios.

Each step linearizes the ratios around the current embedding, solves the
inner LP, and either accepts the minimizer (the ratio sum cannot increase) or
reports termination when the inner optimum is numerically zero.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateRunError
from .graph import total_variation
from .inner_lp import assemble, pdhg_solve

logger = logging.getLogger(__name__)

# A column whose balance value falls below m * COLLAPSE_RTOL has effectively
# collapsed; its ratio is meaningless and the run must restart.
COLLAPSE_RTOL = 1e-8


@dataclass
class DescentSettings:
    """Knobs of the outer loop and its inner solves."""

    eps: float = 1e-4               # relative decrease of the ratio sum to continue
    inner_tol: float = 1e-6
    inner_max_iter: int = 50000
    max_outer: int = 100
    size_constraints: bool = True
    eliminate_labels: bool = True
    check_every: int = 100
    tighten_rounds: int = 2         # extra x10 tightenings near stationarity


@dataclass
class StepRecord:
    t: int
    gamma: float
    lam: tuple
    inner_objective: float
    inner_iterations: int
    inner_converged: bool
    inner_tol: float
    terminated: bool


@dataclass
class DescentState:
    F: np.ndarray
    lam: np.ndarray
    gamma: float
    t: int = 0
    lp_state: object = None


def column_ratios(g, bf, F, m=None, allow_collapsed=False):
    """Per-column ratios TV(F_l) / S(F_l).

    A column whose balance value has collapsed to ~zero normally aborts the
    run. With ``allow_collapsed`` (used by the simplex-only diagnostic mode,
    where nothing prevents entire columns from vanishing) such columns
    contribute ratio 0, the continuous extension of 0/0 since the supported
    balance functions vanish only on constant columns, and those have zero
    total variation as well.
    """
    F = np.asarray(F, dtype=np.float64)
    m = bf.min_value() if m is None else m
    lam = np.empty(F.shape[1])
    for l in range(F.shape[1]):
        s_val = bf.lovasz_value(F[:, l])
        if s_val < m * COLLAPSE_RTOL:
            if not allow_collapsed:
                raise DegenerateRunError(
                    f"column {l} collapsed: balance value {s_val:.3g}"
                )
            lam[l] = 0.0
        else:
            lam[l] = total_variation(g, F[:, l]) / s_val
    return lam


def sum_of_ratios(g, bf, F):
    """Continuous objective: sum of the column ratios."""
    return float(column_ratios(g, bf, F).sum())


def _renormalize_rows(F):
    """Push an approximate inner solution back onto the row simplex.

    Inner solves that stop at their floating-point floor can leave row sums
    off by more than the linearization gate tolerates.
    """
    sums = F.sum(axis=1)
    if np.max(np.abs(sums - 1.0)) < 1e-12:
        return F
    return F / np.maximum(sums, 0.5)[:, None]


def make_state(g, bf, F, allow_collapsed=False):
    lam = column_ratios(g, bf, F, allow_collapsed=allow_collapsed)
    return DescentState(F=np.asarray(F, dtype=np.float64).copy(), lam=lam,
                        gamma=float(lam.sum()), t=0)


def outer_step(g, bf, state, labels=None, settings=None, residual_log=None):
    """One linearize-and-solve step.

    Returns ``(new_state, record)``. When the inner optimum is numerically
    zero no further descent is possible: the returned state reuses the
    current embedding and the record carries ``terminated=True``. Near
    stationarity the inner tolerance is tightened so that the termination
    decision is not an artifact of a loose solve.
    """
    settings = settings or DescentSettings()
    prob = assemble(
        g, bf, state.F, labels,
        size_constraints=settings.size_constraints,
        eliminate_labels=settings.eliminate_labels,
    )
    tol = settings.inner_tol
    sol = pdhg_solve(prob, warm_start=state.lp_state, tol=tol,
                     max_iter=settings.inner_max_iter,
                     check_every=settings.check_every,
                     residual_log=residual_log)
    rounds = 0
    while (abs(sol.objective) < 10.0 * tol and rounds < settings.tighten_rounds
           and sol.converged):
        tol /= 10.0
        sol = pdhg_solve(prob, warm_start=sol.state, tol=tol,
                         max_iter=settings.inner_max_iter,
                         check_every=settings.check_every,
                         residual_log=residual_log)
        rounds += 1

    terminated = sol.objective >= -10.0 * tol
    if terminated:
        new_state = replace(state, lp_state=sol.state)
    else:
        F_new = _renormalize_rows(sol.F)
        lam = column_ratios(g, bf, F_new,
                            allow_collapsed=not settings.size_constraints)
        new_state = DescentState(F=F_new, lam=lam, gamma=float(lam.sum()),
                                 t=state.t + 1, lp_state=sol.state)
    record = StepRecord(
        t=state.t, gamma=new_state.gamma, lam=tuple(new_state.lam),
        inner_objective=sol.objective, inner_iterations=sol.iterations,
        inner_converged=sol.converged, inner_tol=tol, terminated=terminated,
    )
    logger.debug(
        "outer %d gamma=%.8f lam=%s inner_obj=%.3e inner_iters=%d%s",
        record.t, record.gamma,
        np.array2string(new_state.lam, precision=5),
        record.inner_objective, record.inner_iterations,
        " (terminated)" if terminated else "",
    )
    return new_state, record


def descent_loop(g, bf, F0, labels=None, settings=None):
    """Iterate :func:`outer_step` under a fixed label set.

    Stops at stationarity, when the relative decrease of the ratio sum falls
    below ``settings.eps``, or after ``settings.max_outer`` steps. With
    ``eps=0`` the loop runs until stationarity (bounded by ``max_outer``).

    Returns ``(final_state, records)``.
    """
    settings = settings or DescentSettings()
    state = make_state(g, bf, F0)
    records = []
    for _ in range(settings.max_outer):
        new_state, rec = outer_step(g, bf, state, labels, settings)
        records.append(rec)
        if rec.terminated:
            state = new_state
            break
        drop = (state.gamma - new_state.gamma) / max(state.gamma, 1e-300)
        state = new_state
        if drop < settings.eps:
            break
    return state, records
