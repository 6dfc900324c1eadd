"""Rounding, vertex anchoring, membership growth, and the full solve loop.

The solve loop alternates inner LP steps with rounding. Whenever the rounded
partition stops improving, the set of vertices whose cluster assignment is
hard-fixed ("membership constraints") roughly doubles; candidates are ranked
by how much the balanced cut would increase if they were moved to another
cluster, so the most anchored vertices are fixed first.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import eigsh
from sklearn.cluster import KMeans

from .balance import BalanceFunction
from .descent import (
    DescentSettings,
    DescentState,
    column_ratios,
    make_state,
    outer_step,
)
from .errors import (
    DegenerateRunError,
    InfeasibleIterateError,
    InvalidInputError,
    NumericFailureError,
)
from .graph import connected_components, cut_value

logger = logging.getLogger(__name__)

# Relative tolerance used by the stop test comparing the rounded cut with the
# continuous objective, and the objective stall test.
STOP_RTOL = 1e-4


@dataclass(frozen=True)
class RoundedResult:
    """Row-argmax rounding of an embedding."""

    assignment: np.ndarray
    valid: bool                 # every cluster nonempty
    weak_degenerate: bool       # some row had a tied maximum
    strong_degenerate: bool     # some cluster ended up empty
    bcut: float                 # balanced cut; inf when invalid


@dataclass(frozen=True)
class LabelConstraintSet:
    """Vertices with hard-fixed cluster membership.

    ``members``/``labels`` hold the full constraint set; ``seed_idx`` /
    ``seed_col`` are ground-truth seeds that are never overwritten. ``quota``
    is the growth budget `p` reached so far.
    """

    members: np.ndarray
    labels: np.ndarray
    quota: int = 0
    seed_idx: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    seed_col: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    capped: bool = False

    @classmethod
    def empty(cls):
        z = np.empty(0, dtype=np.int64)
        return cls(members=z, labels=z.copy())

    @classmethod
    def from_seeds(cls, seed_idx, seed_col):
        seed_idx = np.asarray(seed_idx, dtype=np.int64)
        seed_col = np.asarray(seed_col, dtype=np.int64)
        order = np.argsort(seed_idx)
        seed_idx, seed_col = seed_idx[order], seed_col[order]
        return cls(members=seed_idx.copy(), labels=seed_col.copy(),
                   seed_idx=seed_idx, seed_col=seed_col)

    def as_arrays(self):
        if self.members.size == 0:
            return None
        return self.members, self.labels


def bcut_value(g, bf, assignment, k):
    """Balanced cut of a k-partition; inf when some cluster is empty."""
    assignment = np.asarray(assignment, dtype=np.int64)
    total = 0.0
    for l in range(k):
        members = np.flatnonzero(assignment == l)
        if members.size == 0:
            return float("inf")
        denom = bf.set_value(members)
        if denom <= 0:
            return float("inf")
        total += cut_value(g, members) / denom
    return float(total)


def round_embedding(g, bf, F, rng):
    """Assign each vertex to the column where its row attains the maximum.

    Ties are broken by a column preference drawn once per call from ``rng``,
    so exactly tied columns resolve consistently across rows.
    """
    F = np.asarray(F, dtype=np.float64)
    n, k = F.shape
    rowmax = F.max(axis=1)
    tied = (F == rowmax[:, None]).sum(axis=1) > 1
    perm = rng.permutation(k)
    assignment = perm[np.argmax(F[:, perm], axis=1)]
    counts = np.bincount(assignment, minlength=k)
    strong = bool(counts.min() == 0)
    bcut = float("inf") if strong else bcut_value(g, bf, assignment, k)
    return RoundedResult(
        assignment=assignment, valid=not strong,
        weak_degenerate=bool(tied.any()), strong_degenerate=strong, bcut=bcut,
    )


def vertex_ordering(g, bf, assignment):
    """Per-cluster rankings by the cut increase of the best single move.

    For each vertex the balanced cut after moving it out of its cluster into
    the best receiving cluster is computed, with the ratios of the untouched
    clusters frozen at their current values. Vertices are ranked by decreasing
    value: the top of each ranking is the hardest to move. Moves that would
    empty the donor cluster or zero out a balance value score infinity.

    Returns a list of ``(order, scores)`` pairs, one per cluster, where
    ``order`` holds the cluster's vertices ranked by decreasing score.
    """
    assignment = np.asarray(assignment, dtype=np.int64)
    n = g.n
    k = int(assignment.max()) + 1
    u = bf.vertex_weights
    mass = np.asarray([u[assignment == l].sum() for l in range(k)])
    cuts = np.asarray([cut_value(g, np.flatnonzero(assignment == l))
                       for l in range(k)])
    shat = np.asarray([bf.set_value(np.flatnonzero(assignment == l))
                       for l in range(k)])
    with np.errstate(divide="ignore"):
        ratios = np.where(shat > 0, cuts / np.where(shat > 0, shat, 1.0), np.inf)
    total_ratio = ratios.sum()

    # Per-vertex weight into each cluster.
    link = np.zeros((n, k))
    np.add.at(link, g.edge_i, _one_hot(assignment[g.edge_j], k) * g.weights[:, None])
    np.add.at(link, g.edge_j, _one_hot(assignment[g.edge_i], k) * g.weights[:, None])

    deg = g.degrees
    sizes = np.bincount(assignment, minlength=k)
    scores = np.empty(n)
    for i in range(n):
        l = assignment[i]
        if sizes[l] <= 1:
            scores[i] = np.inf
            continue
        donor_cut = cuts[l] - deg[i] + 2.0 * link[i, l]
        donor_bal = bf.value_of_mass(mass[l] - u[i])
        if donor_bal <= 0:
            scores[i] = np.inf
            continue
        donor = donor_cut / donor_bal
        best = np.inf
        for s_cl in range(k):
            if s_cl == l:
                continue
            recv_bal = bf.value_of_mass(mass[s_cl] + u[i])
            if recv_bal <= 0:
                continue
            recv = (cuts[s_cl] + deg[i] - 2.0 * link[i, s_cl]) / recv_bal
            frozen = total_ratio - ratios[l] - ratios[s_cl]
            cand = recv + frozen
            if cand < best:
                best = cand
        scores[i] = donor + best
    orderings = []
    for l in range(k):
        members = np.flatnonzero(assignment == l)
        order = members[np.lexsort((members, -scores[members]))]
        orderings.append((order, scores[order]))
    return orderings


def _one_hot(cols, k):
    out = np.zeros((cols.size, k))
    out[np.arange(cols.size), cols] = 1.0
    return out


def _membership_candidates(quota, k, rankings):
    """Top-ranked vertices per cluster for a total budget ``quota``."""
    if quota <= 0:
        return np.empty(0, dtype=np.int64), False
    per_cluster = max(1, quota // k)
    picks = []
    capped = False
    for order, _ in rankings:
        if per_cluster > order.size:
            capped = True
        picks.append(order[:per_cluster])
    return np.concatenate(picks).astype(np.int64), capped


def _relabel(members, F_source, seed_idx, seed_col):
    labels = np.argmax(F_source[members], axis=1).astype(np.int64)
    if seed_idx.size:
        pos = np.searchsorted(members, seed_idx)
        labels[pos] = seed_col
    return labels


def grow_membership(lcs, rankings, F_source, k):
    """Double the membership budget and extend the constraint set.

    The new budget is ``p = max(2 |I|, 1)``, shared across clusters (each
    cluster contributes its ``max(1, p // k)`` top-ranked vertices, capped at
    the cluster size). Existing members stay; labels are re-derived from the
    row argmax of ``F_source`` except for seeds, which keep their class.
    """
    p = max(2 * int(lcs.members.size), 1)
    cand, capped = _membership_candidates(p, k, rankings)
    members = np.union1d(np.union1d(lcs.members, cand), lcs.seed_idx)
    labels = _relabel(members, F_source, lcs.seed_idx, lcs.seed_col)
    return LabelConstraintSet(members=members, labels=labels, quota=p,
                              seed_idx=lcs.seed_idx, seed_col=lcs.seed_col,
                              capped=capped or lcs.capped)


def reselect_membership(lcs, rankings, F_source, k):
    """Refresh the constrained set from new rankings at an unchanged budget."""
    cand, capped = _membership_candidates(lcs.quota, k, rankings)
    members = np.union1d(np.union1d(lcs.members, cand), lcs.seed_idx)
    labels = _relabel(members, F_source, lcs.seed_idx, lcs.seed_col)
    return LabelConstraintSet(members=members, labels=labels, quota=lcs.quota,
                              seed_idx=lcs.seed_idx, seed_col=lcs.seed_col,
                              capped=capped or lcs.capped)


def apply_labels(F, lcs):
    """Hard-set the labeled rows of an embedding to 0/1 indicators."""
    out = np.asarray(F, dtype=np.float64).copy()
    if lcs.members.size:
        out[lcs.members, :] = 0.0
        out[lcs.members, lcs.labels] = 1.0
    return out


def construct_degenerate_embedding(g, k, two_cut):
    """Embedding built from a 2-cut that cannot round to a k-partition.

    Column 0 is the indicator of the complement of ``two_cut``; the remaining
    ``k-1`` columns each carry ``1/(k-1)`` on ``two_cut``. Rows lie on the
    simplex, and the sum of ratios equals
    ``(k-1) cut/S(two_cut) + cut/S(complement)``.
    """
    two_cut = np.asarray(two_cut, dtype=np.int64)
    if k < 2:
        raise InvalidInputError("k must be at least 2")
    if two_cut.size == 0 or two_cut.size >= g.n:
        raise InvalidInputError("two_cut must be a nonempty strict subset")
    F = np.zeros((g.n, k))
    mask = np.zeros(g.n, dtype=bool)
    mask[two_cut] = True
    F[~mask, 0] = 1.0
    F[mask, 1:] = 1.0 / (k - 1)
    return F


def transductive_seed(truth, k, rng, per_class=None, percent=None):
    """Sample ground-truth labels as permanent membership constraints.

    Exactly one of ``per_class`` / ``percent`` must be given. A percentage
    that rounds to zero for some class is promoted to one label.
    """
    truth = np.asarray(truth, dtype=np.int64)
    classes = np.unique(truth)
    if classes.size > k:
        raise InvalidInputError(f"{classes.size} classes exceed k={k}")
    if (per_class is None) == (percent is None):
        raise InvalidInputError("give exactly one of per_class / percent")
    idx_parts, col_parts = [], []
    for ci, c in enumerate(classes):
        members = np.flatnonzero(truth == c)
        if per_class is not None:
            take = int(per_class)
        else:
            take = int(np.floor(members.size * percent / 100.0))
        take = max(1, min(take, members.size))
        chosen = rng.choice(members, size=take, replace=False)
        idx_parts.append(np.sort(chosen))
        col_parts.append(np.full(take, ci, dtype=np.int64))
    return LabelConstraintSet.from_seeds(
        np.concatenate(idx_parts), np.concatenate(col_parts)
    )


def repair_embedding(g, bf, F, rng, lcs=None):
    """Blend an embedding toward partition indicators until every column
    satisfies the size lower bound ``S(F_l) >= m``.

    The blend target is the embedding's own rounding when valid, else a
    random balanced partition; labeled rows are preserved. Needed because
    nearly constant columns of random initializations can violate the bound.
    """
    m = bf.min_value()
    k = F.shape[1]

    def feasible(mat):
        return all(bf.lovasz_value(mat[:, l]) >= m for l in range(k))

    if feasible(F):
        return F
    rounded = round_embedding(g, bf, F, rng)
    if rounded.valid:
        target_assign = rounded.assignment
    else:
        perm = rng.permutation(g.n)
        target_assign = np.empty(g.n, dtype=np.int64)
        target_assign[perm] = np.arange(g.n) % k
    target = np.zeros_like(F)
    target[np.arange(g.n), target_assign] = 1.0
    if lcs is not None:
        target = apply_labels(target, lcs)
    for wgt in (0.5, 0.9, 0.99, 1.0):
        cand = (1.0 - wgt) * F + wgt * target
        if feasible(cand):
            return cand
    return target


def initializations(g, k, n_random, n_spectral, rng):
    """Row-stochastic starting embeddings.

    Random ones draw each row uniformly from the simplex. Spectral ones run
    k-means (10 restarts, distinct seeds) on the row-normalized bottom-k
    eigenvectors of the symmetric normalized Laplacian and smooth the
    resulting indicators toward the simplex interior with weight 0.95 on the
    indicator. Eigensolver failures fall back to extra random inits.
    """
    inits = []
    kinds = []
    for _ in range(n_random):
        inits.append(rng.dirichlet(np.ones(k), size=g.n))
        kinds.append("random")
    if n_spectral > 0:
        try:
            emb = _spectral_embedding(g, k)
        except Exception as exc:  # eigsh may fail to converge
            logger.warning("spectral embedding failed (%s); using random inits", exc)
            emb = None
        for j in range(n_spectral):
            if emb is None:
                inits.append(rng.dirichlet(np.ones(k), size=g.n))
                kinds.append("random-fallback")
                continue
            seed = int(rng.integers(0, 2**31 - 1))
            km = KMeans(n_clusters=k, n_init=10, random_state=seed,
                        algorithm="lloyd")
            assign = km.fit_predict(emb)
            F = np.full((g.n, k), 0.05 / k)
            F[np.arange(g.n), assign] += 0.95
            inits.append(F)
            kinds.append("spectral")
    return inits, kinds


def _spectral_embedding(g, k):
    n = g.n
    d = np.maximum(g.degrees, 1e-12)
    dm12 = 1.0 / np.sqrt(d)
    W = g.adjacency()
    L = sparse.identity(n, format="csr") - sparse.diags(dm12) @ W @ sparse.diags(dm12)
    if n < 3 * k + 5 or n <= 200:
        vals, vecs = np.linalg.eigh(L.toarray())
        vecs = vecs[:, :k]
    else:
        _, vecs = eigsh(L, k=k, sigma=-1e-5, which="LM")
    norms = np.linalg.norm(vecs, axis=1)
    vecs = vecs / np.maximum(norms, 1e-12)[:, None]
    return vecs


def seed_streams(seed):
    """Named random substreams derived from one master seed.

    All randomness in an experiment flows through these: ``init`` for
    starting embeddings, ``tie`` for rounding tie-breaks, ``label`` for
    transductive label sampling.
    """
    init_seq, tie_seq, label_seq = np.random.SeedSequence(seed).spawn(3)
    return {
        "init": np.random.default_rng(init_seq),
        "tie": np.random.default_rng(tie_seq),
        "label": np.random.default_rng(label_seq),
    }


@dataclass
class SolveConfig:
    n_random: int = 5
    n_spectral: int = 7
    seed: int = 0
    eps: float = 1e-4
    inner_tol: float = 1e-6
    inner_max_iter: int = 50000
    max_outer_per_phase: int = 100
    max_total_outer: int = 400
    simplex_only: bool = False
    check_every: int = 100
    collect_residuals: bool = False


@dataclass
class InitRun:
    init_id: int
    init_kind: str
    gammas: list = field(default_factory=list)
    chis: list = field(default_factory=list)
    phases: list = field(default_factory=list)
    inner_objectives: list = field(default_factory=list)
    inner_iterations: list = field(default_factory=list)
    inner_tols: list = field(default_factory=list)
    terminated_steps: list = field(default_factory=list)
    growth_events: list = field(default_factory=list)
    best: RoundedResult = None
    final_F: np.ndarray = None
    final_gamma: float = float("inf")
    min_gamma: float = float("inf")
    label_set: LabelConstraintSet = None
    degenerate: bool = False
    failure: str = ""
    residuals: list = field(default_factory=list)


@dataclass
class SolveResult:
    success: bool
    assignment: np.ndarray
    bcut: float
    embedding: np.ndarray
    label_set: LabelConstraintSet
    runs: list
    k: int


def solve(g, bf, k, config=None, seed_labels=None):
    """Full multi-initialization solve.

    Parameters
    ----------
    g : Graph
    bf : BalanceFunction
    k : int
        Number of clusters (2 <= k <= n).
    config : SolveConfig
    seed_labels : ndarray or None
        Ground-truth class labels; when combined with ``config`` transductive
        options via :func:`transductive_seed` the caller passes the resulting
        LabelConstraintSet through ``config``. Here it may directly be a
        LabelConstraintSet.

    Returns the best rounded partition over all initializations. When every
    initialization collapses the result carries ``success=False`` and the
    per-run failure reasons; an invalid partition is never returned silently.
    """
    config = config or SolveConfig()
    if k < 2 or k > g.n:
        raise InvalidInputError("need 2 <= k <= n")
    streams = seed_streams(config.seed)
    init_rng = streams["init"]
    tie_rng = streams["tie"]

    seeds = LabelConstraintSet.empty()
    if seed_labels is not None:
        if isinstance(seed_labels, LabelConstraintSet):
            seeds = seed_labels
        else:
            raise InvalidInputError("seed_labels must be a LabelConstraintSet")
    if config.simplex_only and seeds.members.size:
        raise InvalidInputError("simplex-only mode ignores labels; do not pass seeds")

    inits, kinds = initializations(g, k, config.n_random, config.n_spectral, init_rng)
    settings = DescentSettings(
        eps=config.eps, inner_tol=config.inner_tol,
        inner_max_iter=config.inner_max_iter,
        max_outer=config.max_outer_per_phase,
        size_constraints=not config.simplex_only,
        check_every=config.check_every,
    )

    runs = []
    for idx, F0 in enumerate(inits):
        run = InitRun(init_id=idx, init_kind=kinds[idx])
        try:
            _run_single(g, bf, k, F0, seeds, config, settings, tie_rng, run)
        except (DegenerateRunError, InfeasibleIterateError) as exc:
            run.degenerate = True
            run.failure = str(exc)
        except NumericFailureError as exc:
            run.degenerate = True
            run.failure = f"numeric failure: {exc}"
        runs.append(run)
        logger.info(
            "init %d (%s): best cut %s, final gamma %.6g%s",
            idx, run.init_kind,
            "-" if run.best is None else f"{run.best.bcut:.6g}",
            run.final_gamma, " [failed]" if run.degenerate else "",
        )

    best_run = None
    for run in runs:
        if run.best is None:
            continue
        if best_run is None or run.best.bcut < best_run.best.bcut:
            best_run = run
    if best_run is None:
        return SolveResult(success=False, assignment=None, bcut=float("inf"),
                           embedding=None, label_set=None, runs=runs, k=k)
    return SolveResult(
        success=True, assignment=best_run.best.assignment,
        bcut=best_run.best.bcut, embedding=best_run.final_F,
        label_set=best_run.label_set, runs=runs, k=k,
    )


def _run_single(g, bf, k, F0, seeds, config, settings, tie_rng, run):
    """One initialization of the solve loop."""
    lcs = LabelConstraintSet(
        members=seeds.seed_idx.copy(), labels=seeds.seed_col.copy(),
        seed_idx=seeds.seed_idx, seed_col=seeds.seed_col,
    )
    F = apply_labels(F0, lcs) if lcs.members.size else F0
    if not config.simplex_only:
        F = repair_embedding(g, bf, F, tie_rng, lcs)
    state = make_state(g, bf, F, allow_collapsed=config.simplex_only)
    run.min_gamma = state.gamma
    best = None
    orderings = None
    if not config.simplex_only:
        # The initial rounding seeds the best partition, so membership growth
        # has rankings to draw from even if the first steps degenerate.
        rounded0 = round_embedding(g, bf, state.F, tie_rng)
        if rounded0.valid:
            best = rounded0
            orderings = vertex_ordering(g, bf, rounded0.assignment)
    phase = 0
    steps_in_phase = 0
    prev_gamma = state.gamma
    residual_log = [] if config.collect_residuals else None

    for _ in range(config.max_total_outer):
        try:
            new_state, rec = outer_step(g, bf, state, lcs.as_arrays(), settings,
                                        residual_log=residual_log)
        except (DegenerateRunError, InfeasibleIterateError) as exc:
            # Keep the last good state for diagnostics; the run still counts
            # as failed unless a valid partition was already found.
            run.failure = str(exc)
            run.degenerate = best is None
            break
        steps_in_phase += 1
        if residual_log is not None and residual_log:
            run.residuals.extend((rec.t, *item) for item in residual_log)
            residual_log.clear()
        rounded = round_embedding(g, bf, new_state.F, tie_rng)
        chi = rounded.bcut
        improved = rounded.valid and (best is None or chi < best.bcut)
        if steps_in_phase > config.max_outer_per_phase:
            improved = False
        grew = False

        if improved:
            best = rounded
            orderings = vertex_ordering(g, bf, rounded.assignment)
            if not config.simplex_only and lcs.quota > 0:
                lcs = reselect_membership(lcs, orderings, new_state.F, k)
        elif not config.simplex_only:
            if orderings is None:
                if rec.terminated:
                    run.failure = "no valid partition before stationarity"
                    run.degenerate = True
                    _log_step(run, rec, phase, chi, new_state)
                    break
            elif lcs.members.size < g.n:
                # Discard the step, pin more of the previous iterate.
                lcs = grow_membership(lcs, orderings, state.F, k)
                pinned = apply_labels(state.F, lcs)
                pinned = repair_embedding(g, bf, pinned, tie_rng, lcs)
                lam = column_ratios(g, bf, pinned)
                new_state = DescentState(F=pinned, lam=lam, gamma=float(lam.sum()),
                                         t=new_state.t, lp_state=new_state.lp_state)
                grew = True
                phase += 1
                steps_in_phase = 0
                run.growth_events.append(
                    {"t": rec.t, "quota": lcs.quota, "size": int(lcs.members.size),
                     "capped": lcs.capped}
                )
            elif rec.terminated:
                # Everything is pinned and the inner problem is stationary.
                _log_step(run, rec, phase, chi, new_state)
                state = new_state
                break

        _log_step(run, rec, phase, chi, new_state)
        gamma = new_state.gamma
        run.min_gamma = min(run.min_gamma, gamma)

        if not grew and rounded.valid:
            chi_matches = abs(chi - gamma) <= STOP_RTOL * max(chi, 1e-12)
            stalled = abs(prev_gamma - gamma) <= STOP_RTOL * max(prev_gamma, 1e-12)
            if chi_matches and (stalled or rec.terminated):
                state = new_state
                break
        if config.simplex_only:
            stalled = abs(prev_gamma - new_state.gamma) <= settings.eps * max(prev_gamma, 1e-12)
            if rec.terminated or stalled:
                state = new_state
                break
        prev_gamma = gamma
        state = new_state

    run.best = best
    run.final_F = state.F
    run.final_gamma = state.gamma
    run.label_set = lcs
    if best is None and not run.failure:
        run.degenerate = True
        run.failure = "no valid partition found"


def _log_step(run, rec, phase, chi, state):
    run.gammas.append(state.gamma)
    run.chis.append(chi)
    run.phases.append(phase)
    run.inner_objectives.append(rec.inner_objective)
    run.inner_iterations.append(rec.inner_iterations)
    run.inner_tols.append(rec.inner_tol)
    run.terminated_steps.append(rec.terminated)
