"""Balanced k-cut graph clustering via a tight continuous relaxation.

Partitions weighted graphs into k clusters by directly minimizing balanced
cut objectives (ratio cut, Cheeger cuts, normalized cuts) through a
sum-of-ratios descent scheme whose convex inner step is a linear program
solved by a diagonally preconditioned primal-dual method.
"""

from .balance import KINDS, BalanceFunction
from .cli import ExperimentConfig, clustering_error, run
from .descent import DescentSettings, descent_loop, outer_step, sum_of_ratios
from .errors import (
    BkcutError,
    DegenerateRunError,
    InfeasibleIterateError,
    InvalidInputError,
    NumericFailureError,
)
from .graph import (
    Graph,
    build_knn_graph,
    connected_components,
    cut_value,
    load_edge_list,
    load_points,
    total_variation,
)
from .inner_lp import LPProblem, assemble, compute_preconditioners, pdhg_solve
from .partitioner import (
    LabelConstraintSet,
    SolveConfig,
    SolveResult,
    bcut_value,
    construct_degenerate_embedding,
    grow_membership,
    initializations,
    round_embedding,
    solve,
    transductive_seed,
    vertex_ordering,
)

__version__ = "0.1.0"

__all__ = [
    "KINDS", "BalanceFunction", "ExperimentConfig", "clustering_error", "run",
    "DescentSettings", "descent_loop", "outer_step", "sum_of_ratios",
    "BkcutError", "DegenerateRunError", "InfeasibleIterateError",
    "InvalidInputError", "NumericFailureError",
    "Graph", "build_knn_graph", "connected_components", "cut_value",
    "load_edge_list", "load_points", "total_variation",
    "LPProblem", "assemble", "compute_preconditioners", "pdhg_solve",
    "LabelConstraintSet", "SolveConfig", "SolveResult", "bcut_value",
    "construct_degenerate_embedding", "grow_membership", "initializations",
    "round_embedding", "solve", "transductive_seed", "vertex_ordering",
]
