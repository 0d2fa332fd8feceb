"""Level-set lab for fronts moving with normal speed -curvature + c(x)
through random, finite-range media in the plane."""
from .coeff_field import (BumpField, CoefficientField, ConstantField, FieldSpec, LaminarField,
                          SplicedField, evaluate, ls_condition_margin, sample_field, splice_fields)
from .grid import Grid2D, GridSet, box_grid, front_grid, hausdorff
from .levelset import (HorizonExceeded, InitialSet, LevelSetState, SolverError, Window,
                       curvature_term, evolve_until, forcing_term, init_state, step)
from .arrival import (ArrivalTimeField, RegularityReport, compute_arrival, regularize_set,
                      sublevel_set, verify_suite)

__all__ = [
    "BumpField", "CoefficientField", "ConstantField", "FieldSpec", "LaminarField", "SplicedField",
    "evaluate", "ls_condition_margin", "sample_field", "splice_fields",
    "Grid2D", "GridSet", "box_grid", "front_grid", "hausdorff",
    "HorizonExceeded", "InitialSet", "LevelSetState", "SolverError", "Window",
    "curvature_term", "evolve_until", "forcing_term", "init_state", "step",
    "ArrivalTimeField", "RegularityReport", "compute_arrival", "regularize_set", "sublevel_set",
    "verify_suite",
]
