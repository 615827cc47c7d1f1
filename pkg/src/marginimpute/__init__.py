"""Categorical missing-value imputation with a piecewise large-margin pairwise MRF."""
from .table import (CategoricalTable, ColumnDomain, MissingSpec, MISSING, hamming_loss,
                    inject_mcar, load_csv, make_splits, mode_fill)
from .model import MrfParams, score_row
from .learn import TrainConfig, cross_validate_lambda, train
from .infer import DDConfig, RowProblem, map_brute_force, map_dual_decomp
from .joint import (DistributionConstraint, JointConfig, build_constraints,
                    impute_constrained, impute_independent)
from .pipeline import ImputationRun, RunConfig, run_algorithm1, run_experiment, run_method

__version__ = "0.1.0"
