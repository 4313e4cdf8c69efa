"""Private incremental empirical risk minimization and linear regression."""

__version__ = "0.1.0"

from .dp import (BudgetLedger, PrivacyBudget, SensitivityBound, gaussian_mechanism,
                 noise_disabled, set_noise_disabled)
from .errors import (DegenerateProjection, InvalidInput, LiftFailure, NumericalFailure,
                     OutOfRange, PrivIncError, StreamExhausted, Unsupported)
from .geometry import (ConstraintSet, DomainSpec, GroupL12, L1Ball, L2Ball, LpBall, Simplex,
                       gauge, gaussian_width, project)
from .inc_erm import BatchSolverSpec, LossSpec, choose_tau, inc_erm_run
from .optimizer import exact_minimizer, noisy_projected_gradient
from .projected import ProjPrivIncReg, ProjRegConfig, lift, proj_priv_inc_reg_run
from .regression import PrivIncReg, RegConfig, priv_inc_reg_run
from .tree import TreeState

__all__ = [
    "BatchSolverSpec", "BudgetLedger", "ConstraintSet", "DegenerateProjection", "DomainSpec",
    "GroupL12", "InvalidInput", "L1Ball", "L2Ball", "LiftFailure", "LossSpec", "LpBall",
    "NumericalFailure", "OutOfRange", "PrivIncError", "PrivIncReg", "PrivacyBudget",
    "ProjPrivIncReg", "ProjRegConfig", "RegConfig", "SensitivityBound", "Simplex",
    "StreamExhausted", "TreeState", "Unsupported", "choose_tau", "exact_minimizer", "gauge",
    "gaussian_mechanism", "gaussian_width", "inc_erm_run", "lift", "noise_disabled",
    "noisy_projected_gradient", "priv_inc_reg_run", "proj_priv_inc_reg_run", "project",
    "set_noise_disabled",
]
