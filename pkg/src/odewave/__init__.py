"""Boundary feedback for an ODE coupled to a wave equation with a matched disturbance."""

from .analysis import DecayFit, SimReport, energy_diagnostics, fit_decay, h1_norm, tracking_error
from .closedloop import (ClosedLoopIC, DisturbanceSpec, simulate_error_systems, simulate_estimator_error,
                         simulate_output_feedback, simulate_state_feedback)
from .design import AssumptionReport, GainSet, check_assumptions, design_gains, find_root
from .errors import (BlowUpError, ConfigurationError, DesignInfeasibleError, FitFailedError,
                     InvalidInputError, OdeWaveError)
from .kernel import KernelSet, PlantConfig, apply_transform, compute_kernels, kernel_residual
from .matrixfun import mat_cosh, mat_gfun, mat_sinh
from .wavesolver import BoundaryCondition, WaveGridState, simulate_wave, step_wave

__version__ = "0.1.0"
