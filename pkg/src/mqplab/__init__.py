"""mqplab: linear dynamical systems driven by additive and multiplicative noise.

Simulation (Monte Carlo ensembles and time-ordered-exponential propagators),
Lyapunov spectra and rate-function estimation, heavy-tail index measurement
and prediction, mean-q-power stability verdicts, steady-state optimal gains,
and finite-horizon Riccati/HJB solutions, with a CLI experiment runner.
"""

from ._kernels import backend_name
from .conventions import CONVENTIONS
from .engine import (
    CalibrationResult,
    CollectSpec,
    EnsembleSummary,
    IntegratorConfig,
    PropagatorRecord,
    Trajectory,
    calibrate_convention,
    evolve_joint,
    evolve_propagator,
    integrate,
    run_ensemble,
)
from .models import (
    BatchelorKraichnan,
    FeedbackLaw,
    LinearSystem,
    OrnsteinUhlenbeck,
    ScalarWhite,
    Telegraph,
    ThermalNetwork,
    WhiteTensor,
    ZoneReduction,
    balance_control,
    bk_covariance,
    multi_zone_system,
    single_zone_reduction,
    single_zone_system,
    swimmer_system,
)

__version__ = "0.1.0"
