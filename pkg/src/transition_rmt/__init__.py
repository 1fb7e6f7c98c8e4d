"""Random-matrix model of transition-state theory: two coupled GOE spaces with
open channels, Monte Carlo ensembles and saddle-point quadratures."""

from .errors import DivergentIntegralError, InconsistentInput, InvalidArgument, NumericalFailure
from .goe import GoeMatrix, average_xi, mean_level_spacing, sample_goe, semicircle_density, stream
from .model import (
    ChannelSpec,
    ModelKind,
    ModelSpec,
    Realization,
    build_channels,
    build_realization,
    build_transition,
    build_tunneling,
    coupling_for_transmission,
    spreading_widths,
    uniform_channels,
    width_matrix,
)
from .scattering import (
    ScatteringResult,
    amplitude_factor_tra,
    amplitude_factor_tun,
    entrance_amplitude,
    exit_amplitude,
    resolvent_column,
    smatrix_direct,
    smatrix_factorized,
    transmission_coefficients,
    xi,
)
from .vwz import (
    IntegralResult,
    formation_asymptotic,
    formation_variance_integral,
    measure,
    xi_variance_asymptotic,
    xi_variance_integral,
)
from .ensemble import EnsembleConfig, EnsembleStats, Moments, PredictionRecord, predict_case, run_ensemble

__version__ = "0.1.0"
