"""Community network autoregression: simulation, two-step estimation and evaluation."""

from .errors import EstimationError, ValidationError
from .estim import (
    ErrCov,
    FactorSelection,
    FitResult,
    NarFit,
    SmwPrecision,
    fit_first_step,
    fit_nar,
    fit_poet,
    fit_second_step,
    precision_smw,
    select_num_factors,
)
from .evaluation import (
    McReport,
    RollingConfig,
    WindowResult,
    predict_nar,
    predict_one_step,
    remse,
    rolling_backtest,
    run_benchmark,
)
from .model import (
    CnarParams,
    FactorNoiseSpec,
    PanelSeries,
    StationarityReport,
    build_design,
    check_stationarity,
    pack_theta,
    simulate_cnar,
    simulate_nar,
    unpack_theta,
)
from .net import (
    SbmSpec,
    SpectralEmbedding,
    generate_sbm,
    membership_basis,
    planted_partition_spec,
    row_normalize,
    scree,
    spectral_embed,
    subspace_distance,
)
from .scenarios import PRESETS, make_scenario

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
