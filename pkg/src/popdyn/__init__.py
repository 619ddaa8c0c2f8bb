"""Recommendation-driven diffusion models of online video popularity.

Closed-form and recursive DModel/WModel evaluation, an agent-level
simulator, Levenberg-Marquardt fitting with best-model selection, dataset
preparation from viewing records and series-level case-study analytics.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    BothFitsFailedError,
    ConfigurationError,
    DataError,
    DegenerateDiscriminantError,
    DomainError,
    FitError,
    InsufficientDataError,
    ParameterError,
    PopdynError,
)
from .fitting import FitOptions, FitResult, ModelKind, fit_dmodel, fit_wmodel, nmse, select_best  # noqa: E402
from .models import (  # noqa: E402
    DModelParams,
    PopulationConfig,
    Trace,
    WDerived,
    WModelParams,
    dmodel_cumulative,
    dmodel_view_rate,
    wmodel_continuous_cumulative,
    wmodel_derived,
    wmodel_discrete_trace,
    wmodel_final_population,
)
