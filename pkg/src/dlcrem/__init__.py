"""Dyadic latent class relational event models."""

__version__ = "0.1.0"

from .events import (  # noqa: E402
    CovariateTable,
    Event,
    EventDataError,
    EventHistory,
    IntervalGrid,
    Riskset,
    build_riskset,
    counts,
    load_covariates,
    load_events,
    make_history,
)
from .stats import StatisticSpec, StatSnapshots, compute_stats, resolve_specs  # noqa: E402
from .stack import StatStack, build_stack  # noqa: E402
from .glm import fit_weighted_multinomial, fit_weighted_poisson, predict_class_probs  # noqa: E402
from .em import DlcModel, DlcSpec, FitDiagnostics, e_step, fit, m_step, observed_loglik  # noqa: E402
