"""Finite mixtures of canonical fundamental skew t (CFUST) distributions."""

from .density import cfust_logpdf, cfust_logpdf_batch, density_batch, loglik, mixture_logpdf, mixture_logpdf_batch
from .em import FitOptions, FitResult, e_step, fit, m_step, run_em, solve_dof
from .errors import CfustError, InputError, NumericalError
from .initialization import (
    init_moments,
    init_nested,
    init_transformation,
    kmeans_partition,
    make_candidates,
    model_select,
    score_initials,
)
from .io import contour_grid, load_geyser, load_iris, read_csv, read_model, write_model
from .mvt import CdfSettings, mvt_cdf, mvt_cdf_batch, mvt_logpdf, trunc_mvt_moments
from .params import CfustParams, DataMatrix, MixtureModel, count_free_params, validate_mixture
from .sampling import RngHandle, sample_cfust, sample_mixture

__version__ = "0.1.0"
