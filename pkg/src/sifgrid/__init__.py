"""Bayesian hierarchical gridding of satellite SIF soundings.

Converts sounding-level solar-induced fluorescence retrievals into daily
1-degree gridded estimates with full uncertainty quantification: posterior
means, standard errors, and 95% credible intervals of the latent daily mean
SIF of every cell, driven by a seasonal harmonic regression with
dense-data-informed priors.
"""

__version__ = "0.1.0"

from . import analysis, gibbs, hyperprior, ingest, kernels, model, pipeline, product
from .gibbs import PackedCellData, PosteriorSummary, SamplerConfig, run_chain
from .model import (
    CellYearDataset,
    LatentState,
    OverpassDay,
    SeasonalCoefficients,
    SeasonalPriorSpec,
    SoundingRecord,
    VarianceState,
    fourier_basis,
    log_joint,
    seasonal_mean,
    simulate_cell_year,
)
