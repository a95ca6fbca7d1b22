"""
Coxmap fits spatiotemporal log-Gaussian Cox process models to point
patterns, such as the locations of traffic accidents recorded over
several years. The log-intensity is modelled as an intercept, a set of
spatial covariates, and a Gaussian random field with Matern correlation
in space and first-order autoregressive dynamics in time.

The random field is represented on a triangular mesh via the finite
element (SPDE) construction, which gives a sparse precision matrix.
Posterior inference uses a Laplace approximation of the latent field,
with the hyperparameters (range, standard deviation and temporal
correlation) set to their penalised-complexity posterior mode. Models
are compared with DIC and WAIC.

The package also provides the geospatial ingestion steps (road network
buffering, snapping events to roads, distances to facilities, sampling
of raster covariates) and a simulator of the same model, used to check
the fitting against known truth.

The main module for command line use is `coxmap.pipeline`. The fitting
itself lives in `coxmap.inference`.

"""

__version__ = "1.0.0"
