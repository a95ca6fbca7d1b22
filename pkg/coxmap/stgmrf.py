"""
Spatiotemporal Gaussian Markov random fields: a stationary AR(1) with
unit variance in time, combined with a spatial precision by a Kronecker
product, and sampling from sparse precisions.

The latent vector is ordered vertex-major within each time block, i.e.
element (t - 1) * m + j is vertex j at time step t.
"""
import math

import numpy
from scipy import sparse

from . import structures
from . import factor


# Largest latent vector stPrecision will build, unless told otherwise
DFLT_MAX_LATENT_SIZE = 2000000


def ar1Precision(a):
    """
    Precision matrix (T, T) of a stationary AR(1) process with unit
    marginal variance and lag-1 correlation a.phi.

    Parameters
    ----------
    a : ARParams

    Returns
    -------
    Q : scipy.sparse.csc_matrix

    """
    (phi, T) = (a.phi, a.T)
    if not abs(phi) < 1:
        raise structures.ValidationError("AR(1) correlation must satisfy "
            "|phi| < 1, got {}".format(phi))
    if T == 1:
        return sparse.csc_matrix(numpy.ones((1, 1)))
    scale = 1.0 / (1.0 - phi * phi)
    diag = numpy.full(T, 1.0 + phi * phi)
    diag[0] = diag[-1] = 1.0
    off = numpy.full(T - 1, -phi)
    Q = sparse.diags([off, diag, off], [-1, 0, 1]) * scale
    return sparse.csc_matrix(Q)


def ar1LogDet(phi, T):
    "Log determinant of ar1Precision, in closed form"
    return -(T - 1) * math.log(1.0 - phi * phi)


def stPrecision(Qs, a, maxSize=DFLT_MAX_LATENT_SIZE):
    """
    Precision of the separable spatiotemporal field, kron(Qar1, Qs),
    of size T*m. Raises ValidationError if T*m exceeds maxSize.
    """
    m = Qs.shape[0]
    if a.T * m > maxSize:
        raise structures.ValidationError("Spatiotemporal field of size "
            "{} x {} = {} exceeds the limit of {} (optimizer."
            "max_latent_size)".format(a.T, m, a.T * m, maxSize))
    Qt = ar1Precision(a)
    if a.T == 1:
        return sparse.csc_matrix(Qs)
    return sparse.csc_matrix(sparse.kron(Qt, Qs))


def stLogDet(logdetQs, m, a):
    """
    Log determinant of stPrecision, from that of the spatial precision,
    using log|A kron B| = m log|A| + T log|B|
    """
    return a.T * logdetQs + m * ar1LogDet(a.phi, a.T)


def sampleGmrf(Q, seed, numSamples=1, cholFactor=None):
    """
    Draw samples with zero mean and precision Q.

    Each draw solves L' x = z with z standard normal, where Q = L L'.
    The result depends only on Q and the seed.

    Parameters
    ----------
    Q : scipy.sparse matrix (n, n)
    seed : int or numpy.random.SeedSequence
    numSamples : int
    cholFactor : factor.SparseCholesky, optional
        An existing factorization of Q, to save computing it again

    Returns
    -------
    x : numpy.ndarray (numSamples, n)

    """
    if cholFactor is None:
        cholFactor = factor.SparseCholesky(Q, "GMRF precision")
    rng = numpy.random.default_rng(seed)
    z = rng.standard_normal((cholFactor.n, numSamples))
    x = cholFactor.sampleStandard(z)
    return x.T
