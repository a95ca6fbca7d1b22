"""
The LGCP likelihood as independent Poisson pseudo-observations.

The integral of the intensity over the study region is approximated by
a sum over mesh vertices weighted by their dual areas within the region
(see meshing.innerDualAreas). Each time step then contributes m vertex
rows (count 0, exposure equal to the dual area) and one row per event
(count 1, exposure 0), and the log likelihood is

    sum over rows of  y * eta - e * exp(eta)

where eta is the linear predictor at each row. The constant terms
(log y! = 0 for y in {0, 1}) are dropped throughout.
"""
import numpy
from scipy import sparse

from . import structures
from . import meshing


def buildPseudoData(mesh, pattern, areas=None):
    """
    Build the pseudo-data for a point pattern on a mesh.

    Events are sorted by (t, x, y), so the result does not depend on
    the order of events in the pattern.

    Parameters
    ----------
    mesh : Mesh
    pattern : PointPattern
    areas : numpy.ndarray (m,), optional
        Quadrature weights of the vertices. By default the dual areas
        within the study region, so vertices only in the extension zone
        have exposure 0

    Returns
    -------
    pd : PseudoData

    """
    if areas is None:
        areas = meshing.innerDualAreas(mesh)
    m = mesh.numVertices
    T = pattern.T

    order = numpy.lexsort((pattern.xy[:, 1], pattern.xy[:, 0], pattern.t))
    xy = pattern.xy[order]
    t = pattern.t[order]
    proj = meshing.project(mesh, xy)
    if proj.outside.any():
        bad = order[proj.outside]
        raise structures.ValidationError("{} events fall outside the mesh. "
            "Event indexes: {}".format(len(bad), sorted(bad.tolist())[:20]))
    eventA = proj.matrix
    # Events on the region boundary only weight inner vertices
    outerWeight = eventA @ (~mesh.innerFlag).astype(numpy.float64)
    inExtension = (outerWeight > 1e-12)
    if inExtension.any():
        bad = order[inExtension]
        raise structures.ValidationError("{} events fall in the mesh "
            "extension zone, outside the study region. Event indexes: "
            "{}".format(len(bad), sorted(bad.tolist())[:20]))

    counts = numpy.bincount(t - 1, minlength=T)
    eventStart = numpy.concatenate([[0], numpy.cumsum(counts)])
    identity = sparse.identity(m, format='csr')

    yList = []
    eList = []
    timeList = []
    blocks = []
    for step in range(T):
        n = counts[step]
        yList.append(numpy.zeros(m))
        yList.append(numpy.ones(n))
        eList.append(areas)
        eList.append(numpy.zeros(n))
        timeList.append(numpy.full(m + n, step + 1, dtype=numpy.int64))
        blocks.append(identity)
        blocks.append(eventA[eventStart[step]:eventStart[step + 1]])

    y = numpy.concatenate(yList)
    e = numpy.concatenate(eList)
    timeIndex = numpy.concatenate(timeList)
    isEvent = (y > 0)
    spatialA = sparse.csr_matrix(sparse.vstack(blocks, format='csr'))

    coo = spatialA.tocoo()
    cols = coo.col + (timeIndex[coo.row] - 1) * m
    latentA = sparse.csr_matrix((coo.data, (coo.row, cols)),
        shape=(len(y), T * m))

    return structures.PseudoData(y, e, timeIndex, isEvent, spatialA,
        latentA, m, T, eventOrder=order)


def evaluateCovariates(fields, mesh, pattern, spec, pd=None,
        standardize=True):
    """
    Design matrix of the fixed effects, aligned with the pseudo-data rows.

    The intercept column (if any) comes first, then one column per
    covariate named in the ModelSpec. Vertex rows take covariate values
    directly, event rows interpolate them from the vertices of the
    containing triangle. Covariates are standardized using the mean and
    standard deviation over the inner vertices.

    Parameters
    ----------
    fields : CovariateField or None
    mesh : Mesh
    pattern : PointPattern
    spec : ModelSpec
    pd : PseudoData, optional
        The pseudo-data, if already built
    standardize : bool

    Returns
    -------
    Z : numpy.ndarray (N, p)

    """
    if pd is None:
        pd = buildPseudoData(mesh, pattern)
    columns = []
    if spec.intercept:
        columns.append(numpy.ones((pd.numRows, 1)))
    if len(spec.covariates) > 0:
        if fields is None:
            raise structures.ValidationError("Model needs covariates {} but "
                "none were given".format(','.join(spec.covariates)))
        vertexVals = fields.vertexColumns(spec.covariates, standardize)
        if vertexVals.shape[0] != mesh.numVertices:
            raise structures.ValidationError("Covariate table has {} rows, "
                "mesh has {} vertices".format(vertexVals.shape[0],
                mesh.numVertices))
        columns.append(pd.spatialA @ vertexVals)
    if len(columns) == 0:
        return numpy.zeros((pd.numRows, 0))
    return numpy.hstack(columns)


def checkEta(eta, numRows):
    eta = numpy.asarray(eta, dtype=numpy.float64)
    if eta.shape != (numRows,):
        raise structures.ValidationError("Linear predictor has shape {}, "
            "expected ({},)".format(eta.shape, numRows))
    if not numpy.isfinite(eta).all():
        raise structures.NumericalError("Linear predictor is not finite")
    return eta


def poissonMeans(eta, e):
    "e * exp(eta), zero where e is zero"
    mu = numpy.zeros(len(eta))
    pos = (e > 0)
    with numpy.errstate(over='ignore'):
        mu[pos] = e[pos] * numpy.exp(eta[pos])
    if not numpy.isfinite(mu).all():
        raise structures.NumericalError("Intensity overflow in likelihood")
    return mu


def loglik(eta, pd):
    """
    Log likelihood sum(y * eta - e * exp(eta)) over all rows, with the
    constant terms dropped.
    """
    if isinstance(pd, GaussianObservations):
        return pd.loglik(eta)
    eta = checkEta(eta, pd.numRows)
    mu = poissonMeans(eta, pd.e)
    return float(numpy.dot(pd.y, eta) - mu.sum())


def loglikGradHess(eta, pd):
    """
    Gradient and diagonal Hessian of the log likelihood with respect
    to eta.

    Returns
    -------
    grad : numpy.ndarray (N,)
        y - e * exp(eta)
    hessDiag : numpy.ndarray (N,)
        -e * exp(eta), never positive

    """
    if isinstance(pd, GaussianObservations):
        return pd.gradHess(eta)
    eta = checkEta(eta, pd.numRows)
    mu = poissonMeans(eta, pd.e)
    return (pd.y - mu, -mu)


def pointwiseLoglik(eta, pd):
    """
    Log likelihood of each row separately. eta may be a vector, or an
    (ndraws, N) array with one linear predictor per row.
    """
    if isinstance(pd, GaussianObservations):
        return pd.pointwise(eta)
    eta = numpy.asarray(eta, dtype=numpy.float64)
    with numpy.errstate(over='ignore', invalid='ignore'):
        expTerm = numpy.where(pd.e > 0, pd.e * numpy.exp(eta), 0.0)
    return pd.y * eta - expTerm


def expectedCounts(eta, pd):
    """
    Approximate expected number of events in each time step, the
    quadrature sum of exposure * exp(eta)
    """
    eta = checkEta(eta, pd.numRows)
    mu = poissonMeans(eta, pd.e)
    return numpy.bincount(pd.timeIndex - 1, weights=mu, minlength=pd.T)


class GaussianObservations:
    """
    Gaussian observations y ~ N(eta, noiseSd^2) of rows of the latent
    field, with the same interface as PseudoData for the Newton iteration.
    With this likelihood the latent posterior is exactly Gaussian.

    Parameters
    ----------
    y : numpy.ndarray (N,)
    spatialA : scipy.sparse matrix (N, m)
    timeIndex : numpy.ndarray (N,) of int in 1..T
    noiseSd : float
    numVertices, T : int

    """
    def __init__(self, y, spatialA, timeIndex, noiseSd, numVertices, T=1):
        self.y = numpy.asarray(y, dtype=numpy.float64)
        self.spatialA = sparse.csr_matrix(spatialA)
        self.timeIndex = numpy.asarray(timeIndex, dtype=numpy.int64)
        self.noiseSd = float(noiseSd)
        self.numVertices = numVertices
        self.T = T
        if not self.noiseSd > 0:
            raise structures.ValidationError("Noise sd must be positive")
        coo = self.spatialA.tocoo()
        cols = coo.col + (self.timeIndex[coo.row] - 1) * numVertices
        self.latentA = sparse.csr_matrix((coo.data, (coo.row, cols)),
            shape=(len(self.y), T * numVertices))
        self.isEvent = numpy.zeros(len(self.y), dtype=bool)
        self.eventCounts = numpy.zeros(T, dtype=numpy.int64)

    @property
    def numRows(self):
        return len(self.y)

    def pointwise(self, eta):
        r = (self.y - numpy.asarray(eta)) / self.noiseSd
        return (-0.5 * r * r -
            numpy.log(self.noiseSd * numpy.sqrt(2 * numpy.pi)))

    def loglik(self, eta):
        eta = checkEta(eta, self.numRows)
        return float(self.pointwise(eta).sum())

    def gradHess(self, eta):
        eta = checkEta(eta, self.numRows)
        prec = 1.0 / self.noiseSd ** 2
        return ((self.y - eta) * prec, numpy.full(self.numRows, -prec))
