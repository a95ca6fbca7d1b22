"""
Simulation of log-Gaussian Cox processes with known parameters, used to
make synthetic datasets and to check that fitting recovers the truth.

The log intensity at the mesh vertices is

    eta[t, j] = beta0 + z_j' beta + x[t, j]

where z_j are the standardized covariate values at vertex j and x is a
draw of the spatiotemporal field. Between vertices the log intensity is
interpolated linearly, the same representation the model uses. Events
are placed by thinning: candidates from a homogeneous process at rate
lambdaMax are each kept with probability lambda(s) / lambdaMax.
"""
import math

import numpy
import shapely

from . import structures
from . import geometry
from . import meshing
from . import spdefem
from . import stgmrf
from . import gridio
from . import monitoring
from . import workers


COVARIATE_KINDS = ('x', 'y', 'bump', 'radial', 'raster')
# lambdaMax is the largest intensity found, times this
LAMBDA_SAFETY = 1.05
DFLT_MAX_CANDIDATES = 5000000
DFLT_EVAL_CELLS = 100


class CovariateGenerator:
    """
    A spatial covariate given by a function of position.

    Kinds are
        x, y     The coordinate itself
        bump     height * exp(-|s - centre|^2 / (2 width^2))
        radial   Distance from centre
        raster   Bilinear interpolation of a RasterGrid

    Parameters
    ----------
    name : str
    kind : str
    centre : (x, y), for bump and radial
    width, height : float, for bump
    grid : RasterGrid, for raster

    """
    def __init__(self, name, kind, centre=None, width=1.0, height=1.0,
            grid=None):
        if kind not in COVARIATE_KINDS:
            raise structures.ValidationError("Unknown covariate kind '{}'. "
                "Known: {}".format(kind, ','.join(COVARIATE_KINDS)))
        if kind in ('bump', 'radial') and centre is None:
            raise structures.ValidationError("Covariate '{}' of kind {} needs "
                "a centre".format(name, kind))
        if kind == 'bump' and not width > 0:
            raise structures.ValidationError("Bump width must be positive")
        if kind == 'raster' and grid is None:
            raise structures.ValidationError("Covariate '{}' needs a raster "
                "grid".format(name))
        self.name = name
        self.kind = kind
        self.centre = centre
        self.width = float(width)
        self.height = float(height)
        self.grid = grid

    def evaluate(self, xy):
        xy = numpy.asarray(xy, dtype=numpy.float64).reshape((-1, 2))
        if self.kind == 'x':
            vals = xy[:, 0].copy()
        elif self.kind == 'y':
            vals = xy[:, 1].copy()
        elif self.kind == 'bump':
            d2 = ((xy - numpy.asarray(self.centre)) ** 2).sum(axis=1)
            vals = self.height * numpy.exp(-d2 / (2 * self.width ** 2))
        elif self.kind == 'radial':
            vals = numpy.hypot(*(xy - numpy.asarray(self.centre)).T)
        else:
            vals = gridio.sampleBilinear(self.grid, xy)
        return vals

    def asDict(self):
        d = {'name': self.name, 'kind': self.kind}
        if self.centre is not None:
            d['centre'] = [float(c) for c in self.centre]
        if self.kind == 'bump':
            d['width'] = self.width
            d['height'] = self.height
        return d

    @classmethod
    def fromDict(cls, d, grid=None):
        return cls(d['name'], d['kind'], centre=d.get('centre'),
            width=d.get('width', 1.0), height=d.get('height', 1.0),
            grid=grid)


class SimScenario:
    """
    The true model for a simulation.

    Parameters
    ----------
    domain : list of shapely Polygon
    meshConfig : MeshConfig
    beta : dict
        True fixed effects, by name. 'intercept' is the intercept, other
        names are covariates, applied to the standardized covariate
    range, sd, phi : float
        True field parameters. sd = 0 means no field
    T : int
    covariates : list of CovariateGenerator
    seed : int
    evalCells : int
        Number of cells along the longer side of the grid on which the
        largest intensity is searched for
    maxCandidates : float
        Largest allowed expected number of thinning candidates per time
        step

    """
    def __init__(self, domain, meshConfig, beta, range=1.0, sd=0.0, phi=0.0,
            T=1, covariates=None, seed=0, evalCells=DFLT_EVAL_CELLS,
            maxCandidates=DFLT_MAX_CANDIDATES):
        if isinstance(domain, shapely.Polygon):
            domain = [domain]
        self.domain = list(domain)
        self.meshConfig = meshConfig
        self.beta = dict(beta)
        self.range = float(range)
        self.sd = float(sd)
        self.phi = float(phi)
        self.T = int(T)
        self.covariates = list(covariates or [])
        self.seed = int(seed)
        self.evalCells = int(evalCells)
        self.maxCandidates = float(maxCandidates)

        if len(self.domain) == 0:
            raise structures.ValidationError("Scenario has no domain")
        if self.sd < 0:
            raise structures.ValidationError("Field sd must not be negative")
        if self.sd > 0:
            structures.MaternParams(self.range, self.sd)
        structures.ARParams(self.phi, self.T)
        names = [c.name for c in self.covariates]
        for name in self.beta:
            if name != 'intercept' and name not in names:
                raise structures.ValidationError("Coefficient given for "
                    "unknown covariate '{}'".format(name))
        if self.evalCells < 1:
            raise structures.ValidationError("eval_cells must be positive")

    @property
    def hasField(self):
        return self.sd > 0

    def withSeed(self, seed):
        "Copy of this scenario with a different seed"
        return SimScenario(self.domain, self.meshConfig, self.beta,
            self.range, self.sd, self.phi, self.T, self.covariates, seed,
            self.evalCells, self.maxCandidates)

    def asDict(self):
        return {'beta': self.beta, 'range': self.range, 'sd': self.sd,
            'phi': self.phi, 'T': self.T,
            'covariates': [c.asDict() for c in self.covariates],
            'seed': self.seed, 'eval_cells': self.evalCells,
            'max_candidates': self.maxCandidates,
            'mesh': self.meshConfig.asDict()}


class SimulationResult:
    """
    One simulated dataset with its truth.

    Attributes
    ----------
    pattern : PointPattern
    field : numpy.ndarray (T, m)
        The true field at the vertices (zero without a field)
    logLambda : numpy.ndarray (T, m)
        True log intensity at the vertices
    mesh : Mesh
    covariates : CovariateField or None
        Raw covariate values at the vertices
    lambdaMax : numpy.ndarray (T,)
    scenario : SimScenario

    """
    def __init__(self, pattern, field, logLambda, mesh, covariates,
            lambdaMax, scenario):
        self.pattern = pattern
        self.field = field
        self.logLambda = logLambda
        self.mesh = mesh
        self.covariates = covariates
        self.lambdaMax = lambdaMax
        self.scenario = scenario

    def expectedCounts(self):
        """
        Expected number of events per time step, by the dual area
        quadrature over the inner (study region) triangles
        """
        areas = meshing.innerDualAreas(self.mesh)
        return numpy.exp(self.logLambda) @ areas

    def truthDict(self):
        d = self.scenario.asDict()
        d['event_counts'] = self.pattern.countsPerTime().tolist()
        d['expected_counts'] = self.expectedCounts().tolist()
        d['lambda_max'] = self.lambdaMax.tolist()
        d['num_vertices'] = self.mesh.numVertices
        return d


def scenarioCovariateField(sc, mesh):
    "Raw values of the scenario covariates at the mesh vertices"
    if len(sc.covariates) == 0:
        return None
    vals = numpy.column_stack([c.evaluate(mesh.vertices)
        for c in sc.covariates])
    return structures.CovariateField([c.name for c in sc.covariates], vals,
        mesh.innerFlag)


def evaluationGrid(domain, numCells):
    """
    Centres of a regular grid over the domain bounding box, with
    numCells cells along the longer side, keeping those in the domain
    """
    union = shapely.unary_union(domain)
    (xmin, ymin, xmax, ymax) = union.bounds
    cell = max(xmax - xmin, ymax - ymin) / numCells
    xc = numpy.arange(xmin + cell / 2, xmax, cell)
    yc = numpy.arange(ymin + cell / 2, ymax, cell)
    (xx, yy) = numpy.meshgrid(xc, yc)
    pts = numpy.column_stack([xx.ravel(), yy.ravel()])
    inside = shapely.intersects_xy(union, pts[:, 0], pts[:, 1])
    return pts[inside]


def simulateLgcp(sc, mesh=None, monitors=None):
    """
    Simulate one LGCP dataset.

    Parameters
    ----------
    sc : SimScenario
    mesh : Mesh, optional
        Mesh to use. By default it is built from the scenario
    monitors : Monitoring, optional

    Returns
    -------
    result : SimulationResult

    """
    monitors = monitoring.ensureMonitors(monitors)
    if mesh is None:
        with monitors.timestamps.ctx('mesh'):
            mesh = meshing.buildMesh(sc.domain, sc.meshConfig, monitors)
    m = mesh.numVertices
    (fieldSeed, pointSeed) = numpy.random.SeedSequence(sc.seed).spawn(2)

    with monitors.timestamps.ctx('simulate'):
        covField = scenarioCovariateField(sc, mesh)
        eta = numpy.full(m, sc.beta.get('intercept', 0.0))
        if covField is not None:
            names = [n for n in covField.names if n in sc.beta]
            if len(names) > 0:
                coefs = numpy.array([sc.beta[n] for n in names])
                eta = eta + covField.vertexColumns(names) @ coefs

        field = numpy.zeros((sc.T, m))
        if sc.hasField:
            Qs = spdefem.spdePrecision(mesh,
                structures.MaternParams(sc.range, sc.sd))
            Q = stgmrf.stPrecision(Qs, structures.ARParams(sc.phi, sc.T))
            field = stgmrf.sampleGmrf(Q, fieldSeed)[0].reshape((sc.T, m))
        logLambda = eta[numpy.newaxis, :] + field

        union = shapely.unary_union(sc.domain)
        shapely.prepare(union)
        (xmin, ymin, xmax, ymax) = union.bounds
        boxArea = (xmax - xmin) * (ymax - ymin)
        gridPts = evaluationGrid(sc.domain, sc.evalCells)
        gridA = meshing.project(mesh, gridPts).matrix
        innerVertices = mesh.innerFlag

        rng = numpy.random.default_rng(pointSeed)
        xyList = []
        tList = []
        lambdaMax = numpy.zeros(sc.T)
        for t in range(sc.T):
            logMax = logLambda[t, innerVertices].max()
            if len(gridPts) > 0:
                logMax = max(logMax, (gridA @ logLambda[t]).max())
            expected = math.exp(min(logMax, 700.0)) * LAMBDA_SAFETY * boxArea
            if not expected <= sc.maxCandidates:
                msg = ("Largest intensity at time {} would need {:.3g} "
                    "thinning candidates (limit {:.3g}). Try a smaller field "
                    "sd or intercept").format(t + 1, expected,
                    sc.maxCandidates)
                raise structures.NumericalError(msg)
            lamMax = math.exp(logMax) * LAMBDA_SAFETY
            lambdaMax[t] = lamMax

            numCandidates = rng.poisson(lamMax * boxArea)
            cand = numpy.column_stack([
                rng.uniform(xmin, xmax, numCandidates),
                rng.uniform(ymin, ymax, numCandidates)])
            keepU = rng.uniform(0.0, 1.0, numCandidates)
            inside = shapely.intersects_xy(union, cand[:, 0], cand[:, 1])
            cand = cand[inside]
            keepU = keepU[inside]
            lam = numpy.exp(meshing.project(mesh, cand).matrix @ logLambda[t])
            keep = keepU < lam / lamMax
            xyList.append(cand[keep])
            tList.append(numpy.full(keep.sum(), t + 1, dtype=numpy.int64))

        pattern = structures.PointPattern(numpy.vstack(xyList),
            numpy.concatenate(tList), sc.T, sc.domain)
    monitors.setParam('simulatedEvents', len(pattern))
    return SimulationResult(pattern, field, logLambda, mesh, covField,
        lambdaMax, sc)


def simulateReplicates(sc, numReplicates, numthreads=1, mesh=None):
    """
    Simulate several independent datasets from one scenario, sharing a
    mesh. Replicate i uses the i-th seed spawned from the scenario seed,
    so results do not depend on the number of threads.
    """
    if mesh is None:
        mesh = meshing.buildMesh(sc.domain, sc.meshConfig)
    # Build the point locator before the threads share the mesh
    meshing.project(mesh, numpy.zeros((0, 2)))
    seeds = numpy.random.SeedSequence(sc.seed).spawn(numReplicates)
    intSeeds = [int(s.generate_state(1)[0]) for s in seeds]
    return workers.runByThread(
        lambda seed: simulateLgcp(sc.withSeed(seed), mesh), intSeeds,
        numthreads)


def domainFromBounds(xmin, ymin, xmax, ymax):
    "Rectangular domain polygon list"
    return [geometry.makePolygon([(xmin, ymin), (xmax, ymin), (xmax, ymax),
        (xmin, ymax)])]
