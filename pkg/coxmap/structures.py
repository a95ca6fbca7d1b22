"""
All major data structures for coxmap, and the exceptions it raises
"""
import math

import numpy
from scipy.spatial import cKDTree


FACILITY_KINDS = ('school', 'bus_station', 'market', 'worship',
    'restaurant', 'hospital')


class CoxmapError(Exception):
    "Base class for all coxmap errors"


class ValidationError(CoxmapError):
    "Bad inputs: invalid geometry, parameters out of range, missing files"


class NumericalError(CoxmapError):
    """
    A numerical procedure failed (factorization, non-convergence,
    overflow). The bestSoFar attribute may carry whatever partial result
    was available when it failed.
    """
    def __init__(self, msg, bestSoFar=None):
        super().__init__(msg)
        self.bestSoFar = bestSoFar


class MeshError(NumericalError):
    """
    Mesh construction failed. The region attribute holds the bounds
    (xmin, ymin, xmax, ymax) of the offending part of the domain, if known.
    """
    def __init__(self, msg, region=None):
        super().__init__(msg)
        self.region = region


class RoadNetwork:
    """
    A road network as a list of straight segments. Each segment has an
    integer id, a start point and an end point (planar coordinates), and
    a metadata dictionary (e.g. the properties of the GeoJSON feature it
    came from).
    """
    def __init__(self, segmentIds, starts, ends, metadata=None):
        self.segmentIds = numpy.asarray(segmentIds, dtype=numpy.int64)
        self.starts = numpy.asarray(starts, dtype=numpy.float64).reshape(
            (-1, 2))
        self.ends = numpy.asarray(ends, dtype=numpy.float64).reshape((-1, 2))
        if metadata is None:
            metadata = [{} for _ in range(len(self.segmentIds))]
        self.metadata = metadata

        n = len(self.segmentIds)
        if len(self.starts) != n or len(self.ends) != n or len(metadata) != n:
            raise ValidationError("Road network arrays have different lengths")
        if len(numpy.unique(self.segmentIds)) != n:
            raise ValidationError("Road segment ids are not unique")
        if not (numpy.isfinite(self.starts).all() and
                numpy.isfinite(self.ends).all()):
            raise ValidationError("Road segment coordinates must be finite")
        if n > 0 and self.lengths.min() <= 0:
            badId = self.segmentIds[numpy.argmin(self.lengths)]
            raise ValidationError(
                "Road segment {} has zero length".format(badId))

    @property
    def lengths(self):
        return numpy.hypot(*(self.ends - self.starts).T)

    def __len__(self):
        return len(self.segmentIds)


class FacilityLayer:
    """
    Point locations of one kind of facility (schools, markets, ...)
    """
    def __init__(self, kind, points):
        if kind not in FACILITY_KINDS:
            raise ValidationError("Unknown facility kind '{}'. "
                "Known: {}".format(kind, ','.join(FACILITY_KINDS)))
        self.kind = kind
        self.points = numpy.asarray(points, dtype=numpy.float64).reshape(
            (-1, 2))
        if not numpy.isfinite(self.points).all():
            raise ValidationError("Facility coordinates must be finite")
        self.tree = None
        if len(self.points) > 0:
            self.tree = cKDTree(self.points)

    def __len__(self):
        return len(self.points)


class MeshConfig:
    """
    Settings for mesh construction. Edge lengths and the extension width
    are in the units of the domain coordinates (meters), the angle in
    degrees.
    """
    def __init__(self, maxEdgeInner, maxEdgeOuter, extensionWidth=0.0,
            minAngle=25.0):
        self.maxEdgeInner = float(maxEdgeInner)
        self.maxEdgeOuter = float(maxEdgeOuter)
        self.extensionWidth = float(extensionWidth)
        self.minAngle = float(minAngle)

        if not self.maxEdgeInner > 0:
            raise ValidationError("max_edge_inner must be positive")
        if self.maxEdgeInner > self.maxEdgeOuter:
            raise ValidationError("max_edge_inner ({}) exceeds max_edge_outer "
                "({})".format(self.maxEdgeInner, self.maxEdgeOuter))
        if self.extensionWidth < 0:
            raise ValidationError("extension_width must not be negative")
        if not (0 < self.minAngle < 34):
            raise ValidationError("min_angle must be in (0, 34) degrees, "
                "not {}".format(self.minAngle))

    def asDict(self):
        return {'max_edge_inner': self.maxEdgeInner,
            'max_edge_outer': self.maxEdgeOuter,
            'extension_width': self.extensionWidth,
            'min_angle': self.minAngle}


class Mesh:
    """
    A triangulation of the (extended) study domain.

    Attributes
    ----------
    vertices : numpy.ndarray (m, 2)
        Vertex coordinates
    triangles : numpy.ndarray (k, 3) of int
        Vertex indices of each triangle, counter-clockwise
    innerFlag : numpy.ndarray (m,) of bool
        True for vertices in the study region, False for vertices only
        in the extension zone
    triangleInner : numpy.ndarray (k,) of bool
        True for triangles inside the study region

    """
    def __init__(self, vertices, triangles, innerFlag, triangleInner=None):
        self.vertices = numpy.asarray(vertices, dtype=numpy.float64).reshape(
            (-1, 2))
        self.triangles = numpy.asarray(triangles, dtype=numpy.int64).reshape(
            (-1, 3))
        self.innerFlag = numpy.asarray(innerFlag, dtype=bool)
        if triangleInner is None:
            triangleInner = self.innerFlag[self.triangles].all(axis=1)
        self.triangleInner = numpy.asarray(triangleInner, dtype=bool)
        self.locator = None

        m = len(self.vertices)
        if len(self.innerFlag) != m:
            raise ValidationError("Mesh inner flags do not match vertices")
        if len(self.triangles) == 0:
            raise ValidationError("Mesh has no triangles")
        if self.triangles.min() < 0 or self.triangles.max() >= m:
            raise ValidationError("Mesh triangle indices out of range")
        if self.signedAreas.min() <= 0:
            raise ValidationError("Mesh has triangles which are degenerate "
                "or not counter-clockwise")

    @property
    def numVertices(self):
        return len(self.vertices)

    @property
    def signedAreas(self):
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def triangleAreas(self):
        return numpy.abs(self.signedAreas)

    @property
    def area(self):
        return self.triangleAreas.sum()

    @property
    def innerArea(self):
        return self.triangleAreas[self.triangleInner].sum()

    @property
    def edges(self):
        "Unique edges, as an (E, 2) array of sorted vertex index pairs"
        t = self.triangles
        allEdges = numpy.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        allEdges.sort(axis=1)
        return numpy.unique(allEdges, axis=0)

    @property
    def edgeLengths(self):
        e = self.edges
        d = self.vertices[e[:, 1]] - self.vertices[e[:, 0]]
        return numpy.hypot(d[:, 0], d[:, 1])

    @property
    def triangleMinAngles(self):
        "Smallest interior angle of each triangle, in degrees"
        p = self.vertices[self.triangles]
        angles = []
        for i in range(3):
            a = p[:, (i + 1) % 3] - p[:, i]
            b = p[:, (i + 2) % 3] - p[:, i]
            cosang = ((a * b).sum(axis=1) /
                (numpy.hypot(*a.T) * numpy.hypot(*b.T)))
            angles.append(numpy.degrees(numpy.arccos(numpy.clip(cosang,
                -1, 1))))
        return numpy.min(angles, axis=0)

    @property
    def minAngle(self):
        "Smallest interior angle of any triangle, in degrees"
        return float(self.triangleMinAngles.min())

    def __str__(self):
        return "Mesh: {} vertices ({} inner), {} triangles, area {}".format(
            self.numVertices, self.innerFlag.sum(), len(self.triangles),
            self.area)


class Projector:
    """
    Barycentric projection of a set of points onto mesh vertices.

    Attributes
    ----------
    matrix : scipy.sparse.csr_matrix (npts, m)
        Interpolation weights. Rows for points outside the mesh are zero
    outside : numpy.ndarray (npts,) of bool
        True for points which fall outside the mesh
    triangleIndex : numpy.ndarray (npts,) of int
        Containing triangle of each point, -1 if outside

    """
    def __init__(self, matrix, outside, triangleIndex):
        self.matrix = matrix
        self.outside = outside
        self.triangleIndex = triangleIndex


class MaternParams:
    """
    Matern field parameters. The range is the distance at which the
    correlation is about 0.14 (for nu=1), sd is the marginal standard
    deviation.
    """
    def __init__(self, range, sd, nu=1.0):
        self.range = float(range)
        self.sd = float(sd)
        self.nu = float(nu)
        if not (self.range > 0 and self.sd > 0 and self.nu > 0):
            raise ValidationError("Matern range, sd and nu must be positive "
                "(got {}, {}, {})".format(self.range, self.sd, self.nu))

    @property
    def kappa(self):
        return math.sqrt(8 * self.nu) / self.range

    @property
    def tau(self):
        """
        Scale of the white noise which gives marginal variance sd**2,
        in two dimensions
        """
        nu = self.nu
        var1 = (math.gamma(nu) / (math.gamma(nu + 1) * 4 * math.pi *
            self.kappa ** (2 * nu)))
        return math.sqrt(var1) / self.sd


class ARParams:
    "Stationary AR(1) in time, phi is the lag-1 correlation"
    def __init__(self, phi, T):
        self.phi = float(phi)
        if int(T) != T:
            raise ValidationError("Number of time steps must be an integer")
        self.T = int(T)
        if not abs(self.phi) < 1:
            raise ValidationError("AR(1) correlation must satisfy |phi| < 1, "
                "got {}".format(self.phi))
        if self.T < 1:
            raise ValidationError("Number of time steps must be at least 1")


class PointPattern:
    """
    Events with integer time indices 1..T.

    Attributes
    ----------
    xy : numpy.ndarray (n, 2)
    t : numpy.ndarray (n,) of int
    T : int
        Number of time steps
    domain : list of shapely Polygon, or None

    """
    def __init__(self, xy, t, T, domain=None):
        self.xy = numpy.asarray(xy, dtype=numpy.float64).reshape((-1, 2))
        self.t = numpy.asarray(t, dtype=numpy.int64).reshape(-1)
        self.T = int(T)
        self.domain = domain

        if len(self.xy) != len(self.t):
            raise ValidationError("Event coordinates and times differ in "
                "length")
        if self.T < 1:
            raise ValidationError("Number of time steps must be at least 1")
        if not numpy.isfinite(self.xy).all():
            raise ValidationError("Event coordinates must be finite")
        if len(self.t) > 0 and (self.t.min() < 1 or self.t.max() > self.T):
            raise ValidationError("Event time indices must be in 1..{}".format(
                self.T))

    def countsPerTime(self):
        return numpy.bincount(self.t - 1, minlength=self.T)

    def __len__(self):
        return len(self.t)


class CovariateField:
    """
    Spatial covariates, given by their values at the mesh vertices.
    Standardization uses the mean and standard deviation over the inner
    (study region) vertices.
    """
    def __init__(self, names, vertexValues, innerFlag):
        self.names = list(names)
        self.values = numpy.asarray(vertexValues, dtype=numpy.float64).reshape(
            (len(innerFlag), len(self.names)))
        if len(set(self.names)) != len(self.names):
            raise ValidationError("Duplicate covariate names")
        if not numpy.isfinite(self.values).all():
            badRows = numpy.where(~numpy.isfinite(self.values).all(axis=1))[0]
            raise ValidationError("Non-finite covariate values at vertices "
                "{}".format(badRows[:20].tolist()))
        inner = numpy.asarray(innerFlag, dtype=bool)
        if not inner.any():
            inner = numpy.ones(len(inner), dtype=bool)
        self.means = self.values[inner].mean(axis=0)
        self.sds = self.values[inner].std(axis=0)
        # A constant covariate is only shifted
        self.sds[self.sds == 0] = 1.0

    def columnIndex(self, name):
        if name not in self.names:
            raise ValidationError("No covariate named '{}'. Available: "
                "{}".format(name, ','.join(self.names)))
        return self.names.index(name)

    def vertexColumns(self, names, standardize=True):
        "Return (m, len(names)) array of vertex values"
        idx = [self.columnIndex(n) for n in names]
        vals = self.values[:, idx]
        if standardize:
            vals = (vals - self.means[idx]) / self.sds[idx]
        return vals


class PseudoData:
    """
    The LGCP likelihood written as independent Poisson observations.
    For each time step there are m vertex rows (count 0, exposure equal
    to the dual area of the vertex) followed by one row per event
    (count 1, exposure 0).

    Attributes
    ----------
    y, e : numpy.ndarray (N,)
        Counts and exposures
    timeIndex : numpy.ndarray (N,) of int
        Time step (1..T) of each row
    isEvent : numpy.ndarray (N,) of bool
    spatialA : scipy.sparse.csr_matrix (N, m)
        Row interpolation weights onto the mesh vertices
    latentA : scipy.sparse.csr_matrix (N, T*m)
        The same, placed in the block of columns for the row's time step
    numVertices, T : int
    eventCounts : numpy.ndarray (T,)
    eventOrder : numpy.ndarray of int
        Index into the original PointPattern of each event row, in order

    """
    def __init__(self, y, e, timeIndex, isEvent, spatialA, latentA,
            numVertices, T, eventOrder=None):
        self.y = y
        self.e = e
        self.timeIndex = timeIndex
        self.isEvent = isEvent
        self.spatialA = spatialA
        self.latentA = latentA
        self.numVertices = numVertices
        self.T = T
        self.eventCounts = numpy.bincount(timeIndex[isEvent] - 1,
            minlength=T)
        self.eventOrder = eventOrder

    @property
    def numRows(self):
        return len(self.y)

    def exposurePerTime(self):
        return numpy.bincount(self.timeIndex - 1, weights=self.e,
            minlength=self.T)


class ModelSpec:
    """
    Which terms make up the linear predictor: intercept, a list of
    named covariates, and the spatiotemporal field. Any hyperparameter
    may be held fixed at a given value rather than estimated.
    """
    def __init__(self, intercept=True, covariates=None, field=True, T=1,
            fixedRange=None, fixedSd=None, fixedPhi=None):
        self.intercept = bool(intercept)
        self.covariates = list(covariates or [])
        self.field = bool(field)
        self.T = int(T)
        self.fixedRange = fixedRange
        self.fixedSd = fixedSd
        self.fixedPhi = fixedPhi

        if not (self.intercept or self.covariates or self.field):
            raise ValidationError("Model must have at least one of intercept, "
                "covariates or field")
        if self.T < 1:
            raise ValidationError("Number of time steps must be at least 1")
        if fixedPhi is not None and not abs(fixedPhi) < 1:
            raise ValidationError("Fixed phi must satisfy |phi| < 1")
        for (name, val) in (('range', fixedRange), ('sd', fixedSd)):
            if val is not None and not val > 0:
                raise ValidationError("Fixed {} must be positive".format(name))

    @property
    def fixedEffectNames(self):
        names = list(self.covariates)
        if self.intercept:
            names = ['intercept'] + names
        return names

    def asDict(self):
        return {'intercept': self.intercept, 'covariates': self.covariates,
            'field': self.field, 'T': self.T, 'fixed_range': self.fixedRange,
            'fixed_sd': self.fixedSd, 'fixed_phi': self.fixedPhi}

    @classmethod
    def fromDict(cls, d):
        return cls(intercept=d['intercept'], covariates=d['covariates'],
            field=d['field'], T=d['T'], fixedRange=d.get('fixed_range'),
            fixedSd=d.get('fixed_sd'), fixedPhi=d.get('fixed_phi'))


class PriorSpec:
    """
    Prior settings.

    PC prior on the Matern field with P(range < rangeMedian) = rangeProb
    and P(sd > sdUpper) = sdProb. A Gaussian prior on the Fisher-z
    transform of phi, z = log((1+phi)/(1-phi)). Independent Gaussian
    priors, mean zero, on the fixed effects.
    """
    def __init__(self, rangeMedian, sdUpper=1.0, rangeProb=0.5, sdProb=0.01,
            phiMean=0.0, phiSd=1.0, fixedEffectSd=10.0):
        self.rangeMedian = float(rangeMedian)
        self.sdUpper = float(sdUpper)
        self.rangeProb = float(rangeProb)
        self.sdProb = float(sdProb)
        self.phiMean = float(phiMean)
        self.phiSd = float(phiSd)
        self.fixedEffectSd = float(fixedEffectSd)

        if not (self.rangeMedian > 0 and self.sdUpper > 0):
            raise ValidationError("PC prior rho0 and sigma0 must be positive")
        if not (0 < self.rangeProb < 1 and 0 < self.sdProb < 1):
            raise ValidationError("PC prior probabilities must be in (0, 1)")
        if not (self.phiSd > 0 and self.fixedEffectSd > 0):
            raise ValidationError("Prior standard deviations must be positive")

    def asDict(self):
        return {'range_median': self.rangeMedian, 'sd_upper': self.sdUpper,
            'range_prob': self.rangeProb, 'sd_prob': self.sdProb,
            'phi_mean': self.phiMean, 'phi_sd': self.phiSd,
            'fixed_effect_sd': self.fixedEffectSd}

    @classmethod
    def fromDict(cls, d):
        return cls(d['range_median'], sdUpper=d['sd_upper'],
            rangeProb=d['range_prob'], sdProb=d['sd_prob'],
            phiMean=d['phi_mean'], phiSd=d['phi_sd'],
            fixedEffectSd=d['fixed_effect_sd'])


class RasterGrid:
    """
    A regular grid of values, ESRI ASCII grid conventions. The values
    array is (nrows, ncols), the first row being the top (northern) one.
    (xll, yll) is the lower-left corner of the lower-left cell.
    """
    def __init__(self, ncols, nrows, xll, yll, cellSize, values=None,
            nodata=-9999.0):
        self.ncols = int(ncols)
        self.nrows = int(nrows)
        self.xll = float(xll)
        self.yll = float(yll)
        self.cellSize = float(cellSize)
        self.nodata = float(nodata)
        if not self.cellSize > 0:
            raise ValidationError("Raster cell size must be positive")
        if values is None:
            values = numpy.full((self.nrows, self.ncols), self.nodata)
        self.values = numpy.asarray(values, dtype=numpy.float64).reshape(
            (self.nrows, self.ncols))

    @property
    def yTop(self):
        return self.yll + self.nrows * self.cellSize

    def cellCenters(self):
        "Return (nrows*ncols, 2) array of cell centres, row-major from top"
        xc = self.xll + (numpy.arange(self.ncols) + 0.5) * self.cellSize
        yc = self.yTop - (numpy.arange(self.nrows) + 0.5) * self.cellSize
        (xx, yy) = numpy.meshgrid(xc, yc)
        return numpy.column_stack([xx.ravel(), yy.ravel()])

    def validMask(self):
        return numpy.isfinite(self.values) & (self.values != self.nodata)


class HyperParams:
    """
    Hyperparameters of the spatiotemporal field: Matern range and
    marginal standard deviation, AR(1) correlation in time, and the
    (fixed) smoothness
    """
    def __init__(self, range, sd, phi=0.0, nu=1.0):
        self.range = float(range)
        self.sd = float(sd)
        self.phi = float(phi)
        self.nu = float(nu)

    def maternParams(self):
        return MaternParams(self.range, self.sd, self.nu)

    def arParams(self, T):
        return ARParams(self.phi, T)

    def asDict(self):
        return {'range': self.range, 'sd': self.sd, 'phi': self.phi,
            'nu': self.nu}
