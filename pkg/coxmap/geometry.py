"""
Planar geometry for the study domain and the road network: polygon
containment, buffering of roads, snapping events onto roads, and
distances to the nearest facility.

All coordinates are planar, in meters, and all distances are Euclidean.
Polygons are shapely Polygon objects, with the exterior ring
counter-clockwise and holes clockwise (see makePolygon).
"""
import math

import numpy
import shapely
from shapely import geometry as shpgeom
from shapely.geometry.polygon import orient
from scipy.spatial.distance import pdist

from . import structures
from . import workers


# Buffer caps use this many segments per quarter circle, which makes
# each endpoint disk a regular 16-gon
DFLT_QUADSEGS = 4
DFLT_NETWORK_SPACING = 50.0
# Coordinates all smaller than this look like longitude/latitude
LONLAT_LIMIT = 360.0


def makePolygon(exterior, holes=None):
    """
    Make a valid, correctly oriented Polygon from an exterior ring and
    a list of hole rings (each a sequence of (x, y)). Raises
    ValidationError if the result is not a valid polygon of positive area.
    """
    poly = shpgeom.Polygon(exterior, holes)
    checkPolygon(poly)
    return orient(poly, sign=1.0)


def checkPolygon(poly):
    """
    Raise ValidationError if poly is not a valid Polygon of positive area
    """
    if not isinstance(poly, shpgeom.Polygon):
        raise structures.ValidationError("Expected a Polygon, got {}".format(
            type(poly).__name__))
    if poly.is_empty or not poly.is_valid:
        raise structures.ValidationError("Invalid polygon: {}".format(
            shapely.is_valid_reason(poly)))
    if not poly.area > 0:
        raise structures.ValidationError("Polygon has zero area")
    coords = numpy.asarray(poly.exterior.coords)
    if not numpy.isfinite(coords).all():
        raise structures.ValidationError("Polygon coordinates must be finite")


def pointInPolygon(p, poly):
    """
    True if point p = (x, y) is inside poly and outside all of its holes.
    Points on the boundary count as inside.
    """
    checkPolygon(poly)
    return bool(poly.covers(shpgeom.Point(p[0], p[1])))


def pointsInDomain(xy, polygons):
    """
    Vectorised containment test of an (n, 2) array of points against
    the union of a list of polygons. Boundary points count as inside.
    """
    xy = numpy.asarray(xy, dtype=numpy.float64).reshape((-1, 2))
    domain = shapely.unary_union(polygons)
    return shapely.intersects_xy(domain, xy[:, 0], xy[:, 1])


def snapToNetwork(p, net):
    """
    Snap point p onto the nearest segment of the road network.

    Parameters
    ----------
    p : (x, y)
    net : RoadNetwork

    Returns
    -------
    segmentId : int
        Id of the nearest segment. Ties go to the smallest id
    snapped : numpy.ndarray (2,)
        Orthogonal projection of p onto that segment, clamped to its
        endpoints
    distance : float
        Distance from p to the snapped point

    """
    if len(net) == 0:
        raise structures.ValidationError("Cannot snap to an empty road "
            "network")
    return snapOne(numpy.asarray(p, dtype=numpy.float64), net)


def snapOne(p, net):
    d = net.ends - net.starts
    len2 = (d * d).sum(axis=1)
    t = numpy.clip(((p - net.starts) * d).sum(axis=1) / len2, 0.0, 1.0)
    proj = net.starts + t[:, numpy.newaxis] * d
    dist = numpy.hypot(*(proj - p).T)
    dmin = dist.min()
    candidates = numpy.where(dist == dmin)[0]
    i = candidates[numpy.argmin(net.segmentIds[candidates])]
    return (int(net.segmentIds[i]), proj[i], float(dist[i]))


def snapPoints(xy, net, numthreads=1):
    """
    Snap each row of the (n, 2) array xy onto the road network, as for
    snapToNetwork. Work is shared between numthreads threads, with
    identical results for any number of threads.

    Returns
    -------
    segmentIds : numpy.ndarray (n,) of int
    snapped : numpy.ndarray (n, 2)
    distances : numpy.ndarray (n,)

    """
    if len(net) == 0:
        raise structures.ValidationError("Cannot snap to an empty road "
            "network")
    xy = numpy.asarray(xy, dtype=numpy.float64).reshape((-1, 2))
    results = workers.runByThread(lambda p: snapOne(p, net), list(xy),
        numthreads)
    n = len(xy)
    segmentIds = numpy.array([r[0] for r in results], dtype=numpy.int64)
    snapped = numpy.array([r[1] for r in results]).reshape((n, 2))
    distances = numpy.array([r[2] for r in results], dtype=numpy.float64)
    return (segmentIds, snapped, distances)


def bufferNetwork(net, width):
    """
    Buffer every road segment by the given width, and merge the result.

    Each segment becomes a rectangle with a disk (a regular 16-gon) at each
    end. These are merged by polygon union into disjoint polygons.

    Returns
    -------
    polygons : list of shapely Polygon
        Valid, oriented, sorted by their lower-left bounds

    """
    if not width > 0:
        raise structures.ValidationError("Buffer width must be positive, "
            "got {}".format(width))
    if len(net) == 0:
        raise structures.ValidationError("Cannot buffer an empty road network")

    coords = numpy.stack([net.starts, net.ends], axis=1)
    lines = shapely.linestrings(coords)
    pieces = shapely.buffer(lines, width, quad_segs=DFLT_QUADSEGS)
    merged = shapely.unary_union(pieces)
    polygons = polygonList(merged)
    for poly in polygons:
        checkPolygon(poly)
    return polygons


def polygonList(geom):
    """
    Turn a Polygon, MultiPolygon or collection into a sorted list of
    oriented Polygons
    """
    if isinstance(geom, shpgeom.Polygon):
        geoms = [geom]
    else:
        geoms = [g for g in geom.geoms if isinstance(g, shpgeom.Polygon)]
    geoms = [orient(g, sign=1.0) for g in geoms if g.area > 0]
    geoms.sort(key=lambda g: (g.bounds[0], g.bounds[1], -g.area))
    return geoms


def nearestDistance(p, layer):
    """
    Distance from p = (x, y) to the nearest point of the FacilityLayer
    """
    if len(layer) == 0:
        raise structures.ValidationError("Facility layer '{}' is empty".format(
            layer.kind))
    (dist, idx) = layer.tree.query(numpy.asarray(p, dtype=numpy.float64))
    return float(dist)


def nearestDistances(xy, layer, numthreads=1):
    """
    Distances from each row of the (n, 2) array xy to the nearest point
    of the FacilityLayer
    """
    if len(layer) == 0:
        raise structures.ValidationError("Facility layer '{}' is empty".format(
            layer.kind))
    xy = numpy.asarray(xy, dtype=numpy.float64).reshape((-1, 2))
    (dist, idx) = layer.tree.query(xy, workers=numthreads)
    return dist


def checkPlanarCoords(xy, allowLonLatLike=False):
    """
    Reject coordinates which look like longitude/latitude, i.e. all of
    them smaller than 360 in magnitude. Projected coordinates in meters
    are required. Set allowLonLatLike to accept small planar coordinates.
    """
    xy = numpy.asarray(xy, dtype=numpy.float64)
    if allowLonLatLike or xy.size == 0:
        return
    if numpy.all(numpy.abs(xy) < LONLAT_LIMIT):
        raise structures.ValidationError("Coordinates look like "
            "longitude/latitude "
            "(all smaller than {}). Planar coordinates in meters are "
            "required; set geometry.allow_lonlat_like to override".format(
            LONLAT_LIMIT))


def roadNetworkFromLines(lineList, propertiesList=None):
    """
    Make a RoadNetwork from a list of polylines (each a sequence of (x, y)).
    Every pair of consecutive points becomes a segment, numbered in order.
    Zero-length pairs are skipped.
    """
    if propertiesList is None:
        propertiesList = [{} for _ in lineList]
    starts = []
    ends = []
    metadata = []
    for (lineNum, (line, props)) in enumerate(zip(lineList, propertiesList)):
        pts = numpy.asarray(line, dtype=numpy.float64).reshape((-1, 2))
        for i in range(len(pts) - 1):
            if (pts[i] != pts[i + 1]).any():
                starts.append(pts[i])
                ends.append(pts[i + 1])
                meta = dict(props)
                meta['line'] = lineNum
                metadata.append(meta)
    ids = numpy.arange(len(starts))
    return structures.RoadNetwork(ids, numpy.reshape(starts, (-1, 2)),
        numpy.reshape(ends, (-1, 2)), metadata)


def sampleNetworkPoints(net, spacing=DFLT_NETWORK_SPACING):
    """
    Target points along the road network, for prediction. Each segment
    is cut into equal pieces no longer than spacing, and the midpoint of
    each piece is returned.

    Returns
    -------
    xy : numpy.ndarray (n, 2)
    segmentIds : numpy.ndarray (n,)

    """
    if not spacing > 0:
        raise structures.ValidationError("Network sample spacing must be "
            "positive")
    xyList = []
    idList = []
    for (segId, a, b, length) in zip(net.segmentIds, net.starts, net.ends,
            net.lengths):
        numPieces = max(1, int(math.ceil(length / spacing)))
        frac = (numpy.arange(numPieces) + 0.5) / numPieces
        xyList.append(a + frac[:, numpy.newaxis] * (b - a))
        idList.append(numpy.full(numPieces, segId))
    if len(xyList) == 0:
        return (numpy.zeros((0, 2)), numpy.zeros(0, dtype=numpy.int64))
    return (numpy.vstack(xyList), numpy.concatenate(idList))


def domainDiameter(polygons):
    "Largest distance between any two points of the domain"
    hull = shapely.unary_union(polygons).convex_hull
    if isinstance(hull, shpgeom.Polygon):
        coords = numpy.asarray(hull.exterior.coords)
    else:
        coords = numpy.asarray(hull.coords)
    if len(coords) < 2:
        return 0.0
    return float(pdist(coords).max())
