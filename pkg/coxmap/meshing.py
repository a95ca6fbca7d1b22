"""
Triangular meshes over the study domain. The study region (a polygon,
or the buffered road network) is the inner zone, meshed finely. It is
surrounded by an extension zone, meshed more coarsely, to keep the
boundary effects of the SPDE field away from the data.

Triangulation uses Triangle, through meshpy, as a constrained quality
Delaunay mesh, with the study region boundary held as constraint
segments. A refinement callback enforces the maximum edge length of the
zone each triangle falls in.
"""
import hashlib
import json

import numpy
import shapely
from shapely import geometry as shpgeom
from scipy import sparse
from meshpy import triangle

from . import structures
from . import geometry


MESH_FORMAT = "coxmap-mesh"
MESH_FORMAT_VERSION = 1
DFLT_MAX_REFINE_ATTEMPTS = 4
# Each failed attempt shrinks the edge targets by this factor
REFINE_SHRINK = 0.9
# Extension boundaries are rounded with this many segments per quarter circle
EXTENSION_QUADSEGS = 8
EDGE_TOLERANCE = 1e-9
# Degrees
ANGLE_TOLERANCE = 0.5


def buildMesh(domain, cfg, monitors=None):
    """
    Triangulate the given domain.

    Parameters
    ----------
    domain : list of shapely Polygon
        The study region. Overlapping or touching polygons are merged.
    cfg : MeshConfig
        Edge lengths for the inner zone and the extension zone, the width
        of the extension zone, and the minimum triangle angle
    monitors : Monitoring, optional
        If given, mesh statistics are recorded in it

    Returns
    -------
    mesh : Mesh

    """
    if isinstance(domain, shpgeom.Polygon):
        domain = [domain]
    if len(domain) == 0:
        raise structures.ValidationError("No domain polygons to mesh")
    for poly in domain:
        geometry.checkPolygon(poly)
    inner = shapely.unary_union(domain)
    (xmin, ymin, xmax, ymax) = inner.bounds
    scale = max(xmax - xmin, ymax - ymin)
    if inner.area <= 1e-12 * scale * scale:
        raise structures.MeshError("Domain polygon is degenerate "
            "(area {})".format(inner.area), region=inner.bounds)

    if cfg.extensionWidth > 0:
        outer = inner.buffer(cfg.extensionWidth, quad_segs=EXTENSION_QUADSEGS)
    else:
        outer = inner
    shapely.prepare(inner)

    maxEdgeInner = cfg.maxEdgeInner
    maxEdgeOuter = cfg.maxEdgeOuter
    attempt = 0
    mesh = None
    while mesh is None:
        (vertices, triangles) = triangulate(inner, outer, cfg.extensionWidth,
            maxEdgeInner, maxEdgeOuter, cfg.minAngle)
        centroids = vertices[triangles].mean(axis=1)
        triangleInner = shapely.contains_xy(inner, centroids[:, 0],
            centroids[:, 1])
        tooLong = findLongTriangles(vertices, triangles, triangleInner,
            cfg.maxEdgeInner, cfg.maxEdgeOuter)
        if not tooLong.any():
            mesh = makeMesh(vertices, triangles, triangleInner)
        else:
            attempt += 1
            if attempt >= DFLT_MAX_REFINE_ATTEMPTS:
                bad = vertices[triangles[tooLong]].reshape((-1, 2))
                region = (bad[:, 0].min(), bad[:, 1].min(), bad[:, 0].max(),
                    bad[:, 1].max())
                msg = ("Mesh refinement did not reach the requested edge " +
                    "lengths after {} attempts, in region {}").format(
                    attempt, region)
                raise structures.MeshError(msg, region=region)
            maxEdgeInner *= REFINE_SHRINK
            maxEdgeOuter *= REFINE_SHRINK
    checkMinAngle(mesh, cfg.minAngle)

    if monitors is not None:
        monitors.setParam('meshVertices', mesh.numVertices)
        monitors.setParam('meshInnerVertices', int(mesh.innerFlag.sum()))
        monitors.setParam('meshTriangles', len(mesh.triangles))
        monitors.setParam('meshMinAngle', mesh.minAngle)
        monitors.setParam('meshRefineAttempts', attempt + 1)
    return mesh


def checkMinAngle(mesh, minAngle):
    """
    Raise MeshError if refinement left any triangle with an angle below
    minAngle. Triangle cannot remove small angles which are already in
    the input, at sharp corners of the domain.
    """
    sharp = mesh.triangleMinAngles < minAngle - ANGLE_TOLERANCE
    if sharp.any():
        bad = mesh.vertices[mesh.triangles[sharp]].reshape((-1, 2))
        region = (bad[:, 0].min(), bad[:, 1].min(), bad[:, 0].max(),
            bad[:, 1].max())
        msg = ("{} triangles have angles below the minimum of {} degrees "
            "(smallest {:.2f}), in region {}. The domain may have a corner "
            "sharper than mesh.min_angle").format(sharp.sum(), minAngle,
            mesh.minAngle, region)
        raise structures.MeshError(msg, region=region)


def triangulate(inner, outer, extensionWidth, maxEdgeInner, maxEdgeOuter,
        minAngle):
    """
    Run Triangle over the outer domain, with the boundary of the inner
    domain as constraint segments. Returns (vertices, triangles) arrays.
    """
    ringList = [(ring, maxEdgeInner) for ring in polygonRings(inner)]
    if extensionWidth > 0:
        ringList.extend([(ring, maxEdgeOuter) for ring in polygonRings(outer)])

    pointIndex = {}
    points = []
    facets = []
    for (ring, maxEdge) in ringList:
        dense = shapely.segmentize(shpgeom.LineString(ring), maxEdge)
        coords = numpy.asarray(dense.coords)[:-1]
        ringIdx = []
        for (x, y) in coords:
            key = (float(x), float(y))
            if key not in pointIndex:
                pointIndex[key] = len(points)
                points.append(key)
            ringIdx.append(pointIndex[key])
        n = len(ringIdx)
        for i in range(n):
            (a, b) = (ringIdx[i], ringIdx[(i + 1) % n])
            if a != b:
                facets.append((a, b))

    holes = []
    for poly in geometry.polygonList(outer):
        for ring in poly.interiors:
            pt = shpgeom.Polygon(ring).representative_point()
            holes.append((pt.x, pt.y))

    info = triangle.MeshInfo()
    info.set_points(points)
    info.set_facets(facets)
    if len(holes) > 0:
        info.set_holes(holes)

    def needsRefinement(triVertices, area):
        p = numpy.asarray(triVertices, dtype=numpy.float64)
        (cx, cy) = p.mean(axis=0)
        if shapely.contains_xy(inner, cx, cy):
            limit = maxEdgeInner
        else:
            limit = maxEdgeOuter
        d = p - numpy.roll(p, 1, axis=0)
        return bool(((d * d).sum(axis=1) > limit * limit).any())

    tri = triangle.build(info, refinement_func=needsRefinement,
        min_angle=minAngle, quality_meshing=True, generate_faces=False)
    vertices = numpy.array(tri.points, dtype=numpy.float64).reshape((-1, 2))
    triangles = numpy.array(tri.elements, dtype=numpy.int64).reshape((-1, 3))
    return compactMesh(vertices, triangles)


def polygonRings(geom):
    "All rings (exteriors and holes) of a Polygon or MultiPolygon"
    rings = []
    for poly in geometry.polygonList(geom):
        rings.append(numpy.asarray(poly.exterior.coords))
        for ring in poly.interiors:
            rings.append(numpy.asarray(ring.coords))
    return rings


def compactMesh(vertices, triangles):
    """
    Drop vertices not used by any triangle, and orient every triangle
    counter-clockwise
    """
    used = numpy.unique(triangles)
    newIndex = numpy.full(len(vertices), -1, dtype=numpy.int64)
    newIndex[used] = numpy.arange(len(used))
    vertices = vertices[used]
    triangles = newIndex[triangles]

    p = vertices[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    clockwise = (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) < 0
    triangles[clockwise] = triangles[clockwise][:, [0, 2, 1]]
    return (vertices, triangles)


def findLongTriangles(vertices, triangles, triangleInner, maxEdgeInner,
        maxEdgeOuter):
    "Boolean array of triangles with an edge longer than allowed for its zone"
    p = vertices[triangles]
    longest = numpy.zeros(len(triangles))
    for i in range(3):
        d = p[:, (i + 1) % 3] - p[:, i]
        longest = numpy.maximum(longest, numpy.hypot(d[:, 0], d[:, 1]))
    limit = numpy.where(triangleInner, maxEdgeInner, maxEdgeOuter)
    return longest > limit * (1 + EDGE_TOLERANCE)


def makeMesh(vertices, triangles, triangleInner):
    """
    Construct the Mesh object. A vertex is inner if it belongs to any
    inner triangle, so vertices on the study region boundary are inner.
    """
    innerFlag = numpy.zeros(len(vertices), dtype=bool)
    innerFlag[triangles[triangleInner].ravel()] = True
    return structures.Mesh(vertices, triangles, innerFlag, triangleInner)


def project(mesh, pts):
    """
    Barycentric projection of points onto the mesh vertices.

    Row i of the projector matrix holds the barycentric weights of pts[i]
    within its containing triangle. Points on an edge or vertex shared by
    several triangles use the lowest-numbered triangle. Points outside
    the mesh get a zero row and are flagged.

    Parameters
    ----------
    mesh : Mesh
    pts : numpy.ndarray (n, 2)

    Returns
    -------
    projector : Projector

    """
    pts = numpy.asarray(pts, dtype=numpy.float64).reshape((-1, 2))
    n = len(pts)
    m = mesh.numVertices
    triIndex = locateTriangles(mesh, pts)
    outside = (triIndex < 0)
    inside = numpy.where(~outside)[0]

    tri = mesh.triangles[triIndex[inside]]
    weights = barycentricWeights(mesh.vertices[tri], pts[inside])

    rows = numpy.repeat(inside, 3)
    A = sparse.csr_matrix((weights.ravel(), (rows, tri.ravel())),
        shape=(n, m))
    A.eliminate_zeros()
    return structures.Projector(A, outside, triIndex)


def locateTriangles(mesh, pts):
    """
    Index of the lowest-numbered triangle containing each point, -1 for
    points outside the mesh. Points on triangle boundaries are contained.
    """
    if mesh.locator is None:
        polys = shapely.polygons(mesh.vertices[mesh.triangles])
        mesh.locator = shapely.STRtree(polys)
    triIndex = numpy.full(len(pts), -1, dtype=numpy.int64)
    if len(pts) == 0:
        return triIndex
    (ptIdx, treeIdx) = mesh.locator.query(shapely.points(pts),
        predicate='intersects')
    if len(ptIdx) > 0:
        order = numpy.lexsort((treeIdx, ptIdx))
        (firstPt, firstPos) = numpy.unique(ptIdx[order], return_index=True)
        triIndex[firstPt] = treeIdx[order][firstPos]
    return triIndex


def barycentricWeights(triCoords, pts):
    """
    Barycentric weights of each point in pts (n, 2) within the matching
    triangle of triCoords (n, 3, 2). Tiny negative weights from rounding
    are clipped, and the weights renormalised to sum to one.
    """
    (x0, y0) = (triCoords[:, 0, 0], triCoords[:, 0, 1])
    (x1, y1) = (triCoords[:, 1, 0], triCoords[:, 1, 1])
    (x2, y2) = (triCoords[:, 2, 0], triCoords[:, 2, 1])
    (x, y) = (pts[:, 0], pts[:, 1])
    det = (y1 - y2) * (x0 - x2) + (x2 - x1) * (y0 - y2)
    w0 = ((y1 - y2) * (x - x2) + (x2 - x1) * (y - y2)) / det
    w1 = ((y2 - y0) * (x - x2) + (x0 - x2) * (y - y2)) / det
    w2 = 1.0 - w0 - w1
    w = numpy.clip(numpy.column_stack([w0, w1, w2]), 0.0, None)
    return w / w.sum(axis=1)[:, numpy.newaxis]


def dualAreas(mesh):
    """
    Quadrature weight of each vertex: one third of the area of each
    triangle it belongs to. The weights sum to the mesh area.
    """
    tri = mesh.triangles
    thirds = numpy.repeat(mesh.triangleAreas / 3.0, 3)
    return numpy.bincount(tri.ravel(), weights=thirds,
        minlength=mesh.numVertices)


def innerDualAreas(mesh):
    """
    Dual areas counting only the triangles inside the study region, so
    they sum to the area of the region. Vertices only in the extension
    zone get zero.
    """
    tri = mesh.triangles[mesh.triangleInner]
    thirds = numpy.repeat(mesh.triangleAreas[mesh.triangleInner] / 3.0, 3)
    return numpy.bincount(tri.ravel(), weights=thirds,
        minlength=mesh.numVertices)


def meshToDict(mesh):
    "Dictionary form of the mesh, for JSON"
    return {
        'format': MESH_FORMAT,
        'format_version': MESH_FORMAT_VERSION,
        'vertices': mesh.vertices.tolist(),
        'triangles': mesh.triangles.tolist(),
        'inner_flag': mesh.innerFlag.astype(int).tolist(),
        'triangle_inner': mesh.triangleInner.astype(int).tolist()
    }


def meshFromDict(d):
    "Inverse of meshToDict"
    if d.get('format') != MESH_FORMAT:
        raise structures.ValidationError("Not a coxmap mesh file")
    return structures.Mesh(d['vertices'], d['triangles'],
        numpy.array(d['inner_flag'], dtype=bool),
        numpy.array(d['triangle_inner'], dtype=bool))


def meshHash(mesh):
    "Short hash identifying the mesh geometry"
    h = hashlib.sha256()
    h.update(json.dumps(meshToDict(mesh), sort_keys=True).encode())
    return h.hexdigest()[:16]


def saveMeshCache(filename, mesh):
    "Binary cache of the mesh, as a numpy .npz file"
    numpy.savez(filename, vertices=mesh.vertices, triangles=mesh.triangles,
        innerFlag=mesh.innerFlag, triangleInner=mesh.triangleInner)


def loadMeshCache(filename):
    with numpy.load(filename) as npz:
        mesh = structures.Mesh(npz['vertices'], npz['triangles'],
            npz['innerFlag'], npz['triangleInner'])
    return mesh
