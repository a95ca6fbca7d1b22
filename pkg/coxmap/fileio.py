"""
File formats read and written by coxmap.

    Domain polygons     GeoJSON, Polygon or MultiPolygon geometries
    Road network        GeoJSON, LineString or MultiLineString features
    Facilities          GeoJSON, Point features with a "kind" property
    Events              CSV with columns x, y, t
    Mesh                JSON (see meshing.meshToDict)
    Covariate table     CSV, one row per mesh vertex
    Results             JSON and CSV

Every file written carries its provenance: the coxmap version, the
hash of the configuration and the seed. JSON files hold it under the
"provenance" key, CSV files in a first comment line starting with '#'.
"""
import csv
import json

import numpy
import shapely
from shapely import geometry as shpgeom

from . import __version__
from . import structures
from . import geometry
from . import meshing
from . import gridio


PROVENANCE_KEY = 'provenance'
COMMENT_CHAR = '#'
EVENT_COLUMNS = ('x', 'y', 't')


def makeProvenance(configHash, seed):
    return {'tool': 'coxmap', 'version': __version__,
        'config_hash': configHash, 'seed': seed}


def provenanceLine(provenance):
    "The comment line written at the top of CSV files"
    return "{} coxmap version={} config_hash={} seed={}".format(COMMENT_CHAR,
        provenance['version'], provenance['config_hash'], provenance['seed'])


def parseProvenanceLine(line):
    fields = line.lstrip(COMMENT_CHAR).split()
    prov = {'tool': fields[0]}
    for field in fields[1:]:
        (key, val) = field.split('=', 1)
        prov[key] = val
    return prov


def fmt(value):
    "Text form of a number which reads back exactly"
    if isinstance(value, (int, numpy.integer, bool, numpy.bool_)):
        return str(int(value))
    return repr(float(value))


def readGeoJson(filename):
    try:
        with open(filename) as f:
            d = json.load(f)
    except (OSError, ValueError) as e:
        raise structures.ValidationError("Cannot read GeoJSON {}: {}".format(
            filename, e))
    return d


def geoJsonFeatures(d):
    "List of (geometry, properties) from a GeoJSON object"
    if d.get('type') == 'FeatureCollection':
        return [(shpgeom.shape(f['geometry']), f.get('properties') or {})
            for f in d['features'] if f.get('geometry') is not None]
    elif d.get('type') == 'Feature':
        return [(shpgeom.shape(d['geometry']), d.get('properties') or {})]
    else:
        return [(shpgeom.shape(d), {})]


def readDomain(filename, allowLonLatLike=False):
    """
    Read the study domain from a GeoJSON file, as a list of valid,
    oriented shapely Polygons
    """
    polygons = []
    for (geom, props) in geoJsonFeatures(readGeoJson(filename)):
        if isinstance(geom, (shpgeom.Polygon, shpgeom.MultiPolygon)):
            polygons.extend(geometry.polygonList(geom))
    if len(polygons) == 0:
        raise structures.ValidationError("No polygons in {}".format(filename))
    for poly in polygons:
        geometry.checkPolygon(poly)
        geometry.checkPlanarCoords(shapely.get_coordinates(poly),
            allowLonLatLike)
    return polygons


def readRoads(filename, allowLonLatLike=False):
    "Read a RoadNetwork from a GeoJSON file of lines"
    lines = []
    props = []
    for (geom, p) in geoJsonFeatures(readGeoJson(filename)):
        if isinstance(geom, shpgeom.LineString):
            parts = [geom]
        elif isinstance(geom, shpgeom.MultiLineString):
            parts = list(geom.geoms)
        else:
            continue
        for part in parts:
            lines.append(numpy.asarray(part.coords)[:, :2])
            props.append(dict(p))
    if len(lines) == 0:
        raise structures.ValidationError("No lines in {}".format(filename))
    net = geometry.roadNetworkFromLines(lines, props)
    geometry.checkPlanarCoords(numpy.vstack([net.starts, net.ends]),
        allowLonLatLike)
    return net


def readFacilities(filename, allowLonLatLike=False):
    """
    Read facility points from a GeoJSON file. Returns a dictionary of
    FacilityLayer objects, by kind.
    """
    pointsByKind = {}
    for (geom, props) in geoJsonFeatures(readGeoJson(filename)):
        if not isinstance(geom, shpgeom.Point):
            continue
        kind = props.get('kind')
        if kind is None:
            raise structures.ValidationError("Facility point in {} has no "
                "'kind' property".format(filename))
        pointsByKind.setdefault(kind, []).append((geom.x, geom.y))
    layers = {}
    for kind in sorted(pointsByKind):
        layers[kind] = structures.FacilityLayer(kind, pointsByKind[kind])
        geometry.checkPlanarCoords(layers[kind].points, allowLonLatLike)
    return layers


def polygonFeature(poly, properties=None):
    return {'type': 'Feature', 'properties': properties or {},
        'geometry': shpgeom.mapping(poly)}


def writeGeoJson(filename, features, provenance=None):
    "Write a FeatureCollection of the given feature dictionaries"
    d = {'type': 'FeatureCollection', 'features': features}
    if provenance is not None:
        d[PROVENANCE_KEY] = provenance
    with open(filename, 'w') as f:
        json.dump(d, f, indent=1)


def writeRoads(filename, net, provenance=None):
    features = []
    for (segId, a, b) in zip(net.segmentIds, net.starts, net.ends):
        features.append({'type': 'Feature', 'properties': {'id': int(segId)},
            'geometry': {'type': 'LineString',
                'coordinates': [a.tolist(), b.tolist()]}})
    writeGeoJson(filename, features, provenance)


def writeFacilities(filename, layers, provenance=None):
    features = []
    for kind in sorted(layers):
        for (x, y) in layers[kind].points:
            features.append({'type': 'Feature', 'properties': {'kind': kind},
                'geometry': {'type': 'Point', 'coordinates': [x, y]}})
    writeGeoJson(filename, features, provenance)


def readCsvRows(filename):
    """
    Read a CSV file written by coxmap (or by hand). Returns
    (header, rows, provenance), skipping comment lines
    """
    provenance = None
    try:
        with open(filename, newline='') as f:
            lines = []
            for line in f:
                if line.startswith(COMMENT_CHAR):
                    if provenance is None and 'coxmap' in line:
                        provenance = parseProvenanceLine(line)
                elif line.strip() != '':
                    lines.append(line)
    except OSError as e:
        raise structures.ValidationError("Cannot read {}: {}".format(filename,
            e))
    reader = csv.reader(lines)
    rows = list(reader)
    if len(rows) == 0:
        raise structures.ValidationError("{} is empty".format(filename))
    header = [h.strip() for h in rows[0]]
    return (header, rows[1:], provenance)


def writeCsvRows(filename, header, rows, provenance=None):
    with open(filename, 'w', newline='') as f:
        if provenance is not None:
            f.write(provenanceLine(provenance) + '\n')
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) if isinstance(v, (float, int,
                numpy.floating, numpy.integer)) else v for v in row])


def readEvents(filename, T=None, domain=None, allowLonLatLike=False):
    """
    Read events from a CSV file with columns x, y, t. If T is not given,
    it is the largest t.
    """
    (header, rows, provenance) = readCsvRows(filename)
    for col in EVENT_COLUMNS:
        if col not in header:
            raise structures.ValidationError("Events file {} has no '{}' "
                "column".format(filename, col))
    idx = [header.index(col) for col in EVENT_COLUMNS]
    try:
        xy = numpy.array([(float(r[idx[0]]), float(r[idx[1]])) for r in rows],
            dtype=numpy.float64).reshape((-1, 2))
        t = numpy.array([int(r[idx[2]]) for r in rows], dtype=numpy.int64)
    except (ValueError, IndexError) as e:
        raise structures.ValidationError("Bad value in events file {}: "
            "{}".format(filename, e))
    if T is None:
        T = int(t.max()) if len(t) > 0 else 1
    geometry.checkPlanarCoords(xy, allowLonLatLike)
    return structures.PointPattern(xy, t, T, domain)


def writeEvents(filename, pattern, provenance=None):
    rows = [(float(x), float(y), int(t))
        for ((x, y), t) in zip(pattern.xy, pattern.t)]
    writeCsvRows(filename, EVENT_COLUMNS, rows, provenance)


def writeJson(filename, d, provenance=None):
    """
    Write a dictionary as JSON, with sorted keys so that identical
    results give identical files
    """
    d = dict(d)
    if provenance is not None:
        d[PROVENANCE_KEY] = provenance
    with open(filename, 'w') as f:
        json.dump(d, f, indent=1, sort_keys=True)
        f.write('\n')


def readJson(filename):
    try:
        with open(filename) as f:
            d = json.load(f)
    except (OSError, ValueError) as e:
        raise structures.ValidationError("Cannot read JSON {}: {}".format(
            filename, e))
    return d


def writeMesh(filename, mesh, provenance=None):
    writeJson(filename, meshing.meshToDict(mesh), provenance)


def readMesh(filename):
    return meshing.meshFromDict(readJson(filename))


COVARIATE_FIXED_COLUMNS = ('vertex', 'x', 'y', 'inner')


def writeCovariateTable(filename, mesh, fields, provenance=None):
    "CSV of raw covariate values at each mesh vertex"
    header = list(COVARIATE_FIXED_COLUMNS) + fields.names
    rows = []
    for j in range(mesh.numVertices):
        (x, y) = mesh.vertices[j]
        rows.append([j, float(x), float(y), int(mesh.innerFlag[j])] +
            [float(v) for v in fields.values[j]])
    writeCsvRows(filename, header, rows, provenance)


def readCovariateTable(filename, mesh):
    """
    Read a covariate table written by writeCovariateTable, checking it
    matches the mesh. Returns a CovariateField.
    """
    (header, rows, provenance) = readCsvRows(filename)
    if tuple(header[:4]) != COVARIATE_FIXED_COLUMNS:
        raise structures.ValidationError("{} is not a covariate "
            "table".format(filename))
    if len(rows) != mesh.numVertices:
        raise structures.ValidationError("Covariate table {} has {} rows but "
            "the mesh has {} vertices".format(filename, len(rows),
            mesh.numVertices))
    values = numpy.array([[float(v) for v in r[4:]] for r in rows],
        dtype=numpy.float64).reshape((len(rows), len(header) - 4))
    coords = numpy.array([[float(r[1]), float(r[2])] for r in rows])
    if not numpy.allclose(coords, mesh.vertices, rtol=0, atol=1e-6 *
            max(1.0, numpy.abs(mesh.vertices).max())):
        raise structures.ValidationError("Covariate table {} was made for a "
            "different mesh".format(filename))
    return structures.CovariateField(header[4:], values, mesh.innerFlag)


def readProvenance(filename):
    """
    Provenance of any coxmap output file (JSON, CSV or ASCII grid), as a
    dictionary, or None if there is none
    """
    fname = str(filename)
    if fname.endswith('.json') or fname.endswith('.geojson'):
        return readJson(fname).get(PROVENANCE_KEY)
    elif fname.endswith('.csv'):
        return readCsvRows(fname)[2]
    elif fname.endswith('.asc'):
        (grid, metadata) = gridio.readAsciiGrid(fname)
        if 'config_hash' not in metadata:
            return None
        return metadata
    return None
