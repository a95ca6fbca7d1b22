"""
Bundled synthetic datasets, so the whole pipeline can be run without
any external data.

    square      A 10 km x 10 km study region, with facility points and
                a population density raster
    manhattan   A grid of streets with 500 m blocks, with facility points
                at street intersections and the same kind of raster

Coordinates are planar meters, placed at UTM-like offsets. Events are
not included; they come from the simulate command.
"""
import os

import numpy

from . import structures
from . import geometry
from . import gridio
from . import fileio


DATASET_NAMES = ('square', 'manhattan')
ORIGIN = (470000.0, 990000.0)
SQUARE_SIZE = 10000.0
BLOCK_SIZE = 500.0
DFLT_NUM_BLOCKS = 6
RASTER_CELL = 100.0
# Raster covers the study region and this much around it
RASTER_MARGIN = 0.25

FACILITY_COUNTS = {'school': 12, 'bus_station': 8, 'market': 5,
    'worship': 10, 'restaurant': 15, 'hospital': 3}


def squareDomain(origin=ORIGIN, size=SQUARE_SIZE):
    (x0, y0) = origin
    return [geometry.makePolygon([(x0, y0), (x0 + size, y0),
        (x0 + size, y0 + size), (x0, y0 + size)])]


def manhattanRoads(numBlocks=DFLT_NUM_BLOCKS, blockSize=BLOCK_SIZE,
        origin=ORIGIN):
    """
    Streets on a regular grid, numBlocks blocks across in each direction.
    Each street is one line through all its intersections, so every
    segment is one block long.
    """
    (x0, y0) = origin
    ticks = numpy.arange(numBlocks + 1) * blockSize
    lines = []
    props = []
    for (i, offset) in enumerate(ticks):
        lines.append(numpy.column_stack([x0 + ticks,
            numpy.full(len(ticks), y0 + offset)]))
        props.append({'name': 'street {}'.format(i + 1)})
    for (i, offset) in enumerate(ticks):
        lines.append(numpy.column_stack([numpy.full(len(ticks), x0 + offset),
            y0 + ticks]))
        props.append({'name': 'avenue {}'.format(i + 1)})
    return geometry.roadNetworkFromLines(lines, props)


def randomFacilities(bounds, rng, counts=None):
    "Facility points scattered uniformly over the bounds"
    if counts is None:
        counts = FACILITY_COUNTS
    (xmin, ymin, xmax, ymax) = bounds
    layers = {}
    for kind in sorted(counts):
        pts = numpy.column_stack([rng.uniform(xmin, xmax, counts[kind]),
            rng.uniform(ymin, ymax, counts[kind])])
        layers[kind] = structures.FacilityLayer(kind, pts)
    return layers


def intersectionFacilities(net, rng, counts=None):
    "Facility points at randomly chosen street intersections"
    if counts is None:
        counts = FACILITY_COUNTS
    nodes = numpy.unique(numpy.vstack([net.starts, net.ends]), axis=0)
    layers = {}
    for kind in sorted(counts):
        n = min(counts[kind], len(nodes))
        idx = rng.choice(len(nodes), size=n, replace=False)
        layers[kind] = structures.FacilityLayer(kind, nodes[numpy.sort(idx)])
    return layers


def populationRaster(bounds, rng, cellSize=RASTER_CELL,
        margin=RASTER_MARGIN):
    """
    Population density (people per km^2) as a sum of a few Gaussian
    bumps over a background, on a raster covering the bounds widened by
    the given fraction on every side
    """
    (xmin, ymin, xmax, ymax) = bounds
    width = xmax - xmin
    height = ymax - ymin
    wider = (xmin - margin * width, ymin - margin * height,
        xmax + margin * width, ymax + margin * height)
    grid = gridio.gridFromBounds(wider, cellSize)
    xy = grid.cellCenters()
    density = numpy.full(len(xy), 500.0)
    for _ in range(3):
        centre = (rng.uniform(xmin, xmax), rng.uniform(ymin, ymax))
        spread = rng.uniform(0.1, 0.3) * max(width, height)
        peak = rng.uniform(2000.0, 8000.0)
        d2 = ((xy - numpy.array(centre)) ** 2).sum(axis=1)
        density += peak * numpy.exp(-d2 / (2 * spread ** 2))
    grid.values = density.reshape((grid.nrows, grid.ncols))
    return grid


def writeDataset(name, outdir, seed=0, provenance=None):
    """
    Write one of the bundled datasets into outdir. Returns a dictionary
    of the files written, by role.
    """
    if name not in DATASET_NAMES:
        raise structures.ValidationError("Unknown synthetic dataset '{}'. "
            "Known: {}".format(name, ','.join(DATASET_NAMES)))
    os.makedirs(outdir, exist_ok=True)
    rng = numpy.random.default_rng(seed)
    files = {}
    if name == 'square':
        domain = squareDomain()
        bounds = domain[0].bounds
        files['domain'] = os.path.join(outdir, 'domain.geojson')
        fileio.writeGeoJson(files['domain'],
            [fileio.polygonFeature(domain[0], {'name': 'square'})],
            provenance)
        layers = randomFacilities(bounds, rng)
    else:
        net = manhattanRoads()
        pts = numpy.vstack([net.starts, net.ends])
        bounds = tuple(pts.min(axis=0)) + tuple(pts.max(axis=0))
        files['roads'] = os.path.join(outdir, 'roads.geojson')
        fileio.writeRoads(files['roads'], net, provenance)
        layers = intersectionFacilities(net, rng)

    files['facilities'] = os.path.join(outdir, 'facilities.geojson')
    fileio.writeFacilities(files['facilities'], layers, provenance)
    files['population'] = os.path.join(outdir, 'population.asc')
    gridio.writeAsciiGrid(files['population'], populationRaster(bounds, rng),
        provenance)
    return files
