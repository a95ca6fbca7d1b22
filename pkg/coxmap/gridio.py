"""
Reading and writing ESRI ASCII grids, through GDAL's AAIGrid driver,
and bilinear sampling of a RasterGrid at arbitrary points.

Provenance (tool version, config hash, seed) is attached as GDAL
metadata, which GDAL keeps in the .aux.xml file next to the grid.
"""
import math

import numpy
from osgeo import gdal

from . import structures


DFLT_SIGNIFICANT_DIGITS = 10
DFLT_NODATA = -9999.0


def readAsciiGrid(filename):
    """
    Read an ESRI ASCII grid (or any single band raster GDAL can open with
    square cells and no rotation).

    Returns
    -------
    grid : RasterGrid
    metadata : dict
        GDAL metadata of the file, e.g. its provenance

    """
    gdal.UseExceptions()
    try:
        ds = gdal.OpenEx(str(filename), gdal.OF_RASTER,
            open_options=['DATATYPE=Float64'])
    except RuntimeError as e:
        raise structures.ValidationError("Cannot open raster {}: {}".format(
            filename, e))
    (x0, xres, xrot, y0, yrot, yres) = ds.GetGeoTransform()
    if xrot != 0 or yrot != 0:
        raise structures.ValidationError("Raster {} is rotated".format(
            filename))
    if not math.isclose(abs(xres), abs(yres), rel_tol=1e-9):
        raise structures.ValidationError("Raster {} does not have square "
            "cells ({} x {})".format(filename, xres, yres))
    (ncols, nrows) = (ds.RasterXSize, ds.RasterYSize)
    band = ds.GetRasterBand(1)
    values = band.ReadAsArray().astype(numpy.float64)
    nodata = band.GetNoDataValue()
    if nodata is None:
        nodata = DFLT_NODATA
    yll = y0 + nrows * yres
    metadata = ds.GetMetadata()
    ds = None
    grid = structures.RasterGrid(ncols, nrows, x0, yll, abs(xres), values,
        nodata)
    return (grid, metadata)


def writeAsciiGrid(filename, grid, metadata=None,
        significantDigits=DFLT_SIGNIFICANT_DIGITS):
    """
    Write a RasterGrid as an ESRI ASCII grid. Non-finite values are
    written as the nodata value. The metadata dictionary is attached as
    GDAL metadata items.
    """
    gdal.UseExceptions()
    values = numpy.where(numpy.isfinite(grid.values), grid.values,
        grid.nodata)
    memDrvr = gdal.GetDriverByName('MEM')
    memDs = memDrvr.Create('', grid.ncols, grid.nrows, 1, gdal.GDT_Float64)
    memDs.SetGeoTransform((grid.xll, grid.cellSize, 0.0, grid.yTop, 0.0,
        -grid.cellSize))
    band = memDs.GetRasterBand(1)
    band.SetNoDataValue(grid.nodata)
    band.WriteArray(values)

    drvr = gdal.GetDriverByName('AAIGrid')
    options = ['SIGNIFICANT_DIGITS={}'.format(significantDigits)]
    outDs = drvr.CreateCopy(str(filename), memDs, strict=0, options=options)
    if metadata is not None:
        outDs.SetMetadata({k: str(v) for (k, v) in metadata.items()})
    outDs.FlushCache()
    outDs = None
    memDs = None


def gridFromBounds(bounds, cellSize, nodata=DFLT_NODATA):
    """
    Empty RasterGrid covering the bounds (xmin, ymin, xmax, ymax), with
    its lower left corner at (xmin, ymin)
    """
    (xmin, ymin, xmax, ymax) = bounds
    if not cellSize > 0:
        raise structures.ValidationError("Cell size must be positive")
    ncols = max(1, int(math.ceil((xmax - xmin) / cellSize - 1e-9)))
    nrows = max(1, int(math.ceil((ymax - ymin) / cellSize - 1e-9)))
    return structures.RasterGrid(ncols, nrows, xmin, ymin, cellSize,
        nodata=nodata)


def sampleBilinear(grid, xy):
    """
    Bilinear interpolation between cell centres, at each row of the
    (n, 2) array xy. Within half a cell of the raster edge the edge
    values are extended. Points outside the raster, or depending on a
    nodata cell, give NaN.
    """
    xy = numpy.asarray(xy, dtype=numpy.float64).reshape((-1, 2))
    cs = grid.cellSize
    col = (xy[:, 0] - grid.xll) / cs - 0.5
    row = (grid.yTop - xy[:, 1]) / cs - 0.5
    outside = ((col < -0.5) | (col > grid.ncols - 0.5) | (row < -0.5) |
        (row > grid.nrows - 0.5))

    col = numpy.clip(col, 0, grid.ncols - 1)
    row = numpy.clip(row, 0, grid.nrows - 1)
    c0 = numpy.minimum(numpy.floor(col).astype(int), grid.ncols - 1)
    r0 = numpy.minimum(numpy.floor(row).astype(int), grid.nrows - 1)
    c1 = numpy.minimum(c0 + 1, grid.ncols - 1)
    r1 = numpy.minimum(r0 + 1, grid.nrows - 1)
    fc = col - c0
    fr = row - r0

    valid = grid.validMask()
    vals = numpy.where(valid, grid.values, 0.0)
    result = numpy.zeros(len(xy))
    bad = outside.copy()
    for (r, c, w) in ((r0, c0, (1 - fr) * (1 - fc)), (r0, c1, (1 - fr) * fc),
            (r1, c0, fr * (1 - fc)), (r1, c1, fr * fc)):
        result += w * vals[r, c]
        bad |= (w > 0) & ~valid[r, c]
    result[bad] = numpy.nan
    return result
