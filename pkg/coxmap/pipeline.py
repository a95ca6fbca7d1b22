"""
The coxmap command line, and the functions behind each of its commands.

Each command reads a run configuration (see config.py), does one stage
of the work, and writes its results into the output directory, where
the later stages find them:

    synth       Write a bundled synthetic dataset
    mesh        Triangulate the study region          -> mesh.json
    covariates  Facility distances and raster values  -> covariates.csv
                at the mesh vertices
    simulate    Simulate events from a known model    -> events.csv,
                                                         truth.json
    fit         Fit each model                        -> fit_NAME.json,
                                                         summary_NAME.csv,
                                                         densities_NAME.csv
    predict     Posterior log intensity at targets    -> ASCII grids or
                                                         network_NAME.csv
    ic          DIC and WAIC of each fitted model     -> ic.csv

Every file written carries the coxmap version, the configuration hash
and the seed.
"""
import argparse
import json
import os
import sys

import numpy
import shapely
from osgeo import gdal
from scipy.spatial import cKDTree

from . import __version__
from . import structures
from . import geometry
from . import meshing
from . import spdefem
from . import stgmrf
from . import likelihood
from . import inference
from . import simulate
from . import gridio
from . import fileio
from . import config
from . import monitoring
from . import synthetic


MESH_FILE = 'mesh.json'
REGION_FILE = 'study_region.geojson'
COVARIATES_FILE = 'covariates.csv'
EVENTS_FILE = 'events.csv'
TRUTH_FILE = 'truth.json'
TRUTH_FIELD_FILE = 'truth_loglambda.csv'
IC_FILE = 'ic.csv'

EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

COMMANDS = ('synth', 'mesh', 'covariates', 'simulate', 'fit', 'predict',
    'ic')


def fitFileName(name):
    return 'fit_{}.json'.format(name)


def provenance(cfg):
    return fileio.makeProvenance(cfg.configHash(), cfg.seed)


def makeOutdir(cfg):
    os.makedirs(cfg.outdir, exist_ok=True)


def requireFile(path, what, command):
    if not os.path.exists(path):
        raise structures.ValidationError("No {} file {}. Run the {} command "
            "first, or give its path in the configuration".format(what,
            path, command))


def loadDomain(cfg):
    """
    The study region, as a list of polygons: the buffered road network
    if paths.roads and geometry.buffer_width are given, otherwise the
    polygons in paths.domain
    """
    allow = bool(cfg['geometry']['allow_lonlat_like'])
    width = float(cfg['geometry']['buffer_width'])
    roads = cfg.path('roads')
    if roads is not None and width > 0:
        net = fileio.readRoads(roads, allow)
        return geometry.bufferNetwork(net, width)
    domain = cfg.path('domain')
    if domain is None:
        raise structures.ValidationError("Either paths.domain, or paths.roads "
            "with a positive geometry.buffer_width, must be given")
    return fileio.readDomain(domain, allow)


def loadMesh(cfg):
    path = cfg.inputPath('mesh', MESH_FILE)
    requireFile(path, 'mesh', 'mesh')
    return fileio.readMesh(path)


def loadRoads(cfg):
    roads = cfg.path('roads')
    if roads is None:
        raise structures.ValidationError("No road network, paths.roads is "
            "not given")
    return fileio.readRoads(roads, bool(cfg['geometry']['allow_lonlat_like']))


def loadEvents(cfg, domain, numthreads=1, monitors=None):
    """
    Read the events. With geometry.snap_events, each event is moved to
    the nearest point of the road network before it is checked against
    the study region.

    Returns
    -------
    pattern : PointPattern
    snapping : dict or None
        Number of events and the max and mean snap distances, if the
        events were snapped

    """
    path = cfg.inputPath('events', EVENTS_FILE)
    requireFile(path, 'events', 'simulate')
    pattern = fileio.readEvents(path, T=cfg.T, domain=domain,
        allowLonLatLike=bool(cfg['geometry']['allow_lonlat_like']))
    snapping = None
    if cfg['geometry']['snap_events']:
        (pattern, snapping) = snapEvents(pattern, loadRoads(cfg), numthreads)
        if monitors is not None:
            monitors.setParam('snapMaxDistance', snapping['max_distance'])
            monitors.setParam('snapMeanDistance', snapping['mean_distance'])
    return (pattern, snapping)


def snapEvents(pattern, net, numthreads=1):
    """
    The events moved onto their nearest road segments, and a summary of
    how far they moved
    """
    (segmentIds, snapped, dist) = geometry.snapPoints(pattern.xy, net,
        numthreads)
    snappedPattern = structures.PointPattern(snapped, pattern.t, pattern.T,
        pattern.domain)
    snapping = {'num_events': len(dist),
        'max_distance': float(dist.max()) if len(dist) > 0 else 0.0,
        'mean_distance': float(dist.mean()) if len(dist) > 0 else 0.0}
    return (snappedPattern, snapping)


def loadCovariates(cfg, mesh, specs):
    "The covariate table, or None if none of the models uses covariates"
    if not any(len(spec.covariates) > 0 for spec in specs):
        return None
    path = cfg.inputPath('covariates', COVARIATES_FILE)
    requireFile(path, 'covariates', 'covariates')
    return fileio.readCovariateTable(path, mesh)


def doSynth(name, outdir, seed=0):
    """
    Write the named synthetic dataset into outdir. Returns a dictionary
    of the files written.
    """
    return synthetic.writeDataset(name, outdir, seed,
        fileio.makeProvenance('', seed))


def doMesh(cfg, monitors=None):
    """
    Triangulate the study region, writing mesh.json and the study region
    polygons (study_region.geojson) to the output directory

    Returns
    -------
    mesh : Mesh

    """
    monitors = monitoring.ensureMonitors(monitors)
    cfg.validate()
    domain = loadDomain(cfg)
    meshCfg = cfg.meshConfig(domain)
    with monitors.timestamps.ctx('mesh'):
        mesh = meshing.buildMesh(domain, meshCfg, monitors)

    prov = provenance(cfg)
    makeOutdir(cfg)
    fileio.writeMesh(cfg.outPath(MESH_FILE), mesh, prov)
    fileio.writeGeoJson(cfg.outPath(REGION_FILE),
        [fileio.polygonFeature(p) for p in domain], prov)
    return mesh


def rasterAtVertices(name, grid, mesh):
    """
    Bilinear raster values at the mesh vertices. Vertices of the
    extension zone which fall off the raster take the value of the
    nearest vertex which has one. Missing values in the study region
    are an error.
    """
    vals = gridio.sampleBilinear(grid, mesh.vertices)
    bad = numpy.isnan(vals)
    badInner = numpy.where(bad & mesh.innerFlag)[0]
    if len(badInner) > 0:
        raise structures.ValidationError("Raster '{}' has no value at {} "
            "mesh vertices in the study region (nodata, or off the raster). "
            "Vertices: {}".format(name, len(badInner), badInner[:20].tolist()))
    if bad.any():
        good = ~bad
        tree = cKDTree(mesh.vertices[good])
        (dist, idx) = tree.query(mesh.vertices[bad])
        vals[bad] = vals[good][idx]
    return vals


def doCovariates(cfg, numthreads=1, monitors=None):
    """
    Covariate values at every mesh vertex: distance to the nearest
    facility of each kind (columns dist_KIND), and the value of each
    raster in paths.rasters (columns named as the raster). Writes
    covariates.csv.

    Returns
    -------
    fields : CovariateField

    """
    monitors = monitoring.ensureMonitors(monitors)
    cfg.validate()
    mesh = loadMesh(cfg)
    allow = bool(cfg['geometry']['allow_lonlat_like'])
    names = []
    columns = []
    with monitors.timestamps.ctx('covariates'):
        for path in cfg.facilityPaths():
            layers = fileio.readFacilities(path, allow)
            for kind in sorted(layers):
                name = 'dist_' + kind
                if name in names:
                    raise structures.ValidationError("Facility kind '{}' is "
                        "given in more than one file".format(kind))
                names.append(name)
                columns.append(geometry.nearestDistances(mesh.vertices,
                    layers[kind], numthreads))
        for (name, path) in cfg.rasterPaths().items():
            (grid, metadata) = gridio.readAsciiGrid(path)
            names.append(name)
            columns.append(rasterAtVertices(name, grid, mesh))
    if len(names) == 0:
        raise structures.ValidationError("No facilities or rasters given, "
            "so there are no covariates to compute")

    fields = structures.CovariateField(names, numpy.column_stack(columns),
        mesh.innerFlag)
    makeOutdir(cfg)
    fileio.writeCovariateTable(cfg.outPath(COVARIATES_FILE), mesh, fields,
        provenance(cfg))
    monitors.setParam('covariates', names)
    return fields


def doSimulate(cfg, monitors=None):
    """
    Simulate events from the model in the simulate section. The mesh is
    taken from the output directory (or paths.mesh) if there is one, and
    is otherwise built and written. Writes events.csv, truth.json, the
    true log intensity at the vertices, and the simulated covariates.

    Returns
    -------
    result : simulate.SimulationResult

    """
    monitors = monitoring.ensureMonitors(monitors)
    cfg.validate()
    domain = loadDomain(cfg)
    meshPath = cfg.inputPath('mesh', MESH_FILE)
    mesh = None
    if os.path.exists(meshPath):
        mesh = fileio.readMesh(meshPath)
    rasterGrids = {name: gridio.readAsciiGrid(path)[0]
        for (name, path) in cfg.rasterPaths().items()}
    sc = cfg.scenario(domain, cfg.meshConfig(domain), rasterGrids)
    result = simulate.simulateLgcp(sc, mesh, monitors)

    prov = provenance(cfg)
    makeOutdir(cfg)
    if mesh is None:
        fileio.writeMesh(cfg.outPath(MESH_FILE), result.mesh, prov)
    fileio.writeEvents(cfg.outPath(EVENTS_FILE), result.pattern, prov)
    if result.covariates is not None:
        fileio.writeCovariateTable(cfg.outPath(COVARIATES_FILE),
            result.mesh, result.covariates, prov)
    fileio.writeJson(cfg.outPath(TRUTH_FILE), result.truthDict(), prov)
    rows = []
    for t in range(sc.T):
        for j in range(result.mesh.numVertices):
            rows.append((t + 1, j, float(result.logLambda[t, j])))
    fileio.writeCsvRows(cfg.outPath(TRUTH_FIELD_FILE),
        ('t', 'vertex', 'log_lambda'), rows, prov)
    return result


def inputRecord(cfg, mesh, snapping=None):
    "The inputs of a fit, as given in the configuration"
    paths = cfg['paths']
    record = {'mesh': paths['mesh'] or MESH_FILE,
        'mesh_hash': meshing.meshHash(mesh),
        'events': paths['events'] or EVENTS_FILE,
        'covariates': paths['covariates'] or COVARIATES_FILE}
    if snapping is not None:
        record['event_snapping'] = snapping
    return record


def doFit(cfg, numthreads=1, monitors=None, dumpMatrices=False):
    """
    Fit each model (the model section, or each of the variants) to the
    events. For model NAME, writes fit_NAME.json, a table of posterior
    summaries summary_NAME.csv, and marginal posterior densities
    densities_NAME.csv. With dumpMatrices, the spatial and
    spatiotemporal prior precisions at the fitted hyperparameters are
    also written in Matrix Market format.

    Returns
    -------
    results : dict of FitResult, by model name

    """
    monitors = monitoring.ensureMonitors(monitors)
    cfg.validate()
    domain = loadDomain(cfg)
    mesh = loadMesh(cfg)
    (pattern, snapping) = loadEvents(cfg, domain, numthreads, monitors)
    priors = cfg.priorSpec(domain)
    optConfig = cfg.optimizerConfig()
    names = cfg.modelNames()
    specs = {name: cfg.modelSpec(name) for name in names}
    covariates = loadCovariates(cfg, mesh, specs.values())
    monitors.setParam('events', len(pattern))

    prov = provenance(cfg)
    makeOutdir(cfg)
    results = {}
    for name in names:
        result = inference.fit(specs[name], mesh, pattern, covariates,
            priors, optConfig, numthreads, monitors)
        d = result.toDict()
        d['name'] = name
        d['inputs'] = inputRecord(cfg, mesh, snapping)
        d['event_counts'] = pattern.countsPerTime().tolist()
        fileio.writeJson(cfg.outPath(fitFileName(name)), d, prov)
        writeSummary(cfg.outPath('summary_{}.csv'.format(name)), result,
            prov)
        fileio.writeCsvRows(cfg.outPath('densities_{}.csv'.format(name)),
            ('parameter', 'value', 'density'),
            inference.marginalDensityTable(result), prov)
        if dumpMatrices and specs[name].field:
            dumpFitMatrices(cfg, name, result)
        results[name] = result
    return results


def writeSummary(filename, result, prov):
    rows = [list(r) for r in inference.summaryRows(result)]
    if result.fieldSdMean is not None:
        rows.append(['field_sd_mean', result.fieldSdMean, None, None, None])
    rows.append(['log_marginal', result.logMarginal, None, None, None])
    fileio.writeCsvRows(filename, ('parameter', 'mean', 'sd', 'q025',
        'q975'), rows, prov)


def dumpFitMatrices(cfg, name, result):
    "Write Qs_NAME.mtx and Q_NAME.mtx, the prior precisions at the mode"
    model = result.approx.model
    hyper = model.hyperParams(result.thetaHat)
    Qs = spdefem.spdePrecision(model.fem, hyper.maternParams())
    comment = "range={} sd={}".format(hyper.range, hyper.sd)
    spdefem.dumpMatrixMarket(cfg.outPath('Qs_{}.mtx'.format(name)), Qs,
        comment)
    Q = stgmrf.stPrecision(Qs, hyper.arParams(model.T),
        model.optConfig.maxLatentSize)
    spdefem.dumpMatrixMarket(cfg.outPath('Q_{}.mtx'.format(name)), Q,
        comment + " phi={}".format(hyper.phi))


def loadFit(cfg, name, mesh, pattern, monitors):
    """
    Read fit_NAME.json and rebuild its posterior approximation
    """
    path = cfg.outPath(fitFileName(name))
    requireFile(path, 'fit', 'fit')
    d = fileio.readJson(path)
    fitResult = inference.FitResult.fromDict(d)
    storedHash = d.get('inputs', {}).get('mesh_hash')
    if storedHash is not None and storedHash != meshing.meshHash(mesh):
        raise structures.ValidationError("Fit {} was made with a different "
            "mesh".format(path))
    covariates = loadCovariates(cfg, mesh, [fitResult.spec])
    inference.restorePosterior(fitResult, mesh, pattern, covariates,
        monitors)
    return fitResult


def doPredict(cfg, numthreads=1, monitors=None):
    """
    Posterior mean and sd of the log intensity for each fitted model.
    With predict.kind = "grid" these are written as ASCII grids over
    the study region, mean_NAME_tT.asc and sd_NAME_tT.asc (and
    exceedance_NAME_tT.asc if predict.exceedance_threshold is given).
    With predict.kind = "network", targets are points along the roads
    every predict.spacing meters, written to network_NAME.csv. In both
    cases totals_NAME.csv compares the fitted expected number of events
    in each time step with the observed number.

    Returns
    -------
    predictions : dict of PredictionResult, by model name

    """
    monitors = monitoring.ensureMonitors(monitors)
    cfg.validate()
    domain = loadDomain(cfg)
    mesh = loadMesh(cfg)
    (pattern, snapping) = loadEvents(cfg, domain, numthreads, monitors)
    kind = cfg['predict']['kind']
    threshold = cfg.exceedanceThreshold()
    times = cfg.predictTimes()
    prov = provenance(cfg)
    makeOutdir(cfg)

    if kind == 'grid':
        grid = gridio.gridFromBounds(shapely.unary_union(domain).bounds,
            cfg.cellSize(domain))
        cellXy = grid.cellCenters()
        inside = geometry.pointsInDomain(cellXy, domain)
        targets = cellXy[inside]
    else:
        net = loadRoads(cfg)
        (targets, segmentIds) = geometry.sampleNetworkPoints(net,
            float(cfg['predict']['spacing']))

    predictions = {}
    for name in cfg.modelNames():
        fitResult = loadFit(cfg, name, mesh, pattern, monitors)
        pred = inference.predictIntensity(fitResult, targets, times,
            threshold, monitors)
        if kind == 'grid':
            writePredictionGrids(cfg, name, pred, grid, inside, prov)
        else:
            writeNetworkPrediction(cfg.outPath('network_{}.csv'.format(name)),
                pred, segmentIds, prov)
        writeTotals(cfg.outPath('totals_{}.csv'.format(name)), fitResult,
            pattern, prov)
        predictions[name] = pred
    return predictions


def writePredictionGrids(cfg, name, pred, grid, inside, prov):
    layers = [('mean', pred.mean), ('sd', pred.sd)]
    if pred.exceedance is not None:
        layers.append(('exceedance', pred.exceedance))
    for (k, t) in enumerate(pred.times):
        for (label, arr) in layers:
            vals = numpy.full(grid.nrows * grid.ncols, numpy.nan)
            vals[inside] = arr[k]
            out = structures.RasterGrid(grid.ncols, grid.nrows, grid.xll,
                grid.yll, grid.cellSize, vals, grid.nodata)
            filename = cfg.outPath('{}_{}_t{}.asc'.format(label, name, t))
            gridio.writeAsciiGrid(filename, out, prov)


def writeNetworkPrediction(filename, pred, segmentIds, prov):
    header = ['segment_id', 'x', 'y', 't', 'mean', 'sd', 'lambda_mean']
    if pred.exceedance is not None:
        header.append('exceedance')
    rows = []
    for (k, t) in enumerate(pred.times):
        for i in range(len(pred.xy)):
            row = [int(segmentIds[i]), float(pred.xy[i, 0]),
                float(pred.xy[i, 1]), t, float(pred.mean[k, i]),
                float(pred.sd[k, i]), float(pred.lambdaMean[k, i])]
            if pred.exceedance is not None:
                row.append(float(pred.exceedance[k, i]))
            rows.append(row)
    fileio.writeCsvRows(filename, header, rows, prov)


def writeTotals(filename, fitResult, pattern, prov):
    """
    Expected number of events in each time step at the posterior mode,
    by the same quadrature as the likelihood, against the observed count
    """
    approx = fitResult.approx
    expected = likelihood.expectedCounts(approx.etaHat, approx.model.obs)
    observed = pattern.countsPerTime()
    rows = [(t + 1, int(observed[t]), float(expected[t]))
        for t in range(pattern.T)]
    fileio.writeCsvRows(filename, ('t', 'observed', 'expected'), rows, prov)


IC_COLUMNS = ('model', 'dic', 'p_d', 'waic', 'p_waic', 'waic_se', 'lppd',
    'num_high_variance', 'log_marginal')


def doIc(cfg, numthreads=1, monitors=None):
    """
    DIC and WAIC of each fitted model, written as one row per model to
    ic.csv. The models are those listed in ic.fits (as fit file names),
    or otherwise all the configured models.

    Returns
    -------
    results : dict of ICResult, by model name

    """
    monitors = monitoring.ensureMonitors(monitors)
    cfg.validate()
    domain = loadDomain(cfg)
    mesh = loadMesh(cfg)
    (pattern, snapping) = loadEvents(cfg, domain, numthreads, monitors)
    names = icModelNames(cfg)
    numDraws = int(cfg['ic']['n_draws'])
    seed = cfg.icSeed()

    results = {}
    rows = []
    for name in names:
        fitResult = loadFit(cfg, name, mesh, pattern, monitors)
        ic = inference.informationCriteria(fitResult, numDraws, seed,
            numthreads, monitors=monitors)
        results[name] = ic
        rows.append((name, ic.dic, ic.pD, ic.waic, ic.pWaic, ic.waicSe,
            ic.lppd, ic.numHighVariance, fitResult.logMarginal))
        if ic.numHighVariance > 0:
            print("Warning: model {} has {} rows with pointwise log "
                "likelihood variance above {}, WAIC may be unreliable".format(
                name, ic.numHighVariance, inference.WAIC_VAR_WARN),
                file=sys.stderr)
    makeOutdir(cfg)
    fileio.writeCsvRows(cfg.outPath(IC_FILE), IC_COLUMNS, rows,
        provenance(cfg))
    return results


def icModelNames(cfg):
    "Model names from ic.fits (fit_NAME.json or NAME), else all models"
    fits = cfg['ic']['fits']
    if len(fits) == 0:
        return cfg.modelNames()
    names = []
    for f in fits:
        base = os.path.basename(f)
        if base.startswith('fit_') and base.endswith('.json'):
            base = base[4:-5]
        names.append(base)
    return names


def getCmdargs(argv=None):
    """
    Get command line arguments
    """
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config",
        help="TOML or JSON configuration file")
    common.add_argument("--set", action="append", default=[],
        metavar="KEY=VALUE",
        help=("Override a configuration value, e.g. " +
            "--set mesh.max_edge_inner=250. Can be given multiple times"))
    common.add_argument("-t", "--threads", type=int,
        help="Number of threads (default from configuration, else 1)")
    common.add_argument("--monitorjson",
        help="Output JSON file of monitoring info (optional)")

    p = argparse.ArgumentParser(prog="coxmap",
        description="Spatiotemporal log-Gaussian Cox process mapping")
    p.add_argument("--version", action="version",
        version="coxmap {}".format(__version__))
    sub = p.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", parents=[common],
        help="Write a bundled synthetic dataset")
    synth.add_argument("--dataset", default="square",
        choices=synthetic.DATASET_NAMES,
        help="Which dataset (default=%(default)s)")
    synth.add_argument("-o", "--outdir", default=".",
        help="Directory to write into (default=%(default)s)")
    synth.add_argument("--seed", type=int, default=0,
        help="Random seed for facilities and raster (default=%(default)s)")

    sub.add_parser("mesh", parents=[common],
        help="Triangulate the study region")
    sub.add_parser("covariates", parents=[common],
        help="Compute covariates at the mesh vertices")
    sub.add_parser("simulate", parents=[common],
        help="Simulate events from the configured true model")
    fitParser = sub.add_parser("fit", parents=[common],
        help="Fit the configured models")
    fitParser.add_argument("--dumpmatrices", default=False,
        action="store_true",
        help="Also write the prior precision matrices in Matrix Market "
            "format")
    sub.add_parser("predict", parents=[common],
        help="Predict the log intensity from fitted models")
    sub.add_parser("ic", parents=[common],
        help="Compare fitted models by DIC and WAIC")

    cmdargs = p.parse_args(argv)
    return cmdargs


def runCommand(cmdargs, monitors):
    "Run the command named in cmdargs"
    if cmdargs.command == 'synth':
        doSynth(cmdargs.dataset, cmdargs.outdir, cmdargs.seed)
        return

    cfg = config.loadConfig(cmdargs.config, cmdargs.set)
    numthreads = cmdargs.threads
    if numthreads is None:
        numthreads = cfg.threads
    monitors.setParam('numthreads', numthreads)
    monitors.setParam('configHash', cfg.configHash())

    if cmdargs.command == 'mesh':
        doMesh(cfg, monitors)
    elif cmdargs.command == 'covariates':
        doCovariates(cfg, numthreads, monitors)
    elif cmdargs.command == 'simulate':
        doSimulate(cfg, monitors)
    elif cmdargs.command == 'fit':
        doFit(cfg, numthreads, monitors, cmdargs.dumpmatrices)
    elif cmdargs.command == 'predict':
        doPredict(cfg, numthreads, monitors)
    elif cmdargs.command == 'ic':
        doIc(cfg, numthreads, monitors)


def mainCmd(argv=None):
    """
    Main command line wrapper. Returns the exit status: 0 on success, 2
    for invalid inputs, 3 for numerical failures.

    This function is referenced from pyproject.toml to create the
    command line script.
    """
    gdal.UseExceptions()

    cmdargs = getCmdargs(argv)
    monitors = monitoring.Monitoring()
    status = 0
    try:
        with monitors.timestamps.ctx('total'):
            runCommand(cmdargs, monitors)
    except structures.ValidationError as e:
        print("Error: {}".format(e), file=sys.stderr)
        status = EXIT_VALIDATION
    except structures.NumericalError as e:
        print("Numerical failure: {}".format(e), file=sys.stderr)
        if e.bestSoFar is not None:
            text = json.dumps(e.bestSoFar, sort_keys=True,
                default=lambda v: numpy.asarray(v).tolist())
            print("Best so far: {}".format(text), file=sys.stderr)
        status = EXIT_NUMERICAL

    if cmdargs.monitorjson is not None:
        with open(cmdargs.monitorjson, 'w') as f:
            json.dump(monitors.reportAsDict(), f, indent=2)
    return status


def main():
    sys.exit(mainCmd())
