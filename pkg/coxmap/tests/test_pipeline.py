"""
End-to-end tests of the command line pipeline
"""
import json
import os
import shutil
import tempfile
import unittest

import numpy

from coxmap import structures
from coxmap import geometry
from coxmap import meshing
from coxmap import likelihood
from coxmap import inference
from coxmap import simulate
from coxmap import gridio
from coxmap import fileio
from coxmap import config
from coxmap import pipeline
from coxmap import monitoring
from coxmap import synthetic
from coxmap.tests import LONGTESTS
from coxmap.tests import helpers


REPO_DIR = os.path.dirname(os.path.dirname(os.path.dirname(
    os.path.abspath(__file__))))

SQUARE_CONFIG = """
seed = 4

[paths]
domain = "data/domain.geojson"
facilities = ["data/facilities.geojson"]
outdir = "out"

[paths.rasters]
population = "data/population.asc"

[mesh]
max_edge_inner = 2000.0
max_edge_outer = 5000.0
extension_width = 2000.0

[model]
T = 2

[variants.plain]
covariates = []

[variants.pop]
covariates = ["population"]

[priors]
range_median = 5000.0

[simulate]
beta = {intercept = -13.5, population = 0.4}
range = 4000.0
sd = 0.5
phi = 0.5
covariates = [{name = "population", kind = "raster"}]
eval_cells = 50

[predict]
cell_size = 1000.0
exceedance_threshold = -13.5

[ic]
n_draws = 100
"""


def readFloatCsv(filename):
    (header, rows, prov) = fileio.readCsvRows(filename)
    return (header, numpy.array([[float(v) for v in r] for r in rows]))


def readBytes(filename):
    with open(filename, 'rb') as f:
        return f.read()


class SquarePipelineTest(unittest.TestCase):
    """
    Every command, in order, on the bundled square dataset with a
    coarse mesh
    """
    @classmethod
    def setUpClass(cls):
        cls.tmpdir = tempfile.mkdtemp(prefix='coxmap_test_')
        cls.cfgFile = os.path.join(cls.tmpdir, 'run.toml')
        with open(cls.cfgFile, 'w') as f:
            f.write(SQUARE_CONFIG)
        cls.outdir = os.path.join(cls.tmpdir, 'out')
        cls.monitorFile = os.path.join(cls.tmpdir, 'monitor.json')
        cls.statuses = {}
        cls.statuses['synth'] = pipeline.mainCmd(['synth', '-o',
            os.path.join(cls.tmpdir, 'data')])
        for command in ('mesh', 'simulate', 'covariates', 'fit', 'predict',
                'ic'):
            argv = [command, '-c', cls.cfgFile]
            if command == 'fit':
                argv.extend(['--monitorjson', cls.monitorFile])
            cls.statuses[command] = pipeline.mainCmd(argv)
        cls.cfg = config.loadConfig(cls.cfgFile)

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.tmpdir)

    def outFile(self, name):
        return os.path.join(self.outdir, name)

    def test_allSucceeded(self):
        for (command, status) in self.statuses.items():
            self.assertEqual(status, 0, command)
        for name in ('mesh.json', 'study_region.geojson', 'events.csv',
                'truth.json', 'truth_loglambda.csv', 'covariates.csv',
                'fit_plain.json', 'fit_pop.json', 'summary_pop.csv',
                'densities_pop.csv', 'totals_pop.csv', 'mean_pop_t1.asc',
                'sd_pop_t2.asc', 'exceedance_plain_t2.asc', 'ic.csv'):
            self.assertTrue(os.path.exists(self.outFile(name)), name)

    def test_provenance(self):
        h = self.cfg.configHash()
        for name in ('mesh.json', 'events.csv', 'fit_pop.json', 'ic.csv',
                'mean_pop_t1.asc'):
            prov = fileio.readProvenance(self.outFile(name))
            self.assertEqual(prov['config_hash'], h, name)
            self.assertEqual(str(prov['seed']), '4', name)

    def test_fitFile(self):
        d = fileio.readJson(self.outFile('fit_pop.json'))
        self.assertEqual(d['name'], 'pop')
        self.assertEqual(d['theta_names'], ['log_range', 'log_sd', 'phi_z'])
        self.assertEqual([f['name'] for f in d['fixed_effects']],
            ['intercept', 'population'])
        mesh = fileio.readMesh(self.outFile('mesh.json'))
        self.assertEqual(d['inputs']['mesh_hash'], meshing.meshHash(mesh))
        events = fileio.readEvents(self.outFile('events.csv'), T=2)
        self.assertEqual(d['event_counts'], events.countsPerTime().tolist())
        fitResult = inference.FitResult.fromDict(d)
        self.assertEqual(fitResult.latentMean.shape, (2, mesh.numVertices))

        (header, rows, prov) = fileio.readCsvRows(
            self.outFile('summary_pop.csv'))
        self.assertEqual(header, ['parameter', 'mean', 'sd', 'q025', 'q975'])
        self.assertEqual([r[0] for r in rows], ['intercept', 'population',
            'range', 'sd', 'phi', 'field_sd_mean', 'log_marginal'])

    def test_covariates(self):
        mesh = fileio.readMesh(self.outFile('mesh.json'))
        fields = fileio.readCovariateTable(self.outFile('covariates.csv'),
            mesh)
        kinds = sorted(synthetic.FACILITY_COUNTS)
        self.assertEqual(fields.names, ['dist_' + k for k in kinds] +
            ['population'])
        self.assertTrue((fields.values[:, :-1] >= 0).all())

    def test_massBalance(self):
        (header, vals) = readFloatCsv(self.outFile('totals_pop.csv'))
        self.assertEqual(header, ['t', 'observed', 'expected'])
        (observed, expected) = (vals[:, 1], vals[:, 2])
        self.assertTrue((observed > 50).all())
        numpy.testing.assert_allclose(expected, observed, rtol=0.15)

    def test_predictionGrids(self):
        (grid, metadata) = gridio.readAsciiGrid(self.outFile('mean_pop_t1.asc'))
        self.assertEqual((grid.ncols, grid.nrows), (10, 10))
        self.assertTrue(grid.validMask().all())
        (sdGrid, metadata) = gridio.readAsciiGrid(self.outFile('sd_pop_t1.asc'))
        self.assertTrue((sdGrid.values > 0).all())
        (exGrid, metadata) = gridio.readAsciiGrid(
            self.outFile('exceedance_pop_t1.asc'))
        self.assertTrue(((exGrid.values >= 0) & (exGrid.values <= 1)).all())

    def test_ic(self):
        (header, rows, prov) = fileio.readCsvRows(self.outFile('ic.csv'))
        self.assertEqual(tuple(header), pipeline.IC_COLUMNS)
        self.assertEqual([r[0] for r in rows], ['plain', 'pop'])
        for r in rows:
            pWaic = float(r[header.index('p_waic')])
            self.assertGreaterEqual(pWaic, 0.0)
            self.assertTrue(numpy.isfinite(float(r[header.index('waic')])))

    def test_monitorJson(self):
        with open(self.monitorFile) as f:
            report = json.load(f)
        self.assertIn('timestamps', report)
        self.assertGreater(report['counts']['newtonCalls'], 0)
        self.assertEqual(report['params']['configHash'], self.cfg.configHash())

    def test_deterministic(self):
        names = ('fit_pop.json', 'fit_plain.json', 'summary_pop.csv')
        before = {name: readBytes(self.outFile(name)) for name in names}
        self.assertEqual(pipeline.mainCmd(['fit', '-c', self.cfgFile, '-t',
            '4']), 0)
        for name in names:
            self.assertEqual(readBytes(self.outFile(name)), before[name], name)

        grids = ('mean_pop_t2.asc', 'sd_plain_t1.asc')
        before = {name: readBytes(self.outFile(name)) for name in grids}
        self.assertEqual(pipeline.mainCmd(['predict', '-c', self.cfgFile,
            '-t', '4']), 0)
        for name in grids:
            self.assertEqual(readBytes(self.outFile(name)), before[name], name)

    def test_exitCodes(self):
        status = pipeline.mainCmd(['mesh', '-c', self.cfgFile, '--set',
            'paths.domain=data/nothere.geojson'])
        self.assertEqual(status, pipeline.EXIT_VALIDATION)
        status = pipeline.mainCmd(['fit', '-c', self.cfgFile, '--set',
            'paths.outdir=failed', '--set', 'paths.mesh=out/mesh.json',
            '--set', 'paths.events=out/events.csv', '--set',
            'paths.covariates=out/covariates.csv', '--set',
            'optimizer.max_evals=3', '--set', 'optimizer.restarts=0'])
        self.assertEqual(status, pipeline.EXIT_NUMERICAL)
        status = pipeline.mainCmd(['predict', '-c', self.cfgFile, '--set',
            'paths.outdir=empty'])
        self.assertEqual(status, pipeline.EXIT_VALIDATION)


class CovariatesCommandTest(unittest.TestCase):
    def test_distanceAndRaster(self):
        with helpers.TempDir() as tmpdir:
            domainFile = os.path.join(tmpdir, 'domain.geojson')
            fileio.writeGeoJson(domainFile, [fileio.polygonFeature(p)
                for p in simulate.domainFromBounds(0, 0, 10, 10)])
            facFile = os.path.join(tmpdir, 'facilities.geojson')
            fileio.writeFacilities(facFile, {'school':
                structures.FacilityLayer('school', [(0.0, 0.0)])})
            rasterFile = os.path.join(tmpdir, 'constant.asc')
            grid = structures.RasterGrid(3, 3, -1.0, -1.0, 4.0,
                numpy.full((3, 3), 5.0))
            gridio.writeAsciiGrid(rasterFile, grid)

            cfg = config.loadConfig(overrides=[
                'paths.domain={}'.format(json.dumps(domainFile)),
                'paths.facilities=[{}]'.format(json.dumps(facFile)),
                'paths.rasters={{constant = {}}}'.format(
                    json.dumps(rasterFile)),
                'paths.outdir={}'.format(json.dumps(os.path.join(tmpdir,
                    'out'))),
                'geometry.allow_lonlat_like=true',
                'mesh.max_edge_inner=2.5', 'mesh.max_edge_outer=2.5',
                'mesh.extension_width=0'])
            mesh = pipeline.doMesh(cfg)
            fields = pipeline.doCovariates(cfg, numthreads=2)
            self.assertTrue(os.path.exists(cfg.outPath('covariates.csv')))

        self.assertEqual(fields.names, ['dist_school', 'constant'])
        dist = fields.values[:, 0]
        expected = numpy.hypot(mesh.vertices[:, 0], mesh.vertices[:, 1])
        numpy.testing.assert_allclose(dist, expected, atol=1e-9)
        origin = numpy.argmin(expected)
        self.assertEqual(dist[origin], 0.0)
        numpy.testing.assert_allclose(fields.values[:, 1], 5.0)

    def test_rasterFill(self):
        mesh = helpers.gridMesh(4, size=4.0)
        offRaster = (mesh.vertices > 3.0).any(axis=1)
        mesh.innerFlag[offRaster] = False
        grid = structures.RasterGrid(3, 3, 0.0, 0.0, 1.0,
            numpy.arange(9.0).reshape((3, 3)))
        vals = pipeline.rasterAtVertices('r', grid, mesh)
        self.assertTrue(numpy.isfinite(vals).all())
        # The outer corner (4, 4) takes the value at the nearest vertex
        # with one, (3, 3) at the top right of the raster
        self.assertEqual(vals[-1], vals[3 * 5 + 3])
        mesh.innerFlag[:] = True
        with self.assertRaises(structures.ValidationError):
            pipeline.rasterAtVertices('r', grid, mesh)

    def test_nothingToCompute(self):
        with helpers.TempDir() as tmpdir:
            meshFile = os.path.join(tmpdir, 'mesh.json')
            fileio.writeMesh(meshFile, helpers.gridMesh(2))
            cfg = config.loadConfig(overrides=[
                'paths.mesh={}'.format(json.dumps(meshFile))])
            with self.assertRaises(structures.ValidationError):
                pipeline.doCovariates(cfg)


class SynthTest(unittest.TestCase):
    def test_datasets(self):
        with helpers.TempDir() as tmpdir:
            files = pipeline.doSynth('square', os.path.join(tmpdir, 'sq'))
            domain = fileio.readDomain(files['domain'])
            self.assertAlmostEqual(domain[0].area, synthetic.SQUARE_SIZE ** 2)
            layers = fileio.readFacilities(files['facilities'])
            self.assertEqual(sorted(layers), sorted(synthetic.FACILITY_COUNTS))
            (grid, metadata) = gridio.readAsciiGrid(files['population'])
            self.assertTrue(grid.validMask().all())

            files = pipeline.doSynth('manhattan', os.path.join(tmpdir, 'mh'))
            net = fileio.readRoads(files['roads'])
            self.assertEqual(len(net), 2 * 7 * 6)
            numpy.testing.assert_allclose(net.lengths, synthetic.BLOCK_SIZE)
            layers = fileio.readFacilities(files['facilities'])
            nodes = {tuple(p) for p in numpy.vstack([net.starts, net.ends])}
            for layer in layers.values():
                for p in layer.points:
                    self.assertIn(tuple(p), nodes)

            with self.assertRaises(structures.ValidationError):
                pipeline.doSynth('atlantis', tmpdir)


class NetworkPipelineTest(unittest.TestCase):
    def test_smallNetwork(self):
        """
        Buffer a small street grid, then mesh, simulate, fit and predict
        along the streets
        """
        net = synthetic.manhattanRoads(numBlocks=2)
        domain = geometry.bufferNetwork(net, 30.0)
        meshCfg = structures.MeshConfig(40.0, 200.0, 100.0)
        mesh = meshing.buildMesh(domain, meshCfg)
        sc = simulate.SimScenario(domain, meshCfg,
            {'intercept': numpy.log(3e-4)}, range=400.0, sd=0.5, T=2,
            phi=0.5, seed=3, evalCells=60)
        sim = simulate.simulateLgcp(sc, mesh)
        self.assertTrue(geometry.pointsInDomain(sim.pattern.xy, domain).all())

        spec = structures.ModelSpec(intercept=True, field=True, T=2)
        priors = structures.PriorSpec(rangeMedian=500.0)
        result = inference.fit(spec, mesh, sim.pattern, None, priors,
            numthreads=2)
        self.assertTrue(result.diagnostics['converged'])

        (xy, segIds) = geometry.sampleNetworkPoints(net, 50.0)
        pred = inference.predictIntensity(result, xy)
        self.assertFalse(pred.outside.any())
        self.assertTrue(numpy.isfinite(pred.mean).all())
        self.assertTrue((pred.sd > 0).all())

        (ids, snapped, dist) = geometry.snapPoints(sim.pattern.xy, net)
        self.assertTrue((dist <= 30.0 + 1e-6).all())

        expected = likelihood.expectedCounts(result.approx.etaHat,
            result.approx.model.obs)
        observed = sim.pattern.countsPerTime()
        numpy.testing.assert_allclose(expected, observed, rtol=0.15)

    def test_snapEvents(self):
        """
        Events recorded beside the road, outside the corridor, are moved
        onto the nearest road before fitting
        """
        net = synthetic.manhattanRoads(numBlocks=2)
        domain = geometry.bufferNetwork(net, 30.0)
        meshCfg = structures.MeshConfig(40.0, 200.0, 100.0)
        sc = simulate.SimScenario(domain, meshCfg,
            {'intercept': numpy.log(3e-4)}, T=2, seed=8, evalCells=60,
            sd=0.5, range=400.0)
        sim = simulate.simulateLgcp(sc)

        # Move some events 45 m sideways from the middle part of their
        # segment, so the nearest road is still that one
        (segIds, onRoad, dist) = geometry.snapPoints(sim.pattern.xy, net)
        index = {int(s): i for (i, s) in enumerate(net.segmentIds)}
        xy = onRoad.copy()
        numMoved = 0
        for k in range(len(xy)):
            i = index[int(segIds[k])]
            (a, b) = (net.starts[i], net.ends[i])
            along = numpy.dot(xy[k] - a, b - a) / numpy.dot(b - a, b - a)
            if 0.2 < along < 0.8 and k % 3 == 0:
                direction = (b - a) / numpy.hypot(*(b - a))
                xy[k] += 45.0 * numpy.array([-direction[1], direction[0]])
                numMoved += 1
        self.assertGreater(numMoved, 0)
        recorded = structures.PointPattern(xy, sim.pattern.t, 2)
        self.assertFalse(geometry.pointsInDomain(xy, domain).all())

        with helpers.TempDir() as tmpdir:
            roadsFile = os.path.join(tmpdir, 'roads.geojson')
            fileio.writeRoads(roadsFile, net)
            eventsFile = os.path.join(tmpdir, 'events.csv')
            fileio.writeEvents(eventsFile, recorded)
            overrides = [
                'paths.roads={}'.format(json.dumps(roadsFile)),
                'paths.events={}'.format(json.dumps(eventsFile)),
                'paths.outdir={}'.format(json.dumps(os.path.join(tmpdir,
                    'out'))),
                'geometry.buffer_width=30.0', 'mesh.max_edge_inner=40.0',
                'mesh.max_edge_outer=200.0', 'mesh.extension_width=100.0',
                'model.T=2', 'priors.range_median=500.0']
            cfg = config.loadConfig(overrides=overrides)
            pipeline.doMesh(cfg)
            # Without snapping the events outside the corridor are refused
            with self.assertRaises(structures.ValidationError):
                pipeline.doFit(cfg)

            cfg = config.loadConfig(overrides=overrides +
                ['geometry.snap_events=true'])
            monitors = monitoring.Monitoring()
            results = pipeline.doFit(cfg, numthreads=2, monitors=monitors)
            self.assertTrue(results['model'].diagnostics['converged'])
            d = fileio.readJson(cfg.outPath('fit_model.json'))

        snapping = d['inputs']['event_snapping']
        self.assertEqual(snapping['num_events'], len(recorded))
        self.assertAlmostEqual(snapping['max_distance'], 45.0, places=6)
        self.assertGreater(snapping['mean_distance'], 0.0)
        self.assertLess(snapping['mean_distance'], 45.0)
        self.assertEqual(monitors.params['snapMaxDistance'],
            snapping['max_distance'])
        self.assertEqual(d['event_counts'], recorded.countsPerTime().tolist())

    def test_snapNeedsRoads(self):
        cfg = config.loadConfig(overrides=['geometry.snap_events=true'])
        with self.assertRaises(structures.ValidationError):
            cfg.validate()

    @unittest.skipUnless(LONGTESTS, "Set COXMAP_LONGTESTS to run")
    def test_networkConfig(self):
        cfgFile = os.path.join(REPO_DIR, 'configs', 'network.toml')
        if not os.path.exists(cfgFile):
            self.skipTest("No configs directory")
        with helpers.TempDir() as tmpdir:
            data = os.path.join(tmpdir, 'data')
            self.assertEqual(pipeline.mainCmd(['synth', '--dataset',
                'manhattan', '-o', data]), 0)
            overrides = ['--set', 'paths.roads={}'.format(json.dumps(
                os.path.join(data, 'roads.geojson'))),
                '--set', 'paths.facilities=[{}]'.format(json.dumps(
                os.path.join(data, 'facilities.geojson'))),
                '--set', 'paths.rasters={{population = {}}}'.format(
                json.dumps(os.path.join(data, 'population.asc'))),
                '--set', 'paths.outdir={}'.format(json.dumps(
                os.path.join(tmpdir, 'out')))]
            for command in ('mesh', 'simulate', 'covariates', 'fit',
                    'predict'):
                status = pipeline.mainCmd([command, '-c', cfgFile] +
                    overrides)
                self.assertEqual(status, 0, command)
            out = os.path.join(tmpdir, 'out')
            cfg = config.loadConfig(cfgFile, [overrides[i]
                for i in range(1, len(overrides), 2)])
            for name in cfg.modelNames():
                (header, vals) = readFloatCsv(os.path.join(out,
                    'totals_{}.csv'.format(name)))
                numpy.testing.assert_allclose(vals[:, 2], vals[:, 1],
                    rtol=0.15)
                self.assertTrue(os.path.exists(os.path.join(out,
                    'network_{}.csv'.format(name))))
