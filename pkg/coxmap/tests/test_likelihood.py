"""
Tests of the Poisson pseudo-data likelihood
"""
import math
import unittest

import numpy
from scipy import sparse

from coxmap import structures
from coxmap import geometry
from coxmap import meshing
from coxmap import likelihood
from coxmap.tests import helpers


class PseudoDataTest(unittest.TestCase):
    def setUp(self):
        self.mesh = helpers.gridMesh(4)
        self.m = self.mesh.numVertices

    def test_noEvents(self):
        pattern = structures.PointPattern(numpy.zeros((0, 2)), [], 1)
        pd = likelihood.buildPseudoData(self.mesh, pattern)
        self.assertEqual(pd.numRows, self.m)
        self.assertTrue((pd.y == 0).all())
        numpy.testing.assert_allclose(pd.e, meshing.dualAreas(self.mesh))
        self.assertAlmostEqual(pd.e.sum(), 1.0)

    def test_eventAtVertex(self):
        j = 7
        pattern = structures.PointPattern([self.mesh.vertices[j]], [1], 1)
        pd = likelihood.buildPseudoData(self.mesh, pattern)
        self.assertEqual(pd.numRows, self.m + 1)
        row = pd.spatialA[self.m].toarray()[0]
        expected = numpy.zeros(self.m)
        expected[j] = 1.0
        numpy.testing.assert_allclose(row, expected, atol=1e-12)
        self.assertEqual(pd.y[self.m], 1)
        self.assertEqual(pd.e[self.m], 0)

    def test_rowLayout(self):
        rng = numpy.random.default_rng(0)
        pattern = helpers.uniformPattern(25, rng, T=3)
        pd = likelihood.buildPseudoData(self.mesh, pattern)
        self.assertEqual(pd.numRows, 3 * self.m + 25)
        self.assertEqual(pd.y.sum(), 25)
        numpy.testing.assert_allclose(pd.exposurePerTime(), [1.0, 1.0, 1.0])
        self.assertEqual(pd.eventCounts.tolist(),
            pattern.countsPerTime().tolist())
        self.assertEqual(pd.latentA.shape, (pd.numRows, 3 * self.m))
        # Rows only use the columns of their own time step
        coo = pd.latentA.tocoo()
        self.assertTrue((coo.col // self.m == pd.timeIndex[coo.row] - 1).all())
        numpy.testing.assert_allclose(numpy.asarray(
            pd.spatialA.sum(axis=1)).ravel(), 1.0)

    def test_orderIndependent(self):
        rng = numpy.random.default_rng(1)
        pattern = helpers.uniformPattern(40, rng, T=2)
        perm = rng.permutation(40)
        shuffled = structures.PointPattern(pattern.xy[perm], pattern.t[perm],
            2)
        pd1 = likelihood.buildPseudoData(self.mesh, pattern)
        pd2 = likelihood.buildPseudoData(self.mesh, shuffled)
        self.assertTrue((pd1.y == pd2.y).all())
        self.assertTrue((pd1.e == pd2.e).all())
        self.assertEqual(abs(pd1.spatialA - pd2.spatialA).max(), 0.0)
        numpy.testing.assert_array_equal(pattern.xy[pd1.eventOrder],
            shuffled.xy[pd2.eventOrder])

    def test_outside(self):
        pattern = structures.PointPattern([(0.5, 0.5), (1.5, 0.5)], [1, 1], 1)
        with self.assertRaises(structures.ValidationError):
            likelihood.buildPseudoData(self.mesh, pattern)

    def test_extensionZone(self):
        square = geometry.makePolygon([(0, 0), (1, 0), (1, 1), (0, 1)])
        mesh = meshing.buildMesh([square],
            structures.MeshConfig(0.25, 0.5, 0.5))
        inside = structures.PointPattern([(0.5, 0.5), (1.0, 0.3)], [1, 1], 1)
        pd = likelihood.buildPseudoData(mesh, inside)
        self.assertAlmostEqual(pd.e.sum(), 1.0, delta=1e-9)
        self.assertTrue((pd.e[:mesh.numVertices][~mesh.innerFlag] == 0).all())
        outside = structures.PointPattern([(1.2, 0.5)], [1], 1)
        with self.assertRaises(structures.ValidationError):
            likelihood.buildPseudoData(mesh, outside)

    def test_badTimes(self):
        with self.assertRaises(structures.ValidationError):
            structures.PointPattern([(0.5, 0.5)], [3], 2)


class CovariateTest(unittest.TestCase):
    def setUp(self):
        self.mesh = helpers.gridMesh(4)
        xy = self.mesh.vertices
        self.fields = structures.CovariateField(['x', 'pop'],
            numpy.column_stack([xy[:, 0], 100 + 10 * xy[:, 1]]),
            self.mesh.innerFlag)
        self.pattern = structures.PointPattern([(0.25, 0.5), (0.6, 0.1)],
            [1, 1], 1)

    def test_interceptOnly(self):
        spec = structures.ModelSpec(field=False)
        Z = likelihood.evaluateCovariates(None, self.mesh, self.pattern, spec)
        self.assertEqual(Z.shape, (self.mesh.numVertices + 2, 1))
        self.assertTrue((Z == 1).all())

    def test_rawValues(self):
        spec = structures.ModelSpec(covariates=['x'], field=False)
        Z = likelihood.evaluateCovariates(self.fields, self.mesh,
            self.pattern, spec, standardize=False)
        m = self.mesh.numVertices
        numpy.testing.assert_allclose(Z[:m, 1], self.mesh.vertices[:, 0])
        # Linear covariates are reproduced exactly at events
        numpy.testing.assert_allclose(Z[m:, 1], [0.25, 0.6], atol=1e-12)

    def test_standardized(self):
        spec = structures.ModelSpec(intercept=False, covariates=['pop', 'x'],
            field=False)
        Z = likelihood.evaluateCovariates(self.fields, self.mesh,
            self.pattern, spec)
        m = self.mesh.numVertices
        numpy.testing.assert_allclose(Z[:m].mean(axis=0), 0.0, atol=1e-12)
        numpy.testing.assert_allclose(Z[:m].std(axis=0), 1.0)

    def test_missing(self):
        spec = structures.ModelSpec(covariates=['school'], field=False)
        with self.assertRaises(structures.ValidationError):
            likelihood.evaluateCovariates(self.fields, self.mesh,
                self.pattern, spec)
        spec = structures.ModelSpec(covariates=['x'], field=False)
        with self.assertRaises(structures.ValidationError):
            likelihood.evaluateCovariates(None, self.mesh, self.pattern, spec)

    def test_nonFinite(self):
        vals = numpy.zeros((self.mesh.numVertices, 1))
        vals[3, 0] = numpy.nan
        with self.assertRaises(structures.ValidationError):
            structures.CovariateField(['a'], vals, self.mesh.innerFlag)


class LoglikTest(unittest.TestCase):
    def setUp(self):
        self.mesh = helpers.gridMesh(4)

    def test_emptyUnitSquare(self):
        pattern = structures.PointPattern(numpy.zeros((0, 2)), [], 1)
        pd = likelihood.buildPseudoData(self.mesh, pattern)
        eta = numpy.zeros(pd.numRows)
        self.assertAlmostEqual(likelihood.loglik(eta, pd), -1.0)
        # Doubling the exposures doubles the integral term
        pd.e = 2 * pd.e
        self.assertAlmostEqual(likelihood.loglik(eta, pd), -2.0)

    def test_gradient(self):
        rng = numpy.random.default_rng(2)
        h = 1e-5
        for trial in range(20):
            pattern = helpers.uniformPattern(int(rng.integers(0, 15)), rng,
                T=int(rng.integers(1, 3)))
            pd = likelihood.buildPseudoData(self.mesh, pattern)
            eta = rng.normal(0.0, 1.0, pd.numRows)
            (grad, hess) = likelihood.loglikGradHess(eta, pd)
            self.assertTrue((hess <= 0).all())
            for i in rng.choice(pd.numRows, 5, replace=False):
                (up, down) = (eta.copy(), eta.copy())
                up[i] += h
                down[i] -= h
                fd = (likelihood.loglik(up, pd) -
                    likelihood.loglik(down, pd)) / (2 * h)
                self.assertLess(abs(fd - grad[i]),
                    1e-6 * max(1.0, abs(grad[i])))
                (gUp, hUp) = likelihood.loglikGradHess(up, pd)
                (gDown, hDown) = likelihood.loglikGradHess(down, pd)
                fdHess = (gUp[i] - gDown[i]) / (2 * h)
                self.assertLess(abs(fdHess - hess[i]),
                    1e-6 * max(1.0, abs(hess[i])))

    def test_pointwise(self):
        rng = numpy.random.default_rng(3)
        pattern = helpers.uniformPattern(10, rng)
        pd = likelihood.buildPseudoData(self.mesh, pattern)
        eta = rng.normal(0.0, 1.0, pd.numRows)
        pw = likelihood.pointwiseLoglik(eta, pd)
        self.assertAlmostEqual(pw.sum(), likelihood.loglik(eta, pd))
        many = likelihood.pointwiseLoglik(numpy.vstack([eta, eta]), pd)
        numpy.testing.assert_allclose(many[1], pw)

    def test_nonFinite(self):
        pattern = structures.PointPattern(numpy.zeros((0, 2)), [], 1)
        pd = likelihood.buildPseudoData(self.mesh, pattern)
        eta = numpy.zeros(pd.numRows)
        eta[2] = numpy.nan
        with self.assertRaises(structures.NumericalError):
            likelihood.loglik(eta, pd)
        eta[2] = 1e4
        with self.assertRaises(structures.NumericalError):
            likelihood.loglik(eta, pd)

    def test_expectedCounts(self):
        pattern = structures.PointPattern(numpy.zeros((0, 2)), [], 2)
        pd = likelihood.buildPseudoData(self.mesh, pattern)
        eta = numpy.full(pd.numRows, math.log(40.0))
        numpy.testing.assert_allclose(likelihood.expectedCounts(eta, pd),
            [40.0, 40.0])


class GaussianObservationsTest(unittest.TestCase):
    def test_gradHess(self):
        A = sparse.identity(4, format='csr')
        obs = likelihood.GaussianObservations([1.0, 2.0, 0.0, -1.0], A,
            numpy.ones(4, dtype=int), 0.5, 4)
        eta = numpy.array([0.0, 1.0, 0.0, 0.0])
        (grad, hess) = likelihood.loglikGradHess(eta, obs)
        numpy.testing.assert_allclose(grad, [4.0, 4.0, 0.0, -4.0])
        numpy.testing.assert_allclose(hess, -4.0)
        expected = (-0.5 * 4 * (1 + 1 + 0 + 1) -
            4 * math.log(0.5 * math.sqrt(2 * math.pi)))
        self.assertAlmostEqual(likelihood.loglik(eta, obs), expected)

    def test_badSd(self):
        with self.assertRaises(structures.ValidationError):
            likelihood.GaussianObservations([0.0], sparse.identity(1),
                [1], 0.0, 1)
