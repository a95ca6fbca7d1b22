"""
Tests of the Matern correlation, the finite element matrices and the
SPDE precision
"""
import math
import os
import unittest

import numpy
from scipy import special
from scipy import sparse
from scipy import io as scipyio

from coxmap import structures
from coxmap import geometry
from coxmap import meshing
from coxmap import spdefem
from coxmap import factor
from coxmap.tests import helpers


class MaternTest(unittest.TestCase):
    def test_zero(self):
        for nu in (0.5, 1.0, 2.5):
            params = structures.MaternParams(3.0, 1.0, nu)
            self.assertEqual(spdefem.maternCorrelation(0.0, params), 1.0)

    def test_exponential(self):
        params = structures.MaternParams(2.0, 1.0, 0.5)
        r = numpy.linspace(0.1, 10.0, 100)
        numpy.testing.assert_allclose(spdefem.maternCorrelation(r, params),
            numpy.exp(-params.kappa * r), rtol=1e-10)
        # kappa is 1 here
        self.assertAlmostEqual(spdefem.maternCorrelation(1.0, params),
            math.exp(-1.0), places=12)

    def test_atRange(self):
        params = structures.MaternParams(5.0, 2.0, 1.0)
        expected = math.sqrt(8) * special.k1(math.sqrt(8))
        self.assertAlmostEqual(spdefem.maternCorrelation(5.0, params),
            expected, places=12)
        self.assertAlmostEqual(expected, 0.1397, places=4)

    def test_decreasing(self):
        params = structures.MaternParams(1.0, 1.0)
        corr = spdefem.maternCorrelation(numpy.linspace(0, 5, 200), params)
        self.assertTrue((numpy.diff(corr) < 0).all())
        self.assertTrue((corr > 0).all())

    def test_farAway(self):
        params = structures.MaternParams(1.0, 1.0)
        self.assertEqual(spdefem.maternCorrelation(1e5, params), 0.0)

    def test_negativeDistance(self):
        params = structures.MaternParams(1.0, 1.0)
        with self.assertRaises(structures.ValidationError):
            spdefem.maternCorrelation(-1.0, params)

    def test_kappaTau(self):
        (kappa, tau) = spdefem.kappaTauFromRangeSd(3.0, 0.7)
        (rng, sd) = spdefem.rangeSdFromKappaTau(kappa, tau)
        self.assertAlmostEqual(rng, 3.0)
        self.assertAlmostEqual(sd, 0.7)
        self.assertAlmostEqual(kappa, math.sqrt(8) / 3.0)


class FemTest(unittest.TestCase):
    def test_rightTriangle(self):
        mesh = helpers.rightTriangleMesh()
        (C, Ct) = spdefem.assembleMass(mesh)
        expectedC = numpy.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]) / 24.0
        numpy.testing.assert_allclose(C.toarray(), expectedC, atol=1e-15)
        numpy.testing.assert_allclose(Ct.diagonal(), [1 / 6] * 3)
        G = spdefem.assembleStiffness(mesh)
        expectedG = 0.5 * numpy.array([[2, -1, -1], [-1, 1, 0],
            [-1, 0, 1]])
        numpy.testing.assert_allclose(G.toarray(), expectedG, atol=1e-15)

    def test_gridMatrices(self):
        mesh = helpers.gridMesh(6, size=3.0)
        fem = spdefem.FemMatrices(mesh)
        self.assertAlmostEqual(fem.C.sum(), 9.0)
        numpy.testing.assert_allclose(fem.Ct.diagonal(),
            meshing.dualAreas(mesh))
        G = fem.G.toarray()
        numpy.testing.assert_allclose(G, G.T, atol=1e-14)
        numpy.testing.assert_allclose(G.sum(axis=1), 0.0, atol=1e-12)
        eig = numpy.linalg.eigvalsh(G)
        # Positive semi-definite, with only the constants in the null space
        self.assertGreater(eig[0], -1e-12)
        self.assertLess(abs(eig[0]), 1e-10)
        self.assertGreater(eig[1], 1e-8)
        # Linear functions have energy |grad|^2 * area
        f = 2 * mesh.vertices[:, 0] - mesh.vertices[:, 1]
        self.assertAlmostEqual(f @ G @ f, 5.0 * 9.0)

    def test_degenerateTriangle(self):
        mesh = helpers.rightTriangleMesh()
        mesh.vertices[2] = (2.0, 0.0)
        with self.assertRaises(structures.ValidationError):
            spdefem.assembleMass(mesh)


class PrecisionTest(unittest.TestCase):
    def setUp(self):
        self.mesh = helpers.gridMesh(10)
        self.fem = spdefem.FemMatrices(self.mesh)

    def test_symmetricPositiveDefinite(self):
        Q = spdefem.spdePrecision(self.fem, structures.MaternParams(0.4, 1.0))
        dense = Q.toarray()
        numpy.testing.assert_allclose(dense, dense.T, rtol=0, atol=1e-12 *
            abs(dense).max())
        self.assertTrue(factor.isPositiveDefinite(Q))
        spdefem.spdePrecision(self.mesh, structures.MaternParams(0.4, 1.0),
            checkPD=True)

    def test_sdScaling(self):
        Q1 = spdefem.spdePrecision(self.fem, structures.MaternParams(0.4, 1.0))
        Q2 = spdefem.spdePrecision(self.fem, structures.MaternParams(0.4, 2.0))
        cov1 = numpy.linalg.inv(Q1.toarray())
        cov2 = numpy.linalg.inv(Q2.toarray())
        numpy.testing.assert_allclose(cov2, 4.0 * cov1, rtol=1e-8,
            atol=1e-10 * abs(cov1).max())

    def test_sparsity(self):
        Q = spdefem.spdePrecision(self.fem, structures.MaternParams(0.4, 1.0))
        m = self.mesh.numVertices
        e = self.mesh.edges
        adj = sparse.coo_matrix((numpy.ones(len(e)), (e[:, 0], e[:, 1])),
            shape=(m, m))
        adj = adj + adj.T + sparse.identity(m)
        twoRing = (adj @ adj).toarray() > 0
        pattern = Q.toarray() != 0
        self.assertFalse((pattern & ~twoRing).any())

    def test_onlyNuOne(self):
        with self.assertRaises(structures.ValidationError):
            spdefem.spdePrecision(self.fem,
                structures.MaternParams(0.4, 1.0, 2.0))

    def test_badParams(self):
        with self.assertRaises(structures.ValidationError):
            structures.MaternParams(-1.0, 1.0)
        with self.assertRaises(structures.ValidationError):
            structures.MaternParams(1.0, 0.0)

    def test_dump(self):
        Q = spdefem.spdePrecision(self.fem, structures.MaternParams(0.4, 1.0))
        with helpers.TempDir() as tmpdir:
            filename = os.path.join(tmpdir, 'Q.mtx')
            spdefem.dumpMatrixMarket(filename, Q, "range=0.4")
            Qread = scipyio.mmread(filename)
        numpy.testing.assert_allclose(Qread.toarray(), Q.toarray(),
            rtol=1e-12)

    def test_maternAgreement(self):
        """
        The SPDE field on a fine mesh has close to the Matern covariance
        away from the boundary
        """
        square = geometry.makePolygon([(0, 0), (10, 0), (10, 10), (0, 10)])
        mesh = meshing.buildMesh([square],
            structures.MeshConfig(0.25, 0.25))
        params = structures.MaternParams(2.0, 1.0)
        Q = spdefem.spdePrecision(mesh, params)
        chol = factor.SparseCholesky(Q)
        dist = numpy.hypot(*(mesh.vertices - (5.0, 5.0)).T)
        c = int(numpy.argmin(dist))
        cov = chol.inverseColumns([c])[:, 0]
        self.assertLess(abs(cov[c] - 1.0), 0.1)

        r = numpy.hypot(*(mesh.vertices - mesh.vertices[c]).T)
        near = numpy.where(r <= 4.0)[0]
        var = chol.inverseDiagonal(near)
        corr = cov[near] / numpy.sqrt(cov[c] * var)
        expected = spdefem.maternCorrelation(r[near], params)
        self.assertLess(numpy.abs(corr - expected).max(), 0.05)
