"""
Small meshes and datasets shared by the tests
"""
import os
import shutil
import tempfile

import numpy

from coxmap import structures


def gridMesh(n, size=1.0, origin=(0.0, 0.0)):
    """
    A structured triangulation of a square, n cells along each side, with
    each cell split by alternating diagonals. All vertices are inner.
    Vertex (i, j) (column i, row j) has index j * (n + 1) + i.
    """
    ticks = numpy.linspace(0.0, size, n + 1)
    (xx, yy) = numpy.meshgrid(ticks + origin[0], ticks + origin[1])
    vertices = numpy.column_stack([xx.ravel(), yy.ravel()])
    triangles = []
    for j in range(n):
        for i in range(n):
            a = j * (n + 1) + i
            b = a + 1
            d = a + n + 1
            c = d + 1
            if (i + j) % 2 == 0:
                triangles.extend([(a, b, c), (a, c, d)])
            else:
                triangles.extend([(a, b, d), (b, c, d)])
    return structures.Mesh(vertices, triangles,
        numpy.ones(len(vertices), dtype=bool))


def rightTriangleMesh():
    "The single triangle (0,0), (1,0), (0,1)"
    return structures.Mesh([(0, 0), (1, 0), (0, 1)], [(0, 1, 2)],
        numpy.ones(3, dtype=bool))


def uniformPattern(n, rng, T=1, size=1.0, origin=(0.0, 0.0)):
    "n events uniform over a square, with uniform random time steps"
    xy = rng.uniform(0.0, size, (n, 2)) + numpy.asarray(origin)
    t = rng.integers(1, T + 1, n)
    return structures.PointPattern(xy, t, T)


class TempDir:
    """
    Context manager giving a fresh temporary directory, removed
    afterwards
    """
    def __enter__(self):
        self.path = tempfile.mkdtemp(prefix='coxmap_test_')
        return self.path

    def __exit__(self, excType, excVal, tb):
        if os.path.exists(self.path):
            shutil.rmtree(self.path)
