"""
Finite element matrices for piecewise linear basis functions on a
triangular mesh, and the sparse precision matrix of a Matern field
built from them (the SPDE construction with alpha = 2).

The field is the solution of (kappa^2 - Laplacian)(tau x) = white noise.
With linear elements and a lumped (diagonal) mass matrix Ct this gives
the precision

    Q = tau^2 (kappa^4 Ct + 2 kappa^2 G + G Ct^-1 G)

where G is the stiffness matrix. The marginal variance of the field is
sigma^2 = Gamma(nu) / (Gamma(nu + 1) 4 pi kappa^(2 nu) tau^2), in two
dimensions.
"""
import math

import numpy
from scipy import sparse
from scipy import special
from scipy import io as scipyio

from . import structures
from . import factor


def maternCorrelation(r, params):
    """
    Matern correlation at distance r (scalar or array), for the given
    MaternParams.

        C(r) = (kappa r)^nu K_nu(kappa r) / (2^(nu - 1) Gamma(nu))

    with C(0) = 1.
    """
    r = numpy.asarray(r, dtype=numpy.float64)
    if (r < 0).any():
        raise structures.ValidationError("Distance must not be negative")
    nu = params.nu
    x = params.kappa * r
    xSafe = numpy.where(x > 0, x, 1.0)
    with numpy.errstate(over='ignore', under='ignore'):
        corr = (xSafe ** nu * special.kv(nu, xSafe) /
            (2 ** (nu - 1) * special.gamma(nu)))
    corr = numpy.where(x > 0, corr, 1.0)
    # K_nu underflows to zero at large distances
    corr = numpy.where(numpy.isfinite(corr), corr, 0.0)
    if corr.ndim == 0:
        corr = float(corr)
    return corr


def kappaTauFromRangeSd(range, sd, nu=1.0):
    "Return (kappa, tau) for the given range and standard deviation"
    p = structures.MaternParams(range, sd, nu)
    return (p.kappa, p.tau)


def rangeSdFromKappaTau(kappa, tau, nu=1.0):
    "Inverse of kappaTauFromRangeSd. Returns (range, sd)"
    if not (kappa > 0 and tau > 0):
        raise structures.ValidationError("kappa and tau must be positive")
    rng = math.sqrt(8 * nu) / kappa
    var = (math.gamma(nu) / (math.gamma(nu + 1) * 4 * math.pi *
        kappa ** (2 * nu) * tau ** 2))
    return (rng, math.sqrt(var))


def checkTriangles(mesh):
    areas = mesh.signedAreas
    if not (areas > 0).all():
        bad = numpy.where(~(areas > 0))[0]
        raise structures.ValidationError("Degenerate or inverted triangles: "
            "{}".format(bad[:20].tolist()))
    return areas


def assembleMass(mesh):
    """
    Mass matrix of the linear basis functions, C[j, k] = integral of
    psi_j psi_k. On each triangle of area A the local matrix is
    A/12 * [[2, 1, 1], [1, 2, 1], [1, 1, 2]].

    Returns
    -------
    C : scipy.sparse.csr_matrix (m, m)
    Clumped : scipy.sparse.dia_matrix (m, m)
        Diagonal of the row sums of C, equal to the dual areas of the
        vertices

    """
    areas = checkTriangles(mesh)
    local = numpy.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]) / 12.0
    vals = areas[:, numpy.newaxis, numpy.newaxis] * local
    C = assembleLocal(mesh, vals)
    lumped = numpy.asarray(C.sum(axis=1)).ravel()
    return (C, sparse.diags(lumped))


def assembleStiffness(mesh):
    """
    Stiffness matrix G[j, k] = integral of grad(psi_j) . grad(psi_k).
    On a triangle of area A, with e_i the edge vector opposite local
    vertex i, the local entry is e_i . e_j / (4 A).
    """
    areas = checkTriangles(mesh)
    p = mesh.vertices[mesh.triangles]
    edges = numpy.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2],
        p[:, 1] - p[:, 0]], axis=1)
    vals = (numpy.einsum('kid,kjd->kij', edges, edges) /
        (4 * areas)[:, numpy.newaxis, numpy.newaxis])
    return assembleLocal(mesh, vals)


def assembleLocal(mesh, vals):
    """
    Sum the local (k, 3, 3) triangle matrices into a global sparse
    matrix. Duplicate entries are summed in triangle order.
    """
    tri = mesh.triangles
    rows = numpy.repeat(tri, 3, axis=1).ravel()
    cols = numpy.tile(tri, (1, 3)).ravel()
    m = mesh.numVertices
    M = sparse.coo_matrix((vals.ravel(), (rows, cols)), shape=(m, m))
    return M.tocsr()


class FemMatrices:
    """
    The finite element matrices of one mesh, which do not depend on the
    field parameters. Assemble once, then build precisions for many
    parameter values.

    Attributes
    ----------
    C : consistent mass matrix
    Ct : lumped mass matrix (diagonal)
    G : stiffness matrix
    G2 : G Ct^-1 G

    """
    def __init__(self, mesh):
        (self.C, self.Ct) = assembleMass(mesh)
        self.G = assembleStiffness(mesh)
        lumped = self.Ct.diagonal()
        self.G2 = (self.G @ sparse.diags(1.0 / lumped) @ self.G).tocsr()
        self.numVertices = mesh.numVertices


def spdePrecision(mesh, params, checkPD=False):
    """
    Sparse precision matrix of the Matern field on the mesh.

    Parameters
    ----------
    mesh : Mesh or FemMatrices
    params : MaternParams
        Must have nu = 1
    checkPD : bool
        If True, factorize the result and raise NumericalError if it is
        not positive definite

    Returns
    -------
    Q : scipy.sparse.csc_matrix (m, m)

    """
    if params.nu != 1:
        raise structures.ValidationError("SPDE precision only available for "
            "nu = 1, not {}".format(params.nu))
    if isinstance(mesh, FemMatrices):
        fem = mesh
    else:
        fem = FemMatrices(mesh)
    kappa2 = params.kappa ** 2
    tau2 = params.tau ** 2
    Q = tau2 * (kappa2 * kappa2 * fem.Ct + 2 * kappa2 * fem.G + fem.G2)
    # G Ct^-1 G is only symmetric up to rounding
    Q = sparse.csc_matrix(0.5 * (Q + Q.T))
    if checkPD:
        factor.SparseCholesky(Q, "SPDE precision")
    return Q


def dumpMatrixMarket(filename, Q, comment=""):
    "Write a sparse symmetric matrix to a Matrix Market coordinate file"
    scipyio.mmwrite(filename, sparse.coo_matrix(Q), comment=comment,
        symmetry='symmetric')
