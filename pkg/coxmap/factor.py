"""
Sparse Cholesky factorization of symmetric positive definite matrices,
with log determinants, solves and sampling.

CHOLMOD (from scikit-sparse) is used when it can be imported. Otherwise
a symmetric-mode SuperLU factorization from scipy is used, with no
pivoting, which gives Q = P' L D L' P. Both paths give the same public
behaviour, although not bitwise the same numbers.
"""
import threading

import numpy
from scipy import sparse
from scipy.sparse import linalg as splinalg

from . import structures

try:
    from sksparse import cholmod
    HAVE_CHOLMOD = True
except ImportError:
    HAVE_CHOLMOD = False


DFLT_CHUNKSIZE = 256
# Relative tolerance for the symmetry check
SYMMETRY_TOL = 1e-10


class SparseCholesky:
    """
    Factorization of a sparse symmetric positive definite matrix Q.

    Raises NumericalError if Q is not positive definite.

    Parameters
    ----------
    Q : scipy.sparse matrix (n, n)
    what : str
        Name of the matrix, used in error messages
    useCholmod : bool, optional
        Force the choice of backend. Default is CHOLMOD if available

    """
    def __init__(self, Q, what="matrix", useCholmod=None):
        Q = sparse.csc_matrix(Q, dtype=numpy.float64)
        (n, n2) = Q.shape
        if n != n2:
            raise structures.ValidationError("{} is not square".format(what))
        if n == 0:
            raise structures.ValidationError("{} is empty".format(what))
        checkSymmetric(Q, what)
        if useCholmod is None:
            useCholmod = HAVE_CHOLMOD
        self.n = n
        self.what = what
        self.usingCholmod = useCholmod
        self.lock = threading.Lock()

        if useCholmod:
            try:
                self.factor = cholmod.cholesky(Q)
            except cholmod.CholmodNotPositiveDefiniteError as e:
                raise structures.NumericalError("{} is not positive "
                    "definite: {}".format(what, e))
            self.logdetVal = float(self.factor.logdet())
        else:
            self.factorSuperLU(Q)

        if not numpy.isfinite(self.logdetVal):
            raise structures.NumericalError("Log determinant of {} is not "
                "finite".format(what))

    def factorSuperLU(self, Q):
        """
        SuperLU in symmetric mode with no pivoting on a positive definite
        matrix factors Pr Q Pc = L U with Pr = Pc and U = D L'
        """
        try:
            lu = splinalg.splu(Q, permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0, options={"SymmetricMode": True})
        except RuntimeError as e:
            raise structures.NumericalError("Factorization of {} "
                "failed: {}".format(self.what, e))
        d = lu.U.diagonal()
        if not numpy.array_equal(lu.perm_r, lu.perm_c) or not (d > 0).all():
            raise structures.NumericalError("{} is not positive "
                "definite".format(self.what))
        self.factor = lu
        self.diagD = d
        self.perm = lu.perm_r
        self.upperL = sparse.csr_matrix(lu.L.T)
        self.logdetVal = float(numpy.log(d).sum())

    def logdet(self):
        "Log determinant of Q"
        return self.logdetVal

    def solve(self, b):
        """
        Solve Q x = b, for a vector or a (n, k) array b
        """
        b = numpy.asarray(b, dtype=numpy.float64)
        with self.lock:
            if self.usingCholmod:
                x = self.factor(b)
            else:
                x = self.factor.solve(b)
        return numpy.asarray(x).reshape(b.shape)

    def sampleStandard(self, z):
        """
        Turn standard normal deviates z, a vector of length n or an (n, k)
        array, into draws with covariance inverse(Q). Each column gives
        one draw.
        """
        z = numpy.asarray(z, dtype=numpy.float64)
        with self.lock:
            if self.usingCholmod:
                y = self.factor.solve_Lt(z, use_LDLt_decomposition=False)
                x = self.factor.apply_Pt(y)
            else:
                if z.ndim == 1:
                    w = z / numpy.sqrt(self.diagD)
                else:
                    w = z / numpy.sqrt(self.diagD)[:, numpy.newaxis]
                y = splinalg.spsolve_triangular(self.upperL, w, lower=False,
                    unit_diagonal=True)
                x = y[self.perm]
        return numpy.asarray(x).reshape(z.shape)

    def inverseColumns(self, columns):
        "Columns of inverse(Q), as an (n, len(columns)) array"
        columns = numpy.asarray(columns, dtype=numpy.int64)
        rhs = numpy.zeros((self.n, len(columns)))
        rhs[columns, numpy.arange(len(columns))] = 1.0
        return self.solve(rhs)

    def inverseDiagonal(self, indexes=None, chunkSize=DFLT_CHUNKSIZE):
        """
        Diagonal elements of inverse(Q), for the given indexes (default
        all). Computed exactly by solving against identity columns, a
        chunk of columns at a time.
        """
        if indexes is None:
            indexes = numpy.arange(self.n)
        indexes = numpy.asarray(indexes, dtype=numpy.int64)
        diag = numpy.zeros(len(indexes))
        for start in range(0, len(indexes), chunkSize):
            cols = indexes[start:start + chunkSize]
            inv = self.inverseColumns(cols)
            diag[start:start + len(cols)] = inv[cols, numpy.arange(len(cols))]
        return diag

    def quadFormInverse(self, A, chunkSize=DFLT_CHUNKSIZE):
        """
        Diagonal of A inverse(Q) A', for a sparse A with n columns. These
        are the variances of the linear combinations A x when x has
        precision Q.
        """
        A = sparse.csr_matrix(A)
        numRows = A.shape[0]
        result = numpy.zeros(numRows)
        for start in range(0, numRows, chunkSize):
            block = A[start:start + chunkSize]
            rhs = block.T.toarray()
            x = self.solve(rhs)
            result[start:start + block.shape[0]] = (rhs * x).sum(axis=0)
        return result


def checkSymmetric(Q, what="matrix"):
    "Raise ValidationError if the sparse matrix Q is not symmetric"
    diff = abs(Q - Q.T)
    scale = abs(Q).max()
    if diff.nnz > 0 and diff.max() > SYMMETRY_TOL * max(scale, 1.0):
        raise structures.ValidationError("{} is not symmetric".format(what))


def isPositiveDefinite(Q):
    "True if Q can be factorized as a positive definite matrix"
    try:
        SparseCholesky(Q)
    except structures.NumericalError:
        return False
    return True
