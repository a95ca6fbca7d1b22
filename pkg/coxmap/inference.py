"""
Fitting the LGCP by an empirical Bayes Laplace approximation.

The latent vector u = [x, beta] holds the spatiotemporal field at every
(time step, vertex) followed by the fixed effects. Given hyperparameters
theta, the posterior of u is approximated by a Gaussian centred on its
mode, found by Newton iteration, with precision

    H = Qprior + B' W B

where B = [latentA, Z] maps u onto the linear predictor of each
pseudo-data row and W is minus the likelihood Hessian. The Laplace
approximation to the log marginal likelihood, plus the log prior of
theta, is maximised over theta by Nelder-Mead. The posterior of u is
then taken as the Gaussian approximation at that mode.

The hyperparameters are optimised on an unconstrained scale,
theta = (log range, log sd, z) with z = log((1 + phi) / (1 - phi)).
Any of them may be held fixed, and the field terms drop out entirely
for models without a field.
"""
import math

import numpy
from scipy import sparse
from scipy import optimize
from scipy import special
from scipy import stats

from . import structures
from . import meshing
from . import spdefem
from . import stgmrf
from . import factor
from . import likelihood
from . import monitoring
from . import workers


THETA_NAMES = ('log_range', 'log_sd', 'phi_z')
HYPER_NAMES = ('range', 'sd', 'phi')

DFLT_MAX_EVALS = 200
DFLT_RESTARTS = 1
DFLT_XATOL = 1e-2
DFLT_FATOL = 1e-3
DFLT_NEWTON_TOL = 1e-8
DFLT_NEWTON_MAX_ITER = 50
DFLT_HESSIAN_STEP = 0.02
DFLT_INITIAL_STEP = 0.5
DFLT_IC_DRAWS = 1000
DFLT_IC_CHUNK = 100
DFLT_DENSITY_POINTS = 101
# Starting value of the field sd, as a fraction of the prior sd_upper
START_SD_FRACTION = 0.5
MAX_HALVINGS = 30
LINESEARCH_SLACK = 1e-12
HESSIAN_EIG_FLOOR = 1e-8
Z95 = 1.959963984540054
WAIC_VAR_WARN = 0.4
NUM_HERMITE = 40


class OptimizerConfig:
    """
    Settings for the outer (Nelder-Mead) and inner (Newton) optimisation
    """
    def __init__(self, maxEvals=DFLT_MAX_EVALS, restarts=DFLT_RESTARTS,
            xatol=DFLT_XATOL, fatol=DFLT_FATOL, newtonTol=DFLT_NEWTON_TOL,
            newtonMaxIter=DFLT_NEWTON_MAX_ITER,
            maxLatentSize=stgmrf.DFLT_MAX_LATENT_SIZE,
            hessianStep=DFLT_HESSIAN_STEP, initialStep=DFLT_INITIAL_STEP):
        self.maxEvals = int(maxEvals)
        self.restarts = int(restarts)
        self.xatol = float(xatol)
        self.fatol = float(fatol)
        self.newtonTol = float(newtonTol)
        self.newtonMaxIter = int(newtonMaxIter)
        self.maxLatentSize = int(maxLatentSize)
        self.hessianStep = float(hessianStep)
        self.initialStep = float(initialStep)
        if self.maxEvals < 1 or self.newtonMaxIter < 1:
            raise structures.ValidationError("Optimizer evaluation limits "
                "must be positive")
        if self.restarts < 0:
            raise structures.ValidationError("Optimizer restarts must not be "
                "negative")
        if not (self.hessianStep > 0 and self.initialStep > 0):
            raise structures.ValidationError("Optimizer step sizes must be "
                "positive")

    def asDict(self):
        return {'max_evals': self.maxEvals, 'restarts': self.restarts,
            'xatol': self.xatol, 'fatol': self.fatol,
            'newton_tol': self.newtonTol,
            'newton_max_iter': self.newtonMaxIter,
            'max_latent_size': self.maxLatentSize,
            'hessian_step': self.hessianStep,
            'initial_step': self.initialStep}

    @classmethod
    def fromDict(cls, d):
        dflt = cls().asDict()
        dflt.update(d)
        return cls(maxEvals=dflt['max_evals'], restarts=dflt['restarts'],
            xatol=dflt['xatol'], fatol=dflt['fatol'],
            newtonTol=dflt['newton_tol'],
            newtonMaxIter=dflt['newton_max_iter'],
            maxLatentSize=dflt['max_latent_size'],
            hessianStep=dflt['hessian_step'],
            initialStep=dflt['initial_step'])


def phiFromZ(z):
    return math.tanh(z / 2.0)


def zFromPhi(phi):
    return math.log((1.0 + phi) / (1.0 - phi))


def pcPriorParts(range, sd, priors):
    """
    Log densities of the PC priors on the Matern range and sd, for two
    dimensions, as a tuple (logPiRange, logPiSd).

    The range prior is lambda1 range^-2 exp(-lambda1 / range) with
    lambda1 = -log(rangeProb) rangeMedian, so P(range < rangeMedian) is
    rangeProb. The sd prior is exponential with rate
    lambda2 = -log(sdProb) / sdUpper, so P(sd > sdUpper) is sdProb.
    """
    if not (range > 0 and sd > 0):
        raise structures.ValidationError("PC prior needs positive range and "
            "sd, got {} and {}".format(range, sd))
    lam1 = -math.log(priors.rangeProb) * priors.rangeMedian
    lam2 = -math.log(priors.sdProb) / priors.sdUpper
    logPiRange = math.log(lam1) - 2 * math.log(range) - lam1 / range
    logPiSd = math.log(lam2) - lam2 * sd
    return (logPiRange, logPiSd)


def pcPriorLogDensity(range, sd, priors):
    "Joint log density of the PC prior on (range, sd)"
    (logPiRange, logPiSd) = pcPriorParts(range, sd, priors)
    return logPiRange + logPiSd


class LatentModel:
    """
    Everything needed to evaluate the Laplace approximation for one
    model on one dataset: observations, design, finite element matrices
    and priors.

    Parameters
    ----------
    mesh : Mesh
    obs : PseudoData or likelihood.GaussianObservations
    Z : numpy.ndarray (N, p)
        Fixed effect design, aligned with the observation rows
    spec : ModelSpec
    priors : PriorSpec
    optConfig : OptimizerConfig, optional
    covariates : CovariateField, optional
        Kept for evaluating the design at prediction targets

    """
    def __init__(self, mesh, obs, Z, spec, priors, optConfig=None,
            covariates=None, fem=None):
        if optConfig is None:
            optConfig = OptimizerConfig()
        self.mesh = mesh
        self.obs = obs
        self.Z = numpy.asarray(Z, dtype=numpy.float64)
        self.spec = spec
        self.priors = priors
        self.optConfig = optConfig
        self.covariates = covariates
        self.T = obs.T
        self.m = mesh.numVertices
        self.fixedNames = spec.fixedEffectNames
        self.numFixed = self.Z.shape[1]

        if self.numFixed != len(self.fixedNames):
            raise structures.ValidationError("Design has {} columns for {} "
                "fixed effects".format(self.numFixed, len(self.fixedNames)))
        if spec.T != obs.T:
            raise structures.ValidationError("Model has T={} but data has "
                "T={}".format(spec.T, obs.T))

        Zsparse = sparse.csr_matrix(self.Z)
        if spec.field:
            if self.T * self.m > optConfig.maxLatentSize:
                raise structures.ValidationError("Latent field of size {} "
                    "exceeds optimizer.max_latent_size ({})".format(
                    self.T * self.m, optConfig.maxLatentSize))
            if fem is None:
                fem = spdefem.FemMatrices(mesh)
            self.fem = fem
            self.numLatent = self.T * self.m
            self.B = sparse.hstack([obs.latentA, Zsparse], format='csr')
        else:
            self.fem = None
            self.numLatent = 0
            self.B = Zsparse
        self.numU = self.numLatent + self.numFixed

        self.activeNames = []
        if spec.field:
            if spec.fixedRange is None:
                self.activeNames.append('log_range')
            if spec.fixedSd is None:
                self.activeNames.append('log_sd')
            if self.T > 1 and spec.fixedPhi is None:
                self.activeNames.append('phi_z')
        self.startPoint = self.initialLatent()

    def initialLatent(self):
        """
        Starting point for the Newton iteration: zero field, and the
        intercept of a homogeneous Poisson process if there is one
        """
        u = numpy.zeros(self.numU)
        if self.spec.intercept and isinstance(self.obs, structures.PseudoData):
            totalExposure = self.obs.e.sum()
            numEvents = max(self.obs.y.sum(), 0.5)
            u[self.numLatent] = math.log(numEvents / totalExposure)
        return u

    def initialTheta(self):
        "Starting values for the active hyperparameters"
        start = {'log_range': math.log(self.priors.rangeMedian),
            'log_sd': math.log(START_SD_FRACTION * self.priors.sdUpper),
            'phi_z': self.priors.phiMean}
        return numpy.array([start[n] for n in self.activeNames])

    def hyperParams(self, theta):
        """
        HyperParams for the given vector of active hyperparameters, with
        fixed values filled in
        """
        theta = numpy.asarray(theta, dtype=numpy.float64).reshape(-1)
        if len(theta) != len(self.activeNames):
            raise structures.ValidationError("Expected {} hyperparameters, "
                "got {}".format(len(self.activeNames), len(theta)))
        vals = dict(zip(self.activeNames, theta))
        spec = self.spec
        rng = spec.fixedRange
        if 'log_range' in vals:
            rng = math.exp(vals['log_range'])
        sd = spec.fixedSd
        if 'log_sd' in vals:
            sd = math.exp(vals['log_sd'])
        phi = spec.fixedPhi
        if 'phi_z' in vals:
            phi = phiFromZ(vals['phi_z'])
        if phi is None:
            phi = 0.0
        if not spec.field:
            return None
        if not (numpy.isfinite([rng, sd, phi]).all() and abs(phi) < 1):
            raise structures.NumericalError("Hyperparameters out of range: "
                "range={}, sd={}, phi={}".format(rng, sd, phi))
        return structures.HyperParams(rng, sd, phi)

    def logPriorTheta(self, theta):
        """
        Log prior density of the active hyperparameters, on the
        optimisation scale (so including the Jacobians of the log
        transforms)
        """
        hyper = self.hyperParams(theta)
        if hyper is None:
            return 0.0
        (logPiRange, logPiSd) = pcPriorParts(hyper.range, hyper.sd,
            self.priors)
        total = 0.0
        vals = dict(zip(self.activeNames, numpy.asarray(theta).reshape(-1)))
        if 'log_range' in vals:
            total += logPiRange + vals['log_range']
        if 'log_sd' in vals:
            total += logPiSd + vals['log_sd']
        if 'phi_z' in vals:
            total += stats.norm.logpdf(vals['phi_z'], loc=self.priors.phiMean,
                scale=self.priors.phiSd)
        return float(total)

    def priorPrecision(self, hyper):
        """
        Prior precision of u, block diagonal with the spatiotemporal
        precision and the fixed effect precisions. Returns (Q, logdetQ).
        """
        blocks = []
        logdet = 0.0
        if self.spec.field:
            Qs = spdefem.spdePrecision(self.fem, hyper.maternParams())
            spatialChol = factor.SparseCholesky(Qs, "SPDE precision")
            ar = hyper.arParams(self.T)
            blocks.append(stgmrf.stPrecision(Qs, ar,
                self.optConfig.maxLatentSize))
            logdet += stgmrf.stLogDet(spatialChol.logdet(), self.m, ar)
        if self.numFixed > 0:
            prec = 1.0 / self.priors.fixedEffectSd ** 2
            blocks.append(sparse.identity(self.numFixed) * prec)
            logdet += self.numFixed * math.log(prec)
        Q = sparse.block_diag(blocks, format='csc')
        return (Q, logdet)


def makeLatentModel(mesh, pattern, covariates, spec, priors, optConfig=None,
        monitors=None):
    "Build the pseudo-data and design for a point pattern, as a LatentModel"
    monitors = monitoring.ensureMonitors(monitors)
    with monitors.timestamps.ctx('pseudodata'):
        pd = likelihood.buildPseudoData(mesh, pattern)
        Z = likelihood.evaluateCovariates(covariates, mesh, pattern, spec, pd)
    with monitors.timestamps.ctx('assemble'):
        model = LatentModel(mesh, pd, Z, spec, priors, optConfig,
            covariates=covariates)
    monitors.setParam('pseudoDataRows', pd.numRows)
    monitors.setParam('latentSize', model.numU)
    return model


class NewtonResult:
    """
    The mode of the latent posterior for given hyperparameters, and the
    Gaussian approximation there
    """
    def __init__(self, u, eta, hessFactor, Qprior, logdetPrior, loglik,
            iterations, gradNorm, hyper):
        self.u = u
        self.eta = eta
        self.hessFactor = hessFactor
        self.Qprior = Qprior
        self.logdetPrior = logdetPrior
        self.loglik = loglik
        self.iterations = iterations
        self.gradNorm = gradNorm
        self.hyper = hyper


def newtonQuantities(u, model, Qprior):
    "Gradient and negative Hessian of log posterior of u, at u"
    eta = model.B @ u
    (gradL, hessL) = likelihood.loglikGradHess(eta, model.obs)
    grad = model.B.T @ gradL - Qprior @ u
    H = Qprior + model.B.T @ sparse.diags(-hessL) @ model.B
    return (eta, grad, sparse.csc_matrix(H))


def innerNewton(theta, model, u0=None, monitors=None):
    """
    Find the mode of the latent posterior for hyperparameters theta by
    Newton iteration, with step halving to ensure the log posterior
    increases. Stops when the largest component of the full Newton
    step, before any halving, is below the tolerance.

    Parameters
    ----------
    theta : numpy.ndarray
        The active hyperparameters of the model
    model : LatentModel
    u0 : numpy.ndarray, optional
        Starting point. Default is model.startPoint

    Returns
    -------
    result : NewtonResult

    """
    hyper = model.hyperParams(theta)
    (Qprior, logdetPrior) = model.priorPrecision(hyper)
    cfg = model.optConfig
    if u0 is None:
        u0 = model.startPoint
    u = numpy.array(u0, dtype=numpy.float64)

    def logPost(v):
        return (likelihood.loglik(model.B @ v, model.obs) -
            0.5 * v @ (Qprior @ v))

    try:
        fu = logPost(u)
    except structures.NumericalError:
        u = model.initialLatent()
        fu = logPost(u)

    converged = False
    iteration = 0
    while not converged:
        if iteration >= cfg.newtonMaxIter:
            (eta, grad, H) = newtonQuantities(u, model, Qprior)
            msg = ("Newton iteration did not converge in {} iterations, "
                "gradient norm {}").format(iteration, numpy.abs(grad).max())
            raise structures.NumericalError(msg, bestSoFar=u)
        (eta, grad, H) = newtonQuantities(u, model, Qprior)
        hessFactor = factor.SparseCholesky(H, "Newton Hessian")
        step = hessFactor.solve(grad)

        alpha = 1.0
        accepted = False
        halvings = 0
        while not accepted and halvings < MAX_HALVINGS:
            trial = u + alpha * step
            try:
                fTrial = logPost(trial)
            except structures.NumericalError:
                fTrial = -numpy.inf
            if fTrial >= fu - LINESEARCH_SLACK * (1 + abs(fu)):
                accepted = True
            else:
                alpha *= 0.5
                halvings += 1
        if not accepted:
            raise structures.NumericalError("Newton line search failed to "
                "improve the log posterior", bestSoFar=u)
        u = trial
        fu = fTrial
        iteration += 1
        converged = numpy.abs(step).max() < cfg.newtonTol

    (eta, grad, H) = newtonQuantities(u, model, Qprior)
    hessFactor = factor.SparseCholesky(H, "Newton Hessian")
    ll = likelihood.loglik(eta, model.obs)
    if monitors is not None:
        monitors.minMaxNewtonIterations.update(iteration)
        monitors.increment('newtonCalls')
    return NewtonResult(u, eta, hessFactor, Qprior, logdetPrior, ll,
        iteration, float(numpy.abs(grad).max()), hyper)


def laplaceApproximation(theta, model, u0=None, monitors=None):
    """
    Laplace approximation of log p(y | theta) + log p(theta). Returns
    the value and the NewtonResult at the mode.
    """
    nr = innerNewton(theta, model, u0, monitors)
    quad = float(nr.u @ (nr.Qprior @ nr.u))
    value = (nr.loglik - 0.5 * quad + 0.5 * nr.logdetPrior -
        0.5 * nr.hessFactor.logdet() + model.logPriorTheta(theta))
    if not numpy.isfinite(value):
        raise structures.NumericalError("Log marginal likelihood is not "
            "finite at theta={}".format(list(theta)))
    return (value, nr)


def logMarginal(theta, model, u0=None, monitors=None):
    """
    Laplace approximation of the log marginal likelihood of the data,
    plus the log prior of the hyperparameters
    """
    (value, nr) = laplaceApproximation(theta, model, u0, monitors)
    return value


def logMarginalGrid(thetas, model, u0=None, numthreads=1):
    """
    Evaluate logMarginal at each of a list of hyperparameter vectors, in
    parallel. Points where the evaluation fails give -inf.
    """
    def evaluate(theta):
        try:
            value = logMarginal(theta, model, u0)
        except structures.NumericalError:
            value = -numpy.inf
        return value

    return numpy.array(workers.runByThread(evaluate, list(thetas),
        numthreads))


def numericalHessian(func, x0, f0, step, numthreads=1):
    """
    Hessian of func at x0 by central differences, with func evaluated
    at all the required points by logMarginalGrid-style batch function
    func(listOfPoints). f0 is func at x0.
    """
    d = len(x0)
    points = []
    for i in range(d):
        for sign in (1, -1):
            x = x0.copy()
            x[i] += sign * step
            points.append(x)
    for i in range(d):
        for j in range(i + 1, d):
            for (si, sj) in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                x = x0.copy()
                x[i] += si * step
                x[j] += sj * step
                points.append(x)
    vals = func(points)
    if not numpy.isfinite(vals).all():
        raise structures.NumericalError("Log marginal likelihood failed near "
            "the optimum, cannot compute hyperparameter Hessian",
            bestSoFar=x0)

    hess = numpy.zeros((d, d))
    for i in range(d):
        (fp, fm) = (vals[2 * i], vals[2 * i + 1])
        hess[i, i] = (fp - 2 * f0 + fm) / step ** 2
    k = 2 * d
    for i in range(d):
        for j in range(i + 1, d):
            (fpp, fpm, fmp, fmm) = vals[k:k + 4]
            hess[i, j] = hess[j, i] = (fpp - fpm - fmp + fmm) / (4 * step ** 2)
            k += 4
    return hess


def thetaCovariance(negHess):
    """
    Inverse of the negative Hessian of the log marginal. If that is not
    positive definite, its eigenvalues are floored. Returns
    (covariance, clipped).
    """
    if negHess.shape[0] == 0:
        return (numpy.zeros((0, 0)), False)
    (w, V) = numpy.linalg.eigh(0.5 * (negHess + negHess.T))
    clipped = bool(w.min() <= HESSIAN_EIG_FLOOR)
    w = numpy.maximum(w, HESSIAN_EIG_FLOOR)
    return ((V / w) @ V.T, clipped)


class GaussianApproximation:
    """
    Gaussian approximation of the posterior of u = [field, fixed effects]
    at the hyperparameter mode
    """
    def __init__(self, model, theta, newtonResult):
        self.model = model
        self.theta = numpy.asarray(theta, dtype=numpy.float64)
        self.newtonResult = newtonResult
        self.mode = newtonResult.u
        self.hessFactor = newtonResult.hessFactor
        self.etaHat = newtonResult.eta

    def sample(self, numDraws, seed):
        """
        Draws of u from the Gaussian approximation, as (numDraws, n)
        """
        rng = numpy.random.default_rng(seed)
        z = rng.standard_normal((self.model.numU, numDraws))
        dev = self.hessFactor.sampleStandard(z)
        return (self.mode[:, numpy.newaxis] + dev).T

    def marginalSds(self):
        return numpy.sqrt(self.hessFactor.inverseDiagonal())

    def linearCombinationSds(self, rows):
        "Posterior sd of rows @ u, for a sparse matrix of rows"
        var = self.hessFactor.quadFormInverse(rows)
        return numpy.sqrt(numpy.maximum(var, 0.0))


class FitResult:
    """
    The result of fitting one model.

    Attributes
    ----------
    spec : ModelSpec
    priors : PriorSpec
    optConfig : OptimizerConfig
    thetaNames : list of str
        Names of the estimated hyperparameters, a subset of THETA_NAMES
    thetaHat, thetaSd : numpy.ndarray
        Posterior mode and sd of the hyperparameters (optimisation scale)
    thetaCov : numpy.ndarray
    hyper : dict
        Natural scale summaries of range, sd and phi, each a dict of
        mode, mean, q025, q975 (and fixed=True for held values)
    fixedNames : list of str
    fixedMean, fixedSd : numpy.ndarray
    latentMean, latentSd : numpy.ndarray (T, m)
        Posterior mean and sd of the field at each (time, vertex). Empty
        for models without a field
    logMarginal : float
    diagnostics : dict
    ic : ICResult or None
    approx : GaussianApproximation or None
        Not saved with toDict. Use restorePosterior to rebuild it.

    """
    def __init__(self, spec, priors, optConfig, thetaNames, thetaHat,
            thetaSd, thetaCov, hyper, fixedNames, fixedMean, fixedSd,
            latentMean, latentSd, logMarginal, diagnostics, ic=None,
            approx=None, fieldSdMean=None):
        self.spec = spec
        self.priors = priors
        self.optConfig = optConfig
        self.thetaNames = list(thetaNames)
        self.thetaHat = numpy.asarray(thetaHat, dtype=numpy.float64)
        self.thetaSd = numpy.asarray(thetaSd, dtype=numpy.float64)
        self.thetaCov = numpy.asarray(thetaCov, dtype=numpy.float64).reshape(
            (len(self.thetaNames), len(self.thetaNames)))
        self.hyper = hyper
        self.fixedNames = list(fixedNames)
        self.fixedMean = numpy.asarray(fixedMean, dtype=numpy.float64)
        self.fixedSd = numpy.asarray(fixedSd, dtype=numpy.float64)
        self.latentMean = numpy.asarray(latentMean, dtype=numpy.float64)
        self.latentSd = numpy.asarray(latentSd, dtype=numpy.float64)
        self.logMarginal = float(logMarginal)
        self.diagnostics = diagnostics
        self.ic = ic
        self.approx = approx
        if fieldSdMean is None and self.latentSd.size > 0:
            fieldSdMean = float(self.latentSd.mean())
        self.fieldSdMean = fieldSdMean

    def fixedInterval(self, name):
        "95% interval (lower, upper) of the named fixed effect"
        i = self.fixedNames.index(name)
        return (self.fixedMean[i] - Z95 * self.fixedSd[i],
            self.fixedMean[i] + Z95 * self.fixedSd[i])

    def toDict(self):
        d = {
            'model': self.spec.asDict(),
            'priors': self.priors.asDict(),
            'optimizer': self.optConfig.asDict(),
            'theta_names': self.thetaNames,
            'theta_hat': self.thetaHat.tolist(),
            'theta_sd': self.thetaSd.tolist(),
            'theta_cov': self.thetaCov.tolist(),
            'hyperparameters': self.hyper,
            'fixed_effects': [{'name': name, 'mean': float(mean),
                'sd': float(sd), 'q025': float(mean - Z95 * sd),
                'q975': float(mean + Z95 * sd)}
                for (name, mean, sd) in zip(self.fixedNames, self.fixedMean,
                    self.fixedSd)],
            'latent_mean': self.latentMean.tolist(),
            'latent_sd': self.latentSd.tolist(),
            'field_sd_mean': self.fieldSdMean,
            'log_marginal': self.logMarginal,
            'diagnostics': self.diagnostics,
            'information_criteria': None
        }
        if self.ic is not None:
            d['information_criteria'] = self.ic.asDict()
        return d

    @classmethod
    def fromDict(cls, d):
        fixed = d['fixed_effects']
        ic = None
        if d.get('information_criteria') is not None:
            ic = ICResult.fromDict(d['information_criteria'])
        return cls(structures.ModelSpec.fromDict(d['model']),
            structures.PriorSpec.fromDict(d['priors']),
            OptimizerConfig.fromDict(d['optimizer']), d['theta_names'],
            d['theta_hat'], d['theta_sd'], d['theta_cov'],
            d['hyperparameters'], [f['name'] for f in fixed],
            [f['mean'] for f in fixed], [f['sd'] for f in fixed],
            d['latent_mean'], d['latent_sd'], d['log_marginal'],
            d['diagnostics'], ic=ic, fieldSdMean=d.get('field_sd_mean'))


def fit(spec, mesh, pattern, covariates, priors, optConfig=None,
        numthreads=1, monitors=None):
    """
    Fit the model to a point pattern.

    Parameters
    ----------
    spec : ModelSpec
    mesh : Mesh
    pattern : PointPattern
    covariates : CovariateField or None
    priors : PriorSpec
    optConfig : OptimizerConfig, optional
    numthreads : int
        Threads used to evaluate the hyperparameter Hessian
    monitors : Monitoring, optional

    Returns
    -------
    result : FitResult

    """
    monitors = monitoring.ensureMonitors(monitors)
    model = makeLatentModel(mesh, pattern, covariates, spec, priors,
        optConfig, monitors)
    return fitModel(model, numthreads, monitors)


def fitModel(model, numthreads=1, monitors=None):
    """
    Fit an already constructed LatentModel. See fit.
    """
    monitors = monitoring.ensureMonitors(monitors)
    cfg = model.optConfig
    d = len(model.activeNames)
    diagnostics = {'evaluations': 0, 'failed_evaluations': 0,
        'converged': True, 'restarts_used': 0, 'hessian_clipped': False}

    if d == 0:
        thetaHat = numpy.zeros(0)
        with monitors.timestamps.ctx('newton'):
            (value, nr) = laplaceApproximation(thetaHat, model,
                monitors=monitors)
        diagnostics['evaluations'] = 1
        negHess = numpy.zeros((0, 0))
    else:
        with monitors.timestamps.ctx('outer'):
            (thetaHat, value, nr) = outerOptimize(model, diagnostics,
                monitors)
        with monitors.timestamps.ctx('hessian'):
            negHess = -numericalHessian(
                lambda pts: logMarginalGrid(pts, model, nr.u, numthreads),
                thetaHat, value, cfg.hessianStep, numthreads)

    (thetaCov, clipped) = thetaCovariance(negHess)
    diagnostics['hessian_clipped'] = clipped
    thetaSd = numpy.sqrt(numpy.diag(thetaCov))
    diagnostics['newton_iterations'] = nr.iterations
    diagnostics['gradient_norm'] = nr.gradNorm

    approx = GaussianApproximation(model, thetaHat, nr)
    with monitors.timestamps.ctx('marginals'):
        sds = approx.marginalSds()
    monitors.setParam('logMarginal', value)

    nl = model.numLatent
    latentMean = nr.u[:nl].reshape((model.T, model.m)) if nl > 0 else \
        numpy.zeros((0, 0))
    latentSd = sds[:nl].reshape((model.T, model.m)) if nl > 0 else \
        numpy.zeros((0, 0))
    fieldSdMean = None
    if nl > 0:
        fieldSdMean = float(latentSd[:, model.mesh.innerFlag].mean())
    hyper = hyperSummaries(model, thetaHat, thetaCov)
    return FitResult(model.spec, model.priors, cfg, model.activeNames,
        thetaHat, thetaSd, thetaCov, hyper, model.fixedNames, nr.u[nl:],
        sds[nl:], latentMean, latentSd, value, diagnostics, approx=approx,
        fieldSdMean=fieldSdMean)


def outerOptimize(model, diagnostics, monitors):
    """
    Maximise the Laplace log marginal over the active hyperparameters
    with Nelder-Mead, restarting from the best point with a smaller
    simplex. Each inner Newton starts from the mode at the best point
    so far. Returns (thetaHat, logMarginal, NewtonResult).
    """
    cfg = model.optConfig
    best = {'value': -numpy.inf, 'theta': None, 'nr': None}

    def negObjective(theta):
        diagnostics['evaluations'] += 1
        u0 = None
        if best['nr'] is not None:
            u0 = best['nr'].u
        try:
            (value, nr) = laplaceApproximation(theta, model, u0, monitors)
        except structures.NumericalError:
            diagnostics['failed_evaluations'] += 1
            monitors.increment('failedEvaluations')
            return numpy.inf
        monitors.minMaxObjective.update(value)
        if value > best['value']:
            best['value'] = value
            best['theta'] = numpy.array(theta)
            best['nr'] = nr
        return -value

    d = len(model.activeNames)
    x0 = model.initialTheta()
    step = cfg.initialStep
    remaining = cfg.maxEvals
    converged = False
    attempt = 0
    while attempt <= cfg.restarts and remaining > 0:
        simplex = numpy.vstack([x0, x0 + step * numpy.eye(d)])
        res = optimize.minimize(negObjective, x0, method='Nelder-Mead',
            options={'maxfev': remaining, 'xatol': cfg.xatol,
                'fatol': cfg.fatol, 'initial_simplex': simplex})
        remaining -= res.nfev
        converged = converged or bool(res.success)
        if best['theta'] is None:
            break
        x0 = best['theta']
        step *= 0.2
        attempt += 1
    diagnostics['restarts_used'] = max(attempt - 1, 0)
    diagnostics['converged'] = converged

    if best['theta'] is None:
        raise structures.NumericalError("Log marginal likelihood could not be "
            "evaluated at any hyperparameter value")
    if not converged:
        msg = ("Nelder-Mead did not converge within {} evaluations. Best "
            "log marginal {} at theta {}").format(cfg.maxEvals,
            best['value'], best['theta'].tolist())
        raise structures.NumericalError(msg, bestSoFar={
            'theta_names': model.activeNames,
            'theta': best['theta'].tolist(), 'log_marginal': best['value']})
    return (best['theta'], best['value'], best['nr'])


def hermiteMean(func, mean, sd):
    "Expectation of func(X) for X ~ N(mean, sd^2), by Gauss-Hermite"
    (x, w) = numpy.polynomial.hermite_e.hermegauss(NUM_HERMITE)
    return float((w * func(mean + sd * x)).sum() / w.sum())


def hyperSummaries(model, thetaHat, thetaCov):
    """
    Natural scale summaries of range, sd and phi, transformed from the
    Gaussian approximation on the optimisation scale
    """
    spec = model.spec
    if not spec.field:
        return {}
    fixedVals = {'range': spec.fixedRange, 'sd': spec.fixedSd,
        'phi': spec.fixedPhi if spec.fixedPhi is not None else 0.0}
    transforms = {'range': ('log_range', numpy.exp),
        'sd': ('log_sd', numpy.exp),
        'phi': ('phi_z', lambda z: numpy.tanh(numpy.asarray(z) / 2.0))}
    summaries = {}
    for name in HYPER_NAMES:
        (thetaName, trans) = transforms[name]
        if thetaName in model.activeNames:
            i = model.activeNames.index(thetaName)
            (mu, sd) = (thetaHat[i], math.sqrt(thetaCov[i, i]))
            summaries[name] = {'mode': float(trans(mu)),
                'mean': hermiteMean(trans, mu, sd),
                'q025': float(trans(mu - Z95 * sd)),
                'q975': float(trans(mu + Z95 * sd)),
                'fixed': False}
        else:
            val = float(fixedVals[name])
            summaries[name] = {'mode': val, 'mean': val, 'q025': val,
                'q975': val, 'fixed': True}
    return summaries


def restorePosterior(fitResult, mesh, pattern, covariates, monitors=None):
    """
    Rebuild the Gaussian approximation of a saved fit, by running the
    Newton iteration again at the stored hyperparameter mode. Returns a
    GaussianApproximation, also attached to fitResult.approx.
    """
    model = makeLatentModel(mesh, pattern, covariates, fitResult.spec,
        fitResult.priors, fitResult.optConfig, monitors)
    if model.activeNames != fitResult.thetaNames:
        raise structures.ValidationError("Stored fit has hyperparameters {} "
            "but the model has {}".format(fitResult.thetaNames,
            model.activeNames))
    with monitoring.ensureMonitors(monitors).timestamps.ctx('newton'):
        nr = innerNewton(fitResult.thetaHat, model, monitors=monitors)
    fitResult.approx = GaussianApproximation(model, fitResult.thetaHat, nr)
    return fitResult.approx


class ICResult:
    """
    Information criteria, from draws of the Gaussian approximation.
    Deviances use the pseudo-data log likelihood with constants dropped.
    """
    def __init__(self, dic, pD, dHat, dBar, waic, pWaic, lppd, waicSe,
            numHighVariance, numDraws, seed):
        self.dic = dic
        self.pD = pD
        self.dHat = dHat
        self.dBar = dBar
        self.waic = waic
        self.pWaic = pWaic
        self.lppd = lppd
        self.waicSe = waicSe
        self.numHighVariance = numHighVariance
        self.numDraws = numDraws
        self.seed = seed

    def asDict(self):
        return {'dic': self.dic, 'p_d': self.pD, 'd_hat': self.dHat,
            'd_bar': self.dBar, 'waic': self.waic, 'p_waic': self.pWaic,
            'lppd': self.lppd, 'waic_se': self.waicSe,
            'num_high_variance': self.numHighVariance,
            'num_draws': self.numDraws, 'seed': self.seed}

    @classmethod
    def fromDict(cls, d):
        return cls(d['dic'], d['p_d'], d['d_hat'], d['d_bar'], d['waic'],
            d['p_waic'], d['lppd'], d['waic_se'], d['num_high_variance'],
            d['num_draws'], d['seed'])


class DrawSummary:
    """
    Running per-row summaries of pointwise log likelihoods over draws:
    log-sum-exp, mean and sum of squared deviations, plus the sum of the
    total deviance
    """
    def __init__(self, count, lse, mean, m2, devianceSum):
        self.count = count
        self.lse = lse
        self.mean = mean
        self.m2 = m2
        self.devianceSum = devianceSum

    def combine(self, other):
        "Combine two summaries (pairwise update of mean and variance)"
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.count / n)
        m2 = (self.m2 + other.m2 +
            delta * delta * (self.count * other.count / n))
        return DrawSummary(n, numpy.logaddexp(self.lse, other.lse), mean, m2,
            self.devianceSum + other.devianceSum)


def summarizeDraws(approx, numDraws, seedSeq):
    "DrawSummary of numDraws posterior draws"
    draws = approx.sample(numDraws, seedSeq)
    eta = (approx.model.B @ draws.T).T
    ll = likelihood.pointwiseLoglik(eta, approx.model.obs)
    mean = ll.mean(axis=0)
    m2 = ((ll - mean) ** 2).sum(axis=0)
    lse = special.logsumexp(ll, axis=0)
    devianceSum = float((-2 * ll.sum(axis=1)).sum())
    return DrawSummary(numDraws, lse, mean, m2, devianceSum)


def informationCriteria(fitOrApprox, numDraws=DFLT_IC_DRAWS, seed=0,
        numthreads=1, chunkSize=DFLT_IC_CHUNK, monitors=None):
    """
    DIC and WAIC of a fitted model, from draws of its Gaussian posterior
    approximation.

    DIC = D(mode) + 2 pD, with pD = mean deviance - deviance at the mode
    (the Gaussian mean). WAIC = -2 (lppd - pWAIC) over pseudo-data rows,
    with pWAIC the sum of the sample variances (divisor S - 1) of the
    pointwise log likelihoods over the S draws. Draws come in chunks, each with its own seed spawned
    from the given one, so the result is the same for any number of
    threads.

    Parameters
    ----------
    fitOrApprox : FitResult or GaussianApproximation
    numDraws : int
    seed : int
    numthreads : int
    chunkSize : int
    monitors : Monitoring, optional

    Returns
    -------
    ic : ICResult

    """
    monitors = monitoring.ensureMonitors(monitors)
    approx = fitOrApprox
    if isinstance(fitOrApprox, FitResult):
        approx = fitOrApprox.approx
        if approx is None:
            raise structures.ValidationError("Fit has no posterior "
                "approximation; call restorePosterior first")
    if numDraws < 2:
        raise structures.ValidationError("Need at least 2 draws")

    with monitors.timestamps.ctx('ic'):
        chunkSizes = [min(chunkSize, numDraws - start)
            for start in range(0, numDraws, chunkSize)]
        seeds = numpy.random.SeedSequence(seed).spawn(len(chunkSizes))
        summaries = workers.runByThread(
            lambda item: summarizeDraws(approx, item[0], item[1]),
            list(zip(chunkSizes, seeds)), numthreads)
        total = summaries[0]
        for s in summaries[1:]:
            total = total.combine(s)

        S = total.count
        lppdI = total.lse - math.log(S)
        varI = total.m2 / (S - 1)
        lppd = float(lppdI.sum())
        pWaic = float(varI.sum())
        waicI = -2 * (lppdI - varI)
        waic = float(waicI.sum())
        waicSe = float(math.sqrt(len(waicI) * numpy.var(waicI)))
        numHighVariance = int((varI > WAIC_VAR_WARN).sum())

        dHat = -2 * likelihood.loglik(approx.etaHat, approx.model.obs)
        dBar = total.devianceSum / S
        pD = dBar - dHat
        dic = dHat + 2 * pD

    monitors.setParam('icDraws', S)
    result = ICResult(float(dic), float(pD), float(dHat), float(dBar), waic,
        pWaic, lppd, waicSe, numHighVariance, numDraws, seed)
    if isinstance(fitOrApprox, FitResult):
        fitOrApprox.ic = result
    return result


class PredictionResult:
    """
    Posterior of the log intensity at a set of target points.

    Attributes
    ----------
    xy : numpy.ndarray (n, 2)
    times : list of int
    mean, sd : numpy.ndarray (len(times), n)
        Posterior mean and sd of log intensity. NaN at outside targets
    lambdaMean : numpy.ndarray (len(times), n)
        Posterior mean of the intensity, exp(mean + sd^2 / 2)
    exceedance : numpy.ndarray (len(times), n) or None
        P(log intensity > threshold)
    outside : numpy.ndarray (n,) of bool
        True for targets outside the mesh
    threshold : float or None

    """
    def __init__(self, xy, times, mean, sd, lambdaMean, exceedance, outside,
            threshold):
        self.xy = xy
        self.times = times
        self.mean = mean
        self.sd = sd
        self.lambdaMean = lambdaMean
        self.exceedance = exceedance
        self.outside = outside
        self.threshold = threshold


def targetDesign(model, projector):
    "Fixed effect design rows at the targets of a Projector"
    n = projector.matrix.shape[0]
    spec = model.spec
    columns = []
    if spec.intercept:
        columns.append(numpy.ones((n, 1)))
    if len(spec.covariates) > 0:
        vertexVals = model.covariates.vertexColumns(spec.covariates)
        columns.append(projector.matrix @ vertexVals)
    if len(columns) == 0:
        return numpy.zeros((n, 0))
    return numpy.hstack(columns)


def predictIntensity(fitOrApprox, xy, times=None, threshold=None,
        monitors=None):
    """
    Posterior mean and sd of the log intensity at target points, for
    each of the given time steps (default all).

    Targets outside the mesh are flagged in the result, with NaN values.
    """
    monitors = monitoring.ensureMonitors(monitors)
    approx = fitOrApprox
    if isinstance(fitOrApprox, FitResult):
        approx = fitOrApprox.approx
        if approx is None:
            raise structures.ValidationError("Fit has no posterior "
                "approximation; call restorePosterior first")
    model = approx.model
    if times is None:
        times = list(range(1, model.T + 1))
    for t in times:
        if not 1 <= t <= model.T:
            raise structures.ValidationError("Time step {} not in "
                "1..{}".format(t, model.T))
    xy = numpy.asarray(xy, dtype=numpy.float64).reshape((-1, 2))
    n = len(xy)

    with monitors.timestamps.ctx('predict'):
        proj = meshing.project(model.mesh, xy)
        Zt = sparse.csr_matrix(targetDesign(model, proj))
        numT = len(times)
        mean = numpy.zeros((numT, n))
        sd = numpy.zeros((numT, n))
        for (k, t) in enumerate(times):
            if model.numLatent > 0:
                A = proj.matrix.tocoo()
                At = sparse.csr_matrix((A.data, (A.row,
                    A.col + (t - 1) * model.m)), shape=(n, model.numLatent))
                rows = sparse.hstack([At, Zt], format='csr')
            else:
                rows = Zt
            mean[k] = rows @ approx.mode
            sd[k] = approx.linearCombinationSds(rows)
        mean[:, proj.outside] = numpy.nan
        sd[:, proj.outside] = numpy.nan
        with numpy.errstate(over='ignore', invalid='ignore'):
            lambdaMean = numpy.exp(mean + 0.5 * sd ** 2)
        exceedance = None
        if threshold is not None:
            with numpy.errstate(invalid='ignore', divide='ignore'):
                exceedance = stats.norm.sf((threshold - mean) /
                    numpy.where(sd > 0, sd, numpy.nan))
            # A zero sd gives a certain answer
            certain = (sd == 0)
            exceedance[certain] = (mean[certain] > threshold).astype(float)

    monitors.setParam('predictTargets', n)
    return PredictionResult(xy, list(times), mean, sd, lambdaMean,
        exceedance, proj.outside, threshold)


def summaryRows(fitResult):
    """
    Table of posterior summaries: a list of (parameter, mean, sd, q025,
    q975) for the fixed effects, then the hyperparameters on the natural
    scale (sd is omitted, as None, for those)
    """
    rows = []
    for (name, mean, sd) in zip(fitResult.fixedNames, fitResult.fixedMean,
            fitResult.fixedSd):
        rows.append((name, float(mean), float(sd), float(mean - Z95 * sd),
            float(mean + Z95 * sd)))
    for name in HYPER_NAMES:
        if name in fitResult.hyper:
            h = fitResult.hyper[name]
            rows.append((name, h['mean'], None, h['q025'], h['q975']))
    return rows


def marginalDensityTable(fitResult, numPoints=DFLT_DENSITY_POINTS):
    """
    Approximate posterior marginal densities of the fixed effects and the
    estimated hyperparameters (natural scale), on a grid of numPoints
    spanning 4 sd either side of the mode.

    Returns a list of (parameter, value, density) tuples.
    """
    rows = []
    u = numpy.linspace(-4.0, 4.0, numPoints)
    for (name, mean, sd) in zip(fitResult.fixedNames, fitResult.fixedMean,
            fitResult.fixedSd):
        x = mean + sd * u
        dens = stats.norm.pdf(x, loc=mean, scale=sd)
        rows.extend((name, float(xv), float(dv)) for (xv, dv) in zip(x, dens))

    for (i, thetaName) in enumerate(fitResult.thetaNames):
        (mu, sd) = (fitResult.thetaHat[i], fitResult.thetaSd[i])
        theta = mu + sd * u
        thetaDens = stats.norm.pdf(theta, loc=mu, scale=sd)
        if thetaName == 'phi_z':
            name = 'phi'
            x = numpy.tanh(theta / 2.0)
            # dz/dphi = 2 / (1 - phi^2)
            dens = thetaDens * 2.0 / (1.0 - x * x)
        else:
            name = 'range' if thetaName == 'log_range' else 'sd'
            x = numpy.exp(theta)
            dens = thetaDens / x
        rows.extend((name, float(xv), float(dv)) for (xv, dv) in zip(x, dens))
    return rows
