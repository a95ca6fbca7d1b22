"""
Run configuration for the coxmap command line.

A configuration is a nested dictionary, read from a TOML (.toml) or JSON
(.json) file and merged over DEFAULT_CONFIG. Individual values can be
overridden on the command line with --set section.key=value, where the
value is parsed as a TOML literal if possible, and is otherwise kept as
a string. So --set model.covariates='["population"]' gives a list, and
--set paths.events=ev.csv gives a string.

Relative paths are taken relative to the directory of the configuration
file. Settings with the value "auto" are derived from the domain when
they are needed.
"""
import copy
import hashlib
import json
import os
import tomllib

from . import structures
from . import geometry
from . import inference
from . import simulate
from . import stgmrf


AUTO = "auto"
# Default inner edge length is the domain diameter over this
DFLT_EDGE_DIVISOR = 40.0
DFLT_OUTER_EDGE_FACTOR = 4.0
DFLT_CELLS_ACROSS = 100

DEFAULT_CONFIG = {
    'paths': {
        'domain': '',
        'roads': '',
        'events': '',
        'facilities': [],
        'rasters': {},
        'mesh': '',
        'covariates': '',
        'outdir': 'coxmap_out'
    },
    'geometry': {
        'buffer_width': 0.0,
        'snap_events': False,
        'allow_lonlat_like': False
    },
    'mesh': {
        'max_edge_inner': AUTO,
        'max_edge_outer': AUTO,
        'extension_width': AUTO,
        'min_angle': 25.0
    },
    'model': {
        'name': 'model',
        'intercept': True,
        'covariates': [],
        'field': True,
        'T': 1
    },
    'variants': {},
    'priors': {
        'range_median': AUTO,
        'range_prob': 0.5,
        'sd_upper': 1.0,
        'sd_prob': 0.01,
        'phi_mean': 0.0,
        'phi_sd': 1.0,
        'fixed_effect_sd': 10.0
    },
    'optimizer': {
        'max_evals': inference.DFLT_MAX_EVALS,
        'restarts': inference.DFLT_RESTARTS,
        'xatol': inference.DFLT_XATOL,
        'fatol': inference.DFLT_FATOL,
        'newton_tol': inference.DFLT_NEWTON_TOL,
        'newton_max_iter': inference.DFLT_NEWTON_MAX_ITER,
        'max_latent_size': stgmrf.DFLT_MAX_LATENT_SIZE,
        'hessian_step': inference.DFLT_HESSIAN_STEP,
        'initial_step': inference.DFLT_INITIAL_STEP
    },
    'ic': {
        'n_draws': inference.DFLT_IC_DRAWS,
        'fits': []
    },
    'predict': {
        'kind': 'grid',
        'cell_size': AUTO,
        'spacing': geometry.DFLT_NETWORK_SPACING,
        'times': []
    },
    'simulate': {
        'beta': {'intercept': -12.0},
        'range': 2500.0,
        'sd': 1.0,
        'phi': 0.0,
        'covariates': [],
        'eval_cells': simulate.DFLT_EVAL_CELLS,
        'max_candidates': simulate.DFLT_MAX_CANDIDATES
    },
    'seed': 0,
    'threads': 1
}

# Keys which may be given although they have no default
OPTIONAL_KEYS = {
    'model': ('fixed_range', 'fixed_sd', 'fixed_phi'),
    'predict': ('exceedance_threshold',),
    'ic': ('seed',)
}
# Sections whose keys are chosen by the user
FREE_SECTIONS = ('variants',)
# Not part of the configuration hash, as results do not depend on it
UNHASHED_KEYS = ('threads',)

MODEL_KEYS = ('intercept', 'covariates', 'field', 'T', 'fixed_range',
    'fixed_sd', 'fixed_phi')


def deepMerge(base, override):
    "Merge the override dictionary into a copy of base, recursively"
    merged = copy.deepcopy(base)
    for (key, val) in override.items():
        if isinstance(val, dict) and isinstance(merged.get(key), dict):
            merged[key] = deepMerge(merged[key], val)
        else:
            merged[key] = copy.deepcopy(val)
    return merged


def parseValue(text):
    "Value of a --set override, as a TOML literal or else a string"
    try:
        return tomllib.loads("v = " + text)['v']
    except tomllib.TOMLDecodeError:
        return text


def parseOverride(setting):
    """
    Split a 'section.key=value' override into (list of keys, value)
    """
    if '=' not in setting:
        raise structures.ValidationError("Override '{}' is not of the form "
            "key=value".format(setting))
    (key, text) = setting.split('=', 1)
    keys = key.strip().split('.')
    if any(k == '' for k in keys):
        raise structures.ValidationError("Bad override key '{}'".format(key))
    return (keys, parseValue(text.strip()))


def applyOverrides(d, overrides):
    d = copy.deepcopy(d)
    for setting in overrides:
        (keys, value) = parseOverride(setting)
        node = d
        for k in keys[:-1]:
            if not isinstance(node.get(k), dict):
                node[k] = {}
            node = node[k]
        node[keys[-1]] = value
    return d


def checkKeys(d):
    "Raise ValidationError for any key not known to coxmap"
    for (section, val) in d.items():
        if section not in DEFAULT_CONFIG:
            raise structures.ValidationError("Unknown configuration "
                "section '{}'".format(section))
        default = DEFAULT_CONFIG[section]
        if section in FREE_SECTIONS or not isinstance(default, dict):
            continue
        if not isinstance(val, dict):
            raise structures.ValidationError("Configuration section '{}' "
                "must be a table".format(section))
        known = set(default) | set(OPTIONAL_KEYS.get(section, ()))
        for key in val:
            if key not in known:
                raise structures.ValidationError("Unknown configuration "
                    "key '{}.{}'".format(section, key))


class RunConfig:
    """
    A resolved run configuration.

    Parameters
    ----------
    d : dict
        The full configuration, already merged over the defaults
    baseDir : str
        Directory against which relative paths are resolved

    """
    def __init__(self, d, baseDir='.'):
        self.d = d
        self.baseDir = baseDir

    def __getitem__(self, section):
        return self.d[section]

    @property
    def seed(self):
        return int(self.d['seed'])

    @property
    def threads(self):
        return int(self.d['threads'])

    @property
    def T(self):
        return int(self.d['model']['T'])

    def configHash(self):
        """
        SHA-256 of the canonical JSON form of the configuration, not
        counting the number of threads
        """
        d = {k: v for (k, v) in self.d.items() if k not in UNHASHED_KEYS}
        text = json.dumps(d, sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(text.encode('utf-8')).hexdigest()

    def resolve(self, path):
        if os.path.isabs(path):
            return path
        return os.path.normpath(os.path.join(self.baseDir, path))

    def path(self, key):
        "Resolved path from the paths section, or None if it is not set"
        val = self.d['paths'][key]
        if val is None or val == '':
            return None
        return self.resolve(val)

    @property
    def outdir(self):
        return self.resolve(self.d['paths']['outdir'])

    def outPath(self, name):
        return os.path.join(self.outdir, name)

    def inputPath(self, key, defaultName):
        """
        The path for an input which an earlier command may have written
        to the output directory
        """
        p = self.path(key)
        if p is None:
            p = self.outPath(defaultName)
        return p

    def facilityPaths(self):
        return [self.resolve(p) for p in self.d['paths']['facilities']]

    def rasterPaths(self):
        "Dictionary of raster covariate paths, by covariate name"
        rasters = self.d['paths']['rasters']
        return {name: self.resolve(rasters[name]) for name in sorted(rasters)}

    def validate(self, required=()):
        """
        Check the settings, and that all referenced input files exist.
        The keys in required are paths which must be given.
        """
        checkKeys(self.d)
        for key in required:
            if self.d['paths'].get(key) in (None, '', []):
                raise structures.ValidationError("paths.{} must be "
                    "given".format(key))
        toCheck = []
        for key in ('domain', 'roads', 'events', 'mesh', 'covariates'):
            p = self.path(key)
            if p is not None:
                toCheck.append(('paths.' + key, p))
        for p in self.facilityPaths():
            toCheck.append(('paths.facilities', p))
        for (name, p) in self.rasterPaths().items():
            toCheck.append(('paths.rasters.' + name, p))
        for (what, p) in toCheck:
            if not os.path.exists(p):
                raise structures.ValidationError("File {} given for {} does "
                    "not exist".format(p, what))
        if self.threads < 1:
            raise structures.ValidationError("threads must be at least 1")
        if self.d['geometry']['snap_events'] and self.path('roads') is None:
            raise structures.ValidationError("geometry.snap_events needs "
                "paths.roads")
        if self.d['predict']['kind'] not in ('grid', 'network'):
            raise structures.ValidationError("predict.kind must be 'grid' "
                "or 'network'")
        for name in self.d['variants']:
            variant = self.d['variants'][name]
            if not isinstance(variant, dict):
                raise structures.ValidationError("Variant '{}' must be a "
                    "table".format(name))
            for key in variant:
                if key not in MODEL_KEYS:
                    raise structures.ValidationError("Unknown key '{}' in "
                        "variant '{}'".format(key, name))
        for name in self.modelNames():
            self.modelSpec(name)
        self.optimizerConfig()

    def autoValue(self, section, key, default):
        val = self.d[section][key]
        if val == AUTO:
            return default()
        try:
            return float(val)
        except (TypeError, ValueError):
            raise structures.ValidationError("{}.{} must be a number or "
                "'{}'".format(section, key, AUTO))

    def meshConfig(self, domain):
        """
        MeshConfig for the given domain. Automatic edge lengths come from
        the domain diameter, the automatic extension width is the prior
        median range.
        """
        diameter = geometry.domainDiameter(domain)
        inner = self.autoValue('mesh', 'max_edge_inner',
            lambda: diameter / DFLT_EDGE_DIVISOR)
        outer = self.autoValue('mesh', 'max_edge_outer',
            lambda: inner * DFLT_OUTER_EDGE_FACTOR)
        ext = self.autoValue('mesh', 'extension_width',
            lambda: self.priorSpec(domain).rangeMedian)
        return structures.MeshConfig(inner, outer, ext,
            float(self.d['mesh']['min_angle']))

    def priorSpec(self, domain):
        "PriorSpec. The automatic median range is half the domain diameter"
        p = self.d['priors']
        rangeMedian = self.autoValue('priors', 'range_median',
            lambda: 0.5 * geometry.domainDiameter(domain))
        return structures.PriorSpec(rangeMedian, sdUpper=p['sd_upper'],
            rangeProb=p['range_prob'], sdProb=p['sd_prob'],
            phiMean=p['phi_mean'], phiSd=p['phi_sd'],
            fixedEffectSd=p['fixed_effect_sd'])

    def modelNames(self):
        "Names of the models to fit: the variants if any, else the model"
        if len(self.d['variants']) > 0:
            return sorted(self.d['variants'])
        return [self.d['model']['name']]

    def modelSpec(self, name=None):
        m = dict(self.d['model'])
        if name is not None and name in self.d['variants']:
            m.update(self.d['variants'][name])
        return structures.ModelSpec(intercept=m['intercept'],
            covariates=m['covariates'], field=m['field'], T=m['T'],
            fixedRange=m.get('fixed_range'), fixedSd=m.get('fixed_sd'),
            fixedPhi=m.get('fixed_phi'))

    def optimizerConfig(self):
        return inference.OptimizerConfig.fromDict(self.d['optimizer'])

    def cellSize(self, domain):
        return self.autoValue('predict', 'cell_size',
            lambda: geometry.domainDiameter(domain) / DFLT_CELLS_ACROSS)

    def predictTimes(self):
        times = self.d['predict']['times']
        if len(times) == 0:
            return None
        return [int(t) for t in times]

    def exceedanceThreshold(self):
        val = self.d['predict'].get('exceedance_threshold')
        return None if val is None else float(val)

    def icSeed(self):
        return int(self.d['ic'].get('seed', self.seed))

    def scenario(self, domain, meshConfig, rasterGrids=None):
        """
        SimScenario from the simulate section, with the number of time
        steps of the model section. Raster covariates name a raster in
        paths.rasters.
        """
        s = self.d['simulate']
        rasterGrids = rasterGrids or {}
        gens = []
        for c in s['covariates']:
            grid = None
            if c.get('kind') == 'raster':
                rasterName = c.get('raster', c.get('name'))
                if rasterName not in rasterGrids:
                    raise structures.ValidationError("Simulated covariate "
                        "'{}' needs raster '{}' in paths.rasters".format(
                        c.get('name'), rasterName))
                grid = rasterGrids[rasterName]
            gens.append(simulate.CovariateGenerator.fromDict(c, grid))
        return simulate.SimScenario(domain, meshConfig, s['beta'],
            range=s['range'], sd=s['sd'], phi=s['phi'], T=self.T,
            covariates=gens, seed=self.seed, evalCells=s['eval_cells'],
            maxCandidates=s['max_candidates'])


def loadConfig(filename=None, overrides=()):
    """
    Load a RunConfig from a TOML or JSON file (or just the defaults, if
    filename is None), applying the --set overrides
    """
    d = {}
    baseDir = '.'
    if filename is not None:
        baseDir = os.path.dirname(os.path.abspath(filename))
        try:
            if str(filename).endswith('.json'):
                with open(filename) as f:
                    d = json.load(f)
            else:
                with open(filename, 'rb') as f:
                    d = tomllib.load(f)
        except OSError as e:
            raise structures.ValidationError("Cannot read configuration "
                "{}: {}".format(filename, e))
        except (tomllib.TOMLDecodeError, ValueError) as e:
            raise structures.ValidationError("Bad configuration file "
                "{}: {}".format(filename, e))
    d = applyOverrides(d, overrides)
    checkKeys(d)
    return RunConfig(deepMerge(DEFAULT_CONFIG, d), baseDir)
