"""
Classes for monitoring various things in coxmap. Nothing in here
affects results, and nothing in here is written into result files.
"""
import time
import threading
import contextlib


class Monitoring:
    def __init__(self):
        self.minMaxNewtonIterations = MinMax()
        self.minMaxObjective = MinMax()
        self.timestamps = StageTimer()
        self.counts = {}
        self.params = {}

    def setParam(self, name, value):
        self.params[name] = value

    def increment(self, name, n=1):
        self.counts[name] = self.counts.get(name, 0) + n

    def reportAsDict(self):
        """
        Return a dictionary of important information, suitable for
        making into JSON.
        """
        d = {}
        d['minMaxNewtonIterations'] = self.minMaxNewtonIterations.minMax()
        d['minMaxObjective'] = self.minMaxObjective.minMax()
        d['counts'] = self.counts
        d['timestamps'] = self.timestamps.stampsAsDict()
        d['timeSpent'] = {name: self.timestamps.timeSpent(name)
            for name in self.timestamps.names()}
        d['params'] = self.params
        return d


class MinMax:
    def __init__(self):
        self.maxval = None
        self.minval = None

    def update(self, val):
        """
        Update max/min vals for given val
        """
        if self.maxval is None or val > self.maxval:
            self.maxval = val
        if self.minval is None or val < self.minval:
            self.minval = val

    def minMax(self):
        "Return list of [minval, maxval]"
        return [self.minval, self.maxval]


class StageTimer:
    """
    Wall clock time spent in each named stage of a run (mesh, newton,
    outer, ic, ...). A stage may be entered many times, possibly from
    several threads at once. For each stage we keep the first start,
    the last end, the number of entries and the total time inside.
    """
    def __init__(self):
        self.first = {}
        self.last = {}
        self.total = {}
        self.entries = {}
        self.lock = threading.Lock()

    @contextlib.contextmanager
    def ctx(self, name):
        """
        Allow use of with statements for start/end timing
        """
        startTime = time.time()
        try:
            yield
        finally:
            endTime = time.time()
            self.record(name, startTime, endTime)

    def record(self, name, startTime, endTime):
        with self.lock:
            if name not in self.first:
                self.first[name] = startTime
                self.total[name] = 0.0
                self.entries[name] = 0
            self.last[name] = endTime
            self.total[name] += endTime - startTime
            self.entries[name] += 1

    def names(self):
        "Sorted list of all stage names"
        return sorted(self.first)

    def timeSpent(self, name):
        "Total seconds inside the named stage, summed over entries"
        return round(self.total.get(name, 0.0), 2)

    def stampsAsDict(self):
        return {name: {'start': self.first[name], 'end': self.last[name],
            'entries': self.entries[name]} for name in self.names()}


def ensureMonitors(monitors):
    "Return the given Monitoring object, or a fresh one if it is None"
    if monitors is None:
        monitors = Monitoring()
    return monitors
