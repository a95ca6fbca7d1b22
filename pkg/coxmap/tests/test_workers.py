"""
Tests of the thread pool helpers and run monitoring
"""
import json
import threading
import unittest

from coxmap import workers
from coxmap import monitoring


class WorkersTest(unittest.TestCase):
    def test_divide(self):
        parts = workers.divideByThread(list(range(7)), 3)
        self.assertEqual(parts, [[0, 3, 6], [1, 4], [2, 5]])

    def test_orderKept(self):
        items = list(range(50))
        for numthreads in (1, 2, 4, 100):
            results = workers.runByThread(lambda i: i * i, items, numthreads)
            self.assertEqual(results, [i * i for i in items])
        self.assertEqual(workers.runByThread(abs, [], 4), [])

    def test_exceptionRaised(self):
        def failOnFive(i):
            if i == 5:
                raise ValueError("five")
            return i

        with self.assertRaises(ValueError):
            workers.runByThread(failOnFive, range(10), 3)


class MonitoringTest(unittest.TestCase):
    def test_report(self):
        monitors = monitoring.Monitoring()
        monitors.setParam('numthreads', 2)
        monitors.increment('newtonCalls')
        monitors.increment('newtonCalls', 2)
        for val in (3, 1, 7):
            monitors.minMaxNewtonIterations.update(val)
        with monitors.timestamps.ctx('newton'):
            pass
        with monitors.timestamps.ctx('newton'):
            pass

        report = monitors.reportAsDict()
        self.assertEqual(report['counts'], {'newtonCalls': 3})
        self.assertEqual(report['minMaxNewtonIterations'], [1, 7])
        self.assertEqual(report['minMaxObjective'], [None, None])
        self.assertEqual(report['timestamps']['newton']['entries'], 2)
        self.assertGreaterEqual(report['timeSpent']['newton'], 0.0)
        # Must be JSON-able
        json.dumps(report)

    def test_stageFromThreads(self):
        timer = monitoring.StageTimer()

        def work():
            for i in range(20):
                with timer.ctx('grid'):
                    pass

        threads = [threading.Thread(target=work) for i in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        self.assertEqual(timer.names(), ['grid'])
        self.assertEqual(timer.stampsAsDict()['grid']['entries'], 80)

    def test_stampOnError(self):
        timer = monitoring.StageTimer()
        with self.assertRaises(RuntimeError):
            with timer.ctx('fit'):
                raise RuntimeError("failed")
        self.assertEqual(timer.names(), ['fit'])
