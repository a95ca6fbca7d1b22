"""
Routine tests of the package. Run them all with the test_coxmap command,
or with "python -m unittest discover coxmap.tests".

Set the environment variable COXMAP_LONGTESTS to also run the long
Monte Carlo checks (parameter recovery over many replicates, and the
full road network pipeline).
"""
import os
import unittest


LONGTESTS = os.getenv('COXMAP_LONGTESTS') is not None


def mainCmd():
    loader = unittest.TestLoader()
    suite = loader.discover(os.path.dirname(os.path.abspath(__file__)),
        top_level_dir=os.path.dirname(os.path.dirname(os.path.dirname(
        os.path.abspath(__file__)))))
    unittest.TextTestRunner(verbosity=2).run(suite)


if __name__ == "__main__":
    mainCmd()
