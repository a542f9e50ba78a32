"""
Helpers shared by the flowmap test modules.

Small synthetic locations and prepared datasets are built here so that test modules do not need to
import each other.
"""
import os
import unittest

slow_test = unittest.skipUnless(os.environ.get("FLOWMAP_SLOW_TESTS") == "1", "set FLOWMAP_SLOW_TESTS=1 to run")
