"""
Dense water flow intensity prediction for catchment areas.
"""

__version__ = "0.4.0"
