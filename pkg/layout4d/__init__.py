"""
Layout4D
Object-centric 4D LiDAR layouts, range-view projection, sequence warping
and generation metrics.
"""

__version__ = "1.0.0"
__author__ = "Layout4D contributors"
