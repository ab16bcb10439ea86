"""
Granulite - stockpile surface reconstruction, aggregate segmentation and
particle morphometrics.
"""
__version__ = "0.1.1"
