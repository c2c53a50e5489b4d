"""Numerical core of caliper: ellipse geometry, masks, annotation recovery,
the segmentation network, phantoms and observer-study statistics."""

__version__ = '0.1.0'
