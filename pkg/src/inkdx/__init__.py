"""Handwriting screening pipeline: ink rendering, image prep, subject-disjoint CV, transfer matrices."""

__version__ = "0.1.0"
