"""Geometry-aware matching for treatment-effect estimation."""
