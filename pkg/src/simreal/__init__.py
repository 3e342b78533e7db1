"""Sim-to-real defect detection workbench: X-ray phantom simulation, domain-adversarial
patch detection, recall-based evaluation and annotation-cost analysis."""

__version__ = "0.1.0"
