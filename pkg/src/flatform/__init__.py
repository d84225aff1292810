"""Flat coordinates for bilinear forms B = g + omega: decide whether constant
coefficients are possible on a box, and build the chart when they are."""

__version__ = "0.1.0"

from .config import DEFAULT, Tolerances
from .forms import BilinearFormField, Chart, ExprChartMap, split
from .curvature import flatness_verdict
from .constructor import (FlatChartResult, UnsupportedCase, construct, darboux_degenerate,
                          darboux_symplectic, flat_chart_symmetric, joint_flat_chart, verify_flat_chart)

__all__ = [
    "DEFAULT", "Tolerances", "BilinearFormField", "Chart", "ExprChartMap", "split",
    "flatness_verdict", "FlatChartResult", "UnsupportedCase", "construct", "darboux_degenerate",
    "darboux_symplectic", "flat_chart_symmetric", "joint_flat_chart", "verify_flat_chart",
]
