"""Static figures from shrinklab artifact trees.

Reads only the documented artifact formats (codebook/points CSVs, training
log CSVs) and renders scatter, histogram, and metric-curve images. Display
only: nothing here recomputes a metric.
"""

from .render import FIGURE_KINDS, FigureSpec, RenderResult, render

__version__ = "0.1.0"
