"""Figure rendering for the dynamic copula model's CSV outputs."""
from __future__ import annotations

from .render import PANELS, PlotSpec, RenderError, build_figure, render

__version__ = "0.1.0"

__all__ = ["PANELS", "PlotSpec", "RenderError", "build_figure", "render",
           "__version__"]
