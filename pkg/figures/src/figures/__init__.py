"""Figure rendering for acoustopulse simulation outputs (CSV + legacy VTK)."""

__version__ = "0.1.0"

from .render import FIGURE_IDS, render

__all__ = ["FIGURE_IDS", "render", "__version__"]
