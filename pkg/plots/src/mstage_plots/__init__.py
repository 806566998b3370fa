"""Figure rendering for multistage-test evaluation CSVs."""

from .render import FigureSpec, SchemaError, render

__all__ = ["FigureSpec", "SchemaError", "render"]
