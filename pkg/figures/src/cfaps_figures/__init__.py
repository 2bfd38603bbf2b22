from .render import FigureError, render, main

__all__ = ["FigureError", "render", "main"]
