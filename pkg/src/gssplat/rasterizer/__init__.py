from .core import (
    FieldGradients,
    RasterConfig,
    RasterState,
    RenderOutput,
    Splat2D,
    project_gaussian,
    rasterize,
    rasterize_backward,
)
from .export import export_render

__all__ = [
    "FieldGradients",
    "RasterConfig",
    "RasterState",
    "RenderOutput",
    "Splat2D",
    "export_render",
    "project_gaussian",
    "rasterize",
    "rasterize_backward",
]
