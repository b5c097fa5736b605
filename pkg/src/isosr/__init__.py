"""Isosurface G-buffer super-resolution toolkit.

Renders low-resolution isosurface G-buffers from volumetric scalar
fields and reconstructs 4x super-resolved, ambient-occluded, temporally
coherent frames with a frame-recurrent convolutional network, trained
end to end through a differentiable deferred-shading step.
"""

from .errors import ConfigError, FormatError, IsosrError, ShapeError, TrainingDiverged
from .formats import read_buffer, read_volume, write_buffer, write_volume
from .raycast import (
    Camera,
    FlowField,
    GBuffer,
    HiResFields,
    ambient_occlusion,
    first_hit,
    render_gbuffer,
    render_ground_truth,
    screen_space_flow,
)
from .shading import ShadingParams, shade, shade_arrays, write_png
from .srnet import SRNet, SRNetConfig, TINY_CONFIG
from .volume import (
    MinMaxPyramid,
    ScalarVolume,
    build_pyramid,
    gen_procedural,
    gradient_central,
    interval_excludes,
    sample_trilinear,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "FormatError",
    "IsosrError",
    "ShapeError",
    "TrainingDiverged",
    "Camera",
    "FlowField",
    "GBuffer",
    "HiResFields",
    "MinMaxPyramid",
    "ScalarVolume",
    "SRNet",
    "SRNetConfig",
    "ShadingParams",
    "TINY_CONFIG",
    "ambient_occlusion",
    "build_pyramid",
    "first_hit",
    "gen_procedural",
    "gradient_central",
    "interval_excludes",
    "read_buffer",
    "read_volume",
    "render_gbuffer",
    "render_ground_truth",
    "sample_trilinear",
    "screen_space_flow",
    "shade",
    "shade_arrays",
    "write_buffer",
    "write_png",
    "write_volume",
    "__version__",
]
