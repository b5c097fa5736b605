"""Render an isosurface G-buffer and its shaded image.

Generates a procedural metaball field, ray-casts the 0.5 level set into
mask/normal/depth maps, and shades them with the default headlight
Phong material. Writes three PNGs next to this script.
"""
from pathlib import Path

import numpy as np

from isosr.raycast import Camera, render_gbuffer
from isosr.shading import ShadingParams, shade_arrays, write_png
from isosr.volume import build_pyramid, gen_procedural

out_dir = Path(__file__).parent / "out"
out_dir.mkdir(exist_ok=True)

vol = gen_procedural("metaballs", 64, seed=4)
pyr = build_pyramid(vol)
eye = vol.world_center + np.array([0.4, -0.9, 0.35]) * vol.diagonal
cam = Camera.framing(vol, eye=eye, resolution=(256, 256))

gbuffer = render_gbuffer(vol, pyr, cam, vol.default_iso)
print(f"hit pixels: {(gbuffer.mask > 0).sum()} of {gbuffer.mask.size}")

# geometry channels straight from the renderer
write_png(out_dir / "01_normals.png", (gbuffer.normal + 1.0) / 2.0)
write_png(out_dir / "01_depth.png", np.repeat(gbuffer.depth[None], 3, axis=0))

# shaded color: G-buffer channels plus a fully open ambient term
channels = np.concatenate([gbuffer.channels(),
                           np.ones((1,) + gbuffer.mask.shape, dtype=np.float32)])
color = shade_arrays(channels, ShadingParams())
write_png(out_dir / "01_shaded.png", color)
print(f"wrote {out_dir}/01_normals.png, 01_depth.png, 01_shaded.png")
