"""Frame-recurrent inference along an orbit.

Runs the full per-frame loop (inpaint flow, upscale, warp the previous
estimate, flatten, network, shade) over a short camera orbit and writes
the 4x-upscaled color frames plus the bilinear baseline for comparison.
Uses an untrained network by default; point CKPT at a trained
checkpoint (see demo 04 or the CLI) for real output.
"""
import os
from pathlib import Path

import numpy as np

from isosr import autodiff as ad
from isosr.dataset import orbit_cameras
from isosr.pipeline import RecurrentState, step
from isosr.raycast import render_gbuffer, render_hits, screen_space_flow
from isosr.shading import ShadingParams, shade_arrays, write_png
from isosr.srnet import SRNet, TINY_CONFIG
from isosr.volume import build_pyramid, gen_procedural

CKPT = os.environ.get("CKPT")

out_dir = Path(__file__).parent / "out"
out_dir.mkdir(exist_ok=True)

vol = gen_procedural("metaballs", 64, seed=4)
pyr = build_pyramid(vol)
net = SRNet.load(CKPT) if CKPT else SRNet.build(TINY_CONFIG, seed=0)
print("network:", "trained checkpoint" if CKPT else "untrained (set CKPT=... for a real one)")

res = (64, 64)
cams = orbit_cameras(vol, 6, np.random.default_rng(2), res)
shading = ShadingParams()
state = RecurrentState.initial(res[1], res[0])
for t, cam in enumerate(cams):
    hits = render_hits(vol, pyr, cam, vol.default_iso)
    gbuffer = render_gbuffer(vol, pyr, cam, vol.default_iso, hits=hits)
    flow = screen_space_flow(hits, cam, cams[t - 1]) if t > 0 else None
    fields, color, state = step(state, gbuffer, flow, net, shading)
    write_png(out_dir / f"05_sr_{t}.png", color)

    with ad.no_grad():
        up = ad.bilinear_upsample(ad.tensor(gbuffer.channels()[None]), 4).data[0]
    baseline = np.concatenate([up, np.ones((1,) + up.shape[1:], dtype=np.float32)])
    write_png(out_dir / f"05_bilinear_{t}.png", shade_arrays(baseline, shading))
    print(f"frame {t}: recurrent state at index {state.frame_index}")
print(f"wrote frame pairs to {out_dir}/05_sr_*.png and 05_bilinear_*.png")
