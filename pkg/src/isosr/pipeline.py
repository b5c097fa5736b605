"""Frame-recurrent inference: upscale flow, warp the previous estimate,
flatten, run the network, shade.

One pipeline instance owns one recurrent state and processes frames
strictly in order. The state starts all-zero (the warp of a zero state
stays zero under zero flow, so the first frame's flattened recurrent
input is the all-zero tensor).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError
from .inpaint import inpaint_dense
from .raycast import FlowField, GBuffer, HiResFields
from .shading import ShadingParams, shade
from .srnet import SRNet, clamp_ao

UPSCALE = 4
# out-of-bounds warp fill: background defaults (mask, normal, depth, ao)
WARP_FILL = (-1.0, 0.0, 0.0, 1.0, 0.0, 1.0)


@dataclass
class RecurrentState:
    """Previous high-resolution estimate plus the frame counter."""

    prev_estimate: Tensor  # (B, 6, 4H, 4W)
    frame_index: int

    @staticmethod
    def initial(lr_height: int, lr_width: int, batch: int = 1,
                dtype=np.float32) -> "RecurrentState":
        zeros = np.zeros((batch, 6, UPSCALE * lr_height, UPSCALE * lr_width), dtype=dtype)
        return RecurrentState(prev_estimate=ad.tensor(zeros), frame_index=0)


def upscale_flow(flow: np.ndarray) -> np.ndarray:
    """Bilinearly resample a dense (2, H, W) flow to (2, 4H, 4W) and
    convert displacement magnitudes from low-res to high-res pixels."""
    arr = np.asarray(flow, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[0] != 2:
        raise ShapeError(f"expected (2, H, W) flow, got {arr.shape}")
    with ad.no_grad():
        up = ad.bilinear_upsample(ad.tensor(arr[None]), UPSCALE)
    return up.data[0] * float(UPSCALE)


def warp(prev: Tensor, flow_hr: np.ndarray) -> Tensor:
    """Backward-warp the previous 6-channel estimate by the dense
    high-resolution flow; out-of-bounds samples get background fills."""
    return ad.warp_bilinear(prev, flow_hr, fill=np.array(WARP_FILL))


def warp_flatten(state: RecurrentState, flow_lr_dense: np.ndarray | None):
    """The recurrent half of one step: warp the previous estimate and
    flatten it to 96 low-resolution channels. Returns (warped, o_flat).

    Used by both inference and the training unroll; on frame 0 the flow
    is ignored and the zero state passes through unchanged.
    """
    b, _, hh, hw = state.prev_estimate.data.shape
    if state.frame_index == 0 or flow_lr_dense is None:
        flow_hr = np.zeros((2, hh, hw), dtype=np.float32)
    else:
        flow_hr = upscale_flow(flow_lr_dense)
    warped = warp(state.prev_estimate, flow_hr)
    return warped, ad.space_to_depth(warped, block=UPSCALE)


def step(state: RecurrentState, gbuffer: GBuffer, flow: FlowField | None,
         net: SRNet, shading_params: ShadingParams):
    """Process one frame: returns (o_est: HiResFields, color (3,4H,4W),
    new state). Flow inpainting runs only past frame 0; the network's
    AO channel is clamped to [0, 1] for inference."""
    w, h = gbuffer.resolution
    b, _, hh, hw = state.prev_estimate.data.shape
    if (hh, hw) != (UPSCALE * h, UPSCALE * w) or b != 1:
        raise ShapeError(
            f"state resolution {(hh, hw)} does not match input {(UPSCALE * h, UPSCALE * w)}")
    dense = None
    if state.frame_index > 0 and flow is not None:
        dense = inpaint_dense(flow).flow
    with ad.no_grad():
        _, o_flat = warp_flatten(state, dense)
        i_lr = ad.tensor(gbuffer.channels()[None])
        o_est = clamp_ao(net.forward(i_lr, o_flat))
        color = shade(o_est, shading_params)
    new_state = RecurrentState(prev_estimate=o_est.detach(),
                               frame_index=state.frame_index + 1)
    fields = HiResFields.from_channels(o_est.data[0])
    return fields, color.data[0], new_state
