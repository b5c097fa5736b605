"""Interactive streaming service.

One WebSocket session at a time drives the renderer and the recurrent
super-resolution pipeline. Text frames carry JSON control messages;
binary frames carry rendered images with a fixed 16-byte header:

    bytes 0-3   magic "ISFR"
    bytes 4-7   u32 frame id (little-endian, strictly increasing)
    bytes 8-11  u32 id of the command that triggered the frame
    bytes 12-13 u16 width
    bytes 14-15 u16 height

followed by width*height*3 bytes of row-major RGB8 (or a PNG when the
client negotiated {"type": "encoding", "value": "png"}).

The session logic is transport-free (see Session.handle); the FastAPI
app in create_app only moves messages between it and the socket.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from . import autodiff as ad
from .errors import ConfigError, IsosrError
from .pipeline import RecurrentState, step
from .raycast import Camera, render_gbuffer, render_ground_truth, render_hits, screen_space_flow
from .shading import ShadingParams, rgb8, shade_arrays
from .srnet import SRNet
from .volume import ScalarVolume, build_pyramid

FRAME_MAGIC = b"ISFR"
MODES = ("input", "bilinear", "sr", "gt")
GT_SEED = 0x5EED


def pack_frame(frame_id: int, command_id: int, image_hw3: np.ndarray,
               encoding: str = "raw") -> bytes:
    """Header + payload for one rendered image ((H, W, 3) uint8)."""
    h, w = image_hw3.shape[:2]
    header = struct.pack("<4sIIHH", FRAME_MAGIC, frame_id, command_id, w, h)
    if encoding == "png":
        from PIL import Image

        buf = io.BytesIO()
        Image.fromarray(image_hw3, mode="RGB").save(buf, format="PNG")
        return header + buf.getvalue()
    return header + image_hw3.tobytes()


def unpack_frame(data: bytes):
    """Inverse of pack_frame for raw payloads; returns
    (frame_id, command_id, width, height, payload bytes)."""
    magic, frame_id, command_id, w, h = struct.unpack("<4sIIHH", data[:16])
    if magic != FRAME_MAGIC:
        raise ConfigError(f"bad frame magic {magic!r}")
    return frame_id, command_id, w, h, data[16:]


@dataclass
class Session:
    """All mutable state of one interactive viewer connection."""

    net: SRNet
    vol: ScalarVolume
    lr_resolution: tuple[int, int] = (64, 64)
    ao_samples: int = 128
    shading: ShadingParams = field(default_factory=ShadingParams)
    mode: str = "input"
    encoding: str = "raw"

    def __post_init__(self):
        self.pyr = build_pyramid(self.vol)
        self.iso = float(self.vol.default_iso)
        lo, hi = self.vol.value_range()
        self.iso_range = (float(lo), float(hi))
        self.camera: Camera | None = None
        self.prev_sr_camera: Camera | None = None
        self.frame_id = 0
        w, h = self.lr_resolution
        self.state = RecurrentState.initial(h, w)

    # -- protocol ----------------------------------------------------------
    def hello(self) -> dict:
        return {
            "type": "hello",
            "dims": list(self.vol.dims),
            "spacing": list(self.vol.spacing),
            "iso": self.iso,
            "iso_range": list(self.iso_range),
            "resolution": list(self.lr_resolution),
            "upscale": 4,
            "mode": self.mode,
            "modes": list(MODES),
            "encoding": self.encoding,
            "shading": self.shading.to_dict(),
        }

    def reset_recurrence(self):
        w, h = self.lr_resolution
        self.state = RecurrentState.initial(h, w)
        self.prev_sr_camera = None

    def handle(self, raw: str) -> list:
        """Apply one text message; returns replies in send order (dicts
        become JSON text frames, bytes are binary frames). Errors never
        mutate state."""
        try:
            msg = json.loads(raw)
            if not isinstance(msg, dict):
                raise ValueError("message must be a JSON object")
        except ValueError as e:
            return [{"type": "error", "detail": f"malformed message: {e}"}]
        cmd_id = int(msg.get("id", 0))
        mtype = msg.get("type")
        try:
            if mtype == "camera":
                view = np.array(msg["view"], dtype=np.float64).reshape(4, 4)
                proj = np.array(msg["proj"], dtype=np.float64).reshape(4, 4)
                near = float(msg.get("near", 0.05 * self.vol.diagonal))
                far = float(msg.get("far", 3.0 * self.vol.diagonal))
                self.camera = Camera(view, proj, near, far, self.lr_resolution)
                return [self.render_frame(cmd_id)]
            if mtype == "iso":
                value = float(msg["value"])
                lo, hi = self.iso_range
                if not (lo <= value <= hi):
                    return [{"type": "error", "id": cmd_id,
                             "detail": f"iso {value} outside [{lo}, {hi}]"}]
                self.iso = value
                self.reset_recurrence()
                return [self.render_frame(cmd_id)] if self.camera else [
                    {"type": "ack", "id": cmd_id}]
            if mtype == "mode":
                value = msg["value"]
                if value not in MODES:
                    return [{"type": "error", "id": cmd_id,
                             "detail": f"unknown mode {value!r}"}]
                if (value == "sr") != (self.mode == "sr"):
                    self.reset_recurrence()
                self.mode = value
                return [self.render_frame(cmd_id)] if self.camera else [
                    {"type": "ack", "id": cmd_id}]
            if mtype == "config":
                fields = {k: v for k, v in msg.items() if k not in ("type", "id")}
                self.shading = ShadingParams.from_dict(
                    {**self.shading.to_dict(), **fields})
                return [self.render_frame(cmd_id)] if self.camera else [
                    {"type": "ack", "id": cmd_id}]
            if mtype == "encoding":
                value = msg["value"]
                if value not in ("raw", "png"):
                    return [{"type": "error", "id": cmd_id,
                             "detail": f"unknown encoding {value!r}"}]
                self.encoding = value
                return [{"type": "encoding", "id": cmd_id, "value": value}]
            return [{"type": "error", "id": cmd_id,
                     "detail": f"unknown message type {mtype!r}"}]
        except (KeyError, ValueError, TypeError, ConfigError) as e:
            return [{"type": "error", "id": cmd_id, "detail": str(e)}]

    # -- rendering ----------------------------------------------------------
    def render_frame(self, command_id: int) -> bytes:
        if self.camera is None:
            raise IsosrError("no camera set")
        image = self._render_mode()
        self.frame_id += 1
        return pack_frame(self.frame_id, command_id, image, self.encoding)

    def _render_mode(self) -> np.ndarray:
        cam = self.camera
        if self.mode == "input":
            gb = render_gbuffer(self.vol, self.pyr, cam, self.iso)
            chans = np.concatenate([gb.channels(),
                                    np.ones((1,) + gb.mask.shape, dtype=np.float32)])
            return rgb8(shade_arrays(chans, self.shading))
        if self.mode == "bilinear":
            gb = render_gbuffer(self.vol, self.pyr, cam, self.iso)
            with ad.no_grad():
                up = ad.bilinear_upsample(ad.tensor(gb.channels()[None]), 4).data[0]
            chans = np.concatenate([up, np.ones((1,) + up.shape[1:], dtype=np.float32)])
            return rgb8(shade_arrays(chans, self.shading))
        if self.mode == "gt":
            fields = render_ground_truth(self.vol, self.pyr, cam.hires(4), self.iso,
                                         ao_samples=self.ao_samples, seed=GT_SEED)
            return rgb8(shade_arrays(fields.channels(), self.shading))
        # sr: recurrent pipeline step
        hits = render_hits(self.vol, self.pyr, cam, self.iso)
        gb = render_gbuffer(self.vol, self.pyr, cam, self.iso, hits=hits)
        flow = None
        if self.state.frame_index > 0 and self.prev_sr_camera is not None:
            flow = screen_space_flow(hits, cam, self.prev_sr_camera)
        _, color, self.state = step(self.state, gb, flow, self.net, self.shading)
        self.prev_sr_camera = cam
        return rgb8(color)


def create_app(net: SRNet, vol: ScalarVolume, lr_resolution=(64, 64),
               ao_samples: int = 128, static_dir=None):
    """FastAPI app exposing /ws plus the bundled viewer (if present)."""
    app = FastAPI(title="isosr streaming service")
    busy = {"session": None}

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        if busy["session"] is not None:
            await ws.send_text(json.dumps(
                {"type": "error", "detail": "session in use; one client at a time"}))
            await ws.close(code=1013)
            return
        session = Session(net=net, vol=vol, lr_resolution=lr_resolution,
                          ao_samples=ao_samples)
        busy["session"] = session
        try:
            await ws.send_text(json.dumps(session.hello()))
            while True:
                raw = await ws.receive_text()
                for reply in session.handle(raw):
                    if isinstance(reply, bytes):
                        await ws.send_bytes(reply)
                    else:
                        await ws.send_text(json.dumps(reply))
        except WebSocketDisconnect:
            pass
        finally:
            busy["session"] = None

    if static_dir is None:
        from pathlib import Path

        candidate = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        static_dir = candidate if candidate.exists() else None
    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="viewer")
    return app
