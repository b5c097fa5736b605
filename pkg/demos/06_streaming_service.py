"""Drive the streaming service protocol without a browser.

Opens an in-process client against the WebSocket app, replays a small
command script (camera orbit, mode switches, an iso change), and prints
the frames that come back. The same app serves the browser viewer:

    isosr serve --ckpt net.isck --vol volume.isvol --port 8650
    # then open http://127.0.0.1:8650/
"""
import json

import numpy as np
from starlette.testclient import TestClient

from isosr.raycast import Camera
from isosr.service import create_app, unpack_frame
from isosr.srnet import SRNet, TINY_CONFIG
from isosr.volume import gen_procedural

vol = gen_procedural("csg", 32, seed=2)
net = SRNet.build(TINY_CONFIG, seed=0)
app = create_app(net, vol, lr_resolution=(32, 32), ao_samples=16, static_dir=None)


def camera_message(cmd_id, angle):
    eye = vol.world_center + np.array(
        [40 * np.sin(angle), -40 * np.cos(angle), 12.0])
    return json.dumps({
        "type": "camera", "id": cmd_id,
        "view": Camera.look_at(eye, vol.world_center).ravel().tolist(),
        "proj": Camera.perspective(45, 1.0, 2.0, 160.0).ravel().tolist(),
        "near": 2.0, "far": 160.0,
    })


with TestClient(app) as client:
    with client.websocket_connect("/ws") as ws:
        hello = json.loads(ws.receive_text())
        print(f"hello: volume {hello['dims']}, iso range {hello['iso_range']}, "
              f"modes {hello['modes']}")

        script = [
            camera_message(1, 0.0),
            json.dumps({"type": "mode", "id": 2, "value": "sr"}),
            camera_message(3, 0.05),
            camera_message(4, 0.10),
            json.dumps({"type": "iso", "id": 5, "value": hello["iso"] + 0.05}),
            json.dumps({"type": "mode", "id": 6, "value": "gt"}),
        ]
        for msg in script:
            ws.send_text(msg)
            frame_id, cmd_id, w, h, payload = unpack_frame(ws.receive_bytes())
            print(f"frame {frame_id} (command {cmd_id}): {w}x{h}, "
                  f"{len(payload)} payload bytes")
print("protocol round-trip complete")
