/**
 * Browser glue: wires the WebSocket, canvas, and controls to the state
 * machine. Frames are blitted exactly as received (no client-side
 * shading); the canvas is resized to the payload dimensions.
 */
import { applyDrag, applyZoom, OrbitState, perspective, viewMatrix } from "./camera.js";
import {
  cameraMessage,
  HelloMessage,
  isoMessage,
  modeMessage,
  parseFrame,
  rgbToRgba,
} from "./protocol.js";
import { Coalescer } from "./throttle.js";
import { ViewerState } from "./viewer.js";

const canvas = document.getElementById("screen") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const statusEl = document.getElementById("status")!;
const latencyEl = document.getElementById("latency")!;
const frameEl = document.getElementById("frame-id")!;
const isoSlider = document.getElementById("iso") as HTMLInputElement;
const isoLabel = document.getElementById("iso-value")!;
const modeSelect = document.getElementById("mode") as HTMLSelectElement;
const retryBtn = document.getElementById("retry") as HTMLButtonElement;

const state = new ViewerState();
let orbit: OrbitState = { azimuth: 0.6, elevation: 0.35, distance: 1, target: [0, 0, 0] };
let diagonal = 1;
let ws: WebSocket | null = null;

function setStatus(text: string, cls: string): void {
  statusEl.textContent = text;
  statusEl.className = cls;
  retryBtn.style.display = cls === "err" ? "inline-block" : "none";
}

function sendRaw(text: string): void {
  if (ws && ws.readyState === WebSocket.OPEN) {
    ws.send(text);
  }
}

const cameraSender = new Coalescer<string>(sendRaw, 30);
const isoSender = new Coalescer<string>(sendRaw, 30);

function sendCamera(): void {
  const id = state.issueCommand();
  if (id === null) {
    return;
  }
  const view = viewMatrix(orbit);
  const proj = perspective(45, 1, 0.05 * diagonal, 4 * diagonal);
  cameraSender.push(cameraMessage(id, view, proj, 0.05 * diagonal, 4 * diagonal));
}

function onHello(hello: HelloMessage): void {
  state.onHello(hello);
  setStatus("connected", "ok");
  const [dx, dy, dz] = hello.dims;
  const [sx, sy, sz] = hello.spacing;
  const ext: [number, number, number] = [(dx - 1) * sx, (dy - 1) * sy, (dz - 1) * sz];
  diagonal = Math.hypot(...ext);
  orbit = {
    azimuth: 0.6,
    elevation: 0.35,
    distance: 1.7 * diagonal,
    target: [ext[0] / 2, ext[1] / 2, ext[2] / 2],
  };
  const [lo, hi] = hello.iso_range;
  isoSlider.min = String(lo);
  isoSlider.max = String(hi);
  isoSlider.step = String((hi - lo) / 200);
  isoSlider.value = String(hello.iso);
  isoLabel.textContent = hello.iso.toFixed(3);
  modeSelect.innerHTML = hello.modes
    .map((m) => `<option value="${m}"${m === hello.mode ? " selected" : ""}>${m}</option>`)
    .join("");
  sendCamera();
}

function blit(payload: Uint8Array, width: number, height: number): void {
  canvas.width = width;
  canvas.height = height;
  const image = new ImageData(rgbToRgba(payload, width, height), width, height);
  ctx.putImageData(image, 0, 0);
}

function connect(): void {
  setStatus("connecting...", "warn");
  const proto = location.protocol === "https:" ? "wss" : "ws";
  ws = new WebSocket(`${proto}://${location.host}/ws`);
  ws.binaryType = "arraybuffer";
  state.onOpen();
  ws.onmessage = (ev) => {
    if (typeof ev.data === "string") {
      const msg = JSON.parse(ev.data);
      if (msg.type === "hello") {
        onHello(msg as HelloMessage);
      } else if (msg.type === "error") {
        setStatus(`error: ${msg.detail}`, "warn");
      }
      return;
    }
    const shown = state.onFrame(parseFrame(ev.data as ArrayBuffer));
    if (shown) {
      blit(shown.frame.payload, shown.frame.width, shown.frame.height);
      frameEl.textContent = String(shown.frame.frameId);
      if (shown.latencyMs !== null) {
        latencyEl.textContent = `${shown.latencyMs.toFixed(0)} ms`;
      }
    }
  };
  ws.onclose = () => {
    state.onDisconnect();
    setStatus("disconnected", "err");
  };
  ws.onerror = () => {
    state.onDisconnect();
    setStatus("disconnected", "err");
  };
}

let dragging = false;
let lastX = 0;
let lastY = 0;
canvas.addEventListener("mousedown", (e) => {
  dragging = true;
  lastX = e.clientX;
  lastY = e.clientY;
});
window.addEventListener("mouseup", () => {
  dragging = false;
});
window.addEventListener("mousemove", (e) => {
  if (!dragging) {
    return;
  }
  orbit = applyDrag(orbit, e.clientX - lastX, e.clientY - lastY);
  lastX = e.clientX;
  lastY = e.clientY;
  sendCamera();
});
canvas.addEventListener("wheel", (e) => {
  e.preventDefault();
  orbit = applyZoom(orbit, e.deltaY, 0.3 * diagonal, 5 * diagonal);
  sendCamera();
});
isoSlider.addEventListener("input", () => {
  isoLabel.textContent = Number(isoSlider.value).toFixed(3);
});
isoSlider.addEventListener("change", () => {
  const id = state.issueCommand();
  if (id !== null) {
    isoSender.push(isoMessage(id, Number(isoSlider.value)));
    isoSender.flush(); // slider release sends exactly one message
  }
});
modeSelect.addEventListener("change", () => {
  const id = state.issueCommand();
  if (id !== null) {
    sendRaw(modeMessage(id, modeSelect.value));
  }
});
retryBtn.addEventListener("click", connect);

connect();
