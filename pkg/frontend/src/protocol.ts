/**
 * Wire protocol of the streaming service.
 *
 * Text frames are JSON control messages. Binary frames carry one
 * rendered image: a 16-byte little-endian header (magic "ISFR", u32
 * frame id, u32 command id, u16 width, u16 height) followed by
 * width*height*3 bytes of row-major RGB8 (or a PNG when negotiated).
 */

export const FRAME_MAGIC = 0x52465349; // "ISFR" read as little-endian u32

export interface HelloMessage {
  type: "hello";
  dims: [number, number, number];
  spacing: [number, number, number];
  iso: number;
  iso_range: [number, number];
  resolution: [number, number];
  upscale: number;
  mode: string;
  modes: string[];
  encoding: string;
  shading: Record<string, unknown>;
}

export interface ErrorMessage {
  type: "error";
  id?: number;
  detail: string;
}

export type ServerMessage = HelloMessage | ErrorMessage | { type: string; [k: string]: unknown };

export interface Frame {
  frameId: number;
  commandId: number;
  width: number;
  height: number;
  /** RGB8 payload, 3 bytes per pixel, row-major (or PNG bytes). */
  payload: Uint8Array;
}

export function parseFrame(buffer: ArrayBuffer): Frame {
  if (buffer.byteLength < 16) {
    throw new Error(`frame too short: ${buffer.byteLength} bytes`);
  }
  const view = new DataView(buffer);
  const magic = view.getUint32(0, true);
  if (magic !== FRAME_MAGIC) {
    throw new Error(`bad frame magic 0x${magic.toString(16)}`);
  }
  return {
    frameId: view.getUint32(4, true),
    commandId: view.getUint32(8, true),
    width: view.getUint16(12, true),
    height: view.getUint16(14, true),
    payload: new Uint8Array(buffer, 16),
  };
}

/** Build a binary frame (used by tests to round-trip the layout). */
export function packFrame(frame: Frame): ArrayBuffer {
  const out = new ArrayBuffer(16 + frame.payload.length);
  const view = new DataView(out);
  view.setUint32(0, FRAME_MAGIC, true);
  view.setUint32(4, frame.frameId, true);
  view.setUint32(8, frame.commandId, true);
  view.setUint16(12, frame.width, true);
  view.setUint16(14, frame.height, true);
  new Uint8Array(out, 16).set(frame.payload);
  return out;
}

/** Expand an RGB8 payload to RGBA for canvas ImageData. */
export function rgbToRgba(rgb: Uint8Array, width: number,
                          height: number): Uint8ClampedArray<ArrayBuffer> {
  const n = width * height;
  if (rgb.length < n * 3) {
    throw new Error(`payload has ${rgb.length} bytes, need ${n * 3}`);
  }
  const rgba = new Uint8ClampedArray(new ArrayBuffer(n * 4));
  for (let i = 0; i < n; i++) {
    rgba[i * 4] = rgb[i * 3];
    rgba[i * 4 + 1] = rgb[i * 3 + 1];
    rgba[i * 4 + 2] = rgb[i * 3 + 2];
    rgba[i * 4 + 3] = 255;
  }
  return rgba;
}

export function cameraMessage(
  id: number,
  view: Float64Array | number[],
  proj: Float64Array | number[],
  near: number,
  far: number,
): string {
  return JSON.stringify({
    type: "camera",
    id,
    view: Array.from(view),
    proj: Array.from(proj),
    near,
    far,
  });
}

export function isoMessage(id: number, value: number): string {
  return JSON.stringify({ type: "iso", id, value });
}

export function modeMessage(id: number, value: string): string {
  return JSON.stringify({ type: "mode", id, value });
}
