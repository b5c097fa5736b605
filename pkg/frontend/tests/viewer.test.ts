import { describe, expect, it } from "vitest";
import { Frame, HelloMessage } from "../src/protocol.js";
import { ViewerState } from "../src/viewer.js";

const hello: HelloMessage = {
  type: "hello",
  dims: [32, 32, 32],
  spacing: [1, 1, 1],
  iso: 0.5,
  iso_range: [0, 1],
  resolution: [64, 64],
  upscale: 4,
  mode: "input",
  modes: ["input", "bilinear", "sr", "gt"],
  encoding: "raw",
  shading: {},
};

function frame(frameId: number, commandId: number): Frame {
  return { frameId, commandId, width: 2, height: 2, payload: new Uint8Array(12) };
}

describe("viewer state machine", () => {
  it("refuses to issue commands before the handshake", () => {
    const v = new ViewerState();
    v.onOpen();
    expect(v.issueCommand()).toBeNull();
    v.onHello(hello);
    expect(v.issueCommand()).toBe(1);
    expect(v.issueCommand()).toBe(2);
  });

  it("drops stale frames and keeps ids monotone", () => {
    const v = new ViewerState();
    v.onHello(hello);
    expect(v.onFrame(frame(1, 1))).not.toBeNull();
    expect(v.onFrame(frame(3, 2))).not.toBeNull();
    expect(v.onFrame(frame(2, 3))).toBeNull(); // arrived late
    expect(v.onFrame(frame(3, 4))).toBeNull(); // duplicate
    expect(v.lastFrameId).toBe(3);
    expect(v.framesShown).toBe(2);
    expect(v.framesDropped).toBe(2);
  });

  it("estimates round-trip latency from command echo", () => {
    let clock = 1000;
    const v = new ViewerState(() => clock);
    v.onHello(hello);
    const id = v.issueCommand()!;
    clock += 48;
    const shown = v.onFrame(frame(1, id));
    expect(shown?.latencyMs).toBe(48);
  });

  it("disconnect resets the session-scoped state", () => {
    const v = new ViewerState();
    v.onHello(hello);
    v.issueCommand();
    v.onFrame(frame(5, 1));
    v.onDisconnect();
    expect(v.status).toBe("disconnected");
    expect(v.ready).toBe(false);
    expect(v.lastFrameId).toBe(0); // a fresh session restarts frame ids
  });
});
