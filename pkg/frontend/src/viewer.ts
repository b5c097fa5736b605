/**
 * Transport-free viewer state machine: tracks the connection, enforces
 * monotone frame ids (stale frames are dropped), estimates round-trip
 * latency, and refuses to emit commands before the handshake.
 */
import { Frame, HelloMessage } from "./protocol.js";

export type ConnectionStatus = "connecting" | "connected" | "disconnected";

export interface DisplayedFrame {
  frame: Frame;
  latencyMs: number | null;
}

export class ViewerState {
  status: ConnectionStatus = "connecting";
  hello: HelloMessage | null = null;
  lastFrameId = 0;
  latencyMs: number | null = null;
  framesShown = 0;
  framesDropped = 0;
  private nextCommandId = 1;
  private sendTimes = new Map<number, number>();

  constructor(private readonly now: () => number = () => Date.now()) {}

  get ready(): boolean {
    return this.status === "connected" && this.hello !== null;
  }

  onOpen(): void {
    this.status = "connecting"; // connected only after the hello arrives
  }

  onHello(hello: HelloMessage): void {
    this.hello = hello;
    this.status = "connected";
  }

  onDisconnect(): void {
    this.status = "disconnected";
    this.hello = null;
    this.lastFrameId = 0;
    this.sendTimes.clear();
  }

  /** Allocate a command id and record its send time; null before handshake. */
  issueCommand(): number | null {
    if (!this.ready) {
      return null;
    }
    const id = this.nextCommandId++;
    this.sendTimes.set(id, this.now());
    if (this.sendTimes.size > 256) {
      const oldest = this.sendTimes.keys().next().value as number;
      this.sendTimes.delete(oldest);
    }
    return id;
  }

  /** Returns the frame to display, or null if it is stale. */
  onFrame(frame: Frame): DisplayedFrame | null {
    if (frame.frameId <= this.lastFrameId) {
      this.framesDropped++;
      return null;
    }
    this.lastFrameId = frame.frameId;
    this.framesShown++;
    const sent = this.sendTimes.get(frame.commandId);
    if (sent !== undefined) {
      this.latencyMs = this.now() - sent;
      this.sendTimes.delete(frame.commandId);
    }
    return { frame, latencyMs: this.latencyMs };
  }
}
