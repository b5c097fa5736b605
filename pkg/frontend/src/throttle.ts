/**
 * Latest-wins rate limiter: control messages are coalesced so at most
 * `maxPerSecond` reach the socket and a trailing send always delivers
 * the newest value (the recurrent pipeline should see the latest
 * camera, never a backlog).
 */

export class Coalescer<T> {
  private pending: T | undefined;
  private lastSent = -Infinity;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private readonly intervalMs: number;

  constructor(
    private readonly send: (value: T) => void,
    maxPerSecond = 30,
    private readonly now: () => number = () => Date.now(),
    private readonly schedule: (fn: () => void, ms: number) => ReturnType<typeof setTimeout> = setTimeout,
    private readonly cancel: (t: ReturnType<typeof setTimeout>) => void = clearTimeout,
  ) {
    this.intervalMs = 1000 / maxPerSecond;
  }

  /** Offer a new value; it is sent now or replaces the pending one. */
  push(value: T): void {
    const t = this.now();
    if (t - this.lastSent >= this.intervalMs && this.timer === null) {
      this.lastSent = t;
      this.send(value);
      return;
    }
    this.pending = value;
    if (this.timer === null) {
      const wait = Math.max(0, this.intervalMs - (t - this.lastSent));
      this.timer = this.schedule(() => this.flush(), wait);
    }
  }

  /** Deliver the pending value immediately (e.g. on slider release). */
  flush(): void {
    if (this.timer !== null) {
      this.cancel(this.timer);
      this.timer = null;
    }
    if (this.pending !== undefined) {
      this.lastSent = this.now();
      const value = this.pending;
      this.pending = undefined;
      this.send(value);
    }
  }

  get hasPending(): boolean {
    return this.pending !== undefined;
  }
}
