/**
 * Control-plane client: request/response matching by request_id, plus
 * the per-parameter send-rate throttle. Transport framing (newline vs
 * websocket message) is the transport's concern; this layer deals in
 * whole JSON strings.
 */

import type { ControlRequest, ControlResponse, ControlType } from "./protocol.js";

export interface ControlTransport {
  send(line: string): void;
  close(): void;
}

interface Pending {
  type: ControlType;
  resolve: (response: ControlResponse) => void;
}

export class ControlClient {
  private pending = new Map<string, Pending>();
  private seq = 0;

  constructor(private readonly transport: ControlTransport) {}

  /** Requests still waiting for a response. */
  get inFlight(): number {
    return this.pending.size;
  }

  request(
    type: ControlType,
    payload: Record<string, unknown> = {},
  ): Promise<ControlResponse> {
    const request_id = `q${++this.seq}`;
    const line = JSON.stringify({ type, payload, request_id } satisfies ControlRequest);
    return new Promise((resolve) => {
      // registered before send so a same-tick response still matches
      this.pending.set(request_id, { type, resolve });
      this.transport.send(line);
    });
  }

  /**
   * Feed one response line from the transport. Returns the matched
   * request's type with the response, or null for unsolicited or
   * garbled lines (those are dropped, never fatal).
   */
  handleLine(line: string): { type: ControlType; response: ControlResponse } | null {
    let response: ControlResponse;
    try {
      response = JSON.parse(line);
    } catch {
      return null;
    }
    if (typeof response !== "object" || response === null) return null;
    const id = response.request_id;
    if (typeof id !== "string") return null;
    const entry = this.pending.get(id);
    if (!entry) return null;
    this.pending.delete(id);
    entry.resolve(response);
    return { type: entry.type, response };
  }

  /** Fail every in-flight request, e.g. when the connection drops. */
  abortAll(reason: string): void {
    const entries = [...this.pending.values()];
    this.pending.clear();
    for (const entry of entries) {
      entry.resolve({ request_id: null, ok: false, error: reason });
    }
  }
}

type TimerId = ReturnType<typeof setTimeout>;

/**
 * Per-key trailing throttle: at most one send per interval for each
 * key, and the newest value always lands, so a slider drag that stops
 * between ticks still settles on its final position.
 */
export class ParamThrottle {
  private lastSent = new Map<string, number>();
  private timers = new Map<string, TimerId>();
  private queued = new Map<string, unknown>();

  constructor(
    private readonly send: (key: string, value: unknown) => void,
    private readonly intervalMs = 100,
    private readonly now: () => number = () => Date.now(),
  ) {}

  offer(key: string, value: unknown): void {
    if (this.timers.has(key)) {
      this.queued.set(key, value); // a trailing send is already scheduled
      return;
    }
    const at = this.now();
    const last = this.lastSent.get(key);
    if (last === undefined || at - last >= this.intervalMs) {
      this.lastSent.set(key, at);
      this.send(key, value);
      return;
    }
    this.queued.set(key, value);
    const timer = setTimeout(() => this.fire(key), this.intervalMs - (at - last));
    this.timers.set(key, timer);
  }

  private fire(key: string): void {
    this.timers.delete(key);
    if (!this.queued.has(key)) return;
    const value = this.queued.get(key);
    this.queued.delete(key);
    this.lastSent.set(key, this.now());
    this.send(key, value);
  }

  /** Drop everything scheduled, e.g. when the connection goes away. */
  clear(): void {
    for (const timer of this.timers.values()) clearTimeout(timer);
    this.timers.clear();
    this.queued.clear();
  }
}
