import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { ControlClient, ParamThrottle } from "../src/control.js";
import type { ControlTransport } from "../src/control.js";

class RecordingTransport implements ControlTransport {
  lines: string[] = [];
  send(line: string): void {
    this.lines.push(line);
  }
  close(): void {}
}

describe("ControlClient", () => {
  it("attaches a fresh request_id and the payload to every request", () => {
    const transport = new RecordingTransport();
    const client = new ControlClient(transport);
    void client.request("set_param", { psi: 0.5 });
    void client.request("get_state");
    const [first, second] = transport.lines.map((l) => JSON.parse(l));
    expect(first.type).toBe("set_param");
    expect(first.payload).toEqual({ psi: 0.5 });
    expect(typeof first.request_id).toBe("string");
    expect(second.request_id).not.toBe(first.request_id);
    expect(client.inFlight).toBe(2);
  });

  it("matches responses to requests by id, order independent", async () => {
    const transport = new RecordingTransport();
    const client = new ControlClient(transport);
    const a = client.request("set_param", { psi: 0.1 });
    const b = client.request("set_param", { psi: 0.2 });
    const [reqA, reqB] = transport.lines.map((l) => JSON.parse(l));
    client.handleLine(JSON.stringify({ request_id: reqB.request_id, ok: false, error: "no" }));
    client.handleLine(JSON.stringify({ request_id: reqA.request_id, ok: true }));
    await expect(b).resolves.toMatchObject({ ok: false, error: "no" });
    await expect(a).resolves.toMatchObject({ ok: true });
    expect(client.inFlight).toBe(0);
  });

  it("drops unsolicited, garbled, and id-less lines without failing", () => {
    const client = new ControlClient(new RecordingTransport());
    expect(client.handleLine("{nope")).toBeNull();
    expect(client.handleLine("null")).toBeNull();
    expect(client.handleLine(JSON.stringify({ request_id: null, ok: false }))).toBeNull();
    expect(client.handleLine(JSON.stringify({ request_id: "never-sent", ok: true }))).toBeNull();
  });

  it("reports the matched request's type for routing", () => {
    const transport = new RecordingTransport();
    const client = new ControlClient(transport);
    void client.request("list_layers");
    const req = JSON.parse(transport.lines[0]);
    const hit = client.handleLine(JSON.stringify({ request_id: req.request_id, ok: true }));
    expect(hit?.type).toBe("list_layers");
  });

  it("abortAll fails everything in flight with the given reason", async () => {
    const client = new ControlClient(new RecordingTransport());
    const pending = client.request("get_state");
    client.abortAll("connection lost");
    await expect(pending).resolves.toMatchObject({ ok: false, error: "connection lost" });
    expect(client.inFlight).toBe(0);
  });
});

describe("ParamThrottle", () => {
  let clock: number;
  let sent: [string, unknown][];
  let throttle: ParamThrottle;

  beforeEach(() => {
    vi.useFakeTimers();
    clock = 0;
    sent = [];
    throttle = new ParamThrottle((key, value) => sent.push([key, value]), 100, () => clock);
  });

  afterEach(() => {
    vi.useRealTimers();
  });

  function advance(ms: number): void {
    clock += ms;
    vi.advanceTimersByTime(ms);
  }

  it("sends the first offer immediately", () => {
    throttle.offer("psi", 0.5);
    expect(sent).toEqual([["psi", 0.5]]);
  });

  it("coalesces a burst into one leading and one trailing send", () => {
    for (let i = 0; i <= 30; i++) {
      throttle.offer("psi", i / 30);
      advance(2); // a 60 ms drag, well inside one interval
    }
    expect(sent).toEqual([["psi", 0]]);
    advance(100); // the trailing timer lands the newest value
    expect(sent).toEqual([
      ["psi", 0],
      ["psi", 1],
    ]);
  });

  it("holds steady-state dragging to one send per interval", () => {
    for (let i = 0; i < 100; i++) {
      throttle.offer("psi", i);
      advance(10);
    }
    advance(100);
    // 1000 ms of dragging at 100 ms per send: 10 or 11 including the trailer
    expect(sent.length).toBeGreaterThanOrEqual(10);
    expect(sent.length).toBeLessThanOrEqual(11);
    expect(sent[sent.length - 1][1]).toBe(99); // the final position always lands
  });

  it("tracks each key independently", () => {
    throttle.offer("psi", 1);
    throttle.offer("latent_smoothing", 0.4);
    expect(sent).toEqual([
      ["psi", 1],
      ["latent_smoothing", 0.4],
    ]);
  });

  it("clear drops queued values so nothing fires after disconnect", () => {
    throttle.offer("psi", 1);
    throttle.offer("psi", 2);
    throttle.clear();
    advance(500);
    expect(sent).toEqual([["psi", 1]]);
  });
});
