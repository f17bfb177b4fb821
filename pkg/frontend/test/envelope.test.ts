import { describe, expect, it } from "vitest";

import {
  EnvelopeParser,
  FramingError,
  MAX_PAYLOAD_BYTES,
  packEnvelope,
} from "../src/envelope.js";

function bytes(...values: number[]): Uint8Array {
  return new Uint8Array(values);
}

function concat(parts: Uint8Array[]): Uint8Array {
  const total = parts.reduce((n, p) => n + p.length, 0);
  const out = new Uint8Array(total);
  let off = 0;
  for (const part of parts) {
    out.set(part, off);
    off += part.length;
  }
  return out;
}

describe("packEnvelope", () => {
  it("lays out header then payload, length covering the payload only", () => {
    const packed = packEnvelope(0x02, bytes(0xaa, 0xbb, 0xcc));
    expect([...packed]).toEqual([0, 0, 0, 3, 0x02, 0xaa, 0xbb, 0xcc]);
  });

  it("an empty payload is exactly five bytes", () => {
    expect([...packEnvelope(0x02, bytes())]).toEqual([0, 0, 0, 0, 0x02]);
  });

  it("rejects kinds that are not a byte", () => {
    expect(() => packEnvelope(256, bytes())).toThrow(RangeError);
    expect(() => packEnvelope(-1, bytes())).toThrow(RangeError);
  });
});

describe("EnvelopeParser", () => {
  it("round-trips a single envelope", () => {
    const parser = new EnvelopeParser();
    const out = parser.push(packEnvelope(0x01, bytes(1, 2, 3, 4)));
    expect(out).toHaveLength(1);
    expect(out[0].kind).toBe(0x01);
    expect([...out[0].payload]).toEqual([1, 2, 3, 4]);
    expect(parser.pendingBytes).toBe(0);
  });

  it("yields several envelopes from one chunk, in order", () => {
    const parser = new EnvelopeParser();
    const stream = concat([
      packEnvelope(0x01, bytes(1)),
      packEnvelope(0x02, bytes(2, 2)),
      packEnvelope(0x03, bytes()),
    ]);
    const out = parser.push(stream);
    expect(out.map((e) => e.kind)).toEqual([0x01, 0x02, 0x03]);
    expect(out.map((e) => e.payload.length)).toEqual([1, 2, 0]);
  });

  it("survives byte-at-a-time delivery, header splits included", () => {
    const parser = new EnvelopeParser();
    const stream = concat([
      packEnvelope(0x01, bytes(9, 8, 7)),
      packEnvelope(0x7f, bytes()),
      packEnvelope(0x02, bytes(5)),
    ]);
    const seen: number[] = [];
    for (const byte of stream) {
      for (const envelope of parser.push(bytes(byte))) {
        seen.push(envelope.kind);
      }
    }
    expect(seen).toEqual([0x01, 0x7f, 0x02]);
    expect(parser.decoded).toBe(3);
    expect(parser.pendingBytes).toBe(0);
  });

  it("holds a partial envelope across pushes without emitting", () => {
    const parser = new EnvelopeParser();
    const packed = packEnvelope(0x01, bytes(1, 2, 3, 4, 5, 6));
    expect(parser.push(packed.subarray(0, 7))).toHaveLength(0);
    expect(parser.pendingBytes).toBe(7);
    const out = parser.push(packed.subarray(7));
    expect(out).toHaveLength(1);
    expect([...out[0].payload]).toEqual([1, 2, 3, 4, 5, 6]);
  });

  it("passes unknown kinds through untouched; routing is the caller's job", () => {
    const parser = new EnvelopeParser();
    const out = parser.push(packEnvelope(0x7f, bytes(1)));
    expect(out[0].kind).toBe(0x7f);
  });

  it("treats an absurd length as a desynced stream", () => {
    const parser = new EnvelopeParser();
    const header = new Uint8Array(5);
    new DataView(header.buffer).setUint32(0, MAX_PAYLOAD_BYTES + 1, false);
    header[4] = 0x01;
    expect(() => parser.push(header)).toThrow(FramingError);
    // the parser dropped its buffer and can start over on a clean stream
    expect(parser.push(packEnvelope(0x02, bytes(1)))).toHaveLength(1);
  });

  it("keeps up with a minute of 30 fps frames without a framing error", () => {
    // 1800 frame-sized envelopes, delivered in odd-sized chunks so
    // headers and payloads split at awkward offsets
    const payload = new Uint8Array(36_000);
    for (let i = 0; i < payload.length; i++) payload[i] = i & 0xff;
    const one = packEnvelope(0x01, payload);
    const parser = new EnvelopeParser();

    const started = performance.now();
    let decoded = 0;
    let carry: Uint8Array[] = [];
    let carried = 0;
    const flushAt = 57_331; // prime-ish chunk size, never envelope aligned
    for (let i = 0; i < 1800; i++) {
      carry.push(one);
      carried += one.length;
      while (carried >= flushAt) {
        const joined = concat(carry);
        decoded += parser.push(joined.subarray(0, flushAt)).length;
        carry = [joined.subarray(flushAt)];
        carried = carry[0].length;
      }
    }
    if (carried) decoded += parser.push(concat(carry)).length;
    const elapsed = performance.now() - started;

    expect(decoded).toBe(1800);
    expect(parser.decoded).toBe(1800);
    expect(parser.pendingBytes).toBe(0);
    // a minute of stream must parse far faster than real time
    expect(elapsed).toBeLessThan(10_000);
  });
});
