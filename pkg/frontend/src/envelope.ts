/**
 * Incremental decoder for the stream framing:
 *
 *   [payload length: u32 big-endian][kind: u8][payload bytes]
 *
 * The length counts the payload only, so an empty-payload envelope is
 * exactly five bytes. Transports may split the stream anywhere,
 * including inside the header; the decoder buffers across pushes and
 * yields complete envelopes in arrival order. Unknown kinds are not
 * an error at this layer, the caller decides what to skip.
 */

const HEADER_BYTES = 5;

// A length beyond this is a desynced stream, not a plausible frame.
export const MAX_PAYLOAD_BYTES = 64 * 1024 * 1024;

const EMPTY = new Uint8Array(0);

export interface Envelope {
  kind: number;
  payload: Uint8Array;
}

/** The byte stream can no longer be a valid envelope sequence. */
export class FramingError extends Error {}

export function packEnvelope(kind: number, payload: Uint8Array): Uint8Array {
  if (!Number.isInteger(kind) || kind < 0 || kind > 0xff) {
    throw new RangeError(`kind must be a single byte, got ${kind}`);
  }
  const out = new Uint8Array(HEADER_BYTES + payload.length);
  new DataView(out.buffer).setUint32(0, payload.length, false);
  out[4] = kind;
  out.set(payload, HEADER_BYTES);
  return out;
}

export class EnvelopeParser {
  /** Complete envelopes decoded since construction. */
  decoded = 0;

  private rest: Uint8Array = EMPTY;

  /**
   * Feed one chunk; returns every envelope it completes. Payloads are
   * views into the pushed buffers, so callers that recycle their
   * buffers must copy before the next push (websocket messages arrive
   * in fresh buffers and need no copy).
   */
  push(chunk: Uint8Array): Envelope[] {
    let buf: Uint8Array;
    if (this.rest.length === 0) {
      buf = chunk;
    } else {
      buf = new Uint8Array(this.rest.length + chunk.length);
      buf.set(this.rest, 0);
      buf.set(chunk, this.rest.length);
    }

    const out: Envelope[] = [];
    let off = 0;
    while (buf.length - off >= HEADER_BYTES) {
      const length = new DataView(buf.buffer, buf.byteOffset + off).getUint32(0, false);
      if (length > MAX_PAYLOAD_BYTES) {
        this.rest = EMPTY;
        throw new FramingError(
          `payload length ${length} exceeds ${MAX_PAYLOAD_BYTES} bytes`,
        );
      }
      if (buf.length - off < HEADER_BYTES + length) {
        break;
      }
      const kind = buf[off + 4];
      out.push({
        kind,
        payload: buf.subarray(off + HEADER_BYTES, off + HEADER_BYTES + length),
      });
      this.decoded += 1;
      off += HEADER_BYTES + length;
    }
    this.rest = off < buf.length ? buf.subarray(off) : EMPTY;
    return out;
  }

  /** Bytes held back waiting for the rest of an envelope. */
  get pendingBytes(): number {
    return this.rest.length;
  }
}
