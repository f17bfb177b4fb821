/** Shared fakes: a scriptable control transport, a pushable stream
 * transport, and state snapshots shaped like the live service's. */

import { packEnvelope } from "../src/envelope.js";
import { KIND_EVENT, KIND_FRAME, KIND_PREVIEW } from "../src/protocol.js";
import type {
  ControlRequest,
  ControlResponse,
  LayerRow,
  StateSnapshot,
} from "../src/protocol.js";
import type { ControlLineTransport, StreamTransport } from "../src/session.js";

export function makeState(overrides: Partial<StateSnapshot> = {}): StateSnapshot {
  return {
    mode: "style_mix",
    layers: { conv5_3: 1.0 },
    target_frame: [426, 320],
    aspect_ratio: [4, 3],
    psi: 1.0,
    band_psi: {},
    truncate_static_rows: true,
    mixing_ranges: {
      num_ws: 16,
      coarse: [0, 4],
      middle: [4, 8],
      fine: [8, 16],
      static_rows: [],
    },
    latent_smoothing: 0.3,
    gesture_smoothing: 0.5,
    session_seed: 0,
    static_seed: 0,
    standardize: true,
    z_dim: 512,
    warmup_frames: 120,
    confidence_floor: 0.5,
    hand_hysteresis: 0.1,
    max_scale: 2.0,
    corruption_part: "body",
    config_version: 0,
    num_ws: 16,
    extractor_id: "mock://extractor?seed=0",
    counters: { frames_in: 0, frames_out: 0, frames_dropped: 0 },
    calibration: { frozen: false, counts: { coarse: 0, middle: 0, fine: 0 } },
    gesture: { angle_deg: 0, scale: 1, corruption: 0, handedness: null },
    ...overrides,
  };
}

// full extractor table as the live service reports it; only the
// 512-channel rows are usable while z_dim stays 512
export const LAYER_TABLE: LayerRow[] = [
  { name: "conv1_1", channels: 64, rows: 256, cols: 256 },
  { name: "conv1_2", channels: 64, rows: 256, cols: 256 },
  { name: "conv2_1", channels: 128, rows: 128, cols: 128 },
  { name: "conv2_2", channels: 128, rows: 128, cols: 128 },
  { name: "conv3_1", channels: 256, rows: 64, cols: 64 },
  { name: "conv3_2", channels: 256, rows: 64, cols: 64 },
  { name: "conv3_3", channels: 256, rows: 64, cols: 64 },
  { name: "conv4_1", channels: 512, rows: 32, cols: 32 },
  { name: "conv4_2", channels: 512, rows: 32, cols: 32 },
  { name: "conv4_3", channels: 512, rows: 32, cols: 32 },
  { name: "conv5_1", channels: 512, rows: 16, cols: 16 },
  { name: "conv5_2", channels: 512, rows: 16, cols: 16 },
  { name: "conv5_3", channels: 512, rows: 16, cols: 16 },
  { name: "adavgpool", channels: 512, rows: 7, cols: 7 },
];

const encoder = new TextEncoder();

export function eventBytes(event: object): Uint8Array {
  return packEnvelope(KIND_EVENT, encoder.encode(JSON.stringify(event)));
}

export function frameBytes(payload: Uint8Array): Uint8Array {
  return packEnvelope(KIND_FRAME, payload);
}

export function previewBytes(payload: Uint8Array): Uint8Array {
  return packEnvelope(KIND_PREVIEW, payload);
}

/**
 * Control transport that records every request and answers through
 * `autoRespond` (on a microtask, like a socket would) or manually via
 * `respond`.
 */
export class FakeControl implements ControlLineTransport {
  sent: ControlRequest[] = [];
  closed = false;
  autoRespond: ((req: ControlRequest) => ControlResponse | null) | null = null;

  private messageHandler: (line: string) => void = () => {};
  private closeHandler: () => void = () => {};

  send(line: string): void {
    const request = JSON.parse(line) as ControlRequest;
    this.sent.push(request);
    const responder = this.autoRespond;
    if (responder) {
      const response = responder(request);
      if (response) {
        queueMicrotask(() => this.messageHandler(JSON.stringify(response)));
      }
    }
  }

  onMessage(handler: (line: string) => void): void {
    this.messageHandler = handler;
  }

  onClose(handler: () => void): void {
    this.closeHandler = handler;
  }

  close(): void {
    this.closed = true;
  }

  respond(response: ControlResponse): void {
    this.messageHandler(JSON.stringify(response));
  }

  respondRaw(line: string): void {
    this.messageHandler(line);
  }

  emitClose(): void {
    this.closeHandler();
  }
}

/** Answers get_state/list_layers/set_* like the real service would. */
export function serviceResponder(
  state: { current: StateSnapshot },
): (req: ControlRequest) => ControlResponse {
  return (req) => {
    if (req.type === "list_layers") {
      return { request_id: req.request_id, ok: true, state: { layers: LAYER_TABLE } };
    }
    if (req.type === "get_state") {
      return { request_id: req.request_id, ok: true, state: state.current };
    }
    if (req.type === "reseed") {
      state.current = { ...state.current, static_seed: req.payload.seed as number };
      return { request_id: req.request_id, ok: true, state: state.current };
    }
    if (req.type === "set_mode") {
      state.current = { ...state.current, mode: req.payload.mode as StateSnapshot["mode"] };
      return { request_id: req.request_id, ok: true, state: state.current };
    }
    state.current = { ...state.current, ...(req.payload as Partial<StateSnapshot>) };
    return { request_id: req.request_id, ok: true, state: state.current };
  };
}

export class FakeStream implements StreamTransport {
  closed = false;

  private messageHandler: (chunk: Uint8Array) => void = () => {};
  private closeHandler: () => void = () => {};

  onMessage(handler: (chunk: Uint8Array) => void): void {
    this.messageHandler = handler;
  }

  onClose(handler: () => void): void {
    this.closeHandler = handler;
  }

  close(): void {
    this.closed = true;
  }

  emit(bytes: Uint8Array): void {
    this.messageHandler(bytes);
  }

  emitClose(): void {
    this.closeHandler();
  }
}
