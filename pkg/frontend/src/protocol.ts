/**
 * Wire types shared by the stream and control planes. These mirror the
 * service's JSON byte for byte; nothing here is console-invented.
 */

export const PROTOCOL_VERSION = 1;

export const KIND_FRAME = 0x01; // JPEG output frame
export const KIND_EVENT = 0x02; // UTF-8 JSON event
export const KIND_PREVIEW = 0x03; // JPEG source preview

export type Band = "coarse" | "middle" | "fine";
export const BANDS: readonly Band[] = ["coarse", "middle", "fine"];

export type ModeName = "style_mix" | "const_corrupt" | "affine";
export const MODES: readonly ModeName[] = ["style_mix", "const_corrupt", "affine"];

export interface MixingRangesJson {
  num_ws: number;
  coarse: [number, number]; // half-open [lo, hi) style rows
  middle: [number, number];
  fine: [number, number];
  static_rows: number[];
}

/** Full pipeline state as carried by state events and control acks. */
export interface StateSnapshot {
  mode: ModeName;
  layers: Record<string, number>; // layer name -> combination weight
  target_frame: [number, number];
  aspect_ratio: [number, number];
  psi: number; // -1..2
  band_psi: Partial<Record<Band, number>>;
  truncate_static_rows: boolean;
  mixing_ranges: MixingRangesJson;
  latent_smoothing: number; // (0, 1]
  gesture_smoothing: number; // (0, 1]
  session_seed: number;
  static_seed: number;
  standardize: boolean;
  z_dim: number;
  warmup_frames: number;
  confidence_floor: number;
  hand_hysteresis: number;
  max_scale: number;
  corruption_part: string;
  config_version: number;
  num_ws: number;
  extractor_id: string;
  counters: { frames_in: number; frames_out: number; frames_dropped: number };
  calibration: { frozen: boolean; counts: Record<Band, number> };
  gesture: {
    angle_deg: number;
    scale: number;
    corruption: number;
    handedness: string | null;
  };
}

export interface LayerRow {
  name: string;
  channels: number;
  rows: number;
  cols: number;
}

export type ControlType =
  | "set_param"
  | "set_mode"
  | "reseed"
  | "get_state"
  | "list_layers";

export interface ControlRequest {
  type: ControlType;
  payload: Record<string, unknown>;
  request_id: string;
}

export interface ControlResponse {
  request_id: string | null;
  ok: boolean;
  state?: StateSnapshot | { layers: LayerRow[] };
  error?: string;
}

export type StreamEvent =
  | { type: "handshake"; protocol_version: number; state: StateSnapshot }
  | { type: "state"; state: StateSnapshot };
