/**
 * Client-side models: what the operator sees (SessionView) and what
 * they may send (ControlPanelModel). Rendered control positions come
 * from the last server-acknowledged state and nowhere else; an edit
 * becomes visible only once the server confirms it.
 */

import { ControlClient, ParamThrottle } from "./control.js";
import type {
  Band,
  ControlResponse,
  LayerRow,
  MixingRangesJson,
  ModeName,
  StateSnapshot,
} from "./protocol.js";

export type ConnectionState = "connecting" | "live" | "stale";

const FPS_WINDOW = 30; // frame arrivals kept for the rolling estimate

export class SessionView {
  connection: ConnectionState = "connecting";
  /** Last server-acknowledged state. Never mutated locally. */
  state: StateSnapshot | null = null;
  protocolVersion: number | null = null;
  frame: Uint8Array | null = null; // latest output JPEG bytes
  preview: Uint8Array | null = null; // latest source preview JPEG bytes
  framesDecoded = 0;
  previewsDecoded = 0;
  eventsApplied = 0;
  unknownKinds = 0; // skipped, stream keeps going
  framingErrors = 0; // fatal per connection

  private frameTimes: number[] = [];

  noteFrame(atMs: number): void {
    this.frameTimes.push(atMs);
    if (this.frameTimes.length > FPS_WINDOW) this.frameTimes.shift();
  }

  /** Rolling output fps over the last few dozen frames. */
  fps(): number {
    const t = this.frameTimes;
    if (t.length < 2) return 0;
    const span = t[t.length - 1] - t[0];
    return span <= 0 ? 0 : ((t.length - 1) * 1000) / span;
  }
}

// ---------------------------------------------------------------------------
// Validation mirrors. Same rules the server enforces, run before a
// message is sent so a bad edit never leaves the browser.

export function rangeProblems(r: MixingRangesJson): string[] {
  const problems: string[] = [];
  const bands: [Band, [number, number]][] = [
    ["coarse", r.coarse],
    ["middle", r.middle],
    ["fine", r.fine],
  ];
  for (const [name, [lo, hi]] of bands) {
    if (!Number.isInteger(lo) || !Number.isInteger(hi)) {
      problems.push(`${name} bounds must be integers`);
    } else if (!(0 <= lo && lo <= hi && hi <= r.num_ws)) {
      problems.push(`${name} range [${lo}, ${hi}) outside [0, ${r.num_ws})`);
    }
  }
  for (const row of r.static_rows) {
    if (!Number.isInteger(row) || row < 0 || row >= r.num_ws) {
      problems.push(`static row ${row} outside [0, ${r.num_ws})`);
    }
  }
  if (problems.length) return problems; // the checks below assume sane bounds

  for (let i = 0; i < bands.length; i++) {
    for (let j = i + 1; j < bands.length; j++) {
      const [aName, [aLo, aHi]] = bands[i];
      const [bName, [bLo, bHi]] = bands[j];
      if (aLo < bHi && bLo < aHi) {
        problems.push(`${aName} and ${bName} ranges overlap`);
      }
    }
  }
  const covered = new Set(r.static_rows);
  for (const [, [lo, hi]] of bands) {
    for (let row = lo; row < hi; row++) covered.add(row);
  }
  const missing: number[] = [];
  for (let row = 0; row < r.num_ws; row++) {
    if (!covered.has(row)) missing.push(row);
  }
  if (missing.length) {
    problems.push(`rows ${missing.join(", ")} are covered by no band and not static`);
  }
  return problems;
}

export function psiProblems(value: number): string[] {
  if (!Number.isFinite(value) || value < -1 || value > 2) {
    return [`psi ${value} outside [-1, 2]`];
  }
  return [];
}

export function layerWeightProblems(layers: Record<string, number>): string[] {
  const weights = Object.values(layers);
  if (weights.length === 0) {
    return ["at least one extractor layer must be configured"];
  }
  if (weights.some((a) => !Number.isFinite(a) || a < 0)) {
    return ["layer weights must be finite and >= 0"];
  }
  if (!weights.some((a) => a > 0)) {
    return ["at least one layer weight must be > 0"];
  }
  return [];
}

export function smoothingProblems(name: string, value: number): string[] {
  if (!Number.isFinite(value) || value <= 0 || value > 1) {
    return [`${name} must be in (0, 1], got ${value}`];
  }
  return [];
}

// ---------------------------------------------------------------------------

export type SmoothingParam = "latent_smoothing" | "gesture_smoothing";

/**
 * The operator panel. Continuous controls (psi, layer weights,
 * smoothing) go through a 10 Hz per-parameter throttle; discrete ones
 * (mode, ranges, reseed) send immediately. A rejected edit sets
 * `lastError` for the toast and sends nothing, the displayed value
 * simply stays where the server last put it.
 */
export class ControlPanelModel {
  /** Selectable layers, populated from a list_layers response. */
  layerTable: LayerRow[] = [];
  /** Inline toast text; null when clear. */
  lastError: string | null = null;

  private readonly throttle: ParamThrottle;

  constructor(
    private readonly view: SessionView,
    private readonly client: Pick<ControlClient, "request">,
    throttleMs = 100,
    now?: () => number,
  ) {
    this.throttle = new ParamThrottle(
      (key, value) => this.flushParam(key, value),
      throttleMs,
      now,
    );
  }

  /** What the panel displays: server truth or nothing. */
  get displayed(): StateSnapshot | null {
    return this.view.state;
  }

  // -- continuous controls, throttled --------------------------------------

  dragPsi(value: number): void {
    if (this.block(psiProblems(value))) return;
    this.throttle.offer("psi", value);
  }

  dragAlpha(layer: string, value: number): void {
    if (this.block(this.layerFitProblems(layer))) return;
    const merged = { ...(this.view.state?.layers ?? {}), [layer]: value };
    if (this.block(layerWeightProblems(merged))) return;
    this.throttle.offer(`layers:${layer}`, value);
  }

  dragSmoothing(name: SmoothingParam, value: number): void {
    if (this.block(smoothingProblems(name, value))) return;
    this.throttle.offer(name, value);
  }

  // -- discrete controls, immediate -----------------------------------------

  setMode(mode: ModeName): Promise<ControlResponse> {
    return this.send("set_mode", { mode });
  }

  reseed(seed: number): Promise<ControlResponse> | null {
    if (!Number.isInteger(seed)) {
      this.lastError = `seed must be an integer, got ${seed}`;
      return null;
    }
    return this.send("reseed", { seed });
  }

  /** Validated locally first; overlapping or gappy rows never leave. */
  applyRanges(ranges: MixingRangesJson): Promise<ControlResponse> | null {
    if (this.block(rangeProblems(ranges))) return null;
    return this.send("set_param", { mixing_ranges: ranges });
  }

  toggleStaticRow(row: number, on: boolean): Promise<ControlResponse> | null {
    const current = this.view.state?.mixing_ranges;
    if (!current) return null;
    const rows = new Set(current.static_rows);
    if (on) rows.add(row);
    else rows.delete(row);
    return this.applyRanges({ ...current, static_rows: [...rows].sort((a, b) => a - b) });
  }

  toggleLayer(name: string, on: boolean): Promise<ControlResponse> | null {
    if (on && this.block(this.layerFitProblems(name))) return null;
    const layers = { ...(this.view.state?.layers ?? {}) };
    if (on) layers[name] = layers[name] ?? 1.0;
    else delete layers[name];
    if (this.block(layerWeightProblems(layers))) return null;
    return this.send("set_param", { layers });
  }

  /** The engine refuses layers whose width cannot fill the latent; mirror that. */
  layerFitProblems(name: string): string[] {
    if (this.layerTable.length === 0) return [];
    const row = this.layerTable.find((r) => r.name === name);
    if (!row) return [`extractor has no layer ${name}`];
    const zDim = this.view.state?.z_dim;
    if (zDim !== undefined && row.channels !== zDim) {
      return [`layer ${name} has ${row.channels} channels; z_dim is ${zDim}`];
    }
    return [];
  }

  /** Drop queued throttled sends, e.g. on disconnect. */
  cancelPending(): void {
    this.throttle.clear();
  }

  // --------------------------------------------------------------------------

  private block(problems: string[]): boolean {
    if (problems.length === 0) return false;
    this.lastError = problems.join("; ");
    return true;
  }

  private flushParam(key: string, value: unknown): void {
    // dictionary-valued params are merged over the acknowledged state
    // at send time, so a stale merge base cannot drop sibling entries
    if (key.startsWith("layers:")) {
      const layer = key.slice("layers:".length);
      const layers = { ...(this.view.state?.layers ?? {}), [layer]: value as number };
      void this.send("set_param", { layers });
    } else {
      void this.send("set_param", { [key]: value });
    }
  }

  private async send(
    type: "set_param" | "set_mode" | "reseed",
    payload: Record<string, unknown>,
  ): Promise<ControlResponse> {
    const response = await this.client.request(type, payload);
    this.lastError = response.ok ? null : (response.error ?? "request rejected");
    return response;
  }
}
