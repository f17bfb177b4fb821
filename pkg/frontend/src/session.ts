/**
 * Wires one stream transport and one control transport to a view and
 * panel. Everything here runs on the UI thread; stream parsing is
 * incremental so a chunk boundary never blocks or corrupts anything.
 */

import { EnvelopeParser, FramingError, type Envelope } from "./envelope.js";
import { ControlClient, type ControlTransport } from "./control.js";
import { ControlPanelModel, SessionView } from "./state.js";
import {
  KIND_EVENT,
  KIND_FRAME,
  KIND_PREVIEW,
  type LayerRow,
  type StreamEvent,
} from "./protocol.js";

export interface StreamTransport {
  onMessage(handler: (chunk: Uint8Array) => void): void;
  onClose(handler: () => void): void;
  close(): void;
}

export interface ControlLineTransport extends ControlTransport {
  onMessage(handler: (line: string) => void): void;
  onClose(handler: () => void): void;
}

export interface SessionOptions {
  view?: SessionView; // supplied by the supervisor so it survives reconnects
  now?: () => number;
  onDown?: () => void; // fired once, on the first transport loss
}

const decoder = new TextDecoder();

export class OperatorSession {
  readonly view: SessionView;
  readonly client: ControlClient;
  readonly panel: ControlPanelModel;

  /** Render hooks for the page; models are already updated when they fire. */
  onFrame: (() => void) | null = null;
  onPreview: (() => void) | null = null;
  onState: (() => void) | null = null;

  private readonly parser = new EnvelopeParser();
  private readonly now: () => number;
  private down = false;

  constructor(
    private readonly control: ControlLineTransport,
    private readonly stream: StreamTransport,
    private readonly opts: SessionOptions = {},
  ) {
    this.view = opts.view ?? new SessionView();
    this.now = opts.now ?? (() => Date.now());
    this.client = new ControlClient(control);
    this.panel = new ControlPanelModel(this.view, this.client, 100, opts.now);
    control.onMessage((line) => this.onControlLine(line));
    stream.onMessage((chunk) => this.onChunk(chunk));
    control.onClose(() => this.transportDown());
    stream.onClose(() => this.transportDown());
  }

  /**
   * First words on the wire: get_state (panel positions) and
   * list_layers (panel layer table). Resolves once both answered.
   */
  async start(): Promise<void> {
    const [stateResp, layersResp] = await Promise.all([
      this.client.request("get_state"),
      this.client.request("list_layers"),
    ]);
    if (layersResp.ok && layersResp.state && "layers" in layersResp.state) {
      this.panel.layerTable = layersResp.state.layers as LayerRow[];
    }
    if (stateResp.ok && !this.down) {
      this.view.connection = "live";
      this.onState?.();
    }
  }

  close(): void {
    this.transportDown();
    this.control.close();
    this.stream.close();
  }

  // -- stream plane -----------------------------------------------------------

  private onChunk(chunk: Uint8Array): void {
    let envelopes: Envelope[];
    try {
      envelopes = this.parser.push(chunk);
    } catch (err) {
      if (err instanceof FramingError) {
        // desynced framing cannot be recovered in place; drop the
        // connection and let the supervisor dial a fresh one
        this.view.framingErrors += 1;
        this.close();
        return;
      }
      throw err;
    }
    for (const envelope of envelopes) this.route(envelope);
  }

  private route(envelope: Envelope): void {
    switch (envelope.kind) {
      case KIND_FRAME:
        this.view.frame = envelope.payload;
        this.view.framesDecoded += 1;
        this.view.noteFrame(this.now());
        this.onFrame?.();
        break;
      case KIND_PREVIEW:
        this.view.preview = envelope.payload;
        this.view.previewsDecoded += 1;
        this.onPreview?.();
        break;
      case KIND_EVENT:
        this.onEvent(envelope.payload);
        break;
      default:
        this.view.unknownKinds += 1; // forward compatibility: skip, keep reading
    }
  }

  private onEvent(payload: Uint8Array): void {
    let event: StreamEvent;
    try {
      event = JSON.parse(decoder.decode(payload));
    } catch {
      return; // a malformed event is dropped, the stream stays up
    }
    if (event.type === "handshake") {
      this.view.protocolVersion = event.protocol_version;
      this.view.state = event.state;
    } else if (event.type === "state") {
      this.view.state = event.state;
    } else {
      return;
    }
    this.view.eventsApplied += 1;
    this.onState?.();
  }

  // -- control plane ----------------------------------------------------------

  private onControlLine(line: string): void {
    const hit = this.client.handleLine(line);
    if (!hit) return;
    const { type, response } = hit;
    // acknowledged snapshots are server truth; the list_layers reply
    // carries a layer table, not a snapshot, and must not clobber it
    if (response.ok && response.state && type !== "list_layers") {
      this.view.state = response.state as SessionView["state"];
      this.onState?.();
    }
  }

  // ----------------------------------------------------------------------------

  private transportDown(): void {
    if (this.down) return;
    this.down = true;
    this.view.connection = "stale";
    this.client.abortAll("connection lost");
    this.panel.cancelPending();
    this.onState?.();
    this.opts.onDown?.();
  }
}

/** Dial-once entry point: wires the transports and issues get_state. */
export function connect(
  control: ControlLineTransport,
  stream: StreamTransport,
  opts: SessionOptions = {},
): OperatorSession {
  const session = new OperatorSession(control, stream, opts);
  void session.start();
  return session;
}

// ---------------------------------------------------------------------------
// Reconnect supervision.

export function backoffDelayMs(attempt: number, baseMs = 500, capMs = 8000): number {
  return Math.min(capMs, baseMs * 2 ** Math.min(attempt, 10));
}

export interface TransportPair {
  control: ControlLineTransport;
  stream: StreamTransport;
}

/**
 * Keeps one SessionView alive across reconnects: on transport loss the
 * view goes stale (the page keeps showing last-known state under a
 * banner) and a fresh session is dialed with exponential backoff.
 */
export class SessionSupervisor {
  readonly view = new SessionView();
  session: OperatorSession | null = null;
  /** Consecutive failed dials; resets once a session goes live. */
  attempts = 0;
  onChange: (() => void) | null = null;

  private timer: ReturnType<typeof setTimeout> | null = null;
  private stopped = false;

  constructor(
    private readonly dial: () => Promise<TransportPair>,
    private readonly opts: Omit<SessionOptions, "view" | "onDown"> = {},
  ) {}

  async start(): Promise<void> {
    await this.connectOnce();
  }

  stop(): void {
    this.stopped = true;
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = null;
    this.session?.close();
  }

  private async connectOnce(): Promise<void> {
    if (this.stopped) return;
    let pair: TransportPair;
    try {
      pair = await this.dial();
    } catch {
      this.scheduleRetry();
      return;
    }
    const session = new OperatorSession(pair.control, pair.stream, {
      ...this.opts,
      view: this.view,
      onDown: () => this.onSessionDown(session),
    });
    this.session = session;
    this.onChange?.();
    await session.start();
    if (this.view.connection === "live") this.attempts = 0;
    this.onChange?.();
  }

  private onSessionDown(session: OperatorSession): void {
    if (this.stopped || session !== this.session) return;
    this.onChange?.();
    this.scheduleRetry();
  }

  private scheduleRetry(): void {
    if (this.stopped || this.timer !== null) return;
    const delay = backoffDelayMs(this.attempts++);
    this.timer = setTimeout(() => {
      this.timer = null;
      void this.connectOnce();
    }, delay);
  }
}
