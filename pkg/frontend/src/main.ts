/**
 * Page wiring: websocket transports, canvas rendering, and the DOM
 * panel. Every control position is written from the acknowledged
 * server state on each render pass; user input only ever produces
 * outgoing messages.
 */

import { SessionSupervisor, type ControlLineTransport, type StreamTransport, type TransportPair } from "./session.js";
import type { SessionView } from "./state.js";
import { MODES, type Band, type MixingRangesJson, type ModeName } from "./protocol.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

// -- websocket transports -----------------------------------------------------

function openControl(url: string): Promise<ControlLineTransport> {
  return new Promise((resolve, reject) => {
    const ws = new WebSocket(url);
    let onMessage: (line: string) => void = () => {};
    let onClose: () => void = () => {};
    ws.onmessage = (ev) => onMessage(String(ev.data));
    ws.onclose = () => onClose();
    ws.onerror = () => ws.close();
    ws.onopen = () =>
      resolve({
        send: (line) => ws.send(line),
        close: () => ws.close(),
        onMessage: (h) => (onMessage = h),
        onClose: (h) => (onClose = h),
      });
    setTimeout(() => reject(new Error(`timed out dialing ${url}`)), 4000);
  });
}

function openStream(url: string): Promise<StreamTransport> {
  return new Promise((resolve, reject) => {
    const ws = new WebSocket(url);
    ws.binaryType = "arraybuffer";
    let onMessage: (chunk: Uint8Array) => void = () => {};
    let onClose: () => void = () => {};
    ws.onmessage = (ev) => onMessage(new Uint8Array(ev.data as ArrayBuffer));
    ws.onclose = () => onClose();
    ws.onerror = () => ws.close();
    ws.onopen = () =>
      resolve({
        close: () => ws.close(),
        onMessage: (h) => (onMessage = h),
        onClose: (h) => (onClose = h),
      });
    setTimeout(() => reject(new Error(`timed out dialing ${url}`)), 4000);
  });
}

// -- canvas rendering ---------------------------------------------------------

/** Latest-wins JPEG painter: while one decode is in flight, newer
 * frames just replace the pending bytes. */
function makePainter(canvas: HTMLCanvasElement): (bytes: Uint8Array) => void {
  const ctx = canvas.getContext("2d");
  let busy = false;
  let pending: Uint8Array | null = null;
  async function paint(bytes: Uint8Array): Promise<void> {
    if (busy) {
      pending = bytes;
      return;
    }
    busy = true;
    try {
      const bitmap = await createImageBitmap(new Blob([bytes.slice()], { type: "image/jpeg" }));
      if (canvas.width !== bitmap.width) canvas.width = bitmap.width;
      if (canvas.height !== bitmap.height) canvas.height = bitmap.height;
      ctx?.drawImage(bitmap, 0, 0);
      bitmap.close();
    } catch {
      // an undecodable frame is dropped; the next one repaints
    } finally {
      busy = false;
      if (pending) {
        const next = pending;
        pending = null;
        void paint(next);
      }
    }
  }
  return (bytes) => void paint(bytes);
}

// -- panel sync ---------------------------------------------------------------

const bandIds: Record<Band, [string, string]> = {
  coarse: ["coarse-lo", "coarse-hi"],
  middle: ["middle-lo", "middle-hi"],
  fine: ["fine-lo", "fine-hi"],
};

function readRanges(view: SessionView): MixingRangesJson | null {
  const current = view.state?.mixing_ranges;
  if (!current) return null;
  const pick = (id: string) => Number(el<HTMLInputElement>(id).value);
  return {
    num_ws: current.num_ws,
    coarse: [pick("coarse-lo"), pick("coarse-hi")],
    middle: [pick("middle-lo"), pick("middle-hi")],
    fine: [pick("fine-lo"), pick("fine-hi")],
    static_rows: current.static_rows,
  };
}

function boot(): void {
  const banner = el<HTMLDivElement>("banner");
  const toast = el<HTMLDivElement>("toast");
  const stats = el<HTMLDivElement>("stats");
  const modeSelect = el<HTMLSelectElement>("mode");
  const psiSlider = el<HTMLInputElement>("psi");
  const psiReadout = el<HTMLSpanElement>("psi-val");
  const layersDiv = el<HTMLDivElement>("layers");
  const staticDiv = el<HTMLDivElement>("static-rows");
  const endpoint = el<HTMLInputElement>("endpoint");
  const paintFrame = makePainter(el<HTMLCanvasElement>("output"));
  const paintPreview = makePainter(el<HTMLCanvasElement>("preview"));

  for (const mode of MODES) {
    const option = document.createElement("option");
    option.value = mode;
    option.textContent = mode;
    modeSelect.appendChild(option);
  }

  const params = new URLSearchParams(location.search);
  endpoint.value = params.get("ws") ?? "ws://127.0.0.1:7463";

  const supervisor = new SessionSupervisor(async (): Promise<TransportPair> => {
    const base = endpoint.value.replace(/\/+$/, "");
    const [control, stream] = await Promise.all([
      openControl(`${base}/control`),
      openStream(`${base}/stream`),
    ]);
    return { control, stream };
  });
  const view = supervisor.view;
  const panel = () => supervisor.session?.panel ?? null;

  let layersBuilt = ""; // signature of the currently rendered layer table

  function renderLayers(): void {
    const table = panel()?.layerTable ?? [];
    const active = view.state?.layers ?? {};
    const signature = table.map((r) => r.name).join(",");
    if (signature !== layersBuilt) {
      layersBuilt = signature;
      layersDiv.replaceChildren();
      for (const row of table) {
        const line = document.createElement("label");
        line.className = "layer-row";
        const check = document.createElement("input");
        check.type = "checkbox";
        check.dataset.layer = row.name;
        check.onchange = () => void panel()?.toggleLayer(row.name, check.checked);
        const slider = document.createElement("input");
        slider.type = "range";
        slider.min = "0";
        slider.max = "2";
        slider.step = "0.01";
        slider.dataset.alpha = row.name;
        slider.oninput = () => panel()?.dragAlpha(row.name, Number(slider.value));
        const name = document.createElement("span");
        name.textContent = `${row.name} (${row.channels}ch ${row.rows}x${row.cols})`;
        const value = document.createElement("span");
        value.dataset.alphaVal = row.name;
        line.append(check, name, slider, value);
        layersDiv.appendChild(line);
      }
    }
    const zDim = view.state?.z_dim;
    for (const row of table) {
      const check = layersDiv.querySelector<HTMLInputElement>(`input[data-layer="${row.name}"]`);
      const slider = layersDiv.querySelector<HTMLInputElement>(`input[data-alpha="${row.name}"]`);
      const value = layersDiv.querySelector<HTMLSpanElement>(`span[data-alpha-val="${row.name}"]`);
      const weight = active[row.name];
      // the engine refuses layers narrower or wider than the latent
      const unusable = zDim !== undefined && row.channels !== zDim;
      if (check) {
        check.checked = weight !== undefined;
        check.disabled = unusable;
      }
      if (slider) {
        slider.disabled = unusable || weight === undefined;
        slider.value = String(weight ?? 1);
      }
      if (value) value.textContent = weight === undefined ? "" : weight.toFixed(2);
    }
  }

  let staticBuilt = -1;

  function renderStaticRows(): void {
    const ranges = view.state?.mixing_ranges;
    if (!ranges) return;
    if (ranges.num_ws !== staticBuilt) {
      staticBuilt = ranges.num_ws;
      staticDiv.replaceChildren();
      for (let row = 0; row < ranges.num_ws; row++) {
        const label = document.createElement("label");
        const box = document.createElement("input");
        box.type = "checkbox";
        box.dataset.row = String(row);
        box.onchange = () => void panel()?.toggleStaticRow(row, box.checked);
        label.append(box, document.createTextNode(String(row)));
        staticDiv.appendChild(label);
      }
    }
    const staticRows = new Set(ranges.static_rows);
    staticDiv.querySelectorAll<HTMLInputElement>("input[data-row]").forEach((box) => {
      box.checked = staticRows.has(Number(box.dataset.row));
    });
  }

  function render(): void {
    banner.dataset.state = view.connection;
    banner.textContent =
      view.connection === "live"
        ? ""
        : view.connection === "connecting"
          ? "connecting..."
          : "connection lost; showing last known state, reconnecting";
    toast.textContent = panel()?.lastError ?? "";

    const s = view.state;
    if (s) {
      modeSelect.value = s.mode;
      psiSlider.value = String(s.psi);
      psiReadout.textContent = s.psi.toFixed(2);
      el<HTMLInputElement>("latent-smoothing").value = String(s.latent_smoothing);
      el<HTMLInputElement>("gesture-smoothing").value = String(s.gesture_smoothing);
      for (const band of ["coarse", "middle", "fine"] as Band[]) {
        const [loId, hiId] = bandIds[band];
        const input = el<HTMLInputElement>(loId);
        if (document.activeElement !== input) input.value = String(s.mixing_ranges[band][0]);
        const hiInput = el<HTMLInputElement>(hiId);
        if (document.activeElement !== hiInput) hiInput.value = String(s.mixing_ranges[band][1]);
      }
      stats.textContent =
        `fps ${view.fps().toFixed(1)}  in ${s.counters.frames_in}` +
        `  out ${s.counters.frames_out}  dropped ${s.counters.frames_dropped}` +
        `  seed ${s.static_seed}  proto ${view.protocolVersion ?? "?"}`;
    }
    renderLayers();
    renderStaticRows();
  }

  function attach(): void {
    const session = supervisor.session;
    if (!session) return;
    session.onState = render;
    session.onFrame = () => {
      if (view.frame) paintFrame(view.frame);
    };
    session.onPreview = () => {
      if (view.preview) paintPreview(view.preview);
    };
  }

  supervisor.onChange = () => {
    attach();
    render();
  };

  modeSelect.onchange = () => void panel()?.setMode(modeSelect.value as ModeName);
  psiSlider.oninput = () => panel()?.dragPsi(Number(psiSlider.value));
  el<HTMLInputElement>("latent-smoothing").oninput = (ev) =>
    panel()?.dragSmoothing("latent_smoothing", Number((ev.target as HTMLInputElement).value));
  el<HTMLInputElement>("gesture-smoothing").oninput = (ev) =>
    panel()?.dragSmoothing("gesture_smoothing", Number((ev.target as HTMLInputElement).value));
  el<HTMLButtonElement>("apply-ranges").onclick = () => {
    const ranges = readRanges(view);
    if (ranges) void panel()?.applyRanges(ranges);
    render();
  };
  el<HTMLButtonElement>("reseed").onclick = () => {
    const seed = Number(el<HTMLInputElement>("seed").value);
    void panel()?.reseed(seed);
    render();
  };
  el<HTMLButtonElement>("connect").onclick = () => {
    supervisor.stop();
    location.search = `?ws=${encodeURIComponent(endpoint.value)}`;
  };

  setInterval(render, 500); // fps readout and banner keep moving between events
  void supervisor.start();
}

boot();
