/** DOM explorer: meta-driven slider grid, live generation, traversal strips.
 *
 * Concurrency: single UI thread; slider drags collapse into one generate call
 * per debounce window, and every request carries a sequence number so a late
 * response from a superseded request is dropped instead of overwriting a
 * newer image.
 */

import type { LatentEcho, ModelMeta, ServiceClient } from "./api.js";
import { ApiError } from "./api.js";
import { debounce, type Debounced } from "./debounce.js";
import {
  buildGenerateRequest,
  clampSlider,
  fromQuery,
  type ExplorerState,
  type HistoryEntry,
  HISTORY_LIMIT,
  initialState,
  pushHistory,
  resetSliders,
  SLIDER_LIMIT,
  sliderKey,
  toQuery,
  TRAVERSE_MAX,
  TRAVERSE_MIN,
  TRAVERSE_STEPS,
  withSlider,
} from "./state.js";

export interface ExplorerOptions {
  debounceMs?: number;
  steps?: number;
  historyLimit?: number;
}

const DEFAULT_DEBOUNCE_MS = 150;

export class Explorer {
  readonly root: HTMLElement;
  private readonly client: ServiceClient;
  private readonly debounceMs: number;
  private readonly steps: number;
  private readonly historyLimit: number;

  private meta: ModelMeta | null = null;
  private state: ExplorerState = initialState(0, 0);
  private lastLatents: LatentEcho[] = [];
  private history: HistoryEntry[] = [];
  private genSeq = 0;
  private travSeq = 0;
  private readonly scheduleGenerate: Debounced<[]>;

  constructor(root: HTMLElement, client: ServiceClient, opts: ExplorerOptions = {}) {
    this.root = root;
    this.client = client;
    this.debounceMs = opts.debounceMs ?? DEFAULT_DEBOUNCE_MS;
    this.steps = opts.steps ?? TRAVERSE_STEPS;
    this.historyLimit = opts.historyLimit ?? HISTORY_LIMIT;
    this.scheduleGenerate = debounce(() => void this.requestImage(), this.debounceMs);
  }

  getState(): ExplorerState {
    return this.state;
  }

  getLastLatents(): LatentEcho[] {
    return this.lastLatents;
  }

  getHistory(): HistoryEntry[] {
    return this.history;
  }

  /** Fetch model geometry and build the UI; failures leave a retry banner. */
  async init(): Promise<void> {
    try {
      this.meta = await this.client.meta();
    } catch (err) {
      this.renderRetryBanner(err);
      return;
    }
    this.state = initialState(this.meta.label_kind === "multilabel"
      ? new Array<number>(this.meta.K).fill(0)
      : 0, this.state.seed);
    this.render(this.meta);
    await this.requestImage();
  }

  /** Restore a shared state (URL query string) and regenerate. */
  applyQuery(query: string): void {
    if (!this.meta) return;
    this.loadState(fromQuery(query));
    this.scheduleGenerate();
  }

  currentQuery(): string {
    return toQuery(this.state);
  }

  loadState(state: ExplorerState): void {
    this.state = state;
    this.syncControls();
  }

  // ---- rendering -----------------------------------------------------

  private renderRetryBanner(err: unknown): void {
    const message = err instanceof Error ? err.message : String(err);
    this.root.innerHTML = "";
    const banner = el("div", "banner");
    banner.append(
      el("span", "banner-text", `service unreachable: ${message}`),
      button("retry", "Retry", () => void this.init()),
    );
    this.root.append(banner);
  }

  private render(meta: ModelMeta): void {
    this.root.innerHTML = "";
    const header = el("div", "header");
    header.append(this.renderLabelPicker(meta), this.renderSeedControls());

    const grid = this.renderSliderGrid(meta);
    const view = el("div", "view");
    const preview = el("img", "preview") as HTMLImageElement;
    preview.alt = "generated image";
    const strip = el("div", "strip");
    const historyRow = el("div", "history");
    view.append(preview, strip, historyRow);

    const layout = el("div", "layout");
    layout.append(grid, view);

    const toast = el("div", "toast");
    toast.hidden = true;
    const status = el("div", "status");

    this.root.append(header, layout, toast, status);
  }

  private renderLabelPicker(meta: ModelMeta): HTMLElement {
    const picker = el("div", "label-picker");
    const names =
      meta.attribute_names ??
      Array.from({ length: meta.K }, (_, i) => `class ${i}`);
    if (meta.label_kind === "categorical") {
      names.forEach((name, i) => {
        const label = el("label", "label-option");
        const radio = el("input") as HTMLInputElement;
        radio.type = "radio";
        radio.name = "label";
        radio.value = String(i);
        radio.checked = this.state.label === i;
        radio.addEventListener("change", () => {
          this.state = { ...this.state, label: i };
          this.scheduleGenerate();
        });
        label.append(radio, document.createTextNode(name));
        picker.append(label);
      });
    } else {
      names.forEach((name, i) => {
        const label = el("label", "label-option");
        const box = el("input") as HTMLInputElement;
        box.type = "checkbox";
        box.value = String(i);
        box.addEventListener("change", () => {
          const vec = Array.isArray(this.state.label)
            ? [...this.state.label]
            : new Array<number>(meta.K).fill(0);
          vec[i] = box.checked ? 1 : 0;
          this.state = { ...this.state, label: vec };
          this.scheduleGenerate();
        });
        label.append(box, document.createTextNode(name));
        picker.append(label);
      });
    }
    return picker;
  }

  private renderSeedControls(): HTMLElement {
    const controls = el("div", "seed-controls");
    const seed = el("input", "seed") as HTMLInputElement;
    seed.type = "number";
    seed.value = String(this.state.seed);
    seed.addEventListener("change", () => {
      this.state = { ...this.state, seed: Number(seed.value) || 0 };
      this.scheduleGenerate();
    });
    controls.append(
      seed,
      button("reroll", "Reroll", () => {
        this.state = { ...this.state, seed: Math.floor(Math.random() * 2 ** 31) };
        seed.value = String(this.state.seed);
        this.scheduleGenerate();
      }),
      button("reset", "Reset sliders", () => {
        this.state = resetSliders(this.state);
        this.syncControls();
        this.scheduleGenerate();
      }),
      button("share", "Copy link", () => {
        const url = new URL(window.location.href);
        url.search = this.currentQuery();
        window.history.replaceState(null, "", url.toString());
        this.setStatus(`link updated: ?${this.currentQuery()}`);
      }),
    );
    return controls;
  }

  private renderSliderGrid(meta: ModelMeta): HTMLElement {
    const grid = el("div", "grid");
    const width = Math.max(...meta.q);
    for (let layer = 0; layer < meta.L; layer++) {
      const row = el("div", "grid-row");
      for (let dim = 0; dim < width; dim++) {
        const cell = el("div", "cell");
        const active = dim < (meta.q[layer] ?? 0);
        const sweep = button("sweep", `${layer}:${dim}`, () =>
          void this.renderTraversal(layer, dim),
        );
        sweep.disabled = !active;
        const slider = el("input", "slider") as HTMLInputElement;
        slider.type = "range";
        slider.min = String(-SLIDER_LIMIT);
        slider.max = String(SLIDER_LIMIT);
        slider.step = "0.05";
        slider.value = "0";
        slider.disabled = !active;
        slider.dataset.layer = String(layer);
        slider.dataset.dim = String(dim);
        slider.addEventListener("input", () =>
          this.onSliderInput(layer, dim, Number(slider.value)),
        );
        cell.append(sweep, slider);
        row.append(cell);
      }
      grid.append(row);
    }
    return grid;
  }

  // ---- behavior ------------------------------------------------------

  onSliderInput(layer: number, dim: number, value: number): void {
    this.state = withSlider(this.state, layer, dim, value);
    this.scheduleGenerate();
  }

  /** Issue a generate request now; late responses lose to newer ones. */
  async requestImage(): Promise<void> {
    const seq = ++this.genSeq;
    try {
      const resp = await this.client.generate(buildGenerateRequest(this.state));
      if (seq !== this.genSeq) return; // superseded while in flight
      const image = resp.images[0];
      if (image === undefined) return;
      this.showPreview(image);
      this.lastLatents = resp.latents;
      this.history = pushHistory(
        this.history,
        { state: this.state, thumbnail: image, latents: resp.latents },
        this.historyLimit,
      );
      this.renderHistory();
      this.setStatus(`seed ${resp.seed ?? "?"} · ${resp.checkpoint_hash.slice(0, 12)}`);
    } catch (err) {
      if (seq === this.genSeq) this.toast(err);
    }
  }

  /** Sweep one coordinate over the standard range and show the strip. */
  async renderTraversal(layer: number, dim: number): Promise<void> {
    const seq = ++this.travSeq;
    try {
      const resp = await this.client.traverse({
        label: this.state.label,
        seed: this.state.seed,
        layer,
        dim,
        min: TRAVERSE_MIN,
        max: TRAVERSE_MAX,
        steps: this.steps,
      });
      if (seq !== this.travSeq) return;
      const strip = this.root.querySelector<HTMLElement>(".strip");
      if (!strip) return;
      strip.innerHTML = "";
      resp.images.forEach((image, i) => {
        const frame = el("img", "frame") as HTMLImageElement;
        frame.src = `data:image/png;base64,${image}`;
        const value = resp.values[i] ?? 0;
        frame.title = `${layer}:${dim} = ${value.toFixed(2)}`;
        // clicking a frame adopts its coordinate value
        frame.addEventListener("click", () => {
          this.state = withSlider(this.state, layer, dim, value);
          this.syncControls();
          this.scheduleGenerate();
        });
        strip.append(frame);
      });
    } catch (err) {
      if (seq === this.travSeq) this.toast(err);
    }
  }

  // ---- helpers -------------------------------------------------------

  private showPreview(image: string): void {
    const preview = this.root.querySelector<HTMLImageElement>(".preview");
    if (preview) preview.src = `data:image/png;base64,${image}`;
  }

  private renderHistory(): void {
    const rowEl = this.root.querySelector<HTMLElement>(".history");
    if (!rowEl) return;
    rowEl.innerHTML = "";
    for (const entry of this.history.slice(-8)) {
      const thumb = el("img", "thumb") as HTMLImageElement;
      thumb.src = `data:image/png;base64,${entry.thumbnail}`;
      thumb.addEventListener("click", () => {
        this.loadState(entry.state);
        this.scheduleGenerate();
      });
      rowEl.append(thumb);
    }
  }

  /** Push the current state into the DOM controls. */
  private syncControls(): void {
    for (const slider of this.root.querySelectorAll<HTMLInputElement>("input.slider")) {
      const key = sliderKey(Number(slider.dataset.layer), Number(slider.dataset.dim));
      slider.value = String(this.state.sliders[key] ?? 0);
    }
    const seed = this.root.querySelector<HTMLInputElement>("input.seed");
    if (seed) seed.value = String(this.state.seed);
    if (!Array.isArray(this.state.label)) {
      const radio = this.root.querySelector<HTMLInputElement>(
        `input[type=radio][value="${this.state.label}"]`,
      );
      if (radio) radio.checked = true;
    } else {
      this.state.label.forEach((v, i) => {
        const box = this.root.querySelector<HTMLInputElement>(
          `input[type=checkbox][value="${i}"]`,
        );
        if (box) box.checked = v >= 0.5;
      });
    }
  }

  private toast(err: unknown): void {
    const node = this.root.querySelector<HTMLElement>(".toast");
    if (!node) return;
    node.textContent =
      err instanceof ApiError ? err.message
        : err instanceof Error ? err.message
          : String(err);
    node.hidden = false;
  }

  private setStatus(text: string): void {
    const node = this.root.querySelector<HTMLElement>(".status");
    if (node) node.textContent = text;
  }
}

function el(tag: string, className?: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function button(className: string, text: string, onClick: () => void): HTMLButtonElement {
  const node = el("button", className, text) as HTMLButtonElement;
  node.type = "button";
  node.addEventListener("click", onClick);
  return node;
}
