/** Explorer state: label + seed + slider grid, shareable via URL query. */

import type { GenerateRequest, LatentEcho } from "./api.js";

/** Hard bound on any submitted latent value (the service clamps there too). */
export const SLIDER_LIMIT = 4.0;
export const TRAVERSE_MIN = -3.0;
export const TRAVERSE_MAX = 3.0;
export const TRAVERSE_STEPS = 7;
export const HISTORY_LIMIT = 50;

export interface ExplorerState {
  /** class index (categorical) or 0/1 vector (multilabel) */
  label: number | number[];
  seed: number;
  /** moved sliders only, keyed "layer:dim"; a slider at 0 means "no override"
   * so that resetting reproduces seed-only generation */
  sliders: Record<string, number>;
}

export interface HistoryEntry {
  state: ExplorerState;
  thumbnail: string;
  latents: LatentEcho[];
}

export function sliderKey(layer: number, dim: number): string {
  return `${layer}:${dim}`;
}

export function parseSliderKey(key: string): { layer: number; dim: number } {
  const [layer, dim] = key.split(":").map(Number);
  return { layer: layer ?? 0, dim: dim ?? 0 };
}

export function clampSlider(value: number): number {
  if (!Number.isFinite(value)) return 0;
  return Math.min(SLIDER_LIMIT, Math.max(-SLIDER_LIMIT, value));
}

/** Value represented by frame `i` of a traversal strip. */
export function stripValue(
  i: number,
  steps: number,
  min: number = TRAVERSE_MIN,
  max: number = TRAVERSE_MAX,
): number {
  return min + ((max - min) * i) / (steps - 1);
}

export function initialState(label: number | number[], seed: number): ExplorerState {
  return { label, seed, sliders: {} };
}

/** Set one slider, clamped; value 0 clears the override. Returns a new state. */
export function withSlider(
  state: ExplorerState,
  layer: number,
  dim: number,
  value: number,
): ExplorerState {
  const sliders = { ...state.sliders };
  const clamped = clampSlider(value);
  if (clamped === 0) {
    delete sliders[sliderKey(layer, dim)];
  } else {
    sliders[sliderKey(layer, dim)] = clamped;
  }
  return { ...state, sliders };
}

export function resetSliders(state: ExplorerState): ExplorerState {
  return { ...state, sliders: {} };
}

/** The generate payload for a state; override order is (layer, dim) so equal
 * states serialize identically. */
export function buildGenerateRequest(state: ExplorerState): GenerateRequest {
  const req: GenerateRequest = { label: state.label, seed: state.seed };
  const keys = Object.keys(state.sliders).sort((a, b) => {
    const pa = parseSliderKey(a);
    const pb = parseSliderKey(b);
    return pa.layer - pb.layer || pa.dim - pb.dim;
  });
  if (keys.length > 0) {
    req.overrides = keys.map((k) => {
      const { layer, dim } = parseSliderKey(k);
      return { layer, dim, value: state.sliders[k] ?? 0 };
    });
  }
  return req;
}

export function toQuery(state: ExplorerState): string {
  const params = new URLSearchParams();
  params.set(
    "label",
    Array.isArray(state.label) ? state.label.join(",") : String(state.label),
  );
  params.set("seed", String(state.seed));
  for (const key of Object.keys(state.sliders).sort()) {
    params.append("s", `${key}:${state.sliders[key]}`);
  }
  return params.toString();
}

export function fromQuery(query: string): ExplorerState {
  const params = new URLSearchParams(query);
  const rawLabel = params.get("label") ?? "0";
  // a multilabel vector is always comma-joined ("1,0,1"); a bare integer is a
  // class index
  const label = rawLabel.includes(",")
    ? rawLabel.split(",").map((v) => Number(v) || 0)
    : Number(rawLabel) || 0;
  const seed = Number(params.get("seed")) || 0;
  let state = initialState(label, seed);
  for (const entry of params.getAll("s")) {
    const [layer, dim, value] = entry.split(":");
    state = withSlider(state, Number(layer) || 0, Number(dim) || 0, Number(value) || 0);
  }
  return state;
}

export function pushHistory(
  history: HistoryEntry[],
  entry: HistoryEntry,
  limit: number = HISTORY_LIMIT,
): HistoryEntry[] {
  const next = [...history, entry];
  return next.length > limit ? next.slice(next.length - limit) : next;
}
