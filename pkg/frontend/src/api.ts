/** Thin typed client for the generation service's HTTP API. */

export interface ModelMeta {
  L: number;
  q: number[];
  base_dim: number;
  image_size: number;
  label_kind: "categorical" | "multilabel";
  K: number;
  attribute_names: string[] | null;
  checkpoint_hash: string;
}

export interface LatentOverride {
  layer: number;
  dim: number;
  value: number;
}

export interface LatentEcho {
  layer_codes: number[][];
  base_noise: number[];
}

export interface GenerateRequest {
  label: number | number[];
  seed?: number;
  overrides?: LatentOverride[];
  latent?: LatentEcho[];
  count?: number;
}

export interface GenerateResponse {
  images: string[]; // base64 PNG
  format: string;
  latents: LatentEcho[];
  seed: number | null;
  checkpoint_hash: string;
}

export interface TraverseRequest {
  label: number | number[];
  seed?: number;
  layer: number;
  dim: number;
  min?: number;
  max?: number;
  steps?: number;
}

export interface TraverseResponse {
  images: string[];
  format: string;
  values: number[];
  seed: number | null;
  checkpoint_hash: string;
}

interface FieldError {
  field: string;
  message: string;
}

/** Error carrying the server's structured detail when one was provided. */
export class ApiError extends Error {
  readonly status: number;
  readonly fields: FieldError[];

  constructor(status: number, fields: FieldError[], message: string) {
    super(message);
    this.name = "ApiError";
    this.status = status;
    this.fields = fields;
  }
}

function describeDetail(status: number, detail: unknown): {
  fields: FieldError[];
  message: string;
} {
  if (Array.isArray(detail)) {
    const fields = detail.filter(
      (d): d is FieldError =>
        typeof d === "object" && d !== null && "field" in d && "message" in d,
    );
    if (fields.length > 0) {
      const message = fields.map((f) => `${f.field}: ${f.message}`).join("; ");
      return { fields, message };
    }
  }
  if (typeof detail === "string" && detail.length > 0) {
    return { fields: [], message: detail };
  }
  return { fields: [], message: `request failed with status ${status}` };
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ServiceClient {
  readonly baseUrl: string;
  private readonly fetchFn: FetchLike;

  constructor(baseUrl: string, fetchFn?: FetchLike) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    // bind so a bare global fetch keeps its expected receiver
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(this.baseUrl + path, init);
    if (!resp.ok) {
      let detail: unknown = null;
      try {
        detail = ((await resp.json()) as { detail?: unknown }).detail;
      } catch {
        // non-JSON error body: fall through to the generic message
      }
      const { fields, message } = describeDetail(resp.status, detail);
      throw new ApiError(resp.status, fields, message);
    }
    return (await resp.json()) as T;
  }

  meta(): Promise<ModelMeta> {
    return this.request<ModelMeta>("/model/meta");
  }

  generate(req: GenerateRequest): Promise<GenerateResponse> {
    return this.request<GenerateResponse>("/generate", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(req),
    });
  }

  traverse(req: TraverseRequest): Promise<TraverseResponse> {
    return this.request<TraverseResponse>("/traverse", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(req),
    });
  }
}
