/** Typed client for the d2ae HTTP service. Images travel as base64 PNG
 * strings; feature vectors as plain number arrays. Every response carries
 * the server's checkpoint hash. */

export interface AttributeInfo {
  name: string;
  source: "T" | "P";
  alpha_max: number;
  probe_accuracy: number;
}

export interface ModelInfo {
  dims: { f_t: number; f_p: number };
  n_id: number;
  input_size: number;
  attributes: AttributeInfo[];
  checkpoint: string;
}

export interface EncodeResult {
  f_t: number[];
  f_p: number[];
  checkpoint: string;
}

export interface EditProvenance {
  attribute_edits: [string, number][];
  beta: number | null;
}

export interface EditResult {
  image: string;
  provenance: EditProvenance;
  checkpoint: string;
}

export interface ImageResult {
  image: string;
  checkpoint: string;
}

export interface EditPayload {
  image: string;
  edits: { attr: string; alpha: number }[];
  identity?: { image_b: string; beta: number };
}

/** Thin fetch wrapper; `fetchFn` is injectable so tests can drive the client
 * with scripted, reordered, or failing responses. */
export class ApiClient {
  constructor(
    private baseUrl: string = "",
    private fetchFn: typeof fetch = fetch,
  ) {}

  private async call<T>(path: string, body?: unknown): Promise<T> {
    const res = await this.fetchFn(this.baseUrl + path, {
      method: body === undefined ? "GET" : "POST",
      headers: body === undefined ? undefined : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const data = await res.json();
    if (!res.ok) {
      throw new Error(`${path} failed (${res.status}): ${data.detail ?? "unknown"}`);
    }
    return data as T;
  }

  modelInfo(): Promise<ModelInfo> {
    return this.call<ModelInfo>("/model/info");
  }

  gallery(): Promise<{ images: string[]; checkpoint: string }> {
    return this.call("/gallery");
  }

  encode(image: string): Promise<EncodeResult> {
    return this.call("/encode", { image });
  }

  decode(f_t: number[], f_p: number[]): Promise<ImageResult> {
    return this.call("/decode", { f_t, f_p });
  }

  edit(payload: EditPayload): Promise<EditResult> {
    return this.call("/edit", payload);
  }

  interpolate(image_a: string, image_b: string, beta: number): Promise<ImageResult> {
    return this.call("/interpolate", { image_a, image_b, beta });
  }
}

/** FNV-1a over a string; cheap stable fingerprint for comparing rendered
 * panes without pulling pixel data back out of a canvas. */
export function pixelHash(b64png: string): string {
  let h = 0x811c9dc5;
  for (let i = 0; i < b64png.length; i++) {
    h ^= b64png.charCodeAt(i);
    h = Math.imul(h, 0x01000193);
  }
  return (h >>> 0).toString(16).padStart(8, "0");
}
