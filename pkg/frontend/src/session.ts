/** Editing session state machine.
 *
 * Owns the slider state, issues debounced /edit calls (at most one in flight;
 * replies are stamped with a sequence number and anything stale is dropped),
 * and keeps a clickable history of applied edits. Displayed alphas always
 * come from server provenance, never from local slider positions.
 */

import { ApiClient, AttributeInfo, EditProvenance, ModelInfo } from "./api.js";

export interface SliderSpec {
  name: string;
  min: number;
  max: number;
}

export interface HistoryEntry {
  sliders: Record<string, number>;
  beta: number | null;
  image: string;
  provenance: EditProvenance;
}

export interface SessionView {
  /** base64 PNG panes; null until the corresponding input exists */
  original: string | null;
  reconstruction: string | null;
  edited: string | null;
  interpolated: string | null;
  provenance: EditProvenance | null;
  error: string | null;
  busy: boolean;
}

const clamp = (v: number, lo: number, hi: number) =>
  Math.min(hi, Math.max(lo, v));

export class EditSession {
  readonly sliders: SliderSpec[] = [];
  readonly history: HistoryEntry[] = [];

  private info!: ModelInfo;
  private source: string | null = null;
  private identityTarget: string | null = null;
  private alphas: Record<string, number> = {};
  private beta = 0;

  private view: SessionView = {
    original: null, reconstruction: null, edited: null,
    interpolated: null, provenance: null, error: null, busy: false,
  };

  private seq = 0; // sequence number of the newest issued /edit
  private debounceTimer: ReturnType<typeof setTimeout> | null = null;
  private listeners: ((v: SessionView) => void)[] = [];

  constructor(
    private api: ApiClient,
    private debounceMs = 150,
  ) {
    if (debounceMs < 150) {
      throw new Error("debounce must be at least 150 ms");
    }
  }

  async start(): Promise<ModelInfo> {
    this.info = await this.api.modelInfo();
    this.sliders.length = 0;
    for (const a of this.info.attributes) {
      this.sliders.push({ name: a.name, min: -a.alpha_max, max: a.alpha_max });
      this.alphas[a.name] = 0;
    }
    return this.info;
  }

  attribute(name: string): AttributeInfo | undefined {
    return this.info.attributes.find((a) => a.name === name);
  }

  onChange(fn: (v: SessionView) => void): void {
    this.listeners.push(fn);
  }

  getView(): SessionView {
    return { ...this.view };
  }

  private emit(patch: Partial<SessionView>): void {
    this.view = { ...this.view, ...patch };
    for (const fn of this.listeners) fn(this.getView());
  }

  /** Select a source image (gallery pick or upload). Resets sliders and
   * renders the untouched reconstruction pane. */
  async selectSource(imageB64: string): Promise<void> {
    this.source = imageB64;
    for (const k of Object.keys(this.alphas)) this.alphas[k] = 0;
    this.emit({ original: imageB64, edited: null, provenance: null, error: null });
    const fp = await this.api.encode(imageB64);
    const rec = await this.api.decode(fp.f_t, fp.f_p);
    this.emit({ reconstruction: rec.image });
    // a zero-edit pass through /edit must reproduce the reconstruction
    this.scheduleEdit();
  }

  setIdentityTarget(imageB64: string | null): void {
    this.identityTarget = imageB64;
    if (imageB64 !== null) this.scheduleInterpolate();
  }

  /** Move one attribute slider. The value is clamped to the served
   * [-alpha_max, alpha_max] range before anything leaves the client. */
  setAlpha(name: string, value: number): void {
    const spec = this.sliders.find((s) => s.name === name);
    if (!spec) throw new Error(`unknown attribute ${name}`);
    this.alphas[name] = clamp(value, spec.min, spec.max);
    this.scheduleEdit();
  }

  setBeta(value: number): void {
    this.beta = clamp(value, 0, 1);
    if (this.identityTarget !== null) this.scheduleInterpolate();
  }

  getAlpha(name: string): number {
    return this.alphas[name] ?? 0;
  }

  getBeta(): number {
    return this.beta;
  }

  /** Debounced trigger: collapses a drag into one request per quiet period. */
  private scheduleEdit(): void {
    if (this.source === null) return;
    if (this.debounceTimer !== null) clearTimeout(this.debounceTimer);
    this.debounceTimer = setTimeout(() => {
      this.debounceTimer = null;
      void this.issueEdit();
    }, this.debounceMs);
  }

  /** Issue the /edit for the current slider state. Stamped with a sequence
   * number; by the time the reply lands a newer request may have been sent,
   * in which case the reply is discarded unseen. */
  private async issueEdit(): Promise<void> {
    if (this.source === null) return;
    const mySeq = ++this.seq;
    const sliders = { ...this.alphas };
    const payload = {
      image: this.source,
      edits: Object.entries(sliders)
        .filter(([, a]) => a !== 0)
        .map(([attr, alpha]) => ({ attr, alpha })),
    };
    this.emit({ busy: true });
    try {
      const res = await this.api.edit(payload);
      if (mySeq !== this.seq) return; // stale: a newer edit is in flight
      this.history.push({
        sliders, beta: null, image: res.image, provenance: res.provenance,
      });
      this.emit({
        edited: res.image, provenance: res.provenance,
        error: null, busy: false,
      });
    } catch (err) {
      if (mySeq !== this.seq) return;
      this.emit({ error: String(err), busy: false });
    }
  }

  private interpSeq = 0;

  private scheduleInterpolate(): void {
    void this.issueInterpolate();
  }

  private async issueInterpolate(): Promise<void> {
    if (this.source === null || this.identityTarget === null) return;
    const mySeq = ++this.interpSeq;
    try {
      const res = await this.api.interpolate(this.source, this.identityTarget, this.beta);
      if (mySeq !== this.interpSeq) return;
      this.emit({ interpolated: res.image, error: null });
    } catch (err) {
      if (mySeq !== this.interpSeq) return;
      this.emit({ error: String(err) });
    }
  }

  /** Restore a history entry: put the sliders back and reissue the identical
   * request (the service is idempotent, so the same image comes back). */
  restore(index: number): void {
    const entry = this.history[index];
    if (!entry) throw new Error(`no history entry ${index}`);
    Object.assign(this.alphas, entry.sliders);
    this.scheduleEdit();
  }

  /** Wait for the debounce window and any in-flight request to settle.
   * Test/automation helper; the interactive UI never needs it. */
  async settle(): Promise<void> {
    while (this.debounceTimer !== null || this.view.busy) {
      await new Promise((r) => setTimeout(r, 10));
    }
  }
}
