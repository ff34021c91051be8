// Studio state machine. Mutations are optimistic where cheap (reorder) and
// server-authoritative everywhere it matters: every acknowledged mutation
// syncs the stack from the server summary and refreshes the render. At most
// one render request is in flight; updates arriving meanwhile queue exactly
// one follow-up render.

import { ApiClient, ApiError, GarmentEntry, SessionSummary, TweakJson } from "./api.js";
import { debounce, Debounced } from "./debounce.js";

export interface StudioState {
  sessionId: string | null;
  garments: GarmentEntry[];
  tweaks: TweakJson[];
  renderBytes: Uint8Array | null;
  renderVersion: number;
  checkpoint: string;
  pendingRequest: boolean;
  banner: string | null;
}

export type Listener = (state: StudioState) => void;

type SliderKey = string; // `${kind}:${garment}:${directionId ?? ""}`

export interface StudioOptions {
  debounceMs?: number;
}

export class StudioStore {
  readonly state: StudioState = {
    sessionId: null,
    garments: [],
    tweaks: [],
    renderBytes: null,
    renderVersion: 0,
    checkpoint: "",
    pendingRequest: false,
    banner: null,
  };

  // one live (replaceable) slider tweak per (kind, garment, direction)
  private liveSliders = new Set<SliderKey>();
  private sliderDebouncers = new Map<SliderKey, Debounced<[TweakJson]>>();
  private renderInFlight = false;
  private renderQueued = false;
  private renderCount = 0;
  private listeners: Listener[] = [];
  private debounceMs: number;

  constructor(private api: ApiClient, options: StudioOptions = {}) {
    this.debounceMs = options.debounceMs ?? 250;
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private notify(): void {
    for (const listener of this.listeners) listener(this.state);
  }

  private fail(err: unknown): void {
    this.state.banner =
      err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
    this.state.pendingRequest = false;
    this.notify();
  }

  private sync(summary: SessionSummary): void {
    this.state.sessionId = summary.id;
    this.state.garments = summary.garments;
    this.state.tweaks = summary.tweaks;
    this.state.checkpoint = summary.checkpoint;
    this.notify();
  }

  get rendersInFlight(): number {
    return this.renderInFlight ? 1 : 0;
  }

  get totalRenderRequests(): number {
    return this.renderCount;
  }

  /** Create a session (or attach to an existing id) and show its render. */
  async bindSession(body: Record<string, unknown>, existingId?: string): Promise<void> {
    this.state.banner = null;
    this.state.pendingRequest = true;
    this.notify();
    try {
      const summary = existingId
        ? await this.api.getSession(existingId)
        : await this.api.createSession(body);
      this.sync(summary);
      await this.refreshRender();
    } catch (err) {
      this.fail(err);
      return;
    }
    this.state.pendingRequest = false;
    this.notify();
  }

  async addGarment(garment: Record<string, unknown>): Promise<void> {
    const id = this.requireSession();
    try {
      this.sync(await this.api.addGarment(id, garment));
      await this.refreshRender();
    } catch (err) {
      this.fail(err);
    }
  }

  /** Optimistic drag reorder with rollback; dragging to the same slot is free. */
  async dragReorder(from: number, to: number): Promise<void> {
    const id = this.requireSession();
    const n = this.state.garments.length;
    if (from === to) return; // no-op: no network call
    if (from < 0 || from >= n || to < 0 || to >= n) {
      this.fail(new ApiError(0, "bad_index", `drag ${from}->${to} out of range`));
      return;
    }
    const before = this.state.garments;
    const order = before.map((_, i) => i);
    const [moved] = order.splice(from, 1);
    order.splice(to, 0, moved);
    this.state.garments = order.map((i, at) => ({ ...before[i], index: at }));
    this.notify(); // optimistic view
    try {
      this.sync(await this.api.reorder(id, order));
      await this.refreshRender();
    } catch (err) {
      this.state.garments = before; // rollback
      this.fail(err);
    }
  }

  /**
   * Slider movement: debounced; when it fires, the previous live tweak of the
   * same (kind, garment, direction) is undone first, so the server-side tweak
   * list holds one entry per slider.
   */
  slideTweak(kind: string, garment: number, magnitude: number,
             payload?: Record<string, unknown>): void {
    const key = this.sliderKey(kind, garment, payload);
    let debouncer = this.sliderDebouncers.get(key);
    if (!debouncer) {
      debouncer = debounce((tweak: TweakJson) => {
        void this.commitSlider(key, tweak);
      }, this.debounceMs);
      this.sliderDebouncers.set(key, debouncer);
    }
    debouncer({ kind, magnitude, target_garment: garment, payload });
  }

  /** Keep the current slider value as a permanent tweak; the next slider
   * movement appends a fresh entry instead of replacing it. */
  pinSlider(kind: string, garment: number, payload?: Record<string, unknown>): void {
    const key = this.sliderKey(kind, garment, payload);
    this.sliderDebouncers.get(key)?.flush();
    this.liveSliders.delete(key);
  }

  async undoTweak(): Promise<void> {
    const id = this.requireSession();
    this.liveSliders.clear(); // the undone entry may be any slider's live tweak
    try {
      this.sync(await this.api.undoTweak(id));
      await this.refreshRender();
    } catch (err) {
      this.fail(err);
    }
  }

  private sliderKey(kind: string, garment: number,
                    payload?: Record<string, unknown>): SliderKey {
    const direction = payload && "direction" in payload ? String(payload.direction) : "";
    return `${kind}:${garment}:${direction}`;
  }

  private async commitSlider(key: SliderKey, tweak: TweakJson): Promise<void> {
    const id = this.requireSession();
    try {
      if (this.liveSliders.has(key) && this.state.tweaks.length > 0) {
        this.sync(await this.api.undoTweak(id));
      }
      this.sync(await this.api.addTweak(id, tweak));
      this.liveSliders.add(key);
      await this.refreshRender();
    } catch (err) {
      this.liveSliders.delete(key);
      this.fail(err);
    }
  }

  /** Fetch the current render; concurrent calls collapse to one in flight
   * plus at most one queued follow-up. */
  async refreshRender(): Promise<void> {
    if (this.state.sessionId === null) return;
    if (this.renderInFlight) {
      this.renderQueued = true;
      return;
    }
    this.renderInFlight = true;
    try {
      do {
        this.renderQueued = false;
        this.renderCount += 1;
        const result = await this.api.render(this.state.sessionId);
        this.state.renderBytes = result.bytes;
        this.state.renderVersion += 1;
        this.state.checkpoint = result.checkpoint;
        this.notify();
      } while (this.renderQueued);
    } catch (err) {
      this.fail(err);
    } finally {
      this.renderInFlight = false;
    }
  }

  private requireSession(): string {
    if (this.state.sessionId === null) {
      throw new ApiError(0, "no_session", "bind a session first");
    }
    return this.state.sessionId;
  }
}
