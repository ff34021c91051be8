// DOM layer: renders the studio panels from store state and forwards user
// actions. All layout lives in index.html / styles; this file only wires.

import { ApiClient, DirectionInfo } from "./api.js";
import { PRESET_GARMENTS, PRESET_PEOPLE } from "./presets.js";
import { StudioStore } from "./store.js";

const LABEL_NAMES: Record<number, string> = {
  0: "background", 1: "skin", 2: "hair", 3: "top", 4: "bottom",
};

export class StudioApp {
  private store: StudioStore;
  private api: ApiClient;
  private directions: DirectionInfo[] = [];
  private renderUrl: string | null = null;
  private lastRenderVersion = -1;
  private dragFrom: number | null = null;

  constructor(private root: HTMLElement, serverUrl: string) {
    this.api = new ApiClient(serverUrl);
    this.store = new StudioStore(this.api);
    this.store.subscribe(() => this.renderDom());
    this.buildSkeleton();
  }

  async start(): Promise<void> {
    try {
      this.directions = await this.api.directions();
    } catch {
      this.directions = []; // latent sliders hidden until the server lists some
    }
    const first = Object.values(PRESET_PEOPLE)[0];
    await this.store.bindSession({ spec: first });
    this.renderDom();
  }

  private el<K extends keyof HTMLElementTagNameMap>(
    tag: K, cls?: string, text?: string): HTMLElementTagNameMap[K] {
    const node = document.createElement(tag);
    if (cls) node.className = cls;
    if (text) node.textContent = text;
    return node;
  }

  private buildSkeleton(): void {
    this.root.innerHTML = `
      <div id="banner" class="banner hidden"></div>
      <div class="columns">
        <section class="panel" id="person-panel"><h2>Person</h2></section>
        <section class="panel" id="stack-panel"><h2>Garment stack</h2>
          <div id="stack"></div>
          <h3>Add garment</h3><div id="garment-buttons"></div>
        </section>
        <section class="panel" id="tweak-panel"><h2>Tweaks</h2>
          <div id="sliders"></div>
          <button id="undo-tweak">undo last tweak</button>
        </section>
        <section class="panel" id="render-panel"><h2>Render</h2>
          <img id="render" width="256" height="256" alt="try-on render" />
          <div id="checkpoint" class="small"></div>
        </section>
      </div>`;

    const personPanel = this.root.querySelector("#person-panel")!;
    for (const [name, spec] of Object.entries(PRESET_PEOPLE)) {
      const button = this.el("button", "", name);
      button.addEventListener("click", () => void this.store.bindSession({ spec }));
      personPanel.appendChild(button);
    }

    const garmentButtons = this.root.querySelector("#garment-buttons")!;
    for (const [name, preset] of Object.entries(PRESET_GARMENTS)) {
      const button = this.el("button", "", `+ ${name}`);
      button.addEventListener("click", () => {
        const position = this.store.state.garments.length;
        void this.store.addGarment({ position, label: preset.label, spec: preset.spec });
      });
      garmentButtons.appendChild(button);
    }

    this.root.querySelector("#undo-tweak")!
      .addEventListener("click", () => void this.store.undoTweak());
  }

  private renderDom(): void {
    const state = this.store.state;
    const banner = this.root.querySelector("#banner") as HTMLElement;
    banner.classList.toggle("hidden", state.banner === null);
    if (state.banner !== null) {
      banner.textContent = state.banner + " ";
      const retry = this.el("button", "", "retry");
      retry.addEventListener("click", () => void this.store.refreshRender());
      banner.appendChild(retry);
    }

    this.renderStack(state.garments);
    this.renderSliders();

    if (state.renderBytes && state.renderVersion !== this.lastRenderVersion) {
      this.lastRenderVersion = state.renderVersion;
      if (this.renderUrl) URL.revokeObjectURL(this.renderUrl);
      const blob = new Blob([state.renderBytes as BlobPart], { type: "image/png" });
      this.renderUrl = URL.createObjectURL(blob);
      (this.root.querySelector("#render") as HTMLImageElement).src = this.renderUrl;
      (this.root.querySelector("#checkpoint") as HTMLElement).textContent =
        `checkpoint ${state.checkpoint}`;
    }
  }

  private renderStack(garments: { index: number; label: number }[]): void {
    const stack = this.root.querySelector("#stack") as HTMLElement;
    stack.innerHTML = "";
    garments.forEach((garment, index) => {
      const row = this.el("div", "stack-row",
        `${index}: ${LABEL_NAMES[garment.label] ?? garment.label}`);
      row.draggable = true;
      row.addEventListener("dragstart", () => { this.dragFrom = index; });
      row.addEventListener("dragover", (event) => event.preventDefault());
      row.addEventListener("drop", () => {
        if (this.dragFrom !== null) void this.store.dragReorder(this.dragFrom, index);
        this.dragFrom = null;
      });
      const up = this.el("button", "", "up");
      up.addEventListener("click", () =>
        void this.store.dragReorder(index, Math.max(0, index - 1)));
      const down = this.el("button", "", "down");
      down.addEventListener("click", () =>
        void this.store.dragReorder(index, Math.min(garments.length - 1, index + 1)));
      row.append(" ", up, down);
      stack.appendChild(row);
    });
  }

  private renderSliders(): void {
    const panel = this.root.querySelector("#sliders") as HTMLElement;
    const garments = this.store.state.garments;
    if (panel.childElementCount > 0 || garments.length === 0) return;
    const kinds: [string, Record<string, unknown> | undefined][] = [
      ["sleeve_length", undefined],
      ["leg_length", undefined],
      ["width", undefined],
      ["recolor", { color: [0.85, 0.15, 0.2] }],
      ...this.directions.map((d): [string, Record<string, unknown>] =>
        ["latent", { direction: d.id }]),
    ];
    for (const [kind, payload] of kinds) {
      const row = this.el("div", "slider-row");
      const name = kind === "latent" ? `latent:${payload?.direction}` : kind;
      row.appendChild(this.el("label", "", name));
      const slider = this.el("input") as HTMLInputElement;
      slider.type = "range";
      slider.min = "-1";
      slider.max = "1";
      slider.step = "0.05";
      slider.value = "0";
      const targetFor = () => Math.max(0, this.store.state.garments.length - 1);
      slider.addEventListener("input", () => {
        this.store.slideTweak(kind, targetFor(), parseFloat(slider.value), payload);
      });
      const pin = this.el("button", "", "pin");
      pin.addEventListener("click", () => this.store.pinSlider(kind, targetFor(), payload));
      row.append(slider, pin);
      panel.appendChild(row);
    }
  }
}
