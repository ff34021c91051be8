// Optional integration pass against a real running service. Enable with:
//   STUDIO_SERVER_URL=http://127.0.0.1:8321 npm test

import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { PRESET_GARMENTS, PRESET_PEOPLE } from "../src/presets.js";
import { StudioStore } from "../src/store.js";

const serverUrl = process.env.STUDIO_SERVER_URL;

describe.skipIf(!serverUrl)("live service integration", () => {
  it("drives a real session end to end", async () => {
    const api = new ApiClient(serverUrl!);
    const health = await api.health();
    expect(health.status).toBe("ok");

    const store = new StudioStore(api, { debounceMs: 30 });
    await store.bindSession({ spec: Object.values(PRESET_PEOPLE)[0] });
    expect(store.state.banner).toBeNull();
    expect(store.state.renderBytes!.length).toBeGreaterThan(100);

    const top = PRESET_GARMENTS["red top"];
    await store.addGarment({ position: 0, label: top.label, spec: top.spec });
    const hair = PRESET_GARMENTS["long hair (as garment)"];
    await store.addGarment({ position: 1, label: hair.label, spec: hair.spec });
    expect(store.state.garments.map((g) => g.label)).toEqual([3, 2]);
    const before = store.state.renderBytes!;

    await store.dragReorder(0, 1);
    expect(store.state.garments.map((g) => g.label)).toEqual([2, 3]);
    expect(store.state.banner).toBeNull();

    store.slideTweak("sleeve_length", 1, 0.8);
    await new Promise((resolve) => setTimeout(resolve, 400));
    expect(store.state.tweaks).toHaveLength(1);
    expect(store.state.renderBytes).not.toEqual(before);
  }, 120_000);
});
