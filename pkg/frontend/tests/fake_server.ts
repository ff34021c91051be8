// In-memory stand-in for the session service, faithful to its HTTP contract:
// same routes, same error shape, render bytes that change with session state.

import type { FetchLike } from "../src/api.js";

interface FakeSession {
  id: string;
  garments: { index: number; label: number }[];
  tweaks: Record<string, unknown>[];
  renders: number;
}

export class FakeServer {
  sessions = new Map<string, FakeSession>();
  failNext: { method: string; path: RegExp; status?: number } | null = null;
  renderDelayMs = 0;
  renderLog: string[] = [];
  private counter = 0;

  fetch: FetchLike = async (url, init) => {
    const method = (init?.method ?? "GET").toUpperCase();
    const path = new URL(url, "http://fake").pathname;
    if (this.failNext && method === this.failNext.method && this.failNext.path.test(path)) {
      const status = this.failNext.status ?? 422;
      this.failNext = null;
      return json(status, { code: "validation_error", message: "injected failure" });
    }

    if (method === "POST" && path === "/sessions") {
      const id = `fake${this.counter++}`;
      this.sessions.set(id, { id, garments: [], tweaks: [], renders: 0 });
      return json(201, this.summary(id));
    }
    const sessionMatch = path.match(/^\/sessions\/([^/]+)(\/.*)?$/);
    if (path === "/directions") {
      return json(200, { directions: [{ id: "sleeve", attribute: "sleeve", fit_accuracy: 0.99 }] });
    }
    if (path === "/healthz") return json(200, { status: "ok", checkpoint: "fake" });
    if (!sessionMatch) return json(404, { code: "not_found", message: path });
    const id = sessionMatch[1];
    const session = this.sessions.get(id);
    if (!session) return json(404, { code: "not_found", message: id });
    const rest = sessionMatch[2] ?? "";

    const body = init?.body ? JSON.parse(String(init.body)) : null;
    if (method === "GET" && rest === "") return json(200, this.summary(id));
    if (method === "POST" && rest === "/garments") {
      const position = body.position as number;
      if (position < 0 || position > session.garments.length) {
        return json(422, { code: "validation_error", message: `position ${position} out of range` });
      }
      session.garments.splice(position, 0, { index: 0, label: body.label });
      session.garments.forEach((g, i) => (g.index = i));
      return json(200, this.summary(id));
    }
    if (method === "POST" && rest === "/reorder") {
      const perm = body.permutation as number[];
      const sorted = [...perm].sort((a, b) => a - b);
      if (sorted.join() !== session.garments.map((_, i) => i).join()) {
        return json(422, { code: "validation_error", message: "not a bijection" });
      }
      session.garments = perm.map((i, at) => ({ ...session.garments[i], index: at }));
      return json(200, this.summary(id));
    }
    if (method === "POST" && rest === "/tweaks") {
      if (body.target_garment >= session.garments.length) {
        return json(422, { code: "validation_error", message: "garment index out of range" });
      }
      session.tweaks.push(body);
      return json(200, this.summary(id));
    }
    if (method === "DELETE" && rest === "/tweaks/last") {
      if (session.tweaks.length === 0) {
        return json(422, { code: "validation_error", message: "no tweaks to remove" });
      }
      session.tweaks.pop();
      return json(200, this.summary(id));
    }
    if (method === "GET" && rest === "/render") {
      session.renders += 1;
      this.renderLog.push(this.stateSignature(session));
      if (this.renderDelayMs > 0) {
        await new Promise((resolve) => setTimeout(resolve, this.renderDelayMs));
      }
      const bytes = new TextEncoder().encode(this.stateSignature(session));
      return new Response(bytes, {
        status: 200,
        headers: { "Content-Type": "image/png", "X-Model-Checkpoint": "fake" },
      });
    }
    return json(404, { code: "not_found", message: `${method} ${path}` });
  };

  private stateSignature(session: FakeSession): string {
    return JSON.stringify({ g: session.garments, t: session.tweaks });
  }

  private summary(id: string) {
    const session = this.sessions.get(id)!;
    return {
      id,
      created: "t0",
      updated: "t1",
      garments: session.garments,
      tweaks: session.tweaks,
      dirty: true,
      checkpoint: "fake",
    };
  }
}

function json(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}
