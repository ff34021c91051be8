import { StudioApp } from "./studio.js";

const params = new URLSearchParams(window.location.search);
const serverUrl =
  params.get("server") ?? localStorage.getItem("tryonlab-server") ?? "http://127.0.0.1:8321";
localStorage.setItem("tryonlab-server", serverUrl);

const root = document.getElementById("app");
if (!root) throw new Error("missing #app element");
const app = new StudioApp(root, serverUrl);
void app.start();
