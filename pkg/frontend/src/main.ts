import { Viewer } from "./viewer";

const params = new URLSearchParams(window.location.search);
const endpoint =
  params.get("endpoint") ?? `ws://${window.location.hostname || "127.0.0.1"}:8765/ws`;
const threshold = Number(params.get("threshold") ?? "32");

const viewer = new Viewer({
  endpoint,
  threshold,
  canvas: document.getElementById("view") as HTMLCanvasElement,
  progressBar: document.getElementById("progress-fill") as HTMLElement,
  statsLine: document.getElementById("stats") as HTMLElement,
  thresholdSlider: document.getElementById("threshold") as HTMLInputElement,
});
viewer.start();
