/**
 * Interactive viewer: connects to the streaming service, applies
 * snapshot/delta messages to GPU buffers, and steers the server's front
 * with its camera pose while the hierarchy builds.
 */

import * as THREE from "three";
import { OrbitCamera } from "./camera";
import {
  RenderSetTracker,
  cameraMessage,
  thresholdMessage,
} from "./protocol";
import { NodeScene } from "./scene";

export interface ViewerOptions {
  endpoint: string;
  threshold: number;
  canvas: HTMLCanvasElement;
  progressBar: HTMLElement;
  statsLine: HTMLElement;
  thresholdSlider: HTMLInputElement;
}

export class Viewer {
  private renderer: THREE.WebGLRenderer;
  private scene3 = new THREE.Scene();
  private camera3: THREE.PerspectiveCamera;
  private nodes = new NodeScene();
  private orbit = new OrbitCamera();
  private tracker: RenderSetTracker;
  private ws: WebSocket | null = null;
  private closed = false;
  private complete = false;

  constructor(private opts: ViewerOptions) {
    this.renderer = new THREE.WebGLRenderer({ canvas: opts.canvas, antialias: false });
    this.camera3 = new THREE.PerspectiveCamera(60, 16 / 9, 0.001, 100);
    this.scene3.background = new THREE.Color(0x10131a);
    this.scene3.add(this.nodes.group);
    this.tracker = new RenderSetTracker({
      onNodesAdded: (added) => this.nodes.applyAdded(added),
      onNodesRemoved: (ids) => this.nodes.applyRemoved(ids),
      onProgress: (msg) => this.showProgress(msg.fraction),
      onComplete: () => {
        this.complete = true;
        this.showProgress(1.0);
      },
      onError: (message) => console.warn("server:", message),
    });
    this.orbit.attach(opts.canvas);
    this.resize();
    window.addEventListener("resize", () => this.resize());
    opts.thresholdSlider.value = String(opts.threshold);
    opts.thresholdSlider.addEventListener("input", () => {
      this.ws?.send(thresholdMessage(Number(opts.thresholdSlider.value)));
    });
  }

  connect(): void {
    const ws = new WebSocket(this.opts.endpoint);
    ws.binaryType = "arraybuffer";
    this.ws = ws;
    ws.onmessage = (ev) => {
      if (typeof ev.data === "string") this.tracker.feedText(ev.data);
      else this.tracker.feedBinary(new Uint8Array(ev.data as ArrayBuffer));
    };
    ws.onopen = () => {
      ws.send(cameraMessage(this.orbit.pose()));
      ws.send(thresholdMessage(Number(this.opts.thresholdSlider.value)));
    };
    ws.onclose = () => {
      this.ws = null;
      if (!this.closed) {
        // reconnect with fresh state; the server replays a full snapshot
        this.tracker.reset();
        this.nodes.clear();
        setTimeout(() => this.connect(), 1000);
      }
    };
  }

  start(): void {
    this.connect();
    const frame = () => {
      if (this.closed) return;
      const dirty = this.orbit.takeDirtyPose();
      if (dirty && this.ws?.readyState === WebSocket.OPEN) {
        this.ws.send(cameraMessage(dirty));
      }
      this.syncCamera();
      this.renderer.render(this.scene3, this.camera3);
      this.showStats();
      requestAnimationFrame(frame);
    };
    requestAnimationFrame(frame);
  }

  stop(): void {
    this.closed = true;
    this.ws?.close();
  }

  private syncCamera(): void {
    const pose = this.orbit.pose();
    this.camera3.position.set(...pose.position);
    this.camera3.up.set(...pose.up);
    this.camera3.lookAt(...this.orbit.state.target);
    this.camera3.fov = pose.fovYDeg;
    this.camera3.near = pose.near;
    this.camera3.far = pose.far;
    this.camera3.updateProjectionMatrix();
  }

  private resize(): void {
    const w = window.innerWidth;
    const h = window.innerHeight;
    this.renderer.setSize(w, h);
    this.camera3.aspect = w / h;
    this.camera3.updateProjectionMatrix();
    this.orbit.setViewport(w, h);
    this.nodes.setProjectionScale(h, this.orbit.fovYDeg);
  }

  private showProgress(fraction: number): void {
    this.opts.progressBar.style.width = `${(fraction * 100).toFixed(1)}%`;
    this.opts.progressBar.classList.toggle("done", this.complete);
  }

  private showStats(): void {
    this.opts.statsLine.textContent =
      `${this.nodes.nodeCount} nodes / ${this.nodes.splatCount} splats` +
      (this.complete ? " / build complete" : "");
  }
}
