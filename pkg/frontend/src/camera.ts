/**
 * Orbit camera around a target point: drag to rotate, wheel to dolly,
 * shift-drag (or right-drag) to pan. Tracks a dirty flag so the viewer
 * sends at most one camera message per animation frame, and only when the
 * pose actually changed.
 */

import type { CameraPose } from "./protocol";

export interface OrbitState {
  target: [number, number, number];
  radius: number;
  theta: number; // azimuth, radians
  phi: number; // polar angle from +y, radians
}

const EPS = 1e-4;

export class OrbitCamera {
  state: OrbitState = { target: [0.5, 0.5, 0.5], radius: 2.5, theta: 0.6, phi: 1.2 };
  fovYDeg = 60;
  viewportW = 1280;
  viewportH = 720;
  near = 0.001;
  far = 100;
  private dirty = true;

  position(): [number, number, number] {
    const { target, radius, theta, phi } = this.state;
    return [
      target[0] + radius * Math.sin(phi) * Math.cos(theta),
      target[1] + radius * Math.cos(phi),
      target[2] + radius * Math.sin(phi) * Math.sin(theta),
    ];
  }

  pose(): CameraPose {
    const pos = this.position();
    const t = this.state.target;
    const fwd: [number, number, number] = [t[0] - pos[0], t[1] - pos[1], t[2] - pos[2]];
    const len = Math.hypot(...fwd) || 1;
    return {
      position: pos,
      forward: [fwd[0] / len, fwd[1] / len, fwd[2] / len],
      up: [0, 1, 0],
      fovYDeg: this.fovYDeg,
      viewportW: this.viewportW,
      viewportH: this.viewportH,
      near: this.near,
      far: this.far,
    };
  }

  rotate(dxPixels: number, dyPixels: number): void {
    this.state.theta += dxPixels * 0.008;
    this.state.phi = Math.min(Math.PI - EPS, Math.max(EPS, this.state.phi + dyPixels * 0.008));
    this.dirty = true;
  }

  dolly(wheelDelta: number): void {
    const factor = Math.exp(wheelDelta * 0.001);
    this.state.radius = Math.min(50, Math.max(0.01, this.state.radius * factor));
    this.dirty = true;
  }

  pan(dxPixels: number, dyPixels: number): void {
    const scale = (this.state.radius * 2 * Math.tan((this.fovYDeg * Math.PI) / 360)) / this.viewportH;
    const pos = this.position();
    const t = this.state.target;
    const fwd = [t[0] - pos[0], t[1] - pos[1], t[2] - pos[2]];
    const len = Math.hypot(...fwd) || 1;
    const f = fwd.map((v) => v / len);
    const right = [f[2], 0, -f[0]]; // f x up(0,1,0), up fixed
    const rlen = Math.hypot(...right) || 1;
    const r = right.map((v) => v / rlen);
    const u = [
      r[1] * f[2] - r[2] * f[1],
      r[2] * f[0] - r[0] * f[2],
      r[0] * f[1] - r[1] * f[0],
    ];
    t[0] += (-dxPixels * r[0] + dyPixels * u[0]) * scale;
    t[1] += (-dxPixels * r[1] + dyPixels * u[1]) * scale;
    t[2] += (-dxPixels * r[2] + dyPixels * u[2]) * scale;
    this.dirty = true;
  }

  setViewport(w: number, h: number): void {
    this.viewportW = w;
    this.viewportH = h;
    this.dirty = true;
  }

  /** Returns the pose once after any change, then null until the next change. */
  takeDirtyPose(): CameraPose | null {
    if (!this.dirty) return null;
    this.dirty = false;
    return this.pose();
  }

  attach(el: HTMLElement): () => void {
    let mode: "rotate" | "pan" | null = null;
    let lastX = 0;
    let lastY = 0;
    const down = (e: PointerEvent) => {
      mode = e.button === 2 || e.shiftKey ? "pan" : "rotate";
      lastX = e.clientX;
      lastY = e.clientY;
      el.setPointerCapture(e.pointerId);
    };
    const move = (e: PointerEvent) => {
      if (!mode) return;
      const dx = e.clientX - lastX;
      const dy = e.clientY - lastY;
      lastX = e.clientX;
      lastY = e.clientY;
      if (mode === "rotate") this.rotate(dx, dy);
      else this.pan(dx, dy);
    };
    const up = (e: PointerEvent) => {
      mode = null;
      el.releasePointerCapture(e.pointerId);
    };
    const wheel = (e: WheelEvent) => {
      e.preventDefault();
      this.dolly(e.deltaY);
    };
    const ctx = (e: Event) => e.preventDefault();
    el.addEventListener("pointerdown", down);
    el.addEventListener("pointermove", move);
    el.addEventListener("pointerup", up);
    el.addEventListener("wheel", wheel, { passive: false });
    el.addEventListener("contextmenu", ctx);
    return () => {
      el.removeEventListener("pointerdown", down);
      el.removeEventListener("pointermove", move);
      el.removeEventListener("pointerup", up);
      el.removeEventListener("wheel", wheel);
      el.removeEventListener("contextmenu", ctx);
    };
  }
}
