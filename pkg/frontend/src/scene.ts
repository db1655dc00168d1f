/**
 * GPU-side render set: one THREE.Points object per hierarchy node.
 *
 * Splats draw as round point sprites sized by their tangent magnitudes
 * (world-space diameter projected to pixels in the vertex shader).
 */

import * as THREE from "three";
import type { SplatData } from "./protocol";

const VERT = /* glsl */ `
  attribute float size;
  varying vec3 vColor;
  uniform float heightScale;
  void main() {
    vColor = color;
    vec4 mv = modelViewMatrix * vec4(position, 1.0);
    gl_PointSize = clamp(size * heightScale / max(-mv.z, 1e-4), 1.0, 64.0);
    gl_Position = projectionMatrix * mv;
  }
`;

const FRAG = /* glsl */ `
  varying vec3 vColor;
  void main() {
    vec2 d = gl_PointCoord - vec2(0.5);
    if (dot(d, d) > 0.25) discard;
    gl_FragColor = vec4(vColor, 1.0);
  }
`;

export class NodeScene {
  readonly group = new THREE.Group();
  readonly material: THREE.ShaderMaterial;
  private buffers = new Map<string, THREE.Points>();
  splatCount = 0;

  constructor() {
    this.material = new THREE.ShaderMaterial({
      vertexShader: VERT,
      fragmentShader: FRAG,
      vertexColors: true,
      uniforms: { heightScale: { value: 720.0 } },
    });
  }

  /** viewport height in pixels over tan(fov/2); feeds sprite sizing */
  setProjectionScale(viewportH: number, fovYDeg: number): void {
    const t = Math.tan((fovYDeg * Math.PI) / 360);
    this.material.uniforms.heightScale.value = viewportH / (2 * t);
  }

  get nodeCount(): number {
    return this.buffers.size;
  }

  has(id: string): boolean {
    return this.buffers.has(id);
  }

  add(id: string, splats: SplatData): void {
    this.remove(id);
    const geo = new THREE.BufferGeometry();
    geo.setAttribute("position", new THREE.BufferAttribute(splats.positions, 3));
    geo.setAttribute("color", new THREE.BufferAttribute(splats.colors, 3));
    geo.setAttribute("size", new THREE.BufferAttribute(splats.sizes, 1));
    const points = new THREE.Points(geo, this.material);
    points.frustumCulled = false; // server already runs prune/branch per pose
    this.buffers.set(id, points);
    this.group.add(points);
    this.splatCount += splats.count;
  }

  remove(id: string): void {
    const existing = this.buffers.get(id);
    if (!existing) return;
    const sizeAttr = existing.geometry.getAttribute("size");
    this.splatCount -= sizeAttr ? sizeAttr.count : 0;
    this.group.remove(existing);
    existing.geometry.dispose();
    this.buffers.delete(id);
  }

  applyAdded(added: Map<string, SplatData>): void {
    for (const [id, data] of added) this.add(id, data);
  }

  applyRemoved(ids: string[]): void {
    for (const id of ids) this.remove(id);
  }

  clear(): void {
    for (const id of [...this.buffers.keys()]) this.remove(id);
  }
}
