/**
 * Wire protocol for the point-cloud streaming service.
 *
 * Control messages are JSON text frames. A snapshot/delta whose
 * `payloadBytes` is non-zero is immediately followed by one binary frame
 * holding the added nodes' splats, packed per node in `addNodes` order.
 * Each splat is 39 bytes little-endian: center xyz f32, tangent u xyz f32,
 * tangent v xyz f32, rgb u8.
 *
 * Deltas apply only in contiguous version order; anything newer is buffered
 * until the gap closes.
 */

export const SPLAT_BYTES = 39;

export interface NodeBrief {
  id: string;
  splatCount: number;
}

export interface ProgressMsg {
  type: "progress";
  fraction: number;
  nodesPerLevel: Record<string, number>;
}

export interface SnapshotMsg {
  type: "snapshot";
  version: number;
  clientId: number;
  nodes: NodeBrief[];
  payloadBytes: number;
}

export interface DeltaMsg {
  type: "delta";
  version: number;
  addNodes: NodeBrief[];
  removeNodeIds: string[];
  payloadBytes: number;
}

export interface CompleteMsg {
  type: "complete";
}

export interface ErrorMsg {
  type: "error";
  message: string;
}

export type ServerMsg = ProgressMsg | SnapshotMsg | DeltaMsg | CompleteMsg | ErrorMsg;

export interface CameraPose {
  position: [number, number, number];
  forward: [number, number, number];
  up: [number, number, number];
  fovYDeg: number;
  viewportW: number;
  viewportH: number;
  near: number;
  far: number;
}

export function cameraMessage(pose: CameraPose): string {
  return JSON.stringify({ type: "camera", ...pose });
}

export function thresholdMessage(pixels: number): string {
  return JSON.stringify({ type: "setThreshold", pixels });
}

export interface SplatData {
  count: number;
  positions: Float32Array; // xyz per splat
  colors: Float32Array; // rgb in [0,1] per splat
  sizes: Float32Array; // world-space disk diameter per splat
}

export function decodeSplats(payload: Uint8Array, count: number): SplatData {
  if (payload.byteLength !== count * SPLAT_BYTES) {
    throw new Error(`splat payload is ${payload.byteLength} bytes, expected ${count * SPLAT_BYTES}`);
  }
  const view = new DataView(payload.buffer, payload.byteOffset, payload.byteLength);
  const positions = new Float32Array(count * 3);
  const colors = new Float32Array(count * 3);
  const sizes = new Float32Array(count);
  for (let i = 0; i < count; i++) {
    const base = i * SPLAT_BYTES;
    let ux = 0, uy = 0, uz = 0, vx = 0, vy = 0, vz = 0;
    positions[i * 3 + 0] = view.getFloat32(base + 0, true);
    positions[i * 3 + 1] = view.getFloat32(base + 4, true);
    positions[i * 3 + 2] = view.getFloat32(base + 8, true);
    ux = view.getFloat32(base + 12, true);
    uy = view.getFloat32(base + 16, true);
    uz = view.getFloat32(base + 20, true);
    vx = view.getFloat32(base + 24, true);
    vy = view.getFloat32(base + 28, true);
    vz = view.getFloat32(base + 32, true);
    colors[i * 3 + 0] = payload[base + 36] / 255;
    colors[i * 3 + 1] = payload[base + 37] / 255;
    colors[i * 3 + 2] = payload[base + 38] / 255;
    const lu = Math.hypot(ux, uy, uz);
    const lv = Math.hypot(vx, vy, vz);
    sizes[i] = lu + lv; // diameter ~ |u| + |v|
  }
  return { count, positions, colors, sizes };
}

/** Splits one payload frame into per-node splat data, in addNodes order. */
export function slicePayload(nodes: NodeBrief[], payload: Uint8Array): Map<string, SplatData> {
  const out = new Map<string, SplatData>();
  let offset = 0;
  for (const n of nodes) {
    const bytes = n.splatCount * SPLAT_BYTES;
    out.set(n.id, decodeSplats(payload.subarray(offset, offset + bytes), n.splatCount));
    offset += bytes;
  }
  if (offset !== payload.byteLength) {
    throw new Error(`payload has ${payload.byteLength - offset} trailing bytes`);
  }
  return out;
}

export interface TrackerEvents {
  onNodesAdded?: (nodes: Map<string, SplatData>) => void;
  onNodesRemoved?: (ids: string[]) => void;
  onProgress?: (msg: ProgressMsg) => void;
  onComplete?: () => void;
  onError?: (message: string) => void;
}

/**
 * Reassembles the server's render set from framed messages.
 *
 * Call `feedText`/`feedBinary` with raw frames in arrival order; version
 * ordering and header/payload pairing are handled here.
 */
export class RenderSetTracker {
  version = 0;
  clientId: number | null = null;
  complete = false;
  progress = 0;
  nodes = new Map<string, SplatData>();

  private pendingHeader: SnapshotMsg | DeltaMsg | null = null;
  private buffered = new Map<number, { msg: DeltaMsg; payload: Uint8Array }>();

  constructor(private events: TrackerEvents = {}) {}

  feedText(text: string): void {
    if (this.pendingHeader) {
      throw new Error("text frame arrived while a binary payload was expected");
    }
    const msg = JSON.parse(text) as ServerMsg;
    switch (msg.type) {
      case "progress":
        this.progress = msg.fraction;
        this.events.onProgress?.(msg);
        break;
      case "complete":
        this.complete = true;
        this.events.onComplete?.();
        break;
      case "error":
        this.events.onError?.(msg.message);
        break;
      case "snapshot":
      case "delta":
        if (msg.payloadBytes > 0) {
          this.pendingHeader = msg;
        } else {
          this.dispatch(msg, new Uint8Array(0));
        }
        break;
    }
  }

  feedBinary(payload: Uint8Array): void {
    const header = this.pendingHeader;
    if (!header) {
      throw new Error("unexpected binary frame");
    }
    if (payload.byteLength !== header.payloadBytes) {
      throw new Error(`payload is ${payload.byteLength} bytes, header said ${header.payloadBytes}`);
    }
    this.pendingHeader = null;
    this.dispatch(header, payload);
  }

  reset(): void {
    this.version = 0;
    this.clientId = null;
    this.complete = false;
    this.progress = 0;
    this.pendingHeader = null;
    this.buffered.clear();
    const removed = [...this.nodes.keys()];
    this.nodes.clear();
    if (removed.length) this.events.onNodesRemoved?.(removed);
  }

  private dispatch(msg: SnapshotMsg | DeltaMsg, payload: Uint8Array): void {
    if (msg.type === "snapshot") {
      const stale = [...this.nodes.keys()];
      this.nodes.clear();
      if (stale.length) this.events.onNodesRemoved?.(stale);
      this.clientId = msg.clientId;
      this.version = msg.version;
      const added = slicePayload(msg.nodes, payload);
      for (const [id, data] of added) this.nodes.set(id, data);
      if (added.size) this.events.onNodesAdded?.(added);
      this.drainBuffered();
      return;
    }
    if (msg.version !== this.version + 1) {
      if (msg.version <= this.version) {
        throw new Error(`server replayed version ${msg.version}`);
      }
      this.buffered.set(msg.version, { msg, payload });
      return;
    }
    this.applyDelta(msg, payload);
    this.drainBuffered();
  }

  private applyDelta(msg: DeltaMsg, payload: Uint8Array): void {
    this.version = msg.version;
    if (msg.removeNodeIds.length) {
      for (const id of msg.removeNodeIds) this.nodes.delete(id);
      this.events.onNodesRemoved?.(msg.removeNodeIds);
    }
    const added = slicePayload(msg.addNodes, payload);
    for (const [id, data] of added) this.nodes.set(id, data);
    if (added.size) this.events.onNodesAdded?.(added);
  }

  private drainBuffered(): void {
    let next = this.buffered.get(this.version + 1);
    while (next) {
      this.buffered.delete(this.version + 1);
      this.applyDelta(next.msg, next.payload);
      next = this.buffered.get(this.version + 1);
    }
  }
}

/** True when `id` (decimal Morton code) lies in the subtree of `octant` 0-7. */
export function isInOctant(id: string, octant: number): boolean {
  let code = BigInt(id);
  if (code <= 1n) return false;
  while (code > 15n) code >>= 3n;
  return code === 8n + BigInt(octant);
}
