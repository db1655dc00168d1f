import { describe, expect, it } from "vitest";

import {
  RenderSetTracker,
  SPLAT_BYTES,
  decodeSplats,
  isInOctant,
  slicePayload,
  type DeltaMsg,
  type SnapshotMsg,
} from "../src/protocol";

function buildSplat(
  center: [number, number, number],
  u: [number, number, number],
  v: [number, number, number],
  rgb: [number, number, number],
): Uint8Array {
  const buf = new Uint8Array(SPLAT_BYTES);
  const view = new DataView(buf.buffer);
  [...center, ...u, ...v].forEach((val, i) => view.setFloat32(i * 4, val, true));
  buf.set(rgb, 36);
  return buf;
}

function concat(parts: Uint8Array[]): Uint8Array {
  const total = parts.reduce((acc, p) => acc + p.byteLength, 0);
  const out = new Uint8Array(total);
  let off = 0;
  for (const p of parts) {
    out.set(p, off);
    off += p.byteLength;
  }
  return out;
}

describe("decodeSplats", () => {
  it("reads little-endian center/tangents/color", () => {
    const splat = buildSplat([0.5, 0.25, -1], [0.02, 0, 0], [0, 0.04, 0], [255, 128, 0]);
    const data = decodeSplats(splat, 1);
    expect([...data.positions]).toEqual([0.5, 0.25, -1]);
    expect(data.colors[0]).toBeCloseTo(1.0);
    expect(data.colors[1]).toBeCloseTo(128 / 255);
    expect(data.colors[2]).toBe(0);
    expect(data.sizes[0]).toBeCloseTo(0.06, 5); // |u| + |v|
  });

  it("rejects byte-count mismatch", () => {
    expect(() => decodeSplats(new Uint8Array(SPLAT_BYTES), 2)).toThrow(/expected/);
  });
});

describe("slicePayload", () => {
  it("splits a frame into per-node data in declared order", () => {
    const a = buildSplat([1, 0, 0], [0.01, 0, 0], [0, 0.01, 0], [10, 10, 10]);
    const b = buildSplat([2, 0, 0], [0.01, 0, 0], [0, 0.01, 0], [20, 20, 20]);
    const c = buildSplat([3, 0, 0], [0.01, 0, 0], [0, 0.01, 0], [30, 30, 30]);
    const sliced = slicePayload(
      [
        { id: "8", splatCount: 2 },
        { id: "9", splatCount: 1 },
      ],
      concat([a, b, c]),
    );
    expect(sliced.get("8")!.count).toBe(2);
    expect(sliced.get("9")!.positions[0]).toBe(3);
  });

  it("rejects trailing bytes", () => {
    const a = buildSplat([1, 0, 0], [0, 0, 0], [0, 0, 0], [0, 0, 0]);
    expect(() => slicePayload([], a)).toThrow(/trailing/);
  });
});

function snapshot(version: number, nodes: [string, Uint8Array][]): [string, Uint8Array] {
  const payload = concat(nodes.map(([, p]) => p));
  const msg: SnapshotMsg = {
    type: "snapshot",
    version,
    clientId: 1,
    nodes: nodes.map(([id, p]) => ({ id, splatCount: p.byteLength / SPLAT_BYTES })),
    payloadBytes: payload.byteLength,
  };
  return [JSON.stringify(msg), payload];
}

function delta(
  version: number,
  add: [string, Uint8Array][],
  remove: string[],
): [string, Uint8Array] {
  const payload = concat(add.map(([, p]) => p));
  const msg: DeltaMsg = {
    type: "delta",
    version,
    addNodes: add.map(([id, p]) => ({ id, splatCount: p.byteLength / SPLAT_BYTES })),
    removeNodeIds: remove,
    payloadBytes: payload.byteLength,
  };
  return [JSON.stringify(msg), payload];
}

const S = () => buildSplat([0, 0, 0], [0.01, 0, 0], [0, 0.01, 0], [1, 2, 3]);

function feed(tracker: RenderSetTracker, [text, payload]: [string, Uint8Array]): void {
  tracker.feedText(text);
  if (payload.byteLength) tracker.feedBinary(payload);
}

describe("RenderSetTracker", () => {
  it("applies snapshot then contiguous deltas", () => {
    const t = new RenderSetTracker();
    feed(t, snapshot(1, [["8", S()]]));
    expect(t.clientId).toBe(1);
    expect([...t.nodes.keys()]).toEqual(["8"]);
    feed(t, delta(2, [["9", S()]], ["8"]));
    expect([...t.nodes.keys()]).toEqual(["9"]);
    expect(t.version).toBe(2);
  });

  it("buffers out-of-order deltas until the gap closes", () => {
    const applied: string[][] = [];
    const t = new RenderSetTracker({ onNodesAdded: (m) => applied.push([...m.keys()]) });
    feed(t, snapshot(1, []));
    feed(t, delta(3, [["10", S()]], []));
    expect(t.version).toBe(1);
    expect(t.nodes.size).toBe(0);
    feed(t, delta(2, [["9", S()]], []));
    expect(t.version).toBe(3);
    expect([...t.nodes.keys()].sort()).toEqual(["10", "9"]);
    expect(applied).toEqual([["9"], ["10"]]);
  });

  it("rejects replayed versions", () => {
    const t = new RenderSetTracker();
    feed(t, snapshot(1, []));
    feed(t, delta(2, [], ["x"]));
    expect(() => feed(t, delta(2, [], []))).toThrow(/replayed/);
  });

  it("pairs binary frames with the preceding header only", () => {
    const t = new RenderSetTracker();
    expect(() => t.feedBinary(new Uint8Array(1))).toThrow(/unexpected binary/);
    const [text] = snapshot(1, [["8", S()]]);
    t.feedText(text);
    expect(() => t.feedText('{"type":"progress","fraction":0,"nodesPerLevel":{}}')).toThrow(
      /binary payload was expected/,
    );
  });

  it("tracks progress and completion", () => {
    let completed = 0;
    const t = new RenderSetTracker({ onComplete: () => completed++ });
    t.feedText(JSON.stringify({ type: "progress", fraction: 0.5, nodesPerLevel: { "0": 1 } }));
    expect(t.progress).toBe(0.5);
    t.feedText(JSON.stringify({ type: "complete" }));
    expect(t.complete).toBe(true);
    expect(completed).toBe(1);
  });

  it("reset clears state and reports removals", () => {
    const removed: string[][] = [];
    const t = new RenderSetTracker({ onNodesRemoved: (ids) => removed.push(ids) });
    feed(t, snapshot(1, [["8", S()]]));
    t.reset();
    expect(t.nodes.size).toBe(0);
    expect(t.version).toBe(0);
    expect(removed).toEqual([["8"]]);
  });
});

describe("isInOctant", () => {
  it("classifies descendants by their level-1 ancestor", () => {
    // level-1 code for octant 3 is 0b1011 = 11; a depth-2 descendant: 11<<3|k
    expect(isInOctant("11", 3)).toBe(true);
    expect(isInOctant(String((11 << 3) | 5), 3)).toBe(true);
    expect(isInOctant(String((8 << 3) | 5), 3)).toBe(false);
    expect(isInOctant("1", 0)).toBe(false); // the root is in no octant
  });
});
