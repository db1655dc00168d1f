"""Live session server: runs the builder, serves render-set deltas.

One shared hierarchy feeds any number of connected clients; each client gets
its own front, steered by the camera poses it sends, evaluated at a fixed
tick. Control messages are JSON text frames; splat payloads travel as one
raw binary frame immediately after the snapshot/delta that announces them
(``payloadBytes`` tells the client whether to expect one). Node ids are the
Morton code bits, as decimal strings so 64-bit values survive JSON.

client -> server: {"type":"camera", position, forward, up, fovYDeg,
                   viewportW, viewportH, near, far}
                  {"type":"setThreshold", "pixels": float}
server -> client: {"type":"progress", "fraction", "nodesPerLevel"}
                  {"type":"snapshot", "version", "clientId", "nodes":
                   [{"id","splatCount"}], "payloadBytes"}
                  {"type":"delta", "version", "addNodes": [...],
                   "removeNodeIds": [...], "payloadBytes"}
                  {"type":"complete"}
                  {"type":"error", "message"}
"""

from __future__ import annotations

import asyncio
import itertools
import json
import threading
from typing import Optional

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from . import sorter
from .builder import Broadcast, BuildConfig, Builder
from .front import Front
from .lod import Camera

DEFAULT_CAMERA = dict(
    position=[0.5, 0.5, 3.0], forward=[0.0, 0.0, -1.0], up=[0.0, 1.0, 0.0],
    fov_y_deg=60.0, viewport_w=1280, viewport_h=720, near=0.001, far=100.0,
)


class ServiceState:
    """Shared build + publication state behind one server process."""

    def __init__(
        self,
        config: BuildConfig,
        tick_hz: float = 30.0,
        record_history: bool = False,
    ):
        self.config = config
        self.tick_seconds = 1.0 / tick_hz
        self.record_history = record_history
        self.broadcast = Broadcast(config.l_max)
        self.builder = Builder(config, broadcast=self.broadcast, progress=self._on_progress)
        self._progress_lock = threading.Lock()
        self.progress_fraction = 0.0
        self.nodes_per_level: dict[int, int] = {}
        self.feed_error: Optional[str] = None
        self._feed_thread: Optional[threading.Thread] = None
        self._client_ids = itertools.count(1)
        # per-client, per-version authoritative render sets (tests only)
        self.history: dict[int, dict[int, frozenset[int]]] = {}

    def _on_progress(self, fraction: float, counts: dict[int, int]) -> None:
        with self._progress_lock:
            self.progress_fraction = fraction
            self.nodes_per_level = counts

    def progress_snapshot(self) -> tuple[float, dict[int, int]]:
        with self._progress_lock:
            return self.progress_fraction, dict(self.nodes_per_level)

    # -- sources ---------------------------------------------------------

    def feed_raw(self, positions, normals, colors, chunks: int = 1) -> None:
        """Sort (in chunks) and stream a raw cloud on a background thread."""
        self.builder.expected_points = len(positions)
        records = sorter.assign_codes(positions, self.config.l_max, normals, colors)
        self.builder.start()

        def run():
            try:
                for chunk in sorter.chunked_sort(records, chunks):
                    if len(chunk):
                        codes, splats = sorter.to_build_inputs(chunk, self.config.l_max)
                        self.builder.push_chunk(codes, splats)
                self.builder.finish()
            except Exception as exc:  # surfaced to every session
                self.feed_error = str(exc)

        self._feed_thread = threading.Thread(target=run, name="source-feed", daemon=True)
        self._feed_thread.start()

    def feed_record_batches(self, batches, total_records: int) -> None:
        """Stream pre-sorted record batches (already ascending) to the builder."""
        self.builder.expected_points = total_records
        self.builder.start()

        def run():
            try:
                for codes, splats in sorter.stream_build_batches(batches, self.config.l_max):
                    self.builder.push_chunk(codes, splats)
                self.builder.finish()
            except Exception as exc:
                self.feed_error = str(exc)

        self._feed_thread = threading.Thread(target=run, name="source-feed", daemon=True)
        self._feed_thread.start()


def parse_camera(msg: dict) -> Camera:
    return Camera(
        position=np.asarray(msg["position"], dtype=np.float64),
        forward=np.asarray(msg["forward"], dtype=np.float64),
        up=np.asarray(msg.get("up", [0.0, 1.0, 0.0]), dtype=np.float64),
        fov_y_deg=float(msg.get("fovYDeg", 60.0)),
        viewport_w=int(msg.get("viewportW", 1280)),
        viewport_h=int(msg.get("viewportH", 720)),
        near=float(msg.get("near", 0.001)),
        far=float(msg.get("far", 100.0)),
    )


def _node_brief(node) -> dict:
    return {"id": str(node.code), "splatCount": int(len(node.splats))}


def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI()
    app.state.service = state

    @app.get("/status")
    def status():
        fraction, counts = state.progress_snapshot()
        return {
            "progress": fraction,
            "nodesPerLevel": {str(k): v for k, v in counts.items()},
            "lMax": state.config.l_max,
            "complete": state.builder._done.is_set() or state.builder._finish_called,
        }

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket) -> None:
        await ws.accept()
        client_id = next(state._client_ids)
        hub = state.broadcast.subscribe()
        front = Front(state.config.l_max, safety=state.builder.watermark.safe)
        front.hub = hub
        camera = Camera(**DEFAULT_CAMERA)
        threshold = state.config.projection_threshold_px
        outbox: list[str] = []

        def handle(text: str) -> None:
            nonlocal camera, threshold
            try:
                msg = json.loads(text)
            except json.JSONDecodeError:
                outbox.append(json.dumps({"type": "error", "message": "malformed JSON"}))
                return
            kind = msg.get("type")
            if kind == "camera":
                try:
                    camera = parse_camera(msg)
                except (KeyError, ValueError, TypeError) as exc:
                    outbox.append(json.dumps({"type": "error", "message": f"bad camera: {exc}"}))
            elif kind == "setThreshold":
                try:
                    threshold = float(msg["pixels"])
                except (KeyError, ValueError, TypeError):
                    outbox.append(json.dumps({"type": "error", "message": "bad threshold"}))
            else:
                outbox.append(
                    json.dumps({"type": "error", "message": f"unknown message type {kind!r}"})
                )

        async def receiver() -> None:
            while True:
                handle(await ws.receive_text())

        recv_task = asyncio.create_task(receiver())
        version = 0
        shown: dict[int, object] = {}
        last_progress: Optional[tuple[float, tuple]] = None
        complete_sent = False
        if state.record_history:
            state.history[client_id] = {}

        async def send_progress_if_changed() -> None:
            nonlocal last_progress
            fraction, counts = state.progress_snapshot()
            key = (fraction, tuple(sorted(counts.items())))
            if key != last_progress:
                last_progress = key
                await ws.send_text(json.dumps({
                    "type": "progress",
                    "fraction": fraction,
                    "nodesPerLevel": {str(k): v for k, v in counts.items()},
                }))

        async def send_payload(nodes) -> int:
            if not nodes:
                return 0
            blob = b"".join(n.splats.tobytes() for n in nodes)
            await ws.send_bytes(blob)
            return len(blob)

        try:
            await send_progress_if_changed()
            rs = front.evaluate(camera, threshold, state.config.segment_budget, cull=False)
            version = 1
            current = {n.code: n for n in rs.nodes}
            payload = b"".join(n.splats.tobytes() for n in current.values())
            await ws.send_text(json.dumps({
                "type": "snapshot",
                "version": version,
                "clientId": client_id,
                "nodes": [_node_brief(n) for n in current.values()],
                "payloadBytes": len(payload),
            }))
            if payload:
                await ws.send_bytes(payload)
            shown = dict(current)
            if state.record_history:
                state.history[client_id][version] = frozenset(shown)

            while True:
                await asyncio.sleep(state.tick_seconds)
                if recv_task.done():
                    recv_task.result()
                while outbox:
                    await ws.send_text(outbox.pop(0))
                if state.feed_error is not None:
                    await ws.send_text(json.dumps({
                        "type": "error", "message": f"source failed: {state.feed_error}",
                    }))
                    break
                await send_progress_if_changed()
                rs = front.evaluate(camera, threshold, state.config.segment_budget, cull=False)
                current = {n.code: n for n in rs.nodes}
                added = [n for c, n in current.items() if c not in shown]
                removed = [c for c in shown if c not in current]
                if added or removed:
                    version += 1
                    payload = b"".join(n.splats.tobytes() for n in added)
                    await ws.send_text(json.dumps({
                        "type": "delta",
                        "version": version,
                        "addNodes": [_node_brief(n) for n in added],
                        "removeNodeIds": [str(c) for c in removed],
                        "payloadBytes": len(payload),
                    }))
                    if payload:
                        await ws.send_bytes(payload)
                    shown = dict(current)
                    if state.record_history:
                        state.history[client_id][version] = frozenset(shown)
                if hub.complete.is_set() and not complete_sent:
                    await send_progress_if_changed()
                    await ws.send_text(json.dumps({"type": "complete"}))
                    complete_sent = True
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            recv_task.cancel()
            state.broadcast.unsubscribe(hub)

    return app


def serve(
    state: ServiceState,
    host: str = "127.0.0.1",
    port: int = 8765,
    log_level: str = "warning",
) -> None:
    """Run the server until interrupted (the source feed must be started)."""
    import uvicorn

    uvicorn.run(create_app(state), host=host, port=port, log_level=log_level)
